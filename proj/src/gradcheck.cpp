#include "pmtk/gradcheck.hpp"

#include <functional>
#include <type_traits>

#include "pmtk/model.hpp"
#include "pmtk/pmd.hpp"
#include "pmtk/ssm.hpp"

namespace pmtk::gradcheck {
namespace {

using Inputs = std::vector<Tensor<double>>;

model::ModelConfig micro_config() {
  model::ModelConfig c;
  c.image_size = 32;
  c.plan.widths = {4, 8, 16, 32};
  c.head_width = 8;
  c.state_dim = 4;
  return c;
}

// A micro model in both precisions with identical weights.
struct MicroModels {
  model::Model<float> f32;
  model::Model<double> f64;

  explicit MicroModels(std::uint64_t seed) : f32(micro_config(), seed), f64(micro_config(), seed) {
    for (std::size_t i = 0; i < f64.params().size(); ++i) {
      f32.params()[i].second = f64.params()[i].second.cast<float>();
    }
  }

  template <typename U>
  const model::Model<U>& get() const {
    if constexpr (std::is_same_v<U, float>) {
      return f32;
    } else {
      return f64;
    }
  }

  Inputs params_where(const std::function<bool(const std::string&)>& keep) const {
    Inputs out;
    for (const auto& [name, t] : f64.params()) {
      if (keep(name)) out.push_back(t);
    }
    return out;
  }
};

// Binds the parameters named by keep to the given vars and everything else
// to constants.
template <typename U>
model::Bound<U> bind_subset(Tape<U>& tape, const model::Model<U>& m, const std::vector<Var<U>>& vars,
                            std::size_t first, const std::function<bool(const std::string&)>& keep) {
  std::vector<Var<U>> all;
  std::size_t k = first;
  for (const auto& [name, t] : m.params()) all.push_back(keep(name) ? vars.at(k++) : tape.constant(t));
  return m.bind_vars(std::move(all));
}

class Suite {
 public:
  Suite(const SuiteOptions& opt) : opt_(opt), rng_(opt.seed) {}

  template <typename T, typename F>
  void run(const std::string& family, F f, Inputs inputs, double fraction = 1.0) {
    const CheckResult r = check<T>(std::move(f), std::move(inputs), rng_, fraction);
    FamilyResult* row = nullptr;
    for (auto& x : rows_) {
      if (x.family == family) row = &x;
    }
    if (row == nullptr) {
      rows_.push_back({family, 0.0, 0, 0, 0, true});
      row = &rows_.back();
    }
    row->max_rel_err = std::max(row->max_rel_err, r.rel_err);
    row->checks += 1;
    row->coords += r.coords;
    row->skipped += r.skipped;
    row->pass = row->max_rel_err <= tolerance<T>() && row->skipped * 10 <= row->coords + row->skipped;
  }

  Tensor<double> uniform(Shape s, double lo = -1.0, double hi = 1.0) {
    return random_uniform<double>(std::move(s), rng_, lo, hi);
  }
  Tensor<double> normal(Shape s, double sd = 1.0) { return random_normal<double>(std::move(s), rng_, sd); }
  Rng& rng() { return rng_; }
  const SuiteOptions& options() const { return opt_; }
  std::vector<FamilyResult> rows() const { return rows_; }

 private:
  SuiteOptions opt_;
  Rng rng_;
  std::vector<FamilyResult> rows_;
};

}  // namespace

template <typename T>
std::vector<FamilyResult> run_suite(const SuiteOptions& opt) {
  Suite s(opt);

  s.run<T>(
      "elementwise",
      [](auto& tape, const auto& v) {
        (void)tape;
        auto a = add(mul(silu(v[0]), softplus(v[1])), sub(exp(scale(v[0], 0.5)), relu(v[1])));
        return reshape(a, {4, 3});
      },
      {s.uniform({3, 4}), s.uniform({3, 4})});
  s.run<T>("elementwise", [](auto&, const auto& v) { return sum(mul(v[0], v[0])); }, {s.uniform({5})});

  s.run<T>(
      "matmul", [](auto&, const auto& v) { return slice_cols(matmul(v[0], v[1]), 1, 2); },
      {s.uniform({3, 5}), s.uniform({5, 4})});

  s.run<T>(
      "conv2d", [](auto&, const auto& v) { return bias_add(conv2d(v[0], v[1], 1, 1), v[2]); },
      {s.uniform({2, 3, 5, 5}), s.uniform({4, 3, 3, 3}), s.uniform({4})});
  s.run<T>(
      "conv2d", [](auto&, const auto& v) { return conv2d(v[0], v[1], 2, 1); },
      {s.uniform({2, 2, 6, 6}), s.uniform({3, 2, 3, 3})});
  s.run<T>(
      "conv2d", [](auto&, const auto& v) { return conv2d(v[0], v[1], 2, 0); },
      {s.uniform({1, 3, 4, 4}), s.uniform({2, 3, 1, 1})});

  s.run<T>(
      "norm_affine", [](auto&, const auto& v) { return norm_affine(v[0], v[1], v[2]); },
      {s.normal({2, 3, 3, 3}), s.uniform({3}, 0.5, 1.5), s.uniform({3})});
  s.run<T>(
      "norm_affine", [](auto&, const auto& v) { return norm_affine(v[0], v[1], v[2]); },
      {s.normal({7, 4}), s.uniform({4}, 0.5, 1.5), s.uniform({4})});

  s.run<T>("upsample", [](auto&, const auto& v) { return upsample_bilinear(v[0], 2); }, {s.uniform({1, 2, 3, 3})});
  s.run<T>("upsample", [](auto&, const auto& v) { return upsample_bilinear(v[0], 4); }, {s.uniform({2, 1, 2, 2})});

  {
    std::vector<int> labels(2 * 2 * 3);
    for (auto& l : labels) l = static_cast<int>(s.rng().index(3));
    s.run<T>(
        "cross_entropy", [labels](auto&, const auto& v) { return softmax_cross_entropy(v[0], labels); },
        {s.normal({2, 3, 2, 3}, 2.0)});
  }

  s.run<T>(
      "concat", [](auto&, const auto& v) { return concat_channels(v[0], v[1]); },
      {s.uniform({2, 1, 2, 2}), s.uniform({2, 3, 2, 2})});

  for (pmd::DwtMode mode : {pmd::DwtMode::attenuate, pmd::DwtMode::as_written}) {
    const pmd::DiffusionConfig cfg{0.8, 2, 1.0, mode};
    s.run<T>(
        "pmd_dwt", [cfg](auto&, const auto& v) { return pmd::diffuse_dwt(v[0], cfg); }, {s.normal({2, 2, 8, 8})});
  }

  {
    const pmd::DiffusionConfig cfg{1.0, 1, 1.0, pmd::DwtMode::attenuate};
    for (pmd::Preprocess pre : {pmd::Preprocess::pmd, pmd::Preprocess::sobel}) {
      const std::size_t f = pre == pmd::Preprocess::sobel ? 2 : 1;
      s.run<T>(
          "pmd_block",
          [cfg, pre](auto&, const auto& v) {
            using V = std::decay_t<decltype(v[0])>;
            pmd::PmdBlockWeights<typename std::decay_t<decltype(v[0].value())>::value_type> w{
                v[1], v[2], v[3], v[4], v[5], v[6], std::optional<V>(v[7]), std::optional<V>(v[8]),
                std::optional<V>(v[9])};
            return pmd::pmd_block_forward(v[0], cfg, w, 2, pre);
          },
          {s.normal({2, 2, 8, 8}), s.uniform({3, 2 * f, 3, 3}), s.uniform({3}, 0.5, 1.5), s.uniform({3}),
           s.uniform({3, 3, 3, 3}), s.uniform({3}, 0.5, 1.5), s.uniform({3}), s.uniform({3, 2, 1, 1}),
           s.uniform({3}, 0.5, 1.5), s.uniform({3})});
    }
  }

  for (bool reverse : {false, true}) {
    s.run<T>(
        "selective_scan",
        [reverse](auto&, const auto& v) {
          return ssm::selective_scan(v[0], softplus(v[1]), scale(exp(v[2]), -1.0), v[3], v[4], v[5], 2, reverse);
        },
        {s.normal({10, 3}), s.normal({10, 3}), s.uniform({3, 4}, -1.0, 1.0), s.normal({10, 4}), s.normal({10, 4}),
         s.normal({3})});
  }

  s.run<T>(
      "causal_conv1d", [](auto&, const auto& v) { return ssm::causal_conv1d(v[0], v[1], v[2], 2); },
      {s.normal({8, 3}), s.uniform({3, 3}), s.uniform({3})});

  s.run<T>(
      "patch_embed",
      [](auto&, const auto& v) {
        return ssm::tokens_to_map(ssm::patch_embed(v[0], ssm::PatchEmbedConfig{4, 1, 6}, v[1], v[2]), 2, 2, 2);
      },
      {s.uniform({2, 1, 8, 8}), s.uniform({16, 6}), s.uniform({4, 6})});

  {
    // M = 16 tokens of width 8, expand 2, S = 4, R = 1
    const std::size_t d = 8, e = 16, st = 4;
    auto dir = [&]() {
      return Inputs{s.uniform({e, 1 + 2 * st}, -0.5, 0.5), s.uniform({1, e}), s.uniform({e}, -0.5, 0.5),
                    s.uniform({e, st}, -0.5, 1.5), s.uniform({e})};
    };
    Inputs in{s.normal({16, d}), s.uniform({d}, 0.5, 1.5), s.uniform({d}), s.uniform({d, 2 * e}, -0.4, 0.4),
              s.uniform({e, 3}, -0.6, 0.6), s.uniform({e})};
    for (auto& t : dir()) in.push_back(t);
    for (auto& t : dir()) in.push_back(t);
    in.push_back(s.uniform({e, d}, -0.3, 0.3));
    s.run<T>(
        "vim_block",
        [](auto&, const auto& v) {
          using U = typename std::decay_t<decltype(v[0].value())>::value_type;
          ssm::SsmParams<U> fwd{v[6], v[7], v[8], v[9], v[10]}, bwd{v[11], v[12], v[13], v[14], v[15]};
          ssm::VimBlockWeights<U> w{v[1], v[2], v[3], v[4], v[5], fwd, bwd, v[16]};
          return ssm::vim_block(v[0], w, 1);
        },
        in);
  }

  const MicroModels micro(opt.seed + 11);
  const model::ModelConfig mc = micro.f64.config();
  {
    auto is_seg = [](const std::string& n) { return n.rfind("seg.", 0) == 0; };
    Inputs in = micro.params_where(is_seg);
    const std::size_t n_params = in.size();
    for (std::size_t i = 0; i < model::kStages; ++i) {
      const std::size_t g = mc.image_size / model::StagePlan::downsample(i);
      in.push_back(s.normal({2, mc.plan.widths[i], g, g}));
    }
    s.run<T>(
        "seghead",
        [&micro, mc, n_params, is_seg](auto& tape, const auto& v) {
          using U = typename std::decay_t<decltype(v[0].value())>::value_type;
          const auto p = bind_subset<U>(tape, micro.get<U>(), v, 0, is_seg);
          model::EncoderOutputs<U> f{v[n_params], v[n_params + 1], v[n_params + 2], v[n_params + 3]};
          return model::seghead_forward(f, p, mc);
        },
        in);

    auto is_fcn = [](const std::string& n) { return n.rfind("fcn.", 0) == 0; };
    Inputs fin = micro.params_where(is_fcn);
    const std::size_t nf = fin.size();
    fin.push_back(s.normal({2, mc.plan.widths[3], 1, 1}));
    s.run<T>(
        "fcnhead",
        [&micro, mc, nf, is_fcn](auto& tape, const auto& v) {
          using U = typename std::decay_t<decltype(v[0].value())>::value_type;
          const auto p = bind_subset<U>(tape, micro.get<U>(), v, 0, is_fcn);
          return model::fcnhead_forward(v[nf], p, mc, "fcn");
        },
        fin);
  }

  if (opt.full_model && !opt.fast) {
    Rng data_rng(opt.seed + 29);
    const Tensor<double> image = random_uniform<double>({4, 1, mc.image_size, mc.image_size}, data_rng, 0.0, 1.0);
    std::vector<int> labels(image.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::size_t x = i % mc.image_size, y = (i / mc.image_size) % mc.image_size;
      labels[i] = (x > 8 && x < 24 && y > 10 && y < 26) ? 1 : 0;
    }
    auto all = [](const std::string&) { return true; };
    s.run<T>(
        "full_model",
        [&micro, mc, image, labels, all](auto& tape, const auto& v) {
          using U = typename std::decay_t<decltype(v[0].value())>::value_type;
          const auto p = bind_subset<U>(tape, micro.get<U>(), v, 0, all);
          const auto out = model::forward(tape.constant(image.cast<U>()), p, mc);
          return model::total_loss(out, labels, mc.loss).total;
        },
        micro.params_where(all), opt.model_fraction);
  }
  return s.rows();
}

template std::vector<FamilyResult> run_suite<float>(const SuiteOptions&);
template std::vector<FamilyResult> run_suite<double>(const SuiteOptions&);

}  // namespace pmtk::gradcheck
