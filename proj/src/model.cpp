#include "pmtk/model.hpp"

#include <cmath>

#include "pmtk/kernels.hpp"
#include "pmtk/rng.hpp"
#include "pmtk/ssm.hpp"

namespace pmtk::model {
namespace {

std::string stage_key(const char* branch, std::size_t stage) {
  return std::string(branch) + ".s" + std::to_string(stage + 1);
}

std::string block_key(const char* branch, std::size_t stage, std::size_t block) {
  return stage_key(branch, stage) + ".b" + std::to_string(block);
}

}  // namespace

void StagePlan::validate() const {
  for (std::size_t i = 0; i < kStages; ++i) {
    if (widths[i] == 0) throw ConfigError("stage widths must be positive");
    if (i > 0 && widths[i] <= widths[i - 1]) throw ConfigError("stage widths must strictly increase");
    if (pmd_blocks[i] == 0) throw ConfigError("every stage needs at least one diffusion block");
  }
}

Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no-pmd" || s == "no_pmd") return Variant::no_pmd;
  if (s == "sobel") return Variant::sobel;
  throw ConfigError("unknown variant '" + s + "' (expected full, no-pmd or sobel)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full:
      return "full";
    case Variant::no_pmd:
      return "no-pmd";
    case Variant::sobel:
      return "sobel";
  }
  return "?";
}

void LossWeights::validate() const {
  if (!(prim > 0.0)) throw ConfigError("primary loss weight must be positive");
  if (fcn < 0.0 || pmd < 0.0 || vim < 0.0) throw ConfigError("loss weights must be non-negative");
}

void ModelConfig::validate() const {
  if (image_size == 0 || image_size % 32 != 0) {
    throw DimensionError("image size " + std::to_string(image_size) + " is not a multiple of 32");
  }
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (classes < 2) throw ConfigError("need at least two classes");
  if (head_width == 0 || state_dim == 0 || expand == 0) throw ConfigError("head width, state dim and expand must be positive");
  plan.validate();
  diffusion.validate_dwt();
  loss.validate();
}

pmd::Preprocess ModelConfig::preprocess() const {
  switch (variant) {
    case Variant::full:
      return pmd::Preprocess::pmd;
    case Variant::no_pmd:
      return pmd::Preprocess::identity;
    case Variant::sobel:
      return pmd::Preprocess::sobel;
  }
  return pmd::Preprocess::pmd;
}

void ModelConfig::write(KeyValues& kv) const {
  kv.set("model.image_size", image_size);
  kv.set("model.in_channels", in_channels);
  kv.set("model.classes", classes);
  kv.set("model.head_width", head_width);
  kv.set("model.state_dim", state_dim);
  kv.set("model.expand", expand);
  for (std::size_t i = 0; i < kStages; ++i) {
    kv.set("model.width" + std::to_string(i + 1), plan.widths[i]);
    kv.set("model.pmd_blocks" + std::to_string(i + 1), plan.pmd_blocks[i]);
  }
  kv.set("model.vim_blocks", plan.vim_blocks);
  kv.set("model.variant", to_string(variant));
  kv.set("model.pmd_k", diffusion.k);
  kv.set("model.pmd_steps", static_cast<std::uint64_t>(diffusion.steps));
  kv.set("model.pmd_mode", pmd::to_string(diffusion.mode));
  kv.set("loss.prim", loss.prim);
  kv.set("loss.fcn", loss.fcn);
  kv.set("loss.pmd", loss.pmd);
  kv.set("loss.vim", loss.vim);
}

ModelConfig ModelConfig::read(const KeyValues& kv) {
  ModelConfig c;
  c.image_size = kv.integer("model.image_size", c.image_size);
  c.in_channels = kv.integer("model.in_channels", c.in_channels);
  c.classes = kv.integer("model.classes", c.classes);
  c.head_width = kv.integer("model.head_width", c.head_width);
  c.state_dim = kv.integer("model.state_dim", c.state_dim);
  c.expand = kv.integer("model.expand", c.expand);
  for (std::size_t i = 0; i < kStages; ++i) {
    c.plan.widths[i] = kv.integer("model.width" + std::to_string(i + 1), c.plan.widths[i]);
    c.plan.pmd_blocks[i] = kv.integer("model.pmd_blocks" + std::to_string(i + 1), c.plan.pmd_blocks[i]);
  }
  c.plan.vim_blocks = kv.integer("model.vim_blocks", c.plan.vim_blocks);
  c.variant = parse_variant(kv.str("model.variant", "full"));
  c.diffusion.k = kv.real("model.pmd_k", c.diffusion.k);
  c.diffusion.steps = static_cast<int>(kv.integer("model.pmd_steps", static_cast<std::uint64_t>(c.diffusion.steps)));
  c.diffusion.mode = pmd::parse_dwt_mode(kv.str("model.pmd_mode", "attenuate"));
  c.loss.prim = kv.real("loss.prim", c.loss.prim);
  c.loss.fcn = kv.real("loss.fcn", c.loss.fcn);
  c.loss.pmd = kv.real("loss.pmd", c.loss.pmd);
  c.loss.vim = kv.real("loss.vim", c.loss.vim);
  c.validate();
  return c;
}

// ---- parameters -----------------------------------------------------------

template <typename T>
Var<T> Bound<T>::operator[](const std::string& name) const {
  auto it = index_->find(name);
  if (it == index_->end()) throw ConfigError("no parameter named " + name);
  return vars_[it->second];
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build(seed);
}

template <typename T>
void Model<T>::add(const std::string& name, Shape shape, Tensor<T> value) {
  if (value.shape() != shape) throw DimensionError("parameter " + name + " has the wrong shape");
  if (!index_.emplace(name, params_.size()).second) throw ConfigError("duplicate parameter " + name);
  params_.emplace_back(name, std::move(value));
}

template <typename T>
void Model<T>::build(std::uint64_t seed) {
  Rng rng(seed);
  const auto& c = cfg_;
  const auto& widths = c.plan.widths;

  auto weight = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    add(name, shape, random_uniform<T>(shape, rng, -bound, bound));
  };
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
    weight(name, {out, in, k, k}, in * k * k);
  };
  auto fill = [&](const std::string& name, std::size_t n, T v) { add(name, {n}, Tensor<T>({n}, v)); };
  auto norm = [&](const std::string& prefix, std::size_t n) {
    fill(prefix + ".gamma", n, T(1));
    fill(prefix + ".beta", n, T(0));
  };

  // diffusion branch
  conv("pmd.stem1.w", widths[0], c.in_channels, 3);
  norm("pmd.stem1", widths[0]);
  conv("pmd.stem2.w", widths[0], widths[0], 3);
  norm("pmd.stem2", widths[0]);
  const std::size_t conv_in_factor = c.variant == Variant::sobel ? 2 : 1;
  for (std::size_t s = 0; s < kStages; ++s) {
    for (std::size_t b = 0; b < c.plan.pmd_blocks[s]; ++b) {
      const std::string key = block_key("pmd", s, b);
      const std::size_t in = (b == 0 && s > 0) ? widths[s - 1] : widths[s];
      conv(key + ".conv1", widths[s], in * conv_in_factor, 3);
      norm(key + ".n1", widths[s]);
      conv(key + ".conv2", widths[s], widths[s], 3);
      norm(key + ".n2", widths[s]);
      if (b == 0 && s > 0) {
        conv(key + ".proj", widths[s], in, 1);
        norm(key + ".np", widths[s]);
      }
    }
  }

  // Vim branch
  std::size_t grid = c.image_size / 4;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t d = widths[s], e = c.expand * d, r = c.dt_rank(d), st = c.state_dim;
    const std::size_t in = s == 0 ? c.in_channels : widths[s - 1];
    const std::size_t patch = s == 0 ? 4 : 2;
    const std::string key = stage_key("vim", s);
    weight(key + ".embed", {patch * patch * in, d}, patch * patch * in);
    add(key + ".pos", {grid * grid, d}, Tensor<T>({grid * grid, d}));
    for (std::size_t b = 0; b < c.plan.vim_blocks; ++b) {
      const std::string bk = block_key("vim", s, b);
      norm(bk + ".norm", d);
      weight(bk + ".in_proj", {d, 2 * e}, d);
      weight(bk + ".conv_w", {e, 3}, 3);
      fill(bk + ".conv_b", e, T(0));
      for (const char* dir : {".fwd", ".bwd"}) {
        const std::string dk = bk + dir;
        weight(dk + ".x_proj", {e, r + 2 * st}, e);
        weight(dk + ".dt_proj", {r, e}, r);
        fill(dk + ".dt_bias", e, T(0));
        Tensor<T> a_log({e, st});
        for (std::size_t i = 0; i < e; ++i) {
          for (std::size_t j = 0; j < st; ++j) a_log(i, j) = static_cast<T>(std::log(static_cast<double>(j + 1)));
        }
        add(dk + ".a_log", {e, st}, std::move(a_log));
        fill(dk + ".d_skip", e, T(1));
      }
      weight(bk + ".out_proj", {e, d}, e);
    }
    grid /= 2;
  }

  // decoders
  const std::size_t hw = c.head_width, k = c.classes;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::string key = "seg.lat" + std::to_string(s + 1);
    conv(key + ".w", hw, widths[s], 1);
    fill(key + ".b", hw, T(0));
  }
  conv("seg.fuse.w", hw, hw, 3);
  norm("seg.fuse", hw);
  conv("seg.cls.w", k, hw, 1);
  fill("seg.cls.b", k, T(0));
  for (const char* head : {"fcn", "aux_pmd", "aux_vim"}) {
    const std::string key(head);
    conv(key + ".conv.w", hw, widths[kStages - 1], 3);
    norm(key + ".conv", hw);
    conv(key + ".cls.w", k, hw, 1);
    fill(key + ".cls.b", k, T(0));
  }
}

template <typename T>
Tensor<T>& Model<T>::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named " + name);
  return params_[it->second].second;
}

template <typename T>
std::size_t Model<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.second.size();
  return n;
}

template <typename T>
Bound<T> Model<T>::bind(Tape<T>& tape) const {
  Bound<T> b;
  b.index_ = &index_;
  b.vars_.reserve(params_.size());
  for (const auto& p : params_) {
    b.vars_.push_back(tape.grad_enabled() ? tape.leaf(p.second) : tape.constant(p.second));
  }
  return b;
}

template <typename T>
Bound<T> Model<T>::bind_vars(std::vector<Var<T>> vars) const {
  if (vars.size() != params_.size()) throw DimensionError("bind_vars needs one var per parameter");
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (vars[i].shape() != params_[i].second.shape()) throw DimensionError("bound var for " + params_[i].first + " has the wrong shape");
  }
  Bound<T> b;
  b.index_ = &index_;
  b.vars_ = std::move(vars);
  return b;
}

template <typename T>
void Model<T>::save(const std::filesystem::path& dir) const {
  io::save_checkpoint(dir, params_);
  KeyValues kv;
  cfg_.write(kv);
  kv.save(dir / "model.cfg");
}

template <typename T>
Model<T> Model<T>::load(const std::filesystem::path& dir) {
  const ModelConfig cfg = ModelConfig::read(KeyValues::load(dir / "model.cfg"));
  Model<T> m(cfg, 0);
  io::NamedTensors<T> stored = io::load_checkpoint<T>(dir);
  if (stored.size() != m.params_.size()) {
    throw FormatError("checkpoint holds " + std::to_string(stored.size()) + " tensors, model expects " +
                      std::to_string(m.params_.size()));
  }
  for (auto& [name, t] : stored) {
    Tensor<T>& dst = m.param(name);
    if (dst.shape() != t.shape()) throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()));
    dst = std::move(t);
  }
  return m;
}

// ---- forward --------------------------------------------------------------

namespace {

template <typename T>
Var<T> conv_norm(Var<T> x, const Bound<T>& p, const std::string& key, std::size_t stride, bool with_relu) {
  Var<T> y = norm_affine(conv2d(x, p[key + ".w"], stride, 1), p[key + ".gamma"], p[key + ".beta"]);
  return with_relu ? relu(y) : y;
}

template <typename T>
Var<T> conv1x1_bias(Var<T> x, const Bound<T>& p, const std::string& key) {
  return bias_add(conv2d(x, p[key + ".w"], 1, 0), p[key + ".b"]);
}

template <typename T>
void check_image(Var<T> image, const ModelConfig& cfg) {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != cfg.in_channels) {
    throw DimensionError("image batch must be [N," + std::to_string(cfg.in_channels) + ",H,W], got " + shape_str(s));
  }
  if (s[2] % 32 != 0 || s[3] % 32 != 0) throw DimensionError("image extents must be multiples of 32, got " + shape_str(s));
  if (s[2] != cfg.image_size || s[3] != cfg.image_size) {
    throw DimensionError("model built for " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                         " inputs, got " + shape_str(s));
  }
}

}  // namespace

template <typename T>
EncoderOutputs<T> pmd_branch_forward(Var<T> image, const Bound<T>& p, const ModelConfig& cfg) {
  check_image(image, cfg);
  Var<T> x = conv_norm(image, p, "pmd.stem1", 2, true);
  x = conv_norm(x, p, "pmd.stem2", 2, true);
  const pmd::Preprocess pre = cfg.preprocess();
  EncoderOutputs<T> out;
  for (std::size_t s = 0; s < kStages; ++s) {
    for (std::size_t b = 0; b < cfg.plan.pmd_blocks[s]; ++b) {
      const std::string key = block_key("pmd", s, b);
      pmd::PmdBlockWeights<T> w{p[key + ".conv1"], p[key + ".n1.gamma"], p[key + ".n1.beta"],
                                p[key + ".conv2"], p[key + ".n2.gamma"], p[key + ".n2.beta"],
                                std::nullopt,      std::nullopt,         std::nullopt};
      const bool down = b == 0 && s > 0;
      if (down) {
        w.proj = p[key + ".proj"];
        w.proj_gamma = p[key + ".np.gamma"];
        w.proj_beta = p[key + ".np.beta"];
      }
      x = pmd::pmd_block_forward(x, cfg.diffusion, w, down ? 2 : 1, pre);
    }
    out[s] = x;
  }
  return out;
}

template <typename T>
EncoderOutputs<T> mamba_branch_forward(Var<T> image, const Bound<T>& p, const ModelConfig& cfg) {
  check_image(image, cfg);
  const std::size_t batch = image.shape()[0];
  EncoderOutputs<T> out;
  Var<T> map = image;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::string key = stage_key("vim", s);
    ssm::PatchEmbedConfig pe{s == 0 ? std::size_t{4} : std::size_t{2}, map.shape()[1], cfg.plan.widths[s]};
    const std::size_t gh = map.shape()[2] / pe.patch, gw = map.shape()[3] / pe.patch;
    Var<T> tokens = ssm::patch_embed(map, pe, p[key + ".embed"], p[key + ".pos"]);
    for (std::size_t b = 0; b < cfg.plan.vim_blocks; ++b) {
      const std::string bk = block_key("vim", s, b);
      auto dir = [&](const std::string& d) {
        return ssm::SsmParams<T>{p[bk + d + ".x_proj"], p[bk + d + ".dt_proj"], p[bk + d + ".dt_bias"],
                                 p[bk + d + ".a_log"], p[bk + d + ".d_skip"]};
      };
      ssm::VimBlockWeights<T> w{p[bk + ".norm.gamma"], p[bk + ".norm.beta"], p[bk + ".in_proj"], p[bk + ".conv_w"],
                                p[bk + ".conv_b"],     dir(".fwd"),          dir(".bwd"),        p[bk + ".out_proj"]};
      tokens = ssm::vim_block(tokens, w, batch);
    }
    map = ssm::tokens_to_map(tokens, batch, gh, gw);
    out[s] = map;
  }
  return out;
}

template <typename T>
EncoderOutputs<T> fuse(const EncoderOutputs<T>& a, const EncoderOutputs<T>& b) {
  EncoderOutputs<T> out;
  for (std::size_t s = 0; s < kStages; ++s) {
    if (a[s].shape() != b[s].shape()) {
      throw DimensionError("cannot fuse " + shape_str(a[s].shape()) + " with " + shape_str(b[s].shape()));
    }
    out[s] = add(a[s], b[s]);
  }
  return out;
}

template <typename T>
Var<T> seghead_forward(const EncoderOutputs<T>& f, const Bound<T>& p, const ModelConfig& cfg) {
  for (std::size_t s = 0; s < kStages; ++s) {
    const Shape& sh = f[s].shape();
    if (sh.size() != 4 || sh[1] != cfg.plan.widths[s]) {
      throw DimensionError("seghead input " + std::to_string(s + 1) + " has shape " + shape_str(sh));
    }
    if (s > 0 && (sh[2] * 2 != f[s - 1].shape()[2] || sh[3] * 2 != f[s - 1].shape()[3])) {
      throw DimensionError("seghead inputs are not a factor-2 pyramid");
    }
  }
  Var<T> top = conv1x1_bias(f[kStages - 1], p, "seg.lat" + std::to_string(kStages));
  for (std::size_t s = kStages - 1; s-- > 0;) {
    top = add(upsample_bilinear(top, 2), conv1x1_bias(f[s], p, "seg.lat" + std::to_string(s + 1)));
  }
  top = conv_norm(top, p, "seg.fuse", 1, true);
  // the 1x1 classifier commutes with bilinear upsampling; applying it first is cheaper
  return upsample_bilinear(conv1x1_bias(top, p, "seg.cls"), 4);
}

template <typename T>
Var<T> fcnhead_forward(Var<T> deepest, const Bound<T>& p, const ModelConfig& cfg, const std::string& prefix) {
  const Shape& sh = deepest.shape();
  if (sh.size() != 4 || sh[1] != cfg.plan.widths[kStages - 1]) {
    throw DimensionError(prefix + " head input has shape " + shape_str(sh));
  }
  Var<T> x = conv_norm(deepest, p, prefix + ".conv", 1, true);
  return upsample_bilinear(conv1x1_bias(x, p, prefix + ".cls"), 32);
}

template <typename T>
Outputs<T> forward(Var<T> image, const Bound<T>& p, const ModelConfig& cfg) {
  Outputs<T> o;
  o.pmd = pmd_branch_forward(image, p, cfg);
  o.vim = mamba_branch_forward(image, p, cfg);
  o.fused = fuse(o.pmd, o.vim);
  o.seg = seghead_forward(o.fused, p, cfg);
  o.fcn = fcnhead_forward(o.fused[kStages - 1], p, cfg, "fcn");
  o.aux_pmd = fcnhead_forward(o.pmd[kStages - 1], p, cfg, "aux_pmd");
  o.aux_vim = fcnhead_forward(o.vim[kStages - 1], p, cfg, "aux_vim");
  return o;
}

template <typename T>
LossResult<T> total_loss(const Outputs<T>& out, std::span<const int> labels, const LossWeights& lw) {
  lw.validate();
  Var<T> prim = softmax_cross_entropy(out.seg, labels);
  Var<T> fcn = softmax_cross_entropy(out.fcn, labels);
  Var<T> lp = softmax_cross_entropy(out.aux_pmd, labels);
  Var<T> lv = softmax_cross_entropy(out.aux_vim, labels);
  LossResult<T> r;
  r.terms.prim = prim.value().item();
  r.terms.fcn = fcn.value().item();
  r.terms.pmd = lp.value().item();
  r.terms.vim = lv.value().item();
  Var<T> total = scale(prim, lw.prim);
  total = add(total, scale(fcn, lw.fcn));
  total = add(total, scale(lp, lw.pmd));
  total = add(total, scale(lv, lw.vim));
  r.total = total;
  r.terms.total = total.value().item();
  return r;
}

template <typename T>
std::vector<int> predict(const Model<T>& model, const Tensor<T>& images) {
  Tape<T> tape(false);
  const Bound<T> p = model.bind(tape);
  Var<T> x = tape.constant(images);
  Outputs<T> o;
  o.pmd = pmd_branch_forward(x, p, model.config());
  o.vim = mamba_branch_forward(x, p, model.config());
  o.fused = fuse(o.pmd, o.vim);
  return kernels::argmax_classes(seghead_forward(o.fused, p, model.config()).value());
}

#define PMTK_INSTANTIATE_MODEL(T)                                                                         \
  template class Bound<T>;                                                                                \
  template class Model<T>;                                                                                \
  template EncoderOutputs<T> pmd_branch_forward(Var<T>, const Bound<T>&, const ModelConfig&);             \
  template EncoderOutputs<T> mamba_branch_forward(Var<T>, const Bound<T>&, const ModelConfig&);           \
  template EncoderOutputs<T> fuse(const EncoderOutputs<T>&, const EncoderOutputs<T>&);                    \
  template Var<T> seghead_forward(const EncoderOutputs<T>&, const Bound<T>&, const ModelConfig&);         \
  template Var<T> fcnhead_forward(Var<T>, const Bound<T>&, const ModelConfig&, const std::string&);       \
  template Outputs<T> forward(Var<T>, const Bound<T>&, const ModelConfig&);                               \
  template LossResult<T> total_loss(const Outputs<T>&, std::span<const int>, const LossWeights&);         \
  template std::vector<int> predict(const Model<T>&, const Tensor<T>&);

PMTK_INSTANTIATE_MODEL(float)
PMTK_INSTANTIATE_MODEL(double)

}  // namespace pmtk::model
