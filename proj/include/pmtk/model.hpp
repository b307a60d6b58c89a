#pragma once

// Dual-branch segmentation network: a residual diffusion encoder and a
// Vim encoder over the same image, fused per scale and decoded by a
// top-down multi-scale head plus single-scale auxiliary heads.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>

#include "pmtk/autograd.hpp"
#include "pmtk/config.hpp"
#include "pmtk/pmd.hpp"
#include "pmtk/tensor_io.hpp"

namespace pmtk::model {

inline constexpr std::size_t kStages = 4;

struct StagePlan {
  std::array<std::size_t, kStages> widths{16, 32, 64, 128};
  std::array<std::size_t, kStages> pmd_blocks{3, 4, 6, 3};
  std::size_t vim_blocks = 2;

  // Feature scale of stage i is 1 / 2^(i+2).
  static std::size_t downsample(std::size_t stage) { return std::size_t{4} << stage; }
  void validate() const;
};

enum class Variant { full, no_pmd, sobel };
Variant parse_variant(const std::string& s);
std::string to_string(Variant v);

struct LossWeights {
  double prim = 1.0, fcn = 0.4, pmd = 0.4, vim = 0.4;
  void validate() const;
};

struct ModelConfig {
  std::size_t image_size = 64;  // square inputs; E_pos is sized from this
  std::size_t in_channels = 1;
  std::size_t classes = 2;
  std::size_t head_width = 32;
  std::size_t state_dim = 8;
  std::size_t expand = 2;
  StagePlan plan;
  Variant variant = Variant::full;
  pmd::DiffusionConfig diffusion{1.0, 1, 1.0, pmd::DwtMode::attenuate};
  LossWeights loss;

  void validate() const;
  std::size_t dt_rank(std::size_t width) const { return (width + 15) / 16; }
  pmd::Preprocess preprocess() const;

  void write(KeyValues& kv) const;
  static ModelConfig read(const KeyValues& kv);
};

template <typename T>
class Model;

// Parameters of a model bound to one tape as leaves.
template <typename T>
class Bound {
 public:
  Var<T> operator[](const std::string& name) const;
  const std::vector<Var<T>>& vars() const { return vars_; }

 private:
  friend class Model<T>;
  std::vector<Var<T>> vars_;
  const std::unordered_map<std::string, std::size_t>* index_ = nullptr;
};

template <typename T>
class Model {
 public:
  // Weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases, position embeddings
  // and dt biases 0; norm scale 1, shift 0; A_log = log(1..S); skip 1.
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  io::NamedTensors<T>& params() { return params_; }
  const io::NamedTensors<T>& params() const { return params_; }
  Tensor<T>& param(const std::string& name);
  std::size_t param_count() const;

  Bound<T> bind(Tape<T>& tape) const;
  // Uses caller-made vars, one per parameter in params() order.
  Bound<T> bind_vars(std::vector<Var<T>> vars) const;

  // Writes weights.pmtk, manifest.txt and model.cfg into dir.
  void save(const std::filesystem::path& dir) const;
  static Model load(const std::filesystem::path& dir);

 private:
  Model() = default;
  void add(const std::string& name, Shape shape, Tensor<T> value);
  void build(std::uint64_t seed);

  ModelConfig cfg_;
  io::NamedTensors<T> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
using EncoderOutputs = std::array<Var<T>, kStages>;

// image: [N, C, H, W] with H = W = cfg.image_size, divisible by 32.
template <typename T>
EncoderOutputs<T> pmd_branch_forward(Var<T> image, const Bound<T>& p, const ModelConfig& cfg);
template <typename T>
EncoderOutputs<T> mamba_branch_forward(Var<T> image, const Bound<T>& p, const ModelConfig& cfg);
template <typename T>
EncoderOutputs<T> fuse(const EncoderOutputs<T>& a, const EncoderOutputs<T>& b);

template <typename T>
Var<T> seghead_forward(const EncoderOutputs<T>& f, const Bound<T>& p, const ModelConfig& cfg);
// prefix selects the head: "fcn", "aux_pmd" or "aux_vim".
template <typename T>
Var<T> fcnhead_forward(Var<T> deepest, const Bound<T>& p, const ModelConfig& cfg, const std::string& prefix);

template <typename T>
struct Outputs {
  EncoderOutputs<T> pmd, vim, fused;
  Var<T> seg, fcn, aux_pmd, aux_vim;
};

template <typename T>
Outputs<T> forward(Var<T> image, const Bound<T>& p, const ModelConfig& cfg);

struct LossTerms {
  double prim = 0, fcn = 0, pmd = 0, vim = 0, total = 0;
};

template <typename T>
struct LossResult {
  Var<T> total;
  LossTerms terms;
};

// labels: N*H*W class ids.
template <typename T>
LossResult<T> total_loss(const Outputs<T>& out, std::span<const int> labels, const LossWeights& lw);

// Argmax of the primary head, N*H*W.
template <typename T>
std::vector<int> predict(const Model<T>& model, const Tensor<T>& images);

}  // namespace pmtk::model
