#include "pmtk/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pmtk/error.hpp"
#include "pmtk/rng.hpp"

namespace pmtk::data {
namespace {

// Next header token of a PNM file, skipping whitespace and comments.
std::string pnm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw FormatError("truncated PGM header");
  return tok;
}

std::size_t pnm_number(std::istream& is, const char* what) {
  const std::string tok = pnm_token(is);
  std::size_t v = 0;
  for (char ch : tok) {
    if (ch < '0' || ch > '9') throw FormatError(std::string("bad PGM ") + what + ": '" + tok + "'");
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    if (v > (1u << 24)) throw FormatError(std::string("PGM ") + what + " too large");
  }
  return v;
}

std::vector<unsigned char> read_pgm(const std::filesystem::path& path, std::size_t& h, std::size_t& w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  char magic[2];
  if (!is.read(magic, 2)) throw FormatError(path.string() + ": truncated PGM header");
  if (magic[0] != 'P') throw FormatError(path.string() + ": not a PNM file");
  if (magic[1] != '5') {
    throw FormatError(path.string() + ": only binary grayscale PGM (P5) is supported, got P" + std::string(1, magic[1]));
  }
  w = pnm_number(is, "width");
  h = pnm_number(is, "height");
  const std::size_t maxval = pnm_number(is, "maxval");
  if (maxval != 255) throw FormatError(path.string() + ": maxval " + std::to_string(maxval) + " unsupported (need 255)");
  if (w == 0 || h == 0) throw FormatError(path.string() + ": empty image");
  std::vector<unsigned char> px(w * h);
  if (!is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()))) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return px;
}

void write_pgm(const std::filesystem::path& path, const std::vector<unsigned char>& px, std::size_t h, std::size_t w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << "P5\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw Error("failed writing " + path.string());
}

// Mirror index for padding, period 2(n-1).
std::size_t reflect(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

Tensor<double> load_image(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto px = read_pgm(path, h, w);
  Tensor<double> out({1, h, w});
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = px[i] / 255.0;
  return out;
}

void save_image(const std::filesystem::path& path, const Tensor<double>& image) {
  const bool ok = image.rank() == 2 || (image.rank() == 3 && image.dim(0) == 1);
  if (!ok) throw DimensionError("save_image expects [H,W] or [1,H,W], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  std::vector<unsigned char> px(h * w);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    px[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  write_pgm(path, px, h, w);
}

std::vector<int> load_mask(const std::filesystem::path& path, std::size_t* height, std::size_t* width) {
  std::size_t h = 0, w = 0;
  const auto px = read_pgm(path, h, w);
  if (height) *height = h;
  if (width) *width = w;
  std::vector<int> mask(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) mask[i] = px[i] >= 128 ? 1 : 0;
  return mask;
}

void save_mask(const std::filesystem::path& path, const std::vector<int>& mask, std::size_t height, std::size_t width) {
  if (mask.size() != height * width) throw DimensionError("mask size does not match extents");
  std::vector<unsigned char> px(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) px[i] = mask[i] ? 255 : 0;
  write_pgm(path, px, height, width);
}

Padded pad_to_multiple(const Tensor<double>& x, std::size_t m) {
  if (m == 0 || (m & (m - 1)) != 0) throw ConfigError("padding multiple must be a power of two");
  if (x.rank() < 2) throw DimensionError("pad_to_multiple needs at least two dimensions");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t ph = round_up(h, m), pw = round_up(w, m);
  Shape shape = x.shape();
  shape[shape.size() - 2] = ph;
  shape[shape.size() - 1] = pw;
  Tensor<double> out(shape);
  const std::size_t planes = x.size() / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < ph; ++y) {
      const std::size_t sy = reflect(y, h);
      for (std::size_t xx = 0; xx < pw; ++xx) out[(p * ph + y) * pw + xx] = x[(p * h + sy) * w + reflect(xx, w)];
    }
  }
  return {std::move(out), h, w};
}

Tensor<double> crop(const Tensor<double>& x, std::size_t height, std::size_t width) {
  if (x.rank() < 2) throw DimensionError("crop needs at least two dimensions");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (height > h || width > w) throw DimensionError("crop extents exceed the input");
  Shape shape = x.shape();
  shape[shape.size() - 2] = height;
  shape[shape.size() - 1] = width;
  Tensor<double> out(shape);
  const std::size_t planes = x.size() / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t xx = 0; xx < width; ++xx) out[(p * height + y) * width + xx] = x[(p * h + y) * w + xx];
    }
  }
  return out;
}

std::vector<int> pad_mask(const std::vector<int>& mask, std::size_t height, std::size_t width, std::size_t m) {
  if (mask.size() != height * width) throw DimensionError("mask size does not match extents");
  Tensor<double> t({height, width});
  for (std::size_t i = 0; i < mask.size(); ++i) t[i] = mask[i];
  const Padded p = pad_to_multiple(t, m);
  std::vector<int> out(p.image.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p.image[i] != 0.0 ? 1 : 0;
  return out;
}

// ---- synthetic data -------------------------------------------------------

void SynthConfig::validate() const {
  if (count == 0) throw ConfigError("synth count must be at least 1");
  if (size < 8) throw ConfigError("synth image size must be at least 8");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
  if (shadow_prob < 0.0 || shadow_prob > 1.0) throw ConfigError("shadow_prob must lie in [0,1]");
  if (deform < 0.0 || deform >= 1.0) throw ConfigError("deform must lie in [0,1)");
}

Sample synth_sample(const SynthConfig& cfg, std::size_t index) {
  using std::numbers::pi;
  Rng rng(cfg.seed ^ static_cast<std::uint64_t>(index));
  const double s = static_cast<double>(cfg.size);

  const double cx = rng.uniform(0.35, 0.65) * s, cy = rng.uniform(0.35, 0.65) * s;
  const double ra = rng.uniform(0.16, 0.28) * s, rb = rng.uniform(0.16, 0.28) * s;
  const double theta = rng.uniform(0.0, pi);
  const double freq = static_cast<double>(2 + rng.index(3));
  const double phase = rng.uniform(0.0, 2.0 * pi);
  const double amp = cfg.deform * rng.uniform(0.5, 1.0);
  const double ramp_dir = rng.uniform(0.0, 2.0 * pi);
  const double ramp_amp = rng.uniform(0.0, kMaxRamp);
  const double ct = std::cos(theta), st = std::sin(theta);

  // polar coordinates in the ellipse frame: rho <= r(phi) is inside
  auto boundary = [&](double phi) { return 1.0 + amp * std::sin(freq * phi + phase); };
  auto inside = [&](double x, double y) {
    const double dx = x - cx, dy = y - cy;
    const double u = (ct * dx + st * dy) / ra, v = (-st * dx + ct * dy) / rb;
    return std::hypot(u, v) <= boundary(std::atan2(v, u));
  };

  bool shadow = rng.uniform() < cfg.shadow_prob;
  double apex_x = s / 2, apex_y = -0.25 * s, wedge_dir = 0, wedge_half = 0, wedge_start = 0, shade = 1;
  {
    // wedge geometry is always drawn
    const double phi0 = rng.uniform(0.0, 2.0 * pi);
    const double r0 = boundary(phi0);
    const double u = ra * r0 * std::cos(phi0), v = rb * r0 * std::sin(phi0);
    const double bx = cx + ct * u - st * v, by = cy + st * u + ct * v;
    wedge_dir = std::atan2(by - apex_y, bx - apex_x);
    wedge_start = 0.85 * std::hypot(bx - apex_x, by - apex_y);
    wedge_half = rng.uniform(0.05, 0.1);
    shade = rng.uniform(0.35, 0.6);
  }

  const double norm = std::abs(std::cos(ramp_dir)) + std::abs(std::sin(ramp_dir));
  const double rayleigh_mean = std::sqrt(pi / 2.0);

  Sample out;
  out.id = "s" + std::to_string(index);
  out.image = Tensor<double>({1, cfg.size, cfg.size});
  out.mask.assign(cfg.size * cfg.size, 0);
  for (std::size_t y = 0; y < cfg.size; ++y) {
    for (std::size_t x = 0; x < cfg.size; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const bool in = inside(px, py);
      const double t = ((px / s - 0.5) * std::cos(ramp_dir) + (py / s - 0.5) * std::sin(ramp_dir)) / norm;
      double v = (in ? 0.6 - kRegionContrast : 0.6) + ramp_amp * t;
      if (shadow) {
        const double ang = std::atan2(py - apex_y, px - apex_x);
        if (std::abs(ang - wedge_dir) <= wedge_half && std::hypot(px - apex_x, py - apex_y) >= wedge_start) v *= shade;
      }
      const double eta = rng.rayleigh() - rayleigh_mean;
      v *= 1.0 + cfg.noise_sigma * eta;
      out.image[y * cfg.size + x] = std::clamp(v, 0.0, 1.0);
      out.mask[y * cfg.size + x] = in ? 1 : 0;
    }
  }
  return out;
}

std::vector<Sample> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(synth_sample(cfg, i));
  return out;
}

// ---- splits ---------------------------------------------------------------

SplitIndices split(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed) {
  if (n == 0) throw DataError("cannot split an empty sample set");
  for (double r : ratios) {
    if (r < 0.0) throw ConfigError("split ratios must be non-negative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[1] + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[2] + 1e-9));
  SplitIndices out;
  out.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val),
                  idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  out.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), idx.end());
  return out;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

std::vector<Sample> Dataset::subset(Split s) const {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (splits[i] == s) out.push_back(samples[i]);
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  if (ds.samples.size() != ds.splits.size()) throw DimensionError("dataset split list does not match samples");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw Error("cannot write " + (dir / "manifest.csv").string());
  manifest << "id,split\n";
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    save_image(dir / "images" / (s.id + ".pgm"), s.image);
    save_mask(dir / "masks" / (s.id + ".pgm"), s.mask, s.height(), s.width());
    manifest << s.id << ',' << to_string(ds.splits[i]) << '\n';
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw DataError("no manifest.csv in " + dir.string());
  std::string line;
  if (!std::getline(manifest, line) || line != "id,split") throw FormatError("manifest.csv must start with 'id,split'");
  Dataset ds;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("bad manifest row: " + line);
    Sample s;
    s.id = line.substr(0, comma);
    s.image = load_image(dir / "images" / (s.id + ".pgm"));
    std::size_t h = 0, w = 0;
    s.mask = load_mask(dir / "masks" / (s.id + ".pgm"), &h, &w);
    if (h != s.height() || w != s.width()) throw DataError("mask and image extents differ for " + s.id);
    ds.samples.push_back(std::move(s));
    ds.splits.push_back(parse_split(line.substr(comma + 1)));
  }
  if (ds.samples.empty()) throw DataError("dataset in " + dir.string() + " is empty");
  return ds;
}

template <typename T>
Batch<T> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("empty batch");
  const std::size_t h = samples[indices[0]].height(), w = samples[indices[0]].width();
  Batch<T> b;
  b.images = Tensor<T>({indices.size(), 1, h, w});
  b.labels.reserve(indices.size() * h * w);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const Sample& s = samples.at(indices[n]);
    if (s.height() != h || s.width() != w || s.image.dim(0) != 1) throw DimensionError("batch samples differ in shape");
    for (std::size_t i = 0; i < h * w; ++i) b.images[n * h * w + i] = static_cast<T>(s.image[i]);
    b.labels.insert(b.labels.end(), s.mask.begin(), s.mask.end());
  }
  return b;
}

template Batch<float> make_batch(const std::vector<Sample>&, const std::vector<std::size_t>&);
template Batch<double> make_batch(const std::vector<Sample>&, const std::vector<std::size_t>&);

}  // namespace pmtk::data
