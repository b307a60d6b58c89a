#include "pmtk/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace pmtk::io {
namespace {

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError("truncated tensor record");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

template <typename Stored, typename T>
Tensor<T> read_payload(std::istream& is, Shape shape) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(get_le<Stored>(is));
  return t;
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw DimensionError("rank too large to serialize");
  os.write(kTensorMagic, 4);
  put_le<std::uint8_t>(os, kTensorVersion);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(precision_of<T>()));
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw DimensionError("extent too large to serialize");
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  for (T v : t.data()) put_le<T>(os, v);
  if (!os) throw Error("failed writing tensor record");
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("truncated tensor record");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw FormatError("bad tensor magic");
  const auto version = get_le<std::uint8_t>(is);
  if (version != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
  const auto precision = get_le<std::uint8_t>(is);
  const auto rank = get_le<std::uint8_t>(is);
  Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint32_t>(is);
  switch (precision) {
    case static_cast<std::uint8_t>(Precision::f32):
      return read_payload<float, T>(is, std::move(shape));
    case static_cast<std::uint8_t>(Precision::f64):
      return read_payload<double, T>(is, std::move(shape));
    default:
      throw FormatError("unknown precision flag " + std::to_string(precision));
  }
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_tensor<T>(is);
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const NamedTensors<T>& tensors) {
  std::filesystem::create_directories(dir);
  std::ofstream weights(dir / "weights.pmtk", std::ios::binary);
  std::ofstream manifest(dir / "manifest.txt");
  if (!weights || !manifest) throw Error("cannot write checkpoint in " + dir.string());
  for (const auto& [name, t] : tensors) {
    if (name.find_first_of(" \t\n") != std::string::npos) throw UsageError("tensor name contains whitespace: " + name);
    const auto offset = static_cast<std::uint64_t>(weights.tellp());
    write_tensor(weights, t);
    manifest << name << ' ' << shape_str(t.shape()) << ' ' << offset << '\n';
  }
}

template <typename T>
NamedTensors<T> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream weights(dir / "weights.pmtk", std::ios::binary);
  std::ifstream manifest(dir / "manifest.txt");
  if (!weights || !manifest) throw FormatError("checkpoint files missing in " + dir.string());
  NamedTensors<T> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, shape;
    std::uint64_t offset = 0;
    if (!(ls >> name >> shape >> offset)) throw FormatError("bad manifest line: " + line);
    weights.seekg(static_cast<std::streamoff>(offset));
    Tensor<T> t = read_tensor<T>(weights);
    if (shape_str(t.shape()) != shape) throw FormatError("manifest shape mismatch for " + name);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

#define PMTK_INSTANTIATE_IO(T)                                                               \
  template void write_tensor(std::ostream&, const Tensor<T>&);                               \
  template Tensor<T> read_tensor<T>(std::istream&);                                          \
  template void save_tensor(const std::filesystem::path&, const Tensor<T>&);                 \
  template Tensor<T> load_tensor<T>(const std::filesystem::path&);                           \
  template void save_checkpoint(const std::filesystem::path&, const NamedTensors<T>&);       \
  template NamedTensors<T> load_checkpoint<T>(const std::filesystem::path&);

PMTK_INSTANTIATE_IO(float)
PMTK_INSTANTIATE_IO(double)

}  // namespace pmtk::io
