#include "pmtk/tensor.hpp"

#include <cstdlib>
#include <sstream>

namespace pmtk {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Precision precision_from_env() {
  const char* env = std::getenv("PMTK_PRECISION");
  if (env == nullptr || *env == '\0') return Precision::f32;
  const std::string v(env);
  if (v == "f32") return Precision::f32;
  if (v == "f64") return Precision::f64;
  throw ConfigError("PMTK_PRECISION must be f32 or f64, got '" + v + "'");
}

const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

}  // namespace pmtk
