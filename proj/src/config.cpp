#include "pmtk/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "pmtk/error.hpp"

namespace pmtk {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void KeyValues::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=#\n") != std::string::npos || trim(key) != key) {
    throw ConfigError("invalid config key '" + key + "'");
  }
  if (value.find('\n') != std::string::npos) throw ConfigError("config value for " + key + " spans lines");
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void KeyValues::set(const std::string& key, double value) { set(key, format_real(value)); }
void KeyValues::set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

bool KeyValues::has(const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.first == key) return true;
  }
  return false;
}

const std::string& KeyValues::str(const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.first == key) return e.second;
  }
  throw ConfigError("missing config key '" + key + "'");
}

double KeyValues::real(const std::string& key) const {
  const std::string& s = str(key);
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": not a number: '" + s + "'");
  return v;
}

std::uint64_t KeyValues::integer(const std::string& key) const {
  const std::string& s = str(key);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key + ": not a non-negative integer: '" + s + "'");
  }
  return v;
}

bool KeyValues::boolean(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": not a boolean: '" + s + "'");
}

std::string KeyValues::str(const std::string& key, const std::string& fallback) const {
  return has(key) ? str(key) : fallback;
}
double KeyValues::real(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }
std::uint64_t KeyValues::integer(const std::string& key, std::uint64_t fallback) const {
  return has(key) ? integer(key) : fallback;
}

std::string KeyValues::dump() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

KeyValues KeyValues::parse(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    kv.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

void KeyValues::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << dump();
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

}  // namespace pmtk
