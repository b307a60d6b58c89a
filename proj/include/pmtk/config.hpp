#pragma once

// Plain-text key=value files: one pair per line, '#' starts a comment,
// order preserved on write.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace pmtk {

class KeyValues {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::uint64_t>(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }

  bool has(const std::string& key) const;
  // Throws ConfigError when the key is absent or the value does not parse.
  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  std::uint64_t integer(const std::string& key) const;
  bool boolean(const std::string& key) const;

  std::string str(const std::string& key, const std::string& fallback) const;
  double real(const std::string& key, double fallback) const;
  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string dump() const;
  static KeyValues parse(const std::string& text);

  void save(const std::filesystem::path& path) const;
  static KeyValues load(const std::filesystem::path& path);

  bool operator==(const KeyValues&) const = default;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Shortest decimal text that reads back to the same double.
std::string format_real(double v);

}  // namespace pmtk
