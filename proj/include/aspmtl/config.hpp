#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace aspmtl {

// Flat `key = value` settings. `#` starts a comment; blank lines are
// ignored. Later sources override earlier ones; `explicit_keys` records
// every key that was set by any source rather than left at its default.
class Settings {
 public:
  static Settings parse(std::istream& in, const std::string& source);
  static Settings load(const std::filesystem::path& path);

  // Overrides from `<prefix><KEY>` environment variables (key upper-cased,
  // '-' and '.' mapped to '_') for every key in `known`.
  void apply_env(const std::string& prefix, const std::vector<std::string>& known);
  void set(const std::string& key, const std::string& value);
  void merge(const Settings& other);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  // Throws ConfigError naming the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace aspmtl
