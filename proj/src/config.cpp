#include "aspmtl/config.hpp"

#include "aspmtl/errors.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <sstream>

namespace aspmtl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Settings Settings::parse(std::istream& in, const std::string& source) {
  Settings s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    s.values_[key] = trim(line.substr(eq + 1));
  }
  return s;
}

Settings Settings::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse(in, path.string());
}

void Settings::apply_env(const std::string& prefix, const std::vector<std::string>& known) {
  for (const auto& key : known) {
    std::string name = prefix + key;
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) {
      return c == '-' || c == '.' ? '_' : static_cast<char>(std::toupper(c));
    });
    if (const char* v = std::getenv(name.c_str())) values_[key] = v;
  }
}

void Settings::set(const std::string& key, const std::string& value) { values_[key] = value; }

void Settings::merge(const Settings& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::optional<std::string> Settings::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Settings::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double Settings::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(key);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + *v + "'");
  }
}

long long Settings::get_int(const std::string& key, long long fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    long long i = std::stoll(*v, &used);
    if (used != v->size()) throw std::invalid_argument(key);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + *v + "'");
  }
}

std::uint64_t Settings::get_u64(const std::string& key, std::uint64_t fallback) const {
  const long long v = get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw ConfigError(key + ": must be >= 0");
  return static_cast<std::uint64_t>(v);
}

bool Settings::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "1" || *v == "true" || *v == "yes" || *v == "on") return true;
  if (*v == "0" || *v == "false" || *v == "no" || *v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + *v + "'");
}

std::vector<double> Settings::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::vector<double> out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError(key + ": '" + item + "' is not a number");
    }
  }
  return out;
}

void Settings::require_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : values_) {
    if (!known.count(k)) throw ConfigError("unknown setting '" + k + "'");
  }
}

}  // namespace aspmtl
