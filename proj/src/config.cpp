#include "certainnet/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "certainnet/errors.hpp"

namespace certainnet {

namespace {

std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(strip(cur));
  return out;
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
  if (!out) throw DataError("write failed: " + path);
}

KeyValues KeyValues::parse_file(const std::string& path) {
  return parse_text(read_text_file(path), path);
}

KeyValues KeyValues::parse_text(const std::string& text, const std::string& origin) {
  KeyValues kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = strip(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(origin + ":" + std::to_string(lineno) +
                      ": expected 'key = value', got '" + line + "'");
    std::string key = strip(line.substr(0, eq));
    std::string value = strip(line.substr(eq + 1));
    if (key.empty())
      throw DataError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.items_[key] = value;
  }
  return kv;
}

void KeyValues::set(const std::string& key, const std::string& value) {
  items_[key] = value;
}

std::string KeyValues::get_string(const std::string& key) const {
  auto it = items_.find(key);
  if (it == items_.end())
    throw DataError(origin_ + ": missing required key '" + key + "'");
  return it->second;
}

std::string KeyValues::get_string_or(const std::string& key,
                                     const std::string& fallback) const {
  auto it = items_.find(key);
  return it == items_.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key) const {
  const std::string raw = get_string(key);
  char* end = nullptr;
  double v = std::strtod(raw.c_str(), &end);
  if (end == raw.c_str() || *end != '\0')
    throw DataError(origin_ + ": key '" + key + "' is not a number: '" + raw + "'");
  return v;
}

double KeyValues::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

int KeyValues::get_int(const std::string& key) const {
  const std::string raw = get_string(key);
  char* end = nullptr;
  long v = std::strtol(raw.c_str(), &end, 10);
  if (end == raw.c_str() || *end != '\0')
    throw DataError(origin_ + ": key '" + key + "' is not an integer: '" + raw + "'");
  return static_cast<int>(v);
}

int KeyValues::get_int_or(const std::string& key, int fallback) const {
  return has(key) ? get_int(key) : fallback;
}

unsigned long long KeyValues::get_u64_or(const std::string& key,
                                         unsigned long long fallback) const {
  if (!has(key)) return fallback;
  const std::string raw = get_string(key);
  char* end = nullptr;
  unsigned long long v = std::strtoull(raw.c_str(), &end, 10);
  if (end == raw.c_str() || *end != '\0')
    throw DataError(origin_ + ": key '" + key + "' is not an integer: '" + raw + "'");
  return v;
}

bool KeyValues::get_bool_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string raw = get_string(key);
  if (raw == "true" || raw == "1" || raw == "on") return true;
  if (raw == "false" || raw == "0" || raw == "off") return false;
  throw DataError(origin_ + ": key '" + key + "' is not a boolean: '" + raw + "'");
}

std::vector<double> KeyValues::get_double_list_or(const std::string& key,
                                                  std::vector<double> fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const std::string& part : split(get_string(key), ',')) {
    if (part.empty()) continue;
    char* end = nullptr;
    double v = std::strtod(part.c_str(), &end);
    if (end == part.c_str() || *end != '\0')
      throw DataError(origin_ + ": key '" + key + "' has a non-numeric entry: '" +
                      part + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<int> KeyValues::get_int_list_or(const std::string& key,
                                            std::vector<int> fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  for (double v : get_double_list_or(key, {})) out.push_back(static_cast<int>(v));
  return out;
}

std::vector<std::pair<int, double>> KeyValues::get_schedule_or(
    const std::string& key, std::vector<std::pair<int, double>> fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::pair<int, double>> out;
  for (const std::string& part : split(get_string(key), ',')) {
    if (part.empty()) continue;
    size_t colon = part.find(':');
    if (colon == std::string::npos)
      throw DataError(origin_ + ": key '" + key + "' entries must be 'epoch:value', got '" +
                      part + "'");
    out.emplace_back(std::atoi(part.substr(0, colon).c_str()),
                     std::atof(part.substr(colon + 1).c_str()));
  }
  return out;
}

void KeyValues::require_known(const std::set<std::string>& allowed) const {
  for (const auto& [key, value] : items_) {
    (void)value;
    if (!allowed.count(key))
      throw DataError(origin_ + ": unknown key '" + key + "'");
  }
}

}  // namespace certainnet
