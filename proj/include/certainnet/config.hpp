#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace certainnet {

// Flat "key = value" text with '#' comments: the on-disk format for scene and
// training configs, dataset manifests and eval reports. Typed getters throw
// DataError naming the file and key on missing or unparsable values.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse_file(const std::string& path);
  static KeyValues parse_text(const std::string& text, const std::string& origin);

  bool has(const std::string& key) const { return items_.count(key) != 0; }
  const std::string& origin() const { return origin_; }

  std::string get_string(const std::string& key) const;
  std::string get_string_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  int get_int(const std::string& key) const;
  int get_int_or(const std::string& key, int fallback) const;
  unsigned long long get_u64_or(const std::string& key, unsigned long long fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  std::vector<double> get_double_list_or(const std::string& key,
                                         std::vector<double> fallback) const;
  std::vector<int> get_int_list_or(const std::string& key,
                                   std::vector<int> fallback) const;
  // "5:0.99,20:0.999" -> ordered (epoch, value) pairs.
  std::vector<std::pair<int, double>> get_schedule_or(
      const std::string& key, std::vector<std::pair<int, double>> fallback) const;

  void set(const std::string& key, const std::string& value);
  // Rejects keys outside `allowed`, naming the file and the offending key.
  void require_known(const std::set<std::string>& allowed) const;

  const std::map<std::string, std::string>& items() const { return items_; }

 private:
  std::map<std::string, std::string> items_;
  std::string origin_ = "<memory>";
};

// Whole-file helpers. read_text_file throws UsageError when the file cannot
// be opened (missing input is an invocation problem, not a data problem).
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace certainnet
