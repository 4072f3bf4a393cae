#pragma once

// Sectioned key=value files (`[section]` headers, `#` comments), parsed with
// CLI11's INI reader.

#include <map>
#include <string>
#include <vector>

namespace safl::detail {

class KeyValueFile {
 public:
  static KeyValueFile load(const std::string& path);
  static KeyValueFile parse(const std::string& text, const std::string& source);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  /// Keys are `section.name`; keys outside any section are bare names.
  const std::vector<std::string>& values(const std::string& key) const;
  std::string str(const std::string& key) const;
  double number(const std::string& key) const;
  long long integer(const std::string& key) const;
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

 private:
  std::string source_;
  std::map<std::string, std::vector<std::string>> values_;
};

}  // namespace safl::detail
