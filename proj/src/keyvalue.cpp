#include "keyvalue.hpp"

#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "safl/errors.hpp"

namespace safl::detail {

KeyValueFile KeyValueFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& source) {
  KeyValueFile out;
  out.source_ = source;
  std::istringstream in(text);
  CLI::ConfigINI ini;
  std::vector<CLI::ConfigItem> items;
  try {
    items = ini.from_config(in);
  } catch (const CLI::Error& e) {
    throw MalformedFile(source + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") {
      continue;
    }
    std::string key;
    for (const auto& p : item.parents) {
      key += p + ".";
    }
    key += item.name;
    out.values_[key] = item.inputs;
  }
  return out;
}

const std::vector<std::string>& KeyValueFile::values(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw MalformedFile(source_ + ": missing key '" + key + "'");
  }
  return it->second;
}

std::string KeyValueFile::str(const std::string& key) const {
  const auto& v = values(key);
  if (v.size() != 1) {
    throw MalformedFile(source_ + ": key '" + key + "' must hold one value");
  }
  return v.front();
}

double KeyValueFile::number(const std::string& key) const {
  const std::string s = str(key);
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) {
      throw std::invalid_argument(s);
    }
    return v;
  } catch (const std::exception&) {
    throw MalformedFile(source_ + ": key '" + key + "' is not a number: " + s);
  }
}

long long KeyValueFile::integer(const std::string& key) const {
  const std::string s = str(key);
  try {
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) {
      throw std::invalid_argument(s);
    }
    return v;
  } catch (const std::exception&) {
    throw MalformedFile(source_ + ": key '" + key + "' is not an integer: " + s);
  }
}

std::vector<std::string> KeyValueFile::keys_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (auto it = values_.lower_bound(prefix); it != values_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) {
      break;
    }
    out.push_back(it->first);
  }
  return out;
}

}  // namespace safl::detail
