#include "ccau/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ccau {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string strip_quotes(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

Config Config::parse_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::runtime_error("config: bad section header at line " + std::to_string(lineno));
      section = trim(t.substr(1, t.size() - 2));
      cfg.sections_[section];
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key=value at line " + std::to_string(lineno));
    std::string key = trim(t.substr(0, eq));
    std::string val = strip_quotes(trim(t.substr(eq + 1)));
    if (key.empty())
      throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
    cfg.sections_[section][key] = val;
  }
  return cfg;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  sections_[section][key] = value;
}

bool Config::has(const std::string& section, const std::string& key) const {
  return find(section, key).has_value();
}

std::optional<std::string> Config::find(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

std::string Config::get_str(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  auto v = find(section, key);
  return v ? *v : fallback;
}

int64_t Config::get_int(const std::string& section, const std::string& key,
                        int64_t fallback) const {
  auto v = find(section, key);
  if (!v) return fallback;
  try {
    return std::stoll(*v);
  } catch (...) {
    throw std::runtime_error("config: [" + section + "] " + key + " is not an integer: " + *v);
  }
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
  auto v = find(section, key);
  if (!v) return fallback;
  try {
    return std::stod(*v);
  } catch (...) {
    throw std::runtime_error("config: [" + section + "] " + key + " is not a number: " + *v);
  }
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  auto v = find(section, key);
  if (!v) return fallback;
  std::string s = *v;
  std::transform(s.begin(), s.end(), s.begin(), ::tolower);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::runtime_error("config: [" + section + "] " + key + " is not a bool: " + *v);
}

std::vector<std::string> Config::get_list(const std::string& section, const std::string& key,
                                          const std::vector<std::string>& fallback) const {
  auto v = find(section, key);
  if (!v) return fallback;
  std::vector<std::string> out;
  std::istringstream ss(*v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::string t = trim(tok);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

void Config::apply_override(const std::string& spec) {
  size_t eq = spec.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("config override must be section.key=value: " + spec);
  std::string path = trim(spec.substr(0, eq));
  std::string value = strip_quotes(trim(spec.substr(eq + 1)));
  size_t dot = path.find('.');
  if (dot == std::string::npos)
    throw std::runtime_error("config override must be section.key=value: " + spec);
  set(path.substr(0, dot), path.substr(dot + 1), value);
}

std::string Config::to_string() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& [sec, kv] : sections_) {
    if (!first) os << "\n";
    first = false;
    os << "[" << sec << "]\n";
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  }
  return os.str();
}

void Config::write_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  out << to_string();
}

}  // namespace ccau
