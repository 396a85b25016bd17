#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ccau {

// Sectioned key=value config ([data], [synth], [model], [loss], [train],
// [eval]). Values are stored as strings and converted on access; lists are
// comma separated. Snapshots are written with sorted sections/keys so a
// resolved config is byte-stable.
class Config {
 public:
  Config() = default;

  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text);

  void set(const std::string& section, const std::string& key, const std::string& value);
  bool has(const std::string& section, const std::string& key) const;

  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const;
  int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& section, const std::string& key,
                                    const std::vector<std::string>& fallback) const;

  // "section.key=value" override, as accepted on the command line
  void apply_override(const std::string& spec);

  std::string to_string() const;
  void write_file(const std::string& path) const;

 private:
  std::optional<std::string> find(const std::string& section, const std::string& key) const;
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace ccau
