#pragma once

// Flat key-value run configuration: `key = value` lines with `#` comments,
// optional `[section]` headers that prefix the keys that follow
// (`[train]` + `lr = 1e-3` reads as `train.lr`). Command-line flags override
// file values by writing into the same map afterwards.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace medkg {

class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig from_file(const std::string& path);
  static KvConfig from_text(const std::string& text, const std::string& origin);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;  // true/false/1/0/yes/no
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                          const std::vector<std::uint64_t>& fallback) const;

  // Keys actually present, sorted; `canonical()` renders them one per line
  // (`key = value`), which is the form hashed into manifests.
  const std::map<std::string, std::string>& entries() const { return values_; }
  std::string canonical() const;

  // Throws ConfigError naming the first key outside the allowed set.
  void require_known(const std::vector<std::string>& known_keys) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace medkg
