#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsu/error.hpp"
#include "dsu/tensor.hpp"

namespace dsu {

/// Ordered key-value document: one `key = value` per line, `#` comments,
/// dotted keys for nesting, `[a, b, c]` for lists. Used for configs,
/// manifests, checkpoints and reports. Writing is deterministic (insertion
/// order, doubles at full precision), which the byte-identical-report
/// contract relies on.
class KvFile {
 public:
  static KvFile parse(const std::string& text);
  static KvFile load(const std::string& path);

  std::string serialize() const;
  void save(const std::string& path) const;

  bool has(const std::string& key) const;
  const std::vector<std::string>& keys() const { return order_; }

  /// Raw assignment; later set() of an existing key overwrites in place.
  void set(const std::string& key, const std::string& raw);
  void set_string(const std::string& key, const std::string& v);
  void set_int(const std::string& key, int64_t v);
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);
  void set_double_list(const std::string& key, const std::vector<double>& v);
  void set_int_list(const std::string& key, const std::vector<int64_t>& v);
  void set_string_list(const std::string& key,
                       const std::vector<std::string>& v);

  std::string raw(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  int64_t get_int(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<int64_t> get_int_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  void erase(const std::string& key);

 private:
  const std::string& require(const std::string& key) const;
  std::unordered_map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

std::string format_double(double v);

/// Tensor dump: plain-text header (dtype, shape, byte_order) terminated by a
/// blank line, then raw little-endian values. Extension `.tnsr`.
void write_tnsr(const std::string& path, const Tensor& t, bool as_f32 = false);
Tensor read_tnsr(const std::string& path);

}  // namespace dsu
