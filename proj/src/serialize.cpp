#include "dsu/serialize.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dsu {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string strip_quotes(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> split_list(const std::string& key,
                                    const std::string& raw) {
  std::string v = trim(raw);
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    fail(ErrorCode::Config, "key '" + key + "' is not a list: " + raw);
  }
  std::string body = v.substr(1, v.size() - 2);
  std::vector<std::string> items;
  std::string cur;
  for (char c : body) {
    if (c == ',') {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  std::string last = trim(cur);
  if (!last.empty()) items.push_back(last);
  for (const auto& it : items) {
    if (it.empty()) {
      fail(ErrorCode::Config, "empty element in list '" + key + "'");
    }
  }
  return items;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

KvFile KvFile::parse(const std::string& text) {
  KvFile f;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::Config,
           "line " + std::to_string(lineno) + " has no '=': " + t);
    }
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (key.empty()) {
      fail(ErrorCode::Config, "empty key on line " + std::to_string(lineno));
    }
    f.set(key, val);
  }
  return f;
}

KvFile KvFile::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string KvFile::serialize() const {
  std::string out;
  for (const auto& k : order_) {
    out += k;
    out += " = ";
    out += values_.at(k);
    out += "\n";
  }
  return out;
}

void KvFile::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out << serialize();
  if (!out) fail(ErrorCode::Io, "failed writing " + path);
}

bool KvFile::has(const std::string& key) const {
  return values_.count(key) != 0;
}

void KvFile::set(const std::string& key, const std::string& raw) {
  if (!values_.count(key)) order_.push_back(key);
  values_[key] = raw;
}

void KvFile::set_string(const std::string& key, const std::string& v) {
  set(key, "\"" + v + "\"");
}

void KvFile::set_int(const std::string& key, int64_t v) {
  set(key, std::to_string(v));
}

void KvFile::set_double(const std::string& key, double v) {
  set(key, format_double(v));
}

void KvFile::set_bool(const std::string& key, bool v) {
  set(key, v ? "true" : "false");
}

void KvFile::set_double_list(const std::string& key,
                             const std::vector<double>& v) {
  std::string s = "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v[i]);
  }
  s += "]";
  set(key, s);
}

void KvFile::set_int_list(const std::string& key,
                          const std::vector<int64_t>& v) {
  std::string s = "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(v[i]);
  }
  s += "]";
  set(key, s);
}

void KvFile::set_string_list(const std::string& key,
                             const std::vector<std::string>& v) {
  std::string s = "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += "\"" + v[i] + "\"";
  }
  s += "]";
  set(key, s);
}

const std::string& KvFile::require(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    fail(ErrorCode::Config, "missing key '" + key + "'");
  }
  return it->second;
}

std::string KvFile::raw(const std::string& key) const { return require(key); }

std::string KvFile::get_string(const std::string& key) const {
  return strip_quotes(require(key));
}

std::string KvFile::get_string(const std::string& key,
                               const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}

namespace {

int64_t parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  long long r = std::strtoll(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0') {
    fail(ErrorCode::Config, "key '" + key + "' is not an integer: " + v);
  }
  return static_cast<int64_t>(r);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  double r = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') {
    fail(ErrorCode::Config, "key '" + key + "' is not a number: " + v);
  }
  return r;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorCode::Config, "key '" + key + "' is not a bool: " + v);
}

}  // namespace

int64_t KvFile::get_int(const std::string& key) const {
  return parse_int(key, require(key));
}

int64_t KvFile::get_int(const std::string& key, int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KvFile::get_double(const std::string& key) const {
  return parse_double(key, require(key));
}

double KvFile::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool KvFile::get_bool(const std::string& key) const {
  return parse_bool(key, require(key));
}

bool KvFile::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

std::vector<double> KvFile::get_double_list(const std::string& key) const {
  std::vector<double> r;
  for (const auto& it : split_list(key, require(key))) {
    r.push_back(parse_double(key, it));
  }
  return r;
}

std::vector<int64_t> KvFile::get_int_list(const std::string& key) const {
  std::vector<int64_t> r;
  for (const auto& it : split_list(key, require(key))) {
    r.push_back(parse_int(key, it));
  }
  return r;
}

std::vector<std::string> KvFile::get_string_list(const std::string& key) const {
  std::vector<std::string> r;
  for (const auto& it : split_list(key, require(key))) {
    r.push_back(strip_quotes(it));
  }
  return r;
}

void KvFile::erase(const std::string& key) {
  if (!values_.count(key)) return;
  values_.erase(key);
  for (auto it = order_.begin(); it != order_.end(); ++it) {
    if (*it == key) {
      order_.erase(it);
      break;
    }
  }
}

// ---- .tnsr ----------------------------------------------------------------

void write_tnsr(const std::string& path, const Tensor& t, bool as_f32) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out << "dtype: \"" << (as_f32 ? "f32" : "f64") << "\"\n";
  out << "shape: [";
  for (size_t i = 0; i < t.shape().size(); ++i) {
    if (i) out << ", ";
    out << t.shape()[i];
  }
  out << "]\n";
  out << "byte_order: \"little\"\n\n";
  if (as_f32) {
    std::vector<float> buf(t.data().begin(), t.data().end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) fail(ErrorCode::Io, "failed writing " + path);
}

Tensor read_tnsr(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::string header_text;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) break;
    size_t colon = line.find(':');
    if (colon == std::string::npos) {
      fail(ErrorCode::Io, path + ": malformed header line: " + line);
    }
    header_text += trim(line.substr(0, colon)) + " = " +
                   trim(line.substr(colon + 1)) + "\n";
  }
  KvFile header = KvFile::parse(header_text);
  std::string dtype = header.get_string("dtype");
  if (dtype != "f32" && dtype != "f64") {
    fail(ErrorCode::Io, path + ": unsupported dtype " + dtype);
  }
  if (header.get_string("byte_order") != "little") {
    fail(ErrorCode::Io, path + ": unsupported byte order");
  }
  Shape shape = header.get_int_list("shape");
  int64_t n = numel(shape);
  std::vector<double> values(static_cast<size_t>(n));
  if (dtype == "f32") {
    std::vector<float> buf(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
      fail(ErrorCode::Io, path + ": payload shorter than header shape");
    }
    std::copy(buf.begin(), buf.end(), values.begin());
  } else {
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (in.gcount() !=
        static_cast<std::streamsize>(values.size() * sizeof(double))) {
      fail(ErrorCode::Io, path + ": payload shorter than header shape");
    }
  }
  return Tensor(shape, std::move(values));
}

}  // namespace dsu
