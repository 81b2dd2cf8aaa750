#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "dsu/rng.hpp"
#include "dsu/serialize.hpp"
#include "dsu/tensor.hpp"

using namespace dsu;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("dsu_test_" + name);
}

}  // namespace

TEST_CASE("kv round trips every supported type") {
  KvFile kv;
  kv.set_string("run.name", "smoke");
  kv.set_int("train.epochs", 40);
  kv.set_double("train.lr", 0.05);
  kv.set_bool("dsu.enabled", true);
  kv.set_bool("adapt.enabled", false);
  kv.set_double_list("model.scales", {1.0, -2.5, 3.25e-9});
  kv.set_int_list("dsu.positions", {0, 1, 2});
  kv.set_string_list("data.domains", {"d0", "d1", "target"});

  KvFile back = KvFile::parse(kv.serialize());
  CHECK(back.get_string("run.name") == "smoke");
  CHECK(back.get_int("train.epochs") == 40);
  CHECK(back.get_double("train.lr") == 0.05);
  CHECK(back.get_bool("dsu.enabled"));
  CHECK_FALSE(back.get_bool("adapt.enabled"));
  CHECK(back.get_double_list("model.scales") ==
        std::vector<double>{1.0, -2.5, 3.25e-9});
  CHECK(back.get_int_list("dsu.positions") == std::vector<int64_t>{0, 1, 2});
  CHECK(back.get_string_list("data.domains") ==
        std::vector<std::string>{"d0", "d1", "target"});
}

TEST_CASE("doubles survive the text format bit for bit") {
  RngStream rng(7);
  KvFile kv;
  std::vector<double> vals;
  for (int i = 0; i < 64; ++i) vals.push_back(rng.normal() * 1e3);
  vals.push_back(1.0 / 3.0);
  vals.push_back(1e-300);
  vals.push_back(-0.0);
  kv.set_double_list("vals", vals);
  KvFile back = KvFile::parse(kv.serialize());
  std::vector<double> got = back.get_double_list("vals");
  REQUIRE(got.size() == vals.size());
  for (size_t i = 0; i < vals.size(); ++i) {
    CHECK(std::memcmp(&got[i], &vals[i], sizeof(double)) == 0);
  }
}

TEST_CASE("serialization preserves insertion order") {
  KvFile kv;
  kv.set_int("z.last", 1);
  kv.set_int("a.first", 2);
  kv.set_int("m.middle", 3);
  std::string text = kv.serialize();
  CHECK(text.find("z.last") < text.find("a.first"));
  CHECK(text.find("a.first") < text.find("m.middle"));
}

TEST_CASE("comments and blank lines are ignored; defaults apply") {
  KvFile kv = KvFile::parse(
      "# header comment\n"
      "\n"
      "a.b = 3\n"
      "  # indented comment\n"
      "name = \"hello world\"\n");
  CHECK(kv.get_int("a.b") == 3);
  CHECK(kv.get_string("name") == "hello world");
  CHECK(kv.get_int("missing", 42) == 42);
  CHECK(kv.get_double("missing", 1.5) == 1.5);
  CHECK_FALSE(kv.has("missing"));
}

TEST_CASE("malformed input produces config errors") {
  auto expect_config = [](const std::string& text) {
    try {
      (void)KvFile::parse(text);
    } catch (const Error& e) {
      return e.code() == ErrorCode::Config;
    }
    return false;
  };
  CHECK(expect_config("no equals sign here\n"));
  CHECK(expect_config("= value without key\n"));

  KvFile kv = KvFile::parse("x = not_a_number\n");
  try {
    (void)kv.get_int("x");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
  try {
    (void)kv.get_int("absent");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
}

TEST_CASE("kv file save and load") {
  fs::path p = temp_file("roundtrip.kv");
  KvFile kv;
  kv.set_double("pi", 3.14159265358979);
  kv.save(p.string());
  KvFile back = KvFile::load(p.string());
  CHECK(back.get_double("pi") == 3.14159265358979);
  fs::remove(p);

  try {
    (void)KvFile::load((fs::temp_directory_path() / "nope_missing.kv").string());
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Io);
  }
}

TEST_CASE("tensor files round trip bitwise in f64") {
  RngStream rng(11);
  Tensor t = Tensor::random_normal({3, 4, 2}, rng);
  fs::path p = temp_file("t.tnsr");
  write_tnsr(p.string(), t);
  Tensor back = read_tnsr(p.string());
  REQUIRE(back.shape() == t.shape());
  for (int64_t i = 0; i < t.size(); ++i) {
    double a = t[i], b = back[i];
    CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
  }
  fs::remove(p);
}

TEST_CASE("tensor files can be stored in f32") {
  Tensor t({2, 2}, {1.0, 0.5, -2.25, 1e-3});
  fs::path p = temp_file("t32.tnsr");
  write_tnsr(p.string(), t, true);
  Tensor back = read_tnsr(p.string());
  REQUIRE(back.shape() == t.shape());
  for (int64_t i = 0; i < t.size(); ++i) {
    CHECK(back[i] == doctest::Approx(t[i]).epsilon(1e-6));
  }
  fs::remove(p);
}

TEST_CASE("truncated tensor payload is an io error") {
  Tensor t({4}, {1, 2, 3, 4});
  fs::path p = temp_file("trunc.tnsr");
  write_tnsr(p.string(), t);
  // Chop the last 8 bytes off the payload.
  std::error_code ec;
  fs::resize_file(p, fs::file_size(p) - 8, ec);
  REQUIRE_FALSE(ec);
  try {
    (void)read_tnsr(p.string());
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Io);
  }
  fs::remove(p);
}
