#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "csvt/checkpoint.hpp"
#include "csvt/io.hpp"
#include "csvt/random.hpp"
#include "testutil.hpp"

using namespace csvt;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(5);
  Tensor<float> a = testutil::random_tensor<float>({3, 4}, rng);
  Tensor<float> b = testutil::random_tensor<float>({7}, rng);
  Tensor<float> c = testutil::random_tensor<float>({2, 2, 2}, rng);
  const std::string p1 = temp_path("csvt_ckpt_a.ckpt");
  const std::string p2 = temp_path("csvt_ckpt_b.ckpt");

  save_checkpoint<float>(p1, {{"w.a", &a}, {"w.b", &b}, {"w.c", &c}});

  Tensor<float> a2({3, 4}), b2({7}), c2({2, 2, 2});
  load_checkpoint_into<float>(p1, {{"w.a", &a2}, {"w.b", &b2}, {"w.c", &c2}}, true);
  for (size_t i = 0; i < a.numel(); ++i) CHECK(a2[i] == a[i]);
  for (size_t i = 0; i < b.numel(); ++i) CHECK(b2[i] == b[i]);
  for (size_t i = 0; i < c.numel(); ++i) CHECK(c2[i] == c[i]);

  save_checkpoint<float>(p2, {{"w.a", &a2}, {"w.b", &b2}, {"w.c", &c2}});
  CHECK(slurp(p1) == slurp(p2));  // byte-for-byte

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint container layout") {
  Tensor<float> a({2, 2}, {1.f, 2.f, 3.f, 4.f});
  Tensor<float> b({3}, {5.f, 6.f, 7.f});
  const std::string p = temp_path("csvt_ckpt_layout.ckpt");
  save_checkpoint<float>(p, {{"first", &a}, {"second", &b}});
  const std::string bytes = slurp(p);
  CHECK(bytes.rfind("CSVT1\n", 0) == 0);
  CHECK(bytes.find("first f32 2x2 0 16\n") != std::string::npos);
  CHECK(bytes.find("second f32 3 16 12\n") != std::string::npos);
  // payload follows the blank line, little-endian f32, manifest order
  const size_t blank = bytes.find("\n\n");
  REQUIRE(blank != std::string::npos);
  const char* payload = bytes.data() + blank + 2;
  float v;
  std::memcpy(&v, payload, 4);
  CHECK(v == 1.f);
  std::memcpy(&v, payload + 16, 4);
  CHECK(v == 5.f);
  std::remove(p.c_str());
}

TEST_CASE("f64 engine round-trips through the f32 container exactly") {
  // f32 -> f64 is exact, so save(load(x)) reproduces the file bitwise
  Rng rng(9);
  Tensor<double> a = testutil::random_tensor<double>({4, 4}, rng);
  const std::string p1 = temp_path("csvt_ckpt_d1.ckpt");
  const std::string p2 = temp_path("csvt_ckpt_d2.ckpt");
  save_checkpoint<double>(p1, {{"w", &a}});
  Tensor<double> a2({4, 4});
  load_checkpoint_into<double>(p1, {{"w", &a2}}, true);
  save_checkpoint<double>(p2, {{"w", &a2}});
  CHECK(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("shape mismatch produces a full diff report") {
  Tensor<float> a({2, 2});
  Tensor<float> b({3});
  const std::string p = temp_path("csvt_ckpt_diff.ckpt");
  save_checkpoint<float>(p, {{"w.a", &a}, {"w.b", &b}});
  Tensor<float> wrong_a({2, 3});
  Tensor<float> wrong_b({4});
  try {
    load_checkpoint_into<float>(p, {{"w.a", &wrong_a}, {"w.b", &wrong_b}}, true);
    FAIL("expected shape-diff error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("w.a") != std::string::npos);
    CHECK(msg.find("w.b") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
  std::remove(p.c_str());
}

TEST_CASE("strict load rejects missing and unexpected names; loose load ignores extras") {
  Tensor<float> a({2});
  Tensor<float> b({2});
  const std::string p = temp_path("csvt_ckpt_names.ckpt");
  save_checkpoint<float>(p, {{"w.a", &a}, {"w.extra", &b}});
  Tensor<float> dst({2});
  CHECK_THROWS_AS((load_checkpoint_into<float>(p, {{"w.a", &dst}, {"w.missing", &dst}}, true)),
                  std::runtime_error);
  // non-strict: matching subset loads fine
  load_checkpoint_into<float>(p, {{"w.a", &dst}}, false);
  std::remove(p.c_str());
}

TEST_CASE("corrupt containers are rejected") {
  const std::string p = temp_path("csvt_ckpt_corrupt.ckpt");
  write_text_atomic(p, "NOTMAGIC\nfoo f32 2 0 8\n\nxxxxxxxx");
  CHECK_THROWS_AS((void)load_checkpoint_blobs(p), std::runtime_error);
  write_text_atomic(p, "CSVT1\nfoo f32 2 0 999\n\nxxxxxxxx");
  CHECK_THROWS_AS((void)load_checkpoint_blobs(p), std::runtime_error);
  std::remove(p.c_str());
}
