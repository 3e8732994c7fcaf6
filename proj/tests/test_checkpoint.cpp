#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "medkg/checkpoint.hpp"
#include "medkg/common.hpp"

using namespace medkg;

namespace {

std::string fresh_path(const char* stem) {
  auto dir = std::filesystem::temp_directory_path() / "medkg_ckpt_tests";
  std::filesystem::create_directories(dir);
  auto p = dir / stem;
  std::filesystem::remove(p);
  std::filesystem::remove(checkpoint_index_path(p.string()));
  return p.string();
}

ag::ParamStore make_store(unsigned seed, int rows_b = 3) {
  ag::ParamStore store;
  std::mt19937_64 rng(seed);
  store.create("alpha", ag::glorot_uniform(4, 2, rng));
  store.create("beta.w", ag::glorot_uniform(rows_b, 5, rng));
  store.create("gamma", ag::glorot_uniform(1, 7, rng));
  return store;
}

}  // namespace

TEST_CASE("checkpoint: round trip restores every value bit-exactly") {
  auto path = fresh_path("roundtrip.bin");
  ag::ParamStore a = make_store(1);
  save_checkpoint(a, path);

  ag::ParamStore b = make_store(2);  // same shapes, different values
  REQUIRE((a.at("alpha").value() - b.at("alpha").value()).cwiseAbs().maxCoeff() > 0.0);
  load_checkpoint(b, path);
  for (const char* name : {"alpha", "beta.w", "gamma"})
    CHECK((a.at(name).value() - b.at(name).value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoint: text index lists every parameter with its shape") {
  auto path = fresh_path("indexed.bin");
  ag::ParamStore a = make_store(3);
  save_checkpoint(a, path);
  std::ifstream idx(checkpoint_index_path(path));
  REQUIRE(idx.good());
  std::string text((std::istreambuf_iterator<char>(idx)), std::istreambuf_iterator<char>());
  CHECK(text.find("alpha\t4\t2\n") != std::string::npos);
  CHECK(text.find("beta.w\t3\t5\n") != std::string::npos);
  CHECK(text.find("gamma\t1\t7\n") != std::string::npos);
}

TEST_CASE("checkpoint: shape mismatch and missing parameters are rejected") {
  auto path = fresh_path("mismatch.bin");
  save_checkpoint(make_store(4), path);

  ag::ParamStore wrong_shape = make_store(5, /*rows_b=*/6);
  CHECK_THROWS_AS(load_checkpoint(wrong_shape, path), ConfigError);

  ag::ParamStore extra;
  std::mt19937_64 rng(6);
  extra.create("alpha", ag::glorot_uniform(4, 2, rng));
  CHECK_THROWS_AS(load_checkpoint(extra, path), ConfigError);  // count mismatch

  ag::ParamStore renamed;
  renamed.create("alpha", ag::glorot_uniform(4, 2, rng));
  renamed.create("beta.w", ag::glorot_uniform(3, 5, rng));
  renamed.create("delta", ag::glorot_uniform(1, 7, rng));
  CHECK_THROWS_AS(load_checkpoint(renamed, path), ConfigError);  // missing name
}

TEST_CASE("checkpoint: truncated or missing files are data errors") {
  auto path = fresh_path("truncated.bin");
  ag::ParamStore a = make_store(7);
  save_checkpoint(a, path);
  auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 5);
  ag::ParamStore b = make_store(8);
  CHECK_THROWS_AS(load_checkpoint(b, path), DataError);
  CHECK_THROWS_AS(load_checkpoint(b, fresh_path("absent.bin")), DataError);
}
