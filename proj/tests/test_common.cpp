#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "poft/common.hpp"

using namespace poft;

TEST_CASE("fnv1a64 matches the published test vectors") {
  // reference values from the FNV specification's 64-bit 1a vector table
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("hex64 is fixed-width lowercase") {
  CHECK(hex64(0) == "0000000000000000");
  CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
  CHECK(hex64(~0ULL) == "ffffffffffffffff");
}

TEST_CASE("format_double round-trips doubles exactly") {
  for (double v : {0.0, -1.5, 3.141592653589793, 1e-300, -2.2250738585072014e-308, 12345.6789}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("mix_seed separates streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL})
    for (std::uint64_t stream : {0ULL, 1ULL, 2ULL, 1000ULL}) seen.insert(mix_seed(seed, stream));
  CHECK(seen.size() == 12);
}

TEST_CASE("rand_u01 stays in [0,1)") {
  Rng rng(42);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rand_u01(rng);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  CHECK(lo < 0.01);  // the generator actually covers the range
  CHECK(hi > 0.99);
}

TEST_CASE("rand_index is unbiased at small n") {
  Rng rng(7);
  std::vector<int> counts(3, 0);
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) ++counts[rand_index(rng, 3)];
  for (int c : counts) CHECK(std::abs(c - draws / 3) < draws / 30);
}

TEST_CASE("config files parse sections, comments, and types") {
  ConfigFile cfg = ConfigFile::parse(
      "# comment\n"
      "top = 1\n"
      "[run]\n"
      "objective = poft\n"
      "epochs = 10\n"
      "lr = 3e-4\n"
      "flag = true\n");
  CHECK(cfg.get_int("top", 0) == 1);
  CHECK(cfg.get_str("run.objective", "") == "poft");
  CHECK(cfg.get_int("run.epochs", 0) == 10);
  CHECK(cfg.get_double("run.lr", 0.0) == 3e-4);
  CHECK(cfg.get_bool("run.flag", false));
  CHECK(cfg.get_str("run.missing", "fallback") == "fallback");
  CHECK_FALSE(cfg.has("run.missing"));
  cfg.set("run.missing", "x");
  CHECK(cfg.get_str("run.missing", "") == "x");
}

TEST_CASE("text file round trip and hashing") {
  const std::string path = (std::filesystem::temp_directory_path() / "poft_common_rt.txt").string();
  const std::string content = "line1\nline2\n\xE2\x82\xAC\n";
  write_text_file(path, content);
  CHECK(read_text_file(path) == content);
  CHECK(hash_file(path) == fnv1a64(content));
  std::remove(path.c_str());
}
