#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace poft {

// FNV-1a, used for content hashes / example ids. Not cryptographic.
std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);

std::uint64_t hash_file(const std::string& path);

// Shortest round-trippable decimal text for a double. All persisted
// numeric output goes through this so reruns are byte-identical.
std::string format_double(double v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Derives an independent stream seed; used to give each (seed, purpose)
// pair its own mt19937_64 without correlated streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

using Rng = std::mt19937_64;

// Uniform helpers with fully pinned-down bit behavior (the std
// distributions are implementation-defined).
double rand_u01(Rng& rng);
std::size_t rand_index(Rng& rng, std::size_t n);

// Key-value config file with [section] headers. Values keep their raw
// text; typed getters parse on access.
class ConfigFile {
 public:
  ConfigFile() = default;
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  void set(const std::string& key, const std::string& value);

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  // keys are "section.name"; entries before any section have no prefix
  std::map<std::string, std::string> entries_;
};

}  // namespace poft
