#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "poft/common.hpp"
#include "poft/model.hpp"

namespace poft {

enum class Label { clean, noise, unknown };

std::string to_string(Label l);
Label label_from_string(std::string_view s);

struct Example {
  std::string id;  // content hash of instruction + separator + response
  std::string instruction;
  std::string response;
  Label label = Label::unknown;
  std::map<std::string, double> external_scores;

  static std::string compute_id(const std::string& instruction, const std::string& response);
  void rehash() { id = compute_id(instruction, response); }
};

struct Corpus {
  std::vector<Example> examples;
  std::string provenance;  // JSON record of how the corpus was made

  std::size_t size() const { return examples.size(); }
};

// JSONL: one record per line with fields id, instruction, response, label,
// external_scores. Provenance, when present, travels in <path>.meta.json.
Corpus load_jsonl(const std::string& path);
void save_jsonl(const Corpus& corpus, const std::string& path);

struct TaskMix {
  double copy = 1.0;
  double reverse = 1.0;
  double addition = 1.0;
  double sorting = 1.0;
};

// Templated tasks with exactly computable answers; all labeled clean.
Corpus generate_synthetic_corpus(const TaskMix& mix, std::size_t size, std::uint64_t seed);

struct CharNoiseRates {
  double insert = 0.05;
  double remove = 0.05;
  double substitute = 0.05;
};

// Mismatched-response pairing plus character-level corruption. A
// mismatched example never keeps its own original response.
Corpus make_noise(const Corpus& corpus, std::size_t n_noise, double mismatch_fraction,
                  const CharNoiseRates& rates, std::uint64_t seed);

Corpus blend(const Corpus& clean, const Corpus& noise, std::uint64_t shuffle_seed);

// keeps the top ceil(keep_fraction * N) by score, descending; ties broken
// by ascending id
Corpus filter_by_percentile(const Corpus& corpus,
                            const std::map<std::string, double>& scores, double keep_fraction);

struct SamplingConfig {
  double temperature = 0.0;
  int max_tokens = 64;
  std::uint64_t seed = 0;
};

Corpus regenerate_responses(const TransformerLM& teacher, const Corpus& corpus,
                            const SamplingConfig& sampling);

// chosen/rejected pairs for the DPO stage
struct PreferencePair {
  std::string id;
  std::string instruction;
  std::string chosen;
  std::string rejected;
};

std::vector<PreferencePair> load_pairs_jsonl(const std::string& path);
void save_pairs_jsonl(std::span<const PreferencePair> pairs, const std::string& path);

}  // namespace poft
