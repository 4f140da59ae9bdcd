#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "poft/data.hpp"
#include "poft/model.hpp"
#include "poft/objectives.hpp"

namespace poft {

// Persisted length-normalized log-likelihood of one (model, example).
struct ScoreEntry {
  std::string model_id;
  std::string example_id;
  std::string content_hash;  // of the example at scoring time (staleness detection)
  bool oversize = false;     // example exceeded the model's max_seq; excluded from training
  double logp = 0.0;
  int token_count = 0;
  double r = 0.0;
};

struct ScoreModelMeta {
  std::string checkpoint_hash;
  std::string tokenizer_hash;
};

// Line-delimited cache: header line carries metadata JSON, then one
// tab-separated record per (model_id, example_id). External tools may
// inject extra score columns as additional model_ids.
class ScoreCache {
 public:
  bool has_valid(const std::string& model_id, const std::string& example_id,
                 const std::string& content_hash) const;
  const ScoreEntry* find(const std::string& model_id, const std::string& example_id) const;
  void put(ScoreEntry entry);

  std::map<std::string, ScoreModelMeta>& model_meta() { return model_meta_; }
  const std::map<std::string, ScoreModelMeta>& model_meta() const { return model_meta_; }
  bool eos_included() const { return eos_included_; }
  const std::string& created() const { return created_; }
  void set_created(std::string ts) { created_ = std::move(ts); }

  std::size_t size() const { return entries_.size(); }
  const std::map<std::pair<std::string, std::string>, ScoreEntry>& entries() const {
    return entries_;
  }

  std::string serialize() const;
  static ScoreCache deserialize(const std::string& text);
  void save(const std::string& path) const;
  static ScoreCache load(const std::string& path);

 private:
  std::map<std::pair<std::string, std::string>, ScoreEntry> entries_;
  std::map<std::string, ScoreModelMeta> model_meta_;
  bool eos_included_ = true;  // sequence_log_prob always scores the EOS terminator
  std::string created_;
};

struct NamedModel {
  std::string id;
  const TransformerLM* model = nullptr;
};

// Scores every (model, example); resumable — entries whose content hash
// still matches are skipped. Throws if the cache was built from different
// checkpoints or tokenizers.
void score_dataset(std::span<const NamedModel> models, const Corpus& dataset,
                   ScoreCache& cache, std::size_t batch_size = 32);

// Aggregates per example over the requested models. Examples with an
// oversize entry are omitted; a missing entry throws.
std::map<std::string, RewardAggregate> aggregate_scores(const ScoreCache& cache,
                                                        std::span<const std::string> model_ids,
                                                        const Corpus& dataset,
                                                        AggStrategy strategy);

struct Histogram {
  std::vector<double> edges;      // num_bins + 1
  std::vector<double> densities;  // num_bins; integrates to 1
};

Histogram score_histogram(std::span<const double> values, std::size_t num_bins);
std::string histogram_to_csv(const Histogram& h);

// checkpoint/tokenizer fingerprints recorded in cache metadata
ScoreModelMeta model_meta_for(const TransformerLM& model);

}  // namespace poft
