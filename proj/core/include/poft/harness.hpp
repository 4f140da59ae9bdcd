#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poft/common.hpp"
#include "poft/data.hpp"
#include "poft/model.hpp"
#include "poft/objectives.hpp"
#include "poft/scores.hpp"

namespace poft {

struct OptimizerConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
};

enum class ScheduleShape { cosine, linear };

struct ScheduleConfig {
  double warmup_fraction = 0.1;
  ScheduleShape shape = ScheduleShape::cosine;
};

// learning rate at step t of total_steps: linear warmup then decay to 0
double schedule_lr(const OptimizerConfig& opt, const ScheduleConfig& sched, std::size_t step,
                   std::size_t total_steps);

struct RunConfig {
  std::string objective = "ce";  // ce | poft | bi_poft | dpo
  std::string strategy = "avg";
  ModelConfig model{.vocab_size = 0, .dim = 128, .n_layers = 2, .n_heads = 4,
                    .max_seq = 128, .init_std = 0.02};
  std::uint64_t seed = 1;

  std::string train_data;  // JSONL corpus; for dpo, a chosen/rejected pairs file
  std::string eval_data;
  std::string tokenizer_file;  // empty = byte-level
  std::string score_cache;
  std::vector<std::string> reference_ids;

  OptimizerConfig opt;
  ScheduleConfig sched;
  int epochs = 5;
  int batch_size = 32;
  int eval_every = 1;
  std::string out_dir;

  double dpo_beta = 0.1;
  std::string dpo_reference;  // model manifest for the frozen DPO reference
  std::string init_from;      // optional model manifest to start from

  void validate() const;
  static RunConfig from_config(const ConfigFile& file);
  void apply_overrides(const ConfigFile& file);
  std::string to_config_text() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double mean_tau = 0.0;
  std::optional<double> mean_tau_clean;
  std::optional<double> mean_tau_noise;
  std::optional<double> eval_nll;
  std::optional<double> exact_match;
};

struct RunMetrics {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;

  std::string to_csv() const;
  static RunMetrics from_csv(const std::string& text);
};

struct EvalResult {
  double nll_per_token = 0.0;
  double exact_match = 0.0;
};

// eval corpus must be disjoint from the training corpus (checked by id)
EvalResult evaluate(const TransformerLM& model, const Corpus& eval_corpus,
                    const Corpus* train_corpus);

// Full training run: writes metrics.csv, timing.csv, run.log, per-epoch and
// final checkpoints, and a provenance manifest into cfg.out_dir.
RunMetrics train_run(const RunConfig& cfg);

// Named experiment presets (baselines, noise robustness, filtering and
// strategy ablations). Returns the report directory. Overrides use the same
// keys as RunConfig files plus a [preset] section (seeds, epochs, sizes,
// rates).
std::string run_experiment(const std::string& preset_name, const std::string& workspace,
                           const ConfigFile& overrides);

std::vector<std::string> experiment_preset_names();

// Per-arm summary: last epoch plus mean/std across epochs >= 2 (epoch 1 is
// excluded as unstable; single-epoch runs leave std empty).
void emit_report(std::span<const std::string> run_dirs, const std::string& out_csv);

// Shared asset bundle for presets: clean synthetic train/eval corpora and
// three frozen reference models (different seeds and tokenizer kinds),
// built once per workspace and reused.
struct PresetAssets {
  std::string clean_train;  // jsonl paths
  std::string clean_eval;
  std::vector<std::string> reference_manifests;
  std::vector<std::string> reference_ids;
};
PresetAssets ensure_preset_assets(const std::string& workspace, const ConfigFile& overrides);

}  // namespace poft
