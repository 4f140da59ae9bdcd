#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "poft/harness.hpp"

namespace poft {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- preset knobs (overridable via the [preset] config section) ----

struct PresetKnobs {
  std::size_t train_size = 256;
  std::size_t eval_size = 48;
  std::uint64_t data_seed = 7;
  int ref_epochs = 12;
  int ref_dim = 48;
  int ref_max_seq = 96;
  int epochs = 5;
  int noise_epochs = 10;
  std::vector<std::uint64_t> seeds{1};
  double noise_fraction = 0.3;
  double mismatch_fraction = 1.0;
  double char_rate = 0.05;
  std::vector<double> keep_fractions{0.4, 1.0};
  int model_dim = 48;
  int model_max_seq = 96;
  int batch_size = 16;
  double lr = 1e-3;  // tiny models train well above the full-scale default
  std::vector<double> task_weights{1.0, 1.0, 1.0, 1.0};  // copy, reverse, addition, sorting
};

std::vector<std::uint64_t> parse_u64_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::istringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ','))
    if (!cell.empty()) out.push_back(std::stoull(cell));
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::istringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ','))
    if (!cell.empty()) out.push_back(std::stod(cell));
  return out;
}

PresetKnobs knobs_from(const ConfigFile& o) {
  PresetKnobs k;
  k.train_size = static_cast<std::size_t>(
      o.get_int("preset.train_size", static_cast<std::int64_t>(k.train_size)));
  k.eval_size = static_cast<std::size_t>(
      o.get_int("preset.eval_size", static_cast<std::int64_t>(k.eval_size)));
  k.data_seed = static_cast<std::uint64_t>(
      o.get_int("preset.data_seed", static_cast<std::int64_t>(k.data_seed)));
  k.ref_epochs = static_cast<int>(o.get_int("preset.ref_epochs", k.ref_epochs));
  k.ref_dim = static_cast<int>(o.get_int("preset.ref_dim", k.ref_dim));
  k.ref_max_seq = static_cast<int>(o.get_int("preset.ref_max_seq", k.ref_max_seq));
  k.epochs = static_cast<int>(o.get_int("preset.epochs", k.epochs));
  k.noise_epochs = static_cast<int>(o.get_int("preset.noise_epochs", k.noise_epochs));
  if (o.has("preset.seeds")) k.seeds = parse_u64_list(o.get_str("preset.seeds", ""));
  k.noise_fraction = o.get_double("preset.noise_fraction", k.noise_fraction);
  k.mismatch_fraction = o.get_double("preset.mismatch_fraction", k.mismatch_fraction);
  k.char_rate = o.get_double("preset.char_rate", k.char_rate);
  if (o.has("preset.keep_fractions"))
    k.keep_fractions = parse_double_list(o.get_str("preset.keep_fractions", ""));
  k.model_dim = static_cast<int>(o.get_int("preset.model_dim", k.model_dim));
  k.model_max_seq = static_cast<int>(o.get_int("preset.model_max_seq", k.model_max_seq));
  k.batch_size = static_cast<int>(o.get_int("preset.batch_size", k.batch_size));
  k.lr = o.get_double("preset.lr", k.lr);
  if (o.has("preset.task_weights")) {
    k.task_weights = parse_double_list(o.get_str("preset.task_weights", ""));
    if (k.task_weights.size() != 4)
      throw std::invalid_argument("preset.task_weights needs four comma-separated weights");
  }
  return k;
}

RunConfig base_run_config(const PresetKnobs& k, const ConfigFile& overrides) {
  RunConfig cfg;
  cfg.model.dim = k.model_dim;
  cfg.model.max_seq = k.model_max_seq;
  cfg.batch_size = k.batch_size;
  cfg.epochs = k.epochs;
  cfg.opt.lr = k.lr;
  cfg.apply_overrides(overrides);  // [run]/[model]/[optimizer]/... still win
  cfg.out_dir.clear();
  cfg.train_data.clear();
  cfg.eval_data.clear();
  return cfg;
}

// ---- shared assets ----

std::string asset_tokenizer_path(const fs::path& assets, const std::string& name) {
  return (assets / ("tok_" + name + ".txt")).string();
}

Tokenizer build_asset_tokenizer(const std::string& kind, const Corpus& corpus,
                                std::uint64_t seed) {
  std::vector<std::string> texts;
  for (const Example& ex : corpus.examples) {
    texts.push_back(ex.instruction);
    texts.push_back(ex.response);
  }
  if (kind == "byte") return Tokenizer::byte_level();
  if (kind == "char") return Tokenizer::char_level(texts);
  return Tokenizer::train_bpe(texts, 48, seed);
}

}  // namespace

PresetAssets ensure_preset_assets(const std::string& workspace, const ConfigFile& overrides) {
  const PresetKnobs k = knobs_from(overrides);
  const fs::path assets = fs::path(workspace) / "assets";
  fs::create_directories(assets);

  PresetAssets a;
  a.clean_train = (assets / "clean_train.jsonl").string();
  a.clean_eval = (assets / "clean_eval.jsonl").string();

  if (!fs::exists(a.clean_train) || !fs::exists(a.clean_eval)) {
    // one oversized pool split disjointly so eval never overlaps train
    TaskMix mix{.copy = k.task_weights[0],
                .reverse = k.task_weights[1],
                .addition = k.task_weights[2],
                .sorting = k.task_weights[3]};
    Corpus pool = generate_synthetic_corpus(mix, k.train_size + k.eval_size, k.data_seed);
    Corpus train, eval;
    train.provenance = pool.provenance;
    eval.provenance = pool.provenance;
    for (std::size_t i = 0; i < pool.examples.size(); ++i)
      (i < k.train_size ? train : eval).examples.push_back(pool.examples[i]);
    save_jsonl(train, a.clean_train);
    save_jsonl(eval, a.clean_eval);
  }

  const std::vector<std::pair<std::string, std::uint64_t>> ref_specs = {
      {"byte", 101}, {"char", 202}, {"bpe", 303}};
  Corpus train_corpus = load_jsonl(a.clean_train);
  for (const auto& [kind, ref_seed] : ref_specs) {
    const std::string id = "ref_" + kind;
    const fs::path run_dir = assets / id;
    const std::string manifest = (run_dir / "final.manifest.json").string();
    if (!fs::exists(manifest)) {
      const std::string tok_path = asset_tokenizer_path(assets, kind);
      if (!fs::exists(tok_path))
        build_asset_tokenizer(kind, train_corpus, ref_seed).save(tok_path);
      RunConfig cfg;
      cfg.objective = "ce";
      cfg.model.dim = k.ref_dim;
      cfg.model.max_seq = k.ref_max_seq;
      cfg.seed = ref_seed;
      cfg.train_data = a.clean_train;
      cfg.tokenizer_file = tok_path;
      cfg.epochs = k.ref_epochs;
      cfg.batch_size = k.batch_size;
      cfg.opt.lr = k.lr;
      cfg.eval_every = k.ref_epochs;  // skip per-epoch decoding while bootstrapping
      cfg.out_dir = run_dir.string();
      train_run(cfg);
    }
    a.reference_manifests.push_back(manifest);
    a.reference_ids.push_back(id);
  }
  return a;
}

namespace {

// Scores a corpus with the shared reference models, reusing the cache file
// across invocations.
void ensure_scores(const PresetAssets& assets, const Corpus& corpus,
                   const std::string& cache_path) {
  ScoreCache cache;
  if (fs::exists(cache_path)) cache = ScoreCache::load(cache_path);
  std::vector<TransformerLM> models;
  models.reserve(assets.reference_manifests.size());
  for (const std::string& m : assets.reference_manifests)
    models.push_back(TransformerLM::load_bundle(m));
  std::vector<NamedModel> named;
  for (std::size_t i = 0; i < models.size(); ++i) {
    models[i].set_frozen(true);
    named.push_back({assets.reference_ids[i], &models[i]});
  }
  score_dataset(named, corpus, cache);
  cache.save(cache_path);
}

struct PresetContext {
  std::string workspace;
  ConfigFile overrides;
  PresetKnobs knobs;
  PresetAssets assets;
  fs::path dir;  // workspace/<preset>
};

std::string finish(const PresetContext& ctx, const std::vector<std::string>& run_dirs) {
  const std::string out = (ctx.dir / "summary.csv").string();
  emit_report(run_dirs, out);
  return ctx.dir.string();
}

std::string arm_dir(const PresetContext& ctx, const std::string& name, std::uint64_t seed) {
  return (ctx.dir / (name + "_seed" + std::to_string(seed))).string();
}

// blended noisy corpus + reference scores, shared by the noise presets
struct NoisySetup {
  std::string blend_path;
  std::string cache_path;
};

NoisySetup ensure_noisy_blend(const PresetContext& ctx) {
  NoisySetup s;
  s.blend_path = (ctx.dir / "blend.jsonl").string();
  s.cache_path = (ctx.dir / "scores.cache").string();
  Corpus blended;
  if (!fs::exists(s.blend_path)) {
    Corpus clean = load_jsonl(ctx.assets.clean_train);
    const auto n_noise = static_cast<std::size_t>(
        std::llround(ctx.knobs.noise_fraction * static_cast<double>(clean.examples.size())));
    CharNoiseRates rates{ctx.knobs.char_rate, ctx.knobs.char_rate, ctx.knobs.char_rate};
    Corpus noise = make_noise(clean, n_noise, ctx.knobs.mismatch_fraction, rates,
                              mix_seed(ctx.knobs.data_seed, 11));
    blended = blend(clean, noise, mix_seed(ctx.knobs.data_seed, 12));
    save_jsonl(blended, s.blend_path);
  } else {
    blended = load_jsonl(s.blend_path);
  }
  ensure_scores(ctx.assets, blended, s.cache_path);

  // score distributions by label, for the separation analysis
  ScoreCache cache = ScoreCache::load(s.cache_path);
  auto agg = aggregate_scores(cache, ctx.assets.reference_ids, blended, AggStrategy::avg);
  std::vector<double> clean_scores, noise_scores;
  for (const Example& ex : blended.examples) {
    auto it = agg.find(ex.id);
    if (it == agg.end()) continue;
    (ex.label == Label::noise ? noise_scores : clean_scores).push_back(it->second.value);
  }
  if (!clean_scores.empty())
    write_text_file((ctx.dir / "hist_clean.csv").string(),
                    histogram_to_csv(score_histogram(clean_scores, 16)));
  if (!noise_scores.empty())
    write_text_file((ctx.dir / "hist_noise.csv").string(),
                    histogram_to_csv(score_histogram(noise_scores, 16)));
  return s;
}

RunConfig noisy_arm_config(const PresetContext& ctx, const NoisySetup& setup,
                           const std::string& objective, std::uint64_t seed) {
  RunConfig cfg = base_run_config(ctx.knobs, ctx.overrides);
  cfg.objective = objective;
  cfg.seed = seed;
  cfg.train_data = setup.blend_path;
  cfg.eval_data = ctx.assets.clean_eval;
  cfg.epochs = ctx.knobs.noise_epochs;
  if (objective == "poft" || objective == "bi_poft") {
    cfg.score_cache = setup.cache_path;
    cfg.reference_ids = ctx.assets.reference_ids;
  }
  return cfg;
}

// ---- the presets ----

std::string preset_copy_baseline(const PresetContext& ctx) {
  // sanity arm: CE on a copy-only corpus should reach near-perfect recall
  const std::string train_path = (ctx.dir / "copy_train.jsonl").string();
  const std::string eval_path = (ctx.dir / "copy_eval.jsonl").string();
  if (!fs::exists(train_path)) {
    TaskMix mix{.copy = 1.0, .reverse = 0.0, .addition = 0.0, .sorting = 0.0};
    Corpus pool = generate_synthetic_corpus(mix, ctx.knobs.train_size + ctx.knobs.eval_size,
                                            mix_seed(ctx.knobs.data_seed, 21));
    Corpus train, eval;
    train.provenance = pool.provenance;
    eval.provenance = pool.provenance;
    for (std::size_t i = 0; i < pool.examples.size(); ++i)
      (i < ctx.knobs.train_size ? train : eval).examples.push_back(pool.examples[i]);
    save_jsonl(train, train_path);
    save_jsonl(eval, eval_path);
  }
  std::vector<std::string> dirs;
  for (std::uint64_t seed : ctx.knobs.seeds) {
    RunConfig cfg = base_run_config(ctx.knobs, ctx.overrides);
    cfg.objective = "ce";
    cfg.seed = seed;
    cfg.train_data = train_path;
    cfg.eval_data = eval_path;
    cfg.out_dir = arm_dir(ctx, "ce", seed);
    train_run(cfg);
    dirs.push_back(cfg.out_dir);
  }
  return finish(ctx, dirs);
}

std::string preset_noise_robustness(const PresetContext& ctx) {
  NoisySetup setup = ensure_noisy_blend(ctx);
  std::vector<std::string> dirs;
  for (const std::string& objective : {"ce", "poft"}) {
    for (std::uint64_t seed : ctx.knobs.seeds) {
      RunConfig cfg = noisy_arm_config(ctx, setup, objective, seed);
      cfg.out_dir = arm_dir(ctx, objective, seed);
      train_run(cfg);
      dirs.push_back(cfg.out_dir);
    }
  }
  return finish(ctx, dirs);
}

std::string preset_filtering_sweep(const PresetContext& ctx) {
  NoisySetup setup = ensure_noisy_blend(ctx);
  Corpus blended = load_jsonl(setup.blend_path);
  ScoreCache cache = ScoreCache::load(setup.cache_path);
  auto agg = aggregate_scores(cache, ctx.assets.reference_ids, blended, AggStrategy::avg);
  std::map<std::string, double> scores;
  for (const auto& [id, r] : agg) scores[id] = r.value;

  std::vector<std::string> dirs;
  std::ostringstream audit;
  audit << "keep_fraction,kept,total\n";
  for (double keep : ctx.knobs.keep_fractions) {
    Corpus filtered = filter_by_percentile(blended, scores, keep);
    std::ostringstream tag;
    tag << "keep" << std::llround(keep * 100);
    const std::string path = (ctx.dir / (tag.str() + ".jsonl")).string();
    save_jsonl(filtered, path);
    audit << format_double(keep) << "," << filtered.examples.size() << ","
          << blended.examples.size() << "\n";
    for (const std::string& objective : {"ce", "poft"}) {
      for (std::uint64_t seed : ctx.knobs.seeds) {
        RunConfig cfg = noisy_arm_config(ctx, setup, objective, seed);
        cfg.train_data = path;
        cfg.out_dir = arm_dir(ctx, tag.str() + "_" + objective, seed);
        train_run(cfg);
        dirs.push_back(cfg.out_dir);
      }
    }
  }
  write_text_file((ctx.dir / "filter_audit.csv").string(), audit.str());
  return finish(ctx, dirs);
}

std::string preset_strategy_ablation(const PresetContext& ctx) {
  NoisySetup setup = ensure_noisy_blend(ctx);
  std::vector<std::string> dirs;
  for (const std::string& strategy : {"avg", "min", "max"}) {
    for (std::uint64_t seed : ctx.knobs.seeds) {
      RunConfig cfg = noisy_arm_config(ctx, setup, "poft", seed);
      cfg.strategy = strategy;
      cfg.out_dir = arm_dir(ctx, strategy, seed);
      train_run(cfg);
      dirs.push_back(cfg.out_dir);
    }
  }
  return finish(ctx, dirs);
}

std::string preset_reference_choice(const PresetContext& ctx) {
  // each reference alone versus all of them aggregated
  NoisySetup setup = ensure_noisy_blend(ctx);
  std::vector<std::vector<std::string>> choices;
  for (const std::string& id : ctx.assets.reference_ids) choices.push_back({id});
  choices.push_back(ctx.assets.reference_ids);
  std::vector<std::string> dirs;
  for (const auto& ids : choices) {
    const std::string tag = ids.size() == 1 ? ids[0] : std::string("all");
    for (std::uint64_t seed : ctx.knobs.seeds) {
      RunConfig cfg = noisy_arm_config(ctx, setup, "poft", seed);
      cfg.reference_ids = ids;
      cfg.out_dir = arm_dir(ctx, tag, seed);
      train_run(cfg);
      dirs.push_back(cfg.out_dir);
    }
  }
  return finish(ctx, dirs);
}

std::string preset_bi_poft_noise(const PresetContext& ctx) {
  NoisySetup setup = ensure_noisy_blend(ctx);
  std::vector<std::string> dirs;
  for (const std::string& objective : {"poft", "bi_poft"}) {
    for (std::uint64_t seed : ctx.knobs.seeds) {
      RunConfig cfg = noisy_arm_config(ctx, setup, objective, seed);
      cfg.out_dir = arm_dir(ctx, objective, seed);
      train_run(cfg);
      dirs.push_back(cfg.out_dir);
    }
  }
  return finish(ctx, dirs);
}

std::string preset_distillation_compare(const PresetContext& ctx) {
  // CE on original responses versus CE on responses re-written by a frozen
  // teacher (the byte-level reference model)
  TransformerLM teacher = TransformerLM::load_bundle(ctx.assets.reference_manifests[0]);
  teacher.set_frozen(true);
  const std::string regen_path = (ctx.dir / "regen.jsonl").string();
  if (!fs::exists(regen_path)) {
    Corpus clean = load_jsonl(ctx.assets.clean_train);
    SamplingConfig sampling;
    sampling.max_tokens = ctx.knobs.model_max_seq / 2;
    sampling.seed = mix_seed(ctx.knobs.data_seed, 31);
    Corpus regen = regenerate_responses(teacher, clean, sampling);
    save_jsonl(regen, regen_path);
  }
  std::vector<std::string> dirs;
  const std::vector<std::pair<std::string, std::string>> arms = {
      {"original", ctx.assets.clean_train}, {"regen", regen_path}};
  for (const auto& [tag, data] : arms) {
    for (std::uint64_t seed : ctx.knobs.seeds) {
      RunConfig cfg = base_run_config(ctx.knobs, ctx.overrides);
      cfg.objective = "ce";
      cfg.seed = seed;
      cfg.train_data = data;
      cfg.eval_data = ctx.assets.clean_eval;
      cfg.out_dir = arm_dir(ctx, tag, seed);
      train_run(cfg);
      dirs.push_back(cfg.out_dir);
    }
  }
  return finish(ctx, dirs);
}

std::string preset_two_step_dpo(const PresetContext& ctx) {
  // stage 1: preference-objective fine-tuning on the clean corpus
  NoisySetup setup{ctx.assets.clean_train, (ctx.dir / "scores.cache").string()};
  ensure_scores(ctx.assets, load_jsonl(ctx.assets.clean_train), setup.cache_path);
  const std::uint64_t seed = ctx.knobs.seeds.front();
  RunConfig stage1 = noisy_arm_config(ctx, setup, "poft", seed);
  stage1.train_data = ctx.assets.clean_train;
  stage1.epochs = ctx.knobs.epochs;
  stage1.out_dir = arm_dir(ctx, "stage1_poft", seed);
  train_run(stage1);
  const std::string stage1_model = (fs::path(stage1.out_dir) / "final.manifest.json").string();

  // synthetic pairs: chosen = the reference answer; rejected = another
  // example's answer (or a character-corrupted copy when identical)
  const std::string pairs_path = (ctx.dir / "pairs.jsonl").string();
  if (!fs::exists(pairs_path)) {
    Corpus clean = load_jsonl(ctx.assets.clean_train);
    Rng rng(mix_seed(ctx.knobs.data_seed, 41));
    std::vector<PreferencePair> pairs;
    for (std::size_t i = 0; i < clean.examples.size(); ++i) {
      const Example& ex = clean.examples[i];
      std::size_t j = i;
      while (j == i) j = rand_index(rng, clean.examples.size());
      std::string rejected = clean.examples[j].response;
      if (rejected == ex.response) rejected += "x";
      pairs.push_back({ex.id, ex.instruction, ex.response, std::move(rejected)});
    }
    save_pairs_jsonl(pairs, pairs_path);
  }

  // stage 2: DPO against the frozen stage-1 model, shorter and linear
  RunConfig stage2 = base_run_config(ctx.knobs, ctx.overrides);
  stage2.objective = "dpo";
  stage2.seed = seed;
  stage2.train_data = pairs_path;
  stage2.eval_data = ctx.assets.clean_eval;
  stage2.epochs = 2;
  stage2.opt.lr = stage2.opt.lr * 0.1;
  stage2.sched.shape = ScheduleShape::linear;
  stage2.init_from = stage1_model;
  stage2.dpo_reference = stage1_model;
  stage2.out_dir = arm_dir(ctx, "stage2_dpo", seed);
  train_run(stage2);

  return finish(ctx, {stage1.out_dir, stage2.out_dir});
}

}  // namespace

std::vector<std::string> experiment_preset_names() {
  return {"copy_baseline",    "noise_robustness",  "filtering_sweep",
          "strategy_ablation", "reference_choice",  "bi_poft_noise",
          "distillation_compare", "two_step_dpo"};
}

std::string run_experiment(const std::string& preset_name, const std::string& workspace,
                           const ConfigFile& overrides) {
  PresetContext ctx;
  ctx.workspace = workspace;
  ctx.overrides = overrides;
  ctx.knobs = knobs_from(overrides);
  // copy_baseline builds its own corpora and never consults the reference
  // models, so skip the asset bootstrap for it
  if (preset_name != "copy_baseline") ctx.assets = ensure_preset_assets(workspace, overrides);
  ctx.dir = fs::path(workspace) / preset_name;
  fs::create_directories(ctx.dir);

  if (preset_name == "copy_baseline") return preset_copy_baseline(ctx);
  if (preset_name == "noise_robustness") return preset_noise_robustness(ctx);
  if (preset_name == "filtering_sweep") return preset_filtering_sweep(ctx);
  if (preset_name == "strategy_ablation") return preset_strategy_ablation(ctx);
  if (preset_name == "reference_choice") return preset_reference_choice(ctx);
  if (preset_name == "bi_poft_noise") return preset_bi_poft_noise(ctx);
  if (preset_name == "distillation_compare") return preset_distillation_compare(ctx);
  if (preset_name == "two_step_dpo") return preset_two_step_dpo(ctx);
  throw std::invalid_argument("unknown experiment preset: " + preset_name);
}

}  // namespace poft
