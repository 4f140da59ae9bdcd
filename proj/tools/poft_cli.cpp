// Command-line front end for the preference-oriented fine-tuning lab:
// corpus synthesis, noise injection, reference scoring, filtering,
// training, evaluation, experiment presets, and reporting.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "poft/harness.hpp"

namespace fs = std::filesystem;
using namespace poft;

namespace {

ConfigFile config_from(const std::string& config_path, const std::vector<std::string>& sets) {
  ConfigFile cfg = config_path.empty() ? ConfigFile() : ConfigFile::load(config_path);
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--set expects section.key=value, got: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(s);
  while (std::getline(ss, cell, ','))
    if (!cell.empty()) out.push_back(cell);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale lab for preference-oriented fine-tuning of tiny language models"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic instruction corpus");
  std::string synth_out;
  std::size_t synth_size = 256;
  std::uint64_t synth_seed = 7;
  TaskMix mix;
  synth->add_option("--out", synth_out, "output JSONL path")->required();
  synth->add_option("--size", synth_size, "number of examples");
  synth->add_option("--seed", synth_seed, "generation seed");
  synth->add_option("--copy", mix.copy, "copy-task weight");
  synth->add_option("--reverse", mix.reverse, "reverse-task weight");
  synth->add_option("--add", mix.addition, "addition-task weight");
  synth->add_option("--sort", mix.sorting, "sorting-task weight");
  synth->callback([&] {
    Corpus c = generate_synthetic_corpus(mix, synth_size, synth_seed);
    save_jsonl(c, synth_out);
    std::cout << "wrote " << c.examples.size() << " examples to " << synth_out << "\n";
  });

  // ---- noise ----
  auto* noise = app.add_subcommand("noise", "derive corrupted examples and optionally blend");
  std::string noise_in, noise_out, blend_out;
  double noise_fraction = 0.3, mismatch = 1.0;
  CharNoiseRates rates;
  std::uint64_t noise_seed = 11;
  noise->add_option("--in", noise_in, "clean corpus JSONL")->required();
  noise->add_option("--out", noise_out, "noise corpus JSONL")->required();
  noise->add_option("--fraction", noise_fraction, "noise count as a fraction of the input");
  noise->add_option("--mismatch", mismatch, "fraction of noise built from swapped responses");
  noise->add_option("--insert", rates.insert, "per-character insertion rate");
  noise->add_option("--remove", rates.remove, "per-character removal rate");
  noise->add_option("--substitute", rates.substitute, "per-character substitution rate");
  noise->add_option("--seed", noise_seed, "corruption seed");
  noise->add_option("--blend-out", blend_out, "also write the shuffled clean+noise blend here");
  noise->callback([&] {
    Corpus clean = load_jsonl(noise_in);
    const auto n = static_cast<std::size_t>(
        std::llround(noise_fraction * static_cast<double>(clean.examples.size())));
    Corpus noisy = make_noise(clean, n, mismatch, rates, noise_seed);
    save_jsonl(noisy, noise_out);
    std::cout << "wrote " << noisy.examples.size() << " noise examples to " << noise_out << "\n";
    if (!blend_out.empty()) {
      Corpus blended = blend(clean, noisy, mix_seed(noise_seed, 1));
      save_jsonl(blended, blend_out);
      std::cout << "wrote blend of " << blended.examples.size() << " to " << blend_out << "\n";
    }
  });

  // ---- score ----
  auto* score = app.add_subcommand("score", "score a corpus with frozen reference models");
  std::string score_data, score_cache;
  std::vector<std::string> score_models, score_ids;
  score->add_option("--data", score_data, "corpus JSONL")->required();
  score->add_option("--cache", score_cache, "score cache file (created or resumed)")->required();
  score->add_option("--model", score_models, "model manifest path (repeatable)")->required();
  score->add_option("--id", score_ids, "model id per --model (defaults to manifest stem)");
  score->callback([&] {
    Corpus data = load_jsonl(score_data);
    ScoreCache cache;
    if (fs::exists(score_cache)) cache = ScoreCache::load(score_cache);
    std::vector<TransformerLM> models;
    models.reserve(score_models.size());
    for (const std::string& m : score_models) models.push_back(TransformerLM::load_bundle(m));
    std::vector<NamedModel> named;
    for (std::size_t i = 0; i < models.size(); ++i) {
      models[i].set_frozen(true);
      const std::string id =
          i < score_ids.size() ? score_ids[i] : fs::path(score_models[i]).stem().string();
      named.push_back({id, &models[i]});
    }
    score_dataset(named, data, cache);
    cache.save(score_cache);
    std::cout << "cache now holds " << cache.size() << " entries at " << score_cache << "\n";
  });

  // ---- filter ----
  auto* filter = app.add_subcommand("filter", "keep the top fraction by aggregate score");
  std::string filter_in, filter_out, filter_cache, filter_refs, filter_strategy = "avg";
  double keep = 0.5;
  filter->add_option("--in", filter_in, "corpus JSONL")->required();
  filter->add_option("--out", filter_out, "filtered JSONL")->required();
  filter->add_option("--cache", filter_cache, "score cache file")->required();
  filter->add_option("--references", filter_refs, "comma-separated model ids")->required();
  filter->add_option("--strategy", filter_strategy, "aggregation: avg | min | max");
  filter->add_option("--keep", keep, "fraction of examples to keep");
  filter->callback([&] {
    Corpus data = load_jsonl(filter_in);
    ScoreCache cache = ScoreCache::load(filter_cache);
    auto ids = split_commas(filter_refs);
    auto agg = aggregate_scores(cache, ids, data, agg_strategy_from_string(filter_strategy));
    std::map<std::string, double> scores;
    for (const auto& [id, r] : agg) scores[id] = r.value;
    Corpus kept = filter_by_percentile(data, scores, keep);
    save_jsonl(kept, filter_out);
    std::cout << "kept " << kept.examples.size() << " of " << data.examples.size() << " at "
              << filter_out << "\n";
  });

  // ---- regen ----
  auto* regen = app.add_subcommand("regen", "rewrite responses with a frozen teacher model");
  std::string regen_teacher, regen_in, regen_out;
  SamplingConfig sampling;
  regen->add_option("--teacher", regen_teacher, "teacher model manifest")->required();
  regen->add_option("--in", regen_in, "corpus JSONL")->required();
  regen->add_option("--out", regen_out, "regenerated JSONL")->required();
  regen->add_option("--temperature", sampling.temperature, "sampling temperature (0 = greedy)");
  regen->add_option("--max-tokens", sampling.max_tokens, "generation budget per response");
  regen->add_option("--seed", sampling.seed, "sampling seed");
  regen->callback([&] {
    TransformerLM teacher = TransformerLM::load_bundle(regen_teacher);
    teacher.set_frozen(true);
    Corpus data = load_jsonl(regen_in);
    Corpus out = regenerate_responses(teacher, data, sampling);
    save_jsonl(out, regen_out);
    std::cout << "wrote " << out.examples.size() << " regenerated examples to " << regen_out
              << "\n";
  });

  // ---- train ----
  auto* train = app.add_subcommand("train", "run one training configuration");
  std::string train_config;
  std::vector<std::string> train_sets;
  train->add_option("--config", train_config, "config file ([run]/[model]/[data]/...)");
  train->add_option("--set", train_sets, "override section.key=value (repeatable)");
  train->callback([&] {
    RunConfig cfg = RunConfig::from_config(config_from(train_config, train_sets));
    RunMetrics m = train_run(cfg);
    const EpochRecord& last = m.epochs.back();
    std::cout << "finished " << cfg.out_dir << ": train_loss=" << format_double(last.train_loss);
    if (last.eval_nll) std::cout << " eval_nll=" << format_double(*last.eval_nll);
    if (last.exact_match) std::cout << " exact_match=" << format_double(*last.exact_match);
    std::cout << "\n";
  });

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on a held-out corpus");
  std::string eval_model, eval_data_path, eval_train_path;
  eval_cmd->add_option("--model", eval_model, "model manifest")->required();
  eval_cmd->add_option("--data", eval_data_path, "eval corpus JSONL")->required();
  eval_cmd->add_option("--train", eval_train_path, "training corpus, to verify disjointness");
  eval_cmd->callback([&] {
    TransformerLM model = TransformerLM::load_bundle(eval_model);
    Corpus data = load_jsonl(eval_data_path);
    std::optional<Corpus> train_corpus;
    if (!eval_train_path.empty()) train_corpus = load_jsonl(eval_train_path);
    EvalResult r = evaluate(model, data, train_corpus ? &*train_corpus : nullptr);
    std::cout << "nll_per_token=" << format_double(r.nll_per_token)
              << " exact_match=" << format_double(r.exact_match) << "\n";
  });

  // ---- experiment ----
  auto* exp = app.add_subcommand("experiment", "run a named experiment preset");
  std::string exp_preset, exp_workspace, exp_config;
  std::vector<std::string> exp_sets;
  std::string preset_help = "one of:";
  for (const std::string& n : experiment_preset_names()) preset_help += " " + n;
  exp->add_option("--preset", exp_preset, preset_help)->required();
  exp->add_option("--workspace", exp_workspace, "directory for assets and run outputs")
      ->required();
  exp->add_option("--config", exp_config, "override config file");
  exp->add_option("--set", exp_sets, "override section.key=value (repeatable)");
  exp->callback([&] {
    const std::string dir =
        run_experiment(exp_preset, exp_workspace, config_from(exp_config, exp_sets));
    std::cout << "experiment complete; summary at " << dir << "/summary.csv\n";
  });

  // ---- report ----
  auto* report = app.add_subcommand("report", "summarize completed run directories");
  std::string report_out;
  std::vector<std::string> report_dirs;
  report->add_option("--out", report_out, "summary CSV path")->required();
  report->add_option("dirs", report_dirs, "run directories")->required();
  report->callback([&] {
    emit_report(report_dirs, report_out);
    std::cout << "wrote " << report_out << "\n";
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
