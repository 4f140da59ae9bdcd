#include "poft/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "poft/tensor.hpp"

namespace poft {

using nlohmann::json;
namespace fs = std::filesystem;

double schedule_lr(const OptimizerConfig& opt, const ScheduleConfig& sched, std::size_t step,
                   std::size_t total_steps) {
  if (total_steps == 0) return opt.lr;
  const double warmup_steps = sched.warmup_fraction * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (warmup_steps > 0.0 && s < warmup_steps) return opt.lr * (s + 1.0) / warmup_steps;
  const double span = static_cast<double>(total_steps) - warmup_steps;
  const double progress = span > 0.0 ? (s - warmup_steps) / span : 1.0;
  if (sched.shape == ScheduleShape::cosine)
    return opt.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return opt.lr * (1.0 - progress);
}

void RunConfig::validate() const {
  if (objective != "ce" && objective != "poft" && objective != "bi_poft" && objective != "dpo")
    throw std::invalid_argument("unknown objective: " + objective);
  agg_strategy_from_string(strategy);
  if (opt.lr <= 0.0) throw std::invalid_argument("lr must be positive");
  if (sched.warmup_fraction < 0.0 || sched.warmup_fraction >= 1.0)
    throw std::invalid_argument("warmup_fraction must lie in [0,1)");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (train_data.empty()) throw std::invalid_argument("train_data is required");
  if (out_dir.empty()) throw std::invalid_argument("out_dir is required");
  if ((objective == "poft" || objective == "bi_poft") && score_cache.empty())
    throw std::invalid_argument("objective " + objective + " requires a score cache");
  if (objective == "dpo" && dpo_reference.empty())
    throw std::invalid_argument("dpo requires a reference model manifest");
}

RunConfig RunConfig::from_config(const ConfigFile& file) {
  RunConfig cfg;
  cfg.apply_overrides(file);
  return cfg;
}

void RunConfig::apply_overrides(const ConfigFile& f) {
  objective = f.get_str("run.objective", objective);
  strategy = f.get_str("run.strategy", strategy);
  seed = static_cast<std::uint64_t>(f.get_int("run.seed", static_cast<std::int64_t>(seed)));
  epochs = static_cast<int>(f.get_int("run.epochs", epochs));
  batch_size = static_cast<int>(f.get_int("run.batch_size", batch_size));
  eval_every = static_cast<int>(f.get_int("run.eval_every", eval_every));
  out_dir = f.get_str("run.out_dir", out_dir);
  init_from = f.get_str("run.init_from", init_from);

  model.vocab_size = static_cast<int>(f.get_int("model.vocab_size", model.vocab_size));
  model.dim = static_cast<int>(f.get_int("model.dim", model.dim));
  model.n_layers = static_cast<int>(f.get_int("model.n_layers", model.n_layers));
  model.n_heads = static_cast<int>(f.get_int("model.n_heads", model.n_heads));
  model.max_seq = static_cast<int>(f.get_int("model.max_seq", model.max_seq));
  model.init_std = f.get_double("model.init_std", model.init_std);

  train_data = f.get_str("data.train", train_data);
  eval_data = f.get_str("data.eval", eval_data);
  tokenizer_file = f.get_str("data.tokenizer", tokenizer_file);
  score_cache = f.get_str("data.score_cache", score_cache);
  if (f.has("data.references")) {
    reference_ids.clear();
    std::istringstream ss(f.get_str("data.references", ""));
    std::string id;
    while (std::getline(ss, id, ','))
      if (!id.empty()) reference_ids.push_back(id);
  }

  opt.lr = f.get_double("optimizer.lr", opt.lr);
  opt.beta1 = f.get_double("optimizer.beta1", opt.beta1);
  opt.beta2 = f.get_double("optimizer.beta2", opt.beta2);
  opt.weight_decay = f.get_double("optimizer.weight_decay", opt.weight_decay);
  opt.eps = f.get_double("optimizer.eps", opt.eps);

  sched.warmup_fraction = f.get_double("schedule.warmup_fraction", sched.warmup_fraction);
  const std::string shape = f.get_str(
      "schedule.shape", sched.shape == ScheduleShape::cosine ? "cosine" : "linear");
  if (shape == "cosine")
    sched.shape = ScheduleShape::cosine;
  else if (shape == "linear")
    sched.shape = ScheduleShape::linear;
  else
    throw std::invalid_argument("unknown schedule shape: " + shape);

  dpo_beta = f.get_double("dpo.beta", dpo_beta);
  dpo_reference = f.get_str("dpo.reference", dpo_reference);
}

std::string RunConfig::to_config_text() const {
  std::ostringstream out;
  out << "[run]\n";
  out << "objective = " << objective << "\n";
  out << "strategy = " << strategy << "\n";
  out << "seed = " << seed << "\n";
  out << "epochs = " << epochs << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "eval_every = " << eval_every << "\n";
  out << "out_dir = " << out_dir << "\n";
  if (!init_from.empty()) out << "init_from = " << init_from << "\n";
  out << "\n[model]\n";
  out << "vocab_size = " << model.vocab_size << "\n";
  out << "dim = " << model.dim << "\n";
  out << "n_layers = " << model.n_layers << "\n";
  out << "n_heads = " << model.n_heads << "\n";
  out << "max_seq = " << model.max_seq << "\n";
  out << "init_std = " << format_double(model.init_std) << "\n";
  out << "\n[data]\n";
  out << "train = " << train_data << "\n";
  if (!eval_data.empty()) out << "eval = " << eval_data << "\n";
  if (!tokenizer_file.empty()) out << "tokenizer = " << tokenizer_file << "\n";
  if (!score_cache.empty()) out << "score_cache = " << score_cache << "\n";
  if (!reference_ids.empty()) {
    out << "references = ";
    for (std::size_t i = 0; i < reference_ids.size(); ++i)
      out << (i ? "," : "") << reference_ids[i];
    out << "\n";
  }
  out << "\n[optimizer]\n";
  out << "lr = " << format_double(opt.lr) << "\n";
  out << "beta1 = " << format_double(opt.beta1) << "\n";
  out << "beta2 = " << format_double(opt.beta2) << "\n";
  out << "weight_decay = " << format_double(opt.weight_decay) << "\n";
  out << "eps = " << format_double(opt.eps) << "\n";
  out << "\n[schedule]\n";
  out << "warmup_fraction = " << format_double(sched.warmup_fraction) << "\n";
  out << "shape = " << (sched.shape == ScheduleShape::cosine ? "cosine" : "linear") << "\n";
  if (objective == "dpo") {
    out << "\n[dpo]\n";
    out << "beta = " << format_double(dpo_beta) << "\n";
    out << "reference = " << dpo_reference << "\n";
  }
  return out.str();
}

// ---- metrics csv ----

namespace {

std::string opt_cell(const std::optional<double>& v) {
  return v.has_value() ? format_double(*v) : std::string();
}

std::optional<double> parse_opt_cell(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

}  // namespace

std::string RunMetrics::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,mean_tau,mean_tau_clean,mean_tau_noise,eval_nll,exact_match,seed\n";
  for (const EpochRecord& r : epochs) {
    out << r.epoch << "," << format_double(r.train_loss) << "," << format_double(r.mean_tau)
        << "," << opt_cell(r.mean_tau_clean) << "," << opt_cell(r.mean_tau_noise) << ","
        << opt_cell(r.eval_nll) << "," << opt_cell(r.exact_match) << "," << seed << "\n";
  }
  return out.str();
}

RunMetrics RunMetrics::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty metrics csv");
  RunMetrics m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 8) throw std::runtime_error("malformed metrics row: " + line);
    EpochRecord r;
    r.epoch = std::stoi(cells[0]);
    r.train_loss = std::stod(cells[1]);
    r.mean_tau = std::stod(cells[2]);
    r.mean_tau_clean = parse_opt_cell(cells[3]);
    r.mean_tau_noise = parse_opt_cell(cells[4]);
    r.eval_nll = parse_opt_cell(cells[5]);
    r.exact_match = parse_opt_cell(cells[6]);
    m.seed = static_cast<std::uint64_t>(std::stoull(cells[7]));
    m.epochs.push_back(r);
  }
  return m;
}

// ---- evaluation ----

EvalResult evaluate(const TransformerLM& model, const Corpus& eval_corpus,
                    const Corpus* train_corpus) {
  if (eval_corpus.examples.empty()) throw std::invalid_argument("evaluate: empty eval corpus");
  if (train_corpus != nullptr) {
    std::set<std::string> train_ids;
    for (const Example& ex : train_corpus->examples) train_ids.insert(ex.id);
    for (const Example& ex : eval_corpus.examples)
      if (train_ids.count(ex.id))
        throw std::invalid_argument("evaluate: eval corpus overlaps training set at " + ex.id);
  }
  const Tokenizer& tok = model.tokenizer();
  double nll = 0.0;
  double matches = 0.0;
  Rng rng(0);  // unused: greedy decoding
  for (const Example& ex : eval_corpus.examples) {
    std::vector<int> prompt = encode_prompt(tok, ex.instruction);
    auto [logp, count] = model.sequence_log_prob(prompt, tok.encode(ex.response));
    nll += -logp / static_cast<double>(count);
    const int budget = std::min(model.config().max_seq,
                                static_cast<int>(tok.encode(ex.response).size()) + 8);
    auto gen = model.generate(prompt, 0.0, budget, rng);
    if (!gen.truncated && tok.decode(gen.ids) == ex.response) matches += 1.0;
  }
  const double n = static_cast<double>(eval_corpus.examples.size());
  return {nll / n, matches / n};
}

// ---- training ----

namespace {

class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor>>& params, const OptimizerConfig& cfg)
      : params_(params), cfg_(cfg) {
    for (auto& [name, p] : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor& p = params_[pi].second;
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.data();
      // no decay on 1-D params (biases, layer norms)
      const double wd = p.shape().size() > 1 ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[pi][i] = cfg_.beta1 * m_[pi][i] + (1.0 - cfg_.beta1) * g[i];
        v_[pi][i] = cfg_.beta2 * v_[pi][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m_[pi][i] / bc1;
        const double vhat = v_[pi][i] / bc2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * w[i]);
      }
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>>& params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
}

struct RunLogger {
  std::ostringstream log;
  void line(const std::string& s) { log << s << "\n"; }
};

void write_run_manifest(const RunConfig& cfg) {
  json j;
  j["format"] = "poft-run-manifest";
  j["config"] = cfg.to_config_text();
  json hashes = json::object();
  for (const std::string& p : {cfg.train_data, cfg.eval_data, cfg.score_cache,
                               cfg.tokenizer_file, cfg.dpo_reference, cfg.init_from})
    if (!p.empty() && fs::exists(p)) hashes[p] = hex64(hash_file(p));
  j["input_hashes"] = hashes;
  write_text_file((fs::path(cfg.out_dir) / "run_manifest.json").string(), j.dump(2) + "\n");
}

double mean_or(const std::vector<double>& v, double fallback) {
  if (v.empty()) return fallback;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void dump_nan_batch(const RunConfig& cfg, std::span<const Example> batch) {
  Corpus c;
  c.examples.assign(batch.begin(), batch.end());
  save_jsonl(c, (fs::path(cfg.out_dir) / "nan_batch.jsonl").string());
}

RunMetrics train_corpus_objective(const RunConfig& cfg) {
  RunLogger log;
  Corpus corpus = load_jsonl(cfg.train_data);
  std::optional<Corpus> eval_corpus;
  if (!cfg.eval_data.empty()) eval_corpus = load_jsonl(cfg.eval_data);

  TransformerLM model = [&] {
    if (!cfg.init_from.empty()) {
      TransformerLM m = TransformerLM::load_bundle(cfg.init_from);
      m.set_frozen(false);
      return m;
    }
    Tokenizer tok =
        cfg.tokenizer_file.empty() ? Tokenizer::byte_level() : Tokenizer::load(cfg.tokenizer_file);
    return TransformerLM::init(cfg.model, std::move(tok), cfg.seed);
  }();
  const Tokenizer& tok = model.tokenizer();

  // reference scores for preference objectives
  std::vector<std::vector<PreferenceScore>> refs;
  const bool uses_refs = cfg.objective == "poft" || cfg.objective == "bi_poft";
  std::optional<ScoreCache> cache;
  if (uses_refs) {
    cache = ScoreCache::load(cfg.score_cache);
    if (cfg.reference_ids.empty())
      throw std::invalid_argument("preference objectives need data.references");
  }

  // drop examples the target model (or any reference entry) cannot score
  std::vector<Example> train;
  for (const Example& ex : corpus.examples) {
    const std::size_t need = 1 + encode_prompt(tok, ex.instruction).size() +
                             tok.encode(ex.response).size();
    if (need > static_cast<std::size_t>(cfg.model.max_seq) && cfg.init_from.empty()) {
      log.line("excluded oversize example " + ex.id);
      continue;
    }
    if (uses_refs) {
      std::vector<PreferenceScore> r;
      bool usable = true;
      for (const std::string& mid : cfg.reference_ids) {
        const ScoreEntry* e = cache->find(mid, ex.id);
        if (e == nullptr)
          throw std::runtime_error("missing score cache entry (" + mid + ", " + ex.id + ")");
        if (e->content_hash != Example::compute_id(ex.instruction, ex.response))
          throw std::runtime_error("stale score cache entry for " + ex.id);
        if (e->oversize) {
          usable = false;
          break;
        }
        r.push_back(PreferenceScore::make(mid, e->logp, e->token_count));
      }
      if (!usable) {
        log.line("excluded example with oversize reference score " + ex.id);
        continue;
      }
      refs.push_back(std::move(r));
    }
    train.push_back(ex);
  }
  if (train.empty()) throw std::runtime_error("no trainable examples after exclusions");

  const AggStrategy strategy = agg_strategy_from_string(cfg.strategy);
  const std::size_t n = train.size();
  const std::size_t batches_per_epoch =
      (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
  const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(cfg.epochs);

  AdamW optimizer(model.parameters(), cfg.opt);
  Tape tape;
  RunMetrics metrics;
  metrics.seed = cfg.seed;
  std::ostringstream timing;
  timing << "epoch,wall_seconds\n";

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(mix_seed(cfg.seed, 7000 + static_cast<std::uint64_t>(epoch)));
    shuffle_indices(order, rng);

    double loss_sum = 0.0;
    std::vector<double> taus_all, taus_clean, taus_noise;

    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = b * static_cast<std::size_t>(cfg.batch_size);
      const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Example> batch;
      std::vector<std::vector<PreferenceScore>> batch_refs;
      for (std::size_t i = lo; i < hi; ++i) {
        batch.push_back(train[order[i]]);
        if (uses_refs) batch_refs.push_back(refs[order[i]]);
      }

      TapeScope scope(tape);
      model.zero_grads();
      LossOutput out;
      if (cfg.objective == "ce")
        out = ce_loss(model, batch);
      else if (cfg.objective == "poft")
        out = poft_loss(model, batch, batch_refs, strategy);
      else
        out = bi_poft_loss(model, batch, batch_refs, strategy);

      const double loss_v = out.loss.item();
      if (!std::isfinite(loss_v)) {
        dump_nan_batch(cfg, batch);
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                                 "; offending batch dumped to nan_batch.jsonl");
      }
      backward(out.loss);
      optimizer.step(schedule_lr(cfg.opt, cfg.sched, step, total_steps));
      ++step;
      tape.clear();

      loss_sum += loss_v * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        taus_all.push_back(out.per_sample_tau[i]);
        if (batch[i].label == Label::clean) taus_clean.push_back(out.per_sample_tau[i]);
        if (batch[i].label == Label::noise) taus_noise.push_back(out.per_sample_tau[i]);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.mean_tau = mean_or(taus_all, 1.0);
    if (!taus_clean.empty()) rec.mean_tau_clean = mean_or(taus_clean, 0.0);
    if (!taus_noise.empty()) rec.mean_tau_noise = mean_or(taus_noise, 0.0);

    // per-epoch gradient spot check on one random sample
    if (cfg.objective == "poft") {
      const std::size_t pick = rand_index(rng, n);
      const double err = gradient_identity_check(model, train[pick], refs[pick], strategy);
      log.line("epoch " + std::to_string(epoch) + " gradient identity check: " +
               format_double(err));
    }

    if (eval_corpus && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      EvalResult ev = evaluate(model, *eval_corpus, &corpus);
      rec.eval_nll = ev.nll_per_token;
      rec.exact_match = ev.exact_match;
    }
    metrics.epochs.push_back(rec);

    model.save_bundle((fs::path(cfg.out_dir) / ("epoch_" + std::to_string(epoch) +
                                                ".manifest.json")).string());
    const auto t1 = std::chrono::steady_clock::now();
    timing << epoch << ","
           << format_double(std::chrono::duration<double>(t1 - t0).count()) << "\n";
  }

  model.save_bundle((fs::path(cfg.out_dir) / "final.manifest.json").string());
  write_text_file((fs::path(cfg.out_dir) / "metrics.csv").string(), metrics.to_csv());
  write_text_file((fs::path(cfg.out_dir) / "timing.csv").string(), timing.str());
  write_text_file((fs::path(cfg.out_dir) / "run.log").string(), log.log.str());
  return metrics;
}

RunMetrics train_dpo(const RunConfig& cfg) {
  RunLogger log;
  std::vector<PreferencePair> pairs = load_pairs_jsonl(cfg.train_data);
  if (pairs.empty()) throw std::runtime_error("dpo: empty pair set");

  TransformerLM reference = TransformerLM::load_bundle(cfg.dpo_reference);
  reference.set_frozen(true);
  TransformerLM policy = [&] {
    if (!cfg.init_from.empty()) {
      TransformerLM m = TransformerLM::load_bundle(cfg.init_from);
      m.set_frozen(false);
      return m;
    }
    Tokenizer tok =
        cfg.tokenizer_file.empty() ? Tokenizer::byte_level() : Tokenizer::load(cfg.tokenizer_file);
    return TransformerLM::init(cfg.model, std::move(tok), cfg.seed);
  }();

  std::optional<Corpus> eval_corpus;
  if (!cfg.eval_data.empty()) eval_corpus = load_jsonl(cfg.eval_data);

  const std::size_t n = pairs.size();
  const std::size_t batches_per_epoch =
      (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
  const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(cfg.epochs);

  AdamW optimizer(policy.parameters(), cfg.opt);
  Tape tape;
  RunMetrics metrics;
  metrics.seed = cfg.seed;
  std::ostringstream timing;
  timing << "epoch,wall_seconds\n";

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(mix_seed(cfg.seed, 7000 + static_cast<std::uint64_t>(epoch)));
    shuffle_indices(order, rng);

    double loss_sum = 0.0;
    std::vector<double> taus;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = b * static_cast<std::size_t>(cfg.batch_size);
      const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
      std::vector<PreferencePair> batch;
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(pairs[order[i]]);

      TapeScope scope(tape);
      policy.zero_grads();
      LossOutput out = dpo_loss(policy, reference, batch, cfg.dpo_beta);
      const double loss_v = out.loss.item();
      if (!std::isfinite(loss_v)) throw std::runtime_error("dpo: non-finite loss");
      backward(out.loss);
      optimizer.step(schedule_lr(cfg.opt, cfg.sched, step, total_steps));
      ++step;
      tape.clear();

      loss_sum += loss_v * static_cast<double>(batch.size());
      for (double t : out.per_sample_tau) taus.push_back(t);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.mean_tau = mean_or(taus, 0.0);
    if (eval_corpus && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      EvalResult ev = evaluate(policy, *eval_corpus, nullptr);
      rec.eval_nll = ev.nll_per_token;
      rec.exact_match = ev.exact_match;
    }
    metrics.epochs.push_back(rec);
    policy.save_bundle((fs::path(cfg.out_dir) / ("epoch_" + std::to_string(epoch) +
                                                 ".manifest.json")).string());
    const auto t1 = std::chrono::steady_clock::now();
    timing << epoch << ","
           << format_double(std::chrono::duration<double>(t1 - t0).count()) << "\n";
  }

  policy.save_bundle((fs::path(cfg.out_dir) / "final.manifest.json").string());
  write_text_file((fs::path(cfg.out_dir) / "metrics.csv").string(), metrics.to_csv());
  write_text_file((fs::path(cfg.out_dir) / "timing.csv").string(), timing.str());
  write_text_file((fs::path(cfg.out_dir) / "run.log").string(), log.log.str());
  return metrics;
}

}  // namespace

RunMetrics train_run(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  write_run_manifest(cfg);
  if (cfg.objective == "dpo") return train_dpo(cfg);
  return train_corpus_objective(cfg);
}

// ---- report ----

namespace {

struct Stats {
  double mean = 0.0;
  std::optional<double> stdev;
};

Stats stats_over(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double sq = 0.0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.stdev = std::sqrt(sq / static_cast<double>(v.size() - 1));
  }
  return s;
}

}  // namespace

void emit_report(std::span<const std::string> run_dirs, const std::string& out_csv) {
  if (run_dirs.empty()) throw std::invalid_argument("emit_report: no run directories");
  std::ostringstream out;
  out << "run,seed,epochs,last_train_loss,last_eval_nll,mean_eval_nll,std_eval_nll,"
         "last_exact_match,mean_exact_match,std_exact_match\n";
  for (const std::string& dir : run_dirs) {
    const std::string path = (fs::path(dir) / "metrics.csv").string();
    if (!fs::exists(path)) throw std::runtime_error("emit_report: incomplete run " + dir);
    RunMetrics m = RunMetrics::from_csv(read_text_file(path));
    if (m.epochs.empty()) throw std::runtime_error("emit_report: no epochs in " + dir);
    const EpochRecord& last = m.epochs.back();

    // statistics across epochs >= 2; single-epoch runs fall back to epoch 1
    std::vector<double> nlls, ems;
    for (const EpochRecord& r : m.epochs) {
      if (m.epochs.size() > 1 && r.epoch == 1) continue;
      if (r.eval_nll) nlls.push_back(*r.eval_nll);
      if (r.exact_match) ems.push_back(*r.exact_match);
    }
    const Stats snll = stats_over(nlls);
    const Stats sem = stats_over(ems);
    auto cell = [](const std::optional<double>& v) {
      return v.has_value() ? format_double(*v) : std::string();
    };
    // the arm name, not the full path: summaries must be byte-identical
    // across workspaces
    out << fs::path(dir).filename().string() << "," << m.seed << "," << m.epochs.size() << ","
        << format_double(last.train_loss) << "," << cell(last.eval_nll) << ","
        << (nlls.empty() ? "" : format_double(snll.mean)) << "," << cell(snll.stdev) << ","
        << cell(last.exact_match) << "," << (ems.empty() ? "" : format_double(sem.mean)) << ","
        << cell(sem.stdev) << "\n";
  }
  write_text_file(out_csv, out.str());
}

}  // namespace poft
