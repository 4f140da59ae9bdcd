#include "poft/scores.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace poft {

using nlohmann::json;

ScoreModelMeta model_meta_for(const TransformerLM& model) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [name, p] : model.parameters()) {
    h ^= fnv1a64(name);
    h *= 1099511628211ull;
    h ^= fnv1a64({reinterpret_cast<const char*>(p.data().data()), p.size() * sizeof(double)});
    h *= 1099511628211ull;
  }
  return {hex64(h), hex64(model.tokenizer().content_hash())};
}

bool ScoreCache::has_valid(const std::string& model_id, const std::string& example_id,
                           const std::string& content_hash) const {
  auto it = entries_.find({model_id, example_id});
  return it != entries_.end() && it->second.content_hash == content_hash;
}

const ScoreEntry* ScoreCache::find(const std::string& model_id,
                                   const std::string& example_id) const {
  auto it = entries_.find({model_id, example_id});
  return it == entries_.end() ? nullptr : &it->second;
}

void ScoreCache::put(ScoreEntry entry) {
  auto key = std::make_pair(entry.model_id, entry.example_id);
  entries_[std::move(key)] = std::move(entry);
}

std::string ScoreCache::serialize() const {
  json meta;
  meta["models"] = json::object();
  for (const auto& [id, m] : model_meta_)
    meta["models"][id] = {{"checkpoint_hash", m.checkpoint_hash},
                          {"tokenizer_hash", m.tokenizer_hash}};
  meta["eos_included"] = eos_included_;
  meta["created"] = created_;

  std::ostringstream out;
  out << "# poft-score-cache v1 " << meta.dump() << "\n";
  for (const auto& [key, e] : entries_) {
    out << e.model_id << "\t" << e.example_id << "\t" << e.content_hash << "\t"
        << (e.oversize ? "oversize" : "ok") << "\t" << format_double(e.logp) << "\t"
        << e.token_count << "\t" << format_double(e.r) << "\n";
  }
  return out.str();
}

ScoreCache ScoreCache::deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty score cache");
  const std::string prefix = "# poft-score-cache v1 ";
  if (line.rfind(prefix, 0) != 0) throw std::runtime_error("bad score cache header");
  ScoreCache cache;
  const json meta = json::parse(line.substr(prefix.size()));
  for (const auto& [id, m] : meta.at("models").items())
    cache.model_meta_[id] = {m.at("checkpoint_hash").get<std::string>(),
                             m.at("tokenizer_hash").get<std::string>()};
  cache.eos_included_ = meta.value("eos_included", true);
  cache.created_ = meta.value("created", "");

  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ScoreEntry e;
    std::string status, logp_s, count_s, r_s;
    if (!(std::getline(ls, e.model_id, '\t') && std::getline(ls, e.example_id, '\t') &&
          std::getline(ls, e.content_hash, '\t') && std::getline(ls, status, '\t') &&
          std::getline(ls, logp_s, '\t') && std::getline(ls, count_s, '\t') &&
          std::getline(ls, r_s)))
      throw std::runtime_error("malformed score cache line " + std::to_string(lineno));
    e.oversize = status == "oversize";
    e.logp = std::stod(logp_s);
    e.token_count = std::stoi(count_s);
    e.r = std::stod(r_s);
    cache.put(std::move(e));
  }
  return cache;
}

void ScoreCache::save(const std::string& path) const { write_text_file(path, serialize()); }

ScoreCache ScoreCache::load(const std::string& path) {
  return deserialize(read_text_file(path));
}

void score_dataset(std::span<const NamedModel> models, const Corpus& dataset, ScoreCache& cache,
                   std::size_t /*batch_size*/) {
  for (const NamedModel& nm : models) {
    if (nm.model == nullptr) throw std::invalid_argument("score_dataset: null model");
    if (!nm.model->frozen())
      throw std::invalid_argument("score_dataset: model " + nm.id + " is not frozen");
    const ScoreModelMeta meta = model_meta_for(*nm.model);
    auto it = cache.model_meta().find(nm.id);
    if (it != cache.model_meta().end()) {
      if (it->second.checkpoint_hash != meta.checkpoint_hash ||
          it->second.tokenizer_hash != meta.tokenizer_hash)
        throw std::runtime_error("score_dataset: cache metadata mismatch for model " + nm.id);
    } else {
      cache.model_meta()[nm.id] = meta;
    }
  }
  if (cache.created().empty()) {
    const auto now = std::chrono::system_clock::now();
    cache.set_created(std::to_string(
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count()));
  }

  for (const NamedModel& nm : models) {
    const TransformerLM& model = *nm.model;
    const Tokenizer& tok = model.tokenizer();
    for (const Example& ex : dataset.examples) {
      const std::string content_hash = Example::compute_id(ex.instruction, ex.response);
      if (cache.has_valid(nm.id, ex.id, content_hash)) continue;
      ScoreEntry e;
      e.model_id = nm.id;
      e.example_id = ex.id;
      e.content_hash = content_hash;
      if (ex.response.empty()) throw std::invalid_argument("score_dataset: empty response " + ex.id);
      std::vector<int> prompt = encode_prompt(tok, ex.instruction);
      std::vector<int> response = tok.encode(ex.response);
      // input = bos + prompt + response (+eos target), length checked by the model
      if (1 + prompt.size() + response.size() > static_cast<std::size_t>(model.config().max_seq)) {
        e.oversize = true;
      } else {
        auto [logp, count] = model.sequence_log_prob(prompt, response);
        e.logp = logp;
        e.token_count = count;
        e.r = logp / static_cast<double>(count);
      }
      cache.put(std::move(e));
    }
  }
}

std::map<std::string, RewardAggregate> aggregate_scores(const ScoreCache& cache,
                                                        std::span<const std::string> model_ids,
                                                        const Corpus& dataset,
                                                        AggStrategy strategy) {
  if (model_ids.empty()) throw std::invalid_argument("aggregate_scores: no models requested");
  std::map<std::string, RewardAggregate> out;
  for (const Example& ex : dataset.examples) {
    std::vector<PreferenceScore> scores;
    bool oversize = false;
    for (const std::string& mid : model_ids) {
      const ScoreEntry* e = cache.find(mid, ex.id);
      if (e == nullptr)
        throw std::runtime_error("aggregate_scores: missing entry (" + mid + ", " + ex.id + ")");
      if (e->oversize) {
        oversize = true;
        break;
      }
      scores.push_back(PreferenceScore::make(mid, e->logp, e->token_count));
    }
    if (oversize) continue;
    RewardAggregate agg;
    agg.strategy = strategy;
    agg.value = aggregate_r(scores, strategy);
    agg.model_ids.assign(model_ids.begin(), model_ids.end());
    out[ex.id] = std::move(agg);
  }
  return out;
}

Histogram score_histogram(std::span<const double> values, std::size_t num_bins) {
  if (values.empty()) throw std::invalid_argument("score_histogram: empty values");
  if (num_bins == 0) throw std::invalid_argument("score_histogram: zero bins");
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (hi == lo) hi = lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(num_bins);

  Histogram h;
  h.edges.resize(num_bins + 1);
  for (std::size_t i = 0; i <= num_bins; ++i) h.edges[i] = lo + width * static_cast<double>(i);
  std::vector<std::size_t> counts(num_bins, 0);
  for (double v : values) {
    auto bin = static_cast<std::size_t>((v - lo) / width);
    if (bin >= num_bins) bin = num_bins - 1;  // right edge closes the last bin
    ++counts[bin];
  }
  h.densities.resize(num_bins);
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < num_bins; ++i)
    h.densities[i] = static_cast<double>(counts[i]) / (n * width);
  return h;
}

std::string histogram_to_csv(const Histogram& h) {
  std::ostringstream out;
  out << "bin_left,bin_right,density\n";
  for (std::size_t i = 0; i < h.densities.size(); ++i)
    out << format_double(h.edges[i]) << "," << format_double(h.edges[i + 1]) << ","
        << format_double(h.densities[i]) << "\n";
  return out.str();
}

}  // namespace poft
