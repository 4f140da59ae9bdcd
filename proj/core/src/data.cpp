#include "poft/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace poft {

using nlohmann::json;

std::string to_string(Label l) {
  switch (l) {
    case Label::clean: return "clean";
    case Label::noise: return "noise";
    case Label::unknown: return "unknown";
  }
  throw std::logic_error("bad Label");
}

Label label_from_string(std::string_view s) {
  if (s == "clean") return Label::clean;
  if (s == "noise") return Label::noise;
  if (s == "unknown") return Label::unknown;
  throw std::invalid_argument("unknown label: " + std::string(s));
}

std::string Example::compute_id(const std::string& instruction, const std::string& response) {
  return hex64(fnv1a64(instruction + kPromptSeparator + response));
}

Corpus load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  Corpus corpus;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    auto at_line = [&](const std::string& msg) {
      return std::runtime_error(path + ":" + std::to_string(lineno) + ": " + msg);
    };
    if (!j.contains("instruction")) throw at_line("missing field 'instruction'");
    if (!j.contains("response")) throw at_line("missing field 'response'");
    Example ex;
    ex.instruction = j.at("instruction").get<std::string>();
    ex.response = j.at("response").get<std::string>();
    ex.label = label_from_string(j.value("label", "unknown"));
    if (j.contains("external_scores"))
      for (const auto& [k, v] : j.at("external_scores").items())
        ex.external_scores[k] = v.get<double>();
    ex.id = j.value("id", Example::compute_id(ex.instruction, ex.response));
    if (!seen.insert(ex.id).second) throw at_line("duplicate id " + ex.id);
    corpus.examples.push_back(std::move(ex));
  }
  auto meta = path + ".meta.json";
  if (std::filesystem::exists(meta))
    corpus.provenance = json::parse(read_text_file(meta)).dump();
  return corpus;
}

void save_jsonl(const Corpus& corpus, const std::string& path) {
  std::ostringstream out;
  for (const Example& ex : corpus.examples) {
    json j;
    j["id"] = ex.id;
    j["instruction"] = ex.instruction;
    j["response"] = ex.response;
    j["label"] = to_string(ex.label);
    if (!ex.external_scores.empty()) j["external_scores"] = ex.external_scores;
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
  if (!corpus.provenance.empty())
    write_text_file(path + ".meta.json", json::parse(corpus.provenance).dump(2) + "\n");
}

namespace {

std::string random_word(Rng& rng, std::size_t min_len, std::size_t max_len) {
  const std::size_t len = min_len + rand_index(rng, max_len - min_len + 1);
  std::string s(len, 'a');
  for (char& c : s) c = static_cast<char>('a' + rand_index(rng, 10));
  return s;
}

Example make_task_example(int task, Rng& rng) {
  Example ex;
  ex.label = Label::clean;
  switch (task) {
    case 0: {
      // fixed length keeps each source character at a constant position,
      // so small models learn copying within a few epochs
      std::string s = random_word(rng, 5, 5);
      ex.instruction = "copy: " + s;
      ex.response = s;
      break;
    }
    case 1: {
      std::string s = random_word(rng, 5, 5);
      ex.instruction = "reverse: " + s;
      ex.response = std::string(s.rbegin(), s.rend());
      break;
    }
    case 2: {
      const int a = static_cast<int>(rand_index(rng, 100));
      const int b = static_cast<int>(rand_index(rng, 100));
      ex.instruction = "add: " + std::to_string(a) + " " + std::to_string(b);
      ex.response = std::to_string(a + b);
      break;
    }
    default: {
      const std::size_t k = 3 + rand_index(rng, 3);
      std::vector<int> digits(k);
      for (int& d : digits) d = static_cast<int>(rand_index(rng, 10));
      std::string instr = "sort:", resp;
      for (int d : digits) instr += " " + std::to_string(d);
      std::sort(digits.begin(), digits.end());
      for (std::size_t i = 0; i < k; ++i) resp += (i ? " " : "") + std::to_string(digits[i]);
      ex.instruction = instr;
      ex.response = resp;
      break;
    }
  }
  ex.rehash();
  return ex;
}

}  // namespace

Corpus generate_synthetic_corpus(const TaskMix& mix, std::size_t size, std::uint64_t seed) {
  if (size == 0) throw std::invalid_argument("generate_synthetic_corpus: size must be positive");
  const double weights[4] = {mix.copy, mix.reverse, mix.addition, mix.sorting};
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("negative task weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("all task weights zero");

  Rng rng(mix_seed(seed, 0x5f17));
  Corpus corpus;
  std::set<std::string> seen;
  std::size_t attempts = 0;
  while (corpus.examples.size() < size) {
    if (++attempts > size * 200)
      throw std::runtime_error("could not generate enough distinct examples");
    double u = rand_u01(rng) * total;
    int task = 0;
    for (; task < 3; ++task) {
      if (u < weights[task]) break;
      u -= weights[task];
    }
    Example ex = make_task_example(task, rng);
    if (seen.insert(ex.id).second) corpus.examples.push_back(std::move(ex));
  }
  json prov;
  prov["op"] = "synth";
  prov["size"] = size;
  prov["seed"] = seed;
  prov["weights"] = {mix.copy, mix.reverse, mix.addition, mix.sorting};
  corpus.provenance = prov.dump();
  return corpus;
}

namespace {

std::string corrupt_chars(const std::string& s, const CharNoiseRates& rates,
                          const std::vector<char>& alphabet, Rng& rng) {
  std::string out;
  out.reserve(s.size() + 4);
  for (char c : s) {
    if (!alphabet.empty() && rand_u01(rng) < rates.insert)
      out.push_back(alphabet[rand_index(rng, alphabet.size())]);
    if (rand_u01(rng) < rates.remove) continue;
    if (alphabet.size() > 1 && rand_u01(rng) < rates.substitute) {
      char r;
      do {
        r = alphabet[rand_index(rng, alphabet.size())];
      } while (r == c);
      out.push_back(r);
    } else {
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace

Corpus make_noise(const Corpus& corpus, std::size_t n_noise, double mismatch_fraction,
                  const CharNoiseRates& rates, std::uint64_t seed) {
  for (double r : {rates.insert, rates.remove, rates.substitute, mismatch_fraction})
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("make_noise: rate outside [0,1]");
  if (n_noise > corpus.size()) throw std::invalid_argument("make_noise: n_noise exceeds corpus");
  if (mismatch_fraction > 0.0 && corpus.size() < 2)
    throw std::invalid_argument("make_noise: corpus too small to mismatch");

  std::vector<char> alphabet;
  {
    std::set<char> chars;
    for (const Example& ex : corpus.examples)
      for (char c : ex.response) chars.insert(c);
    alphabet.assign(chars.begin(), chars.end());
  }

  Rng rng(mix_seed(seed, 0x401e));
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rand_index(rng, i)]);

  Corpus noise;
  for (std::size_t k = 0; k < n_noise; ++k) {
    const Example& base = corpus.examples[order[k]];
    Example ex;
    ex.instruction = base.instruction;
    ex.response = base.response;
    if (rand_u01(rng) < mismatch_fraction) {
      std::size_t j;
      do {
        j = rand_index(rng, corpus.size());
      } while (j == order[k]);
      ex.response = corpus.examples[j].response;
    }
    ex.response = corrupt_chars(ex.response, rates, alphabet, rng);
    ex.label = Label::noise;
    ex.rehash();
    noise.examples.push_back(std::move(ex));
  }
  json prov;
  prov["op"] = "noise";
  prov["n_noise"] = n_noise;
  prov["mismatch_fraction"] = mismatch_fraction;
  prov["rates"] = {rates.insert, rates.remove, rates.substitute};
  prov["seed"] = seed;
  noise.provenance = prov.dump();
  return noise;
}

Corpus blend(const Corpus& clean, const Corpus& noise, std::uint64_t shuffle_seed) {
  std::set<std::string> ids;
  for (const Example& ex : clean.examples) ids.insert(ex.id);
  for (const Example& ex : noise.examples)
    if (!ids.insert(ex.id).second)
      throw std::invalid_argument("blend: id collision on " + ex.id);

  Corpus out;
  out.examples = clean.examples;
  out.examples.insert(out.examples.end(), noise.examples.begin(), noise.examples.end());
  Rng rng(mix_seed(shuffle_seed, 0xb1e7d));
  for (std::size_t i = out.examples.size(); i > 1; --i)
    std::swap(out.examples[i - 1], out.examples[rand_index(rng, i)]);

  json prov;
  prov["op"] = "blend";
  prov["clean_size"] = clean.size();
  prov["noise_size"] = noise.size();
  prov["shuffle_seed"] = shuffle_seed;
  out.provenance = prov.dump();
  return out;
}

Corpus filter_by_percentile(const Corpus& corpus, const std::map<std::string, double>& scores,
                            double keep_fraction) {
  if (keep_fraction <= 0.0 || keep_fraction > 1.0)
    throw std::invalid_argument("filter_by_percentile: keep_fraction outside (0,1]");
  std::vector<const Example*> order;
  order.reserve(corpus.size());
  for (const Example& ex : corpus.examples) {
    if (!scores.count(ex.id))
      throw std::invalid_argument("filter_by_percentile: missing aggregate for " + ex.id);
    order.push_back(&ex);
  }
  std::sort(order.begin(), order.end(), [&](const Example* a, const Example* b) {
    const double sa = scores.at(a->id), sb = scores.at(b->id);
    if (sa != sb) return sa > sb;
    return a->id < b->id;
  });
  const auto keep = static_cast<std::size_t>(
      std::ceil(keep_fraction * static_cast<double>(corpus.size())));
  Corpus out;
  for (std::size_t i = 0; i < keep && i < order.size(); ++i) out.examples.push_back(*order[i]);
  json prov;
  prov["op"] = "filter_by_percentile";
  prov["keep_fraction"] = keep_fraction;
  prov["kept"] = out.size();
  prov["of"] = corpus.size();
  out.provenance = prov.dump();
  return out;
}

Corpus regenerate_responses(const TransformerLM& teacher, const Corpus& corpus,
                            const SamplingConfig& sampling) {
  if (!teacher.frozen()) throw std::invalid_argument("regenerate_responses: teacher must be frozen");
  Corpus out;
  const Tokenizer& tok = teacher.tokenizer();
  for (const Example& src : corpus.examples) {
    Example ex;
    ex.instruction = src.instruction;
    std::vector<int> prompt = tok.encode(src.instruction + kPromptSeparator);
    Rng rng(mix_seed(sampling.seed, fnv1a64(src.id)));
    auto gen = teacher.generate(prompt, sampling.temperature, sampling.max_tokens, rng);
    ex.response = tok.decode(gen.ids);
    ex.label = Label::unknown;
    if (gen.truncated) ex.external_scores["truncated"] = 1.0;
    ex.rehash();
    out.examples.push_back(std::move(ex));
  }
  json prov;
  prov["op"] = "regenerate";
  prov["teacher_fingerprint"] =
      hex64(fnv1a64({reinterpret_cast<const char*>(teacher.parameters()[0].second.data().data()),
                     teacher.parameters()[0].second.size() * sizeof(double)}));
  prov["temperature"] = sampling.temperature;
  prov["max_tokens"] = sampling.max_tokens;
  prov["seed"] = sampling.seed;
  out.provenance = prov.dump();
  return out;
}

std::vector<PreferencePair> load_pairs_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pairs: " + path);
  std::vector<PreferencePair> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    PreferencePair p;
    p.instruction = j.at("instruction").get<std::string>();
    p.chosen = j.at("chosen").get<std::string>();
    p.rejected = j.at("rejected").get<std::string>();
    p.id = j.value("id", hex64(fnv1a64(p.instruction + "\x1f" + p.chosen + "\x1f" + p.rejected)));
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void save_pairs_jsonl(std::span<const PreferencePair> pairs, const std::string& path) {
  std::ostringstream out;
  for (const PreferencePair& p : pairs) {
    json j;
    j["id"] = p.id;
    j["instruction"] = p.instruction;
    j["chosen"] = p.chosen;
    j["rejected"] = p.rejected;
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
}

}  // namespace poft
