#include "poft/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace poft {

void ModelConfig::validate() const {
  if (vocab_size <= 0 || dim <= 0 || n_layers <= 0 || n_heads <= 0 || max_seq <= 0)
    throw std::invalid_argument("ModelConfig: all sizes must be positive");
  if (dim % n_heads != 0) throw std::invalid_argument("ModelConfig: dim must divide by n_heads");
  if (init_std < 0.0) throw std::invalid_argument("ModelConfig: init_std must be non-negative");
}

TransformerLM TransformerLM::init(const ModelConfig& config, Tokenizer tokenizer,
                                  std::uint64_t seed) {
  ModelConfig cfg = config;
  if (cfg.vocab_size == 0) cfg.vocab_size = tokenizer.vocab_size();
  cfg.validate();
  if (cfg.vocab_size < tokenizer.vocab_size())
    throw std::invalid_argument("vocab_size smaller than tokenizer vocabulary");

  TransformerLM m;
  m.config_ = cfg;
  m.tokenizer_ = std::move(tokenizer);

  Rng rng(mix_seed(seed, 0));
  const auto V = static_cast<std::size_t>(cfg.vocab_size);
  const auto D = static_cast<std::size_t>(cfg.dim);
  const auto H = static_cast<std::size_t>(4 * cfg.dim);

  auto rand_param = [&](const std::string& name, std::vector<std::size_t> shape) {
    m.params_.emplace_back(name, Tensor::randn(std::move(shape), cfg.init_std, rng));
  };
  auto const_param = [&](const std::string& name, std::vector<std::size_t> shape, double v) {
    m.params_.emplace_back(name, Tensor::full(std::move(shape), v));
  };

  rand_param("tok_emb", {V, D});
  rand_param("pos_emb", {static_cast<std::size_t>(cfg.max_seq), D});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    const_param(p + "ln1.g", {D}, 1.0);
    const_param(p + "ln1.b", {D}, 0.0);
    rand_param(p + "wq", {D, D});
    rand_param(p + "wk", {D, D});
    rand_param(p + "wv", {D, D});
    rand_param(p + "wo", {D, D});
    const_param(p + "ln2.g", {D}, 1.0);
    const_param(p + "ln2.b", {D}, 0.0);
    rand_param(p + "w1", {D, H});
    const_param(p + "b1", {H}, 0.0);
    rand_param(p + "w2", {H, D});
    const_param(p + "b2", {D}, 0.0);
  }
  const_param("lnf.g", {D}, 1.0);
  const_param("lnf.b", {D}, 0.0);
  const_param("w_out", {D, V}, 0.0);

  m.set_frozen(false);
  return m;
}

void TransformerLM::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& [name, p] : params_) p.set_requires_grad(!frozen);
}

Tensor TransformerLM::param(const std::string& name) const {
  for (const auto& [n, p] : params_)
    if (n == name) return p;
  throw std::out_of_range("unknown parameter: " + name);
}

void TransformerLM::zero_grads() {
  for (auto& [name, p] : params_) p.zero_grad();
}

Tensor TransformerLM::forward_logits(std::span<const int> token_ids) const {
  const std::size_t T = token_ids.size();
  if (T == 0) throw std::invalid_argument("forward_logits: empty sequence");
  if (T > static_cast<std::size_t>(config_.max_seq))
    throw std::length_error("forward_logits: sequence exceeds max_seq");
  for (int id : token_ids)
    if (id < 0 || id >= config_.vocab_size)
      throw std::out_of_range("forward_logits: token id out of range");

  std::vector<int> pos(T);
  for (std::size_t t = 0; t < T; ++t) pos[t] = static_cast<int>(t);

  Tensor x = add(embedding_lookup(param("tok_emb"), token_ids),
                 embedding_lookup(param("pos_emb"), pos));

  const std::size_t heads = static_cast<std::size_t>(config_.n_heads);
  const std::size_t dh = static_cast<std::size_t>(config_.dim) / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor mask = Tensor::zeros({T, T});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = i + 1; j < T; ++j) mask.data()[i * T + j] = -1e9;

  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    Tensor h = layer_norm(x, param(p + "ln1.g"), param(p + "ln1.b"));
    Tensor q = matmul(h, param(p + "wq"));
    Tensor k = matmul(h, param(p + "wk"));
    Tensor v = matmul(h, param(p + "wv"));
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (std::size_t hh = 0; hh < heads; ++hh) {
      Tensor qh = slice_cols(q, hh * dh, dh);
      Tensor kh = slice_cols(k, hh * dh, dh);
      Tensor vh = slice_cols(v, hh * dh, dh);
      Tensor scores = add(scale(matmul(qh, transpose(kh)), att_scale), mask);
      Tensor attn = exp_elem(log_softmax(scores));
      head_outs.push_back(matmul(attn, vh));
    }
    x = add(x, matmul(concat_cols(head_outs), param(p + "wo")));
    Tensor h2 = layer_norm(x, param(p + "ln2.g"), param(p + "ln2.b"));
    Tensor mid = gelu(add(matmul(h2, param(p + "w1")), param(p + "b1")));
    x = add(x, add(matmul(mid, param(p + "w2")), param(p + "b2")));
  }
  Tensor xf = layer_norm(x, param("lnf.g"), param("lnf.b"));
  return matmul(xf, param("w_out"));
}

std::pair<Tensor, int> TransformerLM::sequence_log_prob_graph(
    std::span<const int> prompt_ids, std::span<const int> response_ids) const {
  if (response_ids.empty())
    throw std::invalid_argument("sequence_log_prob: empty response");

  // full = bos, prompt, response, eos; input drops the trailing eos
  std::vector<int> full;
  full.reserve(prompt_ids.size() + response_ids.size() + 2);
  full.push_back(tokenizer_.bos_id());
  full.insert(full.end(), prompt_ids.begin(), prompt_ids.end());
  const std::size_t first_target = full.size();
  full.insert(full.end(), response_ids.begin(), response_ids.end());
  full.push_back(tokenizer_.eos_id());

  const std::size_t input_len = full.size() - 1;
  if (input_len > static_cast<std::size_t>(config_.max_seq))
    throw std::length_error("sequence_log_prob: sequence exceeds max_seq");

  Tensor logits = forward_logits(std::span<const int>(full.data(), input_len));
  Tensor logprobs = log_softmax(logits);

  std::vector<int> rows, cols;
  for (std::size_t t = first_target; t < full.size(); ++t) {
    rows.push_back(static_cast<int>(t - 1));
    cols.push_back(full[t]);
  }
  const int count = static_cast<int>(response_ids.size()) + 1;
  return {pick_sum(logprobs, rows, cols), count};
}

std::pair<double, int> TransformerLM::sequence_log_prob(std::span<const int> prompt_ids,
                                                        std::span<const int> response_ids) const {
  auto [t, n] = sequence_log_prob_graph(prompt_ids, response_ids);
  return {t.item(), n};
}

TransformerLM::Generated TransformerLM::generate(std::span<const int> prompt_ids,
                                                 double temperature, int max_tokens,
                                                 Rng& rng) const {
  if (temperature < 0.0) throw std::invalid_argument("generate: negative temperature");
  std::vector<int> ctx;
  ctx.reserve(prompt_ids.size() + static_cast<std::size_t>(max_tokens) + 1);
  ctx.push_back(tokenizer_.bos_id());
  ctx.insert(ctx.end(), prompt_ids.begin(), prompt_ids.end());

  Generated out;
  const int V = config_.vocab_size;
  for (int step = 0; step < max_tokens; ++step) {
    if (ctx.size() >= static_cast<std::size_t>(config_.max_seq)) {
      out.truncated = true;
      return out;
    }
    Tensor logits = forward_logits(ctx);
    const std::size_t T = ctx.size();
    std::span<const double> row = logits.data().subspan((T - 1) * V, V);
    int next;
    if (temperature == 0.0) {
      next = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    } else {
      double m = *std::max_element(row.begin(), row.end());
      std::vector<double> probs(V);
      double z = 0.0;
      for (int j = 0; j < V; ++j) {
        probs[j] = std::exp((row[j] - m) / temperature);
        z += probs[j];
      }
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      double u = unif(rng) * z, acc = 0.0;
      next = V - 1;
      for (int j = 0; j < V; ++j) {
        acc += probs[j];
        if (u <= acc) {
          next = j;
          break;
        }
      }
    }
    if (next == tokenizer_.eos_id()) return out;
    out.ids.push_back(next);
    ctx.push_back(next);
  }
  out.truncated = true;
  return out;
}

// ---- checkpoint io ----

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'O', 'F', 'T', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated checkpoint");
  return v;
}

}  // namespace

void TransformerLM::save_checkpoint(const std::string& path) const {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& [name, p] : params_) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape().size()));
    for (std::size_t d : p.shape()) write_pod<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.data().data()),
              static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
}

void TransformerLM::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const auto n = read_pod<std::uint32_t>(in);
  if (n != params_.size()) throw std::runtime_error("checkpoint parameter count mismatch");
  for (auto& [name, p] : params_) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string fname(name_len, '\0');
    in.read(fname.data(), name_len);
    if (fname != name) throw std::runtime_error("checkpoint parameter order mismatch: " + fname);
    const auto ndims = read_pod<std::uint32_t>(in);
    std::vector<std::size_t> shape(ndims);
    for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
    if (shape != p.shape()) throw std::runtime_error("checkpoint shape mismatch: " + fname);
    in.read(reinterpret_cast<char*>(p.data().data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  }
}

void TransformerLM::save_bundle(const std::string& manifest_path) const {
  namespace fs = std::filesystem;
  const fs::path mp(manifest_path);
  const fs::path dir = mp.parent_path();
  const std::string stem = mp.stem().string();
  if (!dir.empty()) fs::create_directories(dir);

  const std::string ckpt_file = stem + ".ckpt";
  const std::string tok_file = stem + ".tok";
  save_checkpoint((dir / ckpt_file).string());
  tokenizer_.save((dir / tok_file).string());

  nlohmann::json j;
  j["format"] = "poft-model-manifest";
  j["version"] = 1;
  j["config"] = {{"vocab_size", config_.vocab_size}, {"dim", config_.dim},
                 {"n_layers", config_.n_layers},     {"n_heads", config_.n_heads},
                 {"max_seq", config_.max_seq},       {"init_std", config_.init_std}};
  j["checkpoint"] = ckpt_file;
  j["tokenizer"] = tok_file;
  j["frozen"] = frozen_;
  write_text_file(manifest_path, j.dump(2) + "\n");
}

TransformerLM TransformerLM::load_bundle(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const auto j = nlohmann::json::parse(read_text_file(manifest_path));
  if (j.value("format", "") != "poft-model-manifest")
    throw std::runtime_error("not a model manifest: " + manifest_path);
  ModelConfig cfg;
  const auto& c = j.at("config");
  cfg.vocab_size = c.at("vocab_size").get<int>();
  cfg.dim = c.at("dim").get<int>();
  cfg.n_layers = c.at("n_layers").get<int>();
  cfg.n_heads = c.at("n_heads").get<int>();
  cfg.max_seq = c.at("max_seq").get<int>();
  cfg.init_std = c.at("init_std").get<double>();

  const fs::path dir = fs::path(manifest_path).parent_path();
  Tokenizer tok = Tokenizer::load((dir / j.at("tokenizer").get<std::string>()).string());
  TransformerLM m = TransformerLM::init(cfg, std::move(tok), 0);
  m.load_checkpoint((dir / j.at("checkpoint").get<std::string>()).string());
  m.set_frozen(j.value("frozen", false));
  return m;
}

}  // namespace poft
