#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "poft/tensor.hpp"
#include "poft/tokenizer.hpp"

namespace poft {

struct ModelConfig {
  int vocab_size = 0;
  int dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq = 96;
  double init_std = 0.02;

  void validate() const;
};

// Decoder-only transformer: learned absolute positions, pre-norm blocks,
// GELU MLP, zero-initialized output projection (uniform next-token
// distribution at init).
class TransformerLM {
 public:
  static TransformerLM init(const ModelConfig& config, Tokenizer tokenizer, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  // ordered, stable parameter list
  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  Tensor param(const std::string& name) const;
  void zero_grads();

  // logits[t] depends only on ids[0..t]
  Tensor forward_logits(std::span<const int> token_ids) const;

  // log p(response, eos | bos, prompt) summed over response positions plus
  // the EOS terminator; count includes the terminator
  std::pair<Tensor, int> sequence_log_prob_graph(std::span<const int> prompt_ids,
                                                 std::span<const int> response_ids) const;
  std::pair<double, int> sequence_log_prob(std::span<const int> prompt_ids,
                                           std::span<const int> response_ids) const;

  // greedy when temperature == 0; stops at EOS or max_tokens
  struct Generated {
    std::vector<int> ids;
    bool truncated = false;
  };
  Generated generate(std::span<const int> prompt_ids, double temperature, int max_tokens,
                     Rng& rng) const;

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  // manifest bundles config + tokenizer file reference + frozen flag
  void save_bundle(const std::string& manifest_path) const;
  static TransformerLM load_bundle(const std::string& manifest_path);

 private:
  TransformerLM() = default;

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  Tokenizer tokenizer_ = Tokenizer::byte_level();
  bool frozen_ = false;
};

}  // namespace poft
