#pragma once

#include <span>
#include <string>
#include <vector>

#include "poft/data.hpp"
#include "poft/model.hpp"
#include "poft/tensor.hpp"

namespace poft {

double sigmoid_scalar(double x);
double softplus_scalar(double x);

// Length-normalized log-likelihood of one (model, example): r = logp /
// token_count, in nats per token.
struct PreferenceScore {
  std::string model_id;
  double logp = 0.0;
  int token_count = 0;
  double r = 0.0;

  static PreferenceScore make(std::string model_id, double logp, int token_count);
};

enum class AggStrategy { avg, min, max };

std::string to_string(AggStrategy s);
AggStrategy agg_strategy_from_string(std::string_view s);

struct RewardAggregate {
  AggStrategy strategy = AggStrategy::avg;
  double value = 0.0;  // nats per token
  std::vector<std::string> model_ids;
};

double aggregate_r(std::span<const PreferenceScore> scores, AggStrategy strategy);

struct LossOutput {
  Tensor loss;  // scalar; batch mean
  std::vector<double> per_sample_tau;     // in (0,1); 1.0 sentinel for CE
  std::vector<double> per_sample_margin;  // r_theta - rbar
};

// -(1/T0) log p(y|x), averaged over the batch
LossOutput ce_loss(const TransformerLM& model, std::span<const Example> batch);

// lambda_i / (lambda_i + lambda_j)
double bt_probability(double lambda_i, double lambda_j);

// -log sigmoid(r_theta - rbar) per sample, computed as softplus(rbar -
// r_theta); rbar aggregates the frozen reference scores
LossOutput poft_loss(const TransformerLM& model, std::span<const Example> batch,
                     std::span<const std::vector<PreferenceScore>> ref_scores,
                     AggStrategy strategy);

// tau = sigmoid(rbar - r_theta), the per-sample weight on the CE gradient
double poft_coefficient(double r_theta, std::span<const PreferenceScore> ref_scores,
                        AggStrategy strategy);

// Literal product-of-powers route: geometric mean of p_j^(1/Tj) against
// p_theta^(1/T0). Used to cross-check the log-space sigmoid form.
double poft_coefficient_product_form(double logp_theta, int t0,
                                     std::span<const double> ref_logps,
                                     std::span<const int> ref_token_counts);

// clean samples keep the PoFT direction; noise samples flip it
LossOutput bi_poft_loss(const TransformerLM& model, std::span<const Example> batch,
                        std::span<const std::vector<PreferenceScore>> ref_scores,
                        AggStrategy strategy);

// -log sigmoid(beta * (policy log-ratio margin over a frozen reference))
LossOutput dpo_loss(const TransformerLM& policy, const TransformerLM& reference,
                    std::span<const PreferencePair> batch, double beta);

// Max relative discrepancy between grad L_PoFT and tau * grad L_CE over all
// parameters (exact identity; tolerance covers float64 roundoff).
double gradient_identity_check(TransformerLM& model, const Example& sample,
                               std::span<const PreferenceScore> ref_scores,
                               AggStrategy strategy = AggStrategy::avg);

// tokenization shared by objectives and harness
std::vector<int> encode_prompt(const Tokenizer& tok, const std::string& instruction);

}  // namespace poft
