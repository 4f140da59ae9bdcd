#include "poft/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace poft {

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

PreferenceScore PreferenceScore::make(std::string model_id, double logp, int token_count) {
  if (token_count < 1) throw std::invalid_argument("PreferenceScore: token_count must be >= 1");
  PreferenceScore s;
  s.model_id = std::move(model_id);
  s.logp = logp;
  s.token_count = token_count;
  s.r = logp / static_cast<double>(token_count);
  return s;
}

std::string to_string(AggStrategy s) {
  switch (s) {
    case AggStrategy::avg: return "avg";
    case AggStrategy::min: return "min";
    case AggStrategy::max: return "max";
  }
  throw std::logic_error("bad AggStrategy");
}

AggStrategy agg_strategy_from_string(std::string_view s) {
  if (s == "avg") return AggStrategy::avg;
  if (s == "min") return AggStrategy::min;
  if (s == "max") return AggStrategy::max;
  throw std::invalid_argument("unknown strategy: " + std::string(s));
}

double aggregate_r(std::span<const PreferenceScore> scores, AggStrategy strategy) {
  if (scores.empty()) throw std::invalid_argument("aggregate_r: no reference scores");
  switch (strategy) {
    case AggStrategy::avg: {
      double s = 0.0;
      for (const auto& sc : scores) s += sc.r;
      return s / static_cast<double>(scores.size());
    }
    case AggStrategy::min: {
      double m = scores[0].r;
      for (const auto& sc : scores) m = std::min(m, sc.r);
      return m;
    }
    case AggStrategy::max: {
      double m = scores[0].r;
      for (const auto& sc : scores) m = std::max(m, sc.r);
      return m;
    }
  }
  throw std::logic_error("bad AggStrategy");
}

std::vector<int> encode_prompt(const Tokenizer& tok, const std::string& instruction) {
  return tok.encode(instruction + kPromptSeparator);
}

LossOutput ce_loss(const TransformerLM& model, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("ce_loss: empty batch");
  const Tokenizer& tok = model.tokenizer();
  std::vector<Tensor> per_sample;
  LossOutput out;
  for (const Example& ex : batch) {
    if (ex.response.empty()) throw std::invalid_argument("ce_loss: empty response in " + ex.id);
    auto [logp, t0] = model.sequence_log_prob_graph(encode_prompt(tok, ex.instruction),
                                                    tok.encode(ex.response));
    per_sample.push_back(scale(logp, -1.0 / static_cast<double>(t0)));
    out.per_sample_tau.push_back(1.0);  // sentinel: CE is unweighted
    out.per_sample_margin.push_back(0.0);
  }
  out.loss = mean_of(per_sample);
  return out;
}

double bt_probability(double lambda_i, double lambda_j) {
  if (lambda_i <= 0.0 || lambda_j <= 0.0)
    throw std::invalid_argument("bt_probability: strengths must be positive");
  return lambda_i / (lambda_i + lambda_j);
}

LossOutput poft_loss(const TransformerLM& model, std::span<const Example> batch,
                     std::span<const std::vector<PreferenceScore>> ref_scores,
                     AggStrategy strategy) {
  if (batch.empty()) throw std::invalid_argument("poft_loss: empty batch");
  if (ref_scores.size() != batch.size())
    throw std::invalid_argument("poft_loss: reference scores missing for some samples");
  const Tokenizer& tok = model.tokenizer();
  std::vector<Tensor> per_sample;
  LossOutput out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& ex = batch[i];
    if (ex.response.empty()) throw std::invalid_argument("poft_loss: empty response in " + ex.id);
    if (ref_scores[i].empty())
      throw std::invalid_argument("poft_loss: no reference scores for " + ex.id);
    const double rbar = aggregate_r(ref_scores[i], strategy);
    auto [logp, t0] = model.sequence_log_prob_graph(encode_prompt(tok, ex.instruction),
                                                    tok.encode(ex.response));
    Tensor r_theta = scale(logp, 1.0 / static_cast<double>(t0));
    // -log sigmoid(r_theta - rbar) == softplus(rbar - r_theta)
    per_sample.push_back(softplus(add_scalar(neg(r_theta), rbar)));
    const double r_theta_v = r_theta.item();
    out.per_sample_tau.push_back(sigmoid_scalar(rbar - r_theta_v));
    out.per_sample_margin.push_back(r_theta_v - rbar);
  }
  out.loss = mean_of(per_sample);
  return out;
}

double poft_coefficient(double r_theta, std::span<const PreferenceScore> ref_scores,
                        AggStrategy strategy) {
  return sigmoid_scalar(aggregate_r(ref_scores, strategy) - r_theta);
}

double poft_coefficient_product_form(double logp_theta, int t0,
                                     std::span<const double> ref_logps,
                                     std::span<const int> ref_token_counts) {
  if (ref_logps.empty() || ref_logps.size() != ref_token_counts.size())
    throw std::invalid_argument("poft_coefficient_product_form: bad reference arrays");
  if (t0 < 1) throw std::invalid_argument("poft_coefficient_product_form: t0 must be >= 1");
  // p_j^(1/T_j) = exp(logp_j / T_j); the M-th root is distributed into each
  // factor so the running product never underflows even at extreme rewards
  const double m = static_cast<double>(ref_logps.size());
  double geo = 1.0;
  for (std::size_t j = 0; j < ref_logps.size(); ++j) {
    const double p_j_norm = std::exp(ref_logps[j] / static_cast<double>(ref_token_counts[j]));
    geo *= std::pow(p_j_norm, 1.0 / m);
  }
  const double p_theta_norm = std::exp(logp_theta / static_cast<double>(t0));
  return geo / (geo + p_theta_norm);
}

LossOutput bi_poft_loss(const TransformerLM& model, std::span<const Example> batch,
                        std::span<const std::vector<PreferenceScore>> ref_scores,
                        AggStrategy strategy) {
  if (batch.empty()) throw std::invalid_argument("bi_poft_loss: empty batch");
  if (ref_scores.size() != batch.size())
    throw std::invalid_argument("bi_poft_loss: reference scores missing for some samples");
  const Tokenizer& tok = model.tokenizer();
  std::vector<Tensor> per_sample;
  LossOutput out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& ex = batch[i];
    if (ex.label == Label::unknown)
      throw std::invalid_argument("bi_poft_loss: unlabeled sample " + ex.id);
    if (ex.response.empty())
      throw std::invalid_argument("bi_poft_loss: empty response in " + ex.id);
    if (ref_scores[i].empty())
      throw std::invalid_argument("bi_poft_loss: no reference scores for " + ex.id);
    const double rbar = aggregate_r(ref_scores[i], strategy);
    auto [logp, t0] = model.sequence_log_prob_graph(encode_prompt(tok, ex.instruction),
                                                    tok.encode(ex.response));
    Tensor r_theta = scale(logp, 1.0 / static_cast<double>(t0));
    if (ex.label == Label::clean) {
      per_sample.push_back(softplus(add_scalar(neg(r_theta), rbar)));
    } else {
      // noise: the target must score below the references
      per_sample.push_back(softplus(add_scalar(r_theta, -rbar)));
    }
    const double r_theta_v = r_theta.item();
    out.per_sample_tau.push_back(sigmoid_scalar(rbar - r_theta_v));
    out.per_sample_margin.push_back(r_theta_v - rbar);
  }
  out.loss = mean_of(per_sample);
  return out;
}

LossOutput dpo_loss(const TransformerLM& policy, const TransformerLM& reference,
                    std::span<const PreferencePair> batch, double beta) {
  if (batch.empty()) throw std::invalid_argument("dpo_loss: empty batch");
  if (beta <= 0.0) throw std::invalid_argument("dpo_loss: beta must be positive");
  const Tokenizer& tok = policy.tokenizer();
  std::vector<Tensor> per_sample;
  LossOutput out;
  for (const PreferencePair& pair : batch) {
    if (pair.chosen.empty() || pair.rejected.empty())
      throw std::invalid_argument("dpo_loss: empty sequence in " + pair.id);
    if (pair.chosen == pair.rejected)
      throw std::invalid_argument("dpo_loss: chosen == rejected in " + pair.id);
    std::vector<int> prompt = encode_prompt(tok, pair.instruction);
    std::vector<int> chosen = tok.encode(pair.chosen);
    std::vector<int> rejected = tok.encode(pair.rejected);

    auto [lp_pol_c, n1] = policy.sequence_log_prob_graph(prompt, chosen);
    auto [lp_pol_r, n2] = policy.sequence_log_prob_graph(prompt, rejected);
    // reference terms are constants w.r.t. the policy
    std::vector<int> ref_prompt = encode_prompt(reference.tokenizer(), pair.instruction);
    const double lp_ref_c =
        reference.sequence_log_prob(ref_prompt, reference.tokenizer().encode(pair.chosen)).first;
    const double lp_ref_r =
        reference.sequence_log_prob(ref_prompt, reference.tokenizer().encode(pair.rejected)).first;

    Tensor arg = add_scalar(scale(sub(lp_pol_c, lp_pol_r), beta), -beta * (lp_ref_c - lp_ref_r));
    per_sample.push_back(softplus(neg(arg)));
    const double a = arg.item();
    out.per_sample_tau.push_back(sigmoid_scalar(-a));  // DPO gradient weight
    out.per_sample_margin.push_back(a);
  }
  out.loss = mean_of(per_sample);
  return out;
}

double gradient_identity_check(TransformerLM& model, const Example& sample,
                               std::span<const PreferenceScore> ref_scores,
                               AggStrategy strategy) {
  if (model.frozen()) throw std::invalid_argument("gradient_identity_check: model is frozen");
  const Example batch[] = {sample};
  const std::vector<PreferenceScore> refs(ref_scores.begin(), ref_scores.end());
  const std::vector<std::vector<PreferenceScore>> ref_batch = {refs};

  Tape tape;
  std::vector<std::vector<double>> grad_poft, grad_ce;
  double tau = 0.0;
  {
    TapeScope scope(tape);
    model.zero_grads();
    LossOutput p = poft_loss(model, batch, ref_batch, strategy);
    tau = p.per_sample_tau[0];
    backward(p.loss);
    for (auto& [name, param] : model.parameters()) {
      if (param.has_grad())
        grad_poft.emplace_back(param.grad().begin(), param.grad().end());
      else
        grad_poft.emplace_back(param.size(), 0.0);
    }
    tape.clear();
    model.zero_grads();
    LossOutput c = ce_loss(model, batch);
    backward(c.loss);
    for (auto& [name, param] : model.parameters()) {
      if (param.has_grad())
        grad_ce.emplace_back(param.grad().begin(), param.grad().end());
      else
        grad_ce.emplace_back(param.size(), 0.0);
    }
  }
  double max_rel = 0.0;
  for (std::size_t p = 0; p < grad_poft.size(); ++p) {
    for (std::size_t i = 0; i < grad_poft[p].size(); ++i) {
      const double a = grad_poft[p][i];
      const double b = tau * grad_ce[p][i];
      const double rel = std::abs(a - b) / std::max(1e-12, std::abs(a) + std::abs(b));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace poft
