#include <doctest.h>

#include <cmath>

#include "poft/objectives.hpp"

using namespace poft;

namespace {

TransformerLM tiny_model(std::uint64_t seed = 5, int dim = 16) {
  ModelConfig cfg;
  cfg.dim = dim;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.max_seq = 48;
  TransformerLM m = TransformerLM::init(cfg, Tokenizer::byte_level(), seed);
  Rng rng(mix_seed(seed, 99));
  for (auto& [name, p] : m.parameters())
    for (double& v : p.data()) v += 0.05 * (rand_u01(rng) - 0.5);
  return m;
}

Example example(const std::string& instruction, const std::string& response,
                Label label = Label::clean) {
  Example ex;
  ex.instruction = instruction;
  ex.response = response;
  ex.label = label;
  ex.rehash();
  return ex;
}

std::vector<PreferenceScore> refs_with_rbar(double rbar) {
  // two references straddling rbar so avg == rbar
  return {PreferenceScore::make("m1", (rbar + 0.5) * 10, 10),
          PreferenceScore::make("m2", (rbar - 0.5) * 10, 10)};
}

double model_r(const TransformerLM& m, const Example& ex) {
  const Tokenizer& tok = m.tokenizer();
  auto [logp, count] = m.sequence_log_prob(encode_prompt(tok, ex.instruction),
                                           tok.encode(ex.response));
  return logp / count;
}

}  // namespace

TEST_CASE("scalar helpers hit hand-computed values") {
  CHECK(sigmoid_scalar(0.0) == 0.5);
  CHECK(sigmoid_scalar(-5.0) == doctest::Approx(0.006692850924284856).epsilon(1e-12));
  CHECK(softplus_scalar(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus_scalar(1.0) == doctest::Approx(1.3132616875182228).epsilon(1e-12));
  CHECK(softplus_scalar(-1.0) == doctest::Approx(0.31326168751822286).epsilon(1e-12));
  // extreme inputs stay finite and exact in the linear/zero regimes
  CHECK(softplus_scalar(800.0) == 800.0);
  CHECK(softplus_scalar(-800.0) == 0.0);
  CHECK(bt_probability(3.0, 1.0) == doctest::Approx(0.75));
}

TEST_CASE("aggregation strategies") {
  std::vector<PreferenceScore> s{PreferenceScore::make("a", -10.0, 10),
                                 PreferenceScore::make("b", -30.0, 10),
                                 PreferenceScore::make("c", -20.0, 10)};
  CHECK(aggregate_r(s, AggStrategy::avg) == doctest::Approx(-2.0));
  CHECK(aggregate_r(s, AggStrategy::min) == doctest::Approx(-3.0));
  CHECK(aggregate_r(s, AggStrategy::max) == doctest::Approx(-1.0));
  CHECK(agg_strategy_from_string("avg") == AggStrategy::avg);
  CHECK_THROWS(agg_strategy_from_string("median"));
}

TEST_CASE("preference-loss closed forms agree across three routes") {
  TransformerLM m = tiny_model();
  Example ex = example("say", "hello");
  const double r_theta = model_r(m, ex);

  // margins stay within ~+-6 nats: beyond ~36 nats tau rounds to 1.0 in
  // float64 and the -log(1-tau) route saturates by construction
  for (double rbar : {r_theta - 3.0, r_theta, r_theta + 0.7, r_theta + 6.0}) {
    auto refs = refs_with_rbar(rbar);
    std::vector<Example> batch{ex};
    std::vector<std::vector<PreferenceScore>> ref_scores{refs};
    LossOutput out = poft_loss(m, batch, ref_scores, AggStrategy::avg);

    const double tau = poft_coefficient(r_theta, refs, AggStrategy::avg);
    const double route_softplus = softplus_scalar(rbar - r_theta);
    const double route_tau = -std::log1p(-tau);
    const double route_sigmoid = -std::log(sigmoid_scalar(r_theta - rbar));
    CHECK(out.loss.item() == doctest::Approx(route_softplus).epsilon(1e-12));
    CHECK(route_tau == doctest::Approx(route_softplus).epsilon(1e-12));
    if (std::isfinite(route_sigmoid))
      CHECK(route_sigmoid == doctest::Approx(route_softplus).epsilon(1e-9));
    CHECK(out.per_sample_tau[0] == doctest::Approx(tau).epsilon(1e-14));
    CHECK(out.per_sample_margin[0] == doctest::Approx(r_theta - rbar).epsilon(1e-12));
    CHECK(tau > 0.0);
    CHECK(tau < 1.0);
  }

  // r_theta == rbar: loss log 2, tau one half, exactly to fp
  auto refs = refs_with_rbar(r_theta);
  CHECK(poft_coefficient(r_theta, refs, AggStrategy::avg) == 0.5);
  std::vector<Example> batch{ex};
  std::vector<std::vector<PreferenceScore>> ref_scores{refs};
  CHECK(poft_loss(m, batch, ref_scores, AggStrategy::avg).loss.item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("product-of-powers coefficient matches the log-space sigmoid form") {
  Rng rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    const int t0 = 1 + static_cast<int>(rand_index(rng, 40));
    const double logp_theta = -200.0 * rand_u01(rng) * t0 / 40.0;
    std::vector<double> ref_logps;
    std::vector<int> ref_counts;
    std::vector<PreferenceScore> refs;
    const int m = 1 + static_cast<int>(rand_index(rng, 4));
    for (int j = 0; j < m; ++j) {
      const int tj = 1 + static_cast<int>(rand_index(rng, 40));
      const double lp = -200.0 * rand_u01(rng) * tj / 40.0;
      ref_logps.push_back(lp);
      ref_counts.push_back(tj);
      refs.push_back(PreferenceScore::make("m" + std::to_string(j), lp, tj));
    }
    const double via_sigmoid = poft_coefficient(logp_theta / t0, refs, AggStrategy::avg);
    const double via_product = poft_coefficient_product_form(logp_theta, t0, ref_logps,
                                                             ref_counts);
    REQUIRE(std::abs(via_sigmoid - via_product) < 1e-12);
  }
}

TEST_CASE("bi-directional loss reduces to the plain loss on all-clean batches") {
  TransformerLM m = tiny_model(7);
  std::vector<Example> batch{example("a", "bb"), example("c", "dd")};
  std::vector<std::vector<PreferenceScore>> refs{refs_with_rbar(-2.0), refs_with_rbar(-4.0)};
  LossOutput plain = poft_loss(m, batch, refs, AggStrategy::avg);
  LossOutput bi = bi_poft_loss(m, batch, refs, AggStrategy::avg);
  CHECK(bi.loss.item() == plain.loss.item());  // bit-exact
  for (std::size_t i = 0; i < batch.size(); ++i)
    CHECK(bi.per_sample_tau[i] == plain.per_sample_tau[i]);
}

TEST_CASE("bi-directional loss flips the preference on noise labels") {
  TransformerLM m = tiny_model(7);
  Example noisy = example("a", "bb", Label::noise);
  const double r_theta = model_r(m, noisy);
  const double rbar = r_theta + 1.0;
  std::vector<Example> batch{noisy};
  std::vector<std::vector<PreferenceScore>> refs{refs_with_rbar(rbar)};
  LossOutput bi = bi_poft_loss(m, batch, refs, AggStrategy::avg);
  CHECK(bi.loss.item() == doctest::Approx(softplus_scalar(r_theta - rbar)).epsilon(1e-12));

  Example unlabeled = example("a", "bb", Label::unknown);
  std::vector<Example> bad{unlabeled};
  CHECK_THROWS(bi_poft_loss(m, bad, refs, AggStrategy::avg));
}

TEST_CASE("ce loss equals length-normalized negative log-likelihood") {
  TransformerLM m = tiny_model(19);
  Example ex = example("greet", "hey");
  std::vector<Example> batch{ex};
  LossOutput out = ce_loss(m, batch);
  CHECK(out.loss.item() == doctest::Approx(-model_r(m, ex)).epsilon(1e-12));
  CHECK(out.per_sample_tau[0] == 1.0);
}

TEST_CASE("preference gradient equals tau times the ce gradient") {
  TransformerLM m = tiny_model(23);
  Example ex = example("double", "xx");
  for (double rbar_offset : {-2.0, 0.0, 1.5}) {
    auto refs = refs_with_rbar(model_r(m, ex) + rbar_offset);
    for (AggStrategy s : {AggStrategy::avg, AggStrategy::min, AggStrategy::max})
      CHECK(gradient_identity_check(m, ex, refs, s) < 1e-10);
  }
}

TEST_CASE("dpo at policy == reference costs exactly log 2 per pair") {
  TransformerLM policy = tiny_model(31);
  TransformerLM reference = tiny_model(31);  // identical weights
  reference.set_frozen(true);
  std::vector<PreferencePair> pairs{{"p1", "ask", "good answer", "bad"},
                                    {"p2", "ask2", "yes", "no"}};
  LossOutput out = dpo_loss(policy, reference, pairs, 0.1);
  CHECK(out.loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  // pushing the policy toward the chosen answers lowers the loss
  Tape tape;
  TapeScope scope(tape);
  policy.zero_grads();
  LossOutput tracked = dpo_loss(policy, reference, pairs, 0.1);
  backward(tracked.loss);
  for (auto& [name, p] : policy.parameters()) {
    auto g = p.grad();
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.05 * g[i];
  }
  tape.clear();
  LossOutput after = dpo_loss(policy, reference, pairs, 0.1);
  CHECK(after.loss.item() < std::log(2.0));
}

TEST_CASE("end-to-end loss gradients agree with central differences") {
  TransformerLM m = tiny_model(43, 8);
  Example ex = example("q", "ab");
  auto refs = refs_with_rbar(-3.0);
  std::vector<Example> batch{ex};
  std::vector<std::vector<PreferenceScore>> ref_scores{refs};
  std::vector<Tensor> params;
  for (auto& [name, p] : m.parameters()) params.push_back(p);
  const double err = finite_diff_check(
      [&] { return poft_loss(m, batch, ref_scores, AggStrategy::avg).loss; }, params, 1e-5);
  CHECK(err < 1e-5);
}
