#include <doctest.h>

#include <cmath>
#include <numbers>

#include "poft/tensor.hpp"

using namespace poft;

namespace {

Tensor leaf(std::vector<std::size_t> shape, std::vector<double> data) {
  Tensor t = Tensor::from(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("elementwise and matmul ops pass finite-difference checks") {
  Rng rng(3);
  Tensor a = leaf({2, 3}, {0.5, -1.2, 0.3, 2.0, -0.7, 0.9});
  Tensor b = leaf({3, 2}, {1.1, -0.4, 0.6, 0.2, -1.5, 0.8});
  Tensor c = leaf({2, 2}, {0.3, 0.9, -0.2, 1.4});
  Tensor row = leaf({3}, {0.25, -0.5, 0.75});

  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<Tensor> params;
  };
  std::vector<Case> cases;
  cases.push_back({"matmul", [&] { return sum(matmul(a, b)); }, {a, b}});
  cases.push_back({"transpose", [&] { return sum(matmul(transpose(b), transpose(a))); }, {a, b}});
  cases.push_back({"add", [&] { return sum(add(c, mul(c, c))); }, {c}});
  cases.push_back({"add row broadcast", [&] { return sum(add(a, row)); }, {a, row}});
  cases.push_back({"sub/neg", [&] { return sum(sub(neg(c), c)); }, {c}});
  cases.push_back({"scale/add_scalar", [&] { return sum(add_scalar(scale(c, -2.5), 1.0)); }, {c}});
  cases.push_back({"gelu", [&] { return sum(gelu(a)); }, {a}});
  cases.push_back({"exp", [&] { return sum(exp_elem(c)); }, {c}});
  cases.push_back({"softplus", [&] { return sum(softplus(a)); }, {a}});
  cases.push_back({"sigmoid", [&] { return sum(sigmoid(a)); }, {a}});
  cases.push_back({"log_softmax", [&] { return sum(mul(log_softmax(a), a)); }, {a}});
  cases.push_back({"mean", [&] { return mean(mul(a, a)); }, {a}});
  cases.push_back({"slice/concat", [&] {
                     Tensor parts[] = {slice_cols(a, 1, 2), slice_cols(a, 0, 1)};
                     return sum(concat_cols(parts));
                   },
                   {a}});

  for (auto& cse : cases) {
    CAPTURE(cse.name);
    CHECK(finite_diff_check(cse.f, cse.params, 1e-6) < 1e-6);
  }
}

TEST_CASE("layer_norm gradient and zero-variance edge case") {
  Tensor x = leaf({2, 4}, {0.1, -0.5, 1.2, 0.4, -0.3, 0.8, -1.1, 0.6});
  Tensor g = leaf({4}, {1.0, 0.9, 1.1, 1.2});
  Tensor be = leaf({4}, {0.0, 0.1, -0.1, 0.2});
  std::vector<Tensor> params{x, g, be};
  CHECK(finite_diff_check([&] { return sum(mul(layer_norm(x, g, be), x)); }, params, 1e-6) <
        1e-6);

  // constant rows normalize to zero (then beta), not NaN
  Tensor flat = Tensor::from({1, 4}, {3.0, 3.0, 3.0, 3.0});
  Tensor ones = Tensor::full({4}, 1.0);
  Tensor zeros = Tensor::zeros({4});
  Tensor out = layer_norm(flat, ones, zeros);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("embedding and pick_sum gradients flow to the table") {
  Tensor table = leaf({5, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2,
                               1.3, 1.4, 1.5});
  const std::vector<int> ids{4, 0, 4};
  std::vector<Tensor> params{table};
  CHECK(finite_diff_check([&] { return sum(mul(embedding_lookup(table, ids),
                                               embedding_lookup(table, ids))); },
                          params, 1e-6) < 1e-6);

  const std::vector<int> rows{0, 2};
  const std::vector<int> cols{1, 2};
  CHECK(finite_diff_check([&] { return pick_sum(log_softmax(table), rows, cols); }, params,
                          1e-6) < 1e-6);
}

TEST_CASE("log_softmax rows exponentiate to unit mass and resist overflow") {
  Tensor x = Tensor::from({2, 3}, {1000.0, 999.0, 998.0, -1000.0, -1000.0, -1000.0});
  Tensor ls = log_softmax(x);
  for (std::size_t r = 0; r < 2; ++r) {
    double mass = 0.0;
    for (std::size_t c = 0; c < 3; ++c) mass += std::exp(ls.data()[r * 3 + c]);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gelu matches the exact erf form") {
  Tensor x = Tensor::from({1, 3}, {-1.0, 0.0, 2.0});
  Tensor y = gelu(x);
  for (std::size_t i = 0; i < 3; ++i) {
    const double v = x.data()[i];
    const double expected = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    CHECK(y.data()[i] == doctest::Approx(expected).epsilon(1e-15));
  }
}

TEST_CASE("backward accumulates into leaves across separate traversals") {
  Tensor w = leaf({1, 2}, {2.0, -3.0});
  Tape tape;
  TapeScope scope(tape);
  Tensor loss1 = sum(mul(w, w));  // d/dw = 2w
  backward(loss1);
  Tensor loss2 = sum(w);  // d/dw = 1
  backward(loss2);
  CHECK(w.grad()[0] == doctest::Approx(2.0 * 2.0 + 1.0));
  CHECK(w.grad()[1] == doctest::Approx(2.0 * -3.0 + 1.0));
  w.zero_grad();  // drops the buffer entirely
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("ops outside a tape scope record nothing") {
  Tensor w = leaf({1, 2}, {1.0, 2.0});
  Tensor y = sum(w);  // no active tape
  CHECK(y.item() == doctest::Approx(3.0));
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor z = sum(mul(w, w));
    CHECK(tape.size() > 0);
    backward(z);
  }
  CHECK(w.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("mean_of averages scalar graph outputs with gradients") {
  Tensor a = leaf({1, 1}, {2.0});
  Tensor b = leaf({1, 1}, {4.0});
  Tape tape;
  TapeScope scope(tape);
  Tensor parts[] = {sum(mul(a, a)), sum(b)};
  Tensor m = mean_of(parts);
  CHECK(m.item() == doctest::Approx(4.0));
  backward(m);
  CHECK(a.grad()[0] == doctest::Approx(2.0));  // (2a)/2
  CHECK(b.grad()[0] == doctest::Approx(0.5));
}
