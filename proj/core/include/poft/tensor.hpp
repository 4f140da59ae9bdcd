#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "poft/common.hpp"

namespace poft {

class Tape;

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily on first accumulation
  bool requires_grad = false;

  // Tape bookkeeping. A node is tracked only while (tape, generation)
  // match the tape that recorded it; clearing the tape orphans old
  // outputs into plain constants.
  Tape* tape = nullptr;
  std::uint64_t tape_generation = 0;
  std::ptrdiff_t tape_index = -1;
};

// Value-semantic handle onto a shared node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(std::vector<std::size_t> shape, double stddev, Rng& rng);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<double> grad() { return node_->grad; }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
  friend class Tape;
  friend Tensor make_op_output(std::vector<std::size_t>, std::vector<double>,
                               std::span<const Tensor>,
                               std::function<void(std::span<const double>, class GradSink&)>);
};

// Resolves the gradient buffer for a node during one backward traversal:
// tracked intermediates get scratch buffers, requires_grad leaves get the
// persistent node grad (accumulating across backward calls).
class GradSink {
 public:
  // returns nullptr when the node neither is tracked nor requires grad
  double* buffer_for(TensorNode& n);

 private:
  friend void backward(const Tensor& root);
  explicit GradSink(std::vector<std::vector<double>>& scratch) : scratch_(scratch) {}
  std::vector<std::vector<double>>& scratch_;
};

// Define-by-run tape; rebuilt (cleared) per forward pass. One tape per
// thread, activated by TapeScope.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void clear();
  std::size_t size() const { return entries_.size(); }
  std::uint64_t generation() const { return generation_; }

  static Tape* active();

 private:
  struct Entry {
    std::shared_ptr<TensorNode> out;
    std::function<void(std::span<const double>, GradSink&)> back;
  };
  std::vector<Entry> entries_;
  std::uint64_t generation_ = 1;

  friend class TapeScope;
  friend void backward(const Tensor& root);
  friend Tensor make_op_output(std::vector<std::size_t>, std::vector<double>,
                               std::span<const Tensor>,
                               std::function<void(std::span<const double>, GradSink&)>);
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Checked mode: scan every op output for NaN/Inf. On in tests, off in
// training runs.
void set_checked_mode(bool on);
bool checked_mode();

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// same-shape add, or broadcast of a length-C vector over the rows of an
// R x C matrix
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor gelu(const Tensor& a);
Tensor exp_elem(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// normalizes the last axis; gamma/beta have that axis's length
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

// last axis; 1-D or 2-D input
Tensor log_softmax(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// sum of x[rows[i], cols[i]] over i; x 2-D
Tensor pick_sum(const Tensor& x, std::span<const int> rows, std::span<const int> cols);

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
Tensor concat_cols(std::span<const Tensor> parts);

// mean of scalar tensors (batch reduction)
Tensor mean_of(std::span<const Tensor> scalars);

void backward(const Tensor& root);

// Central finite differences over every coordinate of every param.
// f rebuilds the scalar loss from current param values. Returns the max
// relative discrepancy |analytic - numeric| / max(1e-12, s, |a| + |n|)
// where s is 1e-3 times the largest gradient magnitude — a floor that
// keeps roundoff on near-zero coordinates from drowning the comparison.
// Clobbers param grads.
double finite_diff_check(const std::function<Tensor()>& f,
                         std::vector<Tensor>& params, double eps);

}  // namespace poft
