#include "poft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace poft {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local bool g_checked_mode = false;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

bool is_tracked(const TensorNode& n) {
  if (n.requires_grad) return true;
  Tape* t = Tape::active();
  return t != nullptr && n.tape == t && n.tape_generation == t->generation() &&
         n.tape_index >= 0;
}

void check_finite(const TensorNode& n) {
  if (!g_checked_mode) return;
  for (double v : n.data) {
    if (!std::isfinite(v)) throw std::runtime_error("non-finite value produced by op");
  }
}

}  // namespace

Tape* Tape::active() { return g_active_tape; }

void Tape::clear() {
  entries_.clear();
  ++generation_;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void set_checked_mode(bool on) { g_checked_mode = on; }
bool checked_mode() { return g_checked_mode; }

double* GradSink::buffer_for(TensorNode& n) {
  Tape* t = Tape::active();
  if (t != nullptr && n.tape == t && n.tape_generation == t->generation() && n.tape_index >= 0) {
    auto& buf = scratch_[static_cast<std::size_t>(n.tape_index)];
    if (buf.empty()) buf.assign(n.data.size(), 0.0);
    return buf.data();
  }
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad.data();
}

// ---- construction ----

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  auto n = std::make_shared<TensorNode>();
  n->data.assign(shape_numel(shape), 0.0);
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size())
    throw std::invalid_argument("Tensor::from: shape does not match data length");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor t = zeros(std::move(shape));
  if (stddev > 0.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.node_->data) v = dist(rng);
  }
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() requires a scalar tensor");
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  return *this;
}

void Tensor::zero_grad() { node_->grad.clear(); }

// ---- op plumbing ----

Tensor make_op_output(std::vector<std::size_t> shape, std::vector<double> data,
                      std::span<const Tensor> inputs,
                      std::function<void(std::span<const double>, GradSink&)> back) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  check_finite(*node);

  Tape* tape = Tape::active();
  if (tape != nullptr) {
    bool any_tracked = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return is_tracked(*t.node()); });
    if (any_tracked) {
      node->tape = tape;
      node->tape_generation = tape->generation_;
      node->tape_index = static_cast<std::ptrdiff_t>(tape->entries_.size());
      tape->entries_.push_back({node, std::move(back)});
    }
  }
  return Tensor(std::move(node));
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

std::pair<std::size_t, std::size_t> rows_cols(const Tensor& t, const char* op) {
  if (t.shape().size() == 1) return {1, t.shape()[0]};
  if (t.shape().size() == 2) return {t.shape()[0], t.shape()[1]};
  throw std::invalid_argument(std::string(op) + ": expected 1-D or 2-D tensor");
}

}  // namespace

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &bd[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto an = a.node();
  auto bn = b.node();
  const Tensor ins[] = {a, b};
  return make_op_output(
      {m, n}, std::move(out), ins,
      [an, bn, m, k, n](std::span<const double> g, GradSink& sink) {
        if (double* ga = sink.buffer_for(*an)) {
          const auto& bd = bn->data;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gv = g[i * n + j];
              if (gv == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * bd[p * n + j];
            }
        }
        if (double* gb = sink.buffer_for(*bn)) {
          const auto& ad = an->data;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = ad[i * k + p];
              if (av == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("transpose: expected 2-D tensor");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const auto ad = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  auto an = a.node();
  const Tensor ins[] = {a};
  return make_op_output({n, m}, std::move(out), ins,
                        [an, m, n](std::span<const double> g, GradSink& sink) {
                          if (double* ga = sink.buffer_for(*an)) {
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                          }
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  // row-broadcast case: [R x C] + [C]
  if (a.shape().size() == 2 && b.shape().size() == 1 && a.shape()[1] == b.shape()[0]) {
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(r * c);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = ad[i * c + j] + bd[j];
    auto an = a.node();
    auto bn = b.node();
    const Tensor ins[] = {a, b};
    return make_op_output({r, c}, std::move(out), ins,
                          [an, bn, r, c](std::span<const double> g, GradSink& sink) {
                            if (double* ga = sink.buffer_for(*an))
                              for (std::size_t i = 0; i < r * c; ++i) ga[i] += g[i];
                            if (double* gb = sink.buffer_for(*bn))
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                          });
  }
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  const Tensor ins[] = {a, b};
  return make_op_output(a.shape(), std::move(out), ins,
                        [an, bn](std::span<const double> g, GradSink& sink) {
                          if (double* ga = sink.buffer_for(*an))
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          if (double* gb = sink.buffer_for(*bn))
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  const Tensor ins[] = {a, b};
  return make_op_output(a.shape(), std::move(out), ins,
                        [an, bn](std::span<const double> g, GradSink& sink) {
                          if (double* ga = sink.buffer_for(*an))
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          if (double* gb = sink.buffer_for(*bn))
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  const Tensor ins[] = {a, b};
  return make_op_output(a.shape(), std::move(out), ins,
                        [an, bn](std::span<const double> g, GradSink& sink) {
                          if (double* ga = sink.buffer_for(*an))
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
                          if (double* gb = sink.buffer_for(*bn))
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
                        });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto an = a.node();
  const Tensor ins[] = {a};
  return make_op_output(a.shape(), std::move(out), ins,
                        [an, c](std::span<const double> g, GradSink& sink) {
                          if (double* ga = sink.buffer_for(*an))
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
                        });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
  auto an = a.node();
  const Tensor ins[] = {a};
  return make_op_output(a.shape(), std::move(out), ins,
                        [an](std::span<const double> g, GradSink& sink) {
                          if (double* ga = sink.buffer_for(*an))
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  auto an = a.node();
  const Tensor ins[] = {a};
  return make_op_output(a.shape(), std::move(out), ins,
                        [an](std::span<const double> g, GradSink& sink) {
                          double* ga = sink.buffer_for(*an);
                          if (!ga) return;
                          constexpr double inv_sqrt_2pi = 0.3989422804014327;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const double x = an->data[i];
                            const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
                            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                            ga[i] += g[i] * (cdf + x * pdf);
                          }
                        });
}

Tensor exp_elem(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  auto an = a.node();
  auto outv = out;  // captured for the pullback
  const Tensor ins[] = {a};
  return make_op_output(a.shape(), std::move(out), ins,
                        [an, outv = std::move(outv)](std::span<const double> g, GradSink& sink) {
                          if (double* ga = sink.buffer_for(*an))
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * outv[i];
                        });
}

namespace {

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor softplus(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_softplus(a.data()[i]);
  auto an = a.node();
  const Tensor ins[] = {a};
  return make_op_output(a.shape(), std::move(out), ins,
                        [an](std::span<const double> g, GradSink& sink) {
                          if (double* ga = sink.buffer_for(*an))
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] += g[i] * stable_sigmoid(an->data[i]);
                        });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a.data()[i]);
  auto an = a.node();
  auto outv = out;
  const Tensor ins[] = {a};
  return make_op_output(a.shape(), std::move(out), ins,
                        [an, outv = std::move(outv)](std::span<const double> g, GradSink& sink) {
                          if (double* ga = sink.buffer_for(*an))
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] += g[i] * outv[i] * (1.0 - outv[i]);
                        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  auto [r, c] = rows_cols(x, "layer_norm");
  if (gamma.shape() != std::vector<std::size_t>{c} || beta.shape() != std::vector<std::size_t>{c})
    throw std::invalid_argument("layer_norm: gamma/beta shape mismatch");
  std::vector<double> out(r * c);
  std::vector<double> xhat(r * c);
  std::vector<double> inv_std(r);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xd[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xd[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xd[i * c + j] - mu) * inv;
      xhat[i * c + j] = h;
      out[i * c + j] = gd[j] * h + bd[j];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  const Tensor ins[] = {x, gamma, beta};
  return make_op_output(
      x.shape(), std::move(out), ins,
      [xn, gn, bn, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double> g, GradSink& sink) {
        double* gx = sink.buffer_for(*xn);
        double* gg = sink.buffer_for(*gn);
        double* gb = sink.buffer_for(*bn);
        for (std::size_t i = 0; i < r; ++i) {
          if (gg || gb) {
            for (std::size_t j = 0; j < c; ++j) {
              if (gg) gg[j] += g[i * c + j] * xhat[i * c + j];
              if (gb) gb[j] += g[i * c + j];
            }
          }
          if (gx) {
            double mean_gh = 0.0, mean_gh_xhat = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = g[i * c + j] * gn->data[j];
              mean_gh += gh;
              mean_gh_xhat += gh * xhat[i * c + j];
            }
            mean_gh /= static_cast<double>(c);
            mean_gh_xhat /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = g[i * c + j] * gn->data[j];
              gx[i * c + j] += inv_std[i] * (gh - mean_gh - xhat[i * c + j] * mean_gh_xhat);
            }
          }
        }
      });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.shape().size() != 2) throw std::invalid_argument("embedding_lookup: table must be 2-D");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw std::out_of_range("embedding_lookup: id out of vocabulary");
  const std::size_t t = ids.size();
  std::vector<double> out(t * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < t; ++i)
    std::copy_n(&td[static_cast<std::size_t>(ids[i]) * d], d, &out[i * d]);
  auto tn = table.node();
  std::vector<int> idv(ids.begin(), ids.end());
  const Tensor ins[] = {table};
  return make_op_output({t, d}, std::move(out), ins,
                        [tn, d, idv = std::move(idv)](std::span<const double> g, GradSink& sink) {
                          double* gt = sink.buffer_for(*tn);
                          if (!gt) return;
                          for (std::size_t i = 0; i < idv.size(); ++i)
                            for (std::size_t j = 0; j < d; ++j)
                              gt[static_cast<std::size_t>(idv[i]) * d + j] += g[i * d + j];
                        });
}

Tensor log_softmax(const Tensor& x) {
  auto [r, c] = rows_cols(x, "log_softmax");
  std::vector<double> out(r * c);
  const auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    double m = xd[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, xd[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xd[i * c + j] - m);
    const double lz = m + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xd[i * c + j] - lz;
  }
  auto xn = x.node();
  auto outv = out;
  const Tensor ins[] = {x};
  return make_op_output(x.shape(), std::move(out), ins,
                        [xn, r, c, outv = std::move(outv)](std::span<const double> g, GradSink& sink) {
                          double* gx = sink.buffer_for(*xn);
                          if (!gx) return;
                          for (std::size_t i = 0; i < r; ++i) {
                            double gsum = 0.0;
                            for (std::size_t j = 0; j < c; ++j) gsum += g[i * c + j];
                            for (std::size_t j = 0; j < c; ++j)
                              gx[i * c + j] += g[i * c + j] - std::exp(outv[i * c + j]) * gsum;
                          }
                        });
}

Tensor sum(const Tensor& x) {
  double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  auto xn = x.node();
  const Tensor ins[] = {x};
  return make_op_output({1}, {s}, ins, [xn](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.buffer_for(*xn))
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double s = std::accumulate(x.data().begin(), x.data().end(), 0.0) / n;
  auto xn = x.node();
  const Tensor ins[] = {x};
  return make_op_output({1}, {s}, ins, [xn, n](std::span<const double> g, GradSink& sink) {
    if (double* gx = sink.buffer_for(*xn))
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += g[0] / n;
  });
}

Tensor pick_sum(const Tensor& x, std::span<const int> rows, std::span<const int> cols) {
  if (x.shape().size() != 2) throw std::invalid_argument("pick_sum: expected 2-D tensor");
  if (rows.size() != cols.size()) throw std::invalid_argument("pick_sum: index length mismatch");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  double s = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= r || cols[i] < 0 ||
        static_cast<std::size_t>(cols[i]) >= c)
      throw std::out_of_range("pick_sum: index out of range");
    s += x.data()[static_cast<std::size_t>(rows[i]) * c + static_cast<std::size_t>(cols[i])];
  }
  auto xn = x.node();
  std::vector<int> rv(rows.begin(), rows.end());
  std::vector<int> cv(cols.begin(), cols.end());
  const Tensor ins[] = {x};
  return make_op_output({1}, {s}, ins,
                        [xn, c, rv = std::move(rv), cv = std::move(cv)](std::span<const double> g,
                                                                        GradSink& sink) {
                          double* gx = sink.buffer_for(*xn);
                          if (!gx) return;
                          for (std::size_t i = 0; i < rv.size(); ++i)
                            gx[static_cast<std::size_t>(rv[i]) * c +
                               static_cast<std::size_t>(cv[i])] += g[0];
                        });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  if (x.shape().size() != 2) throw std::invalid_argument("slice_cols: expected 2-D tensor");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (start + len > c) throw std::out_of_range("slice_cols: range out of bounds");
  std::vector<double> out(r * len);
  const auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(&xd[i * c + start], len, &out[i * len]);
  auto xn = x.node();
  const Tensor ins[] = {x};
  return make_op_output({r, len}, std::move(out), ins,
                        [xn, r, c, start, len](std::span<const double> g, GradSink& sink) {
                          double* gx = sink.buffer_for(*xn);
                          if (!gx) return;
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < len; ++j)
                              gx[i * c + start + j] += g[i * len + j];
                        });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t r = parts[0].shape()[0];
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != r)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += p.shape()[1];
  }
  std::vector<double> out(r * total);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.shape()[1];
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(&p.data()[i * pc], pc, &out[i * total + off]);
    off += pc;
  }
  std::vector<std::shared_ptr<TensorNode>> nodes;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.shape()[1]);
  }
  return make_op_output(
      {r, total}, std::move(out), parts,
      [nodes = std::move(nodes), widths = std::move(widths), r, total](std::span<const double> g,
                                                                       GradSink& sink) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (double* gp = sink.buffer_for(*nodes[k])) {
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j)
                gp[i * widths[k] + j] += g[i * total + off + j];
          }
          off += widths[k];
        }
      });
}

Tensor mean_of(std::span<const Tensor> scalars) {
  if (scalars.empty()) throw std::invalid_argument("mean_of: empty batch");
  const double n = static_cast<double>(scalars.size());
  double s = 0.0;
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const Tensor& t : scalars) {
    s += t.item();
    nodes.push_back(t.node());
  }
  return make_op_output({1}, {s / n}, scalars,
                        [nodes = std::move(nodes), n](std::span<const double> g, GradSink& sink) {
                          for (auto& node : nodes)
                            if (double* gp = sink.buffer_for(*node)) gp[0] += g[0] / n;
                        });
}

// ---- backward ----

void backward(const Tensor& root) {
  if (root.size() != 1) throw std::invalid_argument("backward: root must be scalar");
  TensorNode& rn = *root.node();
  Tape* tape = Tape::active();
  const bool on_tape = tape != nullptr && rn.tape == tape &&
                       rn.tape_generation == tape->generation() && rn.tape_index >= 0;
  if (!on_tape) {
    if (rn.requires_grad) {
      if (rn.grad.empty()) rn.grad.assign(1, 0.0);
      rn.grad[0] += 1.0;
    }
    return;
  }
  std::vector<std::vector<double>> scratch(static_cast<std::size_t>(rn.tape_index) + 1);
  scratch[static_cast<std::size_t>(rn.tape_index)] = {1.0};
  GradSink sink(scratch);
  for (std::ptrdiff_t i = rn.tape_index; i >= 0; --i) {
    auto& buf = scratch[static_cast<std::size_t>(i)];
    if (buf.empty()) continue;
    tape->entries_[static_cast<std::size_t>(i)].back(buf, sink);
    buf.clear();
    buf.shrink_to_fit();
  }
}

double finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor>& params,
                         double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be positive");
  Tape tape;
  std::vector<std::vector<double>> analytic;
  {
    TapeScope scope(tape);
    Tensor loss = f();
    if (!std::isfinite(loss.item()))
      throw std::runtime_error("finite_diff_check: non-finite function value");
    for (Tensor& p : params) p.zero_grad();
    backward(loss);
  }
  for (Tensor& p : params) {
    if (p.has_grad())
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    else
      analytic.emplace_back(p.size(), 0.0);
  }

  // near-zero coordinates are dominated by roundoff in f itself, so the
  // discrepancy is measured against the gradient's overall scale as a floor
  double grad_scale = 0.0;
  for (const auto& g : analytic)
    for (double v : g) grad_scale = std::max(grad_scale, std::abs(v));

  auto eval = [&]() {
    Tensor v = f();  // no active tape: pure evaluation
    double x = v.item();
    if (!std::isfinite(x)) throw std::runtime_error("finite_diff_check: non-finite function value");
    return x;
  };

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto pdata = params[pi].data();
    for (std::size_t i = 0; i < pdata.size(); ++i) {
      const double orig = pdata[i];
      pdata[i] = orig + eps;
      const double fp = eval();
      pdata[i] = orig - eps;
      const double fm = eval();
      pdata[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) /
                         std::max({1e-12, 1e-3 * grad_scale, std::abs(a) + std::abs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace poft
