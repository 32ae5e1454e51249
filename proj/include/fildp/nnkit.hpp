// Copyright 2026 The fildp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fildp/core.hpp"
#include "fildp/rng.hpp"

#ifdef FILDP_USE_CBLAS
#include <cblas.h>
#endif

namespace fildp {

// Minimal dense-matrix toolkit used by the encoders and the attention
// network.  Everything is double precision and row-major; matrix products
// are backed by BLAS when available (pinned to one thread so results do not
// depend on scheduling) with portable loops as fallback.

class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double* row(std::size_t i) { return v_.data() + i * cols_; }
  const double* row(std::size_t i) const { return v_.data() + i * cols_; }

  double& operator()(std::size_t i, std::size_t j) { return v_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v_[i * cols_ + j]; }

  void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

  bool same_shape(const Tensor2& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> v_;
};

#ifdef FILDP_USE_CBLAS
namespace detail {
// OpenBLAS is pinned to a single thread once per process: the acceptance
// runs must be bit-reproducible, and multi-threaded reductions reorder sums.
inline bool pin_blas_threads() {
  openblas_set_num_threads(1);
  return true;
}
inline const bool blas_pinned = pin_blas_threads();
}  // namespace detail
#endif

// C = alpha * op(A) * op(B) + beta * C with op in {identity, transpose}.
inline void gemm(bool trans_a, bool trans_b, double alpha, const Tensor2& a,
                 const Tensor2& b, double beta, Tensor2& c) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb || c.rows() != m || c.cols() != n) {
    throw Error("nnkit: gemm shape mismatch");
  }
  if (m == 0 || n == 0) return;
#ifdef FILDP_USE_CBLAS
  (void)detail::blas_pinned;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a.data(),
              static_cast<int>(a.cols()), b.data(), static_cast<int>(b.cols()),
              beta, c.data(), static_cast<int>(c.cols()));
#else
  if (beta == 0.0) {
    c.fill(0.0);
  } else if (beta != 1.0) {
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= beta;
  }
  auto at_a = [&](std::size_t i, std::size_t p) {
    return trans_a ? a(p, i) : a(i, p);
  };
  auto at_b = [&](std::size_t p, std::size_t j) {
    return trans_b ? b(j, p) : b(p, j);
  };
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = alpha * at_a(i, p);
      if (av == 0.0) continue;
      double* crow = c.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * at_b(p, j);
      }
    }
  }
#endif
}

inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  Tensor2 c(a.rows(), b.cols());
  gemm(false, false, 1.0, a, b, 0.0, c);
  return c;
}

// A * B^T; the natural orientation for row-major dense layers.
inline Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  Tensor2 c(a.rows(), b.rows());
  gemm(false, true, 1.0, a, b, 0.0, c);
  return c;
}

// A^T * B; the natural orientation for weight gradients.
inline Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  Tensor2 c(a.cols(), b.cols());
  gemm(true, false, 1.0, a, b, 0.0, c);
  return c;
}

// Y = X * W^T + b, with W stored out x in and b stored 1 x out.
inline Tensor2 dense_forward(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
  if (x.cols() != w.cols() || b.rows() != 1 || b.cols() != w.rows()) {
    throw Error("nnkit: dense shape mismatch");
  }
  Tensor2 y(x.rows(), w.rows());
  gemm(false, true, 1.0, x, w, 0.0, y);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double* yr = y.row(i);
    for (std::size_t j = 0; j < y.cols(); ++j) yr[j] += b(0, j);
  }
  return y;
}

// Backward of the dense layer.  dW and db accumulate (+=) so several passes
// can share one gradient buffer; dx is overwritten when non-null.
inline void dense_backward(const Tensor2& x, const Tensor2& w, const Tensor2& dy,
                           Tensor2* dx, Tensor2& dw, Tensor2& db) {
  if (!dw.same_shape(w) || db.cols() != w.rows()) {
    throw Error("nnkit: dense backward shape mismatch");
  }
  gemm(true, false, 1.0, dy, x, 1.0, dw);  // dW += dY^T X
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    const double* r = dy.row(i);
    for (std::size_t j = 0; j < dy.cols(); ++j) db(0, j) += r[j];
  }
  if (dx != nullptr) {
    *dx = Tensor2(x.rows(), x.cols());
    gemm(false, false, 1.0, dy, w, 0.0, *dx);  // dX = dY W
  }
}

// Exponential linear unit.  The backward form uses the activation output:
// elu'(x) = 1 for x > 0 and elu(x) + 1 otherwise.
inline double elu(double x) { return x > 0 ? x : std::expm1(x); }

inline Tensor2 elu_forward(const Tensor2& x) {
  Tensor2 y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = elu(y.data()[i]);
  return y;
}

inline Tensor2 elu_backward(const Tensor2& out, const Tensor2& dy) {
  if (!out.same_shape(dy)) throw Error("nnkit: elu backward shape mismatch");
  Tensor2 dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double o = out.data()[i];
    dx.data()[i] *= (o > 0 ? 1.0 : o + 1.0);
  }
  return dx;
}

inline double leaky_relu(double x, double slope) { return x > 0 ? x : slope * x; }
inline double leaky_relu_grad(double x, double slope) { return x > 0 ? 1.0 : slope; }

// Numerically stable row-wise softmax.
inline Tensor2 softmax_rows(const Tensor2& x) {
  Tensor2 y = x;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double* r = y.row(i);
    double mx = r[0];
    for (std::size_t j = 1; j < y.cols(); ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (std::size_t j = 0; j < y.cols(); ++j) r[j] /= sum;
  }
  return y;
}

// Inverted dropout: kept entries are scaled by 1/(1-rate) so the expected
// value is unchanged and inference needs no rescaling.  rate == 0 draws
// nothing and returns an all-ones mask.
inline std::pair<Tensor2, Tensor2> dropout_forward(const Tensor2& x, double rate,
                                                   RngStream& rng) {
  if (rate < 0.0 || rate >= 1.0) throw Error("nnkit: dropout rate must be in [0,1)");
  Tensor2 mask(x.rows(), x.cols(), 1.0);
  if (rate > 0.0) {
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask.data()[i] = rng.uniform01() < rate ? 0.0 : keep_scale;
    }
  }
  Tensor2 y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] *= mask.data()[i];
  return {std::move(y), std::move(mask)};
}

inline Tensor2 dropout_backward(const Tensor2& mask, const Tensor2& dy) {
  if (!mask.same_shape(dy)) throw Error("nnkit: dropout backward shape mismatch");
  Tensor2 dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] *= mask.data()[i];
  return dx;
}

// Class-weighted focal loss on two-class logits.
//
//   L = -alpha_y (1 - p_y)^gamma log p_y,   p = softmax(z)
//
// averaged over rows; returns the loss and the gradient wrt logits.
// gamma = 0 with unit weights reduces to cross-entropy.
struct FocalLossParams {
  double gamma = 2.0;
  double alpha_pos = 0.5;
  double alpha_neg = 0.5;
};

struct FocalResult {
  double loss = 0.0;
  Tensor2 dlogits;
};

inline FocalResult focal_loss(const Tensor2& logits, const std::vector<int>& labels,
                              const FocalLossParams& p) {
  if (logits.cols() != 2 || logits.rows() != labels.size() || labels.empty()) {
    throw Error("nnkit: focal loss expects n x 2 logits with matching labels");
  }
  const double n = static_cast<double>(logits.rows());
  FocalResult out;
  out.dlogits = Tensor2(logits.rows(), 2);
  const Tensor2 probs = softmax_rows(logits);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw Error("nnkit: focal loss labels must be 0/1");
    const double alpha = y == 1 ? p.alpha_pos : p.alpha_neg;
    double pt = probs(i, static_cast<std::size_t>(y));
    pt = std::min(std::max(pt, 1e-12), 1.0 - 1e-12);
    const double one_m = 1.0 - pt;
    const double logpt = std::log(pt);
    out.loss += -alpha * std::pow(one_m, p.gamma) * logpt / n;
    // dL/dp_t, then chain through softmax: dp_t/dz_k = p_t (1[k=y] - p_k).
    const double dldpt =
        (p.gamma > 0.0 ? alpha * p.gamma * std::pow(one_m, p.gamma - 1.0) * logpt : 0.0) -
        alpha * std::pow(one_m, p.gamma) / pt;
    for (int k = 0; k < 2; ++k) {
      const double ind = (k == y) ? 1.0 : 0.0;
      out.dlogits(i, k) = dldpt * pt * (ind - probs(i, k)) / n;
    }
  }
  if (!std::isfinite(out.loss)) throw Error("nnkit: non-finite focal loss");
  return out;
}

// Named parameter registry with per-parameter Adam state.
struct ParamEntry {
  std::string name;
  Tensor2 value, grad, m, v;
};

class ParamStore {
 public:
  Tensor2& add(const std::string& name, std::size_t rows, std::size_t cols) {
    if (by_name_.count(name)) throw Error("nnkit: duplicate parameter '" + name + "'");
    by_name_[name] = entries_.size();
    entries_.push_back(ParamEntry{name, Tensor2(rows, cols), Tensor2(rows, cols),
                                  Tensor2(rows, cols), Tensor2(rows, cols)});
    return entries_.back().value;
  }

  bool has(const std::string& name) const { return by_name_.count(name) != 0; }

  Tensor2& value(const std::string& name) { return entry(name).value; }
  const Tensor2& value(const std::string& name) const { return entry(name).value; }
  Tensor2& grad(const std::string& name) { return entry(name).grad; }

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

  std::int64_t step() const { return step_; }
  std::int64_t& mutable_step() { return step_; }

  // Text checkpoint of parameter values; %.17g round-trips doubles exactly.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("nnkit: cannot write checkpoint '" + path + "'");
    out << "fildp-params 1 " << entries_.size() << "\n";
    for (const auto& e : entries_) {
      out << e.name << " " << e.value.rows() << " " << e.value.cols() << "\n";
      for (std::size_t i = 0; i < e.value.rows(); ++i) {
        const double* r = e.value.row(i);
        for (std::size_t j = 0; j < e.value.cols(); ++j) {
          out << (j ? " " : "") << detail::fmt_double(r[j]);
        }
        out << "\n";
      }
    }
  }

  // Loads values into matching parameters; shapes and names must agree.
  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("nnkit: cannot open checkpoint '" + path + "'");
    std::string magic;
    int version = 0;
    std::size_t count = 0;
    in >> magic >> version >> count;
    if (magic != "fildp-params" || version != 1) {
      throw Error("nnkit: '" + path + "' is not a parameter checkpoint");
    }
    if (count != entries_.size()) {
      throw Error("nnkit: checkpoint has " + std::to_string(count) +
                  " parameters, store has " + std::to_string(entries_.size()));
    }
    for (auto& e : entries_) {
      std::string name;
      std::size_t rows = 0, cols = 0;
      in >> name >> rows >> cols;
      if (!in || name != e.name || rows != e.value.rows() || cols != e.value.cols()) {
        throw Error("nnkit: checkpoint entry mismatch at '" + e.name + "'");
      }
      for (std::size_t i = 0; i < rows * cols; ++i) {
        if (!(in >> e.value.data()[i])) {
          throw Error("nnkit: truncated checkpoint '" + path + "'");
        }
      }
    }
  }

 private:
  ParamEntry& entry(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error("nnkit: unknown parameter '" + name + "'");
    return entries_[it->second];
  }
  const ParamEntry& entry(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error("nnkit: unknown parameter '" + name + "'");
    return entries_[it->second];
  }

  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> by_name_;
  std::int64_t step_ = 0;
};

// Glorot/Xavier uniform initialization for a weight matrix stored out x in.
inline void glorot_init(Tensor2& w, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
}

// One Adam step with decoupled weight decay over every parameter.
inline void adam_step(ParamStore& store, double lr, double weight_decay,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  const std::int64_t t = ++store.mutable_step();
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& e : store.entries()) {
    double* p = e.value.data();
    double* g = e.grad.data();
    double* m = e.m.data();
    double* v = e.v.data();
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]);
    }
  }
}

// Class-balancing batch sampler: each slot is minority with the configured
// probability, then a member of that class is drawn uniformly.  A negative
// fraction requests plain uniform sampling over all items.
class WeightedSampler {
 public:
  WeightedSampler(const std::vector<int>& labels, double minority_fraction)
      : minority_fraction_(minority_fraction) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      (labels[i] == 1 ? pos_ : neg_).push_back(i);
    }
    if (labels.empty()) throw Error("nnkit: sampler needs a non-empty label set");
    if (minority_fraction_ >= 0.0 && (pos_.empty() || neg_.empty())) {
      throw Error("nnkit: class-balanced sampler needs both classes present");
    }
    all_.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) all_[i] = i;
  }

  std::vector<std::size_t> sample_batch(std::size_t batch_size, RngStream& rng) const {
    std::vector<std::size_t> out(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      if (minority_fraction_ < 0.0) {
        out[i] = all_[rng.index(all_.size())];
      } else if (rng.uniform01() < minority_fraction_) {
        out[i] = pos_[rng.index(pos_.size())];
      } else {
        out[i] = neg_[rng.index(neg_.size())];
      }
    }
    return out;
  }

 private:
  std::vector<std::size_t> pos_, neg_, all_;
  double minority_fraction_;
};

// Central-difference gradient verification.
//
// The caller populates analytic gradients (one backward pass), then supplies
// a pure loss closure; every parameter coordinate is perturbed by
// h = 1e-5 * max(1, |theta|) and compared under a relative error with the
// denominator floored at 1 so near-zero gradients are judged absolutely.
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::vector<std::pair<std::string, double>> per_param;

  bool ok(double tol) const { return max_rel_error < tol; }
};

inline GradCheckReport grad_check(ParamStore& store,
                                  const std::function<double()>& loss_fn) {
  GradCheckReport report;
  for (auto& e : store.entries()) {
    double param_max = 0.0;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double theta = e.value.data()[i];
      const double h = 1e-5 * std::max(1.0, std::abs(theta));
      e.value.data()[i] = theta + h;
      const double fp = loss_fn();
      e.value.data()[i] = theta - h;
      const double fm = loss_fn();
      e.value.data()[i] = theta;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw Error("nnkit: non-finite loss during gradient check");
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = e.grad.data()[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      if (rel > param_max) param_max = rel;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = e.name;
        report.worst_index = i;
      }
    }
    report.per_param.emplace_back(e.name, param_max);
  }
  return report;
}

}  // namespace fildp
