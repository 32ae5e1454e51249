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

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "fildp/core.hpp"
#include "fildp/nnkit.hpp"
#include "fildp/rng.hpp"

namespace fildp {

// Two-modality record encoder.
//
// Image branch: a fixed bank of patch statistics, standardized on the
// training split, followed by one trainable dense layer with elu, giving a
// d_img-dimensional embedding.  Context branch: melt-pool state descriptors
// plus build position, standardized the same way, then one dense layer with
// elu to d_ctx dimensions.  A linear two-way head on the fused vector is
// trained for a few warm-up epochs; its absolute weights, averaged over the
// two output units, give the per-dimension importance prior.
//
// The embedding is deliberately concentrated.  The release noise scale is
// proportional to the joint clip bound over the whole fused vector, so
// spreading the defect evidence across many coordinates multiplies the
// sensitivity of every coordinate without adding per-coordinate signal.
// Each branch therefore funnels its evidence into a single anchored
// coordinate - a cold-peak anomaly channel for the image branch and a
// shape-anomaly channel for the context branch - initialized as a scaled
// standardized statistic and refined by the warm-up epochs.  All remaining
// coordinates start with exactly zero weights: they produce constant-zero
// activations, so they contribute neither clip sensitivity nor head
// gradient, and they stay dead unless the head first finds signal there.

inline constexpr int kPatchStatCount = 16;

// Warm-up optimizer step size.  Warm-up deliberately uses plain SGD rather
// than Adam: with a zero-initialized head, SGD leaves |W_hd| proportional to
// the accumulated gradient, so strongly discriminative coordinates end up
// with proportionally larger importance.  Adam's per-coordinate step
// normalization would push every weakly informative weight at the same rate
// and flatten the prior.
inline constexpr double kWarmupLearningRate = 0.5;

// Fixed patch statistic bank over the normalized patch (v - lo) / (hi - lo):
//   0 peak, 1 mean, 2 stddev,
//   3-5 fractions above 0.35 / 0.55 / 0.75,
//   6-7 weighted centroid offsets (rows, cols; weights max(0, value - mean)),
//   8-10 normalized second central moments (rr, cc, rc),
//   11 eccentricity proxy sqrt(1 - lmin/lmax) of the moment matrix,
//   12-15 mean intensity in four concentric radial bands.
inline std::vector<double> patch_statistics(const std::vector<double>& patch, int h,
                                            int w, double lo, double hi) {
  if (h <= 0 || w <= 0 || patch.size() != static_cast<std::size_t>(h) * w) {
    throw Error("encoder: patch size mismatch");
  }
  if (hi <= lo) throw Error("encoder: invalid intensity range");
  const double range = hi - lo;
  const double n = static_cast<double>(patch.size());
  std::vector<double> t(patch.size());
  for (std::size_t i = 0; i < patch.size(); ++i) t[i] = (patch[i] - lo) / range;

  std::vector<double> s(kPatchStatCount, 0.0);
  double peak = t[0], sum = 0.0, sq = 0.0;
  for (double v : t) {
    peak = std::max(peak, v);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  s[0] = peak;
  s[1] = mean;
  s[2] = std::sqrt(std::max(0.0, sq / n - mean * mean));
  for (double v : t) {
    s[3] += (v > 0.35) ? 1.0 : 0.0;
    s[4] += (v > 0.55) ? 1.0 : 0.0;
    s[5] += (v > 0.75) ? 1.0 : 0.0;
  }
  s[3] /= n;
  s[4] /= n;
  s[5] /= n;

  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  double wsum = 0.0, wr = 0.0, wc = 0.0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double wgt = std::max(0.0, t[static_cast<std::size_t>(r) * w + c] - mean);
      wsum += wgt;
      wr += wgt * r;
      wc += wgt * c;
    }
  }
  const double cr = wsum > 0 ? wr / wsum : cy;
  const double cc = wsum > 0 ? wc / wsum : cx;
  s[6] = (cr - cy) / (0.5 * h);
  s[7] = (cc - cx) / (0.5 * w);

  double mrr = 0.0, mcc = 0.0, mrc = 0.0;
  if (wsum > 0) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double wgt = std::max(0.0, t[static_cast<std::size_t>(r) * w + c] - mean);
        mrr += wgt * (r - cr) * (r - cr);
        mcc += wgt * (c - cc) * (c - cc);
        mrc += wgt * (r - cr) * (c - cc);
      }
    }
    mrr /= wsum;
    mcc /= wsum;
    mrc /= wsum;
  }
  s[8] = mrr / (0.25 * h * h);
  s[9] = mcc / (0.25 * w * w);
  s[10] = mrc / (0.25 * h * w);
  const double tr = 0.5 * (mrr + mcc);
  const double disc =
      std::sqrt(std::max(0.0, 0.25 * (mrr - mcc) * (mrr - mcc) + mrc * mrc));
  const double lmax = tr + disc, lmin = tr - disc;
  s[11] = lmax > 0 ? std::sqrt(std::max(0.0, 1.0 - lmin / lmax)) : 0.0;

  const double rmax = 0.5 * std::min(h, w);
  double band_sum[4] = {0, 0, 0, 0};
  double band_cnt[4] = {0, 0, 0, 0};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double d = std::sqrt((r - cy) * (r - cy) + (c - cx) * (c - cx));
      int band = static_cast<int>(std::floor(4.0 * d / rmax));
      band = std::min(band, 3);
      band_sum[band] += t[static_cast<std::size_t>(r) * w + c];
      band_cnt[band] += 1.0;
    }
  }
  for (int b = 0; b < 4; ++b) {
    // Bands that hold no pixels (possible on very small patches) fall back
    // to the global mean, a neutral value rather than an artificial zero.
    s[12 + b] = band_cnt[b] > 0 ? band_sum[b] / band_cnt[b] : mean;
  }
  return s;
}

// Column-wise standardization fitted on the training split.
class Standardizer {
 public:
  void fit(const Tensor2& rows) {
    if (rows.rows() == 0 || rows.cols() == 0) {
      throw Error("encoder: cannot fit a standardizer on empty data");
    }
    mean_.assign(rows.cols(), 0.0);
    std_.assign(rows.cols(), 0.0);
    const double n = static_cast<double>(rows.rows());
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      for (std::size_t j = 0; j < rows.cols(); ++j) mean_[j] += rows(i, j);
    }
    for (double& m : mean_) m /= n;
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      for (std::size_t j = 0; j < rows.cols(); ++j) {
        const double d = rows(i, j) - mean_[j];
        std_[j] += d * d;
      }
    }
    for (double& v : std_) {
      v = std::sqrt(v / n);
      if (v == 0.0) v = 1.0;  // constant columns pass through as zeros
    }
    fitted_ = true;
  }

  bool fitted() const { return fitted_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }
  void set(std::vector<double> mean, std::vector<double> stddev) {
    mean_ = std::move(mean);
    std_ = std::move(stddev);
    fitted_ = true;
  }

  Tensor2 apply(const Tensor2& rows) const {
    if (!fitted_) throw Error("encoder: standardizer used before fit");
    if (rows.cols() != mean_.size()) throw Error("encoder: standardizer width mismatch");
    Tensor2 out = rows;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t j = 0; j < out.cols(); ++j) {
        out(i, j) = (out(i, j) - mean_[j]) / std_[j];
      }
    }
    return out;
  }

 private:
  std::vector<double> mean_, std_;
  bool fitted_ = false;
};

// Anchor channels: input statistic, its embedding coordinate, and the
// initial gain.  The image anchor reads the standardized patch peak with a
// negative gain, so cold melt pools land on the linear (positive) side of
// the elu while the unremarkable bulk is compressed toward -1; that keeps
// the clip bound tight around the informative tail.  The context anchor
// reads the standardized moment eccentricity with a positive gain for the
// same reason: elongated pools are the anomalous tail.
inline constexpr int kImgAnchorStat = 0;   // patch peak statistic
inline constexpr int kCtxAnchorInput = 3;  // moment eccentricity descriptor
inline constexpr double kAnchorGain = 2.0;

struct EncoderModel {
  int d_img = 0;
  int d_ctx = 0;
  int d_state = 0;  // state descriptors per record; context input is d_state + 3
  Standardizer img_std;
  Standardizer ctx_std;
  ParamStore params;  // img_w, img_b, ctx_w, ctx_b, head_w, head_b

  int fused_dim() const { return d_img + d_ctx; }
  int ctx_in() const { return d_state + 3; }

  // Concentrated start: one anchored coordinate per branch, every other
  // weight exactly zero.  Dead coordinates emit elu(0) = 0 for every record,
  // so the zero-initialized head receives exactly zero gradient for them and
  // they remain dead through training; the anchor rows receive real
  // gradients and learn to blend in the other statistics.
  static void concentrated_init(Tensor2& w, int anchor_row, int anchor_input,
                                double gain) {
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = 0.0;
    w(static_cast<std::size_t>(anchor_row), static_cast<std::size_t>(anchor_input)) =
        gain;
  }

  void init(int dim_img, int dim_ctx, int dim_state) {
    d_img = dim_img;
    d_ctx = dim_ctx;
    d_state = dim_state;
    concentrated_init(params.add("img_w", d_img, kPatchStatCount), 0, kImgAnchorStat,
                      -kAnchorGain);
    params.add("img_b", 1, d_img);
    concentrated_init(params.add("ctx_w", d_ctx, ctx_in()), 0, kCtxAnchorInput,
                      kAnchorGain);
    params.add("ctx_b", 1, d_ctx);
    // The head starts at zero so that the trained |W| reflects accumulated
    // gradient signal (the importance prior) instead of initialization noise.
    params.add("head_w", 2, fused_dim());
    params.add("head_b", 1, 2);
  }

  // Checkpoints bundle the trainable tensors with both fitted standardizers.
  void save(const std::string& path) const {
    ParamStore snapshot;
    for (const auto& e : params.entries()) {
      snapshot.add(e.name, e.value.rows(), e.value.cols()) = e.value;
    }
    if (!img_std.fitted() || !ctx_std.fitted()) {
      throw Error("encoder: cannot save an unfitted model");
    }
    const auto pack = [&snapshot](const std::string& prefix, const Standardizer& s) {
      Tensor2& mean = snapshot.add(prefix + "_mean", 1, s.mean().size());
      Tensor2& stdv = snapshot.add(prefix + "_stddev", 1, s.stddev().size());
      for (std::size_t j = 0; j < s.mean().size(); ++j) {
        mean(0, j) = s.mean()[j];
        stdv(0, j) = s.stddev()[j];
      }
    };
    pack("img", img_std);
    pack("ctx", ctx_std);
    snapshot.save(path);
  }

  void load(const std::string& path) {
    ParamStore snapshot;
    for (const auto& e : params.entries()) {
      snapshot.add(e.name, e.value.rows(), e.value.cols());
    }
    snapshot.add("img_mean", 1, static_cast<std::size_t>(kPatchStatCount));
    snapshot.add("img_stddev", 1, static_cast<std::size_t>(kPatchStatCount));
    snapshot.add("ctx_mean", 1, static_cast<std::size_t>(ctx_in()));
    snapshot.add("ctx_stddev", 1, static_cast<std::size_t>(ctx_in()));
    snapshot.load(path);
    for (auto& e : params.entries()) {
      e.value = snapshot.value(e.name);
    }
    const auto unpack = [&snapshot](const std::string& prefix, int width,
                                    Standardizer& s) {
      std::vector<double> mean(width), stdv(width);
      for (int j = 0; j < width; ++j) {
        mean[j] = snapshot.value(prefix + "_mean")(0, j);
        stdv[j] = snapshot.value(prefix + "_stddev")(0, j);
      }
      s.set(std::move(mean), std::move(stdv));
    };
    unpack("img", kPatchStatCount, img_std);
    unpack("ctx", ctx_in(), ctx_std);
  }
};

// Raw (unstandardized) context inputs: state descriptors then layer index
// and in-layer position.
inline std::vector<double> context_raw(const Record& r) {
  std::vector<double> v = r.state;
  v.push_back(static_cast<double>(r.layer));
  v.push_back(r.pos_y);
  v.push_back(r.pos_z);
  return v;
}

inline Tensor2 stats_matrix(const std::vector<Record>& records, double lo, double hi) {
  if (records.empty()) throw Error("encoder: no records");
  Tensor2 out(records.size(), kPatchStatCount);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Record& r = records[i];
    const std::vector<double> s =
        patch_statistics(r.patch, r.patch_h, r.patch_w, lo, hi);
    for (int j = 0; j < kPatchStatCount; ++j) out(i, j) = s[j];
  }
  return out;
}

inline Tensor2 context_matrix(const std::vector<Record>& records, int d_state) {
  if (records.empty()) throw Error("encoder: no records");
  Tensor2 out(records.size(), static_cast<std::size_t>(d_state) + 3);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::vector<double> v = context_raw(records[i]);
    if (v.size() != out.cols()) {
      throw Error("encoder: record " + std::to_string(records[i].id) +
                  " has mismatched state size");
    }
    for (std::size_t j = 0; j < v.size(); ++j) out(i, j) = v[j];
  }
  return out;
}

// Forward pass over precomputed inputs; caches are kept for the backward.
struct WarmupForward {
  Tensor2 img_emb, ctx_emb, fused, logits;
};

inline WarmupForward warmup_forward(const EncoderModel& m, const Tensor2& stats,
                                    const Tensor2& ctx_standardized) {
  WarmupForward f;
  f.img_emb = elu_forward(
      dense_forward(stats, m.params.value("img_w"), m.params.value("img_b")));
  f.ctx_emb = elu_forward(dense_forward(ctx_standardized, m.params.value("ctx_w"),
                                        m.params.value("ctx_b")));
  f.fused = Tensor2(stats.rows(), m.fused_dim());
  for (std::size_t i = 0; i < f.fused.rows(); ++i) {
    for (int j = 0; j < m.d_img; ++j) f.fused(i, j) = f.img_emb(i, j);
    for (int j = 0; j < m.d_ctx; ++j) f.fused(i, m.d_img + j) = f.ctx_emb(i, j);
  }
  f.logits = dense_forward(f.fused, m.params.value("head_w"), m.params.value("head_b"));
  return f;
}

inline void warmup_backward(EncoderModel& m, const Tensor2& stats,
                            const Tensor2& ctx_standardized, const WarmupForward& f,
                            const Tensor2& dlogits) {
  Tensor2 dfused;
  dense_backward(f.fused, m.params.value("head_w"), dlogits, &dfused,
                 m.params.grad("head_w"), m.params.grad("head_b"));
  Tensor2 dimg(f.img_emb.rows(), f.img_emb.cols());
  Tensor2 dctx(f.ctx_emb.rows(), f.ctx_emb.cols());
  for (std::size_t i = 0; i < dfused.rows(); ++i) {
    for (int j = 0; j < m.d_img; ++j) dimg(i, j) = dfused(i, j);
    for (int j = 0; j < m.d_ctx; ++j) dctx(i, j) = dfused(i, m.d_img + j);
  }
  const Tensor2 dimg_pre = elu_backward(f.img_emb, dimg);
  const Tensor2 dctx_pre = elu_backward(f.ctx_emb, dctx);
  dense_backward(stats, m.params.value("img_w"), dimg_pre, nullptr,
                 m.params.grad("img_w"), m.params.grad("img_b"));
  dense_backward(ctx_standardized, m.params.value("ctx_w"), dctx_pre, nullptr,
                 m.params.grad("ctx_w"), m.params.grad("ctx_b"));
}

// Cross-entropy with label smoothing: target (1-s)*onehot + s/2.
struct SmoothedCeResult {
  double loss = 0.0;
  Tensor2 dlogits;
};

inline SmoothedCeResult smoothed_ce(const Tensor2& logits, const std::vector<int>& labels,
                                    double smoothing) {
  if (logits.cols() != 2 || logits.rows() != labels.size() || labels.empty()) {
    throw Error("encoder: smoothed_ce expects n x 2 logits with matching labels");
  }
  const double n = static_cast<double>(logits.rows());
  SmoothedCeResult out;
  out.dlogits = Tensor2(logits.rows(), 2);
  const Tensor2 probs = softmax_rows(logits);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw Error("encoder: labels must be 0/1");
    for (int k = 0; k < 2; ++k) {
      const double target = (1.0 - smoothing) * (k == y ? 1.0 : 0.0) + 0.5 * smoothing;
      const double p = std::min(std::max(probs(i, k), 1e-12), 1.0);
      out.loss += -target * std::log(p) / n;
      out.dlogits(i, k) = (probs(i, k) - target) / n;
    }
  }
  return out;
}

struct WarmupResult {
  EncoderModel model;
  std::vector<double> importance;  // length d_img + d_ctx
  std::vector<double> loss_history;
};

// Per-dimension importance prior from a linear head: mean absolute weight
// across the output units, one value per fused-embedding dimension.
inline std::vector<double> importance_prior(const Tensor2& head_w) {
  if (head_w.rows() == 0 || head_w.cols() == 0) {
    throw Error("encoder: empty head weights");
  }
  std::vector<double> q(head_w.cols(), 0.0);
  for (std::size_t h = 0; h < head_w.rows(); ++h) {
    for (std::size_t d = 0; d < head_w.cols(); ++d) q[d] += std::abs(head_w(h, d));
  }
  for (double& v : q) v /= static_cast<double>(head_w.rows());
  return q;
}

// Trains the encoders plus linear head for a few epochs on the (already
// augmented) training records, then freezes everything and derives the
// importance prior from the final head weights.
inline WarmupResult warmup_train(const std::vector<Record>& train, const RunConfig& cfg,
                                 std::uint64_t seed, bool use_sampler = true) {
  if (train.size() < 2) throw Error("encoder: warm-up needs at least 2 records");
  WarmupResult result;
  EncoderModel& m = result.model;
  m.init(cfg.d_img, cfg.d_ctx, static_cast<int>(train.front().state.size()));
  const Tensor2 stats_raw = stats_matrix(train, cfg.intensity_min, cfg.intensity_max);
  m.img_std.fit(stats_raw);
  const Tensor2 stats = m.img_std.apply(stats_raw);
  Tensor2 ctx_raw = context_matrix(train, m.d_state);
  m.ctx_std.fit(ctx_raw);
  const Tensor2 ctx = m.ctx_std.apply(ctx_raw);

  std::vector<int> labels(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) labels[i] = train[i].label;
  WeightedSampler sampler(labels, use_sampler ? cfg.sampler_minority_fraction : -1.0);
  RngStream sample_rng = RngHandle{seed, "warmup-sampler"}.stream();

  const std::size_t steps =
      (train.size() + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.warmup_epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::vector<std::size_t> batch =
          sampler.sample_batch(static_cast<std::size_t>(cfg.batch_size), sample_rng);
      Tensor2 bstats(batch.size(), kPatchStatCount);
      Tensor2 bctx(batch.size(), ctx.cols());
      std::vector<int> blabels(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t j = 0; j < bstats.cols(); ++j) bstats(i, j) = stats(batch[i], j);
        for (std::size_t j = 0; j < bctx.cols(); ++j) bctx(i, j) = ctx(batch[i], j);
        blabels[i] = labels[batch[i]];
      }
      const WarmupForward f = warmup_forward(m, bstats, bctx);
      const SmoothedCeResult ce =
          smoothed_ce(f.logits, blabels, cfg.warmup_label_smoothing);
      if (!std::isfinite(ce.loss)) throw Error("encoder: warm-up loss diverged");
      epoch_loss += ce.loss;
      m.params.zero_grad();
      warmup_backward(m, bstats, bctx, f, ce.dlogits);
      for (ParamEntry& e : m.params.entries()) {
        for (std::size_t i = 0; i < e.value.size(); ++i) {
          e.value.data()[i] -= kWarmupLearningRate * e.grad.data()[i];
        }
      }
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(steps));
  }
  result.importance = importance_prior(m.params.value("head_w"));
  return result;
}

// Frozen-encoder embedding of a record batch: image block then context
// block, concatenated in that fixed order.
inline Tensor2 encode_dataset(const EncoderModel& m, const std::vector<Record>& records,
                              double lo, double hi) {
  const Tensor2 stats = m.img_std.apply(stats_matrix(records, lo, hi));
  const Tensor2 ctx = m.ctx_std.apply(context_matrix(records, m.d_state));
  const WarmupForward f = warmup_forward(m, stats, ctx);
  return f.fused;
}

// Head probability of the defect class for each record, using the frozen
// encoders plus the warm-up head.
inline std::vector<double> warmup_scores(const EncoderModel& m,
                                         const std::vector<Record>& records, double lo,
                                         double hi) {
  const Tensor2 stats = m.img_std.apply(stats_matrix(records, lo, hi));
  const Tensor2 ctx = m.ctx_std.apply(context_matrix(records, m.d_state));
  const Tensor2 probs = softmax_rows(warmup_forward(m, stats, ctx).logits);
  std::vector<double> out(records.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probs(i, 1);
  return out;
}

}  // namespace fildp
