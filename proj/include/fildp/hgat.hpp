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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fildp/core.hpp"
#include "fildp/graph.hpp"
#include "fildp/metrics.hpp"
#include "fildp/nnkit.hpp"
#include "fildp/privacy.hpp"
#include "fildp/rng.hpp"

namespace fildp {

// Layer-stratified graph attention classifier.
//
// Each layer carries several independent attention heads.  A head transforms
// node features with W (hidden x in), scores every directed edge by
//
//   e_ij = LeakyReLU(a^T [W h_i || W h_j || w_ij]),
//
// where w_ij is the scalar edge affinity produced by graph construction,
// divides the scores by the attention temperature, and soft-maxes them over
// each node's out-neighborhood.  Aggregated messages pass through an elu.
// Hidden layers concatenate their head outputs; the final attention layer
// averages them before the nonlinearity.  A dense head maps the final node
// embedding to two logits whose softmax gives the porosity score.
//
// Nodes whose stratum contains no other member have an empty neighborhood;
// they aggregate a self-loop with affinity 1 so the softmax stays defined.
// Every node with at least one real neighbor attends only over those
// neighbors, which keeps the single-neighbor coefficient exactly 1 and an
// identical-twin neighborhood exactly (1/2, 1/2).

constexpr double kAttentionLeakSlope = 0.2;

// Initial weight on the edge-affinity slot of every attention vector; see
// HgatModel::init for why the remaining slots start at zero.
constexpr double kAttentionPriorInit = 0.5;

// Architecture knobs; a subset of RunConfig plus the input width.
struct HgatConfig {
  int layers = 2;
  int heads = 4;
  int hidden = 64;
  int in_dim = 64;
  double dropout = 0.2;
  double attention_temperature = 0.1;
  bool edge_prior_enabled = true;

  static HgatConfig from_run_config(const RunConfig& cfg, int in_dim) {
    HgatConfig c;
    c.layers = cfg.hgat_layers;
    c.heads = cfg.hgat_heads;
    c.hidden = cfg.hgat_hidden;
    c.in_dim = in_dim;
    c.dropout = cfg.dropout;
    c.attention_temperature = cfg.attention_temperature;
    c.edge_prior_enabled = cfg.edge_prior_enabled;
    return c;
  }

  void validate() const {
    if (layers < 1 || heads < 1 || hidden < 1 || in_dim < 1) {
      throw Error("hgat: model dimensions must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw Error("hgat: dropout must be in [0,1)");
    if (attention_temperature <= 0.0) {
      throw Error("hgat: attention temperature must be positive");
    }
  }

  // Hidden layers concatenate head outputs, so every layer after the first
  // reads heads*hidden columns.
  int layer_input_dim(int layer) const {
    return layer == 0 ? in_dim : heads * hidden;
  }

  // Attention vector length: source block, target block, and (optionally)
  // one slot that multiplies the scalar edge affinity.
  int attention_len() const { return 2 * hidden + (edge_prior_enabled ? 1 : 0); }
};

struct HgatModel {
  HgatConfig cfg;
  ParamStore params;

  static std::string weight_name(int layer, int head) {
    return "l" + std::to_string(layer) + "_h" + std::to_string(head) + "_w";
  }
  static std::string attention_name(int layer, int head) {
    return "l" + std::to_string(layer) + "_h" + std::to_string(head) + "_a";
  }

  // Glorot initialization for the transforms; the classifier bias starts at
  // zero.  Attention vectors start at zero except for the edge-prior slot:
  // random attention coefficients would be amplified by the low softmax
  // temperature into sharp, arbitrary neighbor selections that are slow to
  // unlearn, whereas seeding only the prior makes every neighborhood start
  // as similarity-weighted averaging (or exactly uniform averaging when the
  // prior is disabled).  All slots still receive gradients, so the learned
  // source/destination terms grow from zero as the heads specialize.
  // Registration order fixes the draw order and therefore makes
  // initialization reproducible per stream.
  void init(const HgatConfig& c, RngStream& rng) {
    c.validate();
    cfg = c;
    params = ParamStore();
    for (int g = 0; g < cfg.layers; ++g) {
      const int in = cfg.layer_input_dim(g);
      for (int h = 0; h < cfg.heads; ++h) {
        glorot_init(params.add(weight_name(g, h), cfg.hidden, in), rng);
        Tensor2& a = params.add(attention_name(g, h), 1, cfg.attention_len());
        if (cfg.edge_prior_enabled) {
          a(0, static_cast<std::size_t>(cfg.attention_len()) - 1) = kAttentionPriorInit;
        }
      }
    }
    glorot_init(params.add("cls_w", 2, cfg.hidden), rng);
    params.add("cls_b", 1, 2);
  }

  void save(const std::string& path) const { params.save(path); }

  // Loading requires the architecture, which the checkpoint itself does not
  // carry; shapes and names are verified entry by entry.
  void load(const HgatConfig& c, const std::string& path) {
    RngStream scratch(0);
    init(c, scratch);
    params.load(path);
  }
};

// Forward caches, one per (layer, head).  Edge arrays are parallel to the
// graph's CSR edge list; self_pre holds the (unused-by-backward) self-loop
// logit of isolated nodes.
struct HgatHeadCache {
  Tensor2 z;                       // W h, n x hidden
  std::vector<double> src_proj;    // a_src . z_i per node
  std::vector<double> dst_proj;    // a_dst . z_j per node
  std::vector<double> edge_pre;    // attention logit before LeakyReLU
  std::vector<double> edge_alpha;  // softmaxed attention coefficient
  std::vector<double> self_pre;    // isolated-node self-loop logit
  Tensor2 agg;                     // attention-weighted message sum, n x hidden
};

struct HgatLayerCache {
  Tensor2 input;  // layer input after dropout
  Tensor2 mask;   // dropout mask; empty-equivalent all-ones in eval mode
  bool dropped = false;
  std::vector<HgatHeadCache> heads;
  Tensor2 output;  // post-activation layer output
};

struct HgatCache {
  std::vector<HgatLayerCache> layers;
  Tensor2 logits;  // n x 2
};

namespace detail {

// One head's attention pass: score edges, softmax per neighborhood (with the
// usual max shift), aggregate.  Isolated nodes fall back to a self-loop with
// affinity 1 whose single-entry softmax is identically 1.
//
// When `agg_rows`/`proj_rows` are given, only those destination nodes are
// aggregated and only those projection rows computed; the caller guarantees
// that proj_rows covers every node the aggregated rows attend to.  Skipped
// rows stay zero.
inline void attention_head_forward(const StratifiedGraph& g, const Tensor2& z,
                                   const Tensor2& a, bool edge_prior,
                                   double temperature, HgatHeadCache& hc,
                                   const std::vector<std::size_t>* agg_rows = nullptr,
                                   const std::vector<std::size_t>* proj_rows = nullptr) {
  const std::size_t n = g.n;
  const std::size_t hidden = z.cols();
  const double* av = a.row(0);
  const double prior_w = edge_prior ? av[2 * hidden] : 0.0;

  hc.src_proj.assign(n, 0.0);
  hc.dst_proj.assign(n, 0.0);
  const std::size_t n_proj = proj_rows ? proj_rows->size() : n;
  for (std::size_t r = 0; r < n_proj; ++r) {
    const std::size_t i = proj_rows ? (*proj_rows)[r] : r;
    const double* zi = z.row(i);
    double s = 0.0, d = 0.0;
    for (std::size_t k = 0; k < hidden; ++k) {
      s += av[k] * zi[k];
      d += av[hidden + k] * zi[k];
    }
    hc.src_proj[i] = s;
    hc.dst_proj[i] = d;
  }

  hc.edge_pre.assign(g.edge_count(), 0.0);
  hc.edge_alpha.assign(g.edge_count(), 0.0);
  hc.self_pre.assign(n, 0.0);
  hc.agg = Tensor2(n, hidden);

  const std::size_t n_agg = agg_rows ? agg_rows->size() : n;
  for (std::size_t r = 0; r < n_agg; ++r) {
    const std::size_t i = agg_rows ? (*agg_rows)[r] : r;
    const std::size_t b = g.offsets[i];
    const std::size_t e = g.offsets[i + 1];
    double* out = hc.agg.row(i);
    if (b == e) {
      // Self-loop with affinity 1: the lone coefficient is exactly 1, so the
      // aggregate is the node's own transformed feature.
      hc.self_pre[i] = hc.src_proj[i] + hc.dst_proj[i] + prior_w * 1.0;
      const double* zi = z.row(i);
      for (std::size_t k = 0; k < hidden; ++k) out[k] = zi[k];
      continue;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t t = b; t < e; ++t) {
      const std::size_t j = g.neighbors[t];
      const double pre =
          hc.src_proj[i] + hc.dst_proj[j] + prior_w * g.affinities[t];
      hc.edge_pre[t] = pre;
      const double s = leaky_relu(pre, kAttentionLeakSlope) / temperature;
      if (s > mx) mx = s;
    }
    double sum = 0.0;
    for (std::size_t t = b; t < e; ++t) {
      const double s =
          leaky_relu(hc.edge_pre[t], kAttentionLeakSlope) / temperature;
      hc.edge_alpha[t] = std::exp(s - mx);
      sum += hc.edge_alpha[t];
    }
    for (std::size_t t = b; t < e; ++t) {
      hc.edge_alpha[t] /= sum;
      const double* zj = z.row(g.neighbors[t]);
      const double alpha = hc.edge_alpha[t];
      for (std::size_t k = 0; k < hidden; ++k) out[k] += alpha * zj[k];
    }
  }
}

}  // namespace detail

// Full-graph forward pass.  `training` enables feature dropout (drawn from
// `dropout_rng`, which is then required); attention coefficients are never
// dropped.  When `cache` is non-null every intermediate needed by
// hgat_backward is recorded.
//
// A training step only consumes logits for its loss batch, so when
// `loss_rows` (sorted, unique) is given the final layer is evaluated just
// for those rows and the nodes they attend to; every other logit row holds
// an unused placeholder.  Dropout still draws for the full feature matrix,
// keeping the stream identical to an unrestricted pass.
inline Tensor2 hgat_forward(const HgatModel& m, const StratifiedGraph& g,
                            const Tensor2& x, bool training,
                            RngStream* dropout_rng, HgatCache* cache,
                            const std::vector<std::size_t>* loss_rows = nullptr) {
  m.cfg.validate();
  if (x.rows() != g.n) throw Error("hgat: feature rows must match graph nodes");
  if (static_cast<int>(x.cols()) != m.cfg.in_dim) {
    throw Error("hgat: feature width " + std::to_string(x.cols()) +
                " does not match model input dim " + std::to_string(m.cfg.in_dim));
  }
  if (training && m.cfg.dropout > 0.0 && dropout_rng == nullptr) {
    throw Error("hgat: training forward needs a dropout stream");
  }

  HgatCache local;
  HgatCache& c = cache ? *cache : local;
  c.layers.assign(static_cast<std::size_t>(m.cfg.layers), HgatLayerCache{});

  const std::size_t n = g.n;
  const std::size_t hidden = static_cast<std::size_t>(m.cfg.hidden);
  Tensor2 cur = x;
  for (int layer = 0; layer < m.cfg.layers; ++layer) {
    HgatLayerCache& lc = c.layers[static_cast<std::size_t>(layer)];
    if (training && m.cfg.dropout > 0.0) {
      auto dropped = dropout_forward(cur, m.cfg.dropout, *dropout_rng);
      lc.input = std::move(dropped.first);
      lc.mask = std::move(dropped.second);
      lc.dropped = true;
    } else {
      lc.input = cur;
    }

    const bool last = layer == m.cfg.layers - 1;
    const bool restricted = last && loss_rows != nullptr;
    std::vector<std::size_t> reach;  // loss rows plus everything they attend to
    Tensor2 xg;                      // gathered input rows for the reach set
    if (restricted) {
      std::vector<char> mark(n, 0);
      for (std::size_t i : *loss_rows) {
        mark[i] = 1;
        for (std::size_t t = g.offsets[i]; t < g.offsets[i + 1]; ++t) {
          mark[g.neighbors[t]] = 1;
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (mark[i]) reach.push_back(i);
      }
      xg = Tensor2(reach.size(), lc.input.cols());
      for (std::size_t r = 0; r < reach.size(); ++r) {
        const double* src = lc.input.row(reach[r]);
        std::copy(src, src + lc.input.cols(), xg.row(r));
      }
    }

    lc.heads.assign(static_cast<std::size_t>(m.cfg.heads), HgatHeadCache{});
    for (int h = 0; h < m.cfg.heads; ++h) {
      HgatHeadCache& hc = lc.heads[static_cast<std::size_t>(h)];
      if (restricted) {
        const Tensor2 zg =
            matmul_nt(xg, m.params.value(HgatModel::weight_name(layer, h)));
        hc.z = Tensor2(n, hidden);
        for (std::size_t r = 0; r < reach.size(); ++r) {
          const double* src = zg.row(r);
          std::copy(src, src + hidden, hc.z.row(reach[r]));
        }
        detail::attention_head_forward(
            g, hc.z, m.params.value(HgatModel::attention_name(layer, h)),
            m.cfg.edge_prior_enabled, m.cfg.attention_temperature, hc,
            loss_rows, &reach);
      } else {
        hc.z = matmul_nt(lc.input, m.params.value(HgatModel::weight_name(layer, h)));
        detail::attention_head_forward(
            g, hc.z, m.params.value(HgatModel::attention_name(layer, h)),
            m.cfg.edge_prior_enabled, m.cfg.attention_temperature, hc);
      }
    }

    if (!last) {
      // Concatenate elu(head aggregate) blocks.  Node-major order keeps the
      // writes in one sequential pass over the output.
      lc.output = Tensor2(n, static_cast<std::size_t>(m.cfg.heads) * hidden);
      for (std::size_t i = 0; i < n; ++i) {
        double* out = lc.output.row(i);
        for (int h = 0; h < m.cfg.heads; ++h) {
          const double* in = lc.heads[static_cast<std::size_t>(h)].agg.row(i);
          for (std::size_t k = 0; k < hidden; ++k) out[k] = elu(in[k]);
          out += hidden;
        }
      }
    } else {
      // Average head aggregates, then apply the nonlinearity once.
      Tensor2 mean(n, hidden);
      const double inv = 1.0 / static_cast<double>(m.cfg.heads);
      for (int h = 0; h < m.cfg.heads; ++h) {
        const Tensor2& agg = lc.heads[static_cast<std::size_t>(h)].agg;
        for (std::size_t i = 0; i < mean.size(); ++i) {
          mean.data()[i] += inv * agg.data()[i];
        }
      }
      lc.output = elu_forward(mean);
    }
    cur = lc.output;
  }

  c.logits = dense_forward(cur, m.params.value("cls_w"), m.params.value("cls_b"));
  return c.logits;
}

// Backward pass; accumulates parameter gradients into m.params.  `dlogits`
// is the loss gradient with respect to the classifier logits.
//
// Training computes the loss on a small node batch, so most dlogits rows are
// exactly zero and gradients reach only the batch nodes plus their (expanding
// per layer) neighborhoods.  The pass tracks that support set, skips rows
// with identically zero upstream gradient, and routes the weight/input
// products through gathered sub-matrices while the support stays small.
inline void hgat_backward(HgatModel& m, const StratifiedGraph& g,
                          const HgatCache& cache, const Tensor2& dlogits) {
  if (cache.layers.size() != static_cast<std::size_t>(m.cfg.layers)) {
    throw Error("hgat: backward cache does not match the model");
  }
  const std::size_t n = g.n;
  const std::size_t hidden = static_cast<std::size_t>(m.cfg.hidden);
  const double temperature = m.cfg.attention_temperature;

  Tensor2 dout;  // gradient wrt the current layer's output
  dense_backward(cache.layers.back().output, m.params.value("cls_w"), dlogits,
                 &dout, m.params.grad("cls_w"), m.params.grad("cls_b"));

  // Rows with a nonzero loss gradient; zero rows contribute exactly nothing.
  std::vector<std::size_t> active;
  active.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (dlogits(i, 0) != 0.0 || dlogits(i, 1) != 0.0) active.push_back(i);
  }

  for (int layer = m.cfg.layers - 1; layer >= 0; --layer) {
    const HgatLayerCache& lc = cache.layers[static_cast<std::size_t>(layer)];
    const bool last = layer == m.cfg.layers - 1;
    const std::size_t in_dim = lc.input.cols();

    // For the final layer the per-head aggregate gradient is the shared
    // elu-masked mean gradient; hidden layers un-concatenate per head below.
    Tensor2 dmean;
    if (last) {
      dmean = Tensor2(n, hidden);
      const double inv = 1.0 / static_cast<double>(m.cfg.heads);
      for (std::size_t i : active) {
        const double* o = lc.output.row(i);
        const double* gy = dout.row(i);
        double* d = dmean.row(i);
        for (std::size_t k = 0; k < hidden; ++k) {
          d[k] = inv * gy[k] * (o[k] > 0.0 ? 1.0 : o[k] + 1.0);
        }
      }
    }

    // Support after attention: the active nodes and everything they attend
    // to.  The list is index-sorted, shared by all heads.
    std::vector<char> touched(n, 0);
    for (std::size_t i : active) {
      touched[i] = 1;
      for (std::size_t t = g.offsets[i]; t < g.offsets[i + 1]; ++t) {
        touched[g.neighbors[t]] = 1;
      }
    }
    std::vector<std::size_t> support;
    support.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (touched[i]) support.push_back(i);
    }
    const bool gather = support.size() * 5 < n * 3;  // below ~60% occupancy
    Tensor2 xg;
    if (gather) {
      xg = Tensor2(support.size(), in_dim);
      for (std::size_t r = 0; r < support.size(); ++r) {
        const double* src = lc.input.row(support[r]);
        std::copy(src, src + in_dim, xg.row(r));
      }
    }

    Tensor2 dinput(n, in_dim);
    std::vector<double> dagg_row(hidden);
    std::vector<double> dalpha;
    for (int h = 0; h < m.cfg.heads; ++h) {
      const HgatHeadCache& hc = lc.heads[static_cast<std::size_t>(h)];
      const Tensor2& a = m.params.value(HgatModel::attention_name(layer, h));
      const double* av = a.row(0);
      double* dav = m.params.grad(HgatModel::attention_name(layer, h)).row(0);

      Tensor2 dz(n, hidden);
      for (std::size_t i : active) {
        const double* dai;
        if (last) {
          dai = dmean.row(i);
        } else {
          const double* o = lc.output.row(i) + static_cast<std::size_t>(h) * hidden;
          const double* gy = dout.row(i) + static_cast<std::size_t>(h) * hidden;
          for (std::size_t k = 0; k < hidden; ++k) {
            dagg_row[k] = gy[k] * (o[k] > 0.0 ? 1.0 : o[k] + 1.0);
          }
          dai = dagg_row.data();
        }

        const std::size_t b = g.offsets[i];
        const std::size_t e = g.offsets[i + 1];
        if (b == e) {
          // Self-loop aggregate is z_i with a coefficient pinned at 1, so the
          // only flow is straight into z; the logit never moves the softmax.
          double* dzi = dz.row(i);
          for (std::size_t k = 0; k < hidden; ++k) dzi[k] += dai[k];
          continue;
        }
        dalpha.assign(e - b, 0.0);
        double weighted = 0.0;
        for (std::size_t t = b; t < e; ++t) {
          const double* zj = hc.z.row(g.neighbors[t]);
          double dd = 0.0;
          for (std::size_t k = 0; k < hidden; ++k) dd += dai[k] * zj[k];
          dalpha[t - b] = dd;
          weighted += hc.edge_alpha[t] * dd;
        }
        double src_acc = 0.0;
        for (std::size_t t = b; t < e; ++t) {
          const std::size_t j = g.neighbors[t];
          const double alpha = hc.edge_alpha[t];
          const double ds = alpha * (dalpha[t - b] - weighted);
          const double dpre = (ds / temperature) *
                              leaky_relu_grad(hc.edge_pre[t], kAttentionLeakSlope);
          src_acc += dpre;
          const double* zj = hc.z.row(j);
          double* dzj = dz.row(j);
          for (std::size_t k = 0; k < hidden; ++k) {
            dav[hidden + k] += dpre * zj[k];
            dzj[k] += dpre * av[hidden + k] + alpha * dai[k];
          }
          if (m.cfg.edge_prior_enabled) {
            dav[2 * hidden] += dpre * g.affinities[t];
          }
        }
        const double* zi = hc.z.row(i);
        double* dzi = dz.row(i);
        for (std::size_t k = 0; k < hidden; ++k) {
          dav[k] += src_acc * zi[k];
          dzi[k] += src_acc * av[k];
        }
      }

      const Tensor2& w = m.params.value(HgatModel::weight_name(layer, h));
      Tensor2& dw = m.params.grad(HgatModel::weight_name(layer, h));
      if (gather) {
        Tensor2 dzg(support.size(), hidden);
        for (std::size_t r = 0; r < support.size(); ++r) {
          const double* src = dz.row(support[r]);
          std::copy(src, src + hidden, dzg.row(r));
        }
        gemm(true, false, 1.0, dzg, xg, 1.0, dw);
        Tensor2 dxg(support.size(), in_dim);
        gemm(false, false, 1.0, dzg, w, 0.0, dxg);
        for (std::size_t r = 0; r < support.size(); ++r) {
          const double* src = dxg.row(r);
          double* dst = dinput.row(support[r]);
          for (std::size_t c = 0; c < in_dim; ++c) dst[c] += src[c];
        }
      } else {
        gemm(true, false, 1.0, dz, lc.input, 1.0, dw);
        gemm(false, false, 1.0, dz, w, 1.0, dinput);
      }
    }

    if (layer > 0) {
      dout = lc.dropped ? dropout_backward(lc.mask, dinput) : std::move(dinput);
      active = std::move(support);
    }
  }
}

// Per-node porosity scores (softmax probability of the positive class);
// dropout disabled.
inline std::vector<double> hgat_scores(const HgatModel& m, const StratifiedGraph& g,
                                       const Tensor2& x) {
  const Tensor2 logits = hgat_forward(m, g, x, /*training=*/false, nullptr, nullptr);
  const Tensor2 probs = softmax_rows(logits);
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probs(i, 1);
  return out;
}

struct NodePrediction {
  double score = 0.0;
  int hard = 0;
};

// Inference: hard label is the strict indicator score > t*; a score exactly
// at the threshold stays negative.
inline std::vector<NodePrediction> hgat_predict(const HgatModel& m,
                                                const StratifiedGraph& g,
                                                const Tensor2& x, double t_star) {
  const std::vector<double> scores = hgat_scores(m, g, x);
  std::vector<NodePrediction> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i].score = scores[i];
    out[i].hard = scores[i] > t_star ? 1 : 0;
  }
  return out;
}

// Rescales every feature column to zero mean and unit variance across the
// table (constant columns are left at zero).  Released features carry
// per-dimension noise whose scale can dwarf the signal and varies by
// dimension; training on raw magnitudes saturates the attention softmax and
// the classifier head.  This is a deterministic transform of already
// released values, so it cannot affect the privacy accounting.
inline void standardize_features(FeatureTable& table) {
  if (table.rows.empty()) return;
  const std::size_t d = table.rows.front().x.size();
  const double n = static_cast<double>(table.rows.size());
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (const FeatureRow& r : table.rows) {
    if (r.x.size() != d) throw Error("hgat: ragged feature table");
    for (std::size_t k = 0; k < d; ++k) mean[k] += r.x[k];
  }
  for (std::size_t k = 0; k < d; ++k) mean[k] /= n;
  for (const FeatureRow& r : table.rows) {
    for (std::size_t k = 0; k < d; ++k) {
      const double c = r.x[k] - mean[k];
      var[k] += c * c;
    }
  }
  std::vector<double> scale(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const double sd = std::sqrt(var[k] / n);
    scale[k] = sd > 0.0 ? 1.0 / sd : 0.0;
  }
  for (FeatureRow& r : table.rows) {
    for (std::size_t k = 0; k < d; ++k) r.x[k] = (r.x[k] - mean[k]) * scale[k];
  }
}

// Assembles the n x d feature matrix and the label vector of a feature table
// in row order (which matches graph node order by construction).
inline Tensor2 node_feature_matrix(const FeatureTable& table) {
  if (table.rows.empty()) throw Error("hgat: feature table is empty");
  const std::size_t d = table.rows.front().x.size();
  Tensor2 x(table.rows.size(), d);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (table.rows[i].x.size() != d) throw Error("hgat: ragged feature table");
    std::copy(table.rows[i].x.begin(), table.rows[i].x.end(), x.row(i));
  }
  return x;
}

inline std::vector<int> node_labels(const FeatureTable& table) {
  std::vector<int> y(table.rows.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = table.rows[i].label;
  return y;
}

struct HgatHistory {
  std::vector<double> epoch_loss;  // mean sampled-batch loss per epoch
  int completed_epochs = 0;
  bool diverged = false;
};

struct HgatTrainResult {
  HgatModel model;
  ThresholdSearch threshold;  // t* and the validation F1 it achieved
  HgatHistory history;
};

// Focal-loss weights: inverse class frequency over the distribution the
// optimizer actually samples.  With the class-balanced sampler active the
// batches hold the configured minority fraction, so weighting by the raw
// split frequencies would correct the imbalance twice (once in the sampler,
// once in the loss) and push every prediction toward the rare class;
// instead the effective batch composition is inverted.  Without the sampler
// the batches mirror the raw frequencies and those are inverted - either
// way the imbalance is corrected exactly once.
inline FocalLossParams focal_params_for(const RunConfig& cfg,
                                        const std::vector<int>& train_labels) {
  FocalLossParams p;
  p.gamma = cfg.focal_gamma;
  if (cfg.focal_alpha_mode == "inverse_frequency") {
    double pos = 0.0;
    for (int y : train_labels) pos += y;
    const double n = static_cast<double>(train_labels.size());
    double pos_frac = pos / n;
    if (cfg.oversampling_enabled && pos > 0.0 && pos < n) {
      const double m = cfg.sampler_minority_fraction;
      pos_frac = pos <= n - pos ? m : 1.0 - m;
    }
    p.alpha_pos = 1.0 - pos_frac;
    p.alpha_neg = pos_frac;
  } else {
    p.alpha_pos = 0.5;
    p.alpha_neg = 0.5;
  }
  return p;
}

// Trains the attention classifier.
//
// Every optimizer step runs a full-graph forward (the desk-scale graph fits
// in memory) and takes the focal loss over one sampled batch of training
// nodes; the class-balanced sampler draws minority nodes at the configured
// fraction unless oversampling is disabled, in which case sampling is
// uniform.  A non-finite loss aborts training and restores the last
// end-of-epoch checkpoint.  After training the decision threshold is tuned
// on the validation split (0.01 grid, ties toward the smaller threshold).
inline HgatTrainResult hgat_train(const StratifiedGraph& g, const FeatureTable& table,
                                  const SplitIndices& split, const RunConfig& cfg,
                                  std::uint64_t seed) {
  if (split.train.empty() || split.val.empty()) {
    throw Error("hgat: training needs non-empty train and validation splits");
  }
  const Tensor2 x = node_feature_matrix(table);
  const std::vector<int> labels = node_labels(table);
  for (std::size_t i : split.train) {
    if (i >= labels.size()) throw Error("hgat: train index out of range");
  }
  for (std::size_t i : split.val) {
    if (i >= labels.size()) throw Error("hgat: val index out of range");
  }

  std::vector<int> train_labels(split.train.size());
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    train_labels[i] = labels[split.train[i]];
  }
  const FocalLossParams focal = focal_params_for(cfg, train_labels);
  const double minority_fraction =
      cfg.oversampling_enabled ? cfg.sampler_minority_fraction : -1.0;
  WeightedSampler sampler(train_labels, minority_fraction);

  HgatTrainResult result;
  RngStream init_rng = RngHandle{seed, "hgat-init"}.stream();
  result.model.init(HgatConfig::from_run_config(cfg, static_cast<int>(x.cols())),
                    init_rng);
  RngStream sampler_rng = RngHandle{seed, "hgat-sampler"}.stream();
  RngStream dropout_rng = RngHandle{seed, "hgat-dropout"}.stream();

  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch =
      (split.train.size() + batch - 1) / batch;  // ceil
  ParamStore last_good = result.model.params;

  for (int epoch = 0; epoch < cfg.epochs && !result.history.diverged; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::vector<std::size_t> local =
          sampler.sample_batch(batch, sampler_rng);
      bool step_ok = true;
      double loss = 0.0;
      try {
        std::vector<std::size_t> loss_rows;
        loss_rows.reserve(local.size());
        for (std::size_t l : local) loss_rows.push_back(split.train[l]);
        std::sort(loss_rows.begin(), loss_rows.end());
        loss_rows.erase(std::unique(loss_rows.begin(), loss_rows.end()),
                        loss_rows.end());
        HgatCache cache;
        const Tensor2 logits = hgat_forward(result.model, g, x, /*training=*/true,
                                            &dropout_rng, &cache, &loss_rows);
        Tensor2 batch_logits(local.size(), 2);
        std::vector<int> batch_labels(local.size());
        for (std::size_t b = 0; b < local.size(); ++b) {
          const std::size_t node = split.train[local[b]];
          batch_logits(b, 0) = logits(node, 0);
          batch_logits(b, 1) = logits(node, 1);
          batch_labels[b] = labels[node];
        }
        const FocalResult fr = focal_loss(batch_logits, batch_labels, focal);
        loss = fr.loss;
        if (!std::isfinite(loss)) step_ok = false;
        if (step_ok) {
          Tensor2 dlogits(g.n, 2);
          for (std::size_t b = 0; b < local.size(); ++b) {
            const std::size_t node = split.train[local[b]];
            dlogits(node, 0) += fr.dlogits(b, 0);
            dlogits(node, 1) += fr.dlogits(b, 1);
          }
          result.model.params.zero_grad();
          hgat_backward(result.model, g, cache, dlogits);
          adam_step(result.model.params, cfg.learning_rate, cfg.weight_decay);
        }
      } catch (const Error&) {
        step_ok = false;
      }
      if (!step_ok) {
        // Optimization blew up: fall back to the last end-of-epoch state.
        result.model.params = last_good;
        result.history.diverged = true;
        break;
      }
      epoch_loss += loss;
    }
    if (!result.history.diverged) {
      result.history.epoch_loss.push_back(epoch_loss /
                                          static_cast<double>(steps_per_epoch));
      result.history.completed_epochs = epoch + 1;
      last_good = result.model.params;
    }
  }

  const std::vector<double> all_scores = hgat_scores(result.model, g, x);
  std::vector<double> val_scores(split.val.size());
  std::vector<int> val_labels(split.val.size());
  for (std::size_t i = 0; i < split.val.size(); ++i) {
    val_scores[i] = all_scores[split.val[i]];
    val_labels[i] = labels[split.val[i]];
  }
  result.threshold = tune_threshold(val_scores, val_labels);
  return result;
}

// ---------------------------------------------------------------------------
// Gradient self-check
// ---------------------------------------------------------------------------

// A small fixed problem for verifying the analytic gradients end to end:
// 10 nodes over 2 strata (or 10 singleton strata when `isolate_all_nodes`
// is set, exercising the self-loop path), 2 layers x 2 heads.
struct SelfCheckInstance {
  HgatConfig config;
  HgatModel model;
  StratifiedGraph graph;
  Tensor2 features;
  std::vector<int> labels;
  FocalLossParams focal;
};

inline SelfCheckInstance make_gradient_selfcheck_instance(std::uint64_t seed,
                                                          bool isolate_all_nodes) {
  SelfCheckInstance inst;
  inst.config.layers = 2;
  inst.config.heads = 2;
  inst.config.hidden = 5;
  inst.config.in_dim = 6;
  inst.config.dropout = 0.0;
  inst.config.attention_temperature = 0.1;
  inst.config.edge_prior_enabled = true;

  RngStream rng = RngHandle{seed, "selfcheck"}.stream();
  FeatureTable table;
  table.d_img = 4;
  table.d_ctx = 2;
  const int n = 10;
  for (int i = 0; i < n; ++i) {
    FeatureRow row;
    row.id = i;
    row.layer = isolate_all_nodes ? i : i % 2;
    row.pos_y = rng.uniform(-5.0, 5.0);
    row.pos_z = rng.uniform(-5.0, 5.0);
    row.label = i % 3 == 0 ? 1 : 0;
    row.x.resize(6);
    for (double& v : row.x) v = rng.normal();
    table.rows.push_back(std::move(row));
  }
  inst.graph = build_graph(table, /*k=*/3, /*alpha=*/0.5, /*tau=*/2.0);
  inst.features = node_feature_matrix(table);
  inst.labels = node_labels(table);
  inst.model.init(inst.config, rng);
  inst.focal = FocalLossParams{2.0, 0.7, 0.3};
  return inst;
}

// Central-difference verification of every parameter gradient of the focal
// loss over all nodes (dropout disabled so the loss is a pure function of
// the parameters).  The returned report names the worst parameter.
inline GradCheckReport hgat_gradient_selfcheck(HgatModel& model,
                                               const StratifiedGraph& g,
                                               const Tensor2& x,
                                               const std::vector<int>& labels,
                                               const FocalLossParams& focal) {
  if (g.n > 12) throw Error("hgat: self-check instances are capped at 12 nodes");
  if (model.cfg.layers != 2 || model.cfg.heads != 2) {
    throw Error("hgat: self-check expects a 2-layer, 2-head model");
  }
  HgatCache cache;
  hgat_forward(model, g, x, /*training=*/false, nullptr, &cache);
  const FocalResult fr = focal_loss(cache.logits, labels, focal);
  model.params.zero_grad();
  hgat_backward(model, g, cache, fr.dlogits);
  auto loss_fn = [&]() {
    const Tensor2 logits = hgat_forward(model, g, x, false, nullptr, nullptr);
    return focal_loss(logits, labels, focal).loss;
  };
  return grad_check(model.params, loss_fn);
}

}  // namespace fildp
