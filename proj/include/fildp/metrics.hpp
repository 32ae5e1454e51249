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
#include <cstddef>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "fildp/core.hpp"

namespace fildp {

// Evaluation metrics for the rare-positive detection task.  All functions
// treat scores as "higher means more likely positive" and hard predictions
// use the strict rule score > threshold.

// 1-based midranks: tied values share the average of their positions.
inline std::vector<double> midranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    // positions i+1 .. j+1 share midrank (i+j+2)/2
    const double r = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

inline void check_binary_inputs(const std::vector<double>& scores,
                                const std::vector<int>& labels,
                                std::size_t* n_pos, std::size_t* n_neg) {
  if (scores.size() != labels.size()) {
    throw Error("metrics: scores and labels differ in length");
  }
  if (scores.empty()) throw Error("metrics: empty input");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error("metrics: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw Error("metrics: labels must be 0/1");
    pos += static_cast<std::size_t>(labels[i]);
  }
  if (pos == 0 || pos == scores.size()) {
    throw Error("metrics: need both classes present");
  }
  *n_pos = pos;
  *n_neg = scores.size() - pos;
}

// Area under the ROC curve via the Mann-Whitney statistic with midranks;
// ties contribute one half.  Equivalent to the pairwise definition
// (#(pos > neg) + 0.5 * #(pos == neg)) / (n_pos * n_neg).
inline double auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::size_t n_pos = 0, n_neg = 0;
  check_binary_inputs(scores, labels, &n_pos, &n_neg);
  const std::vector<double> ranks = midranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) rank_sum += ranks[i];
  }
  const double np = static_cast<double>(n_pos);
  const double numer = rank_sum - np * (np + 1.0) / 2.0;
  return numer / (np * static_cast<double>(n_neg));
}

// Area under the precision-recall curve computed as average precision with
// step interpolation: thresholds are the distinct scores in descending
// order, a point counts as predicted-positive when score >= threshold, and
// each recall increment is weighted by the precision at that threshold.
inline double aupr_score(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::size_t n_pos = 0, n_neg = 0;
  check_binary_inputs(scores, labels, &n_pos, &n_neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::size_t tp = 0, fp = 0, prev_tp = 0;
  std::size_t i = 0;
  const std::size_t n = scores.size();
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) ++tp; else ++fp;
    }
    if (tp > prev_tp) {
      ap += (static_cast<double>(tp - prev_tp) / static_cast<double>(n_pos)) *
            (static_cast<double>(tp) / static_cast<double>(tp + fp));
      prev_tp = tp;
    }
    i = j + 1;
  }
  return ap;
}

// Confusion counts and derived rates at a fixed threshold (positive iff
// score > threshold).  Zero-denominator cases are defined as 0.
struct Prf {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline Prf prf_at(const std::vector<double>& scores, const std::vector<int>& labels,
                  double threshold) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw Error("metrics: bad inputs to prf_at");
  }
  Prf r;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > threshold;
    if (labels[i] == 1) {
      pred ? ++r.tp : ++r.fn;
    } else {
      pred ? ++r.fp : ++r.tn;
    }
  }
  r.precision = (r.tp + r.fp) ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
  r.recall = (r.tp + r.fn) ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
  r.f1 = (r.precision + r.recall > 0)
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

struct ThresholdSearch {
  double t_star = 0.0;
  double f1 = 0.0;
};

// Grid search over thresholds 0.00, 0.01, ..., 1.00 maximizing F1; exact
// ties resolve toward the smaller threshold.
inline ThresholdSearch tune_threshold(const std::vector<double>& scores,
                                      const std::vector<int>& labels) {
  ThresholdSearch best;
  best.t_star = 0.0;
  best.f1 = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double t = static_cast<double>(i) / 100.0;
    const double f1 = prf_at(scores, labels, t).f1;
    if (f1 > best.f1) {
      best.f1 = f1;
      best.t_star = t;
    }
  }
  return best;
}

// Spearman rank correlation using midranks.  A constant input has no rank
// ordering, so the correlation is undefined and refused.
inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error("metrics: spearman needs two equal-length vectors of size >= 2");
  }
  const std::vector<double> rx = midranks(x);
  const std::vector<double> ry = midranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = rx[i] - mx;
    const double b = ry[i] - my;
    cov += a * b;
    vx += a * a;
    vy += b * b;
  }
  if (vx == 0.0 || vy == 0.0) {
    throw Error("metrics: spearman is undefined for a constant input");
  }
  return cov / std::sqrt(vx * vy);
}

// Metrics of one trained model on one evaluation split.
struct MetricReport {
  double auc = std::numeric_limits<double>::quiet_NaN();
  double aupr = std::numeric_limits<double>::quiet_NaN();
  double precision = std::numeric_limits<double>::quiet_NaN();  // at 0.5
  double recall = std::numeric_limits<double>::quiet_NaN();     // at 0.5
  double f1 = std::numeric_limits<double>::quiet_NaN();         // at 0.5
  double t_star = std::numeric_limits<double>::quiet_NaN();     // tuned on validation
  double f1_star = std::numeric_limits<double>::quiet_NaN();    // test F1 at t_star
  double recovery_pct = std::numeric_limits<double>::quiet_NaN();

  void write_kv(std::ostream& out) const {
    out << "auc = " << detail::fmt_double(auc) << "\n"
        << "aupr = " << detail::fmt_double(aupr) << "\n"
        << "precision = " << detail::fmt_double(precision) << "\n"
        << "recall = " << detail::fmt_double(recall) << "\n"
        << "f1 = " << detail::fmt_double(f1) << "\n"
        << "t_star = " << detail::fmt_double(t_star) << "\n"
        << "f1_star = " << detail::fmt_double(f1_star) << "\n"
        << "recovery_pct = " << detail::fmt_double(recovery_pct) << "\n";
  }
};

// Evaluates scores against labels: ranking metrics, rates at 0.5, and test
// F1 at the supplied validation-tuned threshold.
inline MetricReport evaluate(const std::vector<double>& scores,
                             const std::vector<int>& labels, double t_star) {
  MetricReport r;
  r.auc = auc_score(scores, labels);
  r.aupr = aupr_score(scores, labels);
  const Prf at_half = prf_at(scores, labels, 0.5);
  r.precision = at_half.precision;
  r.recall = at_half.recall;
  r.f1 = at_half.f1;
  r.t_star = t_star;
  r.f1_star = prf_at(scores, labels, t_star).f1;
  return r;
}

}  // namespace fildp
