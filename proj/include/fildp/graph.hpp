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
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fildp/core.hpp"
#include "fildp/privacy.hpp"

namespace fildp {

// Layer-stratified hybrid kNN graph over released features.
//
// Edges connect nodes within the same build layer only.  The distance blends
// in-layer geometry with appearance: D_ij = alpha * |p_i - p_j| +
// (1 - alpha) * (1 - cos(image block_i, image block_j)), and each directed
// edge carries a heat-kernel affinity w_ij = exp(-D_ij / tau) in (0, 1].

// Cosine similarity of the image sub-blocks.  A zero-norm block leaves the
// cosine undefined; the dissimilarity term (1 - cos) is then defined as 1
// (maximal) so degenerate vectors repel rather than crash.
inline double hybrid_distance(const FeatureRow& a, const FeatureRow& b, int d_img,
                              double alpha) {
  if (d_img <= 0 || a.x.size() != b.x.size() ||
      a.x.size() < static_cast<std::size_t>(d_img)) {
    throw Error("graph: feature rows do not match the image block width");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error("graph: alpha must lie in [0,1]");
  }
  const double dy = a.pos_y - b.pos_y;
  const double dz = a.pos_z - b.pos_z;
  const double spatial = std::sqrt(dy * dy + dz * dz);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int d = 0; d < d_img; ++d) {
    dot += a.x[d] * b.x[d];
    na += a.x[d] * a.x[d];
    nb += b.x[d] * b.x[d];
  }
  double dissim = 1.0;
  if (na > 0.0 && nb > 0.0) {
    const bool same_block =
        std::equal(a.x.begin(), a.x.begin() + d_img, b.x.begin());
    if (same_block) {
      // Bitwise-equal blocks have cosine exactly 1; the rounded quotient
      // na / (sqrt(na) * sqrt(na)) can miss by one ulp and would leave
      // identical nodes at a nonzero distance.
      dissim = 0.0;
    } else {
      const double cosine =
          std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
      dissim = 1.0 - cosine;
    }
  }
  return alpha * spatial + (1.0 - alpha) * dissim;
}

struct StratifiedGraph {
  std::size_t n = 0;
  int k = 0;
  double alpha = 0.5;
  double tau = 2.0;
  std::vector<int> layer;               // per node
  std::vector<std::size_t> offsets;     // n + 1 CSR offsets
  std::vector<std::size_t> neighbors;   // edge targets (node indices)
  std::vector<double> distances;        // per-edge D_ij
  std::vector<double> affinities;       // per-edge w_ij
  std::size_t isolated_count = 0;

  std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  std::size_t edge_count() const { return neighbors.size(); }
};

// Per-layer exhaustive kNN under the hybrid distance.  Neighbor lists are
// sorted by (distance, record id) — the same ordering used to break ties at
// the k-th position — so construction is deterministic across platforms.
inline StratifiedGraph build_graph(const FeatureTable& table, int k, double alpha,
                                   double tau) {
  if (table.rows.empty()) throw Error("graph: feature table is empty");
  if (k < 1) throw Error("graph: k must be at least 1");
  if (!(tau > 0.0)) throw Error("graph: tau must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("graph: alpha must lie in [0,1]");

  StratifiedGraph g;
  g.n = table.rows.size();
  g.k = k;
  g.alpha = alpha;
  g.tau = tau;
  g.layer.resize(g.n);
  std::map<int, std::vector<std::size_t>> by_layer;
  for (std::size_t i = 0; i < g.n; ++i) {
    g.layer[i] = table.rows[i].layer;
    by_layer[table.rows[i].layer].push_back(i);
  }

  struct Candidate {
    double dist;
    std::int64_t id;
    std::size_t index;
  };
  std::vector<std::vector<Candidate>> adj(g.n);
  for (const auto& [layer_id, members] : by_layer) {
    (void)layer_id;
    if (members.size() == 1) {
      ++g.isolated_count;
      continue;
    }
    for (std::size_t a = 0; a < members.size(); ++a) {
      const std::size_t i = members[a];
      std::vector<Candidate> cands;
      cands.reserve(members.size() - 1);
      for (std::size_t b = 0; b < members.size(); ++b) {
        if (b == a) continue;
        const std::size_t j = members[b];
        cands.push_back({hybrid_distance(table.rows[i], table.rows[j], table.d_img,
                                         alpha),
                         table.rows[j].id, j});
      }
      std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
        if (x.dist != y.dist) return x.dist < y.dist;
        return x.id < y.id;
      });
      if (cands.size() > static_cast<std::size_t>(k)) {
        cands.resize(static_cast<std::size_t>(k));
      }
      adj[i] = std::move(cands);
    }
  }

  g.offsets.assign(g.n + 1, 0);
  for (std::size_t i = 0; i < g.n; ++i) g.offsets[i + 1] = g.offsets[i] + adj[i].size();
  g.neighbors.resize(g.offsets[g.n]);
  g.distances.resize(g.offsets[g.n]);
  g.affinities.resize(g.offsets[g.n]);
  for (std::size_t i = 0; i < g.n; ++i) {
    std::size_t e = g.offsets[i];
    for (const Candidate& c : adj[i]) {
      g.neighbors[e] = c.index;
      g.distances[e] = c.dist;
      g.affinities[e] = std::exp(-c.dist / tau);
      ++e;
    }
  }
  return g;
}

// Edge-list export: one line per directed edge with the record ids, shared
// layer, hybrid distance, and heat-kernel affinity.
inline void write_graph(const StratifiedGraph& g, const FeatureTable& table,
                        const std::string& path) {
  if (g.n != table.rows.size()) {
    throw Error("graph: node count does not match the feature table");
  }
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("data: cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const std::size_t j = g.neighbors[e];
      out << table.rows[i].id << '\t' << table.rows[j].id << '\t' << g.layer[i] << '\t'
          << detail::fmt_double(g.distances[e]) << '\t'
          << detail::fmt_double(g.affinities[e]) << '\n';
    }
  }
  if (!out.good()) throw Error("data: write failed for '" + path + "'");
}

}  // namespace fildp
