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
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fildp/core.hpp"
#include "fildp/encoder.hpp"
#include "fildp/nnkit.hpp"
#include "fildp/rng.hpp"

namespace fildp {

// Importance-guided anisotropic local differential privacy.
//
// Each record's fused embedding is released exactly once: both modality
// blocks are l2-clipped, then coordinate-wise Gaussian noise is added with a
// per-dimension scale derived from an importance-weighted split of the total
// (epsilon, delta) budget.  Dimensions with more task signal receive more of
// the budget and therefore less noise.  Everything downstream consumes only
// the released table, so no further privacy loss accrues by post-processing.

enum class PrivacyMode { kFi, kUniform, kNone };

inline PrivacyMode parse_privacy_mode(const std::string& s) {
  if (s == "fi") return PrivacyMode::kFi;
  if (s == "uniform") return PrivacyMode::kUniform;
  if (s == "none") return PrivacyMode::kNone;
  throw Error("config: unknown privacy_mode '" + s + "' (expected fi|uniform|none)");
}

inline std::string privacy_mode_name(PrivacyMode m) {
  switch (m) {
    case PrivacyMode::kFi: return "fi";
    case PrivacyMode::kUniform: return "uniform";
    default: return "none";
  }
}

enum class Provenance { kClean, kClipped, kPrivatized };

inline std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kClean: return "clean";
    case Provenance::kClipped: return "clipped";
    default: return "privatized";
  }
}

inline Provenance parse_provenance(const std::string& s) {
  if (s == "clean") return Provenance::kClean;
  if (s == "clipped") return Provenance::kClipped;
  if (s == "privatized") return Provenance::kPrivatized;
  throw Error("data: unknown provenance '" + s + "'");
}

struct PrivacyBudget {
  double epsilon = 2.0;
  double delta = 1e-5;
  double beta = 0.6;   // anisotropy exponent; 0 reduces to the uniform baseline
  double eta = 0.01;   // stabilizer added to q before exponentiation
  double c_img = 1.0;  // image-block clip bound
  double c_ctx = 1.0;  // context-block clip bound

  // Total sensitivity bound; always recomputed from the block bounds so the
  // two can never drift apart.
  double c_tot() const { return std::sqrt(c_img * c_img + c_ctx * c_ctx); }

  void validate() const {
    if (!(epsilon > 0.0)) throw Error("config: epsilon must be positive");
    if (!(delta > 0.0 && delta < 1.0)) throw Error("config: delta must lie in (0,1)");
    if (!(beta >= 0.0)) throw Error("config: beta must be nonnegative");
    if (!(eta > 0.0)) throw Error("config: eta must be positive");
    if (!(c_img > 0.0) || !(c_ctx > 0.0)) {
      throw Error("config: clip bounds must be positive");
    }
  }

  static PrivacyBudget from_config(const RunConfig& cfg, double fitted_c_img,
                                   double fitted_c_ctx) {
    PrivacyBudget b;
    b.epsilon = cfg.epsilon;
    b.delta = cfg.delta;
    b.beta = cfg.beta;
    b.eta = cfg.eta;
    b.c_img = fitted_c_img;
    b.c_ctx = fitted_c_ctx;
    b.validate();
    return b;
  }
};

struct NoiseSchedule {
  std::vector<double> epsilon_d, delta_d, sigma_d;

  std::size_t dim() const { return sigma_d.size(); }
};

// Nearest-rank empirical quantile: index ceil(q*n) on the ascending sort.
inline double nearest_rank_quantile(std::vector<double> values, double quantile) {
  if (values.empty()) throw Error("privacy: quantile of an empty set");
  if (!(quantile > 0.0 && quantile <= 1.0)) {
    throw Error("privacy: quantile must lie in (0,1]");
  }
  std::sort(values.begin(), values.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(quantile * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

namespace detail {
inline double block_norm(const double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}
}  // namespace detail

// Clip bounds are the nearest-rank quantile of the training-split block
// norms; fitted once on train, applied everywhere.
inline std::pair<double, double> fit_clip_bounds(const Tensor2& train_embeddings,
                                                 int d_img, double quantile) {
  if (train_embeddings.rows() == 0) {
    throw Error("privacy: cannot fit clip bounds on an empty training set");
  }
  if (d_img <= 0 || static_cast<std::size_t>(d_img) >= train_embeddings.cols()) {
    throw Error("privacy: image block width out of range");
  }
  const std::size_t d_ctx = train_embeddings.cols() - static_cast<std::size_t>(d_img);
  std::vector<double> img_norms(train_embeddings.rows());
  std::vector<double> ctx_norms(train_embeddings.rows());
  for (std::size_t i = 0; i < train_embeddings.rows(); ++i) {
    img_norms[i] = detail::block_norm(train_embeddings.row(i), d_img);
    ctx_norms[i] = detail::block_norm(train_embeddings.row(i) + d_img, d_ctx);
  }
  return {nearest_rank_quantile(std::move(img_norms), quantile),
          nearest_rank_quantile(std::move(ctx_norms), quantile)};
}

// Modality-aware clipping: u -> u / max(1, |u|/C) per block, blocks kept in
// the fixed fusion order (image first).
inline std::vector<double> clip_modalities(const std::vector<double>& fused, int d_img,
                                           double c_img, double c_ctx) {
  if (d_img <= 0 || static_cast<std::size_t>(d_img) >= fused.size()) {
    throw Error("privacy: image block width out of range");
  }
  if (!(c_img > 0.0) || !(c_ctx > 0.0)) {
    throw Error("privacy: clip bounds must be positive");
  }
  std::vector<double> out = fused;
  const std::size_t d_ctx = fused.size() - static_cast<std::size_t>(d_img);
  const double n_img = detail::block_norm(out.data(), d_img);
  const double n_ctx = detail::block_norm(out.data() + d_img, d_ctx);
  const double s_img = std::max(1.0, n_img / c_img);
  const double s_ctx = std::max(1.0, n_ctx / c_ctx);
  if (s_img > 1.0) {
    for (int d = 0; d < d_img; ++d) out[d] /= s_img;
  }
  if (s_ctx > 1.0) {
    for (std::size_t d = d_img; d < out.size(); ++d) out[d] /= s_ctx;
  }
  return out;
}

namespace detail {

// Per-dimension delta share.  delta/D rarely round-trips exactly in binary
// floating point; the share is nudged to the nearest neighbouring double for
// which share * D reproduces delta bit-exactly, keeping the accounting
// identity D * delta_d == delta literally true.
inline double delta_share(double delta, std::size_t d_count) {
  const double d = static_cast<double>(d_count);
  double lo = delta / d;
  double hi = lo;
  for (int i = 0; i < 64; ++i) {
    if (lo * d == delta) return lo;
    if (hi * d == delta) return hi;
    lo = std::nextafter(lo, 0.0);
    hi = std::nextafter(hi, std::numeric_limits<double>::infinity());
  }
  return delta / d;
}

}  // namespace detail

// Importance-weighted budget split.  Weights w_d = (q_d + eta)^beta are
// normalized by Z = sum w_r, so eps_d = eps * w_d / Z and the Gaussian scale
// per dimension is sigma_d = 2 C_tot sqrt(2 ln(1.25/delta_d)) / eps_d.
inline NoiseSchedule allocate_budget(const std::vector<double>& q,
                                     const PrivacyBudget& budget) {
  budget.validate();
  if (q.empty()) throw Error("privacy: importance prior is empty");
  for (double v : q) {
    if (!(v >= 0.0)) throw Error("privacy: importance values must be nonnegative");
  }
  const std::size_t dim = q.size();
  std::vector<double> w(dim);
  double z = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    w[d] = std::pow(q[d] + budget.eta, budget.beta);
    z += w[d];
  }
  NoiseSchedule s;
  s.epsilon_d.resize(dim);
  s.delta_d.resize(dim);
  s.sigma_d.resize(dim);
  const double dd = detail::delta_share(budget.delta, dim);
  const double c_tot = budget.c_tot();
  const double noise_base = 2.0 * c_tot * std::sqrt(2.0 * std::log(1.25 / dd));
  for (std::size_t d = 0; d < dim; ++d) {
    s.epsilon_d[d] = budget.epsilon * w[d] / z;
    s.delta_d[d] = dd;
    s.sigma_d[d] = noise_base / s.epsilon_d[d];
  }
  return s;
}

// Single-shot anisotropic Gaussian release.  One noise stream per record id;
// a registry refuses a second release of the same id within the session.
class ReleaseSession {
 public:
  ReleaseSession(NoiseSchedule schedule, PrivacyMode mode, std::uint64_t seed)
      : schedule_(std::move(schedule)), mode_(mode), handle_{seed, "noise"} {}

  const NoiseSchedule& schedule() const { return schedule_; }

  std::vector<double> release(std::int64_t record_id,
                              const std::vector<double>& clipped) {
    if (clipped.size() != schedule_.dim()) {
      throw Error("privacy: clipped vector does not match schedule dimension");
    }
    if (!released_.insert(record_id).second) {
      throw Error("privacy: record " + std::to_string(record_id) +
                  " was already released in this session");
    }
    if (mode_ == PrivacyMode::kNone) return clipped;
    std::vector<double> out = clipped;
    RngStream rng = handle_.stream_for(static_cast<std::uint64_t>(record_id));
    for (std::size_t d = 0; d < out.size(); ++d) {
      out[d] += schedule_.sigma_d[d] * rng.normal();
    }
    return out;
  }

 private:
  NoiseSchedule schedule_;
  PrivacyMode mode_;
  RngHandle handle_;
  std::set<std::int64_t> released_;
};

// The privatized feature table: everything downstream modules are allowed
// to see.  Geometry, layer, and label are carried through as public
// metadata; the feature vector is the released embedding.
struct FeatureRow {
  std::int64_t id = 0;
  int layer = 0;
  double pos_y = 0.0;
  double pos_z = 0.0;
  int label = 0;
  std::vector<double> x;
};

struct FeatureTable {
  int d_img = 0;
  int d_ctx = 0;
  Provenance provenance = Provenance::kClean;
  NoiseSchedule schedule;
  std::vector<FeatureRow> rows;
};

// Clips and releases every record under one schedule computed from the
// training-derived importance prior.  uniform mode is the identical
// mechanism with the anisotropy exponent forced to zero; none skips the
// noise and yields the clipped clean features.
inline FeatureTable privatize_dataset(const std::vector<Record>& records,
                                      const EncoderModel& model,
                                      const std::vector<double>& q,
                                      PrivacyBudget budget, PrivacyMode mode,
                                      std::uint64_t seed, double lo, double hi) {
  if (records.empty()) throw Error("privacy: no records to privatize");
  if (q.size() != static_cast<std::size_t>(model.fused_dim())) {
    throw Error("privacy: importance prior does not match embedding dimension");
  }
  if (mode == PrivacyMode::kUniform) budget.beta = 0.0;
  FeatureTable table;
  table.d_img = model.d_img;
  table.d_ctx = model.d_ctx;
  table.provenance =
      mode == PrivacyMode::kNone ? Provenance::kClipped : Provenance::kPrivatized;
  table.schedule = allocate_budget(q, budget);

  const Tensor2 emb = encode_dataset(model, records, lo, hi);
  ReleaseSession session(table.schedule, mode, seed);
  table.rows.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Record& r = records[i];
    std::vector<double> fused(emb.row(i), emb.row(i) + emb.cols());
    const std::vector<double> clipped =
        clip_modalities(fused, model.d_img, budget.c_img, budget.c_ctx);
    FeatureRow& row = table.rows[i];
    row.id = r.id;
    row.layer = r.layer;
    row.pos_y = r.pos_y;
    row.pos_z = r.pos_z;
    row.label = r.label;
    row.x = session.release(r.id, clipped);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

// Schedule file: four tab-separated columns (dimension, eps_d, delta_d,
// sigma_d), one row per dimension.
inline void write_schedule(const NoiseSchedule& s, const std::string& path) {
  if (s.dim() == 0) throw Error("data: refusing to write an empty schedule");
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("data: cannot open '" + path + "' for writing");
  for (std::size_t d = 0; d < s.dim(); ++d) {
    out << d << '\t' << detail::fmt_double(s.epsilon_d[d]) << '\t'
        << detail::fmt_double(s.delta_d[d]) << '\t'
        << detail::fmt_double(s.sigma_d[d]) << '\n';
  }
  if (!out.good()) throw Error("data: write failed for '" + path + "'");
}

inline NoiseSchedule read_schedule(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("data: cannot open '" + path + "'");
  NoiseSchedule s;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string d_str, e_str, dd_str, sg_str;
    if (!(ls >> d_str >> e_str >> dd_str >> sg_str)) {
      throw Error("data: '" + path + "' line " + std::to_string(line_no) +
                  ": expected 4 columns");
    }
    const std::size_t d = detail::parse_u64(d_str, "schedule dimension");
    if (d != s.dim()) {
      throw Error("data: '" + path + "' line " + std::to_string(line_no) +
                  ": dimensions out of order");
    }
    s.epsilon_d.push_back(detail::parse_double(e_str, "eps_d"));
    s.delta_d.push_back(detail::parse_double(dd_str, "delta_d"));
    s.sigma_d.push_back(detail::parse_double(sg_str, "sigma_d"));
  }
  if (s.dim() == 0) throw Error("data: '" + path + "' contains no schedule rows");
  return s;
}

// Feature table file: header
//   fildp-features 1 <d_img> <d_ctx> <provenance> <n_rows>
// then one tab-separated row per record:
//   id layer pos_y pos_z label x_0 .. x_{D-1}
inline void write_features(const FeatureTable& table, const std::string& path) {
  if (table.rows.empty()) throw Error("data: refusing to write an empty feature table");
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("data: cannot open '" + path + "' for writing");
  const std::size_t dim = static_cast<std::size_t>(table.d_img + table.d_ctx);
  out << "fildp-features 1 " << table.d_img << ' ' << table.d_ctx << ' '
      << provenance_name(table.provenance) << ' ' << table.rows.size() << '\n';
  for (const FeatureRow& r : table.rows) {
    if (r.x.size() != dim) {
      throw Error("data: feature row " + std::to_string(r.id) + " has wrong width");
    }
    out << r.id << '\t' << r.layer << '\t' << detail::fmt_double(r.pos_y) << '\t'
        << detail::fmt_double(r.pos_z) << '\t' << r.label;
    for (double v : r.x) out << '\t' << detail::fmt_double(v);
    out << '\n';
  }
  if (!out.good()) throw Error("data: write failed for '" + path + "'");
}

inline FeatureTable read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("data: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error("data: '" + path + "' is empty");
  std::istringstream hs(line);
  std::string magic;
  int version = 0;
  FeatureTable table;
  std::string prov;
  std::size_t n_rows = 0;
  if (!(hs >> magic >> version >> table.d_img >> table.d_ctx >> prov >> n_rows) ||
      magic != "fildp-features") {
    throw Error("data: '" + path + "' is not a feature table file");
  }
  if (version != 1) throw Error("data: unsupported feature table version");
  if (table.d_img <= 0 || table.d_ctx <= 0) {
    throw Error("data: feature table has invalid block widths");
  }
  table.provenance = parse_provenance(prov);
  const std::size_t dim = static_cast<std::size_t>(table.d_img + table.d_ctx);
  std::size_t line_no = 1;
  std::set<std::int64_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> fields;
    std::string f;
    while (ls >> f) fields.push_back(f);
    if (fields.size() != 5 + dim) {
      throw Error("data: '" + path + "' line " + std::to_string(line_no) +
                  ": expected " + std::to_string(5 + dim) + " fields, got " +
                  std::to_string(fields.size()));
    }
    FeatureRow r;
    r.id = detail::parse_int(fields[0], "id");
    r.layer = static_cast<int>(detail::parse_int(fields[1], "layer"));
    r.pos_y = detail::parse_double(fields[2], "pos_y");
    r.pos_z = detail::parse_double(fields[3], "pos_z");
    r.label = static_cast<int>(detail::parse_int(fields[4], "label"));
    if (r.label != 0 && r.label != 1) {
      throw Error("data: '" + path + "' line " + std::to_string(line_no) +
                  ": label must be 0/1");
    }
    r.x.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      r.x[d] = detail::parse_double(fields[5 + d], "feature");
      if (!std::isfinite(r.x[d])) {
        throw Error("data: '" + path + "' line " + std::to_string(line_no) +
                    ": non-finite feature value");
      }
    }
    if (!seen.insert(r.id).second) {
      throw Error("data: '" + path + "' line " + std::to_string(line_no) +
                  ": duplicate record id " + std::to_string(r.id));
    }
    table.rows.push_back(std::move(r));
  }
  if (table.rows.size() != n_rows) {
    throw Error("data: '" + path + "' row count mismatch (header " +
                std::to_string(n_rows) + ", found " +
                std::to_string(table.rows.size()) + ")");
  }
  return table;
}

}  // namespace fildp
