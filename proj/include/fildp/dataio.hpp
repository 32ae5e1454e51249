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
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fildp/core.hpp"
#include "fildp/rng.hpp"

namespace fildp {

// Dataset file format (tab-separated text, one record per line):
//
//   fildp-dataset 1 <patch_h> <patch_w> <state_dim>
//   id  layer  pos_y  pos_z  label  s_0..s_{state_dim-1}  p_0..p_{h*w-1}
//
// Doubles are printed with %.17g, so write -> read round-trips exactly.

inline void write_dataset(const std::vector<Record>& records, const std::string& path) {
  if (records.empty()) throw Error("data: refusing to write an empty dataset");
  const int h = records.front().patch_h;
  const int w = records.front().patch_w;
  const std::size_t ds = records.front().state.size();
  for (const Record& r : records) {
    validate_record(r);
    if (r.patch_h != h || r.patch_w != w || r.state.size() != ds) {
      throw Error("data: record " + std::to_string(r.id) +
                  ": inconsistent patch/state dimensions");
    }
  }
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw Error("data: cannot write '" + path + "'");
  out << "fildp-dataset 1 " << h << " " << w << " " << ds << "\n";
  for (const Record& r : records) {
    out << r.id << "\t" << r.layer << "\t" << detail::fmt_double(r.pos_y) << "\t"
        << detail::fmt_double(r.pos_z) << "\t" << r.label;
    for (double s : r.state) out << "\t" << detail::fmt_double(s);
    for (double p : r.patch) out << "\t" << detail::fmt_double(p);
    out << "\n";
  }
}

inline std::vector<Record> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("data: cannot open '" + path + "'");
  std::string header;
  if (!std::getline(in, header)) throw Error("data: '" + path + "' is empty");
  std::istringstream hs(header);
  std::string magic;
  int version = 0, h = 0, w = 0;
  std::size_t ds = 0;
  hs >> magic >> version >> h >> w >> ds;
  if (magic != "fildp-dataset" || hs.fail()) {
    throw Error("data: '" + path + "' has a malformed header");
  }
  if (version != 1) {
    throw Error("data: '" + path + "' has unsupported version " + std::to_string(version));
  }
  if (h <= 0 || w <= 0) throw Error("data: '" + path + "' has invalid patch dimensions");

  const std::size_t want_fields = 5 + ds + static_cast<std::size_t>(h) * w;
  std::vector<Record> records;
  std::set<std::int64_t> seen_ids;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string where = "'" + path + "' line " + std::to_string(lineno);
    if (fields.size() != want_fields) {
      throw Error("data: " + where + ": expected " + std::to_string(want_fields) +
                  " fields, found " + std::to_string(fields.size()));
    }
    auto field_double = [&](std::size_t idx) {
      try {
        std::size_t pos = 0;
        double v = std::stod(fields[idx], &pos);
        if (pos != fields[idx].size()) throw std::invalid_argument(fields[idx]);
        return v;
      } catch (const std::exception&) {
        throw Error("data: " + where + ": field " + std::to_string(idx + 1) +
                    " is not a number: '" + fields[idx] + "'");
      }
    };
    auto field_long = [&](std::size_t idx) {
      try {
        std::size_t pos = 0;
        long long v = std::stoll(fields[idx], &pos);
        if (pos != fields[idx].size()) throw std::invalid_argument(fields[idx]);
        return v;
      } catch (const std::exception&) {
        throw Error("data: " + where + ": field " + std::to_string(idx + 1) +
                    " is not an integer: '" + fields[idx] + "'");
      }
    };
    Record r;
    r.id = field_long(0);
    r.layer = static_cast<int>(field_long(1));
    r.pos_y = field_double(2);
    r.pos_z = field_double(3);
    r.label = static_cast<int>(field_long(4));
    r.patch_h = h;
    r.patch_w = w;
    r.state.resize(ds);
    for (std::size_t i = 0; i < ds; ++i) r.state[i] = field_double(5 + i);
    r.patch.resize(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < r.patch.size(); ++i) r.patch[i] = field_double(5 + ds + i);
    try {
      validate_record(r);
    } catch (const Error& e) {
      throw Error("data: " + where + ": " + e.what());
    }
    if (!seen_ids.insert(r.id).second) {
      throw Error("data: " + where + ": duplicate record id " + std::to_string(r.id));
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw Error("data: '" + path + "' contains no records");
  return records;
}

// Synthetic build generator.
//
// Records are laid out on a deterministic lattice: `n_layers` layers, each
// with `tracks_per_layer` parallel tracks along a 25.4 mm wall; melt-pool
// snapshots sit at even spacing along each track.  Per layer, a few defect
// clusters are placed at random positions; a latent defect-intensity field
// (sum of Gaussian bumps around the cluster centers) drives three coupled
// physical signatures:
//
//   * the thermal peak is depressed below the layer's drifting baseline,
//   * the melt pool becomes more eccentric (elongated blob),
//   * which in turn shrinks the superlevel-set area of the patch.
//
// Porosity labels are the top-q quantile of a score mixing the latent field
// with the observable anomalies plus independent noise, so labels are
// predictable from the patches but not perfectly so, and porous records
// cluster spatially within layers.
struct SynthParams {
  int n_records = 1564;
  double porous_rate = 0.0448;
  int n_layers = 22;
  int tracks_per_layer = 2;
  int patch_h = 32;
  int patch_w = 32;
  double intensity_min = 1000.0;
  double intensity_max = 2500.0;
  double peak_min = 1000.0;
  double peak_max = 2500.0;
  double heat_accum = 4.0;      // degC of baseline drift per layer
  double cluster_radius = 1.8;  // defect cluster radius, mm
  std::uint64_t seed = 7;

  static SynthParams from_config(const RunConfig& c) {
    SynthParams p;
    p.n_records = c.synth_n_records;
    p.porous_rate = c.synth_porous_rate;
    p.n_layers = c.synth_n_layers;
    p.tracks_per_layer = c.synth_tracks_per_layer;
    p.patch_h = c.patch_h;
    p.patch_w = c.patch_w;
    p.intensity_min = c.intensity_min;
    p.intensity_max = c.intensity_max;
    p.peak_min = c.synth_peak_min;
    p.peak_max = c.synth_peak_max;
    p.heat_accum = c.synth_heat_accum;
    p.cluster_radius = c.synth_cluster_radius;
    p.seed = c.synth_seed;
    return p;
  }

  void validate() const {
    if (n_records < 10) throw Error("data: synthetic build needs >= 10 records");
    if (porous_rate <= 0 || porous_rate >= 1) {
      throw Error("data: porous_rate must be in (0,1)");
    }
    if (n_layers < 2) throw Error("data: need at least 2 layers");
    if (tracks_per_layer < 1) throw Error("data: need at least 1 track per layer");
    if (patch_h < 8 || patch_w < 8) throw Error("data: patches must be at least 8x8");
    if (peak_max <= peak_min) throw Error("data: peak range is empty");
    if (intensity_max <= intensity_min) throw Error("data: intensity range is empty");
    if (cluster_radius <= 0) throw Error("data: cluster_radius must be positive");
    const int n_porous = static_cast<int>(std::lround(n_records * porous_rate));
    if (n_porous < 3) {
      throw Error("data: configuration yields fewer than 3 porous records");
    }
  }
};

namespace synth {
// Fixed generator physics (not exposed as configuration).
constexpr double kWallLength = 25.4;     // mm of track per layer
constexpr double kTrackSpacing = 0.4;    // mm between adjacent tracks
constexpr double kPeakDrop = 260.0;      // degC peak depression per unit defect intensity
constexpr double kPeakJitter = 300.0;    // degC of peak measurement noise
constexpr double kEccBase = 0.10;        // baseline melt-pool eccentricity
constexpr double kEccGain = 0.50;        // eccentricity increase per unit defect intensity
constexpr double kEccJitter = 0.34;
constexpr double kBlobWidth = 4.2;       // nominal blob sigma, px
constexpr double kWidthJitter = 0.16;    // relative sigma jitter
constexpr double kCenterJitter = 0.8;    // px jitter of the blob center
constexpr double kPixelNoise = 6.0;      // degC of per-pixel sensor noise
constexpr double kAmbientLift = 0.5;     // ambient rise as a fraction of heat_accum
constexpr double kScoreLatent = 0.10;     // label score weights
constexpr double kScorePeak = 0.16;
constexpr double kScoreEcc = 0.19;
constexpr double kScoreWidth = 0.06;
constexpr double kScoreNoise = 0.028;
}  // namespace synth

inline std::vector<Record> generate_synthetic(const SynthParams& p) {
  p.validate();
  const RngHandle handle{p.seed, "synth"};
  const int n = p.n_records;
  const double peak_range = p.peak_max - p.peak_min;

  // Lattice positions: layer, track, and even spacing along the track.
  struct Slot {
    int layer, track;
    double y, z;
  };
  std::vector<Slot> slots;
  slots.reserve(n);
  const int base = n / p.n_layers;
  const int extra = n % p.n_layers;
  for (int layer = 0; layer < p.n_layers; ++layer) {
    const int in_layer = base + (layer < extra ? 1 : 0);
    const int per_track = (in_layer + p.tracks_per_layer - 1) / p.tracks_per_layer;
    int emitted = 0;
    for (int t = 0; t < p.tracks_per_layer && emitted < in_layer; ++t) {
      const int m = std::min(per_track, in_layer - emitted);
      for (int j = 0; j < m; ++j, ++emitted) {
        Slot s;
        s.layer = layer;
        s.track = t;
        s.y = (j + 0.5) * synth::kWallLength / m;
        s.z = (t - 0.5 * (p.tracks_per_layer - 1)) * synth::kTrackSpacing;
        slots.push_back(s);
      }
    }
  }

  // Per-layer defect clusters: 1-3 Gaussian bumps with random position and
  // strength.  Cluster draws are keyed off the layer index so they do not
  // depend on the number of records per layer.
  struct Cluster {
    double y, z, strength;
  };
  std::vector<std::vector<Cluster>> clusters(p.n_layers);
  const double z_span = 0.5 * (p.tracks_per_layer - 1) * synth::kTrackSpacing;
  for (int layer = 0; layer < p.n_layers; ++layer) {
    RngStream ls = handle.stream_for(0x10000000ULL + static_cast<std::uint64_t>(layer));
    int count = 1;
    if (ls.uniform01() < 0.5) ++count;
    if (ls.uniform01() < 0.18) ++count;
    for (int c = 0; c < count; ++c) {
      Cluster cl;
      cl.y = ls.uniform(0.0, synth::kWallLength);
      cl.z = ls.uniform(-z_span - 0.2, z_span + 0.2);
      cl.strength = ls.uniform(0.7, 1.0);
      clusters[layer].push_back(cl);
    }
  }

  std::vector<Record> records(n);
  std::vector<double> scores(n);
  for (int i = 0; i < n; ++i) {
    const Slot& s = slots[i];
    Record& r = records[i];
    r.id = i + 1;
    r.layer = s.layer;
    r.pos_y = s.y;
    r.pos_z = s.z;
    r.patch_h = p.patch_h;
    r.patch_w = p.patch_w;

    double u = 0.0;
    for (const Cluster& cl : clusters[s.layer]) {
      const double dy = s.y - cl.y;
      const double dz = s.z - cl.z;
      u += cl.strength *
           std::exp(-(dy * dy + dz * dz) / (2.0 * p.cluster_radius * p.cluster_radius));
    }

    RngStream rs = handle.stream_for(static_cast<std::uint64_t>(r.id));
    const double base_peak =
        std::min(p.peak_min + 0.64 * peak_range + p.heat_accum * s.layer,
                 p.peak_min + 0.88 * peak_range);
    const double peak =
        base_peak - synth::kPeakDrop * u + synth::kPeakJitter * rs.normal();
    const double ecc = std::clamp(
        synth::kEccBase + synth::kEccGain * u + synth::kEccJitter * rs.normal(), 0.0, 0.85);
    const double width_jn = rs.normal();
    const double width = synth::kBlobWidth * (1.0 + synth::kWidthJitter * width_jn);
    const double phi = rs.uniform(0.0, M_PI);
    const double off_r = synth::kCenterJitter * rs.normal();
    const double off_c = synth::kCenterJitter * rs.normal();
    const double score_noise = rs.normal();

    const double ambient =
        p.intensity_min + synth::kAmbientLift * p.heat_accum * s.layer;
    const double sigma_a = std::max(0.5, width * (1.0 + ecc));
    const double sigma_b = std::max(0.5, width / (1.0 + ecc));
    const double cr = 0.5 * (p.patch_h - 1) + off_r;
    const double cc = 0.5 * (p.patch_w - 1) + off_c;
    const double cphi = std::cos(phi), sphi = std::sin(phi);

    r.patch.resize(static_cast<std::size_t>(p.patch_h) * p.patch_w);
    for (int row = 0; row < p.patch_h; ++row) {
      for (int col = 0; col < p.patch_w; ++col) {
        const double dr = row - cr;
        const double dc = col - cc;
        const double a = dc * cphi + dr * sphi;
        const double b = -dc * sphi + dr * cphi;
        const double q = (a * a) / (sigma_a * sigma_a) + (b * b) / (sigma_b * sigma_b);
        double v = ambient + (peak - ambient) * std::exp(-0.5 * q) +
                   synth::kPixelNoise * rs.normal();
        r.patch[static_cast<std::size_t>(row) * p.patch_w + col] =
            std::clamp(v, p.intensity_min, p.intensity_max);
      }
    }

    // Melt-pool state descriptors derived from the rendered patch, as a
    // monitoring stack would log them: normalized peak and mean intensity,
    // superlevel-set area, moment eccentricity, and the centroid offset.
    {
      const int hh = p.patch_h, ww = p.patch_w;
      const double irange = p.intensity_max - p.intensity_min;
      double vmax = -1e300, vsum = 0.0;
      for (double v : r.patch) {
        vmax = std::max(vmax, v);
        vsum += v;
      }
      const double vmean = vsum / static_cast<double>(r.patch.size());
      const double area_thresh = p.intensity_min + 0.40 * irange;
      double area = 0.0, wsum = 0.0, wr = 0.0, wc = 0.0;
      for (int row = 0; row < hh; ++row) {
        for (int col = 0; col < ww; ++col) {
          const double v = r.patch[static_cast<std::size_t>(row) * ww + col];
          area += (v > area_thresh) ? 1.0 : 0.0;
          const double wgt = std::max(0.0, v - vmean);
          wsum += wgt;
          wr += wgt * row;
          wc += wgt * col;
        }
      }
      area /= static_cast<double>(hh * ww);
      double mrr = 0.0, mcc = 0.0, mrc = 0.0;
      const double cbar_r = wsum > 0 ? wr / wsum : 0.5 * (hh - 1);
      const double cbar_c = wsum > 0 ? wc / wsum : 0.5 * (ww - 1);
      if (wsum > 0) {
        for (int row = 0; row < hh; ++row) {
          for (int col = 0; col < ww; ++col) {
            const double v = r.patch[static_cast<std::size_t>(row) * ww + col];
            const double wgt = std::max(0.0, v - vmean);
            mrr += wgt * (row - cbar_r) * (row - cbar_r);
            mcc += wgt * (col - cbar_c) * (col - cbar_c);
            mrc += wgt * (row - cbar_r) * (col - cbar_c);
          }
        }
        mrr /= wsum;
        mcc /= wsum;
        mrc /= wsum;
      }
      const double tr = 0.5 * (mrr + mcc);
      const double det = std::sqrt(std::max(0.0, 0.25 * (mrr - mcc) * (mrr - mcc) + mrc * mrc));
      const double lmax = tr + det, lmin = tr - det;
      const double mom_ecc = lmax > 0 ? std::sqrt(std::max(0.0, 1.0 - lmin / lmax)) : 0.0;
      r.state = {(vmax - p.intensity_min) / irange,
                 (vmean - p.intensity_min) / irange,
                 area,
                 mom_ecc,
                 (cbar_r - 0.5 * (hh - 1)) / (0.5 * hh),
                 (cbar_c - 0.5 * (ww - 1)) / (0.5 * ww)};
    }

    const double peak_anom = (base_peak - peak) / synth::kPeakDrop;
    const double ecc_anom = (ecc - synth::kEccBase) / synth::kEccGain;
    // Narrow melt pools leave under-filled tracks, another porosity pathway;
    // the width deficit is observable through the superlevel-set area.
    const double width_anom = -width_jn;
    scores[i] = synth::kScoreLatent * u + synth::kScorePeak * peak_anom +
                synth::kScoreEcc * ecc_anom + synth::kScoreWidth * width_anom +
                synth::kScoreNoise * score_noise;
  }

  // Top-quantile labeling: exactly round(n * porous_rate) porous records.
  const int n_porous = static_cast<int>(std::lround(n * p.porous_rate));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return records[a].id < records[b].id;
  });
  for (int i = 0; i < n_porous; ++i) records[order[i]].label = 1;

  for (const Record& r : records) validate_record(r);
  return records;
}

}  // namespace fildp
