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
#include <string>
#include <vector>

#include "fildp/core.hpp"
#include "fildp/rng.hpp"

namespace fildp {

// Minority-class augmentation.  Four patch-level operators produce extra
// porous training records; they are applied only to copies of porous records
// from the training split, never to validation or test data.

struct AugmentPolicy {
  double target_ratio = 0.5;       // desired porous fraction after appending
  double noise_sigma_min = 2.0;    // degC, additive Gaussian noise
  double noise_sigma_max = 8.0;
  double scale_min = 0.9;          // multiplicative brightness
  double scale_max = 1.1;
  double rot_max_deg = 10.0;       // rigid transform bounds
  double shift_max_px = 2.0;
  double mix_min = 0.3;            // convex mixing coefficient bounds
  double mix_max = 0.7;
  double intensity_min = 1000.0;   // valid pyrometer range for clamping
  double intensity_max = 2500.0;

  static AugmentPolicy from_config(const RunConfig& c) {
    AugmentPolicy p;
    p.target_ratio = c.augment_target_ratio;
    p.noise_sigma_min = c.aug_noise_sigma_min;
    p.noise_sigma_max = c.aug_noise_sigma_max;
    p.scale_min = c.aug_scale_min;
    p.scale_max = c.aug_scale_max;
    p.rot_max_deg = c.aug_rot_max_deg;
    p.shift_max_px = c.aug_shift_max_px;
    p.mix_min = c.aug_mix_min;
    p.mix_max = c.aug_mix_max;
    p.intensity_min = c.intensity_min;
    p.intensity_max = c.intensity_max;
    return p;
  }
};

// A1: additive per-pixel Gaussian noise, clamped to the valid range.
inline Record a1_gaussian_noise(const Record& in, double sigma, double lo, double hi,
                                RngStream& rng) {
  validate_record(in);
  if (sigma < 0) throw Error("augment: noise sigma must be non-negative");
  Record out = in;
  if (sigma > 0) {
    for (double& v : out.patch) {
      v = std::clamp(v + sigma * rng.normal(), lo, hi);
    }
  }
  return out;
}

// A2: multiplicative brightness change, clamped to the valid range.
inline Record a2_brightness(const Record& in, double scale, double lo, double hi) {
  validate_record(in);
  if (scale <= 0) throw Error("augment: brightness scale must be positive");
  Record out = in;
  for (double& v : out.patch) {
    v = std::clamp(scale * v, lo, hi);
  }
  return out;
}

// A3: rigid transform - rotation about the patch center (positive angles
// turn content counterclockwise) with bilinear resampling, followed by an
// integer translation (positive shifts move content toward larger row /
// column indices).  Samples that fall outside the source patch read the
// ambient floor `lo`.
inline Record a3_rigid(const Record& in, double angle_deg, int shift_r, int shift_c,
                       double lo) {
  validate_record(in);
  Record out = in;
  const int h = in.patch_h, w = in.patch_w;
  const double theta = angle_deg * M_PI / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  auto sample = [&](double r, double c) {
    const int r0 = static_cast<int>(std::floor(r));
    const int c0 = static_cast<int>(std::floor(c));
    const double fr = r - r0, fc = c - c0;
    double acc = 0.0;
    for (int dr = 0; dr <= 1; ++dr) {
      for (int dc = 0; dc <= 1; ++dc) {
        const double wgt = (dr ? fr : 1.0 - fr) * (dc ? fc : 1.0 - fc);
        if (wgt == 0.0) continue;
        const int rr = r0 + dr, cc = c0 + dc;
        const double v = (rr >= 0 && rr < h && cc >= 0 && cc < w)
                             ? in.patch[static_cast<std::size_t>(rr) * w + cc]
                             : lo;
        acc += wgt * v;
      }
    }
    return acc;
  };
  // Bilinear weights sum to 1 only up to rounding, so the result is clamped
  // back to the convex hull of the source values and the fill.
  double vmin = lo, vmax = lo;
  for (double v : in.patch) {
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double r_unshift = r - shift_r;
      const double c_unshift = c - shift_c;
      // Inverse rotation of the destination offset gives the source point.
      const double dro = r_unshift - cy, dco = c_unshift - cx;
      const double sr = cy + dro * ct + dco * st;
      const double sc = cx - dro * st + dco * ct;
      out.patch[static_cast<std::size_t>(r) * w + c] =
          std::clamp(sample(sr, sc), vmin, vmax);
    }
  }
  return out;
}

// A4: convex mixing of two porous records - both the patch and the state
// vector are interpolated; the result keeps the first parent's position.
inline Record a4_mixup(const Record& a, const Record& b, double lambda) {
  validate_record(a);
  validate_record(b);
  if (a.label != 1 || b.label != 1) {
    throw Error("augment: mixing is defined for porous pairs only");
  }
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw Error("augment: mixing coefficient must be in (0,1)");
  }
  if (a.patch_h != b.patch_h || a.patch_w != b.patch_w ||
      a.state.size() != b.state.size()) {
    throw Error("augment: mixing requires matching record shapes");
  }
  Record out = a;
  for (std::size_t i = 0; i < out.patch.size(); ++i) {
    out.patch[i] = lambda * a.patch[i] + (1.0 - lambda) * b.patch[i];
  }
  for (std::size_t i = 0; i < out.state.size(); ++i) {
    out.state[i] = lambda * a.state[i] + (1.0 - lambda) * b.state[i];
  }
  out.label = 1;
  return out;
}

// Appends augmented porous copies until the porous fraction reaches the
// policy target: appending `a` copies to P porous of T total must satisfy
// (P + a) / (T + a) >= target, i.e. a = ceil((target*T - P) / (1 - target)).
// Each copy draws its source record, operator (uniform over A1-A4), and
// operator parameters from a stream forked per copy index, so the result is
// independent of processing order.  Returns originals + appended copies.
inline std::vector<Record> augment_training_set(const std::vector<Record>& train,
                                                const AugmentPolicy& policy,
                                                std::uint64_t seed) {
  if (train.empty()) throw Error("augment: empty training set");
  std::vector<std::size_t> porous;
  std::int64_t max_id = train.front().id;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].label == 1) porous.push_back(i);
    max_id = std::max(max_id, train[i].id);
  }
  const double target = policy.target_ratio;
  const double deficit = target * static_cast<double>(train.size()) -
                         static_cast<double>(porous.size());
  std::size_t n_append = 0;
  if (deficit > 0) {
    n_append = static_cast<std::size_t>(std::ceil(deficit / (1.0 - target) - 1e-9));
  }
  std::vector<Record> out = train;
  if (n_append == 0) return out;
  if (porous.empty()) {
    throw Error("augment: no porous records to augment");
  }

  const RngHandle handle{seed, "augment"};
  out.reserve(train.size() + n_append);
  for (std::size_t i = 0; i < n_append; ++i) {
    RngStream rng = handle.stream_for(i);
    const std::size_t src_pos = rng.index(porous.size());
    const Record& src = train[porous[src_pos]];
    Record copy;
    switch (rng.index(4)) {
      case 0: {
        const double sigma = rng.uniform(policy.noise_sigma_min, policy.noise_sigma_max);
        copy = a1_gaussian_noise(src, sigma, policy.intensity_min, policy.intensity_max, rng);
        break;
      }
      case 1: {
        const double scale = rng.uniform(policy.scale_min, policy.scale_max);
        copy = a2_brightness(src, scale, policy.intensity_min, policy.intensity_max);
        break;
      }
      case 2: {
        const double angle = rng.uniform(-policy.rot_max_deg, policy.rot_max_deg);
        const int max_px = static_cast<int>(policy.shift_max_px);
        const int sr = static_cast<int>(rng.index(2 * max_px + 1)) - max_px;
        const int sc = static_cast<int>(rng.index(2 * max_px + 1)) - max_px;
        copy = a3_rigid(src, angle, sr, sc, policy.intensity_min);
        break;
      }
      default: {
        // A self-pair only happens when the split has a single porous record.
        const std::size_t partner_pos =
            porous.size() > 1
                ? (src_pos + 1 + rng.index(porous.size() - 1)) % porous.size()
                : src_pos;
        const double lambda = rng.uniform(policy.mix_min, policy.mix_max);
        copy = a4_mixup(src, train[porous[partner_pos]], lambda);
        break;
      }
    }
    copy.id = max_id + 1 + static_cast<std::int64_t>(i);
    out.push_back(std::move(copy));
  }
  return out;
}

}  // namespace fildp
