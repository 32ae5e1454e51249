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
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fildp/rng.hpp"

namespace fildp {

// Library-wide error type; messages carry a category prefix such as
// "config:", "data:", "privacy:" so callers and tests can classify failures.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// One monitored melt-pool observation: a thermal patch plus scalar melt-pool
// state descriptors and its position in the build.
struct Record {
  std::int64_t id = 0;
  int layer = 0;
  double pos_y = 0.0;  // position along the track, mm
  double pos_z = 0.0;  // position across tracks, mm
  int label = 0;       // 1 = porous, 0 = dense
  int patch_h = 0;
  int patch_w = 0;
  std::vector<double> patch;  // row-major patch_h x patch_w, degC
  std::vector<double> state;  // scalar melt-pool descriptors
};

inline void validate_record(const Record& r) {
  if (r.label != 0 && r.label != 1) {
    throw Error("data: record " + std::to_string(r.id) + ": label must be 0 or 1");
  }
  if (r.layer < 0) {
    throw Error("data: record " + std::to_string(r.id) + ": negative layer index");
  }
  if (r.patch_h <= 0 || r.patch_w <= 0 ||
      r.patch.size() != static_cast<std::size_t>(r.patch_h) * r.patch_w) {
    throw Error("data: record " + std::to_string(r.id) + ": patch size mismatch");
  }
  for (double v : r.patch) {
    if (!std::isfinite(v)) {
      throw Error("data: record " + std::to_string(r.id) + ": non-finite patch value");
    }
  }
  for (double v : r.state) {
    if (!std::isfinite(v)) {
      throw Error("data: record " + std::to_string(r.id) + ": non-finite state value");
    }
  }
  if (!std::isfinite(r.pos_y) || !std::isfinite(r.pos_z)) {
    throw Error("data: record " + std::to_string(r.id) + ": non-finite position");
  }
}

// Full run configuration.  Every knob of the pipeline lives here; the flat
// key=value file format is parsed by load_config and written by write_config,
// and unknown keys are rejected so that configs cannot silently drift.
struct RunConfig {
  // Protocol.
  double split_train = 0.6;
  double split_val = 0.2;
  double split_test = 0.2;
  std::uint64_t split_seed = 1000003;  // split is fixed across run seeds
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  // Patch geometry and valid pyrometer intensity range (degC).
  int patch_h = 32;
  int patch_w = 32;
  double intensity_min = 1000.0;
  double intensity_max = 2500.0;

  // Encoders.
  int d_img = 48;
  int d_ctx = 16;
  int warmup_epochs = 5;
  double warmup_label_smoothing = 0.1;

  // Graph construction.
  int graph_k = 10;
  double graph_alpha = 0.5;
  double graph_tau = 2.0;

  // Privacy.
  double epsilon = 2.0;
  double delta = 1e-5;
  double beta = 0.6;
  double eta = 0.01;
  double clip_quantile = 0.95;
  std::string privacy_mode = "fi";  // none | uniform | fi

  // Model and optimization.
  int hgat_hidden = 64;
  int hgat_heads = 4;
  int hgat_layers = 2;
  double dropout = 0.2;
  double attention_temperature = 0.1;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 64;
  int epochs = 25;
  double focal_gamma = 2.0;
  std::string focal_alpha_mode = "inverse_frequency";  // inverse_frequency | uniform
  double sampler_minority_fraction = 0.5;
  bool oversampling_enabled = true;
  bool edge_prior_enabled = true;

  // Minority-class augmentation.
  double augment_target_ratio = 0.5;
  double aug_noise_sigma_min = 2.0;
  double aug_noise_sigma_max = 8.0;
  double aug_scale_min = 0.9;
  double aug_scale_max = 1.1;
  double aug_rot_max_deg = 10.0;
  double aug_shift_max_px = 2.0;
  double aug_mix_min = 0.3;
  double aug_mix_max = 0.7;

  // Synthetic data generator.
  int synth_n_records = 1564;
  double synth_porous_rate = 0.0448;
  int synth_n_layers = 22;
  int synth_tracks_per_layer = 2;
  double synth_peak_min = 1000.0;
  double synth_peak_max = 2500.0;
  double synth_heat_accum = 4.0;      // degC of baseline drift per layer
  double synth_cluster_radius = 1.8;  // defect cluster radius, mm
  std::uint64_t synth_seed = 7;

  void validate() const;
};

inline void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw Error("config: " + msg);
  };
  require(split_train > 0 && split_val > 0 && split_test > 0,
          "split fractions must be positive");
  require(std::abs(split_train + split_val + split_test - 1.0) < 1e-9,
          "split fractions must sum to 1");
  require(!seeds.empty(), "seeds list must not be empty");
  require(patch_h > 0 && patch_w > 0, "patch dimensions must be positive");
  require(intensity_max > intensity_min, "intensity_max must exceed intensity_min");
  require(d_img > 0 && d_ctx > 0, "embedding dimensions must be positive");
  require(warmup_epochs >= 1, "warmup_epochs must be >= 1");
  require(warmup_label_smoothing >= 0 && warmup_label_smoothing < 1,
          "warmup_label_smoothing must be in [0,1)");
  require(graph_k >= 1, "graph_k must be >= 1");
  require(graph_alpha >= 0 && graph_alpha <= 1, "graph_alpha must be in [0,1]");
  require(graph_tau > 0, "graph_tau must be positive");
  require(epsilon > 0, "epsilon must be positive");
  require(delta > 0 && delta < 1, "delta must be in (0,1)");
  require(beta >= 0, "beta must be non-negative");
  require(eta > 0, "eta must be positive");
  require(clip_quantile > 0 && clip_quantile <= 1, "clip_quantile must be in (0,1]");
  require(privacy_mode == "none" || privacy_mode == "uniform" || privacy_mode == "fi",
          "privacy_mode must be none, uniform or fi");
  require(hgat_hidden >= 1 && hgat_heads >= 1 && hgat_layers >= 1,
          "model dimensions must be >= 1");
  require(dropout >= 0 && dropout < 1, "dropout must be in [0,1)");
  require(attention_temperature > 0, "attention_temperature must be positive");
  require(learning_rate > 0, "learning_rate must be positive");
  require(weight_decay >= 0, "weight_decay must be non-negative");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 1, "epochs must be >= 1");
  require(focal_gamma >= 0, "focal_gamma must be non-negative");
  require(focal_alpha_mode == "inverse_frequency" || focal_alpha_mode == "uniform",
          "focal_alpha_mode must be inverse_frequency or uniform");
  require(sampler_minority_fraction > 0 && sampler_minority_fraction < 1,
          "sampler_minority_fraction must be in (0,1)");
  require(augment_target_ratio > 0 && augment_target_ratio < 1,
          "augment_target_ratio must be in (0,1)");
  require(aug_noise_sigma_min >= 0 && aug_noise_sigma_max >= aug_noise_sigma_min,
          "augmentation noise range is invalid");
  require(aug_scale_min > 0 && aug_scale_max >= aug_scale_min,
          "augmentation scale range is invalid");
  require(aug_rot_max_deg >= 0 && aug_shift_max_px >= 0,
          "augmentation geometry bounds must be non-negative");
  require(aug_mix_min > 0 && aug_mix_max >= aug_mix_min && aug_mix_max < 1,
          "augmentation mix range must be inside (0,1)");
  require(synth_n_records >= 10, "synth_n_records must be >= 10");
  require(synth_porous_rate > 0 && synth_porous_rate < 1,
          "synth_porous_rate must be in (0,1)");
  require(synth_n_layers >= 2, "synth_n_layers must be >= 2");
  require(synth_tracks_per_layer >= 1, "synth_tracks_per_layer must be >= 1");
  require(synth_peak_max > synth_peak_min, "synthetic peak range is invalid");
  require(synth_cluster_radius > 0, "synth_cluster_radius must be positive");
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw Error("config: key '" + key + "': expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error("config: key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline int parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(d);
  } catch (const std::exception&) {
    throw Error("config: key '" + key + "': expected an integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    unsigned long long d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(d);
  } catch (const std::exception&) {
    throw Error("config: key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
}

inline std::vector<std::uint64_t> parse_u64_list(const std::string& v, const std::string& key) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_u64(item, key));
  }
  if (out.empty()) throw Error("config: key '" + key + "': expected a comma-separated list");
  return out;
}

// Full-precision formatting: %.17g round-trips every finite double exactly.
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

}  // namespace detail

// Applies one key=value assignment to a config; throws on unknown keys.
inline void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "split_train") c.split_train = parse_double(value, key);
  else if (key == "split_val") c.split_val = parse_double(value, key);
  else if (key == "split_test") c.split_test = parse_double(value, key);
  else if (key == "split_seed") c.split_seed = parse_u64(value, key);
  else if (key == "seeds") c.seeds = parse_u64_list(value, key);
  else if (key == "patch_h") c.patch_h = parse_int(value, key);
  else if (key == "patch_w") c.patch_w = parse_int(value, key);
  else if (key == "intensity_min") c.intensity_min = parse_double(value, key);
  else if (key == "intensity_max") c.intensity_max = parse_double(value, key);
  else if (key == "d_img") c.d_img = parse_int(value, key);
  else if (key == "d_ctx") c.d_ctx = parse_int(value, key);
  else if (key == "warmup_epochs") c.warmup_epochs = parse_int(value, key);
  else if (key == "warmup_label_smoothing") c.warmup_label_smoothing = parse_double(value, key);
  else if (key == "graph_k") c.graph_k = parse_int(value, key);
  else if (key == "graph_alpha") c.graph_alpha = parse_double(value, key);
  else if (key == "graph_tau") c.graph_tau = parse_double(value, key);
  else if (key == "epsilon") c.epsilon = parse_double(value, key);
  else if (key == "delta") c.delta = parse_double(value, key);
  else if (key == "beta") c.beta = parse_double(value, key);
  else if (key == "eta") c.eta = parse_double(value, key);
  else if (key == "clip_quantile") c.clip_quantile = parse_double(value, key);
  else if (key == "privacy_mode") c.privacy_mode = value;
  else if (key == "hgat_hidden") c.hgat_hidden = parse_int(value, key);
  else if (key == "hgat_heads") c.hgat_heads = parse_int(value, key);
  else if (key == "hgat_layers") c.hgat_layers = parse_int(value, key);
  else if (key == "dropout") c.dropout = parse_double(value, key);
  else if (key == "attention_temperature") c.attention_temperature = parse_double(value, key);
  else if (key == "learning_rate") c.learning_rate = parse_double(value, key);
  else if (key == "weight_decay") c.weight_decay = parse_double(value, key);
  else if (key == "batch_size") c.batch_size = parse_int(value, key);
  else if (key == "epochs") c.epochs = parse_int(value, key);
  else if (key == "focal_gamma") c.focal_gamma = parse_double(value, key);
  else if (key == "focal_alpha_mode") c.focal_alpha_mode = value;
  else if (key == "sampler_minority_fraction") c.sampler_minority_fraction = parse_double(value, key);
  else if (key == "oversampling_enabled") c.oversampling_enabled = parse_bool(value, key);
  else if (key == "edge_prior_enabled") c.edge_prior_enabled = parse_bool(value, key);
  else if (key == "augment_target_ratio") c.augment_target_ratio = parse_double(value, key);
  else if (key == "aug_noise_sigma_min") c.aug_noise_sigma_min = parse_double(value, key);
  else if (key == "aug_noise_sigma_max") c.aug_noise_sigma_max = parse_double(value, key);
  else if (key == "aug_scale_min") c.aug_scale_min = parse_double(value, key);
  else if (key == "aug_scale_max") c.aug_scale_max = parse_double(value, key);
  else if (key == "aug_rot_max_deg") c.aug_rot_max_deg = parse_double(value, key);
  else if (key == "aug_shift_max_px") c.aug_shift_max_px = parse_double(value, key);
  else if (key == "aug_mix_min") c.aug_mix_min = parse_double(value, key);
  else if (key == "aug_mix_max") c.aug_mix_max = parse_double(value, key);
  else if (key == "synth_n_records") c.synth_n_records = parse_int(value, key);
  else if (key == "synth_porous_rate") c.synth_porous_rate = parse_double(value, key);
  else if (key == "synth_n_layers") c.synth_n_layers = parse_int(value, key);
  else if (key == "synth_tracks_per_layer") c.synth_tracks_per_layer = parse_int(value, key);
  else if (key == "synth_peak_min") c.synth_peak_min = parse_double(value, key);
  else if (key == "synth_peak_max") c.synth_peak_max = parse_double(value, key);
  else if (key == "synth_heat_accum") c.synth_heat_accum = parse_double(value, key);
  else if (key == "synth_cluster_radius") c.synth_cluster_radius = parse_double(value, key);
  else if (key == "synth_seed") c.synth_seed = parse_u64(value, key);
  else throw Error("config: unknown key '" + key + "'");
}

inline RunConfig parse_config(std::istream& in, const std::string& origin = "<stream>") {
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config: " + origin + ":" + std::to_string(lineno) +
                  ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      throw Error("config: " + origin + ":" + std::to_string(lineno) + ": empty key");
    }
    try {
      apply_config_entry(cfg, key, value);
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " (" + origin + ":" + std::to_string(lineno) + ")");
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open '" + path + "'");
  return parse_config(in, path);
}

inline void write_config(const RunConfig& c, std::ostream& out) {
  using detail::fmt_double;
  auto u64list = [](const std::vector<std::uint64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(v[i]);
    }
    return s;
  };
  out << "# protocol\n";
  out << "split_train = " << fmt_double(c.split_train) << "\n";
  out << "split_val = " << fmt_double(c.split_val) << "\n";
  out << "split_test = " << fmt_double(c.split_test) << "\n";
  out << "split_seed = " << c.split_seed << "\n";
  out << "seeds = " << u64list(c.seeds) << "\n";
  out << "# patch geometry and intensity range\n";
  out << "patch_h = " << c.patch_h << "\n";
  out << "patch_w = " << c.patch_w << "\n";
  out << "intensity_min = " << fmt_double(c.intensity_min) << "\n";
  out << "intensity_max = " << fmt_double(c.intensity_max) << "\n";
  out << "# encoders\n";
  out << "d_img = " << c.d_img << "\n";
  out << "d_ctx = " << c.d_ctx << "\n";
  out << "warmup_epochs = " << c.warmup_epochs << "\n";
  out << "warmup_label_smoothing = " << fmt_double(c.warmup_label_smoothing) << "\n";
  out << "# graph\n";
  out << "graph_k = " << c.graph_k << "\n";
  out << "graph_alpha = " << fmt_double(c.graph_alpha) << "\n";
  out << "graph_tau = " << fmt_double(c.graph_tau) << "\n";
  out << "# privacy\n";
  out << "epsilon = " << fmt_double(c.epsilon) << "\n";
  out << "delta = " << fmt_double(c.delta) << "\n";
  out << "beta = " << fmt_double(c.beta) << "\n";
  out << "eta = " << fmt_double(c.eta) << "\n";
  out << "clip_quantile = " << fmt_double(c.clip_quantile) << "\n";
  out << "privacy_mode = " << c.privacy_mode << "\n";
  out << "# model and optimization\n";
  out << "hgat_hidden = " << c.hgat_hidden << "\n";
  out << "hgat_heads = " << c.hgat_heads << "\n";
  out << "hgat_layers = " << c.hgat_layers << "\n";
  out << "dropout = " << fmt_double(c.dropout) << "\n";
  out << "attention_temperature = " << fmt_double(c.attention_temperature) << "\n";
  out << "learning_rate = " << fmt_double(c.learning_rate) << "\n";
  out << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "epochs = " << c.epochs << "\n";
  out << "focal_gamma = " << fmt_double(c.focal_gamma) << "\n";
  out << "focal_alpha_mode = " << c.focal_alpha_mode << "\n";
  out << "sampler_minority_fraction = " << fmt_double(c.sampler_minority_fraction) << "\n";
  out << "oversampling_enabled = " << (c.oversampling_enabled ? "true" : "false") << "\n";
  out << "edge_prior_enabled = " << (c.edge_prior_enabled ? "true" : "false") << "\n";
  out << "# augmentation\n";
  out << "augment_target_ratio = " << fmt_double(c.augment_target_ratio) << "\n";
  out << "aug_noise_sigma_min = " << fmt_double(c.aug_noise_sigma_min) << "\n";
  out << "aug_noise_sigma_max = " << fmt_double(c.aug_noise_sigma_max) << "\n";
  out << "aug_scale_min = " << fmt_double(c.aug_scale_min) << "\n";
  out << "aug_scale_max = " << fmt_double(c.aug_scale_max) << "\n";
  out << "aug_rot_max_deg = " << fmt_double(c.aug_rot_max_deg) << "\n";
  out << "aug_shift_max_px = " << fmt_double(c.aug_shift_max_px) << "\n";
  out << "aug_mix_min = " << fmt_double(c.aug_mix_min) << "\n";
  out << "aug_mix_max = " << fmt_double(c.aug_mix_max) << "\n";
  out << "# synthetic generator\n";
  out << "synth_n_records = " << c.synth_n_records << "\n";
  out << "synth_porous_rate = " << fmt_double(c.synth_porous_rate) << "\n";
  out << "synth_n_layers = " << c.synth_n_layers << "\n";
  out << "synth_tracks_per_layer = " << c.synth_tracks_per_layer << "\n";
  out << "synth_peak_min = " << fmt_double(c.synth_peak_min) << "\n";
  out << "synth_peak_max = " << fmt_double(c.synth_peak_max) << "\n";
  out << "synth_heat_accum = " << fmt_double(c.synth_heat_accum) << "\n";
  out << "synth_cluster_radius = " << fmt_double(c.synth_cluster_radius) << "\n";
  out << "synth_seed = " << c.synth_seed << "\n";
}

inline void save_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("config: cannot write '" + path + "'");
  write_config(c, out);
}

// Index sets of a train/validation/test partition.
struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Stratified split: the two classes are partitioned independently with the
// largest-remainder rule, so each split's class mix stays within one record
// of the requested fractions.  Remainder ties go to the larger split
// (train, then val, then test).  The shuffle depends only on `seed`.
inline SplitIndices split_dataset(const std::vector<Record>& records,
                                  double f_train, double f_val, double f_test,
                                  std::uint64_t seed) {
  if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9 ||
      f_train <= 0 || f_val <= 0 || f_test <= 0) {
    throw Error("config: split fractions must be positive and sum to 1");
  }
  std::vector<std::size_t> porous, dense;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (records[i].label == 1 ? porous : dense).push_back(i);
  }
  if (porous.empty() || dense.empty()) {
    throw Error("data: cannot stratify a single-class dataset");
  }
  if (porous.size() < 3) {
    throw Error("data: need at least 3 porous records to stratify, have " +
                std::to_string(porous.size()));
  }

  RngStream rng = RngHandle{seed, "split"}.stream();
  SplitIndices out;
  const double fractions[3] = {f_train, f_val, f_test};
  std::vector<std::size_t>* sinks[3] = {&out.train, &out.val, &out.test};

  for (std::vector<std::size_t>* cls : {&porous, &dense}) {
    rng.shuffle(*cls);
    const std::size_t n = cls->size();
    std::size_t counts[3];
    double fracpart[3];
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double ideal = static_cast<double>(n) * fractions[s];
      counts[s] = static_cast<std::size_t>(std::floor(ideal + 1e-12));
      fracpart[s] = ideal - static_cast<double>(counts[s]);
      assigned += counts[s];
    }
    // Hand out the remainder by largest fractional part; ties favor the
    // larger split, and the declaration order train > val > test breaks
    // exact ties between equal fractions.
    while (assigned < n) {
      int best = -1;
      for (int s = 0; s < 3; ++s) {
        if (best < 0 || fracpart[s] > fracpart[best] + 1e-12 ||
            (std::abs(fracpart[s] - fracpart[best]) <= 1e-12 &&
             fractions[s] > fractions[best])) {
          best = s;
        }
      }
      counts[best] += 1;
      fracpart[best] = -1.0;
      ++assigned;
    }
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < counts[s]; ++j) {
        sinks[s]->push_back((*cls)[pos++]);
      }
    }
  }
  for (auto* v : sinks) std::sort(v->begin(), v->end());
  return out;
}

}  // namespace fildp
