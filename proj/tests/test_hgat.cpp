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

#include "fildp/hgat.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "fildp/dataio.hpp"
#include "fildp/encoder.hpp"
#include "fildp/rng.hpp"
#include "test_util.hpp"

namespace fildp {
namespace {

// Hand-assembled star graph: node 0 points at nodes 1..m with the given
// affinities; every other node is isolated (self-loop path).  Distances are
// placeholders — attention only reads affinities.
StratifiedGraph star_graph(std::size_t n, const std::vector<double>& affinities) {
  StratifiedGraph g;
  g.n = n;
  g.k = static_cast<int>(affinities.size());
  g.alpha = 0.5;
  g.tau = 2.0;
  g.layer.assign(n, 0);
  g.offsets.assign(n + 1, affinities.size());
  g.offsets[0] = 0;
  for (std::size_t j = 0; j < affinities.size(); ++j) {
    g.neighbors.push_back(j + 1);
    g.distances.push_back(1.0);
    g.affinities.push_back(affinities[j]);
  }
  return g;
}

HgatModel tiny_model(int layers, int heads, int hidden, int in_dim,
                     std::uint64_t seed, bool edge_prior = true,
                     double temperature = 0.1) {
  HgatConfig c;
  c.layers = layers;
  c.heads = heads;
  c.hidden = hidden;
  c.in_dim = in_dim;
  c.dropout = 0.0;
  c.attention_temperature = temperature;
  c.edge_prior_enabled = edge_prior;
  RngStream rng = RngHandle{seed, "test-model"}.stream();
  HgatModel m;
  m.init(c, rng);
  return m;
}

Tensor2 random_features(std::size_t n, std::size_t d, std::uint64_t seed,
                        double scale = 1.0) {
  RngStream rng = RngHandle{seed, "test-feat"}.stream();
  Tensor2 x(n, d);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = scale * rng.normal();
  return x;
}

// Random stratified instance built through the real graph constructor.
struct RandomInstance {
  FeatureTable table;
  StratifiedGraph graph;
  Tensor2 features;
};

RandomInstance random_instance(std::uint64_t seed, std::size_t n, int strata,
                               int d, int k) {
  RngStream rng = RngHandle{seed, "test-instance"}.stream();
  RandomInstance inst;
  inst.table.d_img = d / 2;
  inst.table.d_ctx = d - d / 2;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureRow row;
    row.id = static_cast<std::int64_t>(i);
    row.layer = static_cast<int>(i % static_cast<std::size_t>(strata));
    row.pos_y = rng.uniform(-10.0, 10.0);
    row.pos_z = rng.uniform(-10.0, 10.0);
    row.label = rng.uniform01() < 0.3 ? 1 : 0;
    row.x.resize(static_cast<std::size_t>(d));
    for (double& v : row.x) v = rng.normal();
    inst.table.rows.push_back(std::move(row));
  }
  inst.graph = build_graph(inst.table, k, 0.5, 2.0);
  inst.features = node_feature_matrix(inst.table);
  return inst;
}

// ---------------------------------------------------------------------------
// Attention coefficients
// ---------------------------------------------------------------------------

TEST(Attention, RowsSumToOneForEveryLayerAndHead) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    RandomInstance inst = random_instance(100 + trial, 24 + trial % 7, 3, 8, 4);
    HgatModel m = tiny_model(2, 2, 5, 8, trial);
    HgatCache cache;
    hgat_forward(m, inst.graph, inst.features, false, nullptr, &cache);
    for (const auto& layer : cache.layers) {
      for (const auto& head : layer.heads) {
        for (std::size_t i = 0; i < inst.graph.n; ++i) {
          const std::size_t b = inst.graph.offsets[i];
          const std::size_t e = inst.graph.offsets[i + 1];
          if (b == e) continue;
          double sum = 0.0;
          for (std::size_t t = b; t < e; ++t) {
            EXPECT_GE(head.edge_alpha[t], 0.0);
            sum += head.edge_alpha[t];
          }
          EXPECT_NEAR(sum, 1.0, 1e-9);
        }
      }
    }
  }
}

TEST(Attention, SingleNeighborCoefficientIsExactlyOne) {
  StratifiedGraph g = star_graph(2, {0.6});
  HgatModel m = tiny_model(1, 1, 4, 3, 42);
  Tensor2 x = random_features(2, 3, 42);
  HgatCache cache;
  hgat_forward(m, g, x, false, nullptr, &cache);
  EXPECT_EQ(cache.layers[0].heads[0].edge_alpha[0], 1.0);
}

TEST(Attention, TwoIdenticalNeighborsSplitEvenly) {
  StratifiedGraph g = star_graph(3, {0.6, 0.6});
  HgatModel m = tiny_model(1, 1, 4, 3, 43);
  Tensor2 x = random_features(3, 3, 43);
  for (std::size_t c = 0; c < 3; ++c) x(2, c) = x(1, c);  // twin neighbors
  HgatCache cache;
  hgat_forward(m, g, x, false, nullptr, &cache);
  EXPECT_EQ(cache.layers[0].heads[0].edge_alpha[0], 0.5);
  EXPECT_EQ(cache.layers[0].heads[0].edge_alpha[1], 0.5);
}

TEST(Attention, HighTemperatureFlattensCoefficients) {
  RandomInstance inst = random_instance(7, 30, 2, 6, 5);
  HgatModel m = tiny_model(2, 2, 5, 6, 7, true, 1e3);
  HgatCache cache;
  hgat_forward(m, inst.graph, inst.features, false, nullptr, &cache);
  for (const auto& layer : cache.layers) {
    for (const auto& head : layer.heads) {
      for (std::size_t i = 0; i < inst.graph.n; ++i) {
        const std::size_t b = inst.graph.offsets[i];
        const std::size_t e = inst.graph.offsets[i + 1];
        if (b == e) continue;
        const double uniform = 1.0 / static_cast<double>(e - b);
        for (std::size_t t = b; t < e; ++t) {
          EXPECT_NEAR(head.edge_alpha[t], uniform, 1e-3);
        }
      }
    }
  }
}

TEST(Attention, EqualPriorsShiftOutOfTheSoftmax) {
  // All affinities equal within the neighborhood and attention logits kept on
  // one side of the LeakyReLU kink: the prior contributes a constant that the
  // softmax removes, so coefficients depend on node features alone.
  HgatModel m = tiny_model(1, 1, 4, 3, 44);
  RngStream rng = RngHandle{44, "equal-prior"}.stream();
  Tensor2& a = m.params.value("l0_h0_a");
  for (std::size_t j = 0; j < 8; ++j) a(0, j) = rng.uniform(-0.1, 0.1);
  a(0, 8) = 5.0;  // strong positive prior slot keeps logits positive
  Tensor2 x = random_features(4, 3, 44, 0.1);

  StratifiedGraph high = star_graph(4, {0.7, 0.7, 0.7});
  StratifiedGraph low = star_graph(4, {0.4, 0.4, 0.4});
  HgatCache ch, cl;
  hgat_forward(m, high, x, false, nullptr, &ch);
  hgat_forward(m, low, x, false, nullptr, &cl);
  for (std::size_t t = 0; t < 3; ++t) {
    ASSERT_GT(ch.layers[0].heads[0].edge_pre[t], 0.0);
    ASSERT_GT(cl.layers[0].heads[0].edge_pre[t], 0.0);
    EXPECT_NEAR(ch.layers[0].heads[0].edge_alpha[t],
                cl.layers[0].heads[0].edge_alpha[t], 1e-12);
  }
}

TEST(Attention, PositivePriorSlotMakesCoefficientsMonotoneInAffinity) {
  HgatModel m = tiny_model(1, 1, 4, 3, 45);
  m.params.value("l0_h0_a")(0, 8) = 2.0;  // prior-slot weight set positive
  Tensor2 x = random_features(4, 3, 45);
  for (std::size_t j = 2; j <= 3; ++j) {
    for (std::size_t c = 0; c < 3; ++c) x(j, c) = x(1, c);  // identical features
  }
  StratifiedGraph g = star_graph(4, {0.2, 0.5, 0.8});
  HgatCache cache;
  hgat_forward(m, g, x, false, nullptr, &cache);
  const auto& alpha = cache.layers[0].heads[0].edge_alpha;
  EXPECT_LT(alpha[0], alpha[1]);
  EXPECT_LT(alpha[1], alpha[2]);
}

TEST(Attention, DisabledEdgePriorMatchesZeroPriorWeight) {
  // Removing the prior slot must reproduce the vanilla attention network:
  // a model whose prior weight is exactly zero gives identical logits.
  HgatModel plain = tiny_model(2, 2, 4, 5, 46, /*edge_prior=*/false);
  HgatModel with_slot = tiny_model(2, 2, 4, 5, 999, /*edge_prior=*/true);
  for (int layer = 0; layer < 2; ++layer) {
    for (int head = 0; head < 2; ++head) {
      with_slot.params.value(HgatModel::weight_name(layer, head)) =
          plain.params.value(HgatModel::weight_name(layer, head));
      Tensor2& dst = with_slot.params.value(HgatModel::attention_name(layer, head));
      const Tensor2& src = plain.params.value(HgatModel::attention_name(layer, head));
      for (std::size_t j = 0; j < 8; ++j) dst(0, j) = src(0, j);
      dst(0, 8) = 0.0;
    }
  }
  with_slot.params.value("cls_w") = plain.params.value("cls_w");
  with_slot.params.value("cls_b") = plain.params.value("cls_b");

  RandomInstance inst = random_instance(46, 20, 2, 5, 3);
  const Tensor2 lp = hgat_forward(plain, inst.graph, inst.features, false, nullptr, nullptr);
  const Tensor2 ls = hgat_forward(with_slot, inst.graph, inst.features, false, nullptr, nullptr);
  ASSERT_EQ(lp.rows(), ls.rows());
  for (std::size_t i = 0; i < lp.size(); ++i) {
    EXPECT_EQ(lp.data()[i], ls.data()[i]);
  }
  EXPECT_EQ(plain.cfg.attention_len(), 8);
  EXPECT_EQ(with_slot.cfg.attention_len(), 9);
}

TEST(Attention, IsolatedNodesAggregateTheirOwnTransform) {
  StratifiedGraph g = star_graph(3, {0.5});  // node 2 is isolated
  HgatModel m = tiny_model(1, 1, 4, 3, 47);
  Tensor2 x = random_features(3, 3, 47);
  HgatCache cache;
  hgat_forward(m, g, x, false, nullptr, &cache);
  const auto& head = cache.layers[0].heads[0];
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(head.agg(2, k), head.z(2, k));
  }
}

TEST(Attention, PermutingNodesPermutesOutputs) {
  RandomInstance inst = random_instance(48, 30, 3, 6, 4);
  HgatModel m = tiny_model(2, 2, 5, 6, 48);
  const Tensor2 base = hgat_forward(m, inst.graph, inst.features, false, nullptr, nullptr);

  std::vector<std::size_t> perm(inst.table.rows.size());
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng = RngHandle{48, "perm"}.stream();
  rng.shuffle(perm);
  FeatureTable shuffled = inst.table;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.rows[i] = inst.table.rows[perm[i]];
  }
  StratifiedGraph pg = build_graph(shuffled, 4, 0.5, 2.0);
  const Tensor2 permuted =
      hgat_forward(m, pg, node_feature_matrix(shuffled), false, nullptr, nullptr);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    EXPECT_NEAR(permuted(i, 0), base(perm[i], 0), 1e-12);
    EXPECT_NEAR(permuted(i, 1), base(perm[i], 1), 1e-12);
  }
}

TEST(Attention, RejectsMismatchedFeatureWidth) {
  RandomInstance inst = random_instance(49, 10, 2, 6, 3);
  HgatModel m = tiny_model(1, 1, 4, 7, 49);
  EXPECT_THROW(hgat_forward(m, inst.graph, inst.features, false, nullptr, nullptr),
               Error);
  HgatModel ok = tiny_model(1, 1, 4, 6, 49);
  Tensor2 short_x = random_features(5, 6, 49);
  EXPECT_THROW(hgat_forward(ok, inst.graph, short_x, false, nullptr, nullptr), Error);
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

TEST(GradientSelfCheck, TinyInstancePasses) {
  SelfCheckInstance inst = make_gradient_selfcheck_instance(11, false);
  const GradCheckReport report = hgat_gradient_selfcheck(
      inst.model, inst.graph, inst.features, inst.labels, inst.focal);
  EXPECT_TRUE(report.ok(1e-4)) << "worst " << report.worst_param << " rel "
                               << report.max_rel_error;
}

TEST(GradientSelfCheck, ZeroEdgeGraphPasses) {
  SelfCheckInstance inst = make_gradient_selfcheck_instance(12, true);
  ASSERT_EQ(inst.graph.edge_count(), 0u);
  const GradCheckReport report = hgat_gradient_selfcheck(
      inst.model, inst.graph, inst.features, inst.labels, inst.focal);
  EXPECT_TRUE(report.ok(1e-4)) << "worst " << report.worst_param << " rel "
                               << report.max_rel_error;
}

// Restricting the final layer to a set of loss rows must reproduce the full
// forward on exactly those rows; the restriction only skips computations
// whose results the step never reads.
TEST(Attention, RestrictedForwardMatchesFullOnLossRows) {
  RandomInstance inst = random_instance(77, 40, 4, 6, 5);
  HgatModel model = tiny_model(2, 2, 5, 6, 21);
  const Tensor2 full =
      hgat_forward(model, inst.graph, inst.features, false, nullptr, nullptr);
  const std::vector<std::size_t> rows = {3, 11, 17, 29};
  const Tensor2 restricted = hgat_forward(model, inst.graph, inst.features,
                                          false, nullptr, nullptr, &rows);
  for (std::size_t i : rows) {
    EXPECT_NEAR(restricted(i, 0), full(i, 0), 1e-12);
    EXPECT_NEAR(restricted(i, 1), full(i, 1), 1e-12);
  }
}

// A loss computed on a single node leaves most logit gradients exactly zero,
// which is the regime where the backward pass gathers the touched rows
// instead of multiplying full matrices.  The numeric check must still agree.
TEST(GradientSelfCheck, SingleNodeBatchLossPassesThroughGatheredBackward) {
  SelfCheckInstance inst = make_gradient_selfcheck_instance(29, false);
  const std::vector<std::size_t> batch = {0};
  std::vector<int> batch_labels;
  for (std::size_t i : batch) batch_labels.push_back(inst.labels[i]);

  HgatCache cache;
  hgat_forward(inst.model, inst.graph, inst.features, false, nullptr, &cache);
  Tensor2 batch_logits(batch.size(), 2);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    batch_logits(r, 0) = cache.logits(batch[r], 0);
    batch_logits(r, 1) = cache.logits(batch[r], 1);
  }
  const FocalResult fr = focal_loss(batch_logits, batch_labels, inst.focal);
  Tensor2 dlogits(inst.graph.n, 2);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    dlogits(batch[r], 0) += fr.dlogits(r, 0);
    dlogits(batch[r], 1) += fr.dlogits(r, 1);
  }
  inst.model.params.zero_grad();
  hgat_backward(inst.model, inst.graph, cache, dlogits);

  auto loss_fn = [&]() {
    const Tensor2 logits =
        hgat_forward(inst.model, inst.graph, inst.features, false, nullptr, nullptr);
    Tensor2 bl(batch.size(), 2);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      bl(r, 0) = logits(batch[r], 0);
      bl(r, 1) = logits(batch[r], 1);
    }
    return focal_loss(bl, batch_labels, inst.focal).loss;
  };
  const GradCheckReport report = grad_check(inst.model.params, loss_fn);
  EXPECT_TRUE(report.ok(1e-4)) << "worst " << report.worst_param << " rel "
                               << report.max_rel_error;
}

TEST(GradientSelfCheck, CorruptedGradientNamesTheParameter) {
  SelfCheckInstance inst = make_gradient_selfcheck_instance(13, false);
  HgatCache cache;
  hgat_forward(inst.model, inst.graph, inst.features, false, nullptr, &cache);
  const FocalResult fr = focal_loss(cache.logits, inst.labels, inst.focal);
  inst.model.params.zero_grad();
  hgat_backward(inst.model, inst.graph, cache, fr.dlogits);
  inst.model.params.grad("l0_h1_a")(0, 2) += 0.05;  // simulate a backward bug
  auto loss_fn = [&]() {
    const Tensor2 logits =
        hgat_forward(inst.model, inst.graph, inst.features, false, nullptr, nullptr);
    return focal_loss(logits, inst.labels, inst.focal).loss;
  };
  const GradCheckReport report = grad_check(inst.model.params, loss_fn);
  EXPECT_FALSE(report.ok(1e-4));
  EXPECT_EQ(report.worst_param, "l0_h1_a");
}

TEST(GradientSelfCheck, RejectsOversizedInstances) {
  RandomInstance inst = random_instance(50, 20, 2, 6, 3);
  HgatModel m = tiny_model(2, 2, 4, 6, 50);
  std::vector<int> labels(20, 0);
  labels[0] = 1;
  EXPECT_THROW(hgat_gradient_selfcheck(m, inst.graph, inst.features, labels,
                                       FocalLossParams{}),
               Error);
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

TEST(Predict, ThresholdIsStrict) {
  SelfCheckInstance inst = make_gradient_selfcheck_instance(14, false);
  const std::vector<double> scores =
      hgat_scores(inst.model, inst.graph, inst.features);
  const std::vector<NodePrediction> at_score =
      hgat_predict(inst.model, inst.graph, inst.features, scores[0]);
  EXPECT_EQ(at_score[0].hard, 0);  // score == t* stays negative
  const std::vector<NodePrediction> at_zero =
      hgat_predict(inst.model, inst.graph, inst.features, 0.0);
  for (const auto& p : at_zero) {
    EXPECT_GT(p.score, 0.0);
    EXPECT_EQ(p.hard, 1);
  }
}

TEST(Predict, RepeatedCallsAreIdentical) {
  SelfCheckInstance inst = make_gradient_selfcheck_instance(15, false);
  const std::vector<NodePrediction> a =
      hgat_predict(inst.model, inst.graph, inst.features, 0.5);
  const std::vector<NodePrediction> b =
      hgat_predict(inst.model, inst.graph, inst.features, 0.5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].score, b[i].score);
    EXPECT_EQ(a[i].hard, b[i].hard);
  }
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripReproducesLogitsExactly) {
  fildp_test::ScratchDir dir("hgat");
  SelfCheckInstance inst = make_gradient_selfcheck_instance(16, false);
  const Tensor2 before =
      hgat_forward(inst.model, inst.graph, inst.features, false, nullptr, nullptr);
  const std::string path = dir.file("model.ckpt");
  inst.model.save(path);

  HgatModel loaded;
  loaded.load(inst.config, path);
  const Tensor2 after =
      hgat_forward(loaded, inst.graph, inst.features, false, nullptr, nullptr);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(before.data()[i], after.data()[i]);
  }
}

TEST(Checkpoint, MismatchedArchitectureIsRejected) {
  fildp_test::ScratchDir dir("hgat");
  SelfCheckInstance inst = make_gradient_selfcheck_instance(17, false);
  const std::string path = dir.file("model.ckpt");
  inst.model.save(path);
  HgatConfig other = inst.config;
  other.hidden = inst.config.hidden + 1;
  HgatModel loaded;
  EXPECT_THROW(loaded.load(other, path), Error);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Shared end-to-end scaffold: synthetic records through warm-up, clean
// (privacy disabled) release, graph construction, and classifier training.
struct TrainedPipeline {
  RunConfig cfg;
  FeatureTable table;
  StratifiedGraph graph;
  SplitIndices split;
  HgatTrainResult result;
};

TrainedPipeline train_none_mode(std::uint64_t seed, int n_records, int epochs,
                                bool shuffle_labels) {
  TrainedPipeline p;
  p.cfg.synth_n_records = n_records;
  p.cfg.synth_porous_rate = 0.12;
  p.cfg.synth_n_layers = 8;
  p.cfg.privacy_mode = "none";
  p.cfg.epochs = epochs;
  p.cfg.batch_size = 32;
  p.cfg.hgat_hidden = 16;
  p.cfg.hgat_heads = 2;
  p.cfg.warmup_epochs = 3;
  p.cfg.graph_k = 6;
  p.cfg.validate();

  std::vector<Record> records = generate_synthetic(SynthParams::from_config(p.cfg));
  if (shuffle_labels) {
    std::vector<int> labels;
    labels.reserve(records.size());
    for (const Record& r : records) labels.push_back(r.label);
    RngStream rng = RngHandle{seed, "label-shuffle"}.stream();
    rng.shuffle(labels);
    for (std::size_t i = 0; i < records.size(); ++i) records[i].label = labels[i];
  }
  p.split = split_dataset(records, p.cfg.split_train, p.cfg.split_val,
                          p.cfg.split_test, p.cfg.split_seed);

  std::vector<Record> train;
  for (std::size_t i : p.split.train) train.push_back(records[i]);
  const WarmupResult warm = warmup_train(train, p.cfg, seed);

  Tensor2 train_embed = encode_dataset(warm.model, train, p.cfg.intensity_min,
                                       p.cfg.intensity_max);
  const auto [c_img, c_ctx] =
      fit_clip_bounds(train_embed, warm.model.d_img, p.cfg.clip_quantile);
  PrivacyBudget budget = PrivacyBudget::from_config(p.cfg, c_img, c_ctx);
  p.table = privatize_dataset(records, warm.model, warm.importance, budget,
                              PrivacyMode::kNone, seed, p.cfg.intensity_min,
                              p.cfg.intensity_max);
  p.graph = build_graph(p.table, p.cfg.graph_k, p.cfg.graph_alpha, p.cfg.graph_tau);
  p.result = hgat_train(p.graph, p.table, p.split, p.cfg, seed);
  return p;
}

double val_auc(const TrainedPipeline& p) {
  const std::vector<double> scores =
      hgat_scores(p.result.model, p.graph, node_feature_matrix(p.table));
  std::vector<double> vs;
  std::vector<int> vl;
  for (std::size_t i : p.split.val) {
    vs.push_back(scores[i]);
    vl.push_back(p.table.rows[i].label);
  }
  return auc_score(vs, vl);
}

TEST(Train, CleanFeaturesReachHighValidationAuc) {
  TrainedPipeline p = train_none_mode(3, 500, 12, false);
  EXPECT_EQ(p.result.history.completed_epochs, 12);
  EXPECT_FALSE(p.result.history.diverged);
  const double auc_val = val_auc(p);
  EXPECT_GT(auc_val, 0.85) << "validation AUC " << auc_val;
  EXPECT_GE(p.result.threshold.t_star, 0.0);
  EXPECT_LE(p.result.threshold.t_star, 1.0);
}

TEST(Train, ShuffledLabelsScoreAtChance) {
  TrainedPipeline p = train_none_mode(4, 500, 8, true);
  const double auc_val = val_auc(p);
  EXPECT_NEAR(auc_val, 0.5, 0.1) << "shuffled-label validation AUC " << auc_val;
}

TEST(Train, DeterministicPerSeedAndSensitiveToSeed) {
  TrainedPipeline a = train_none_mode(5, 200, 3, false);
  TrainedPipeline b = train_none_mode(5, 200, 3, false);
  TrainedPipeline c = train_none_mode(6, 200, 3, false);
  ASSERT_EQ(a.result.history.epoch_loss.size(), b.result.history.epoch_loss.size());
  for (std::size_t i = 0; i < a.result.history.epoch_loss.size(); ++i) {
    EXPECT_EQ(a.result.history.epoch_loss[i], b.result.history.epoch_loss[i]);
  }
  EXPECT_EQ(a.result.threshold.t_star, b.result.threshold.t_star);
  const std::vector<double> sa =
      hgat_scores(a.result.model, a.graph, node_feature_matrix(a.table));
  const std::vector<double> sb =
      hgat_scores(b.result.model, b.graph, node_feature_matrix(b.table));
  ASSERT_EQ(sa.size(), sb.size());
  bool any_diff_seed = false;
  const std::vector<double> sc =
      hgat_scores(c.result.model, c.graph, node_feature_matrix(c.table));
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i], sb[i]);
    if (sa[i] != sc[i]) any_diff_seed = true;
  }
  EXPECT_TRUE(any_diff_seed);
}

TEST(Train, NonFiniteLossRestoresLastGoodCheckpoint) {
  TrainedPipeline base = train_none_mode(8, 200, 1, false);
  RunConfig cfg = base.cfg;
  cfg.epochs = 8;
  cfg.weight_decay = 1e30;  // force the optimizer to blow up
  const HgatTrainResult result =
      hgat_train(base.graph, base.table, base.split, cfg, 8);
  EXPECT_TRUE(result.history.diverged);
  EXPECT_LT(result.history.completed_epochs, cfg.epochs);
  for (const auto& e : result.model.params.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      ASSERT_TRUE(std::isfinite(e.value.data()[i]))
          << "non-finite parameter after restore: " << e.name;
    }
  }
  EXPECT_GE(result.threshold.t_star, 0.0);
}

TEST(Train, RejectsBadSplits) {
  TrainedPipeline base = train_none_mode(9, 200, 1, false);
  SplitIndices empty_val = base.split;
  empty_val.val.clear();
  EXPECT_THROW(hgat_train(base.graph, base.table, empty_val, base.cfg, 1), Error);
  SplitIndices oob = base.split;
  oob.train.push_back(base.table.rows.size());
  EXPECT_THROW(hgat_train(base.graph, base.table, oob, base.cfg, 1), Error);
}

}  // namespace
}  // namespace fildp
