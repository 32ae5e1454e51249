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

#include "fildp/nnkit.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

namespace {

using fildp::ParamStore;
using fildp::RngHandle;
using fildp::RngStream;
using fildp::Tensor2;

Tensor2 random_tensor(std::size_t r, std::size_t c, RngStream& rng) {
  Tensor2 t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  return t;
}

// Triple-loop reference product.
Tensor2 matmul_naive(const Tensor2& a, const Tensor2& b) {
  Tensor2 c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  }
  return c;
}

void expect_close(const Tensor2& a, const Tensor2& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_NEAR(a.data()[i], b.data()[i], tol) << "at flat index " << i;
  }
}

TEST(Gemm, HandExample) {
  Tensor2 a(2, 3);
  a(0, 0) = 1; a(0, 1) = 2; a(0, 2) = 3;
  a(1, 0) = 4; a(1, 1) = 5; a(1, 2) = 6;
  Tensor2 b(3, 2);
  b(0, 0) = 7; b(0, 1) = 8;
  b(1, 0) = 9; b(1, 1) = 10;
  b(2, 0) = 11; b(2, 1) = 12;
  Tensor2 c = fildp::matmul(a, b);
  EXPECT_DOUBLE_EQ(c(0, 0), 58.0);
  EXPECT_DOUBLE_EQ(c(0, 1), 64.0);
  EXPECT_DOUBLE_EQ(c(1, 0), 139.0);
  EXPECT_DOUBLE_EQ(c(1, 1), 154.0);
}

TEST(Gemm, AgreesWithNaiveLoops) {
  RngStream rng = RngHandle{1, "gemm"}.stream();
  Tensor2 a = random_tensor(17, 29, rng);
  Tensor2 b = random_tensor(29, 13, rng);
  expect_close(fildp::matmul(a, b), matmul_naive(a, b), 1e-10);
}

TEST(Gemm, TransposedVariants) {
  RngStream rng = RngHandle{2, "gemm-t"}.stream();
  Tensor2 a = random_tensor(9, 7, rng);
  Tensor2 bt = random_tensor(11, 7, rng);  // use as B^T with B = 7 x 11
  Tensor2 b(7, 11);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 11; ++j) b(i, j) = bt(j, i);
  }
  expect_close(fildp::matmul_nt(a, bt), matmul_naive(a, b), 1e-10);

  Tensor2 at = random_tensor(5, 9, rng);  // use as A^T with A = 9 x 5
  Tensor2 a2(9, 5);
  for (std::size_t i = 0; i < 9; ++i) {
    for (std::size_t j = 0; j < 5; ++j) a2(i, j) = at(j, i);
  }
  Tensor2 b2 = random_tensor(9, 4, rng);
  expect_close(fildp::matmul_tn(a2, b2), matmul_naive(at, b2), 1e-10);
}

TEST(Gemm, AccumulatesWithBeta) {
  RngStream rng = RngHandle{3, "gemm-b"}.stream();
  Tensor2 a = random_tensor(4, 6, rng);
  Tensor2 b = random_tensor(6, 5, rng);
  Tensor2 c(4, 5, 1.0);
  fildp::gemm(false, false, 2.0, a, b, 1.0, c);
  Tensor2 want = matmul_naive(a, b);
  for (std::size_t i = 0; i < want.size(); ++i) {
    want.data()[i] = 2.0 * want.data()[i] + 1.0;
  }
  expect_close(c, want, 1e-10);
}

TEST(Gemm, ShapeMismatchThrows) {
  Tensor2 a(2, 3), b(4, 2), c(2, 2);
  EXPECT_THROW(fildp::gemm(false, false, 1.0, a, b, 0.0, c), fildp::Error);
}

TEST(Dense, ForwardHandExample) {
  Tensor2 x(1, 2);
  x(0, 0) = 1.0;
  x(0, 1) = -2.0;
  Tensor2 w(3, 2);  // out x in
  w(0, 0) = 1; w(0, 1) = 0;
  w(1, 0) = 0; w(1, 1) = 1;
  w(2, 0) = 2; w(2, 1) = 3;
  Tensor2 b(1, 3);
  b(0, 0) = 0.5; b(0, 1) = -0.5; b(0, 2) = 0.0;
  Tensor2 y = fildp::dense_forward(x, w, b);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(y(0, 1), -2.5);
  EXPECT_DOUBLE_EQ(y(0, 2), -4.0);
}

TEST(Dense, BackwardMatchesFiniteDifferences) {
  RngStream rng = RngHandle{4, "dense-fd"}.stream();
  const std::size_t n = 5, in = 4, out = 3;
  Tensor2 x = random_tensor(n, in, rng);
  ParamStore store;
  fildp::glorot_init(store.add("w", out, in), rng);
  fildp::glorot_init(store.add("b", 1, out), rng);
  // Loss: sum of elementwise squares of the dense output.
  auto loss = [&]() {
    Tensor2 y = fildp::dense_forward(x, store.value("w"), store.value("b"));
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * y.data()[i];
    return s;
  };
  store.zero_grad();
  Tensor2 y = fildp::dense_forward(x, store.value("w"), store.value("b"));
  Tensor2 dy = y;
  for (std::size_t i = 0; i < dy.size(); ++i) dy.data()[i] *= 2.0;
  fildp::dense_backward(x, store.value("w"), dy, nullptr, store.grad("w"), store.grad("b"));
  fildp::GradCheckReport rep = fildp::grad_check(store, loss);
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(Elu, ValuesAndBackward) {
  EXPECT_DOUBLE_EQ(fildp::elu(1.5), 1.5);
  EXPECT_DOUBLE_EQ(fildp::elu(0.0), 0.0);
  EXPECT_NEAR(fildp::elu(-1.0), std::exp(-1.0) - 1.0, 1e-15);

  Tensor2 x(1, 3);
  x(0, 0) = 0.7; x(0, 1) = -0.3; x(0, 2) = -5.0;
  Tensor2 out = fildp::elu_forward(x);
  Tensor2 dy(1, 3, 1.0);
  Tensor2 dx = fildp::elu_backward(out, dy);
  const double h = 1e-7;
  for (int j = 0; j < 3; ++j) {
    const double fd = (fildp::elu(x(0, j) + h) - fildp::elu(x(0, j) - h)) / (2 * h);
    EXPECT_NEAR(dx(0, j), fd, 1e-6);
  }
}

TEST(Softmax, RowsSumToOneAndStable) {
  Tensor2 x(2, 3);
  x(0, 0) = 1000.0; x(0, 1) = 1001.0; x(0, 2) = 999.0;
  x(1, 0) = 0.0; x(1, 1) = std::log(2.0); x(1, 2) = std::log(3.0);
  Tensor2 p = fildp::softmax_rows(x);
  for (std::size_t i = 0; i < 2; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      ASSERT_TRUE(std::isfinite(p(i, j)));
      s += p(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_NEAR(p(1, 0), 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(p(1, 1), 2.0 / 6.0, 1e-12);
  EXPECT_NEAR(p(1, 2), 3.0 / 6.0, 1e-12);
}

TEST(Dropout, ZeroRateIsIdentityWithoutDraws) {
  RngStream rng = RngHandle{5, "drop0"}.stream();
  const std::uint64_t before = RngHandle{5, "drop0"}.stream().next_u64();
  Tensor2 x(3, 4, 2.5);
  auto [y, mask] = fildp::dropout_forward(x, 0.0, rng);
  expect_close(y, x, 0.0);
  EXPECT_EQ(rng.next_u64(), before) << "rate 0 must not consume randomness";
  for (std::size_t i = 0; i < mask.size(); ++i) EXPECT_EQ(mask.data()[i], 1.0);
}

TEST(Dropout, InvertedScalingAndBackward) {
  RngStream rng = RngHandle{6, "drop"}.stream();
  Tensor2 x(40, 25, 1.0);
  auto [y, mask] = fildp::dropout_forward(x, 0.2, rng);
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ASSERT_TRUE(y.data()[i] == 0.0 || std::abs(y.data()[i] - 1.25) < 1e-12);
    sum += y.data()[i];
  }
  EXPECT_NEAR(sum / static_cast<double>(y.size()), 1.0, 0.05);

  Tensor2 dy(40, 25, 3.0);
  Tensor2 dx = fildp::dropout_backward(mask, dy);
  for (std::size_t i = 0; i < dx.size(); ++i) {
    EXPECT_DOUBLE_EQ(dx.data()[i], 3.0 * mask.data()[i]);
  }
}

TEST(FocalLoss, ReducesToCrossEntropyAtGammaZero) {
  Tensor2 logits(2, 2);
  logits(0, 0) = 0.3; logits(0, 1) = 1.1;
  logits(1, 0) = -0.4; logits(1, 1) = 0.2;
  std::vector<int> y = {1, 0};
  fildp::FocalLossParams p;
  p.gamma = 0.0;
  p.alpha_pos = 1.0;
  p.alpha_neg = 1.0;
  fildp::FocalResult r = fildp::focal_loss(logits, y, p);
  // Cross-entropy oracle.
  auto ce = [](double z0, double z1, int label) {
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    return lse - (label == 1 ? z1 : z0);
  };
  const double want = 0.5 * (ce(0.3, 1.1, 1) + ce(-0.4, 0.2, 0));
  EXPECT_NEAR(r.loss, want, 1e-12);
  // Gradient oracle: (softmax - onehot) / n.
  Tensor2 probs = fildp::softmax_rows(logits);
  EXPECT_NEAR(r.dlogits(0, 0), probs(0, 0) / 2.0, 1e-12);
  EXPECT_NEAR(r.dlogits(0, 1), (probs(0, 1) - 1.0) / 2.0, 1e-12);
  EXPECT_NEAR(r.dlogits(1, 0), (probs(1, 0) - 1.0) / 2.0, 1e-12);
  EXPECT_NEAR(r.dlogits(1, 1), probs(1, 1) / 2.0, 1e-12);
}

TEST(FocalLoss, GradientMatchesFiniteDifferences) {
  RngStream rng = RngHandle{7, "focal-fd"}.stream();
  fildp::FocalLossParams p;
  p.gamma = 2.0;
  p.alpha_pos = 0.9;
  p.alpha_neg = 0.1;
  ParamStore store;
  Tensor2& z = store.add("z", 6, 2);
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  std::vector<int> y = {1, 0, 0, 1, 0, 1};
  auto loss = [&]() { return fildp::focal_loss(store.value("z"), y, p).loss; };
  store.zero_grad();
  fildp::FocalResult r = fildp::focal_loss(store.value("z"), y, p);
  store.grad("z") = r.dlogits;
  fildp::GradCheckReport rep = fildp::grad_check(store, loss);
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(FocalLoss, DownweightsEasyExamples) {
  // Same confidence, one easy (p_t near 1) vs one hard (p_t near 0.5):
  // gamma > 0 should shrink the easy example's contribution far more.
  Tensor2 easy(1, 2), hard(1, 2);
  easy(0, 0) = -4.0; easy(0, 1) = 4.0;
  hard(0, 0) = 0.0; hard(0, 1) = 0.1;
  std::vector<int> y = {1};
  fildp::FocalLossParams ce{0.0, 1.0, 1.0};
  fildp::FocalLossParams focal{2.0, 1.0, 1.0};
  const double ce_ratio =
      fildp::focal_loss(hard, y, ce).loss / fildp::focal_loss(easy, y, ce).loss;
  const double f_ratio =
      fildp::focal_loss(hard, y, focal).loss / fildp::focal_loss(easy, y, focal).loss;
  EXPECT_GT(f_ratio, ce_ratio * 10.0);
}

TEST(FocalLoss, ExtremeLogitsStayFinite) {
  Tensor2 z(1, 2);
  z(0, 0) = -800.0;
  z(0, 1) = 800.0;
  std::vector<int> y = {0};  // maximally wrong prediction
  fildp::FocalLossParams p;
  fildp::FocalResult r = fildp::focal_loss(z, y, p);
  EXPECT_TRUE(std::isfinite(r.loss));
  for (std::size_t i = 0; i < r.dlogits.size(); ++i) {
    EXPECT_TRUE(std::isfinite(r.dlogits.data()[i]));
  }
}

TEST(Adam, FirstStepMagnitude) {
  ParamStore store;
  Tensor2& p = store.add("p", 1, 1);
  p(0, 0) = 1.0;
  store.grad("p")(0, 0) = 2.0;
  fildp::adam_step(store, 0.1, 0.0);
  // Bias-corrected mhat = g, vhat = g^2, so the step is lr * g/|g| = lr.
  EXPECT_NEAR(p(0, 0), 0.9, 1e-8);
}

TEST(Adam, DecoupledWeightDecay) {
  ParamStore store;
  Tensor2& p = store.add("p", 1, 1);
  p(0, 0) = 1.0;
  store.grad("p")(0, 0) = 0.0;
  fildp::adam_step(store, 0.1, 0.5);
  EXPECT_NEAR(p(0, 0), 0.95, 1e-12);
}

TEST(Adam, ConvergesOnQuadratic) {
  ParamStore store;
  Tensor2& p = store.add("p", 1, 2);
  p(0, 0) = 5.0;
  p(0, 1) = -3.0;
  for (int it = 0; it < 2000; ++it) {
    store.zero_grad();
    store.grad("p")(0, 0) = 2.0 * (p(0, 0) - 1.0);
    store.grad("p")(0, 1) = 2.0 * (p(0, 1) + 2.0);
    fildp::adam_step(store, 0.05, 0.0);
  }
  EXPECT_NEAR(p(0, 0), 1.0, 1e-3);
  EXPECT_NEAR(p(0, 1), -2.0, 1e-3);
}

TEST(ParamStore, SaveLoadRoundTripIsExact) {
  fildp_test::ScratchDir dir("ckpt");
  RngStream rng = RngHandle{8, "ckpt"}.stream();
  ParamStore a;
  fildp::glorot_init(a.add("w1", 7, 5), rng);
  fildp::glorot_init(a.add("b1", 1, 7), rng);
  a.value("w1")(3, 2) = 1e-301;  // subnormal-adjacent value must survive
  a.save(dir.file("model.ckpt"));

  ParamStore b;
  b.add("w1", 7, 5);
  b.add("b1", 1, 7);
  b.load(dir.file("model.ckpt"));
  for (std::size_t e = 0; e < 2; ++e) {
    const Tensor2& va = a.entries()[e].value;
    const Tensor2& vb = b.entries()[e].value;
    for (std::size_t i = 0; i < va.size(); ++i) {
      ASSERT_EQ(va.data()[i], vb.data()[i]);
    }
  }
}

TEST(ParamStore, LoadRejectsMismatch) {
  fildp_test::ScratchDir dir("ckpt2");
  ParamStore a;
  a.add("w", 2, 2);
  a.save(dir.file("m.ckpt"));
  ParamStore wrong_shape;
  wrong_shape.add("w", 2, 3);
  EXPECT_THROW(wrong_shape.load(dir.file("m.ckpt")), fildp::Error);
  ParamStore wrong_name;
  wrong_name.add("q", 2, 2);
  EXPECT_THROW(wrong_name.load(dir.file("m.ckpt")), fildp::Error);
  EXPECT_THROW(a.load(dir.file("missing.ckpt")), fildp::Error);
}

TEST(ParamStore, DuplicateAndUnknownNames) {
  ParamStore s;
  s.add("w", 1, 1);
  EXPECT_THROW(s.add("w", 1, 1), fildp::Error);
  EXPECT_THROW(s.value("nope"), fildp::Error);
}

TEST(WeightedSampler, HitsTargetMinorityFraction) {
  std::vector<int> labels(1000, 0);
  for (int i = 0; i < 45; ++i) labels[i] = 1;
  fildp::WeightedSampler sampler(labels, 0.5);
  RngStream rng = RngHandle{9, "sampler"}.stream();
  std::size_t minority = 0, total = 0;
  for (int b = 0; b < 100; ++b) {
    for (std::size_t idx : sampler.sample_batch(64, rng)) {
      ASSERT_LT(idx, labels.size());
      minority += (labels[idx] == 1);
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(minority) / static_cast<double>(total), 0.5, 0.03);
}

TEST(WeightedSampler, UniformModeAndErrors) {
  std::vector<int> labels = {0, 0, 0, 0};
  fildp::WeightedSampler uniform(labels, -1.0);
  RngStream rng = RngHandle{10, "sampler-u"}.stream();
  auto batch = uniform.sample_batch(100, rng);
  for (std::size_t idx : batch) ASSERT_LT(idx, labels.size());
  EXPECT_THROW(fildp::WeightedSampler(labels, 0.5), fildp::Error);
  EXPECT_THROW(fildp::WeightedSampler({}, -1.0), fildp::Error);
}

TEST(GradCheck, AcceptsCorrectAndFlagsCorrupted) {
  ParamStore store;
  Tensor2& p = store.add("theta", 1, 3);
  p(0, 0) = 0.4; p(0, 1) = -1.2; p(0, 2) = 2.0;
  auto loss = [&]() {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double v = store.value("theta")(0, j);
      s += (j + 1) * v * v;
    }
    return s;
  };
  store.zero_grad();
  for (int j = 0; j < 3; ++j) {
    store.grad("theta")(0, j) = 2.0 * (j + 1) * p(0, j);
  }
  fildp::GradCheckReport good = fildp::grad_check(store, loss);
  EXPECT_LT(good.max_rel_error, 1e-8);

  store.grad("theta")(0, 1) += 0.5;  // corrupt one coordinate
  fildp::GradCheckReport bad = fildp::grad_check(store, loss);
  EXPECT_GT(bad.max_rel_error, 0.1);
  EXPECT_EQ(bad.worst_param, "theta");
  EXPECT_EQ(bad.worst_index, 1u);
}

TEST(Glorot, BoundsAndDeterminism) {
  RngStream r1 = RngHandle{11, "init"}.stream();
  RngStream r2 = RngHandle{11, "init"}.stream();
  Tensor2 w1(6, 4), w2(6, 4);
  fildp::glorot_init(w1, r1);
  fildp::glorot_init(w2, r2);
  const double limit = std::sqrt(6.0 / 10.0);
  for (std::size_t i = 0; i < w1.size(); ++i) {
    ASSERT_EQ(w1.data()[i], w2.data()[i]);
    ASSERT_LE(std::abs(w1.data()[i]), limit);
  }
}

}  // namespace
