#include <gtest/gtest.h>

#include "cuedseq/encoder.hpp"
#include "support/gradcheck.hpp"

using namespace cuedseq;
using cuedseq::testing::check_gradients;

namespace {

EncoderConfig small_config(std::size_t side = 16) {
  EncoderConfig c;
  c.input_h = c.input_w = side;
  c.stem_channels = 4;
  c.block_channels = {4, 8};
  c.feature_dim = 8;
  return c;
}

Tensor random_image(std::size_t h, std::size_t w, Rng& rng) {
  std::vector<double> v(3 * h * w);
  for (auto& x : v) x = rng.uniform();
  return Tensor(std::move(v), {3, h, w});
}

Tensor random_matrix(std::size_t m, std::size_t n, Rng& rng) {
  std::vector<double> v(m * n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor(std::move(v), {m, n});
}

// Scalar with a generic gradient: weighted sum of the outputs.
Tensor weighted(const Tensor& y, Rng& rng) {
  std::vector<double> w(y.numel());
  for (auto& x : w) x = rng.uniform(-1, 1);
  return sum(mul(y, Tensor(std::move(w), y.shape())));
}

}  // namespace

TEST(Encode, ZeroInputAndZeroParamsGiveZero) {
  Rng rng(1);
  Encoder enc(small_config(), rng);
  for (auto& [_, t] : enc.params())
    for (auto& v : t.mutable_data()) v = 0.0;
  auto h = enc.encode(Tensor::zeros({3, 16, 16}));
  ASSERT_EQ(h.shape(), (Shape{8}));
  for (double v : h.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, ShapeContractAndErrors) {
  Rng rng(2);
  Encoder enc(small_config(20), rng);
  EXPECT_EQ(enc.encode(random_image(20, 20, rng)).shape(), (Shape{8}));
  EXPECT_THROW(enc.encode(random_image(16, 20, rng)), std::invalid_argument);

  auto cfg = small_config();
  cfg.feature_dim = 16;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Encode, DefaultAndResnetPresetsAreConsistent) {
  EXPECT_NO_THROW(EncoderConfig{}.validate());
  EXPECT_NO_THROW(EncoderConfig::resnet18_like().validate());
  Rng rng(3);
  EncoderConfig deep = small_config();
  deep.blocks_per_stage = 2;
  Encoder enc(deep, rng);
  EXPECT_EQ(enc.encode(random_image(16, 16, rng)).numel(), 8u);
}

TEST(Encode, ParametersFromMismatchedConfigRejected) {
  Rng rng(4);
  Encoder enc(small_config(), rng);
  auto other = small_config();
  other.block_channels = {4, 16};
  other.feature_dim = 16;
  EXPECT_THROW(Encoder(other, enc.params()), std::invalid_argument);
  EXPECT_NO_THROW(Encoder(small_config(), enc.params()));
}

TEST(Encode, PositivelyHomogeneousWithZeroShifts) {
  Rng rng(5);
  Encoder enc(small_config(), rng);
  // default init has zero shifts; randomize scales to make it non-trivial
  for (auto& [name, t] : enc.params())
    if (name.ends_with(".scale"))
      for (auto& v : t.mutable_data()) v = rng.uniform(0.5, 1.5);
  auto x = random_image(16, 16, rng);
  auto h = enc.encode(x);
  for (double lambda : {0.0, 0.5, 3.0}) {
    auto hx = enc.encode(scale(x, lambda));
    for (std::size_t i = 0; i < h.numel(); ++i) EXPECT_NEAR(hx[i], lambda * h[i], 1e-12 * (1 + std::abs(h[i])));
  }
}

TEST(Encode, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < 3; ++seed) {
    Rng rng(10 + seed);
    Encoder enc(small_config(), rng);
    for (auto& [name, t] : enc.params())
      if (name.ends_with(".shift"))
        for (auto& v : t.mutable_data()) v = rng.uniform(-0.2, 0.2);
    ProjectionHead head(8, 6, rng);
    auto x = random_image(16, 16, rng);
    Rng wrng(seed);
    auto w = random_matrix(1, 6, wrng);
    std::vector<std::pair<std::string, Tensor>> leaves;
    for (auto& [name, t] : enc.params()) leaves.emplace_back(name, t);
    for (auto& [name, t] : head.params()) leaves.emplace_back(name, t);
    auto rep = check_gradients(leaves, [&] { return sum(mul(reshape(head.project(enc.encode(x)), {1, 6}), w)); });
    EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst << " kinks " << rep.kinks;
    EXPECT_LE(rep.kinks, rep.checked / 100);
  }
}

namespace {

double zero_grad_fraction(const ParamSet& ps) {
  std::size_t zeros = 0, total = 0;
  for (const auto& [name, t] : ps) {
    total += t.numel();
    if (!t.has_grad()) {
      zeros += t.numel();
      continue;
    }
    for (double g : t.grad()) zeros += g == 0.0;
  }
  return static_cast<double>(zeros) / static_cast<double>(total);
}

}  // namespace

TEST(Encode, EveryParameterReceivesGradient) {
  Rng rng(20);
  Encoder enc(small_config(), rng);
  std::vector<Tensor> imgs;
  for (int i = 0; i < 8; ++i) imgs.push_back(random_image(16, 16, rng));
  Tape tape;
  Tensor loss;
  {
    auto rec = tape.record();
    loss = weighted(enc.encode_batch(imgs), rng);
  }
  backward(loss, tape);
  EXPECT_LT(zero_grad_fraction(enc.params()), 0.05);
}

TEST(Project, EveryParameterReceivesGradient) {
  Rng rng(21);
  ProjectionHead head(8, 6, rng);
  auto h = random_matrix(8, 8, rng);
  Tape tape;
  Tensor loss;
  {
    auto rec = tape.record();
    loss = weighted(head.project(h), rng);
  }
  backward(loss, tape);
  EXPECT_LT(zero_grad_fraction(head.params()), 0.05);
}

TEST(Project, ZeroAndIdentityCases) {
  Rng rng(30);
  ProjectionHead head(4, 4, rng);
  auto z0 = head.project(Tensor::zeros({4}));
  for (double v : z0.data()) EXPECT_EQ(v, 0.0);

  for (auto* name : {ProjectionHead::kW1, ProjectionHead::kW2}) {
    auto w = head.params().at(name).mutable_data();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) w[i * 4 + j] = i == j ? 1.0 : 0.0;
  }
  Tensor h({0.0, 0.5, 2.0, 3.25}, {4});
  EXPECT_EQ(head.project(h).values(), h.values());
  EXPECT_THROW(head.project(Tensor::zeros({5})), std::invalid_argument);
}

TEST(Project, MatchesDirectTwoStepEvaluation) {
  Rng rng(31);
  const std::size_t D = 5, dz = 3;
  ProjectionHead head(D, dz, rng);
  std::vector<double> h(D);
  for (auto& v : h) v = rng.uniform(-2, 2);
  const auto& w1 = head.params().at(ProjectionHead::kW1);
  const auto& w2 = head.params().at(ProjectionHead::kW2);
  std::vector<double> hidden(D, 0.0), z(dz, 0.0);
  for (std::size_t j = 0; j < D; ++j) {
    for (std::size_t i = 0; i < D; ++i) hidden[j] += h[i] * w1[i * D + j];
    hidden[j] = std::max(hidden[j], 0.0);
  }
  for (std::size_t k = 0; k < dz; ++k)
    for (std::size_t j = 0; j < D; ++j) z[k] += hidden[j] * w2[j * dz + k];
  auto got = head.project(Tensor(h, {D}));
  for (std::size_t k = 0; k < dz; ++k) EXPECT_NEAR(got[k], z[k], 1e-12);
}

TEST(Project, DependsOnlyThroughFirstLayer) {
  Rng rng(32);
  ProjectionHead head(3, 2, rng);
  // make row 2 of W1 the sum of rows 0 and 1: (1, 1, -1) is a left null vector
  auto w1 = head.params().at(ProjectionHead::kW1).mutable_data();
  for (std::size_t j = 0; j < 3; ++j) w1[6 + j] = w1[j] + w1[3 + j];
  Tensor h({0.3, -0.7, 1.1}, {3});
  Tensor h2({0.3 + 2.0, -0.7 + 2.0, 1.1 - 2.0}, {3});
  auto a = head.project(h), b = head.project(h2);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
}
