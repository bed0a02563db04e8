#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "cuedseq/finetune.hpp"

using namespace cuedseq;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.input_h = c.input_w = 12;
  c.stem_channels = 4;
  c.block_channels = {4, 8};
  c.feature_dim = 8;
  return c;
}

// Per class a flat color plus noise; colors are spread over the RGB cube.
LabeledImages colored_set(std::size_t per_class, Rng& rng) {
  LabeledImages set;
  for (std::size_t i = 0; i < per_class * kHandShapeClasses; ++i) {
    const int c = static_cast<int>(i % kHandShapeClasses);
    const double rgb[3] = {c & 1 ? 0.8 : 0.1, c & 2 ? 0.8 : 0.1, c & 4 ? 0.8 : 0.1};
    std::vector<double> v(3 * 12 * 12);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = rgb[k / 144] + rng.uniform(0.0, 0.05);
    set.images.emplace_back(std::move(v), Shape{3, 12, 12});
    set.labels.push_back(c);
  }
  return set;
}

// 8 well separated Gaussian clusters in D dimensions.
std::pair<Tensor, std::vector<int>> separable_features(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> centers(kHandShapeClasses, std::vector<double>(d));
  for (auto& c : centers)
    for (auto& v : c) v = rng.normal(0.0, 3.0);
  std::vector<double> x;
  std::vector<int> y;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng.below(kHandShapeClasses));
    for (std::size_t k = 0; k < d; ++k) x.push_back(centers[c][k] + rng.normal(0.0, 0.3));
    y.push_back(c);
  }
  return {Tensor(std::move(x), {n, d}), std::move(y)};
}

}  // namespace

TEST(Subset, FullFractionSelectsEverything) {
  std::vector<int> labels;
  for (int i = 0; i < 37; ++i) labels.push_back(i % 8);
  Rng rng(1);
  auto idx = select_annotated_subset(labels, 1.0, rng);
  std::vector<std::size_t> all(37);
  std::iota(all.begin(), all.end(), std::size_t{0});
  EXPECT_EQ(idx, all);
}

TEST(Subset, TenPercentOfBalancedSet) {
  std::vector<int> labels;
  for (int i = 0; i < 800; ++i) labels.push_back(i % 8);
  Rng rng(2);
  auto idx = select_annotated_subset(labels, 0.1, rng);
  ASSERT_EQ(idx.size(), 80u);
  std::map<int, int> per_class;
  for (auto i : idx) ++per_class[labels[i]];
  for (int c = 0; c < 8; ++c) EXPECT_EQ(per_class[c], 10);
}

TEST(Subset, DeterministicAndStratifiedOnUnevenClasses) {
  Rng src(3);
  std::vector<int> labels;
  for (int i = 0; i < 500; ++i) labels.push_back(static_cast<int>(src.below(8)));
  labels.push_back(7);  // ensure no class is missing
  for (int c = 0; c < 8; ++c) labels.push_back(c);
  std::map<int, int> counts;
  for (int y : labels) ++counts[y];
  for (double f : {0.03, 0.1, 0.37, 0.5}) {
    Rng a(4), b(4);
    auto ia = select_annotated_subset(labels, f, a);
    EXPECT_EQ(ia, select_annotated_subset(labels, f, b));
    std::map<int, int> got;
    for (auto i : ia) ++got[labels[i]];
    for (int c = 0; c < 8; ++c) {
      const double target = f * counts[c];
      EXPECT_LT(std::abs(got[c] - target), 1.0) << "class " << c << " fraction " << f;
      EXPECT_GE(got[c], 1);
    }
    EXPECT_TRUE(std::is_sorted(ia.begin(), ia.end()));
    EXPECT_EQ(std::adjacent_find(ia.begin(), ia.end()), ia.end());
  }
}

TEST(Subset, MinimumOneAndErrors) {
  std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7, 0, 0};
  Rng rng(5);
  EXPECT_EQ(select_annotated_subset(labels, 0.01, rng).size(), 8u);
  std::vector<int> missing{0, 1, 2, 3, 4, 5, 6};
  EXPECT_THROW(select_annotated_subset(missing, 0.5, rng), std::invalid_argument);
  EXPECT_THROW(select_annotated_subset(labels, 0.0, rng), std::invalid_argument);
}

TEST(Classify, ZeroHeadGivesZeroLogits) {
  Rng rng(6);
  ClassifierHead head(5, 7, rng);
  for (auto& [_, t] : head.params())
    for (auto& v : t.mutable_data()) v = 0.0;
  auto logits = classify(Tensor({1, 2, 3, 4, 5}, {5}), head);
  ASSERT_EQ(logits.shape(), (Shape{8}));
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(classify(Tensor::zeros({4}), head), std::invalid_argument);
}

TEST(Classify, ArgmaxInvariantToCommonBiasShift) {
  Rng rng(7);
  ClassifierHead head(6, 10, rng);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> h(6);
    for (auto& v : h) v = rng.normal();
    const int before = argmax(classify(Tensor(h, {6}), head).data());
    auto b2 = head.params().at(ClassifierHead::kB2).mutable_data();
    const double shift = rng.uniform(-5, 5);
    for (auto& v : b2) v += shift;
    EXPECT_EQ(argmax(classify(Tensor(h, {6}), head).data()), before);
  }
}

TEST(Classify, MatchesDirectTwoLayerEvaluation) {
  Rng rng(8);
  const std::size_t d = 5, dh = 7;
  ClassifierHead head(d, dh, rng);
  for (auto& [_, t] : head.params())
    for (auto& v : t.mutable_data()) v = rng.normal();
  std::vector<double> h(d);
  for (auto& v : h) v = rng.normal();
  const auto w1 = head.params().at(ClassifierHead::kW1).values();
  const auto b1 = head.params().at(ClassifierHead::kB1).values();
  const auto w2 = head.params().at(ClassifierHead::kW2).values();
  const auto b2 = head.params().at(ClassifierHead::kB2).values();
  std::vector<double> hidden(dh), out(8);
  for (std::size_t j = 0; j < dh; ++j) {
    double s = b1[j];
    for (std::size_t i = 0; i < d; ++i) s += h[i] * w1[i * dh + j];
    hidden[j] = s > 0 ? s : 0;
  }
  for (std::size_t k = 0; k < 8; ++k) {
    double s = b2[k];
    for (std::size_t j = 0; j < dh; ++j) s += hidden[j] * w2[j * 8 + k];
    out[k] = s;
  }
  auto got = classify(Tensor(h, {d}), head);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(got[k], out[k], 1e-12);
}

TEST(Finetune, ZeroEpochsLeavesEverythingAtInitialization) {
  Rng rng(9);
  auto set = colored_set(2, rng);
  auto pre = init_pretrain_params(tiny_encoder(), 6, 1);
  FinetuneConfig cfg;
  cfg.epochs = 0;
  cfg.hidden_dim = 10;
  auto result = finetune(pre, tiny_encoder(), set, cfg, 3);
  EXPECT_TRUE(result.accuracy_history.empty());
  EXPECT_TRUE(bitwise_equal(result.params.subset("encoder."), pre.subset("encoder.")));
  EXPECT_FALSE(result.params.contains(ProjectionHead::kW1));
  Rng init_rng(derive_seed(3, detail::kHeadInitStream));
  ClassifierHead fresh(8, 10, init_rng);
  EXPECT_TRUE(bitwise_equal(result.params.subset("classifier."), fresh.params()));
}

TEST(Finetune, FrozenEncoderIsBitwiseUnchanged) {
  Rng rng(10);
  auto set = colored_set(3, rng);
  auto pre = init_pretrain_params(tiny_encoder(), 6, 2);
  auto before = pre.clone();
  FinetuneConfig cfg;
  cfg.epochs = 5;
  cfg.lr = 1e-2;
  auto result = finetune(pre, tiny_encoder(), set, cfg, 4);
  EXPECT_TRUE(bitwise_equal(result.params.subset("encoder."), before.subset("encoder.")));
  EXPECT_TRUE(bitwise_equal(pre, before));
  Rng init_rng(derive_seed(4, detail::kHeadInitStream));
  ClassifierHead fresh(8, 64, init_rng);
  EXPECT_FALSE(bitwise_equal(result.params.subset("classifier."), fresh.params()));
}

TEST(Finetune, UnfrozenEncoderMoves) {
  Rng rng(11);
  auto set = colored_set(2, rng);
  auto pre = init_pretrain_params(tiny_encoder(), 6, 3);
  FinetuneConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 1e-3;
  cfg.freeze_encoder = false;
  auto result = finetune(pre, tiny_encoder(), set, cfg, 5);
  EXPECT_FALSE(bitwise_equal(result.params.subset("encoder."), pre.subset("encoder.")));
  EXPECT_EQ(result.accuracy_history.size(), 2u);
}

TEST(Finetune, FrozenPathMatchesHeadOnlyTrainingOnFeatures) {
  Rng rng(12);
  auto set = colored_set(3, rng);
  auto pre = init_pretrain_params(tiny_encoder(), 6, 4);
  FinetuneConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 1e-2;
  cfg.batch_size = 5;
  auto result = finetune(pre, tiny_encoder(), set, cfg, 6);
  HandShapeModel model(tiny_encoder(), result.params);
  auto fit = fit_classifier_head(model.extract_features(set.images), set.labels, cfg, 6);
  EXPECT_TRUE(bitwise_equal(fit.params, result.params.subset("classifier.")));
  EXPECT_EQ(fit.accuracy_history, result.accuracy_history);
}

TEST(Finetune, SeparableFeaturesReachFullAccuracy) {
  Rng rng(13);
  auto [x, y] = separable_features(400, 16, rng);
  FinetuneConfig cfg;  // defaults: 60 epochs, lr 1e-4
  auto fit = fit_classifier_head(x, y, cfg, 7);
  ASSERT_EQ(fit.accuracy_history.size(), 60u);
  EXPECT_EQ(fit.accuracy_history.back(), 1.0);
  double best = 0.0;
  for (double a : fit.accuracy_history) {
    EXPECT_GE(a, best - 0.02);
    best = std::max(best, a);
  }
}

TEST(Finetune, Errors) {
  Rng rng(14);
  auto set = colored_set(1, rng);
  auto other = tiny_encoder();
  other.block_channels = {4, 16};
  other.feature_dim = 16;
  auto pre = init_pretrain_params(other, 6, 1);
  EXPECT_THROW(finetune(pre, tiny_encoder(), set, FinetuneConfig{}, 1), std::invalid_argument);
  EXPECT_THROW(finetune("/nonexistent/pre.csw", tiny_encoder(), set, FinetuneConfig{}, 1), IoError);
  set.labels[0] = 9;
  EXPECT_THROW(finetune(init_pretrain_params(tiny_encoder(), 6, 1), tiny_encoder(), set, FinetuneConfig{}, 1),
               std::invalid_argument);
}

TEST(ExtractFeature, PureAndSameAsEncode) {
  Rng rng(15);
  auto set = colored_set(1, rng);
  auto pre = init_pretrain_params(tiny_encoder(), 6, 8);
  FinetuneConfig cfg;
  cfg.epochs = 1;
  auto result = finetune(pre, tiny_encoder(), set, cfg, 2);
  HandShapeModel model(tiny_encoder(), result.params);
  const auto& img = set.images[3];
  auto h1 = model.extract_feature(img);
  auto h2 = model.extract_feature(img);
  EXPECT_EQ(h1.values(), h2.values());
  ASSERT_EQ(h1.numel(), 8u);
  Encoder enc(tiny_encoder(), result.params);
  auto direct = enc.encode(img);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(h1[i], direct[i], 1e-15);
  EXPECT_THROW(model.extract_feature(Tensor::zeros({3, 10, 12})), std::invalid_argument);
}

TEST(ExtractFeature, RecordsNothingUnderActiveTape) {
  Rng rng(16);
  auto pre = init_pretrain_params(tiny_encoder(), 6, 9);
  Rng head_rng(1);
  ClassifierHead head(8, 4, head_rng);
  pre.merge(head.params());
  HandShapeModel model(tiny_encoder(), pre);
  Tape tape;
  auto rec = tape.record();
  auto h = model.extract_feature(Tensor::full({3, 12, 12}, 0.5));
  EXPECT_EQ(tape.size(), 0u);
}
