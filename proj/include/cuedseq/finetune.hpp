#pragma once

// Hand-shape classification on a small annotated subset: the pretrained
// encoder followed by two fully connected layers. The trained encoder is also
// the static feature extractor for the sequence stage.

#include <algorithm>
#include <cmath>
#include <span>
#include <numeric>
#include <string>
#include <vector>

#include "cuedseq/contrastive.hpp"
#include "cuedseq/core/adam.hpp"
#include "cuedseq/encoder.hpp"

namespace cuedseq {

inline constexpr std::size_t kHandShapeClasses = 8;

/// logits = relu(h W1 + b1) W2 + b2 with W1 [D, Dh] and W2 [Dh, K].
class ClassifierHead {
 public:
  static constexpr const char* kW1 = "classifier.fc1.w";
  static constexpr const char* kB1 = "classifier.fc1.b";
  static constexpr const char* kW2 = "classifier.fc2.w";
  static constexpr const char* kB2 = "classifier.fc2.b";

  ClassifierHead(std::size_t feature_dim, std::size_t hidden, Rng& rng) {
    if (feature_dim == 0 || hidden == 0) throw std::invalid_argument("classifier head: sizes must be positive");
    params_.add(kW1, he_normal({feature_dim, hidden}, feature_dim, rng));
    params_.add(kB1, Tensor::zeros({hidden}));
    params_.add(kW2, uniform_fan_in({hidden, kHandShapeClasses}, hidden, rng));
    params_.add(kB2, Tensor::zeros({kHandShapeClasses}));
  }

  explicit ClassifierHead(const ParamSet& params) {
    for (auto* name : {kW1, kB1, kW2, kB2}) params_.add(name, params.at(name));
    const auto &w1 = p(kW1), &w2 = p(kW2);
    if (w1.rank() != 2 || w2.rank() != 2 || w2.dim(0) != w1.dim(1) || w2.dim(1) != kHandShapeClasses ||
        p(kB1).shape() != Shape{w1.dim(1)} || p(kB2).shape() != Shape{kHandShapeClasses})
      throw std::invalid_argument("classifier head: inconsistent parameter shapes");
  }

  std::size_t feature_dim() const { return p(kW1).dim(0); }
  std::size_t hidden_dim() const { return p(kW1).dim(1); }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }

  /// h [D] -> logits [K]; h [B, D] -> logits [B, K].
  Tensor classify(const Tensor& h) const {
    const bool single = h.rank() == 1;
    if (!(single || h.rank() == 2) || h.shape().back() != feature_dim()) {
      throw std::invalid_argument("classify: expected feature length " + std::to_string(feature_dim()) + ", got " +
                                  shape_str(h.shape()));
    }
    Tensor rows = single ? reshape(h, {1, feature_dim()}) : h;
    Tensor logits = linear(relu(linear(rows, p(kW1), p(kB1))), p(kW2), p(kB2));
    return single ? reshape(logits, {kHandShapeClasses}) : logits;
  }

 private:
  const Tensor& p(const char* name) const { return params_.at(name); }

  ParamSet params_;
};

inline Tensor classify(const Tensor& h, const ClassifierHead& head) { return head.classify(h); }

inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct FinetuneConfig {
  double labeled_fraction = 0.10;
  std::size_t epochs = 60;
  double lr = 1e-4;
  bool freeze_encoder = true;
  std::size_t batch_size = 32;
  std::size_t hidden_dim = 64;

  void validate() const {
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
      throw std::invalid_argument("finetune config: labeled_fraction must be in (0, 1]");
    if (batch_size == 0 || hidden_dim == 0) throw std::invalid_argument("finetune config: sizes must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("finetune config: lr must be > 0");
  }
};

/// Stratified sample: for every class c in [0, num_classes), round(fraction *
/// count_c) indices (at least one), drawn without replacement. Returned
/// indices are sorted.
inline std::vector<std::size_t> select_annotated_subset(const std::vector<int>& labels, double fraction, Rng& rng,
                                                        std::size_t num_classes = kHandShapeClasses) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("select_annotated_subset: fraction");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw std::invalid_argument("select_annotated_subset: label " + std::to_string(labels[i]) + " out of range");
    by_class[labels[i]].push_back(i);
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    if (members.empty()) throw std::invalid_argument("select_annotated_subset: class " + std::to_string(c) + " is empty");
    const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * members.size())));
    rng.shuffle(members);
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct LabeledImages {
  std::vector<Tensor> images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return images.size(); }

  LabeledImages select(const std::vector<std::size_t>& idx) const {
    LabeledImages out;
    for (auto i : idx) {
      out.images.push_back(images.at(i));
      out.labels.push_back(labels.at(i));
    }
    return out;
  }
};

/// Fine-tuned encoder plus classifier head.
class HandShapeModel {
 public:
  HandShapeModel(EncoderConfig cfg, const ParamSet& params) : encoder_(std::move(cfg), params), head_(params) {}

  const Encoder& encoder() const noexcept { return encoder_; }
  const ClassifierHead& head() const noexcept { return head_; }

  ParamSet params() const {
    ParamSet all = encoder_.params();
    all.merge(head_.params());
    return all;
  }

  /// Encoder output h for one image, no augmentation, nothing recorded.
  Tensor extract_feature(const Tensor& img) const {
    auto guard = Tape::suspend();
    return encoder_.encode(img);
  }

  Tensor extract_features(const std::vector<Tensor>& images) const {
    auto guard = Tape::suspend();
    return encoder_.encode_batch(images);
  }

  int predict(const Tensor& img) const {
    auto guard = Tape::suspend();
    return argmax(head_.classify(encoder_.encode(img)).data());
  }

  std::vector<int> predict_all(const std::vector<Tensor>& images) const {
    std::vector<int> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(predict(img));
    return out;
  }

 private:
  Encoder encoder_;
  ClassifierHead head_;
};

struct FinetuneResult {
  ParamSet params;  // encoder.* and classifier.*
  std::vector<double> accuracy_history;
};

namespace detail {
inline constexpr std::uint64_t kHeadInitStream = 0x5231;
inline constexpr std::uint64_t kBatchStream = 0x5232;

inline double fraction_correct(const Tensor& logits, const std::vector<int>& labels) {
  std::size_t hits = 0;
  const std::size_t k = logits.dim(1);
  for (std::size_t i = 0; i < labels.size(); ++i)
    hits += argmax(logits.data().subspan(i * k, k)) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}


inline void check_labels(const std::vector<int>& labels, std::size_t expected, const char* op) {
  if (labels.empty() || labels.size() != expected)
    throw std::invalid_argument(std::string(op) + ": empty set or label count mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= kHandShapeClasses)
      throw std::invalid_argument(std::string(op) + ": label " + std::to_string(y) + " out of range");
}

// Mini-batch cross-entropy training shared by the frozen and unfrozen paths.
// features_of(idx) returns [idx.size(), D], recorded when gradients are needed.
template <class FeaturesOf>
std::vector<double> train_classifier(std::size_t n, const std::vector<int>& labels, const FeaturesOf& features_of,
                                     const ClassifierHead& head, ParamSet& trainable, const FinetuneConfig& cfg,
                                     std::uint64_t seed, const EpochCallback& on_epoch) {
  AdamState adam(AdamConfig{.lr = cfg.lr});
  std::vector<double> history;
  std::vector<std::size_t> order(n), all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order = all;
    Rng batch_rng(derive_seed(seed, kBatchStream, epoch));
    batch_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + len));
      std::vector<int> targets;
      for (auto i : idx) targets.push_back(labels[i]);
      trainable.zero_grad();
      Tape tape;
      Tensor loss;
      {
        auto rec = tape.record();
        loss = cross_entropy(head.classify(features_of(idx)), targets);
      }
      backward(loss, tape);
      adam_step(trainable, adam);
    }
    Tensor logits;
    {
      auto guard = Tape::suspend();
      logits = head.classify(features_of(all));
    }
    history.push_back(fraction_correct(logits, labels));
    if (on_epoch) on_epoch(epoch + 1, history.back());
  }
  trainable.zero_grad();
  return history;
}

}  // namespace detail

struct HeadFitResult {
  ParamSet params;  // classifier.*
  std::vector<double> accuracy_history;
};

/// Trains a freshly initialized classifier head on fixed features [n, D].
inline HeadFitResult fit_classifier_head(const Tensor& features, const std::vector<int>& labels,
                                         const FinetuneConfig& cfg, std::uint64_t seed,
                                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (features.rank() != 2) throw std::invalid_argument("fit_classifier_head: features must be [n, D]");
  detail::check_labels(labels, features.dim(0), "fit_classifier_head");
  const std::size_t d = features.dim(1);
  Rng init_rng(derive_seed(seed, detail::kHeadInitStream));
  ClassifierHead head(d, cfg.hidden_dim, init_rng);
  auto features_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<double> rows;
    rows.reserve(idx.size() * d);
    for (auto i : idx) {
      auto r = features.data().subspan(i * d, d);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    return Tensor(std::move(rows), {idx.size(), d});
  };
  HeadFitResult result;
  result.accuracy_history =
      detail::train_classifier(labels.size(), labels, features_of, head, head.params(), cfg, seed, on_epoch);
  result.params = head.params();
  return result;
}

/// Trains the classifier head (and, unless frozen, the encoder) on `subset`
/// with cross-entropy and Adam. `pretrained` must hold encoder.* tensors
/// matching `enc_cfg`; any projection head in it is ignored. The accuracy
/// history holds the subset accuracy after every epoch.
inline FinetuneResult finetune(const ParamSet& pretrained, const EncoderConfig& enc_cfg, const LabeledImages& subset,
                               const FinetuneConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  detail::check_labels(subset.labels, subset.images.size(), "finetune");
  Encoder enc(enc_cfg, pretrained.subset(Encoder::kPrefix).clone());
  FinetuneResult result;
  if (cfg.freeze_encoder) {
    // a frozen encoder is a fixed map, so its features are computed once
    Tensor features;
    {
      auto guard = Tape::suspend();
      features = enc.encode_batch(subset.images);
    }
    auto fit = fit_classifier_head(features, subset.labels, cfg, seed, on_epoch);
    result.params = enc.params();
    result.params.merge(fit.params);
    result.accuracy_history = std::move(fit.accuracy_history);
    return result;
  }
  Rng init_rng(derive_seed(seed, detail::kHeadInitStream));
  ClassifierHead head(enc_cfg.feature_dim, cfg.hidden_dim, init_rng);
  ParamSet trainable = head.params();
  trainable.merge(enc.params());
  auto features_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<Tensor> imgs;
    for (auto i : idx) imgs.push_back(subset.images[i]);
    return enc.encode_batch(imgs);
  };
  result.accuracy_history =
      detail::train_classifier(subset.size(), subset.labels, features_of, head, trainable, cfg, seed, on_epoch);
  result.params = trainable;
  return result;
}

/// Same as above, loading the pretrained parameters from a CSW1 file.
inline FinetuneResult finetune(const std::string& pretrained_path, const EncoderConfig& enc_cfg,
                               const LabeledImages& subset, const FinetuneConfig& cfg, std::uint64_t seed,
                               const EpochCallback& on_epoch = {}) {
  return finetune(load_checkpoint(pretrained_path), enc_cfg, subset, cfg, seed, on_epoch);
}

}  // namespace cuedseq
