#pragma once

// Contrastive pretraining of the encoder and projection head on unlabeled
// images with the normalized temperature-scaled cross-entropy loss.

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cuedseq/augment.hpp"
#include "cuedseq/core/adam.hpp"
#include "cuedseq/core/parallel.hpp"
#include "cuedseq/encoder.hpp"

namespace cuedseq {

struct ContrastiveConfig {
  std::size_t batch_size = 64;
  double temperature = 0.5;
  std::size_t epochs = 200;
  double lr = 1e-3;
  std::size_t proj_dim = 64;
  std::optional<std::string> warm_start_checkpoint;
  std::size_t warm_start_epochs = 100;

  void validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("contrastive config: temperature must be > 0");
    if (batch_size < 2) throw std::invalid_argument("contrastive config: batch_size must be >= 2");
    if (!(lr > 0.0)) throw std::invalid_argument("contrastive config: lr must be > 0");
    if (proj_dim == 0) throw std::invalid_argument("contrastive config: proj_dim must be positive");
  }
};

/// u·v / (|u| |v|).
inline double cosine_sim(const Tensor& u, const Tensor& v) {
  if (u.numel() != v.numel()) throw std::invalid_argument("cosine_sim: length mismatch");
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.numel(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (!(uu > 0.0) || !(vv > 0.0)) throw std::invalid_argument("cosine_sim: zero-norm vector");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

/// Rows 2m and 2m+1 of z are the two views of sample m. Every row i is scored
/// against its partner among the other 2N-1 rows; the result is the mean over
/// all 2N rows.
inline Tensor nt_xent_loss(const Tensor& z, double temperature) {
  if (z.rank() != 2 || z.dim(0) < 2 || z.dim(0) % 2 != 0)
    throw std::invalid_argument("nt_xent_loss: expected [2N, d] with N >= 1, got " + shape_str(z.shape()));
  if (!(temperature > 0.0)) throw std::invalid_argument("nt_xent_loss: temperature must be > 0");
  const std::size_t rows = z.dim(0);
  Tensor zn = normalize_rows(z);
  Tensor sim = scale(matmul(zn, transpose(zn)), 1.0 / temperature);
  // self-similarity is excluded by an additive mask large enough to underflow
  // to an exact zero weight
  Tensor mask = Tensor::zeros({rows, rows});
  for (std::size_t i = 0; i < rows; ++i) mask.mutable_data()[i * rows + i] = -1e30;
  std::vector<int> partner(rows);
  for (std::size_t i = 0; i < rows; ++i) partner[i] = static_cast<int>(i ^ 1u);
  return cross_entropy(add(sim, mask), partner);
}

struct PretrainResult {
  ParamSet params;  // encoder.* and projection.*
  std::vector<double> loss_history;
};

namespace detail {
// substream keys for derive_seed
inline constexpr std::uint64_t kInitStream = 0x5131;
inline constexpr std::uint64_t kShuffleStream = 0x5132;
inline constexpr std::uint64_t kViewStream = 0x5133;

inline bool has_zero_row(const Tensor& z) {
  const std::size_t d = z.dim(1);
  for (std::size_t i = 0; i < z.dim(0); ++i) {
    bool zero = true;
    for (std::size_t j = 0; j < d && zero; ++j) zero = z[i * d + j] == 0.0;
    if (zero) return true;
  }
  return false;
}
}  // namespace detail

/// Fresh encoder and projection head for `seed`.
inline ParamSet init_pretrain_params(const EncoderConfig& enc_cfg, std::size_t proj_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, detail::kInitStream));
  Encoder enc(enc_cfg, rng);
  ProjectionHead head(enc_cfg.feature_dim, proj_dim, rng);
  ParamSet all = enc.params();
  all.merge(head.params());
  return all;
}

/// Mean NT-Xent loss of the current parameters on one set of views, with no
/// gradient recording. `views` is laid out as in nt_xent_loss.
inline double contrastive_loss_of(const ParamSet& params, const EncoderConfig& enc_cfg,
                                  const std::vector<Tensor>& views, double temperature) {
  Encoder enc(enc_cfg, params);
  ProjectionHead head(params);
  return nt_xent_loss(head.project(enc.encode_batch(views)), temperature).item();
}

/// Trains encoder and projection head. Each epoch shuffles the images, cuts
/// them into batches of N (a short final batch is skipped), expands every
/// source into two augmented views and takes one Adam step per batch.
inline PretrainResult pretrain(const std::vector<Tensor>& images, const EncoderConfig& enc_cfg,
                               const AugmentConfig& aug_cfg, const ContrastiveConfig& cs_cfg, std::uint64_t seed,
                               const EpochCallback& on_epoch = {}) {
  enc_cfg.validate();
  aug_cfg.validate();
  cs_cfg.validate();
  if (aug_cfg.output_h != enc_cfg.input_h || aug_cfg.output_w != enc_cfg.input_w)
    throw std::invalid_argument("pretrain: augmentation output size differs from the encoder input size");
  const std::size_t n = cs_cfg.batch_size;
  if (images.size() < 2 * n) {
    throw std::invalid_argument("pretrain: " + std::to_string(images.size()) + " images, at least " +
                                std::to_string(2 * n) + " required for batch size " + std::to_string(n));
  }

  PretrainResult result;
  result.params = init_pretrain_params(enc_cfg, cs_cfg.proj_dim, seed);
  std::size_t epochs = cs_cfg.epochs;
  if (cs_cfg.warm_start_checkpoint) {
    result.params.assign_from(load_checkpoint(*cs_cfg.warm_start_checkpoint));
    epochs = cs_cfg.warm_start_epochs;
  }
  Encoder enc(enc_cfg, result.params);
  ProjectionHead head(result.params);
  AdamState adam(AdamConfig{.lr = cs_cfg.lr});

  std::vector<std::size_t> order(images.size());
  const std::size_t batches = images.size() / n;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(seed, detail::kShuffleStream, epoch));
    shuffle_rng.shuffle(order);
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<Tensor> views(2 * n);
      parallel_for(n, [&](std::size_t m) {
        const std::size_t idx = order[b * n + m];
        Rng view_rng(derive_seed(seed, detail::kViewStream, epoch, idx));
        auto [v1, v2] = make_view_pair(images[idx], aug_cfg, view_rng);
        views[2 * m] = std::move(v1);
        views[2 * m + 1] = std::move(v2);
      });
      result.params.zero_grad();
      Tape tape;
      Tensor loss;
      {
        auto rec = tape.record();
        Tensor z = head.project(enc.encode_batch(views));
        // a view whose projection is exactly zero (every unit dead) has no
        // direction to compare; the batch is skipped
        if (detail::has_zero_row(z)) continue;
        loss = nt_xent_loss(z, cs_cfg.temperature);
      }
      backward(loss, tape);
      adam_step(result.params, adam);
      total += loss.item();
      ++used;
    }
    if (used == 0)
      throw std::runtime_error("pretrain: every batch of epoch " + std::to_string(epoch + 1) +
                               " has a view with an all-zero projection");
    result.loss_history.push_back(total / static_cast<double>(used));
    if (on_epoch) on_epoch(epoch + 1, result.loss_history.back());
  }
  result.params.zero_grad();
  return result;
}

}  // namespace cuedseq
