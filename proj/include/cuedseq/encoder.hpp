#pragma once

// Residual convolutional encoder f and the bias-free projection head g.
//
// Each stage starts with a stride-2 pre-activation residual block whose
// shortcut is a 1x1 stride-2 projection; the remaining blocks of the stage keep
// the resolution. Batch normalization is replaced by a learnable per-channel
// scale and shift so that outputs are a deterministic function of one image.

#include <string>
#include <vector>

#include "cuedseq/core/ops.hpp"
#include "cuedseq/core/params.hpp"

namespace cuedseq {

struct EncoderConfig {
  std::size_t input_h = 64;
  std::size_t input_w = 64;
  std::size_t stem_channels = 16;
  std::vector<std::size_t> block_channels{16, 32, 64, 128};
  std::size_t blocks_per_stage = 1;
  std::size_t feature_dim = 128;

  void validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("encoder config: " + what); };
    if (input_h == 0 || input_w == 0 || stem_channels == 0 || blocks_per_stage == 0) bad("sizes must be positive");
    if (block_channels.empty()) bad("at least one stage is required");
    for (auto c : block_channels)
      if (c == 0) bad("channel counts must be positive");
    if (feature_dim != block_channels.back()) bad("feature_dim must equal the last stage's channel count");
  }

  /// ResNet18-sized variant: 4 stages x 2 blocks, 64..512 channels.
  static EncoderConfig resnet18_like(std::size_t h = 64, std::size_t w = 64) {
    EncoderConfig c;
    c.input_h = h;
    c.input_w = w;
    c.stem_channels = 64;
    c.block_channels = {64, 128, 256, 512};
    c.blocks_per_stage = 2;
    c.feature_dim = 512;
    return c;
  }

  bool operator==(const EncoderConfig&) const = default;
};

class Encoder {
 public:
  static constexpr const char* kPrefix = "encoder.";

  Encoder(EncoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (const auto& [name, shape] : parameter_shapes()) {
      const bool is_norm = name.find("norm") != std::string::npos;
      if (is_norm) {
        const bool is_scale = name.ends_with(".scale");
        params_.add(name, Tensor::full(shape, is_scale ? 1.0 : 0.0));
      } else {
        const std::size_t fan_in = shape[1] * shape[2] * shape[3];
        params_.add(name, he_normal(shape, fan_in, rng));
      }
    }
  }

  /// Adopts the `encoder.*` tensors of `params`. Throws invalid_argument when a
  /// tensor is missing or its shape disagrees with `cfg`.
  Encoder(EncoderConfig cfg, const ParamSet& params) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (const auto& [name, shape] : parameter_shapes()) {
      if (!params.contains(name)) throw std::invalid_argument("encoder parameters lack '" + name + "'");
      const auto& t = params.at(name);
      if (t.shape() != shape) {
        throw std::invalid_argument("encoder parameter '" + name + "' has shape " + shape_str(t.shape()) +
                                    ", config expects " + shape_str(shape));
      }
      params_.add(name, t);
    }
  }

  const EncoderConfig& config() const noexcept { return cfg_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }

  /// h = f(x) for one image x of shape [3, input_h, input_w]; returns [D].
  Tensor encode(const Tensor& x) const {
    if (x.shape() != Shape{3, cfg_.input_h, cfg_.input_w}) {
      throw std::invalid_argument("encode: expected image " + shape_str({3, cfg_.input_h, cfg_.input_w}) +
                                  ", got " + shape_str(x.shape()));
    }
    Tensor h = conv2d(x, p("stem.w"), 1, 1);
    for (std::size_t s = 0; s < cfg_.block_channels.size(); ++s) {
      for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
        const std::string blk = block_name(s, b);
        const bool entry = b == 0;
        const std::size_t stride = entry ? 2 : 1;
        Tensor a = relu(channel_affine(h, p(blk + ".norm1.scale"), p(blk + ".norm1.shift")));
        Tensor shortcut = entry ? conv2d(a, p(blk + ".proj"), stride, 0) : h;
        Tensor t = conv2d(a, p(blk + ".conv1"), stride, 1);
        t = relu(channel_affine(t, p(blk + ".norm2.scale"), p(blk + ".norm2.shift")));
        t = conv2d(t, p(blk + ".conv2"), 1, 1);
        h = add(shortcut, t);
      }
    }
    h = relu(channel_affine(h, p("final_norm.scale"), p("final_norm.shift")));
    return global_avg_pool(h);
  }

  /// Encodes each image and stacks the features into [B, D].
  Tensor encode_batch(const std::vector<Tensor>& images) const {
    std::vector<Tensor> rows;
    rows.reserve(images.size());
    for (const auto& x : images) rows.push_back(encode(x));
    return stack_rows(rows);
  }

  /// Names and shapes of every parameter this configuration owns.
  std::vector<std::pair<std::string, Shape>> parameter_shapes() const {
    std::vector<std::pair<std::string, Shape>> out;
    const std::string pre = kPrefix;
    out.emplace_back(pre + "stem.w", Shape{cfg_.stem_channels, 3, 3, 3});
    std::size_t in_ch = cfg_.stem_channels;
    for (std::size_t s = 0; s < cfg_.block_channels.size(); ++s) {
      const std::size_t ch = cfg_.block_channels[s];
      for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
        const std::string blk = pre + block_name(s, b);
        const std::size_t cin = b == 0 ? in_ch : ch;
        out.emplace_back(blk + ".norm1.scale", Shape{cin});
        out.emplace_back(blk + ".norm1.shift", Shape{cin});
        out.emplace_back(blk + ".conv1", Shape{ch, cin, 3, 3});
        out.emplace_back(blk + ".norm2.scale", Shape{ch});
        out.emplace_back(blk + ".norm2.shift", Shape{ch});
        out.emplace_back(blk + ".conv2", Shape{ch, ch, 3, 3});
        if (b == 0) out.emplace_back(blk + ".proj", Shape{ch, cin, 1, 1});
      }
      in_ch = ch;
    }
    out.emplace_back(pre + "final_norm.scale", Shape{in_ch});
    out.emplace_back(pre + "final_norm.shift", Shape{in_ch});
    return out;
  }

 private:
  static std::string block_name(std::size_t stage, std::size_t block) {
    return "s" + std::to_string(stage) + ".b" + std::to_string(block);
  }

  const Tensor& p(const std::string& local) const { return params_.at(kPrefix + local); }

  EncoderConfig cfg_;
  ParamSet params_;
};

/// g(h) = W2ᵀ relu(W1ᵀ h) written for row vectors: z = relu(h W1) W2, with
/// W1 [D, D] and W2 [D, d_z]. No bias terms.
class ProjectionHead {
 public:
  static constexpr const char* kW1 = "projection.w1";
  static constexpr const char* kW2 = "projection.w2";

  ProjectionHead(std::size_t feature_dim, std::size_t proj_dim, Rng& rng) {
    params_.add(kW1, he_normal({feature_dim, feature_dim}, feature_dim, rng));
    params_.add(kW2, uniform_fan_in({feature_dim, proj_dim}, feature_dim, rng));
  }

  explicit ProjectionHead(const ParamSet& params) {
    params_.add(kW1, params.at(kW1));
    params_.add(kW2, params.at(kW2));
    if (w1().rank() != 2 || w1().dim(0) != w1().dim(1) || w2().rank() != 2 || w2().dim(0) != w1().dim(0))
      throw std::invalid_argument("projection head: inconsistent weight shapes");
  }

  std::size_t feature_dim() const { return w1().dim(0); }
  std::size_t proj_dim() const { return w2().dim(1); }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }

  /// h of shape [D] -> z [d_z]; h of shape [B, D] -> z [B, d_z].
  Tensor project(const Tensor& h) const {
    const bool single = h.rank() == 1;
    if (!(single || h.rank() == 2) || h.shape().back() != feature_dim()) {
      throw std::invalid_argument("project: expected feature length " + std::to_string(feature_dim()) + ", got " +
                                  shape_str(h.shape()));
    }
    Tensor rows = single ? reshape(h, {1, feature_dim()}) : h;
    Tensor z = matmul(relu(matmul(rows, w1())), w2());
    return single ? reshape(z, {proj_dim()}) : z;
  }

 private:
  const Tensor& w1() const { return params_.at(kW1); }
  const Tensor& w2() const { return params_.at(kW2); }

  ParamSet params_;
};

}  // namespace cuedseq
