#pragma once

// Two-view stochastic image transformation for contrastive pretraining:
// random resized crop -> horizontal flip -> color / gray distortion -> blur.
// Images are [3, H, W] tensors with values in [0, 1].

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "cuedseq/core/rng.hpp"
#include "cuedseq/core/tensor.hpp"

namespace cuedseq {

struct AugmentConfig {
  std::pair<double, double> crop_scale_range{0.5, 1.0};
  double flip_prob = 0.5;
  double color_strength = 0.4;
  double gray_prob = 0.2;
  std::pair<double, double> blur_sigma_range{0.1, 1.0};
  std::size_t output_h = 64;
  std::size_t output_w = 64;

  void validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("augment config: " + what); };
    if (!(crop_scale_range.first > 0.0 && crop_scale_range.first <= crop_scale_range.second &&
          crop_scale_range.second <= 1.0))
      bad("crop_scale_range must satisfy 0 < min <= max <= 1");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) bad("flip_prob must be in [0,1]");
    if (!(gray_prob >= 0.0 && gray_prob <= 1.0)) bad("gray_prob must be in [0,1]");
    if (!(color_strength >= 0.0)) bad("color_strength must be >= 0");
    if (!(blur_sigma_range.first >= 0.0 && blur_sigma_range.first <= blur_sigma_range.second))
      bad("blur_sigma_range must satisfy 0 <= min <= max");
    if (output_h == 0 || output_w == 0) bad("output size must be positive");
  }

  /// Every stage disabled; with matching sizes the pipeline is the identity.
  static AugmentConfig identity(std::size_t h, std::size_t w) {
    AugmentConfig c;
    c.crop_scale_range = {1.0, 1.0};
    c.flip_prob = 0.0;
    c.color_strength = 0.0;
    c.gray_prob = 0.0;
    c.blur_sigma_range = {0.0, 0.0};
    c.output_h = h;
    c.output_w = w;
    return c;
  }
};

namespace detail {

inline void require_image(const Tensor& img, const char* op) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw std::invalid_argument(std::string(op) + ": expected [3,H,W] image, got " + shape_str(img.shape()));
}

struct CropBox {
  std::size_t y0, x0, h, w;
};

}  // namespace detail

/// Bilinear resample of the window `box` of `img` to out_h x out_w using
/// pixel-center alignment. A window the same size as the output is copied
/// exactly.
inline Tensor resize_window_bilinear(const Tensor& img, detail::CropBox box, std::size_t out_h, std::size_t out_w) {
  const std::size_t c = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::vector<double> out(c * out_h * out_w);
  const double sy = static_cast<double>(box.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(box.w) / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(box.h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, box.h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(box.w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, box.w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = img.data().data() + ch * H * W;
        auto at = [&](std::size_t y, std::size_t x) { return p[(box.y0 + y) * W + box.x0 + x]; };
        double v;
        if (wy == 0.0 && wx == 0.0) {
          v = at(y0, x0);
        } else {
          const double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
          const double bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
          v = top * (1.0 - wy) + bot * wy;
        }
        out[(ch * out_h + oy) * out_w + ox] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return Tensor(std::move(out), {c, out_h, out_w});
}

inline Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  detail::require_image(img, "resize_bilinear");
  return resize_window_bilinear(img, {0, 0, img.dim(1), img.dim(2)}, out_h, out_w);
}

/// Crop with area fraction drawn from `crop_scale_range` and aspect ratio
/// log-uniform in [3/4, 4/3], resized to the configured output size. After 10
/// rejected draws the largest centered window with an in-range aspect is used.
inline Tensor random_crop_resize(const Tensor& img, const AugmentConfig& cfg, Rng& rng) {
  detail::require_image(img, "random_crop_resize");
  const std::size_t H = img.dim(1), W = img.dim(2);
  if (H < 8 || W < 8) throw std::invalid_argument("random_crop_resize: image must be at least 8x8");
  const double area = static_cast<double>(H * W);
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(cfg.crop_scale_range.first, cfg.crop_scale_range.second);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const auto cw = static_cast<long long>(std::lround(std::sqrt(target * aspect)));
    const auto ch = static_cast<long long>(std::lround(std::sqrt(target / aspect)));
    if (cw >= 1 && ch >= 1 && cw <= static_cast<long long>(W) && ch <= static_cast<long long>(H)) {
      const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(H) - ch));
      const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(W) - cw));
      return resize_window_bilinear(img, {y0, x0, static_cast<std::size_t>(ch), static_cast<std::size_t>(cw)},
                                    cfg.output_h, cfg.output_w);
    }
  }
  const double ratio = static_cast<double>(W) / static_cast<double>(H);
  std::size_t cw = W, ch = H;
  if (ratio < 3.0 / 4.0) {
    ch = std::min<std::size_t>(H, static_cast<std::size_t>(std::lround(static_cast<double>(W) * 4.0 / 3.0)));
  } else if (ratio > 4.0 / 3.0) {
    cw = std::min<std::size_t>(W, static_cast<std::size_t>(std::lround(static_cast<double>(H) * 4.0 / 3.0)));
  }
  return resize_window_bilinear(img, {(H - ch) / 2, (W - cw) / 2, ch, cw}, cfg.output_h, cfg.output_w);
}

inline Tensor horizontal_flip(const Tensor& img) {
  detail::require_image(img, "horizontal_flip");
  const std::size_t c = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::vector<double> out(img.numel());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out[(ch * H + y) * W + x] = img[(ch * H + y) * W + (W - 1 - x)];
  return Tensor(std::move(out), img.shape());
}

namespace detail {

inline double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d + 6.0, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = std::min(static_cast<int>(hh), 5);
  const double f = hh - sector;
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

}  // namespace detail

/// Brightness, contrast, saturation factors in [1-s, 1+s] and a hue shift in
/// [-0.1 s, 0.1 s] turns (applied in that order, clamped after each), then
/// grayscale replacement with probability `gray_prob`. A factor of exactly 1
/// or a zero shift leaves the image bit-identical.
inline Tensor color_and_gray_distort(const Tensor& img, const AugmentConfig& cfg, Rng& rng) {
  detail::require_image(img, "color_and_gray_distort");
  const double s = cfg.color_strength;
  const double brightness = rng.uniform(1.0 - s, 1.0 + s);
  const double contrast = rng.uniform(1.0 - s, 1.0 + s);
  const double saturation = rng.uniform(1.0 - s, 1.0 + s);
  const double hue = rng.uniform(-0.1 * s, 0.1 * s);
  const bool to_gray = rng.bernoulli(cfg.gray_prob);

  const std::size_t plane = img.dim(1) * img.dim(2);
  std::vector<double> px(img.data().begin(), img.data().end());
  double* R = px.data();
  double* G = R + plane;
  double* B = G + plane;
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };

  if (brightness != 1.0)
    for (auto& v : px) v = clamp01(v * brightness);
  if (contrast != 1.0) {
    double m = 0.0;
    for (std::size_t i = 0; i < plane; ++i) m += detail::luminance(R[i], G[i], B[i]);
    m /= static_cast<double>(plane);
    for (auto& v : px) v = clamp01((v - m) * contrast + m);
  }
  if (saturation != 1.0)
    for (std::size_t i = 0; i < plane; ++i) {
      const double l = detail::luminance(R[i], G[i], B[i]);
      R[i] = clamp01(l + (R[i] - l) * saturation);
      G[i] = clamp01(l + (G[i] - l) * saturation);
      B[i] = clamp01(l + (B[i] - l) * saturation);
    }
  if (hue != 0.0)
    for (std::size_t i = 0; i < plane; ++i) {
      double h, sat, val;
      detail::rgb_to_hsv(R[i], G[i], B[i], h, sat, val);
      detail::hsv_to_rgb(h + hue, sat, val, R[i], G[i], B[i]);
      R[i] = clamp01(R[i]);
      G[i] = clamp01(G[i]);
      B[i] = clamp01(B[i]);
    }
  if (to_gray)
    for (std::size_t i = 0; i < plane; ++i) {
      const double l = clamp01(detail::luminance(R[i], G[i], B[i]));
      R[i] = G[i] = B[i] = l;
    }
  return Tensor(std::move(px), img.shape());
}

namespace detail {

// Half-sample symmetric extension: ... c b a | a b c ... | c b a ...
inline std::size_t reflect_index(long long i, std::size_t n) {
  const long long period = 2 * static_cast<long long>(n);
  long long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long long>(n) ? m : period - 1 - m);
}

}  // namespace detail

/// Separable Gaussian blur with radius ceil(3 sigma), normalized kernel and
/// symmetric reflection at the borders. sigma == 0 returns a copy.
inline Tensor gaussian_blur(const Tensor& img, double sigma) {
  detail::require_image(img, "gaussian_blur");
  if (!(sigma >= 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return img.clone();
  const auto radius = static_cast<long long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double ks = 0.0;
  for (long long i = -radius; i <= radius; ++i)
    ks += (k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma)));
  for (auto& v : k) v /= ks;

  const std::size_t c = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::vector<double> tmp(img.numel()), out(img.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = img.data().data() + ch * H * W;
    double* t = tmp.data() + ch * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (long long d = -radius; d <= radius; ++d)
          acc += k[static_cast<std::size_t>(d + radius)] *
                 src[y * W + detail::reflect_index(static_cast<long long>(x) + d, W)];
        t[y * W + x] = acc;
      }
    double* o = out.data() + ch * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (long long d = -radius; d <= radius; ++d)
          acc += k[static_cast<std::size_t>(d + radius)] *
                 t[detail::reflect_index(static_cast<long long>(y) + d, H) * W + x];
        o[y * W + x] = std::clamp(acc, 0.0, 1.0);
      }
  }
  return Tensor(std::move(out), img.shape());
}

/// Same as `gaussian_blur(img, sigma)`; the generator is not consumed.
inline Tensor gaussian_blur(const Tensor& img, double sigma, Rng& /*rng*/) { return gaussian_blur(img, sigma); }

/// One full draw of the pipeline.
inline Tensor augment_view(const Tensor& img, const AugmentConfig& cfg, Rng& rng) {
  auto x = random_crop_resize(img, cfg, rng);
  if (rng.bernoulli(cfg.flip_prob)) x = horizontal_flip(x);
  x = color_and_gray_distort(x, cfg, rng);
  const double sigma = rng.uniform(cfg.blur_sigma_range.first, cfg.blur_sigma_range.second);
  return gaussian_blur(x, sigma);
}

/// Two independent pipeline draws of the same source image. Each view gets
/// its own generator derived from a single draw of `rng`.
inline std::pair<Tensor, Tensor> make_view_pair(const Tensor& img, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::uint64_t base = rng.next_u64();
  Rng first(derive_seed(base, 1));
  Rng second(derive_seed(base, 2));
  auto a = augment_view(img, cfg, first);
  auto b = augment_view(img, cfg, second);
  return {std::move(a), std::move(b)};
}

}  // namespace cuedseq
