#pragma once

// Procedural scene rendering: stroke glyphs standing in for hand shapes, lip
// ellipses standing in for visemes, and a face-centered frame with one anchor
// per hand position. All images are [3, H, W] with values in [0, 1], rounded
// to single precision so that they survive the on-disk format unchanged.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cuedseq/alphabet.hpp"
#include "cuedseq/augment.hpp"
#include "cuedseq/core/rng.hpp"
#include "cuedseq/core/tensor.hpp"

namespace cuedseq {

struct Pose {
  double rotation = 0.0;            // radians
  double dx = 0.0;                  // translation, in half-canvas units
  double dy = 0.0;
  double scale = 1.0;
  double occlusion_fraction = 0.0;  // area of the occluding rectangle
  double motion_blur_len = 0.0;     // pixels

  void validate() const {
    if (!(rotation >= -std::numbers::pi && rotation <= std::numbers::pi))
      throw std::invalid_argument("pose: rotation must lie in [-pi, pi]");
    if (!(scale >= 0.5 && scale <= 1.5)) throw std::invalid_argument("pose: scale must lie in [0.5, 1.5]");
    if (!(occlusion_fraction >= 0.0 && occlusion_fraction <= 0.5))
      throw std::invalid_argument("pose: occlusion_fraction must lie in [0, 0.5]");
    if (!(motion_blur_len >= 0.0)) throw std::invalid_argument("pose: motion_blur_len must be >= 0");
    if (!std::isfinite(dx) || !std::isfinite(dy)) throw std::invalid_argument("pose: translation must be finite");
  }

  bool operator==(const Pose&) const = default;
};

/// Linear blend of the geometric part; occlusion and blur are taken from `b`.
inline Pose lerp_pose(const Pose& a, const Pose& b, double u) {
  Pose p = b;
  p.rotation = a.rotation + u * (b.rotation - a.rotation);
  p.dx = a.dx + u * (b.dx - a.dx);
  p.dy = a.dy + u * (b.dy - a.dy);
  p.scale = a.scale + u * (b.scale - a.scale);
  return p;
}

/// Segment in glyph space; the canvas spans [-1, 1] on both axes, y down.
struct Stroke {
  double x0, y0, x1, y1;
};

struct GlyphSpec {
  int cls;
  std::vector<Stroke> strokes;
};

inline constexpr int kGlyphClasses = 8;

/// Bar, pipe, plus, cross, T, inverted T, gate, triangle. None of them is the
/// mirror image of another, so horizontal flips keep classes apart.
inline const std::vector<GlyphSpec>& glyph_table() {
  static const std::vector<GlyphSpec> table{
      {0, {{-0.7, 0.0, 0.7, 0.0}}},
      {1, {{0.0, -0.7, 0.0, 0.7}}},
      {2, {{-0.7, 0.0, 0.7, 0.0}, {0.0, -0.7, 0.0, 0.7}}},
      {3, {{-0.5, -0.5, 0.5, 0.5}, {-0.5, 0.5, 0.5, -0.5}}},
      {4, {{-0.7, -0.55, 0.7, -0.55}, {0.0, -0.55, 0.0, 0.7}}},
      {5, {{-0.7, 0.55, 0.7, 0.55}, {0.0, 0.55, 0.0, -0.7}}},
      {6, {{-0.6, -0.55, 0.6, -0.55}, {-0.6, -0.55, -0.6, 0.7}, {0.6, -0.55, 0.6, 0.7}}},
      {7, {{0.0, -0.65, -0.65, 0.55}, {0.0, -0.65, 0.65, 0.55}, {-0.65, 0.55, 0.65, 0.55}}},
  };
  return table;
}

/// Colors and texture of one synthetic signer.
struct RenderStyle {
  std::array<double, 3> stroke_color{0.95, 0.80, 0.65};
  std::array<double, 3> background{0.15, 0.20, 0.30};
  double background_noise = 0.12;
  double stroke_width = 0.26;

  /// A slightly different look per speaker index; speaker 0 is the default.
  static RenderStyle for_speaker(std::size_t speaker) {
    RenderStyle s;
    const double k = static_cast<double>(speaker % 4);
    s.stroke_color = {0.95 - 0.05 * k, 0.80 - 0.04 * k, 0.65 + 0.05 * k};
    s.background = {0.15 + 0.04 * k, 0.20, 0.30 - 0.03 * k};
    s.stroke_width = 0.26 - 0.01 * k;
    return s;
  }
};

namespace detail {

inline double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

inline Tensor finish_image(std::vector<double> px, std::size_t h, std::size_t w) {
  for (auto& v : px) v = quantize(std::clamp(v, 0.0, 1.0));
  return Tensor(std::move(px), {3, h, w});
}

inline double segment_distance(double px, double py, const Stroke& s) {
  const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - s.x0) * vx + (py - s.y0) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (s.x0 + t * vx), ey = py - (s.y0 + t * vy);
  return std::sqrt(ex * ex + ey * ey);
}

/// Smooth background: base color, one random low-frequency wave and per-pixel
/// noise.
inline std::vector<double> textured_background(std::size_t h, std::size_t w, const std::array<double, 3>& base,
                                               double amp, Rng& rng) {
  const double fx = rng.uniform(0.05, 0.3), fy = rng.uniform(0.05, 0.3);
  const double px = rng.uniform(0.0, 2 * std::numbers::pi), py = rng.uniform(0.0, 2 * std::numbers::pi);
  std::vector<double> out(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double wave = 0.5 * std::sin(fx * static_cast<double>(x) + px) * std::sin(fy * static_cast<double>(y) + py);
      for (std::size_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = base[c] + amp * (wave + 0.5 * rng.uniform(-1.0, 1.0));
    }
  return out;
}

inline void draw_occluder(std::vector<double>& img, std::size_t h, std::size_t w, double fraction, Rng& rng) {
  if (fraction <= 0.0) return;
  const double area = fraction * static_cast<double>(h * w);
  const double aspect = rng.uniform(0.5, 2.0);
  const auto rw = std::clamp<long long>(std::llround(std::sqrt(area * aspect)), 1, static_cast<long long>(w));
  const auto rh = std::clamp<long long>(std::llround(area / static_cast<double>(rw)), 1, static_cast<long long>(h));
  const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(w) - rw));
  const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(h) - rh));
  const double shade = rng.uniform(0.4, 0.6);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = y0; y < y0 + static_cast<std::size_t>(rh); ++y)
      for (std::size_t x = x0; x < x0 + static_cast<std::size_t>(rw); ++x) img[(c * h + y) * w + x] = shade;
}

inline double sample_clamped(const std::vector<double>& img, std::size_t c, std::size_t h, std::size_t w, double y,
                             double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double wy = y - static_cast<double>(y0), wx = x - static_cast<double>(x0);
  auto at = [&](std::size_t yy, std::size_t xx) { return img[(c * h + yy) * w + xx]; };
  return (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) + wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
}

/// Box average along a random direction over `len` pixels.
inline void motion_blur(std::vector<double>& img, std::size_t h, std::size_t w, double len, Rng& rng) {
  if (len <= 0.0) return;
  const double phi = rng.uniform(0.0, std::numbers::pi);
  const double cx = std::cos(phi), cy = std::sin(phi);
  const auto n = static_cast<std::size_t>(std::ceil(len)) + 1;
  std::vector<double> out(img.size());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double s = -0.5 * len + len * static_cast<double>(k) / static_cast<double>(n - 1);
          acc += sample_clamped(img, c, h, w, static_cast<double>(y) + s * cy, static_cast<double>(x) + s * cx);
        }
        out[(c * h + y) * w + x] = acc / static_cast<double>(n);
      }
  img = std::move(out);
}

struct WeightedGlyph {
  int cls;
  double weight;
};

inline void check_glyph_class(int cls) {
  if (cls < 0 || cls >= kGlyphClasses)
    throw std::invalid_argument("glyph class " + std::to_string(cls) + " outside [0, 8)");
}

/// Anti-aliased strokes of several glyphs, each drawn with coverage scaled by
/// its weight, over one shared background.
inline Tensor render_glyph_blend(std::span<const WeightedGlyph> glyphs, const Pose& pose, std::size_t h,
                                 std::size_t w, Rng& rng, const RenderStyle& style) {
  for (const auto& g : glyphs) check_glyph_class(g.cls);
  pose.validate();
  if (h < 4 || w < 4) throw std::invalid_argument("render_hand_glyph: canvas must be at least 4x4");
  auto img = textured_background(h, w, style.background, style.background_noise, rng);
  const double cr = std::cos(pose.rotation), sr = std::sin(pose.rotation);
  const double pixel = 2.0 / (static_cast<double>(std::min(h, w)) * pose.scale);
  const double half = 0.5 * style.stroke_width;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      // canvas -> glyph space: undo translation, rotation and scale
      const double u = 2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 1.0 - pose.dx;
      const double v = 2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(h) - 1.0 - pose.dy;
      const double gx = (cr * u + sr * v) / pose.scale, gy = (-sr * u + cr * v) / pose.scale;
      double cover = 0.0;
      for (const auto& g : glyphs) {
        double d = 1e9;
        for (const auto& s : glyph_table()[static_cast<std::size_t>(g.cls)].strokes)
          d = std::min(d, segment_distance(gx, gy, s));
        cover += g.weight * std::clamp((half - d) / pixel + 0.5, 0.0, 1.0);
      }
      cover = std::min(cover, 1.0);
      for (std::size_t c = 0; c < 3; ++c) {
        double& p = img[(c * h + y) * w + x];
        p = (1.0 - cover) * p + cover * style.stroke_color[c];
      }
    }
  draw_occluder(img, h, w, pose.occlusion_fraction, rng);
  motion_blur(img, h, w, pose.motion_blur_len, rng);
  return finish_image(std::move(img), h, w);
}

}  // namespace detail

/// One glyph of class `cls` under `pose` on an h x w canvas.
inline Tensor render_hand_glyph(int cls, const Pose& pose, std::size_t h, std::size_t w, Rng& rng,
                                const RenderStyle& style = {}) {
  const detail::WeightedGlyph g{cls, 1.0};
  return detail::render_glyph_blend({&g, 1}, pose, h, w, rng, style);
}

// ---------------------------------------------------------------------------
// Lips

/// Mouth width and opening, both as fractions of the ROI side.
struct LipShape {
  double width = 0.6;
  double opening = 0.2;
};

/// Four widths crossed with three openings; 12 distinct shapes cover both
/// viseme inventories.
inline LipShape viseme_shape(int viseme) {
  if (viseme < 0 || viseme >= 12) throw std::invalid_argument("viseme " + std::to_string(viseme) + " out of range");
  static constexpr std::array<double, 4> widths{0.45, 0.60, 0.75, 0.90};
  static constexpr std::array<double, 3> openings{0.05, 0.25, 0.45};
  return {widths[static_cast<std::size_t>(viseme % 4)], openings[static_cast<std::size_t>(viseme / 4)]};
}

inline LipShape lerp_lips(const LipShape& a, const LipShape& b, double u) {
  return {a.width + u * (b.width - a.width), a.opening + u * (b.opening - a.opening)};
}

/// Skin background, a red outer ellipse and a dark inner opening.
inline Tensor render_lip_roi(const LipShape& lips, std::size_t size, Rng& rng, double cx_shift = 0.0,
                             double cy_shift = 0.0) {
  const std::array<double, 3> skin{0.85, 0.65, 0.55}, lip{0.75, 0.25, 0.30}, mouth{0.15, 0.05, 0.05};
  auto img = detail::textured_background(size, size, skin, 0.05, rng);
  const double s = static_cast<double>(size);
  const double cx = 0.5 * s + cx_shift, cy = 0.5 * s + cy_shift;
  const double outer_a = 0.5 * lips.width * s, outer_b = 0.5 * (lips.opening + 0.22) * s;
  const double inner_a = 0.8 * outer_a, inner_b = 0.5 * lips.opening * s;
  auto coverage = [](double x, double y, double a, double b) {
    if (b <= 0.0) return 0.0;
    const double r = std::sqrt((x * x) / (a * a) + (y * y) / (b * b));
    // approximately one pixel of soft edge
    return std::clamp((1.0 - r) * std::min(a, b) + 0.5, 0.0, 1.0);
  };
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5 - cx, py = static_cast<double>(y) + 0.5 - cy;
      const double co = coverage(px, py, outer_a, outer_b), ci = coverage(px, py, inner_a, inner_b);
      for (std::size_t c = 0; c < 3; ++c) {
        double& p = img[(c * size + y) * size + x];
        p = (1.0 - co) * p + co * lip[c];
        p = (1.0 - ci) * p + ci * mouth[c];
      }
    }
  return detail::finish_image(std::move(img), size, size);
}

// ---------------------------------------------------------------------------
// Frames

/// Hand anchors in normalized frame coordinates (x right, y down).
/// French: side, cheek, mouth, chin, throat. English: side, mouth, chin, throat.
inline std::vector<std::array<double, 2>> position_anchors(const std::string& language) {
  if (language == "fr") return {{0.82, 0.50}, {0.66, 0.28}, {0.62, 0.55}, {0.45, 0.78}, {0.25, 0.78}};
  if (language == "en") return {{0.82, 0.50}, {0.62, 0.55}, {0.45, 0.78}, {0.25, 0.78}};
  throw std::invalid_argument("unknown language '" + language + "'");
}

/// Smallest distance between two anchors of `language`.
inline double anchor_spacing(const std::string& language) {
  const auto a = position_anchors(language);
  double best = 1e9;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) best = std::min(best, std::hypot(a[i][0] - a[j][0], a[i][1] - a[j][1]));
  return best;
}

struct SynthConfig {
  std::string language = "fr";
  std::size_t frame_h = 96;
  std::size_t frame_w = 128;
  std::size_t hand_roi = 64;
  std::size_t lip_roi = 48;
  std::size_t hand_patch = 32;  // side of the hand drawn into the frame
  double transition_fraction = 0.3;
  double max_rotation = 0.3;
  double min_scale = 0.85;
  double max_scale = 1.15;
  double max_translation = 0.1;
  double occlusion_prob = 0.15;
  double max_occlusion = 0.2;
  double blur_prob = 0.15;
  double max_blur = 3.0;
  double anchor_jitter = 0.02;
  std::size_t asynchrony_offset = 0;
  bool keep_frames = false;
  RenderStyle style;

  void validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("synth config: " + what); };
    language_traits(language);
    if (hand_roi < 8 || lip_roi < 8) bad("ROI sides must be >= 8");
    if (hand_patch == 0 || hand_patch > frame_h || hand_patch > frame_w) bad("hand_patch must fit in the frame");
    if (frame_h < 16 || frame_w < 16) bad("frame must be at least 16x16");
    if (!(transition_fraction >= 0.0 && transition_fraction < 1.0)) bad("transition_fraction must lie in [0,1)");
    if (!(max_rotation >= 0.0 && max_rotation <= std::numbers::pi)) bad("max_rotation must lie in [0,pi]");
    if (!(min_scale >= 0.5 && min_scale <= max_scale && max_scale <= 1.5)) bad("scale range must lie in [0.5,1.5]");
    if (!(max_translation >= 0.0)) bad("max_translation must be >= 0");
    if (!(occlusion_prob >= 0.0 && occlusion_prob <= 1.0 && blur_prob >= 0.0 && blur_prob <= 1.0))
      bad("probabilities must lie in [0,1]");
    if (!(max_occlusion >= 0.0 && max_occlusion <= 0.5)) bad("max_occlusion must lie in [0,0.5]");
    if (!(max_blur >= 0.0)) bad("max_blur must be >= 0");
    if (!(anchor_jitter >= 0.0)) bad("anchor_jitter must be >= 0");
  }
};

/// Pose drawn from the configured ranges.
inline Pose random_pose(const SynthConfig& cfg, Rng& rng) {
  Pose p;
  p.rotation = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
  p.scale = rng.uniform(cfg.min_scale, cfg.max_scale);
  p.dx = rng.uniform(-cfg.max_translation, cfg.max_translation);
  p.dy = rng.uniform(-cfg.max_translation, cfg.max_translation);
  if (rng.bernoulli(cfg.occlusion_prob)) p.occlusion_fraction = rng.uniform(0.05, std::max(0.05, cfg.max_occlusion));
  if (rng.bernoulli(cfg.blur_prob)) p.motion_blur_len = rng.uniform(1.0, std::max(1.0, cfg.max_blur));
  return p;
}

/// Frame coordinates of the hand: clamped so the pasted patch stays inside.
inline std::array<double, 2> clamp_hand_coords(std::array<double, 2> xy, const SynthConfig& cfg) {
  const double mx = 0.5 * static_cast<double>(cfg.hand_patch) / static_cast<double>(cfg.frame_w);
  const double my = 0.5 * static_cast<double>(cfg.hand_patch) / static_cast<double>(cfg.frame_h);
  return {std::clamp(xy[0], mx, 1.0 - mx), std::clamp(xy[1], my, 1.0 - my)};
}

/// Normalized position of the glyph origin when the patch sits at `center`.
inline std::array<double, 2> glyph_coords(std::array<double, 2> center, const Pose& pose, const SynthConfig& cfg) {
  const double patch = static_cast<double>(cfg.hand_patch);
  const double x = center[0] + 0.5 * pose.dx * patch / static_cast<double>(cfg.frame_w);
  const double y = center[1] + 0.5 * pose.dy * patch / static_cast<double>(cfg.frame_h);
  return {detail::quantize(std::clamp(x, 0.0, 1.0)), detail::quantize(std::clamp(y, 0.0, 1.0))};
}

namespace detail {

inline void paste(std::vector<double>& frame, std::size_t fh, std::size_t fw, const Tensor& patch, long long top,
                  long long left) {
  const std::size_t ph = patch.dim(1), pw = patch.dim(2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x) {
        const long long fy = top + static_cast<long long>(y), fx = left + static_cast<long long>(x);
        if (fy < 0 || fx < 0 || fy >= static_cast<long long>(fh) || fx >= static_cast<long long>(fw)) continue;
        frame[(c * fh + static_cast<std::size_t>(fy)) * fw + static_cast<std::size_t>(fx)] = patch[(c * ph + y) * pw + x];
      }
}

}  // namespace detail

/// Full scene: background, face ellipse, mouth (the lip ROI scaled down) and
/// the hand patch (the hand ROI scaled down) centered at `coords`.
inline Tensor compose_frame(const Tensor& hand_roi, std::array<double, 2> coords, const Tensor& lip_roi,
                            const SynthConfig& cfg, Rng& rng) {
  const std::size_t H = cfg.frame_h, W = cfg.frame_w;
  auto img = detail::textured_background(H, W, {0.30, 0.30, 0.35}, 0.06, rng);
  const std::array<double, 3> skin{0.85, 0.65, 0.55};
  const double fcx = 0.45 * static_cast<double>(W), fcy = 0.38 * static_cast<double>(H);
  const double fa = 0.17 * static_cast<double>(W), fb = 0.30 * static_cast<double>(H);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double u = (static_cast<double>(x) + 0.5 - fcx) / fa, v = (static_cast<double>(y) + 0.5 - fcy) / fb;
      if (u * u + v * v <= 1.0)
        for (std::size_t c = 0; c < 3; ++c) img[(c * H + y) * W + x] = skin[c];
    }
  const auto mouth_w = std::max<std::size_t>(4, W * 14 / 100), mouth_h = std::max<std::size_t>(4, mouth_w * 3 / 4);
  const Tensor mouth = resize_bilinear(lip_roi, mouth_h, mouth_w);
  detail::paste(img, H, W, mouth, std::llround(0.52 * static_cast<double>(H)) - static_cast<long long>(mouth_h / 2),
                std::llround(0.45 * static_cast<double>(W)) - static_cast<long long>(mouth_w / 2));
  const Tensor hand = resize_bilinear(hand_roi, cfg.hand_patch, cfg.hand_patch);
  const auto half = static_cast<long long>(cfg.hand_patch / 2);
  detail::paste(img, H, W, hand, std::llround(coords[1] * static_cast<double>(H)) - half,
                std::llround(coords[0] * static_cast<double>(W)) - half);
  return detail::finish_image(std::move(img), H, W);
}

struct FrameRender {
  Tensor frame;     // [3, frame_h, frame_w]
  Tensor hand_roi;  // [3, hand_roi, hand_roi]
  Tensor lip_roi;   // [3, lip_roi, lip_roi]
  std::array<double, 2> coords{};  // glyph origin / frame size
  Pose pose;
};

/// One still frame with a random pose and anchor jitter.
inline FrameRender render_frame(int shape_class, int position_class, int viseme_class, Rng& rng,
                                const SynthConfig& cfg) {
  cfg.validate();
  const auto tr = language_traits(cfg.language);
  if (shape_class < 0 || shape_class >= tr.shapes || position_class < 0 || position_class >= tr.positions ||
      viseme_class < 0 || viseme_class >= tr.visemes)
    throw std::invalid_argument("render_frame: class out of range for language " + cfg.language);
  FrameRender r;
  r.pose = random_pose(cfg, rng);
  const auto anchor = position_anchors(cfg.language)[static_cast<std::size_t>(position_class)];
  const double jx = rng.uniform(-cfg.anchor_jitter, cfg.anchor_jitter);
  const double jy = rng.uniform(-cfg.anchor_jitter, cfg.anchor_jitter);
  r.hand_roi = render_hand_glyph(shape_class, r.pose, cfg.hand_roi, cfg.hand_roi, rng, cfg.style);
  r.lip_roi = render_lip_roi(viseme_shape(viseme_class), cfg.lip_roi, rng);
  const auto c = clamp_hand_coords({anchor[0] + jx, anchor[1] + jy}, cfg);
  r.coords = glyph_coords(c, r.pose, cfg);
  r.frame = compose_frame(r.hand_roi, c, r.lip_roi, cfg, rng);
  return r;
}

}  // namespace cuedseq
