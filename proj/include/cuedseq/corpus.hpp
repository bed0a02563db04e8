#pragma once

// Synthetic cued-speech corpus: rendered sentences with clean and noisy
// segment labels, a static hand-shape image set cut from them, random splits
// and the on-disk layout (manifest.json plus CSC1 tensor files).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cuedseq/alphabet.hpp"
#include "cuedseq/core/errors.hpp"
#include "cuedseq/core/parallel.hpp"
#include "cuedseq/core/params.hpp"
#include "cuedseq/render.hpp"

namespace cuedseq {

struct Segment {
  int phoneme = 1;  // alphabet index, 1-based
  int shape = 0;
  int position = 0;
  int viseme = 0;
  std::size_t start = 0;  // frames [start, end)
  std::size_t end = 0;
  std::size_t transition = 0;  // leading frames that morph from the previous segment
  Pose pose;

  std::size_t length() const noexcept { return end - start; }
  bool operator==(const Segment&) const = default;
};

struct NoiseConfig {
  std::size_t boundary_jitter = 3;  // delta, frames
  double flip_prob = 0.15;          // rho
  std::size_t asynchrony = 2;       // frames the lip stream lags the hand stream

  void validate() const {
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("noise config: flip_prob must lie in [0,1]");
  }
  static NoiseConfig none() { return {0, 0.0, 0}; }
  bool operator==(const NoiseConfig&) const = default;
};

struct SequenceSample {
  std::string id;
  std::string language;
  std::size_t speaker = 0;
  Tensor hand_rois;    // [T, 3, h, h]
  Tensor lip_rois;     // [T, 3, l, l]
  Tensor hand_coords;  // [T, 2], normalized
  Tensor frames;       // [T, 3, H, W]; empty unless frames were kept
  std::vector<Segment> clean;
  std::vector<Segment> noisy;
  std::size_t asynchrony = 0;
  NoiseConfig noise = NoiseConfig::none();

  std::size_t num_frames() const { return hand_coords.dim(0); }

  const std::vector<Segment>& segments(bool use_noisy) const { return use_noisy ? noisy : clean; }

  std::vector<int> phoneme_targets(bool use_noisy = false) const {
    std::vector<int> out;
    for (const auto& s : segments(use_noisy)) out.push_back(s.phoneme);
    return out;
  }

  /// Hand-shape labels shifted by one (0 is the CTC blank). With
  /// `merge_repeats` adjacent segments of the same shape count once.
  std::vector<int> shape_targets(bool merge_repeats, bool use_noisy = false) const {
    std::vector<int> out;
    for (const auto& s : segments(use_noisy))
      if (!merge_repeats || out.empty() || out.back() != s.shape + 1) out.push_back(s.shape + 1);
    return out;
  }

  const Segment& segment_at(std::size_t t, bool use_noisy = false) const {
    for (const auto& s : segments(use_noisy))
      if (t >= s.start && t < s.end) return s;
    throw std::out_of_range("frame " + std::to_string(t) + " outside the sample");
  }

  bool operator==(const SequenceSample& o) const;
};

namespace detail {

inline bool tensor_bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

inline Tensor image_at(const Tensor& stack, std::size_t i) {
  const Shape inner(stack.shape().begin() + 1, stack.shape().end());
  const std::size_t n = shape_numel(inner);
  auto v = stack.data().subspan(i * n, n);
  return Tensor(std::vector<double>(v.begin(), v.end()), inner);
}

inline Tensor stack_images(const std::vector<Tensor>& imgs) {
  if (imgs.empty()) return {};
  Shape shape = imgs.front().shape();
  std::vector<double> v;
  v.reserve(imgs.size() * imgs.front().numel());
  for (const auto& img : imgs) {
    if (img.shape() != shape) throw std::invalid_argument("stack_images: shape mismatch");
    v.insert(v.end(), img.data().begin(), img.data().end());
  }
  shape.insert(shape.begin(), imgs.size());
  return Tensor(std::move(v), std::move(shape));
}

inline constexpr std::uint64_t kSentenceStream = 0x6101;
inline constexpr std::uint64_t kNoiseStream = 0x6102;
inline constexpr std::uint64_t kStaticStream = 0x6103;
inline constexpr std::uint64_t kHandFrameStream = 0x6111;
inline constexpr std::uint64_t kLipFrameStream = 0x6112;
inline constexpr std::uint64_t kSceneFrameStream = 0x6113;

}  // namespace detail

inline bool SequenceSample::operator==(const SequenceSample& o) const {
  using detail::tensor_bits_equal;
  return id == o.id && language == o.language && speaker == o.speaker && clean == o.clean && noisy == o.noisy &&
         asynchrony == o.asynchrony && noise == o.noise && tensor_bits_equal(hand_rois, o.hand_rois) &&
         tensor_bits_equal(lip_rois, o.lip_rois) && tensor_bits_equal(hand_coords, o.hand_coords) &&
         tensor_bits_equal(frames, o.frames);
}

/// Frame t of a [T, ...] stack.
inline Tensor frame_of(const Tensor& stack, std::size_t t) { return detail::image_at(stack, t); }

/// Renders one sentence. Segment lengths are uniform in `timing`; the first
/// `transition_fraction` of every segment after the first morphs glyph, pose,
/// hand position and lips from the previous segment. The lip stream is then
/// delayed by `cfg.asynchrony_offset` frames, repeating its first frame.
inline SequenceSample synth_sentence(const std::vector<std::string>& phonemes, const PhonemeAlphabet& alphabet,
                                     std::pair<std::size_t, std::size_t> timing, Rng& rng, const SynthConfig& cfg) {
  cfg.validate();
  if (phonemes.empty()) throw std::invalid_argument("synth_sentence: empty phoneme list");
  if (phonemes.size() > 30) throw std::invalid_argument("synth_sentence: at most 30 phonemes per sentence");
  if (timing.first < 2 || timing.first > timing.second)
    throw std::invalid_argument("synth_sentence: timing must satisfy 2 <= min <= max");
  if (cfg.language != alphabet.language())
    throw std::invalid_argument("synth_sentence: config language " + cfg.language + " differs from alphabet " +
                                alphabet.language());
  const auto anchors = position_anchors(cfg.language);

  SequenceSample out;
  out.language = cfg.language;
  out.asynchrony = cfg.asynchrony_offset;
  std::vector<std::array<double, 2>> centers;
  std::vector<LipShape> lips;
  std::size_t T = 0;
  for (const auto& sym : phonemes) {
    const auto& code = alphabet.code(sym);
    Segment s;
    s.phoneme = alphabet.index_of(sym);
    s.shape = code.shape;
    s.position = code.position;
    s.viseme = code.viseme;
    const auto len = static_cast<std::size_t>(
        rng.uniform_int(static_cast<long long>(timing.first), static_cast<long long>(timing.second)));
    s.start = T;
    s.end = T + len;
    s.transition = out.clean.empty() ? 0 : static_cast<std::size_t>(cfg.transition_fraction * static_cast<double>(len));
    s.pose = random_pose(cfg, rng);
    const auto& a = anchors[static_cast<std::size_t>(code.position)];
    const double jx = rng.uniform(-cfg.anchor_jitter, cfg.anchor_jitter);
    const double jy = rng.uniform(-cfg.anchor_jitter, cfg.anchor_jitter);
    centers.push_back(clamp_hand_coords({a[0] + jx, a[1] + jy}, cfg));
    LipShape lip = viseme_shape(code.viseme);
    lip.width *= rng.uniform(0.95, 1.05);
    lips.push_back(lip);
    out.clean.push_back(s);
    T += len;
  }
  out.noisy = out.clean;
  const std::uint64_t frame_seed = rng.next_u64();

  const std::size_t hs = cfg.hand_roi, ls = cfg.lip_roi;
  std::vector<double> hand(T * 3 * hs * hs), coords(T * 2);
  std::vector<Tensor> lip_aligned(T), hand_frames(T);
  std::vector<std::array<double, 2>> frame_centers(T);
  for (std::size_t k = 0; k < out.clean.size(); ++k) {
    const auto& seg = out.clean[k];
    for (std::size_t t = seg.start; t < seg.end; ++t) {
      const std::size_t off = t - seg.start;
      const double u = off < seg.transition ? static_cast<double>(off + 1) / static_cast<double>(seg.transition + 1) : 1.0;
      Pose pose = seg.pose;
      std::vector<detail::WeightedGlyph> glyphs{{seg.shape, 1.0}};
      std::array<double, 2> center = centers[k];
      LipShape lip = lips[k];
      if (u < 1.0) {
        const auto& prev = out.clean[k - 1];
        pose = lerp_pose(prev.pose, seg.pose, u);
        glyphs = {{prev.shape, 1.0 - u}, {seg.shape, u}};
        center = {centers[k - 1][0] + u * (centers[k][0] - centers[k - 1][0]),
                  centers[k - 1][1] + u * (centers[k][1] - centers[k - 1][1])};
        lip = lerp_lips(lips[k - 1], lips[k], u);
      }
      Rng hand_rng(derive_seed(frame_seed, detail::kHandFrameStream, t));
      hand_frames[t] = detail::render_glyph_blend(glyphs, pose, hs, hs, hand_rng, cfg.style);
      std::copy(hand_frames[t].data().begin(), hand_frames[t].data().end(), hand.begin() + static_cast<std::ptrdiff_t>(t * 3 * hs * hs));
      frame_centers[t] = center;
      const auto xy = glyph_coords(center, pose, cfg);
      coords[2 * t] = xy[0];
      coords[2 * t + 1] = xy[1];
      Rng lip_rng(derive_seed(frame_seed, detail::kLipFrameStream, t));
      lip_aligned[t] = render_lip_roi(lip, ls, lip_rng);
    }
  }
  std::vector<Tensor> lip_frames(T);
  for (std::size_t t = 0; t < T; ++t) lip_frames[t] = lip_aligned[t >= cfg.asynchrony_offset ? t - cfg.asynchrony_offset : 0];
  out.hand_rois = Tensor(std::move(hand), {T, 3, hs, hs});
  out.lip_rois = detail::stack_images(lip_frames);
  out.hand_coords = Tensor(std::move(coords), {T, 2});
  if (cfg.keep_frames) {
    std::vector<Tensor> scenes(T);
    for (std::size_t t = 0; t < T; ++t) {
      Rng scene_rng(derive_seed(frame_seed, detail::kSceneFrameStream, t));
      scenes[t] = compose_frame(hand_frames[t], frame_centers[t], lip_frames[t], cfg, scene_rng);
    }
    out.frames = detail::stack_images(scenes);
  }
  return out;
}

/// Moves every inner boundary by a uniform integer in [-delta, delta] (clamped
/// so that order is kept and every segment keeps at least one frame) and flips
/// each segment's shape label to a uniformly chosen different class with
/// probability rho. Clean labels are left untouched.
inline SequenceSample inject_label_noise(SequenceSample sample, const NoiseConfig& noise, Rng& rng) {
  noise.validate();
  const auto& clean = sample.clean;
  const std::size_t n = clean.size(), T = sample.num_frames();
  std::vector<std::size_t> bounds(n + 1);
  bounds[0] = 0;
  bounds[n] = T;
  const auto delta = static_cast<long long>(noise.boundary_jitter);
  for (std::size_t k = 1; k < n; ++k) {
    const long long moved = static_cast<long long>(clean[k].start) + rng.uniform_int(-delta, delta);
    const auto lo = static_cast<long long>(bounds[k - 1]) + 1;
    const auto hi = static_cast<long long>(T - (n - k));
    bounds[k] = static_cast<std::size_t>(std::clamp(moved, lo, hi));
  }
  const int classes = language_traits(sample.language).shapes;
  sample.noisy = clean;
  for (std::size_t k = 0; k < n; ++k) {
    auto& s = sample.noisy[k];
    s.start = bounds[k];
    s.end = bounds[k + 1];
    if (rng.bernoulli(noise.flip_prob)) {
      const int shift = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(classes - 1)));
      s.shape = (s.shape + shift) % classes;
    }
  }
  sample.noise = noise;
  return sample;
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Uniform random partition of [0, n) into round(0.8 n) training and the
/// remaining test indices, each list sorted.
inline Split split_80_20(std::size_t n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("split_80_20: need at least 2 items, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n))), 1, n - 1);
  Split s{{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)},
          {idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end()}};
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

/// k disjoint folds covering [0, n); the first n % k folds hold one extra item.
inline std::vector<std::vector<std::size_t>> kfold(std::size_t n, std::size_t k, Rng& rng) {
  if (k < 2) throw std::invalid_argument("kfold: k must be >= 2");
  if (n < k) throw std::invalid_argument("kfold: " + std::to_string(n) + " items cannot fill " + std::to_string(k) + " folds");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos), idx.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

/// Training indices for fold f: every other fold, sorted.
inline std::vector<std::size_t> fold_complement(const std::vector<std::vector<std::size_t>>& folds, std::size_t f) {
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < folds.size(); ++g)
    if (g != f) out.insert(out.end(), folds[g].begin(), folds[g].end());
  std::sort(out.begin(), out.end());
  return out;
}

template <class T>
std::vector<T> select(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// Static hand-shape images

/// Hand ROIs cut from the stable (non-transition) frames of sentences, with
/// the clean label and the noisy label of the frame's segment.
struct StaticSet {
  Tensor images;  // [N, 3, h, h]
  std::vector<int> clean_labels;
  std::vector<int> noisy_labels;
  std::vector<std::size_t> sentence;  // source sentence index
  std::vector<std::size_t> frame;

  std::size_t size() const noexcept { return clean_labels.size(); }
  Tensor image(std::size_t i) const { return detail::image_at(images, i); }

  std::vector<Tensor> image_list(const std::vector<std::size_t>& idx) const {
    std::vector<Tensor> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(image(i));
    return out;
  }
  std::vector<Tensor> image_list() const {
    std::vector<std::size_t> all(size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return image_list(all);
  }

  /// Image indices whose source sentence is in `sentences` (sorted).
  std::vector<std::size_t> from_sentences(const std::vector<std::size_t>& sentences) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (std::binary_search(sentences.begin(), sentences.end(), sentence[i])) out.push_back(i);
    return out;
  }

  bool operator==(const StaticSet& o) const {
    return detail::tensor_bits_equal(images, o.images) && clean_labels == o.clean_labels &&
           noisy_labels == o.noisy_labels && sentence == o.sentence && frame == o.frame;
  }
};

/// Up to `per_sentence` distinct stable frames of every sentence, in sentence
/// then frame order.
inline StaticSet build_static_set(const std::vector<SequenceSample>& sentences, std::size_t per_sentence,
                                  std::uint64_t seed) {
  StaticSet set;
  std::vector<Tensor> imgs;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const auto& smp = sentences[s];
    std::vector<std::size_t> stable;
    for (const auto& seg : smp.clean)
      for (std::size_t t = seg.start + seg.transition; t < seg.end; ++t) stable.push_back(t);
    Rng rng(derive_seed(seed, detail::kStaticStream, s));
    rng.shuffle(stable);
    stable.resize(std::min(stable.size(), per_sentence));
    std::sort(stable.begin(), stable.end());
    for (auto t : stable) {
      imgs.push_back(frame_of(smp.hand_rois, t));
      set.clean_labels.push_back(smp.segment_at(t, false).shape);
      set.noisy_labels.push_back(smp.segment_at(t, true).shape);
      set.sentence.push_back(s);
      set.frame.push_back(t);
    }
  }
  set.images = detail::stack_images(imgs);
  return set;
}

// ---------------------------------------------------------------------------
// Corpus

struct CorpusConfig {
  std::string language = "fr";
  std::size_t speakers = 2;
  std::size_t sentences_per_speaker = 200;
  std::size_t min_phonemes = 3;
  std::size_t max_phonemes = 8;
  std::size_t min_frames = 6;  // per segment
  std::size_t max_frames = 12;
  std::size_t static_per_sentence = 5;
  NoiseConfig noise;
  SynthConfig synth;

  void validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("corpus config: " + what); };
    language_traits(language);
    if (speakers == 0 || sentences_per_speaker == 0) bad("speakers and sentences_per_speaker must be positive");
    if (min_phonemes == 0 || min_phonemes > max_phonemes || max_phonemes > 30) bad("phoneme counts must satisfy 1 <= min <= max <= 30");
    if (min_frames < 2 || min_frames > max_frames) bad("frame counts must satisfy 2 <= min <= max");
    noise.validate();
    synth.validate();
  }
};

struct Corpus {
  int version = 1;
  std::string language;
  PhonemeAlphabet alphabet;
  std::vector<SequenceSample> sentences;
  StaticSet static_set;
  nlohmann::json metadata = nlohmann::json::object();

  bool operator==(const Corpus& o) const {
    return version == o.version && language == o.language && alphabet == o.alphabet && sentences == o.sentences &&
           static_set == o.static_set && metadata == o.metadata;
  }
};

/// Sentence i is produced from its own derived seed, so the result does not
/// depend on how generation is scheduled.
inline Corpus generate_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Corpus c;
  c.language = cfg.language;
  c.alphabet = PhonemeAlphabet::synthetic(cfg.language);
  const std::size_t n = cfg.speakers * cfg.sentences_per_speaker;
  c.sentences.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const std::size_t speaker = i / cfg.sentences_per_speaker;
    Rng rng(derive_seed(seed, detail::kSentenceStream, i));
    const auto len = static_cast<std::size_t>(
        rng.uniform_int(static_cast<long long>(cfg.min_phonemes), static_cast<long long>(cfg.max_phonemes)));
    std::vector<std::string> phonemes;
    for (std::size_t k = 0; k < len; ++k) phonemes.push_back(c.alphabet.phonemes()[rng.below(c.alphabet.size())]);
    SynthConfig sc = cfg.synth;
    sc.language = cfg.language;
    sc.asynchrony_offset = cfg.noise.asynchrony;
    sc.style = RenderStyle::for_speaker(speaker);
    auto sample = synth_sentence(phonemes, c.alphabet, {cfg.min_frames, cfg.max_frames}, rng, sc);
    sample.speaker = speaker;
    char id[32];
    std::snprintf(id, sizeof id, "s%zu_%04zu", speaker, i % cfg.sentences_per_speaker);
    sample.id = id;
    Rng noise_rng(derive_seed(seed, detail::kNoiseStream, i));
    c.sentences[i] = inject_label_noise(std::move(sample), cfg.noise, noise_rng);
  });
  c.static_set = build_static_set(c.sentences, cfg.static_per_sentence, seed);
  c.metadata["seed"] = seed;
  return c;
}

// ---------------------------------------------------------------------------
// On-disk format
//
// CSC1 tensor file: "CSC1", u32 rank, u32 dims[rank], f32 values[numel],
// little-endian.

inline std::string encode_csc(const Tensor& t) {
  std::string out = "CSC1";
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline Tensor decode_csc(std::string_view bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  if (r.take(4) != "CSC1") throw ParseError(source, "bad magic, expected CSC1");
  Shape shape(r.u32());
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0) throw ParseError(source, "zero dimension");
  }
  const std::size_t n = shape_numel(shape);
  if (r.remaining() / 4 < n)
    throw ParseError(source, "truncated: " + std::to_string(n) + " values expected, " +
                                 std::to_string(r.remaining() / 4) + " present");
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(r.f32());
  if (!r.done()) throw ParseError(source, "trailing bytes after tensor payload");
  return Tensor(std::move(v), std::move(shape));
}

inline void save_csc(const Tensor& t, const std::string& path) { detail::write_file_bytes(path, encode_csc(t)); }
inline Tensor load_csc(const std::string& path) { return decode_csc(detail::read_file_bytes(path), path); }

namespace detail {

inline nlohmann::json pose_to_json(const Pose& p) {
  return {{"rotation", p.rotation}, {"dx", p.dx},       {"dy", p.dy},
          {"scale", p.scale},       {"occlusion", p.occlusion_fraction}, {"blur", p.motion_blur_len}};
}

inline Pose pose_from_json(const nlohmann::json& j) {
  Pose p;
  p.rotation = j.at("rotation").get<double>();
  p.dx = j.at("dx").get<double>();
  p.dy = j.at("dy").get<double>();
  p.scale = j.at("scale").get<double>();
  p.occlusion_fraction = j.at("occlusion").get<double>();
  p.motion_blur_len = j.at("blur").get<double>();
  return p;
}

inline nlohmann::json segments_to_json(const std::vector<Segment>& segs) {
  auto arr = nlohmann::json::array();
  for (const auto& s : segs)
    arr.push_back({{"phoneme", s.phoneme},
                   {"shape", s.shape},
                   {"position", s.position},
                   {"viseme", s.viseme},
                   {"start", s.start},
                   {"end", s.end},
                   {"transition", s.transition},
                   {"pose", pose_to_json(s.pose)}});
  return arr;
}

inline std::vector<Segment> segments_from_json(const nlohmann::json& arr) {
  std::vector<Segment> out;
  for (const auto& j : arr) {
    Segment s;
    s.phoneme = j.at("phoneme").get<int>();
    s.shape = j.at("shape").get<int>();
    s.position = j.at("position").get<int>();
    s.viseme = j.at("viseme").get<int>();
    s.start = j.at("start").get<std::size_t>();
    s.end = j.at("end").get<std::size_t>();
    s.transition = j.at("transition").get<std::size_t>();
    s.pose = pose_from_json(j.at("pose"));
    out.push_back(s);
  }
  return out;
}

inline nlohmann::json noise_to_json(const NoiseConfig& n) {
  return {{"boundary_jitter", n.boundary_jitter}, {"flip_prob", n.flip_prob}, {"asynchrony", n.asynchrony}};
}

inline NoiseConfig noise_from_json(const nlohmann::json& j) {
  NoiseConfig n;
  n.boundary_jitter = j.at("boundary_jitter").get<std::size_t>();
  n.flip_prob = j.at("flip_prob").get<double>();
  n.asynchrony = j.at("asynchrony").get<std::size_t>();
  return n;
}

}  // namespace detail

/// Writes manifest.json and one CSC1 file per tensor into `dir` (created if
/// missing).
inline void write_corpus(const Corpus& c, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir, "cannot create directory: " + ec.message());
  auto file = [&](const std::string& name) { return (fs::path(dir) / name).string(); };
  nlohmann::json m;
  m["format"] = "cuedseq-corpus";
  m["version"] = c.version;
  m["language"] = c.language;
  m["alphabet"] = c.alphabet.to_json();
  m["metadata"] = c.metadata;
  auto& arr = m["sentences"] = nlohmann::json::array();
  for (const auto& s : c.sentences) {
    nlohmann::json j;
    j["id"] = s.id;
    j["language"] = s.language;
    j["speaker"] = s.speaker;
    j["asynchrony"] = s.asynchrony;
    j["noise"] = detail::noise_to_json(s.noise);
    j["clean"] = detail::segments_to_json(s.clean);
    j["noisy"] = detail::segments_to_json(s.noisy);
    j["hand_rois"] = s.id + ".hand.csc";
    j["lip_rois"] = s.id + ".lip.csc";
    j["hand_coords"] = s.id + ".coords.csc";
    save_csc(s.hand_rois, file(s.id + ".hand.csc"));
    save_csc(s.lip_rois, file(s.id + ".lip.csc"));
    save_csc(s.hand_coords, file(s.id + ".coords.csc"));
    if (!s.frames.empty()) {
      j["frames"] = s.id + ".frames.csc";
      save_csc(s.frames, file(s.id + ".frames.csc"));
    }
    arr.push_back(std::move(j));
  }
  auto& st = m["static"];
  st["clean_labels"] = c.static_set.clean_labels;
  st["noisy_labels"] = c.static_set.noisy_labels;
  st["sentence"] = c.static_set.sentence;
  st["frame"] = c.static_set.frame;
  if (!c.static_set.images.empty()) {
    st["images"] = "static.images.csc";
    save_csc(c.static_set.images, file("static.images.csc"));
  }
  detail::write_file_bytes(file("manifest.json"), m.dump(1) + "\n");
}

/// Reads a directory written by write_corpus. Unknown manifest fields are
/// ignored; missing or mistyped ones raise ParseError.
inline Corpus read_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  const std::string text = detail::read_file_bytes(manifest_path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path, e.what());
  }
  auto file = [&](const nlohmann::json& name) { return (fs::path(dir) / name.get<std::string>()).string(); };
  Corpus c;
  try {
    c.version = m.at("version").get<int>();
    if (c.version != 1) throw ParseError(manifest_path, "unsupported corpus version " + std::to_string(c.version));
    c.language = m.at("language").get<std::string>();
    c.alphabet = PhonemeAlphabet::from_json(m.at("alphabet"), manifest_path);
    if (m.contains("metadata")) c.metadata = m["metadata"];
    for (const auto& j : m.at("sentences")) {
      SequenceSample s;
      s.id = j.at("id").get<std::string>();
      s.language = j.at("language").get<std::string>();
      s.speaker = j.at("speaker").get<std::size_t>();
      s.asynchrony = j.at("asynchrony").get<std::size_t>();
      s.noise = detail::noise_from_json(j.at("noise"));
      s.clean = detail::segments_from_json(j.at("clean"));
      s.noisy = detail::segments_from_json(j.at("noisy"));
      s.hand_rois = load_csc(file(j.at("hand_rois")));
      s.lip_rois = load_csc(file(j.at("lip_rois")));
      s.hand_coords = load_csc(file(j.at("hand_coords")));
      if (j.contains("frames")) s.frames = load_csc(file(j.at("frames")));
      c.sentences.push_back(std::move(s));
    }
    const auto& st = m.at("static");
    c.static_set.clean_labels = st.at("clean_labels").get<std::vector<int>>();
    c.static_set.noisy_labels = st.at("noisy_labels").get<std::vector<int>>();
    c.static_set.sentence = st.at("sentence").get<std::vector<std::size_t>>();
    c.static_set.frame = st.at("frame").get<std::vector<std::size_t>>();
    if (st.contains("images")) c.static_set.images = load_csc(file(st.at("images")));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path, e.what());
  }
  return c;
}

}  // namespace cuedseq
