#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "cuedseq/corpus.hpp"

using namespace cuedseq;
namespace fs = std::filesystem;

namespace {

SynthConfig small_synth(const std::string& lang = "fr") {
  SynthConfig c;
  c.language = lang;
  c.hand_roi = 24;
  c.lip_roi = 16;
  c.frame_h = 48;
  c.frame_w = 64;
  c.hand_patch = 12;
  return c;
}

CorpusConfig small_corpus() {
  CorpusConfig c;
  c.speakers = 2;
  c.sentences_per_speaker = 3;
  c.min_phonemes = 2;
  c.max_phonemes = 4;
  c.min_frames = 3;
  c.max_frames = 5;
  c.static_per_sentence = 2;
  c.synth = small_synth();
  return c;
}

std::string temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cuedseq_" + name);
  fs::remove_all(p);
  return p.string();
}

double pixel_diff_fraction(const Tensor& a, const Tensor& b) {
  const std::size_t h = a.dim(1), w = a.dim(2);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    double m = 0.0;
    for (std::size_t c = 0; c < 3; ++c) m = std::max(m, std::abs(a[c * h * w + i] - b[c * h * w + i]));
    diff += m > 0.05;
  }
  return static_cast<double>(diff) / static_cast<double>(h * w);
}

double sq_dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Rendering

TEST(Glyph, CanonicalRenderIsDeterministic) {
  Rng a(1), b(1);
  auto x = render_hand_glyph(3, Pose{}, 64, 64, a);
  auto y = render_hand_glyph(3, Pose{}, 64, 64, b);
  EXPECT_EQ(x.values(), y.values());
  ASSERT_EQ(x.shape(), (Shape{3, 64, 64}));
  for (double v : x.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
  }
}

TEST(Glyph, CanonicalClassesArePairwiseDistinct) {
  std::vector<Tensor> imgs;
  for (int k = 0; k < kGlyphClasses; ++k) {
    Rng rng(7);
    imgs.push_back(render_hand_glyph(k, Pose{}, 64, 64, rng));
  }
  for (int i = 0; i < kGlyphClasses; ++i)
    for (int j = 0; j < i; ++j) EXPECT_GE(pixel_diff_fraction(imgs[i], imgs[j]), 0.05) << i << " vs " << j;
}

TEST(Glyph, RangeChecks) {
  Rng rng(2);
  Pose p;
  p.occlusion_fraction = 0.5;
  EXPECT_NO_THROW(render_hand_glyph(0, p, 32, 32, rng));
  p.occlusion_fraction = 0.6;
  EXPECT_THROW(render_hand_glyph(0, p, 32, 32, rng), std::invalid_argument);
  EXPECT_THROW(render_hand_glyph(8, Pose{}, 32, 32, rng), std::invalid_argument);
  EXPECT_THROW(render_hand_glyph(-1, Pose{}, 32, 32, rng), std::invalid_argument);
  Pose s;
  s.scale = 1.6;
  EXPECT_THROW(render_hand_glyph(0, s, 32, 32, rng), std::invalid_argument);
}

TEST(Glyph, OcclusionAndBlurChangeTheImage) {
  Pose occ;
  occ.occlusion_fraction = 0.3;
  Pose blur;
  blur.motion_blur_len = 4.0;
  Rng a(3), b(3), c(3);
  auto plain = render_hand_glyph(2, Pose{}, 32, 32, a);
  EXPECT_GT(pixel_diff_fraction(plain, render_hand_glyph(2, occ, 32, 32, b)), 0.05);
  EXPECT_GT(sq_dist(plain, render_hand_glyph(2, blur, 32, 32, c)), 0.0);
}

TEST(Frame, CoordinatesStayInUnitSquare) {
  for (const std::string lang : {"fr", "en"}) {
    auto cfg = small_synth(lang);
    cfg.max_translation = 0.5;
    cfg.anchor_jitter = 0.2;
    const auto tr = language_traits(lang);
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
      auto f = render_frame(i % tr.shapes, i % tr.positions, i % tr.visemes, rng, cfg);
      EXPECT_GE(f.coords[0], 0.0);
      EXPECT_LE(f.coords[0], 1.0);
      EXPECT_GE(f.coords[1], 0.0);
      EXPECT_LE(f.coords[1], 1.0);
    }
  }
}

TEST(Frame, PositionClassesAreGeometricallySeparated) {
  for (const std::string lang : {"fr", "en"}) {
    const auto cfg = small_synth(lang);
    const int P = language_traits(lang).positions;
    const double spacing = anchor_spacing(lang);
    for (int trial = 0; trial < 20; ++trial)
      for (int p = 0; p < P; ++p)
        for (int q = 0; q < p; ++q) {
          Rng a(100 + trial), b(100 + trial);
          auto fp = render_frame(1, p, 2, a, cfg);
          auto fq = render_frame(1, q, 2, b, cfg);
          EXPECT_GT(std::hypot(fp.coords[0] - fq.coords[0], fp.coords[1] - fq.coords[1]), spacing / 2);
        }
  }
}

TEST(Frame, DeterministicAndRangeChecked) {
  const auto cfg = small_synth("en");
  Rng a(5), b(5);
  auto x = render_frame(7, 3, 10, a, cfg);
  auto y = render_frame(7, 3, 10, b, cfg);
  EXPECT_EQ(x.frame.values(), y.frame.values());
  EXPECT_EQ(x.hand_roi.values(), y.hand_roi.values());
  EXPECT_EQ(x.lip_roi.values(), y.lip_roi.values());
  EXPECT_EQ(x.coords, y.coords);
  EXPECT_EQ(x.frame.shape(), (Shape{3, 48, 64}));
  Rng rng(6);
  EXPECT_THROW(render_frame(0, 4, 0, rng, cfg), std::invalid_argument);               // en has 4 positions
  EXPECT_THROW(render_frame(0, 0, 8, rng, small_synth("fr")), std::invalid_argument);  // fr has 8 visemes
  EXPECT_THROW(render_frame(8, 0, 0, rng, cfg), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Sentences

TEST(Sentence, SinglePhonemeCoversAllFrames) {
  const auto alpha = PhonemeAlphabet::synthetic("fr");
  Rng rng(8);
  auto s = synth_sentence({"p"}, alpha, {4, 9}, rng, small_synth());
  ASSERT_EQ(s.clean.size(), 1u);
  EXPECT_EQ(s.clean[0].start, 0u);
  EXPECT_EQ(s.clean[0].end, s.num_frames());
  EXPECT_EQ(s.clean[0].transition, 0u);
  EXPECT_EQ(s.lip_rois.dim(0), s.num_frames());
  EXPECT_EQ(s.hand_rois.dim(0), s.num_frames());
  EXPECT_EQ(s.clean[0].shape, alpha.code("p").shape);
}

TEST(Sentence, SegmentsTileTheFrames) {
  const auto alpha = PhonemeAlphabet::synthetic("en");
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> ph;
    for (std::size_t k = 0; k < 1 + rng.below(10); ++k) ph.push_back(alpha.phonemes()[rng.below(alpha.size())]);
    auto s = synth_sentence(ph, alpha, {2, 7}, rng, small_synth("en"));
    std::size_t total = 0, pos = 0;
    for (const auto& seg : s.clean) {
      EXPECT_EQ(seg.start, pos);
      EXPECT_GE(seg.length(), 2u);
      EXPECT_LE(seg.length(), 7u);
      pos = seg.end;
      total += seg.length();
    }
    EXPECT_EQ(total, s.num_frames());
    EXPECT_EQ(s.phoneme_targets().size(), ph.size());
  }
}

TEST(Sentence, AsynchronyDelaysTheLipStream) {
  const auto alpha = PhonemeAlphabet::synthetic("fr");
  const std::vector<std::string> ph{"a", "t", "o~", "R", "i"};
  auto cfg0 = small_synth();
  auto cfg3 = cfg0;
  cfg3.asynchrony_offset = 3;
  Rng a(10), b(10);
  auto s0 = synth_sentence(ph, alpha, {3, 6}, a, cfg0);
  auto s3 = synth_sentence(ph, alpha, {3, 6}, b, cfg3);
  ASSERT_EQ(s0.num_frames(), s3.num_frames());
  EXPECT_EQ(s0.hand_rois.values(), s3.hand_rois.values());
  EXPECT_EQ(s0.clean, s3.clean);
  for (std::size_t t = 3; t < s0.num_frames(); ++t)
    EXPECT_EQ(frame_of(s3.lip_rois, t).values(), frame_of(s0.lip_rois, t - 3).values()) << t;
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(frame_of(s3.lip_rois, t).values(), frame_of(s0.lip_rois, 0).values());
}

TEST(Sentence, Preconditions) {
  const auto alpha = PhonemeAlphabet::synthetic("fr");
  Rng rng(11);
  EXPECT_THROW(synth_sentence({}, alpha, {3, 5}, rng, small_synth()), std::invalid_argument);
  EXPECT_THROW(synth_sentence({"a"}, alpha, {1, 5}, rng, small_synth()), std::invalid_argument);
  EXPECT_THROW(synth_sentence({"a"}, alpha, {3, 5}, rng, small_synth("en")), std::invalid_argument);
  EXPECT_THROW(synth_sentence({"zz"}, alpha, {3, 5}, rng, small_synth()), std::invalid_argument);
  EXPECT_THROW(synth_sentence(std::vector<std::string>(31, "a"), alpha, {3, 5}, rng, small_synth()),
               std::invalid_argument);
}

TEST(Sentence, ShapeTargetsMergeRepeats) {
  SequenceSample s;
  for (int shape : {1, 1, 3, 1, 4, 4}) {
    Segment seg;
    seg.shape = shape;
    s.clean.push_back(seg);
  }
  EXPECT_EQ(s.shape_targets(false), (std::vector<int>{2, 2, 4, 2, 5, 5}));
  EXPECT_EQ(s.shape_targets(true), (std::vector<int>{2, 4, 2, 5}));
}

// ---------------------------------------------------------------------------
// Label noise

namespace {

std::vector<SequenceSample> sentences(std::size_t n, std::uint64_t seed, std::pair<std::size_t, std::size_t> timing = {3, 8}) {
  const auto alpha = PhonemeAlphabet::synthetic("fr");
  auto cfg = small_synth();
  cfg.hand_roi = 8;
  cfg.lip_roi = 8;
  std::vector<SequenceSample> out;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> ph;
    for (std::size_t k = 0; k < 2 + rng.below(8); ++k) ph.push_back(alpha.phonemes()[rng.below(alpha.size())]);
    out.push_back(synth_sentence(ph, alpha, timing, rng, cfg));
  }
  return out;
}

}  // namespace

TEST(Noise, NoNoiseIsIdentity) {
  for (auto& s : sentences(10, 12)) {
    Rng rng(1);
    auto n = inject_label_noise(s, NoiseConfig::none(), rng);
    EXPECT_EQ(n.noisy, n.clean);
    EXPECT_EQ(n.clean, s.clean);
  }
}

TEST(Noise, CertainFlipChangesEveryShape) {
  for (auto& s : sentences(10, 13)) {
    Rng rng(2);
    auto n = inject_label_noise(s, {0, 1.0, 0}, rng);
    for (std::size_t k = 0; k < n.clean.size(); ++k) {
      EXPECT_NE(n.noisy[k].shape, n.clean[k].shape);
      EXPECT_GE(n.noisy[k].shape, 0);
      EXPECT_LT(n.noisy[k].shape, 8);
      EXPECT_EQ(n.noisy[k].phoneme, n.clean[k].phoneme);
    }
  }
}

TEST(Noise, BoundaryJitterStaysInBoundsAndKeepsOrder) {
  auto data = sentences(100, 14, {2, 4});
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng(derive_seed(15, i));
    auto n = inject_label_noise(data[i], {2, 0.0, 0}, rng);
    ASSERT_EQ(n.noisy.size(), n.clean.size());
    EXPECT_EQ(n.noisy.front().start, 0u);
    EXPECT_EQ(n.noisy.back().end, n.num_frames());
    for (std::size_t k = 0; k < n.noisy.size(); ++k) {
      EXPECT_GE(n.noisy[k].length(), 1u);
      if (k > 0) {
        EXPECT_EQ(n.noisy[k].start, n.noisy[k - 1].end);
      }
      const auto d = static_cast<long long>(n.noisy[k].start) - static_cast<long long>(n.clean[k].start);
      EXPECT_LE(std::abs(d), 2);
    }
  }
}

TEST(Noise, FlipRateWithinThreeSigma) {
  auto data = sentences(100, 16);
  for (double rho : {0.15, 0.5}) {
    std::size_t flips = 0, n = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      Rng rng(derive_seed(17, i));
      auto s = inject_label_noise(data[i], {0, rho, 0}, rng);
      for (std::size_t k = 0; k < s.clean.size(); ++k) flips += s.noisy[k].shape != s.clean[k].shape;
      n += s.clean.size();
    }
    const double rate = static_cast<double>(flips) / static_cast<double>(n);
    EXPECT_NEAR(rate, rho, 3.0 * std::sqrt(rho * (1 - rho) / static_cast<double>(n)));
  }
}

// ---------------------------------------------------------------------------
// Splits

TEST(Split, EightyTwenty) {
  Rng rng(18);
  auto s = split_80_20(100, rng);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.test.size(), 20u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 100u);
  Rng again(18);
  auto t = split_80_20(100, again);
  EXPECT_EQ(s.train, t.train);
  EXPECT_THROW(split_80_20(1, rng), std::invalid_argument);
}

TEST(Split, FiveFoldBalancing) {
  Rng rng(19);
  auto folds = kfold(103, 5, rng);
  std::vector<std::size_t> sizes;
  std::set<std::size_t> all;
  for (const auto& f : folds) {
    sizes.push_back(f.size());
    all.insert(f.begin(), f.end());
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{21, 21, 21, 20, 20}));
  EXPECT_EQ(all.size(), 103u);
  Rng again(19);
  EXPECT_EQ(kfold(103, 5, again), folds);
  EXPECT_EQ(fold_complement(folds, 0).size(), 82u);
  EXPECT_THROW(kfold(4, 5, rng), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Corpus

TEST(Corpus, GenerationIsDeterministicAndThreadInvariant) {
  auto cfg = small_corpus();
  setenv("CUEDSEQ_THREADS", "1", 1);
  auto a = generate_corpus(cfg, 3);
  setenv("CUEDSEQ_THREADS", "4", 1);
  auto b = generate_corpus(cfg, 3);
  unsetenv("CUEDSEQ_THREADS");
  EXPECT_TRUE(a == b);
  auto c = generate_corpus(cfg, 4);
  EXPECT_FALSE(a == c);
  EXPECT_EQ(a.sentences.size(), 6u);
  EXPECT_EQ(a.sentences[4].id, "s1_0001");
  EXPECT_EQ(a.sentences[4].speaker, 1u);
  EXPECT_EQ(a.sentences[0].asynchrony, cfg.noise.asynchrony);
}

TEST(Corpus, StaticSetComesFromStableFrames) {
  auto c = generate_corpus(small_corpus(), 5);
  ASSERT_EQ(c.static_set.size(), 12u);
  for (std::size_t i = 0; i < c.static_set.size(); ++i) {
    const auto& s = c.sentences[c.static_set.sentence[i]];
    const std::size_t t = c.static_set.frame[i];
    const auto& seg = s.segment_at(t);
    EXPECT_GE(t, seg.start + seg.transition);
    EXPECT_EQ(c.static_set.clean_labels[i], seg.shape);
    EXPECT_EQ(c.static_set.noisy_labels[i], s.segment_at(t, true).shape);
    EXPECT_EQ(c.static_set.image(i).values(), frame_of(s.hand_rois, t).values());
  }
  auto idx = c.static_set.from_sentences({1, 3});
  for (auto i : idx) EXPECT_TRUE(c.static_set.sentence[i] == 1 || c.static_set.sentence[i] == 3);
  EXPECT_EQ(idx.size(), 4u);
}

TEST(Corpus, RoundTripIsBitwise) {
  auto cfg = small_corpus();
  cfg.synth.keep_frames = true;
  auto c = generate_corpus(cfg, 6);
  const auto dir = temp_dir("roundtrip");
  write_corpus(c, dir);
  auto back = read_corpus(dir);
  EXPECT_TRUE(back == c);
  EXPECT_FALSE(back.sentences[0].frames.empty());
  fs::remove_all(dir);
}

TEST(Corpus, TruncatedTensorNamesTheFile) {
  auto c = generate_corpus(small_corpus(), 7);
  const auto dir = temp_dir("truncated");
  write_corpus(c, dir);
  const auto victim = (fs::path(dir) / (c.sentences[2].id + ".hand.csc")).string();
  fs::resize_file(victim, fs::file_size(victim) - 3);
  try {
    read_corpus(dir);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(victim), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Corpus, ManifestUnknownFieldsIgnoredMalformedRejected) {
  auto c = generate_corpus(small_corpus(), 8);
  const auto dir = temp_dir("manifest");
  write_corpus(c, dir);
  const auto path = (fs::path(dir) / "manifest.json").string();
  auto m = nlohmann::json::parse(std::ifstream(path));
  m["future_field"] = {{"x", 1}};
  m["sentences"][0]["extra"] = "ignored";
  std::ofstream(path) << m.dump(1);
  EXPECT_TRUE(read_corpus(dir) == c);

  std::ofstream(path) << "{\n  \"version\": 1,\n  \"language\": \"fr\",\n  oops\n}\n";
  try {
    read_corpus(dir);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  m.erase("sentences");
  std::ofstream(path) << m.dump();
  EXPECT_THROW(read_corpus(dir), ParseError);
  fs::remove_all(dir);
  EXPECT_THROW(read_corpus(dir), IoError);
}

TEST(Corpus, CleanLabelsMatchTheRenderedContent) {
  auto cfg = small_corpus();
  cfg.sentences_per_speaker = 10;
  cfg.synth.occlusion_prob = 0.0;
  cfg.synth.blur_prob = 0.0;
  cfg.noise.asynchrony = 0;
  auto c = generate_corpus(cfg, 9);
  const auto anchors = position_anchors("fr");
  for (const auto& s : c.sentences) {
    auto style = RenderStyle::for_speaker(s.speaker);
    style.background_noise = 0.0;
    for (const auto& seg : s.clean) {
      const std::size_t t = seg.start + seg.transition;  // first stable frame
      // hand shape: nearest noise-free re-render at the recorded pose
      const Tensor roi = frame_of(s.hand_rois, t);
      int best = -1;
      double best_d = 1e300;
      for (int k = 0; k < kGlyphClasses; ++k) {
        Rng rng(0);
        const double d = sq_dist(roi, render_hand_glyph(k, seg.pose, roi.dim(1), roi.dim(2), rng, style));
        if (d < best_d) best_d = d, best = k;
      }
      EXPECT_EQ(best, seg.shape) << s.id;
      // position: nearest anchor
      const double x = s.hand_coords[2 * t], y = s.hand_coords[2 * t + 1];
      int nearest = -1;
      double nd = 1e9;
      for (std::size_t p = 0; p < anchors.size(); ++p) {
        const double d = std::hypot(anchors[p][0] - x, anchors[p][1] - y);
        if (d < nd) nd = d, nearest = static_cast<int>(p);
      }
      EXPECT_EQ(nearest, seg.position) << s.id;
      // viseme: nearest lip template
      const Tensor lip = frame_of(s.lip_rois, t);
      int vbest = -1;
      double vd = 1e300;
      for (int v = 0; v < 8; ++v) {
        Rng rng(0);
        const double d = sq_dist(lip, render_lip_roi(viseme_shape(v), lip.dim(1), rng));
        if (d < vd) vd = d, vbest = v;
      }
      EXPECT_EQ(vbest, seg.viseme) << s.id;
    }
  }
}

TEST(Alphabet, SyntheticTablesAreValid) {
  for (const std::string lang : {"fr", "en"}) {
    auto a = PhonemeAlphabet::synthetic(lang);
    EXPECT_EQ(a.size(), lang == "fr" ? 33u : 41u);
    const auto tr = language_traits(lang);
    std::set<std::tuple<int, int, int>> triples;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto& sym = a.phonemes()[i];
      EXPECT_EQ(a.index_of(sym), static_cast<int>(i) + 1);
      EXPECT_EQ(a.symbol(static_cast<int>(i) + 1), sym);
      const auto& c = a.code(sym);
      EXPECT_LT(c.shape, tr.shapes);
      EXPECT_LT(c.position, tr.positions);
      EXPECT_LT(c.viseme, tr.visemes);
      triples.insert({c.shape, c.position, c.viseme});
    }
    EXPECT_EQ(triples.size(), a.size());
    EXPECT_TRUE(PhonemeAlphabet::from_json(a.to_json()) == a);
  }
  EXPECT_THROW(PhonemeAlphabet::synthetic("de"), std::invalid_argument);
  auto j = PhonemeAlphabet::synthetic("fr").to_json();
  j["coding"]["a"]["position"] = 5;
  EXPECT_THROW(PhonemeAlphabet::from_json(j), ParseError);
}
