#pragma once

// The staged recipe on a generated corpus: contrastive pretraining on static
// hand images, fine-tuning on a small clean-labeled subset, the hand-shape
// sequence model and the phoneme recognizer, plus their evaluations. Stage
// functions are pure given (config, corpus, split, seed); file handling lives
// in the CLI.

#include <cmath>
#include <string>
#include <vector>

#include "cuedseq/config.hpp"

namespace cuedseq {

namespace detail {
inline constexpr std::uint64_t kSplitStream = 0x7101;
inline constexpr std::uint64_t kFoldStream = 0x7102;
inline constexpr std::uint64_t kPretrainStage = 0x7201;
inline constexpr std::uint64_t kFinetuneStage = 0x7202;
inline constexpr std::uint64_t kSubsetStream = 0x7203;
inline constexpr std::uint64_t kSequenceStage = 0x7204;
inline constexpr std::uint64_t kFusionStage = 0x7205;
inline constexpr std::uint64_t kBaselineStage = 0x7206;
}  // namespace detail

inline std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage, std::uint64_t fold = 0) {
  return derive_seed(seed, stage, fold);
}

/// Sentence indices (sorted) on each side of the train/test split. Static
/// images follow their source sentence.
struct SentenceSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline SentenceSplit split_sentences(const Corpus& c, std::uint64_t seed) {
  Rng rng(derive_seed(seed, detail::kSplitStream));
  auto s = split_80_20(c.sentences.size(), rng);
  return {s.train, s.test};
}

inline std::vector<std::vector<std::size_t>> sentence_folds(const Corpus& c, std::size_t k, std::uint64_t seed) {
  Rng rng(derive_seed(seed, detail::kFoldStream));
  auto folds = kfold(c.sentences.size(), k, rng);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

inline void check_corpus_language(const RunConfig& cfg, const Corpus& c) {
  if (c.language != cfg.language)
    throw ConfigError("language", "corpus is '" + c.language + "' but the config says '" + cfg.language + "'");
}

/// Static images (and labels) whose source sentence is listed.
inline LabeledImages static_images(const Corpus& c, const std::vector<std::size_t>& sentences, bool noisy) {
  LabeledImages out;
  for (auto i : c.static_set.from_sentences(sentences)) {
    out.images.push_back(c.static_set.image(i));
    out.labels.push_back(noisy ? c.static_set.noisy_labels[i] : c.static_set.clean_labels[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

inline PretrainResult run_pretrain(const RunConfig& cfg, const Corpus& c, const SentenceSplit& split,
                                   std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  check_corpus_language(cfg, c);
  auto images = static_images(c, split.train, false).images;
  return pretrain(images, cfg.encoder, cfg.augment, cfg.contrastive, stage_seed(seed, detail::kPretrainStage),
                  on_epoch);
}

/// Fine-tunes on the stratified clean-labeled fraction of the training images.
inline FinetuneResult run_finetune(const RunConfig& cfg, const Corpus& c, const SentenceSplit& split,
                                   const ParamSet& pretrained, std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  check_corpus_language(cfg, c);
  auto labeled = static_images(c, split.train, false);
  Rng subset_rng(derive_seed(seed, detail::kSubsetStream));
  auto subset = labeled.select(select_annotated_subset(labeled.labels, cfg.finetune.labeled_fraction, subset_rng));
  return finetune(pretrained, cfg.encoder, subset, cfg.finetune, stage_seed(seed, detail::kFinetuneStage), on_epoch);
}

/// Supervised reference: a randomly initialized encoder trained end to end on
/// every training image with its noisy label.
inline FinetuneResult run_noisy_supervised(const RunConfig& cfg, const Corpus& c, const SentenceSplit& split,
                                           std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  check_corpus_language(cfg, c);
  auto data = static_images(c, split.train, true);
  Rng init(derive_seed(seed, detail::kBaselineStage, 1));
  ParamSet fresh = Encoder(cfg.encoder, init).params();
  FinetuneConfig fc = cfg.finetune;
  fc.freeze_encoder = false;
  return finetune(fresh, cfg.encoder, data, fc, stage_seed(seed, detail::kBaselineStage), on_epoch);
}

/// Per-frame encoder features and hand-shape targets of the listed sentences.
inline std::vector<SequenceExample> shape_sequence_examples(const Corpus& c, const std::vector<std::size_t>& sentences,
                                                            const Encoder& encoder, const ShapeTargetsConfig& targets) {
  std::vector<SequenceExample> out(sentences.size());
  parallel_for(sentences.size(), [&](std::size_t k) {
    const auto& s = c.sentences[sentences[k]];
    std::vector<Tensor> frames(s.num_frames());
    for (std::size_t t = 0; t < frames.size(); ++t) frames[t] = frame_of(s.hand_rois, t);
    auto guard = Tape::suspend();
    out[k].features = encoder.encode_batch(frames);
    out[k].target = s.shape_targets(targets.merge_repeats, targets.noisy);
  });
  return out;
}

inline std::vector<SequenceSample> select_sentences(const Corpus& c, const std::vector<std::size_t>& idx) {
  return select(c.sentences, idx);
}

inline SequenceTrainResult run_train_sequence(const RunConfig& cfg, const Corpus& c, const SentenceSplit& split,
                                              const ParamSet& finetuned, std::uint64_t seed,
                                              const EpochCallback& on_epoch = {}) {
  check_corpus_language(cfg, c);
  Encoder enc(cfg.encoder, finetuned);
  auto train = shape_sequence_examples(c, split.train, enc, cfg.shape_targets);
  auto test = shape_sequence_examples(c, split.test, enc, cfg.shape_targets);
  return train_sequence(train, test, cfg.sequence, stage_seed(seed, detail::kSequenceStage), on_epoch);
}

inline FusionTrainResult run_train_fusion(const RunConfig& cfg, const Corpus& c, const SentenceSplit& split,
                                          const ParamSet& finetuned, std::uint64_t seed,
                                          const EpochCallback& on_epoch = {}) {
  check_corpus_language(cfg, c);
  return train_fusion(select_sentences(c, split.train), select_sentences(c, split.test), cfg.fusion_config(),
                      cfg.encoder, c.alphabet, finetuned, stage_seed(seed, detail::kFusionStage), on_epoch);
}

// ---------------------------------------------------------------------------
// Evaluation

/// Hand-shape classification of the held-out static images against clean labels.
inline EvalReport eval_static(const RunConfig& cfg, const Corpus& c, const std::vector<std::size_t>& sentences,
                              const ParamSet& finetuned) {
  HandShapeModel model(cfg.encoder, finetuned);
  auto data = static_images(c, sentences, false);
  std::vector<int> preds(data.size());
  parallel_for(data.size(), [&](std::size_t i) { preds[i] = model.predict(data.images[i]); });
  EvalReport r;
  r.task = "handshape_static";
  r.set_classification(preds, data.labels, kHandShapeClasses);
  return r;
}

inline EvalReport eval_shape_sequences(const RunConfig& cfg, const Corpus& c, const std::vector<std::size_t>& sentences,
                                       const ParamSet& finetuned, const ParamSet& sequence_params) {
  Encoder enc(cfg.encoder, finetuned);
  SequenceModel model(cfg.sequence, sequence_params);
  auto data = shape_sequence_examples(c, sentences, enc, cfg.shape_targets);
  std::vector<std::vector<int>> hyps(data.size());
  parallel_for(data.size(), [&](std::size_t i) { hyps[i] = model.decode(data[i].features); });
  auto names = [](const std::vector<int>& v) {
    std::vector<std::string> out;
    for (int k : v) out.push_back("S" + std::to_string(k - 1));
    return out;
  };
  std::vector<std::string> ids;
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> pairs;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ids.push_back(c.sentences[sentences[i]].id);
    pairs.emplace_back(names(data[i].target), names(hyps[i]));
  }
  EvalReport r;
  r.task = "handshape_sequence";
  r.set_sequences(std::move(ids), std::move(pairs));
  return r;
}

inline EvalReport eval_phonemes(const RunConfig& cfg, const Corpus& c, const std::vector<std::size_t>& sentences,
                                const ParamSet& fusion_params) {
  FusionModel model(cfg.fusion_config(), cfg.encoder, c.alphabet, fusion_params);
  return recognize_all(select_sentences(c, sentences), model);
}

// ---------------------------------------------------------------------------
// Cross-validation

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

struct FoldResult {
  std::vector<std::size_t> test_sentences;
  double static_accuracy = 0.0;
  ErrorRate shape;
  std::optional<ErrorRate> phoneme;
};

/// k-fold protocol over sentences; every fold trains all stages from scratch
/// on the other folds. `on_fold` reports progress.
inline std::vector<FoldResult> cross_validate(const RunConfig& cfg, const Corpus& c, bool with_fusion,
                                              const std::function<void(std::size_t, const FoldResult&)>& on_fold = {}) {
  check_corpus_language(cfg, c);
  auto folds = sentence_folds(c, cfg.xval_folds, cfg.seed);
  std::vector<FoldResult> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const std::uint64_t seed = derive_seed(cfg.seed, detail::kFoldStream, f + 1);
    SentenceSplit split{fold_complement(folds, f), folds[f]};
    auto pre = run_pretrain(cfg, c, split, seed);
    auto fine = run_finetune(cfg, c, split, pre.params, seed);
    auto seq = run_train_sequence(cfg, c, split, fine.params, seed);
    FoldResult r;
    r.test_sentences = split.test;
    r.static_accuracy = *eval_static(cfg, c, split.test, fine.params).accuracy;
    r.shape = eval_shape_sequences(cfg, c, split.test, fine.params, seq.params).micro;
    if (with_fusion) {
      auto fus = run_train_fusion(cfg, c, split, fine.params, seed);
      r.phoneme = eval_phonemes(cfg, c, split.test, fus.params).micro;
    }
    if (on_fold) on_fold(f, r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cuedseq
