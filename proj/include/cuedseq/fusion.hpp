#pragma once

// Three-stream phoneme recognizer: a small lip CNN, a hand-position MLP and
// the hand-shape encoder run per frame, their features are concatenated and
// projected, and the sequential encoder with a phoneme vocabulary reads the
// result.

#include <numeric>
#include <string>
#include <vector>

#include "cuedseq/alphabet.hpp"
#include "cuedseq/core/adam.hpp"
#include "cuedseq/core/parallel.hpp"
#include "cuedseq/corpus.hpp"
#include "cuedseq/encoder.hpp"
#include "cuedseq/metrics.hpp"
#include "cuedseq/sequence.hpp"

namespace cuedseq {

struct LipCnnConfig {
  std::size_t roi = 48;
  std::size_t layers = 2;
  std::size_t filters = 8;
  std::size_t kernel = 7;
  std::size_t stride = 3;
  std::size_t padding = 3;
  std::size_t d_lip = 32;

  void validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("lip cnn config: " + what); };
    if (layers != 2) bad("exactly two conv layers");
    if (filters != 8) bad("filters must be 8");
    if (kernel != 7) bad("kernel must be 7");
    if (stride == 0) bad("stride must be positive");
    if (roi == 0 || d_lip == 0) bad("sizes must be positive");
    if (roi + 2 * padding < kernel) bad("roi too small for the kernel");
    if (conv_out(roi) + 2 * padding < kernel) bad("roi too small for two conv layers");
  }

  std::size_t conv_out(std::size_t n) const { return (n + 2 * padding - kernel) / stride + 1; }
  /// Side of the second feature map.
  std::size_t map_size() const { return conv_out(conv_out(roi)); }
  std::size_t flat_size() const { return filters * map_size() * map_size(); }

  bool operator==(const LipCnnConfig&) const = default;
};

struct LipCnnParams {
  Tensor conv1_w;  // [8, 3, 7, 7]
  Tensor conv1_b;  // [8]
  Tensor conv2_w;  // [8, 8, 7, 7]
  Tensor conv2_b;
  Tensor out_w;  // [flat, d_lip]
  Tensor out_b;
};

struct PosMlpParams {
  Tensor w1;  // [2, hidden]
  Tensor b1;
  Tensor w2;  // [hidden, d_pos]
  Tensor b2;
};

/// Lip features [T, d_lip] for ROIs [T, 3, roi, roi].
inline Tensor lip_cnn(const Tensor& lip_seq, const LipCnnParams& p, const LipCnnConfig& cfg) {
  cfg.validate();
  if (lip_seq.rank() != 4 || lip_seq.dim(1) != 3 || lip_seq.dim(2) != cfg.roi || lip_seq.dim(3) != cfg.roi)
    throw std::invalid_argument("lip_cnn: expected [T, 3, " + std::to_string(cfg.roi) + ", " +
                                std::to_string(cfg.roi) + "], got " + shape_str(lip_seq.shape()));
  const Tensor ones = Tensor::full({cfg.filters}, 1.0);
  const std::size_t T = lip_seq.dim(0);
  std::vector<Tensor> rows(T);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor h = relu(channel_affine(conv2d(frame_of(lip_seq, t), p.conv1_w, cfg.stride, cfg.padding), ones, p.conv1_b));
    h = relu(channel_affine(conv2d(h, p.conv2_w, cfg.stride, cfg.padding), ones, p.conv2_b));
    rows[t] = reshape(h, {h.numel()});
  }
  return linear(stack_rows(rows), p.out_w, p.out_b);
}

/// Position features [T, d_pos] for coordinates [T, 2].
inline Tensor hand_pos_mlp(const Tensor& coords, const PosMlpParams& p) {
  if (coords.rank() != 2 || coords.dim(1) != 2)
    throw std::invalid_argument("hand_pos_mlp: expected [T, 2], got " + shape_str(coords.shape()));
  for (double v : coords.data())
    if (!std::isfinite(v)) throw std::invalid_argument("hand_pos_mlp: non-finite coordinate");
  return linear(relu(linear(coords, p.w1, p.b1)), p.w2, p.b2);
}

/// Concatenates (lip, pos, shape) per frame and maps the result to [T, d_in].
inline Tensor fuse(const Tensor& lip, const Tensor& pos, const Tensor& shape, const Tensor& w, const Tensor& b) {
  for (const Tensor* s : {&lip, &pos, &shape}) detail::require_rank(*s, 2, "fuse");
  if (lip.dim(0) != pos.dim(0) || lip.dim(0) != shape.dim(0))
    throw std::invalid_argument("fuse: stream lengths differ (lip " + std::to_string(lip.dim(0)) + ", pos " +
                                std::to_string(pos.dim(0)) + ", shape " + std::to_string(shape.dim(0)) + ")");
  return linear(concat_cols({lip, pos, shape}), w, b);
}

struct FusionConfig {
  LipCnnConfig lip;
  std::size_t pos_hidden = 16;
  std::size_t d_pos = 8;
  // vocab is replaced by alphabet size + 1; d_in is the fused width
  SequenceConfig seq;
  bool freeze_encoder = true;
  bool noisy_targets = false;

  void validate() const {
    lip.validate();
    if (pos_hidden == 0 || d_pos == 0) throw std::invalid_argument("fusion config: sizes must be positive");
    seq.validate();
  }
};

/// Encoder (encoder.*) plus the fusion streams and sequence model (fusion.*).
class FusionModel {
 public:
  static constexpr const char* kPrefix = "fusion.";

  FusionModel(FusionConfig cfg, EncoderConfig enc_cfg, PhonemeAlphabet alphabet, const ParamSet& encoder_params,
              Rng& rng)
      : FusionModel(std::move(cfg), std::move(enc_cfg), std::move(alphabet), encoder_params, &rng) {}

  /// Restores a trained model; `params` must hold encoder.* and fusion.*.
  FusionModel(FusionConfig cfg, EncoderConfig enc_cfg, PhonemeAlphabet alphabet, const ParamSet& params)
      : FusionModel(std::move(cfg), std::move(enc_cfg), std::move(alphabet), params, nullptr) {}

  const FusionConfig& config() const noexcept { return cfg_; }
  const PhonemeAlphabet& alphabet() const noexcept { return alphabet_; }
  const Encoder& encoder() const noexcept { return encoder_; }
  const SequenceModel& sequence() const noexcept { return seq_; }

  /// Every parameter, encoder first.
  ParamSet params() const {
    ParamSet all = encoder_.params();
    all.merge(streams_);
    all.merge(seq_.params());
    return all;
  }

  /// What training updates: the fusion parameters, plus the encoder if unfrozen.
  ParamSet trainable() const {
    ParamSet t = streams_;
    t.merge(seq_.params());
    if (!cfg_.freeze_encoder) t.merge(encoder_.params());
    return t;
  }

  LipCnnParams lip_params() const {
    return {at("lip.conv1.w"), at("lip.conv1.b"), at("lip.conv2.w"), at("lip.conv2.b"), at("lip.out.w"),
            at("lip.out.b")};
  }
  PosMlpParams pos_params() const { return {at("pos.w1"), at("pos.b1"), at("pos.w2"), at("pos.b2")}; }

  /// Per-frame encoder output [T, D]. Nothing is recorded when frozen.
  Tensor shape_features(const Tensor& hand_rois) const {
    if (hand_rois.rank() != 4) throw std::invalid_argument("shape_features: expected [T, 3, h, w]");
    const std::size_t T = hand_rois.dim(0);
    std::vector<Tensor> frames(T);
    for (std::size_t t = 0; t < T; ++t) frames[t] = frame_of(hand_rois, t);
    if (!cfg_.freeze_encoder && Tape::active() != nullptr) return encoder_.encode_batch(frames);
    auto guard = Tape::suspend();
    return encoder_.encode_batch(frames);
  }

  /// Fused frame features [T, d_in] given precomputed shape features.
  Tensor fused(const Tensor& lip_rois, const Tensor& coords, const Tensor& shape) const {
    return fuse(lip_cnn(lip_rois, lip_params(), cfg_.lip), hand_pos_mlp(coords, pos_params()), shape,
                at("proj.w"), at("proj.b"));
  }

  Tensor logits(const SequenceSample& s, const Tensor& shape) const {
    return seq_.logits(fused(s.lip_rois, s.hand_coords, shape));
  }
  Tensor logits(const SequenceSample& s) const { return logits(s, shape_features(s.hand_rois)); }

  /// Greedy CTC decode as 1-based phoneme indices.
  std::vector<int> decode(const SequenceSample& s) const {
    auto guard = Tape::suspend();
    return ctc_greedy_decode(logits(s));
  }

  std::vector<std::string> symbols(const std::vector<int>& idx) const {
    std::vector<std::string> out;
    for (int k : idx) out.push_back(alphabet_.symbol(k));
    return out;
  }

 private:
  FusionModel(FusionConfig cfg, EncoderConfig enc_cfg, PhonemeAlphabet alphabet, const ParamSet& params, Rng* rng)
      : cfg_(prepare(std::move(cfg), alphabet, enc_cfg)),
        alphabet_(std::move(alphabet)),
        encoder_(std::move(enc_cfg), params),
        seq_(rng ? SequenceModel(cfg_.seq, *rng, std::string(kPrefix) + "seq.")
                 : SequenceModel(cfg_.seq, params, std::string(kPrefix) + "seq.")) {
    for (const auto& [name, shape] : stream_shapes()) {
      if (rng) {
        const bool bias = shape.size() == 1;
        const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
        streams_.add(name, bias ? Tensor::zeros(shape) : uniform_fan_in(shape, fan_in, *rng));
        continue;
      }
      if (!params.contains(name)) throw std::invalid_argument("fusion parameters lack '" + name + "'");
      const auto& t = params.at(name);
      if (t.shape() != shape)
        throw std::invalid_argument("fusion parameter '" + name + "' has shape " + shape_str(t.shape()) +
                                    ", config expects " + shape_str(shape));
      streams_.add(name, t);
    }
  }

  static FusionConfig prepare(FusionConfig cfg, const PhonemeAlphabet& alphabet, const EncoderConfig& enc) {
    cfg.seq.vocab = alphabet.size() + 1;
    cfg.validate();
    enc.validate();
    return cfg;
  }

  std::vector<std::pair<std::string, Shape>> stream_shapes() const {
    const auto& l = cfg_.lip;
    const std::string p = kPrefix;
    const std::size_t concat = l.d_lip + cfg_.d_pos + encoder_.config().feature_dim;
    return {{p + "lip.conv1.w", {l.filters, 3, l.kernel, l.kernel}},
            {p + "lip.conv1.b", {l.filters}},
            {p + "lip.conv2.w", {l.filters, l.filters, l.kernel, l.kernel}},
            {p + "lip.conv2.b", {l.filters}},
            {p + "lip.out.w", {l.flat_size(), l.d_lip}},
            {p + "lip.out.b", {l.d_lip}},
            {p + "pos.w1", {2, cfg_.pos_hidden}},
            {p + "pos.b1", {cfg_.pos_hidden}},
            {p + "pos.w2", {cfg_.pos_hidden, cfg_.d_pos}},
            {p + "pos.b2", {cfg_.d_pos}},
            {p + "proj.w", {concat, cfg_.seq.d_in}},
            {p + "proj.b", {cfg_.seq.d_in}}};
  }

  const Tensor& at(const std::string& local) const { return streams_.at(kPrefix + local); }

  FusionConfig cfg_;
  PhonemeAlphabet alphabet_;
  Encoder encoder_;
  SequenceModel seq_;
  ParamSet streams_;
};

// ---------------------------------------------------------------------------
// Training and recognition

namespace detail {
inline constexpr std::uint64_t kFusionInitStream = 0x5431;
inline constexpr std::uint64_t kFusionOrderStream = 0x5432;

inline void check_fusion_samples(const std::vector<SequenceSample>& data, const FusionModel& m, const char* what) {
  const auto& cfg = m.config();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    try {
      if (s.language != m.alphabet().language())
        throw std::invalid_argument("language '" + s.language + "' does not match the " + m.alphabet().language() +
                                    " alphabet");
      ctc_check(s.num_frames(), cfg.seq.vocab, s.phoneme_targets(cfg.noisy_targets));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string(what) + " sample " + std::to_string(i) + " (" + s.id + "): " + e.what());
    }
  }
}
}  // namespace detail

struct FusionTrainResult {
  ParamSet params;  // encoder.* and fusion.*
  std::vector<SequenceEpoch> history;
};

/// Corpus-level T_e of greedy decodes against the clean phoneme references.
inline ErrorRate evaluate_fusion(const FusionModel& model, const std::vector<SequenceSample>& data) {
  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs(data.size());
  parallel_for(data.size(), [&](std::size_t i) { pairs[i] = {data[i].phoneme_targets(), model.decode(data[i])}; });
  return phone_error_rate(pairs);
}

/// Trains the fusion streams and sequence model with CTC on phoneme targets,
/// one Adam step per sentence. A frozen encoder's features are computed once.
inline FusionTrainResult train_fusion(const std::vector<SequenceSample>& train,
                                      const std::vector<SequenceSample>& heldout, const FusionConfig& cfg,
                                      const EncoderConfig& enc_cfg, const PhonemeAlphabet& alphabet,
                                      const ParamSet& encoder_params, std::uint64_t seed,
                                      const EpochCallback& on_epoch = {}) {
  if (train.empty()) throw std::invalid_argument("train_fusion: empty training set");
  Rng init_rng(derive_seed(seed, detail::kFusionInitStream));
  FusionModel model(cfg, enc_cfg, alphabet, encoder_params.subset(Encoder::kPrefix).clone(), init_rng);
  detail::check_fusion_samples(train, model, "training");
  detail::check_fusion_samples(heldout, model, "held-out");
  const auto& mc = model.config();

  std::vector<Tensor> cached(train.size());
  if (mc.freeze_encoder)
    parallel_for(train.size(), [&](std::size_t i) { cached[i] = model.shape_features(train[i].hand_rois); });

  ParamSet trainable = model.trainable();
  AdamState adam(AdamConfig{.lr = mc.seq.lr});
  FusionTrainResult result;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < mc.seq.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(derive_seed(seed, detail::kFusionOrderStream, epoch));
    order_rng.shuffle(order);
    double total = 0.0;
    for (auto i : order) {
      trainable.zero_grad();
      Tape tape;
      Tensor loss;
      {
        auto rec = tape.record();
        const Tensor shape = mc.freeze_encoder ? cached[i] : model.shape_features(train[i].hand_rois);
        loss = ctc_forward_loss(model.logits(train[i], shape), train[i].phoneme_targets(mc.noisy_targets));
      }
      backward(loss, tape);
      adam_step(trainable, adam);
      total += loss.item();
    }
    SequenceEpoch e;
    e.mean_ctc_loss = total / static_cast<double>(train.size());
    if (!heldout.empty()) e.heldout_te = evaluate_fusion(model, heldout).te;
    result.history.push_back(e);
    if (on_epoch) on_epoch(epoch + 1, e.heldout_te);
  }
  result.params = model.params();
  result.params.zero_grad();
  return result;
}

struct Recognition {
  std::vector<std::string> hypothesis;
  std::vector<std::string> reference;
  EditCounts counts;
  double te = 0.0;
  double tc = 1.0;
};

/// Decodes one sentence and scores it against its clean phoneme reference.
inline Recognition recognize_phonemes(const SequenceSample& sample, const FusionModel& model) {
  if (sample.language != model.alphabet().language())
    throw std::invalid_argument("recognize_phonemes: sample '" + sample.id + "' is " + sample.language +
                                ", model alphabet is " + model.alphabet().language());
  Recognition r;
  r.hypothesis = model.symbols(model.decode(sample));
  r.reference = model.symbols(sample.phoneme_targets());
  r.counts = edit_ops(r.reference, r.hypothesis);
  r.te = static_cast<double>(r.counts.errors()) / static_cast<double>(r.counts.ref_length);
  r.tc = 1.0 - r.te;
  return r;
}

/// Recognizes every sentence (in parallel) and collects the report.
inline EvalReport recognize_all(const std::vector<SequenceSample>& data, const FusionModel& model) {
  std::vector<Recognition> recs(data.size());
  for (const auto& s : data)
    if (s.language != model.alphabet().language())
      throw std::invalid_argument("recognize_all: sample '" + s.id + "' is " + s.language + ", model alphabet is " +
                                  model.alphabet().language());
  parallel_for(data.size(), [&](std::size_t i) { recs[i] = recognize_phonemes(data[i], model); });
  EvalReport report;
  report.task = "phoneme";
  std::vector<std::string> ids;
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> pairs;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ids.push_back(data[i].id);
    pairs.emplace_back(recs[i].reference, recs[i].hypothesis);
  }
  report.set_sequences(std::move(ids), std::move(pairs));
  return report;
}

}  // namespace cuedseq
