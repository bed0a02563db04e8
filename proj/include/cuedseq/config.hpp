#pragma once

// Run configuration: every stage's settings in one JSON document, with strict
// field checking and dot-path overrides.

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cuedseq/augment.hpp"
#include "cuedseq/contrastive.hpp"
#include "cuedseq/core/errors.hpp"
#include "cuedseq/core/params.hpp"
#include "cuedseq/corpus.hpp"
#include "cuedseq/encoder.hpp"
#include "cuedseq/finetune.hpp"
#include "cuedseq/fusion.hpp"
#include "cuedseq/sequence.hpp"

namespace cuedseq {

/// Invalid configuration content; `field()` is the dot path at fault.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::invalid_argument(field.empty() ? what : "config field '" + field + "': " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

namespace detail {

// One description of a struct's fields serves both directions: writing to
// JSON, and reading from it with type checks and unknown-key detection.
class Binder {
 public:
  explicit Binder(nlohmann::json& out) : out_(&out) {}
  Binder(const nlohmann::json& in, std::string path, bool strict) : in_(&in), path_(std::move(path)), strict_(strict) {
    if (!in.is_object()) throw ConfigError(path_, "expected an object");
  }

  bool reading() const noexcept { return in_ != nullptr; }

  template <class T>
  void operator()(const char* key, T& v) {
    if (!reading()) {
      write(key, v);
      return;
    }
    seen_.insert(key);
    auto it = in_->find(key);
    if (it == in_->end()) return;
    read(*it, join(key), v);
  }

  template <class F>
  void object(const char* key, F&& fn) {
    if (!reading()) {
      nlohmann::json sub = nlohmann::json::object();
      Binder b(sub);
      fn(b);
      (*out_)[key] = std::move(sub);
      return;
    }
    seen_.insert(key);
    auto it = in_->find(key);
    if (it == in_->end()) return;
    Binder b(*it, join(key), strict_);
    fn(b);
    b.finish();
  }

  void finish() const {
    if (!reading() || !strict_) return;
    for (const auto& [k, _] : in_->items())
      if (!seen_.count(k)) throw ConfigError(join(k), "unknown field");
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void write(const char* key, const T& v) {
    if constexpr (std::is_same_v<T, std::optional<std::string>>)
      (*out_)[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    else
      (*out_)[key] = v;
  }

  static void read(const nlohmann::json& j, const std::string& path, bool& v) {
    if (!j.is_boolean()) throw ConfigError(path, "expected true or false");
    v = j.get<bool>();
  }
  static void read(const nlohmann::json& j, const std::string& path, std::size_t& v) {
    if (!j.is_number_unsigned()) throw ConfigError(path, "expected a non-negative integer");
    v = j.get<std::size_t>();
  }
  static void read(const nlohmann::json& j, const std::string& path, double& v) {
    if (!j.is_number()) throw ConfigError(path, "expected a number");
    v = j.get<double>();
  }
  static void read(const nlohmann::json& j, const std::string& path, std::string& v) {
    if (!j.is_string()) throw ConfigError(path, "expected a string");
    v = j.get<std::string>();
  }
  static void read(const nlohmann::json& j, const std::string& path, std::optional<std::string>& v) {
    if (j.is_null()) {
      v.reset();
      return;
    }
    if (!j.is_string()) throw ConfigError(path, "expected a string or null");
    v = j.get<std::string>();
  }
  static void read(const nlohmann::json& j, const std::string& path, std::pair<double, double>& v) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
      throw ConfigError(path, "expected [min, max]");
    v = {j[0].get<double>(), j[1].get<double>()};
  }
  static void read(const nlohmann::json& j, const std::string& path, std::vector<std::size_t>& v) {
    if (!j.is_array()) throw ConfigError(path, "expected an array of non-negative integers");
    v.clear();
    for (const auto& e : j) {
      if (!e.is_number_unsigned()) throw ConfigError(path, "expected an array of non-negative integers");
      v.push_back(e.get<std::size_t>());
    }
  }

  nlohmann::json* out_ = nullptr;
  const nlohmann::json* in_ = nullptr;
  std::string path_;
  bool strict_ = true;
  std::set<std::string> seen_;
};

}  // namespace detail

inline void bind(detail::Binder& b, AugmentConfig& c) {
  b("crop_scale_range", c.crop_scale_range);
  b("flip_prob", c.flip_prob);
  b("color_strength", c.color_strength);
  b("gray_prob", c.gray_prob);
  b("blur_sigma_range", c.blur_sigma_range);
  b("output_h", c.output_h);
  b("output_w", c.output_w);
}

inline void bind(detail::Binder& b, EncoderConfig& c) {
  b("input_h", c.input_h);
  b("input_w", c.input_w);
  b("stem_channels", c.stem_channels);
  b("block_channels", c.block_channels);
  b("blocks_per_stage", c.blocks_per_stage);
  b("feature_dim", c.feature_dim);
}

inline void bind(detail::Binder& b, ContrastiveConfig& c) {
  b("batch_size", c.batch_size);
  b("temperature", c.temperature);
  b("epochs", c.epochs);
  b("lr", c.lr);
  b("proj_dim", c.proj_dim);
  b("warm_start_checkpoint", c.warm_start_checkpoint);
  b("warm_start_epochs", c.warm_start_epochs);
}

inline void bind(detail::Binder& b, FinetuneConfig& c) {
  b("labeled_fraction", c.labeled_fraction);
  b("epochs", c.epochs);
  b("lr", c.lr);
  b("freeze_encoder", c.freeze_encoder);
  b("batch_size", c.batch_size);
  b("hidden_dim", c.hidden_dim);
}

inline void bind(detail::Binder& b, SequenceConfig& c, bool with_vocab = true) {
  b("d_in", c.d_in);
  b("d_model", c.d_model);
  b("bilstm_layers", c.bilstm_layers);
  b("san_layers", c.san_layers);
  b("heads", c.heads);
  if (with_vocab) b("vocab", c.vocab);
  b("lr", c.lr);
  b("batch_size", c.batch_size);
  b("epochs", c.epochs);
  b("use_san", c.use_san);
  b("use_positional_encoding", c.use_positional_encoding);
}

inline void bind(detail::Binder& b, LipCnnConfig& c) {
  b("roi", c.roi);
  b("layers", c.layers);
  b("filters", c.filters);
  b("kernel", c.kernel);
  b("stride", c.stride);
  b("padding", c.padding);
  b("d_lip", c.d_lip);
}

inline void bind(detail::Binder& b, NoiseConfig& c) {
  b("boundary_jitter", c.boundary_jitter);
  b("flip_prob", c.flip_prob);
  b("asynchrony", c.asynchrony);
}

inline void bind(detail::Binder& b, SynthConfig& c) {
  b("frame_h", c.frame_h);
  b("frame_w", c.frame_w);
  b("hand_roi", c.hand_roi);
  b("lip_roi", c.lip_roi);
  b("hand_patch", c.hand_patch);
  b("transition_fraction", c.transition_fraction);
  b("max_rotation", c.max_rotation);
  b("min_scale", c.min_scale);
  b("max_scale", c.max_scale);
  b("max_translation", c.max_translation);
  b("occlusion_prob", c.occlusion_prob);
  b("max_occlusion", c.max_occlusion);
  b("blur_prob", c.blur_prob);
  b("max_blur", c.max_blur);
  b("anchor_jitter", c.anchor_jitter);
  b("keep_frames", c.keep_frames);
}

inline void bind(detail::Binder& b, CorpusConfig& c) {
  b("speakers", c.speakers);
  b("sentences_per_speaker", c.sentences_per_speaker);
  b("min_phonemes", c.min_phonemes);
  b("max_phonemes", c.max_phonemes);
  b("min_frames", c.min_frames);
  b("max_frames", c.max_frames);
  b("static_per_sentence", c.static_per_sentence);
  b.object("synth", [&](detail::Binder& s) { bind(s, c.synth); });
}

struct PathsConfig {
  std::string corpus = "run/corpus";
  std::string checkpoints = "run/checkpoints";
  std::string reports = "run/reports";
};

/// Which labels the hand-shape sequence model learns and is scored on.
struct ShapeTargetsConfig {
  bool merge_repeats = true;
  bool noisy = false;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::string language = "fr";
  PathsConfig paths;
  CorpusConfig corpus;
  NoiseConfig noise;
  AugmentConfig augment;
  EncoderConfig encoder;
  ContrastiveConfig contrastive;
  FinetuneConfig finetune;
  SequenceConfig sequence;
  ShapeTargetsConfig shape_targets;
  LipCnnConfig lip_cnn;
  FusionConfig fusion;  // lip and vocab come from lip_cnn and the alphabet
  std::size_t xval_folds = 5;

  /// Corpus settings with the language and noise preset applied.
  CorpusConfig corpus_config() const {
    CorpusConfig c = corpus;
    c.language = language;
    c.synth.language = language;
    c.noise = noise;
    return c;
  }

  FusionConfig fusion_config() const {
    FusionConfig f = fusion;
    f.lip = lip_cnn;
    return f;
  }

  /// Sub-config invariants plus the sizes that must agree across stages.
  void validate() const {
    auto check = [](const char* field, auto&& fn) {
      try {
        fn();
      } catch (const ConfigError&) {
        throw;
      } catch (const std::invalid_argument& e) {
        throw ConfigError(field, e.what());
      }
    };
    check("language", [&] { language_traits(language); });
    check("corpus", [&] { corpus_config().validate(); });
    check("noise", [&] { noise.validate(); });
    check("augment", [&] { augment.validate(); });
    check("encoder", [&] { encoder.validate(); });
    check("contrastive", [&] { contrastive.validate(); });
    check("finetune", [&] { finetune.validate(); });
    check("sequence", [&] { sequence.validate(); });
    check("lip_cnn", [&] { lip_cnn.validate(); });
    check("fusion", [&] {
      auto f = fusion_config();
      f.seq.vocab = 2;  // replaced by the alphabet size at build time
      f.validate();
    });
    const auto& s = corpus.synth;
    if (encoder.input_h != s.hand_roi || encoder.input_w != s.hand_roi)
      throw ConfigError("encoder.input_h", "encoder input must match corpus.synth.hand_roi (" +
                                               std::to_string(s.hand_roi) + ")");
    if (augment.output_h != encoder.input_h || augment.output_w != encoder.input_w)
      throw ConfigError("augment.output_h", "augmentation output must match the encoder input");
    if (sequence.d_in != encoder.feature_dim)
      throw ConfigError("sequence.d_in", "must equal encoder.feature_dim (" + std::to_string(encoder.feature_dim) + ")");
    if (sequence.vocab != kHandShapeClasses + 1)
      throw ConfigError("sequence.vocab", "hand-shape sequences need " + std::to_string(kHandShapeClasses + 1) +
                                              " outputs (8 shapes and the blank)");
    if (lip_cnn.roi != s.lip_roi)
      throw ConfigError("lip_cnn.roi", "must match corpus.synth.lip_roi (" + std::to_string(s.lip_roi) + ")");
    if (xval_folds < 2) throw ConfigError("xval_folds", "must be >= 2");
  }
};

inline void bind(detail::Binder& b, RunConfig& c) {
  std::size_t seed = c.seed;
  b("seed", seed);
  c.seed = seed;
  b("language", c.language);
  b.object("paths", [&](detail::Binder& p) {
    p("corpus", c.paths.corpus);
    p("checkpoints", c.paths.checkpoints);
    p("reports", c.paths.reports);
  });
  b.object("corpus", [&](detail::Binder& s) { bind(s, c.corpus); });
  b.object("noise", [&](detail::Binder& s) { bind(s, c.noise); });
  b.object("augment", [&](detail::Binder& s) { bind(s, c.augment); });
  b.object("encoder", [&](detail::Binder& s) { bind(s, c.encoder); });
  b.object("contrastive", [&](detail::Binder& s) { bind(s, c.contrastive); });
  b.object("finetune", [&](detail::Binder& s) { bind(s, c.finetune); });
  b.object("sequence", [&](detail::Binder& s) { bind(s, c.sequence); });
  b.object("shape_targets", [&](detail::Binder& s) {
    s("merge_repeats", c.shape_targets.merge_repeats);
    s("noisy", c.shape_targets.noisy);
  });
  b.object("lip_cnn", [&](detail::Binder& s) { bind(s, c.lip_cnn); });
  b.object("fusion", [&](detail::Binder& s) {
    s("pos_hidden", c.fusion.pos_hidden);
    s("d_pos", c.fusion.d_pos);
    s("freeze_encoder", c.fusion.freeze_encoder);
    s("noisy_targets", c.fusion.noisy_targets);
    s.object("sequence", [&](detail::Binder& q) { bind(q, c.fusion.seq, false); });
  });
  b("xval_folds", c.xval_folds);
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  detail::Binder b(j);
  bind(b, const_cast<RunConfig&>(c));
  return j;
}

/// Reads a config over the defaults; absent fields keep their default. With
/// `strict`, a field the schema does not know is an error naming its path.
inline RunConfig run_config_from_json(const nlohmann::json& j, bool strict = true) {
  RunConfig c;
  detail::Binder b(j, "", strict);
  bind(b, c);
  b.finish();
  return c;
}

/// Splits "a.b.c=value" and writes value (JSON if it parses, else a string)
/// at that path. In strict mode the path must already exist.
inline void apply_override(nlohmann::json& j, const std::string& assignment, bool strict = true) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("", "override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError(path, "empty path segment");
    if (!node->is_object()) throw ConfigError(path, "'" + key + "' is not inside an object");
    if (strict && !node->contains(key)) throw ConfigError(path.substr(0, dot), "unknown field");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

/// Defaults, then the file (if any), then the overrides; validated.
inline RunConfig resolve_config(const std::optional<std::string>& path, const std::vector<std::string>& overrides,
                                bool strict = true) {
  nlohmann::json j = to_json(RunConfig{});
  if (path) {
    const std::string text = detail::read_file_bytes(*path);
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("", *path + ": " + e.what());
    }
    // validate the file on its own so unknown fields name the file's path
    run_config_from_json(file, strict);
    j.merge_patch(file);
  }
  for (const auto& o : overrides) apply_override(j, o, strict);
  RunConfig c = run_config_from_json(j, strict);
  c.validate();
  return c;
}

}  // namespace cuedseq
