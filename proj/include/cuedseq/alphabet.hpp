#pragma once

// Phoneme inventories and their (hand shape, hand position, viseme) coding.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cuedseq/core/errors.hpp"

namespace cuedseq {

struct PhonemeCode {
  int shape = 0;
  int position = 0;
  int viseme = 0;
  bool operator==(const PhonemeCode&) const = default;
};

/// Class counts of one cueing system.
struct LanguageTraits {
  int shapes;
  int positions;
  int visemes;
};

inline LanguageTraits language_traits(const std::string& language) {
  if (language == "fr") return {8, 5, 8};
  if (language == "en") return {8, 4, 11};
  throw std::invalid_argument("unknown language '" + language + "' (expected fr or en)");
}

class PhonemeAlphabet {
 public:
  PhonemeAlphabet() = default;

  PhonemeAlphabet(std::string language, std::vector<std::string> phonemes, std::map<std::string, PhonemeCode> coding)
      : language_(std::move(language)), phonemes_(std::move(phonemes)), coding_(std::move(coding)) {
    validate();
  }

  /// 33 French or 41 British English symbols, coded round-robin: phoneme i
  /// (0-based) gets shape i % 8, position i % P and viseme i % V.
  static PhonemeAlphabet synthetic(const std::string& language) {
    static const std::vector<std::string> fr{"a", "e", "E", "i", "o", "O", "u", "y", "2", "9", "@",
                                             "a~", "o~", "e~", "9~", "p", "b", "t", "d", "k", "g", "f",
                                             "v", "s", "z", "S", "Z", "m", "n", "J", "N", "l", "R"};
    static const std::vector<std::string> en{"i:", "I", "e", "ae", "A:", "Q", "O:", "U", "u:", "V", "3:",
                                             "@", "eI", "aI", "OI", "@U", "aU", "I@", "e@", "U@", "p", "b",
                                             "t", "d", "k", "g", "tS", "dZ", "f", "v", "T", "D", "s",
                                             "z", "S", "Z", "h", "m", "n", "N", "l"};
    const auto tr = language_traits(language);
    const auto& symbols = language == "fr" ? fr : en;
    std::map<std::string, PhonemeCode> coding;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      const int k = static_cast<int>(i);
      coding[symbols[i]] = {k % tr.shapes, k % tr.positions, k % tr.visemes};
    }
    return PhonemeAlphabet(language, symbols, std::move(coding));
  }

  const std::string& language() const noexcept { return language_; }
  std::size_t size() const noexcept { return phonemes_.size(); }
  const std::vector<std::string>& phonemes() const noexcept { return phonemes_; }

  /// 1-based index; 0 is the CTC blank.
  int index_of(const std::string& symbol) const {
    for (std::size_t i = 0; i < phonemes_.size(); ++i)
      if (phonemes_[i] == symbol) return static_cast<int>(i) + 1;
    throw std::invalid_argument("phoneme '" + symbol + "' is not in the " + language_ + " alphabet");
  }

  const std::string& symbol(int index) const {
    if (index < 1 || static_cast<std::size_t>(index) > phonemes_.size())
      throw std::invalid_argument("phoneme index " + std::to_string(index) + " out of range");
    return phonemes_[static_cast<std::size_t>(index) - 1];
  }

  const PhonemeCode& code(const std::string& symbol) const {
    auto it = coding_.find(symbol);
    if (it == coding_.end()) throw std::invalid_argument("phoneme '" + symbol + "' has no coding");
    return it->second;
  }
  const PhonemeCode& code(int index) const { return code(symbol(index)); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["language"] = language_;
    j["phonemes"] = phonemes_;
    auto& c = j["coding"] = nlohmann::json::object();
    for (const auto& [s, code] : coding_)
      c[s] = {{"shape", code.shape}, {"position", code.position}, {"viseme", code.viseme}};
    return j;
  }

  static PhonemeAlphabet from_json(const nlohmann::json& j, const std::string& source = "<alphabet>") {
    try {
      std::map<std::string, PhonemeCode> coding;
      for (const auto& [s, c] : j.at("coding").items())
        coding[s] = {c.at("shape").get<int>(), c.at("position").get<int>(), c.at("viseme").get<int>()};
      return PhonemeAlphabet(j.at("language").get<std::string>(), j.at("phonemes").get<std::vector<std::string>>(),
                             std::move(coding));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, e.what());
    }
  }

  bool operator==(const PhonemeAlphabet&) const = default;

 private:
  void validate() const {
    const auto tr = language_traits(language_);
    if (phonemes_.empty()) throw std::invalid_argument("alphabet: no phonemes");
    for (std::size_t i = 0; i < phonemes_.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j)
        if (phonemes_[i] == phonemes_[j]) throw std::invalid_argument("alphabet: duplicate symbol '" + phonemes_[i] + "'");
      auto it = coding_.find(phonemes_[i]);
      if (it == coding_.end()) throw std::invalid_argument("alphabet: no coding for '" + phonemes_[i] + "'");
      const auto& c = it->second;
      if (c.shape < 0 || c.shape >= tr.shapes || c.position < 0 || c.position >= tr.positions || c.viseme < 0 ||
          c.viseme >= tr.visemes)
        throw std::invalid_argument("alphabet: coding of '" + phonemes_[i] + "' out of range for " + language_);
    }
    if (coding_.size() != phonemes_.size()) throw std::invalid_argument("alphabet: coding lists unknown symbols");
  }

  std::string language_;
  std::vector<std::string> phonemes_;
  std::map<std::string, PhonemeCode> coding_;
};

}  // namespace cuedseq
