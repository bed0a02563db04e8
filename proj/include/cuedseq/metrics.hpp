#pragma once

// Classification accuracy, Levenshtein edit counts and phone error rate.

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cuedseq/core/csv.hpp"

namespace cuedseq {

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument("accuracy: predictions and labels must be nonempty and of equal length");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

struct EditCounts {
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t substitutions = 0;
  std::size_t ref_length = 0;

  std::size_t errors() const noexcept { return insertions + deletions + substitutions; }
  bool operator==(const EditCounts&) const = default;
};

/// Unit-cost Levenshtein alignment of hyp against ref. When several minimal
/// alignments exist the backtrace prefers a diagonal step, then a deletion,
/// then an insertion.
template <class Seq>
EditCounts edit_ops(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0u : 1u), at(i - 1, j) + 1, at(i, j - 1) + 1});

  EditCounts c;
  c.ref_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0u : 1u)) {
        c.substitutions += !same;
        --i, --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

struct ErrorRate {
  double te = 0.0;
  double tc = 1.0;
};

/// Corpus-level rate: total edits over total reference length.
template <class Seq>
ErrorRate phone_error_rate(const std::vector<std::pair<Seq, Seq>>& pairs) {
  std::size_t errors = 0, total = 0;
  for (const auto& [ref, hyp] : pairs) {
    errors += edit_ops(ref, hyp).errors();
    total += ref.size();
  }
  if (total == 0) throw std::invalid_argument("phone_error_rate: total reference length is zero");
  ErrorRate r;
  r.te = static_cast<double>(errors) / static_cast<double>(total);
  r.tc = 1.0 - r.te;
  return r;
}

/// Mean of the per-pair rates. Pairs with an empty reference are rejected.
template <class Seq>
ErrorRate phone_error_rate_macro(const std::vector<std::pair<Seq, Seq>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("phone_error_rate_macro: no pairs");
  double sum = 0.0;
  for (const auto& [ref, hyp] : pairs) {
    if (ref.empty()) throw std::invalid_argument("phone_error_rate_macro: empty reference");
    sum += static_cast<double>(edit_ops(ref, hyp).errors()) / static_cast<double>(ref.size());
  }
  ErrorRate r;
  r.te = sum / static_cast<double>(pairs.size());
  r.tc = 1.0 - r.te;
  return r;
}

/// Per-sample and aggregate metrics of one evaluation run.
struct EvalReport {
  struct Sample {
    std::string id;
    std::vector<std::string> ref;
    std::vector<std::string> hyp;
    EditCounts counts;
  };

  std::string task;
  std::vector<Sample> samples;
  ErrorRate micro;
  ErrorRate macro;
  // classification runs only
  std::optional<double> accuracy;
  std::vector<std::vector<std::size_t>> confusion;  // [true class][predicted class]
  nlohmann::json metadata = nlohmann::json::object();

  /// Fills samples, micro and macro rates from reference / hypothesis pairs.
  void set_sequences(std::vector<std::string> ids, std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> pairs) {
    if (ids.size() != pairs.size()) throw std::invalid_argument("EvalReport: id count mismatch");
    samples.clear();
    for (std::size_t i = 0; i < pairs.size(); ++i)
      samples.push_back({ids[i], pairs[i].first, pairs[i].second, edit_ops(pairs[i].first, pairs[i].second)});
    micro = phone_error_rate(pairs);
    macro = phone_error_rate_macro(pairs);
  }

  /// Fills accuracy and the confusion matrix from class predictions.
  void set_classification(const std::vector<int>& preds, const std::vector<int>& labels, std::size_t classes) {
    accuracy = cuedseq::accuracy(preds, labels);
    confusion.assign(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (labels[i] < 0 || preds[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes ||
          static_cast<std::size_t>(preds[i]) >= classes)
        throw std::invalid_argument("EvalReport: class index out of range");
      ++confusion[labels[i]][preds[i]];
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["metadata"] = metadata;
    if (accuracy) {
      j["accuracy"] = *accuracy;
      j["confusion"] = confusion;
    }
    if (!samples.empty()) {
      j["Te"] = micro.te;
      j["Tc"] = micro.tc;
      j["Te_macro"] = macro.te;
      j["Tc_macro"] = macro.tc;
      auto& arr = j["samples"] = nlohmann::json::array();
      for (const auto& s : samples) {
        const double te = s.counts.ref_length ? static_cast<double>(s.counts.errors()) / s.counts.ref_length : 0.0;
        arr.push_back({{"id", s.id},
                       {"ref", s.ref},
                       {"hyp", s.hyp},
                       {"insertions", s.counts.insertions},
                       {"deletions", s.counts.deletions},
                       {"substitutions", s.counts.substitutions},
                       {"N", s.counts.ref_length},
                       {"Te", te},
                       {"Tc", 1.0 - te}});
      }
    }
    return j;
  }

  /// One line per sample: id,N,insertions,deletions,substitutions,Te,Tc.
  std::string to_csv() const {
    std::ostringstream os;
    os << "id,N,insertions,deletions,substitutions,Te,Tc\n";
    for (const auto& s : samples) {
      const double te = s.counts.ref_length ? static_cast<double>(s.counts.errors()) / s.counts.ref_length : 0.0;
      os << s.id << ',' << s.counts.ref_length << ',' << s.counts.insertions << ',' << s.counts.deletions << ','
         << s.counts.substitutions << ',' << format_double(te) << ',' << format_double(1.0 - te) << '\n';
    }
    return os.str();
  }
};

}  // namespace cuedseq
