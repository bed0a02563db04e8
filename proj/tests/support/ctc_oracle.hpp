#pragma once

// Exhaustive CTC reference: sums the probability of every length-T path whose
// collapsed form (merge repeats, drop blank 0) equals the target.

#include <cmath>
#include <vector>

#include "cuedseq/core/tensor.hpp"

namespace cuedseq::testing {

inline std::vector<int> ctc_collapse(const std::vector<int>& path) {
  std::vector<int> out;
  int prev = -1;
  for (int k : path) {
    if (k != prev && k != 0) out.push_back(k);
    prev = k;
  }
  return out;
}

/// -log of the summed path probability under per-frame softmax of `logits`.
inline double ctc_brute_force(const Tensor& logits, const std::vector<int>& target) {
  const std::size_t T = logits.dim(0), V = logits.dim(1);
  std::vector<double> probs(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    double z = 0.0;
    for (std::size_t k = 0; k < V; ++k) z += std::exp(logits[t * V + k]);
    for (std::size_t k = 0; k < V; ++k) probs[t * V + k] = std::exp(logits[t * V + k]) / z;
  }
  std::vector<int> path(T, 0);
  double total = 0.0;
  while (true) {
    if (ctc_collapse(path) == target) {
      double p = 1.0;
      for (std::size_t t = 0; t < T; ++t) p *= probs[t * V + path[t]];
      total += p;
    }
    std::size_t pos = 0;
    while (pos < T && ++path[pos] == static_cast<int>(V)) path[pos++] = 0;
    if (pos == T) break;
  }
  return -std::log(total);
}

}  // namespace cuedseq::testing
