#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cuedseq/core/params.hpp"

namespace cuedseq {

/// Progress hook for training loops: 1-based epoch and the epoch's headline
/// value (loss or accuracy).
using EpochCallback = std::function<void(std::size_t epoch, double value)>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates per parameter name plus the shared step
/// counter.
struct AdamState {
  AdamConfig config;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

/// One bias-corrected Adam update of every tensor in `params` from its
/// accumulated gradient. A parameter that received no gradient is updated as
/// if its gradient were zero.
inline void adam_step(ParamSet& params, AdamState& state) {
  for (auto& [name, p] : params) {
    if (p.has_grad() && p.grad().size() != p.numel())
      throw std::invalid_argument("adam_step: gradient of '" + name + "' has the wrong size");
    auto m_it = state.first_moment.find(name);
    if (m_it != state.first_moment.end() && m_it->second.size() != p.numel())
      throw std::invalid_argument("adam_step: moment shape mismatch for '" + name + "'");
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    auto w = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace cuedseq
