#pragma once

// Sequential encoder: a bidirectional LSTM stack U followed by a stack of
// pre-norm self-attention blocks V, merged by s_output = s_p + s_q, with a
// linear CTC output layer and greedy decoding.

#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cuedseq/core/adam.hpp"
#include "cuedseq/core/ops.hpp"
#include "cuedseq/core/parallel.hpp"
#include "cuedseq/core/params.hpp"
#include "cuedseq/metrics.hpp"

namespace cuedseq {

inline constexpr int kBlank = 0;

struct SequenceConfig {
  std::size_t d_in = 128;
  std::size_t d_model = 128;
  std::size_t bilstm_layers = 2;
  std::size_t san_layers = 3;
  std::size_t heads = 16;
  std::size_t vocab = 9;  // label classes + blank
  double lr = 1e-3;
  std::size_t batch_size = 1;
  std::size_t epochs = 30;
  bool use_san = true;
  bool use_positional_encoding = false;

  void validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("sequence config: " + what); };
    if (d_in == 0 || d_model == 0 || heads == 0) bad("sizes must be positive");
    if (d_model % 2 != 0) bad("d_model must be even (two LSTM directions)");
    if (d_model % heads != 0) bad("d_model must be divisible by heads");
    if (bilstm_layers < 1) bad("bilstm_layers must be >= 1");
    if (use_san && san_layers < 1) bad("san_layers must be >= 1 when the SAN stack is enabled");
    if (vocab < 2) bad("vocab must include the blank and at least one label");
    if (batch_size != 1) bad("only batch_size 1 is supported");
    if (!(lr > 0.0)) bad("lr must be > 0");
  }
};

// ---------------------------------------------------------------------------
// LSTM

/// One direction of one layer. Gate columns are ordered [i, f, g, o].
struct LstmParams {
  Tensor wx;  // [d_in, 4H]
  Tensor wh;  // [H, 4H]
  Tensor b;   // [4H]

  std::size_t hidden() const { return wh.dim(0); }
};

/// One cell update for a single frame. Accepts rank-1 tensors or [1, n] rows
/// and returns tensors of the same rank as h_prev.
inline std::pair<Tensor, Tensor> lstm_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                                           const LstmParams& p) {
  const std::size_t hdim = p.wh.dim(0);
  if (p.wh.shape() != Shape{hdim, 4 * hdim} || p.wx.rank() != 2 || p.wx.dim(1) != 4 * hdim ||
      p.b.shape() != Shape{4 * hdim})
    throw std::invalid_argument("lstm_step: inconsistent parameter shapes");
  if (x_t.numel() != p.wx.dim(0) || h_prev.numel() != hdim || c_prev.numel() != hdim)
    throw std::invalid_argument("lstm_step: input " + shape_str(x_t.shape()) + " / state " +
                                shape_str(h_prev.shape()) + " do not match the parameters");
  const bool vec = h_prev.rank() == 1;
  auto row = [](const Tensor& t) { return t.rank() == 1 ? reshape(t, {1, t.numel()}) : t; };
  Tensor a = add_row(add(matmul(row(x_t), p.wx), matmul(row(h_prev), p.wh)), p.b);
  Tensor i = sigmoid(slice_cols(a, 0, hdim));
  Tensor f = sigmoid(slice_cols(a, hdim, hdim));
  Tensor g = tanh(slice_cols(a, 2 * hdim, hdim));
  Tensor o = sigmoid(slice_cols(a, 3 * hdim, hdim));
  Tensor c = add(mul(f, row(c_prev)), mul(i, g));
  Tensor h = mul(o, tanh(c));
  if (vec) return {reshape(h, {hdim}), reshape(c, {hdim})};
  return {h, c};
}

namespace detail {
inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace detail

/// Runs one LSTM direction over all T frames of x [T, d_in] from zero initial
/// state; with `reverse` the frames are consumed from T-1 down to 0. Row t of
/// the result is the hidden state after consuming frame t. Equivalent to
/// chaining lstm_step, fused into a single recorded operation.
inline Tensor lstm_layer(const Tensor& x, const LstmParams& p, bool reverse) {
  detail::require_rank(x, 2, "lstm_layer");
  const std::size_t T = x.dim(0), din = x.dim(1), H = p.hidden();
  if (T == 0) throw std::invalid_argument("lstm_layer: empty sequence");
  if (p.wx.shape() != Shape{din, 4 * H} || p.wh.shape() != Shape{H, 4 * H} || p.b.shape() != Shape{4 * H})
    throw std::invalid_argument("lstm_layer: parameter shapes do not match input width " + std::to_string(din));
  const std::size_t G = 4 * H;
  // per frame: activated gates [i f g o], cell state and tanh(cell)
  std::vector<double> gates(T * G), cell(T * H), tcell(T * H), hout(T * H);
  const double* X = x.data().data();
  const double* Wx = p.wx.data().data();
  const double* Wh = p.wh.data().data();
  const double* B = p.b.data().data();
  std::vector<double> a(G);
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    const bool first = s == 0;
    const std::size_t tp = reverse ? t + 1 : t - 1;
    std::copy(B, B + G, a.begin());
    for (std::size_t k = 0; k < din; ++k) {
      const double xv = X[t * din + k];
      if (xv == 0.0) continue;
      const double* w = Wx + k * G;
      for (std::size_t j = 0; j < G; ++j) a[j] += xv * w[j];
    }
    if (!first)
      for (std::size_t k = 0; k < H; ++k) {
        const double hv = hout[tp * H + k];
        const double* w = Wh + k * G;
        for (std::size_t j = 0; j < G; ++j) a[j] += hv * w[j];
      }
    double* gt = gates.data() + t * G;
    for (std::size_t j = 0; j < H; ++j) {
      const double i = detail::sigm(a[j]);
      const double f = detail::sigm(a[H + j]);
      const double g = std::tanh(a[2 * H + j]);
      const double o = detail::sigm(a[3 * H + j]);
      gt[j] = i, gt[H + j] = f, gt[2 * H + j] = g, gt[3 * H + j] = o;
      const double cp = first ? 0.0 : cell[tp * H + j];
      const double c = f * cp + i * g;
      cell[t * H + j] = c;
      tcell[t * H + j] = std::tanh(c);
      hout[t * H + j] = o * tcell[t * H + j];
    }
  }
  std::vector<double> out = hout;
  return detail::make_result(
      {T, H}, std::move(out), {x, p.wx, p.wh, p.b},
      [x, p, reverse, T, din, H, G, gates = std::move(gates), cell = std::move(cell), tcell = std::move(tcell),
       hout = std::move(hout)](const detail::Node& self) {
        double* gx = detail::grad_of(x);
        double* gwx = detail::grad_of(p.wx);
        double* gwh = detail::grad_of(p.wh);
        double* gb = detail::grad_of(p.b);
        const double* X = x.data().data();
        const double* Wx = p.wx.data().data();
        const double* Wh = p.wh.data().data();
        std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0), da(G);
        for (std::size_t s = T; s-- > 0;) {
          const std::size_t t = reverse ? T - 1 - s : s;
          const bool first = s == 0;
          const std::size_t tp = reverse ? t + 1 : t - 1;
          const double* gt = gates.data() + t * G;
          for (std::size_t j = 0; j < H; ++j) {
            const double i = gt[j], f = gt[H + j], g = gt[2 * H + j], o = gt[3 * H + j];
            const double tc = tcell[t * H + j];
            const double dh = self.grad[t * H + j] + dh_next[j];
            const double dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            const double cp = first ? 0.0 : cell[tp * H + j];
            da[j] = dc * g * i * (1.0 - i);
            da[H + j] = dc * cp * f * (1.0 - f);
            da[2 * H + j] = dc * i * (1.0 - g * g);
            da[3 * H + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
          }
          if (gb)
            for (std::size_t j = 0; j < G; ++j) gb[j] += da[j];
          if (gwx)
            for (std::size_t k = 0; k < din; ++k) {
              const double xv = X[t * din + k];
              if (xv == 0.0) continue;
              double* w = gwx + k * G;
              for (std::size_t j = 0; j < G; ++j) w[j] += xv * da[j];
            }
          if (gx)
            for (std::size_t k = 0; k < din; ++k) {
              const double* w = Wx + k * G;
              double acc = 0.0;
              for (std::size_t j = 0; j < G; ++j) acc += w[j] * da[j];
              gx[t * din + k] += acc;
            }
          std::fill(dh_next.begin(), dh_next.end(), 0.0);
          if (first) continue;
          for (std::size_t k = 0; k < H; ++k) {
            const double hv = hout[tp * H + k];
            const double* w = Wh + k * G;
            double acc = 0.0;
            for (std::size_t j = 0; j < G; ++j) acc += w[j] * da[j];
            dh_next[k] = acc;
            if (gwh) {
              double* gw = gwh + k * G;
              for (std::size_t j = 0; j < G; ++j) gw[j] += hv * da[j];
            }
          }
        }
      });
}

/// Parameters of a bidirectional stack: per layer a forward-time and a
/// backward-time direction.
struct BiLstmParams {
  std::vector<LstmParams> forward;
  std::vector<LstmParams> backward;

  std::size_t layers() const { return forward.size(); }
};

/// s_p = U(C): each layer concatenates per-frame hidden states of both
/// directions (forward first) and feeds them to the next layer.
inline Tensor bilstm_forward(const Tensor& c, const BiLstmParams& p) {
  detail::require_rank(c, 2, "bilstm_forward");
  if (c.dim(0) == 0) throw std::invalid_argument("bilstm_forward: empty sequence");
  if (p.layers() == 0 || p.backward.size() != p.layers())
    throw std::invalid_argument("bilstm_forward: need matching forward/backward layers");
  Tensor x = c;
  for (std::size_t l = 0; l < p.layers(); ++l)
    x = concat_cols({lstm_layer(x, p.forward[l], false), lstm_layer(x, p.backward[l], true)});
  return x;
}

// ---------------------------------------------------------------------------
// Self-attention

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // [d, d]
  Tensor bq, bk, bv, bo;  // [d]
};

struct MhaResult {
  Tensor output;                 // [T, d]
  std::vector<Tensor> weights;  // per head [T, T]
};

/// Multi-head scaled dot-product self-attention over all frames, heads
/// concatenated and passed through the output projection.
inline MhaResult mha(const Tensor& x, const AttentionParams& p, std::size_t heads) {
  detail::require_rank(x, 2, "mha");
  const std::size_t d = x.dim(1);
  if (heads == 0 || d % heads != 0)
    throw std::invalid_argument("mha: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                                " heads");
  for (const Tensor* w : {&p.wq, &p.wk, &p.wv, &p.wo})
    if (w->shape() != Shape{d, d}) throw std::invalid_argument("mha: projection shape mismatch");
  const std::size_t dk = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor q = linear(x, p.wq, p.bq), k = linear(x, p.wk, p.bk), v = linear(x, p.wv, p.bv);
  MhaResult r;
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dk, dk), kh = slice_cols(k, h * dk, dk), vh = slice_cols(v, h * dk, dk);
    Tensor w = softmax_rows(scale(matmul(qh, transpose(kh)), inv));
    outs.push_back(matmul(w, vh));
    r.weights.push_back(w);
  }
  r.output = linear(heads == 1 ? outs[0] : concat_cols(outs), p.wo, p.bo);
  return r;
}

struct SanBlockParams {
  Tensor ln1_gain, ln1_shift;
  AttentionParams attn;
  Tensor ln2_gain, ln2_shift;
  Tensor ffn_w1, ffn_b1;  // [d, 4d], [4d]
  Tensor ffn_w2, ffn_b2;  // [4d, d], [d]
};

/// s_q = V(s_p): pre-norm blocks x + mha(LN(x)) then x + FFN(LN(x)). An empty
/// stack is the identity.
inline Tensor san_forward(const Tensor& sp, const std::vector<SanBlockParams>& blocks, std::size_t heads) {
  detail::require_rank(sp, 2, "san_forward");
  Tensor x = sp;
  for (const auto& b : blocks) {
    if (b.ffn_w2.rank() != 2 || b.ffn_w2.dim(1) != x.dim(1))
      throw std::invalid_argument("san_forward: block width does not match input " + shape_str(x.shape()));
    x = add(x, mha(layer_norm_rows(x, b.ln1_gain, b.ln1_shift), b.attn, heads).output);
    Tensor hdn = relu(linear(layer_norm_rows(x, b.ln2_gain, b.ln2_shift), b.ffn_w1, b.ffn_b1));
    x = add(x, linear(hdn, b.ffn_w2, b.ffn_b2));
  }
  return x;
}

/// Fixed sinusoidal position signal [T, d].
inline Tensor sinusoidal_positions(std::size_t T, std::size_t d) {
  std::vector<double> v(T * d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      const double rate = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
      v[t * d + j] = j % 2 == 0 ? std::sin(t * rate) : std::cos(t * rate);
    }
  return Tensor(std::move(v), {T, d});
}

struct SequenceFeatures {
  Tensor s_p;
  Tensor s_q;
  Tensor s_output;
};

// ---------------------------------------------------------------------------
// CTC

/// Smallest frame count that can emit `target` under CTC: one frame per label
/// plus one separating blank between equal neighbours.
inline std::size_t ctc_min_frames(const std::vector<int>& target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1];
  return n;
}

/// Throws invalid_argument when `target` cannot be aligned to T frames over a
/// vocabulary of V symbols (blank = 0).
inline void ctc_check(std::size_t T, std::size_t V, const std::vector<int>& target) {
  for (int l : target)
    if (l <= kBlank || static_cast<std::size_t>(l) >= V)
      throw std::invalid_argument("ctc: label " + std::to_string(l) + " outside [1," + std::to_string(V) + ")");
  const std::size_t need = ctc_min_frames(target);
  if (T < need)
    throw std::invalid_argument("ctc: target needs at least " + std::to_string(need) + " frames, sequence has " +
                                std::to_string(T));
}

namespace detail {
inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}
}  // namespace detail

/// -log p(target | softmax_rows(logits)) summed over every CTC alignment, by
/// the log-space forward recursion. The gradient comes from the matching
/// backward recursion.
inline Tensor ctc_forward_loss(const Tensor& logits, const std::vector<int>& target) {
  detail::require_rank(logits, 2, "ctc_forward_loss");
  const std::size_t T = logits.dim(0), V = logits.dim(1);
  if (T == 0) throw std::invalid_argument("ctc: empty sequence");
  ctc_check(T, V, target);
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::size_t S = 2 * target.size() + 1;
  std::vector<int> ext(S, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];

  std::vector<double> logp(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = logits.data().data() + t * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t k = 0; k < V; ++k) z += std::exp(row[k] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < V; ++k) logp[t * V + k] = row[k] - lse;
  }
  auto skip_ok = [&](std::size_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(T * S, ninf), beta(T * S, ninf);
  alpha[0] = logp[ext[0]];
  if (S > 1) alpha[1] = logp[ext[1]];
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double acc = alpha[(t - 1) * S + s];
      if (s >= 1) acc = detail::log_add(acc, alpha[(t - 1) * S + s - 1]);
      if (skip_ok(s)) acc = detail::log_add(acc, alpha[(t - 1) * S + s - 2]);
      if (acc != ninf) alpha[t * S + s] = acc + logp[t * V + ext[s]];
    }
  const double log_lik =
      S > 1 ? detail::log_add(alpha[(T - 1) * S + S - 1], alpha[(T - 1) * S + S - 2]) : alpha[(T - 1) * S];

  // beta[t, s]: log-probability of the remaining frames t+1.. given state s at t
  beta[(T - 1) * S + S - 1] = 0.0;
  if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
  for (std::size_t t = T - 1; t-- > 0;)
    for (std::size_t s = 0; s < S; ++s) {
      double acc = beta[(t + 1) * S + s] + logp[(t + 1) * V + ext[s]];
      if (s + 1 < S) acc = detail::log_add(acc, beta[(t + 1) * S + s + 1] + logp[(t + 1) * V + ext[s + 1]]);
      if (s + 2 < S && skip_ok(s + 2))
        acc = detail::log_add(acc, beta[(t + 1) * S + s + 2] + logp[(t + 1) * V + ext[s + 2]]);
      beta[t * S + s] = acc;
    }

  // d loss / d logits[t, k] = softmax[t, k] - occupancy of symbol k at t
  std::vector<double> grad(T * V);
  std::vector<double> occ(V);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(occ.begin(), occ.end(), ninf);
    for (std::size_t s = 0; s < S; ++s)
      occ[ext[s]] = detail::log_add(occ[ext[s]], alpha[t * S + s] + beta[t * S + s]);
    for (std::size_t k = 0; k < V; ++k)
      grad[t * V + k] = std::exp(logp[t * V + k]) - std::exp(occ[k] - log_lik);
  }
  return detail::make_result({}, {-log_lik}, {logits}, [logits, grad = std::move(grad)](const detail::Node& self) {
    if (double* g = detail::grad_of(logits))
      for (std::size_t i = 0; i < grad.size(); ++i) g[i] += self.grad[0] * grad[i];
  });
}

/// Best path: per-frame argmax (lowest index on ties), merge repeats, drop blanks.
inline std::vector<int> ctc_greedy_decode(const Tensor& logits) {
  detail::require_rank(logits, 2, "ctc_greedy_decode");
  const std::size_t T = logits.dim(0), V = logits.dim(1);
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = logits.data().data() + t * V;
    const int k = static_cast<int>(std::max_element(row, row + V) - row);
    if (k != prev && k != kBlank) out.push_back(k);
    prev = k;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

/// Input map, Bi-LSTM, SAN stack, shortcut addition and output layer. All
/// parameter names start with the prefix given at construction.
class SequenceModel {
 public:
  SequenceModel(SequenceConfig cfg, Rng& rng, std::string prefix = "seq.")
      : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    cfg_.validate();
    for (const auto& [name, shape] : parameter_shapes()) {
      Tensor t;
      if (shape.size() == 2)
        t = uniform_fan_in(shape, shape[0], rng);
      else
        t = Tensor::full(shape, name.ends_with("gain") ? 1.0 : 0.0);
      params_.add(name, std::move(t));
    }
  }

  SequenceModel(SequenceConfig cfg, const ParamSet& params, std::string prefix = "seq.")
      : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    cfg_.validate();
    for (const auto& [name, shape] : parameter_shapes()) {
      if (!params.contains(name)) throw std::invalid_argument("sequence parameters lack '" + name + "'");
      const auto& t = params.at(name);
      if (t.shape() != shape)
        throw std::invalid_argument("sequence parameter '" + name + "' has shape " + shape_str(t.shape()) +
                                    ", config expects " + shape_str(shape));
      params_.add(name, t);
    }
  }

  const SequenceConfig& config() const noexcept { return cfg_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }
  const std::string& prefix() const noexcept { return prefix_; }

  std::vector<std::pair<std::string, Shape>> parameter_shapes() const {
    const std::size_t d = cfg_.d_model, H = d / 2;
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back(prefix_ + "input.w", Shape{cfg_.d_in, d});
    out.emplace_back(prefix_ + "input.b", Shape{d});
    for (std::size_t l = 0; l < cfg_.bilstm_layers; ++l)
      for (const char* dir : {"fwd", "bwd"}) {
        const std::string base = prefix_ + "lstm.l" + std::to_string(l) + "." + dir + ".";
        out.emplace_back(base + "wx", Shape{d, 4 * H});
        out.emplace_back(base + "wh", Shape{H, 4 * H});
        out.emplace_back(base + "b", Shape{4 * H});
      }
    if (cfg_.use_san)
      for (std::size_t q = 0; q < cfg_.san_layers; ++q) {
        const std::string base = prefix_ + "san.b" + std::to_string(q) + ".";
        out.emplace_back(base + "ln1.gain", Shape{d});
        out.emplace_back(base + "ln1.shift", Shape{d});
        for (const char* m : {"wq", "wk", "wv", "wo"}) out.emplace_back(base + "attn." + m, Shape{d, d});
        for (const char* m : {"bq", "bk", "bv", "bo"}) out.emplace_back(base + "attn." + m, Shape{d});
        out.emplace_back(base + "ln2.gain", Shape{d});
        out.emplace_back(base + "ln2.shift", Shape{d});
        out.emplace_back(base + "ffn.w1", Shape{d, 4 * d});
        out.emplace_back(base + "ffn.b1", Shape{4 * d});
        out.emplace_back(base + "ffn.w2", Shape{4 * d, d});
        out.emplace_back(base + "ffn.b2", Shape{d});
      }
    out.emplace_back(prefix_ + "output.w", Shape{d, cfg_.vocab});
    out.emplace_back(prefix_ + "output.b", Shape{cfg_.vocab});
    return out;
  }

  BiLstmParams bilstm_params() const {
    BiLstmParams p;
    for (std::size_t l = 0; l < cfg_.bilstm_layers; ++l)
      for (const char* dir : {"fwd", "bwd"}) {
        const std::string base = "lstm.l" + std::to_string(l) + "." + dir + ".";
        LstmParams lp{at(base + "wx"), at(base + "wh"), at(base + "b")};
        (dir[0] == 'f' ? p.forward : p.backward).push_back(lp);
      }
    return p;
  }

  std::vector<SanBlockParams> san_params() const {
    std::vector<SanBlockParams> blocks;
    if (!cfg_.use_san) return blocks;
    for (std::size_t q = 0; q < cfg_.san_layers; ++q) {
      const std::string b = "san.b" + std::to_string(q) + ".";
      blocks.push_back({at(b + "ln1.gain"), at(b + "ln1.shift"),
                        AttentionParams{at(b + "attn.wq"), at(b + "attn.wk"), at(b + "attn.wv"), at(b + "attn.wo"),
                                        at(b + "attn.bq"), at(b + "attn.bk"), at(b + "attn.bv"), at(b + "attn.bo")},
                        at(b + "ln2.gain"), at(b + "ln2.shift"), at(b + "ffn.w1"), at(b + "ffn.b1"),
                        at(b + "ffn.w2"), at(b + "ffn.b2")});
    }
    return blocks;
  }

  /// s_p, s_q and s_output for frame features c [T, d_in]. Without the SAN
  /// stack s_q is empty and s_output = s_p.
  SequenceFeatures seq_encode(const Tensor& c) const {
    if (c.rank() != 2 || c.dim(1) != cfg_.d_in)
      throw std::invalid_argument("seq_encode: expected [T, " + std::to_string(cfg_.d_in) + "], got " +
                                  shape_str(c.shape()));
    SequenceFeatures f;
    f.s_p = bilstm_forward(linear(c, at("input.w"), at("input.b")), bilstm_params());
    if (!cfg_.use_san) {
      f.s_output = f.s_p;
      return f;
    }
    Tensor san_in = f.s_p;
    if (cfg_.use_positional_encoding) san_in = add(san_in, sinusoidal_positions(c.dim(0), cfg_.d_model));
    f.s_q = san_forward(san_in, san_params(), cfg_.heads);
    f.s_output = add(f.s_p, f.s_q);
    return f;
  }

  /// Per-frame output scores [T, vocab].
  Tensor logits(const Tensor& c) const { return linear(seq_encode(c).s_output, at("output.w"), at("output.b")); }

  std::vector<int> decode(const Tensor& c) const {
    auto guard = Tape::suspend();
    return ctc_greedy_decode(logits(c));
  }

 private:
  const Tensor& at(const std::string& local) const { return params_.at(prefix_ + local); }

  SequenceConfig cfg_;
  std::string prefix_;
  ParamSet params_;
};

// ---------------------------------------------------------------------------
// Training

struct SequenceExample {
  Tensor features;          // [T, d_in]
  std::vector<int> target;  // labels in [1, vocab)
};

struct SequenceEpoch {
  double mean_ctc_loss = 0.0;
  double heldout_te = std::numeric_limits<double>::quiet_NaN();
};

struct SequenceTrainResult {
  ParamSet params;
  std::vector<SequenceEpoch> history;
};

/// Rejects the first example that cannot be scored, naming its index.
inline void validate_sequence_examples(const std::vector<SequenceExample>& data, const SequenceConfig& cfg,
                                       const char* what) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    try {
      if (ex.features.rank() != 2 || ex.features.dim(1) != cfg.d_in)
        throw std::invalid_argument("features " + shape_str(ex.features.shape()) + " do not have width " +
                                    std::to_string(cfg.d_in));
      if (ex.target.empty()) throw std::invalid_argument("empty target");
      ctc_check(ex.features.dim(0), cfg.vocab, ex.target);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string(what) + " sample " + std::to_string(i) + ": " + e.what());
    }
  }
}

/// Decodes every example (in parallel, read-only) and returns the corpus-level
/// phone error rate.
template <class Decoder>
ErrorRate evaluate_decoder(const Decoder& decode, const std::vector<SequenceExample>& data) {
  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs(data.size());
  parallel_for(data.size(), [&](std::size_t i) { pairs[i] = {data[i].target, decode(data[i].features)}; });
  return phone_error_rate(pairs);
}

inline ErrorRate evaluate_sequence(const SequenceModel& model, const std::vector<SequenceExample>& data) {
  return evaluate_decoder([&](const Tensor& c) { return model.decode(c); }, data);
}

namespace detail {
inline constexpr std::uint64_t kSeqInitStream = 0x5331;
inline constexpr std::uint64_t kSeqOrderStream = 0x5332;
}  // namespace detail

inline SequenceModel init_sequence_model(const SequenceConfig& cfg, std::uint64_t seed,
                                         const std::string& prefix = "seq.") {
  Rng rng(derive_seed(seed, detail::kSeqInitStream));
  return SequenceModel(cfg, rng, prefix);
}

/// One Adam step per sentence on the CTC loss, sentences visited in a fresh
/// seeded order every epoch. After each epoch the held-out set (if any) is
/// decoded greedily and scored.
inline SequenceTrainResult train_sequence(const std::vector<SequenceExample>& train,
                                          const std::vector<SequenceExample>& heldout, const SequenceConfig& cfg,
                                          std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_sequence: empty training set");
  validate_sequence_examples(train, cfg, "training");
  validate_sequence_examples(heldout, cfg, "held-out");
  SequenceModel model = init_sequence_model(cfg, seed);
  AdamState adam(AdamConfig{.lr = cfg.lr});
  SequenceTrainResult result;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(derive_seed(seed, detail::kSeqOrderStream, epoch));
    order_rng.shuffle(order);
    double total = 0.0;
    for (auto i : order) {
      model.params().zero_grad();
      Tape tape;
      Tensor loss;
      {
        auto rec = tape.record();
        loss = ctc_forward_loss(model.logits(train[i].features), train[i].target);
      }
      backward(loss, tape);
      adam_step(model.params(), adam);
      total += loss.item();
    }
    SequenceEpoch e;
    e.mean_ctc_loss = total / static_cast<double>(train.size());
    if (!heldout.empty()) e.heldout_te = evaluate_sequence(model, heldout).te;
    result.history.push_back(e);
    if (on_epoch) on_epoch(epoch + 1, e.heldout_te);
  }
  model.params().zero_grad();
  result.params = model.params();
  return result;
}

/// `epoch,mean_ctc_loss,heldout_Te`.
inline void write_sequence_history_csv(const std::string& path, const std::vector<SequenceEpoch>& history) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t e = 0; e < history.size(); ++e)
    rows.push_back({std::to_string(e + 1), format_double(history[e].mean_ctc_loss),
                    format_double(history[e].heldout_te)});
  write_csv(path, "epoch,mean_ctc_loss,heldout_Te", rows);
}

}  // namespace cuedseq
