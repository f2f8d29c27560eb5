// Copyright 2026 The rerank Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Toy-scale BERT-style cross-encoder: token/segment/position embeddings,
// post-norm self-attention encoder stack with GELU feed-forward blocks, and a
// two-logit relevance head over the final [CLS] state. Forward and backward
// passes are written out by hand; the scalar type is a template parameter so
// gradient checks can run in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rerank/error.hpp"
#include "rerank/parallel.hpp"
#include "rerank/random.hpp"
#include "rerank/tokenizer.hpp"

namespace rerank {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t hidden = 32;
  std::size_t ff = 64;
  std::size_t vocab_size = Vocab::kMinSize;
  std::size_t max_positions = 512;
  double dropout = 0.1;
  std::uint64_t seed = 1;

  std::size_t head_dim() const { return hidden / num_heads; }

  void validate() const {
    if (num_layers == 0 || num_heads == 0 || hidden == 0 || ff == 0 || vocab_size == 0 ||
        max_positions == 0) {
      throw ArgumentError("model config: all dimensions must be positive");
    }
    if (hidden % num_heads != 0) {
      throw ArgumentError("model config: hidden size " + std::to_string(hidden) +
                          " is not divisible by " + std::to_string(num_heads) + " heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ArgumentError("model config: dropout must lie in [0, 1)");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Row-major matrix (a vector is a 1 x n matrix).
template <typename T>
struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;
  bool decay = true;  // weight decay applies (false for biases and layer norms)

  Tensor() = default;
  Tensor(std::string n, std::size_t r, std::size_t c, bool d, T fill = T(0))
      : name(std::move(n)), rows(r), cols(c), data(r * c, fill), decay(d) {}

  std::size_t size() const { return data.size(); }
  T* row(std::size_t i) { return data.data() + i * cols; }
  const T* row(std::size_t i) const { return data.data() + i * cols; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

template <typename T>
struct LayerParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln1_scale, ln1_shift;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> ln2_scale, ln2_shift;

  LayerParams() = default;
  LayerParams(const ModelConfig& c, std::size_t l) {
    const auto p = "layer" + std::to_string(l) + ".";
    const auto d = c.hidden;
    wq = {p + "attn.wq", d, d, true};
    bq = {p + "attn.bq", 1, d, false};
    wk = {p + "attn.wk", d, d, true};
    bk = {p + "attn.bk", 1, d, false};
    wv = {p + "attn.wv", d, d, true};
    bv = {p + "attn.bv", 1, d, false};
    wo = {p + "attn.wo", d, d, true};
    bo = {p + "attn.bo", 1, d, false};
    ln1_scale = {p + "ln1.scale", 1, d, false, T(1)};
    ln1_shift = {p + "ln1.shift", 1, d, false};
    w1 = {p + "ffn.w1", d, c.ff, true};
    b1 = {p + "ffn.b1", 1, c.ff, false};
    w2 = {p + "ffn.w2", c.ff, d, true};
    b2 = {p + "ffn.b2", 1, d, false};
    ln2_scale = {p + "ln2.scale", 1, d, false, T(1)};
    ln2_shift = {p + "ln2.shift", 1, d, false};
  }

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    for (auto* t : {&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo,
                    &self.bo, &self.ln1_scale, &self.ln1_shift, &self.w1, &self.b1, &self.w2,
                    &self.b2, &self.ln2_scale, &self.ln2_shift}) {
      fn(*t);
    }
  }
};

/// All trainable tensors. Also used as the gradient container.
template <typename T>
struct Parameters {
  ModelConfig config;
  Tensor<T> token_emb, segment_emb, position_emb;
  Tensor<T> emb_ln_scale, emb_ln_shift;
  std::vector<LayerParams<T>> layers;
  Tensor<T> head_w;  // hidden x 2
  Tensor<T> head_b;  // 1 x 2

  Parameters() = default;

  /// Correct shapes; zeros except layer-norm scales, which are 1.
  explicit Parameters(const ModelConfig& c) : config(c) {
    c.validate();
    const auto d = c.hidden;
    token_emb = {"emb.token", c.vocab_size, d, true};
    segment_emb = {"emb.segment", 2, d, true};
    position_emb = {"emb.position", c.max_positions, d, true};
    emb_ln_scale = {"emb.ln.scale", 1, d, false, T(1)};
    emb_ln_shift = {"emb.ln.shift", 1, d, false};
    for (std::size_t l = 0; l < c.num_layers; ++l) layers.emplace_back(c, l);
    head_w = {"head.w", d, 2, true};
    head_b = {"head.b", 1, 2, false};
  }

  /// Tensors in canonical (serialization) order.
  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out{&token_emb, &segment_emb, &position_emb, &emb_ln_scale,
                                &emb_ln_shift};
    for (auto& layer : layers) LayerParams<T>::visit(layer, [&](Tensor<T>& t) { out.push_back(&t); });
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }

  std::vector<const Tensor<T>*> tensors() const {
    std::vector<const Tensor<T>*> out;
    for (auto* t : const_cast<Parameters*>(this)->tensors()) out.push_back(t);
    return out;
  }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += t->size();
    return n;
  }

  /// Same shapes, every value zero.
  Parameters zeros_like() const {
    Parameters z = *this;
    for (auto* t : z.tensors()) std::fill(t->data.begin(), t->data.end(), T(0));
    return z;
  }

  void add(const Parameters& other) {
    auto mine = tensors();
    const auto theirs = other.tensors();
    for (std::size_t i = 0; i < mine.size(); ++i) {
      auto& a = mine[i]->data;
      const auto& b = theirs[i]->data;
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
    }
  }

  bool all_finite() const {
    for (const auto* t : tensors()) {
      for (auto v : t->data) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  friend bool operator==(const Parameters& a, const Parameters& b) {
    if (!(a.config == b.config)) return false;
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (ta[i]->data != tb[i]->data) return false;
    }
    return true;
  }
};

template <typename T>
using Gradients = Parameters<T>;

/// Truncated-normal(0.02) weights and embeddings, zero biases, unit layer-norm
/// scales, zero head. Deterministic under config.seed.
template <typename T = double>
Parameters<T> init_params(const ModelConfig& config) {
  Parameters<T> p(config);
  Rng rng(config.seed);
  for (auto* t : p.tensors()) {
    if (!t->decay || t == &p.head_w) continue;
    for (auto& v : t->data) v = static_cast<T>(truncated_normal(rng, 0.02));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Elementary operations.

/// Max-subtracted softmax.
template <typename T>
std::vector<T> softmax(std::span<const T> v) {
  std::vector<T> out(v.size());
  if (v.empty()) return out;
  const T m = *std::max_element(v.begin(), v.end());
  T sum = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

template <typename T>
std::vector<T> softmax(const std::vector<T>& v) {
  return softmax(std::span<const T>(v));
}

constexpr double kLayerNormEps = 1e-12;

/// (x - mean) / sqrt(var + eps) * scale + shift, population variance.
template <typename T>
std::vector<T> layer_norm(std::span<const T> x, std::span<const T> scale,
                          std::span<const T> shift, T eps = T(kLayerNormEps)) {
  const auto n = x.size();
  T mean = 0;
  for (auto v : x) mean += v;
  mean /= static_cast<T>(n);
  T var = 0;
  for (auto v : x) var += (v - mean) * (v - mean);
  var /= static_cast<T>(n);
  const T rstd = T(1) / std::sqrt(var + eps);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * rstd * scale[i] + shift[i];
  return out;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(3.14159265358979323846));
  return cdf + x * pdf;
}

namespace detail {

// C(n x m) = A(n x k) * B(k x m) + bias
template <typename T>
void matmul_bias(const T* a, const T* b, const T* bias, T* c, std::size_t n, std::size_t k,
                 std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] = bias ? bias[j] : T(0);
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// dB(k x m) += A(n x k)^T * dC(n x m); dbias += colsum(dC)
template <typename T>
void accumulate_weight_grad(const T* a, const T* dc, T* db, T* dbias, std::size_t n,
                            std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * k;
    const T* dci = dc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* dbp = db + p * m;
      for (std::size_t j = 0; j < m; ++j) dbp[j] += av * dci[j];
    }
    if (dbias) {
      for (std::size_t j = 0; j < m; ++j) dbias[j] += dci[j];
    }
  }
}

// dA(n x k) += dC(n x m) * B(k x m)^T
template <typename T>
void accumulate_input_grad(const T* dc, const T* b, T* da, std::size_t n, std::size_t k,
                           std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* dci = dc + i * m;
    T* dai = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * m;
      T s = 0;
      for (std::size_t j = 0; j < m; ++j) s += dci[j] * bp[j];
      dai[p] += s;
    }
  }
}

template <typename T>
struct LayerNormCache {
  std::vector<T> xhat;  // n x d
  std::vector<T> rstd;  // n
};

// Row-wise layer norm of x (n x d) into y, recording what backward needs.
template <typename T>
void layer_norm_rows(const T* x, const Tensor<T>& scale, const Tensor<T>& shift, T* y,
                     std::size_t n, std::size_t d, LayerNormCache<T>* cache) {
  if (cache) {
    cache->xhat.resize(n * d);
    cache->rstd.resize(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x + i * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + T(kLayerNormEps));
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = (xi[j] - mean) * rstd;
      if (cache) cache->xhat[i * d + j] = xh;
      y[i * d + j] = xh * scale.data[j] + shift.data[j];
    }
    if (cache) cache->rstd[i] = rstd;
  }
}

// Given dy, returns dx and accumulates scale/shift gradients.
template <typename T>
std::vector<T> layer_norm_rows_backward(const LayerNormCache<T>& cache, const Tensor<T>& scale,
                                        const std::vector<T>& dy, Tensor<T>& dscale,
                                        Tensor<T>& dshift, std::size_t n, std::size_t d) {
  std::vector<T> dx(n * d);
  std::vector<T> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xh = cache.xhat.data() + i * d;
    const T* dyi = dy.data() + i * d;
    T mean_dxhat = 0;
    T mean_dxhat_xhat = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dscale.data[j] += dyi[j] * xh[j];
      dshift.data[j] += dyi[j];
      dxhat[j] = dyi[j] * scale.data[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xh[j];
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx[i * d + j] = cache.rstd[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
    }
  }
  return dx;
}

// Dropout sites, mixed into the counter key.
enum DropoutSite : std::uint64_t {
  kDropEmbedding = 1,
  kDropAttentionProbs = 2,
  kDropAttentionOut = 3,
  kDropFeedForwardOut = 4,
  kDropClassifier = 5,
};

// Inverted-dropout multipliers (0 or 1/(1-p)) for an n x m activation; empty
// when dropout is inactive.
template <typename T>
std::vector<T> dropout_multipliers(double p, std::uint64_t seed, std::uint64_t example,
                                   DropoutSite site, std::uint64_t layer, std::size_t n,
                                   std::size_t m) {
  if (p <= 0.0) return {};
  std::vector<T> keep(n * m);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double u = counter_uniform(seed, (example << 8) | site, layer, i, j);
      keep[i * m + j] = u < p ? T(0) : scale;
    }
  }
  return keep;
}

template <typename T>
void apply_multipliers(std::vector<T>& x, const std::vector<T>& keep) {
  if (keep.empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= keep[i];
}

template <typename T>
void check_finite(const std::vector<T>& v, const std::string& where) {
  for (auto x : v) {
    if (!std::isfinite(x)) throw NumericError("non-finite activation in " + where);
  }
}

}  // namespace detail

namespace detail {

// Scaled dot-product attention per head over projected q, k, v (n x d each).
// Masked keys get exactly zero weight. probs is heads x n x n (pre-dropout),
// context is n x d.
template <typename T>
void attend(const ModelConfig& cfg, const std::vector<T>& q, const std::vector<T>& k,
            const std::vector<T>& v, std::span<const std::uint8_t> mask,
            const std::vector<T>& probs_keep, std::vector<T>& probs, std::vector<T>& context) {
  const std::size_t n = mask.size();
  const std::size_t d = cfg.hidden;
  const std::size_t heads = cfg.num_heads;
  const std::size_t dh = cfg.head_dim();
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  probs.assign(heads * n * n, T(0));
  context.assign(n * d, T(0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      T* row = probs.data() + (h * n + i) * n;
      T max_logit = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask[j]) continue;
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        row[j] = s * inv_sqrt;
        max_logit = std::max(max_logit, row[j]);
      }
      T sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask[j]) continue;
        row[j] = std::exp(row[j] - max_logit);
        sum += row[j];
      }
      if (sum > T(0)) {
        for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
      }
      const T* keep_row = probs_keep.empty() ? nullptr : probs_keep.data() + (h * n + i) * n;
      T* ci = context.data() + i * d + h * dh;
      for (std::size_t j = 0; j < n; ++j) {
        const T a = keep_row ? row[j] * keep_row[j] : row[j];
        if (a == T(0)) continue;
        const T* vj = v.data() + j * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) ci[c] += a * vj[c];
      }
    }
  }
}

}  // namespace detail

/// Attention weights and per-position context vectors of one layer's
/// multi-head self-attention (before the output projection).
template <typename T>
struct AttentionResult {
  std::vector<std::vector<std::vector<T>>> weights;  // [head][query][key]
  std::vector<std::vector<T>> context;               // [position][hidden]
};

template <typename T>
AttentionResult<T> self_attention(const ModelConfig& cfg, const LayerParams<T>& lp,
                                  const std::vector<std::vector<T>>& x,
                                  std::span<const std::uint8_t> mask) {
  const std::size_t n = x.size();
  const std::size_t d = cfg.hidden;
  if (mask.size() != n) throw ArgumentError("self_attention: mask length mismatch");
  std::vector<T> flat;
  for (const auto& row : x) {
    if (row.size() != d) throw ArgumentError("self_attention: bad vector width");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  std::vector<T> q(n * d), k(n * d), v(n * d);
  detail::matmul_bias(flat.data(), lp.wq.data.data(), lp.bq.data.data(), q.data(), n, d, d);
  detail::matmul_bias(flat.data(), lp.wk.data.data(), lp.bk.data.data(), k.data(), n, d, d);
  detail::matmul_bias(flat.data(), lp.wv.data.data(), lp.bv.data.data(), v.data(), n, d, d);
  std::vector<T> probs, context;
  detail::attend(cfg, q, k, v, mask, {}, probs, context);
  AttentionResult<T> r;
  r.weights.assign(cfg.num_heads, std::vector<std::vector<T>>(n, std::vector<T>(n)));
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) r.weights[h][i][j] = probs[(h * n + i) * n + j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    r.context.emplace_back(context.begin() + i * d, context.begin() + (i + 1) * d);
  }
  return r;
}

/// Activations of one encoder layer retained for backprop.
template <typename T>
struct LayerCache {
  std::vector<T> input;            // n x d
  std::vector<T> q, k, v;          // n x d
  std::vector<T> probs;            // heads x n x n, before dropout
  std::vector<T> probs_keep;       // dropout multipliers for probs
  std::vector<T> context;          // n x d
  std::vector<T> attn_out_keep;    // n x d
  detail::LayerNormCache<T> ln1;
  std::vector<T> h1;               // n x d, after first layer norm
  std::vector<T> ff_pre;           // n x ff
  std::vector<T> ff_act;           // n x ff
  std::vector<T> ff_out_keep;      // n x d
  detail::LayerNormCache<T> ln2;
};

struct DropoutContext {
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t example = 0;
};

/// One post-norm encoder layer: self-attention with key masking, residual +
/// layer norm, GELU feed-forward, residual + layer norm. `x` is n x d and is
/// replaced by the layer output.
template <typename T>
void encoder_layer_forward(const ModelConfig& cfg, const LayerParams<T>& lp, std::size_t layer,
                           std::vector<T>& x, std::span<const std::uint8_t> mask,
                           const DropoutContext& drop, LayerCache<T>* cache) {
  const std::size_t n = mask.size();
  const std::size_t d = cfg.hidden;
  const std::size_t heads = cfg.num_heads;
  const std::size_t f = cfg.ff;

  std::vector<T> q(n * d), k(n * d), v(n * d);
  detail::matmul_bias(x.data(), lp.wq.data.data(), lp.bq.data.data(), q.data(), n, d, d);
  detail::matmul_bias(x.data(), lp.wk.data.data(), lp.bk.data.data(), k.data(), n, d, d);
  detail::matmul_bias(x.data(), lp.wv.data.data(), lp.bv.data.data(), v.data(), n, d, d);

  // Keyed per head so that the mask of a position pair does not depend on n.
  std::vector<T> probs_keep;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto head_keep = detail::dropout_multipliers<T>(
        drop.rate, drop.seed, drop.example, detail::kDropAttentionProbs, (layer << 8) | h, n, n);
    probs_keep.insert(probs_keep.end(), head_keep.begin(), head_keep.end());
  }
  std::vector<T> probs, context;
  detail::attend(cfg, q, k, v, mask, probs_keep, probs, context);

  std::vector<T> attn_out(n * d);
  detail::matmul_bias(context.data(), lp.wo.data.data(), lp.bo.data.data(), attn_out.data(), n,
                      d, d);
  auto attn_out_keep = detail::dropout_multipliers<T>(drop.rate, drop.seed, drop.example,
                                                      detail::kDropAttentionOut, layer, n, d);
  detail::apply_multipliers(attn_out, attn_out_keep);
  for (std::size_t i = 0; i < n * d; ++i) attn_out[i] += x[i];
  std::vector<T> h1(n * d);
  detail::LayerNormCache<T> ln1;
  detail::layer_norm_rows(attn_out.data(), lp.ln1_scale, lp.ln1_shift, h1.data(), n, d,
                          cache ? &ln1 : nullptr);

  std::vector<T> ff_pre(n * f), ff_act(n * f);
  detail::matmul_bias(h1.data(), lp.w1.data.data(), lp.b1.data.data(), ff_pre.data(), n, d, f);
  for (std::size_t i = 0; i < n * f; ++i) ff_act[i] = gelu(ff_pre[i]);
  std::vector<T> ff_out(n * d);
  detail::matmul_bias(ff_act.data(), lp.w2.data.data(), lp.b2.data.data(), ff_out.data(), n, f,
                      d);
  auto ff_out_keep = detail::dropout_multipliers<T>(drop.rate, drop.seed, drop.example,
                                                    detail::kDropFeedForwardOut, layer, n, d);
  detail::apply_multipliers(ff_out, ff_out_keep);
  for (std::size_t i = 0; i < n * d; ++i) ff_out[i] += h1[i];
  std::vector<T> out(n * d);
  detail::LayerNormCache<T> ln2;
  detail::layer_norm_rows(ff_out.data(), lp.ln2_scale, lp.ln2_shift, out.data(), n, d,
                          cache ? &ln2 : nullptr);
  detail::check_finite(out, "encoder layer " + std::to_string(layer));

  if (cache) {
    cache->input = std::move(x);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->probs_keep = std::move(probs_keep);
    cache->context = std::move(context);
    cache->attn_out_keep = std::move(attn_out_keep);
    cache->ln1 = std::move(ln1);
    cache->h1 = std::move(h1);
    cache->ff_pre = std::move(ff_pre);
    cache->ff_act = std::move(ff_act);
    cache->ff_out_keep = std::move(ff_out_keep);
    cache->ln2 = std::move(ln2);
  }
  x = std::move(out);
}

/// Backward through one encoder layer. `dx` holds d(loss)/d(output) on entry
/// and d(loss)/d(input) on exit.
template <typename T>
void encoder_layer_backward(const ModelConfig& cfg, const LayerParams<T>& lp,
                            const LayerCache<T>& c, std::span<const std::uint8_t> mask,
                            std::vector<T>& dx, LayerParams<T>& g) {
  const std::size_t n = mask.size();
  const std::size_t d = cfg.hidden;
  const std::size_t heads = cfg.num_heads;
  const std::size_t dh = cfg.head_dim();
  const std::size_t f = cfg.ff;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  // Second residual block.
  auto d_res2 = detail::layer_norm_rows_backward(c.ln2, lp.ln2_scale, dx, g.ln2_scale,
                                                 g.ln2_shift, n, d);
  std::vector<T> d_h1 = d_res2;
  std::vector<T> d_ff_out = std::move(d_res2);
  detail::apply_multipliers(d_ff_out, c.ff_out_keep);
  std::vector<T> d_ff_act(n * f, T(0));
  detail::accumulate_weight_grad(c.ff_act.data(), d_ff_out.data(), g.w2.data.data(),
                                 g.b2.data.data(), n, f, d);
  detail::accumulate_input_grad(d_ff_out.data(), lp.w2.data.data(), d_ff_act.data(), n, f, d);
  for (std::size_t i = 0; i < n * f; ++i) d_ff_act[i] *= gelu_grad(c.ff_pre[i]);
  detail::accumulate_weight_grad(c.h1.data(), d_ff_act.data(), g.w1.data.data(),
                                 g.b1.data.data(), n, d, f);
  detail::accumulate_input_grad(d_ff_act.data(), lp.w1.data.data(), d_h1.data(), n, d, f);

  // First residual block.
  auto d_res1 = detail::layer_norm_rows_backward(c.ln1, lp.ln1_scale, d_h1, g.ln1_scale,
                                                 g.ln1_shift, n, d);
  std::vector<T> d_input = d_res1;
  std::vector<T> d_attn_out = std::move(d_res1);
  detail::apply_multipliers(d_attn_out, c.attn_out_keep);
  std::vector<T> d_context(n * d, T(0));
  detail::accumulate_weight_grad(c.context.data(), d_attn_out.data(), g.wo.data.data(),
                                 g.bo.data.data(), n, d, d);
  detail::accumulate_input_grad(d_attn_out.data(), lp.wo.data.data(), d_context.data(), n, d, d);

  std::vector<T> dq(n * d, T(0)), dk(n * d, T(0)), dv(n * d, T(0));
  std::vector<T> d_probs(n);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = c.probs.data() + (h * n + i) * n;
      const T* keep_row = c.probs_keep.empty() ? nullptr : c.probs_keep.data() + (h * n + i) * n;
      const T* dci = d_context.data() + i * d + h * dh;
      T weighted = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask[j]) {
          d_probs[j] = 0;
          continue;
        }
        const T keep = keep_row ? keep_row[j] : T(1);
        const T* vj = c.v.data() + j * d + h * dh;
        T* dvj = dv.data() + j * d + h * dh;
        T s = 0;
        const T a = row[j] * keep;
        for (std::size_t cc = 0; cc < dh; ++cc) {
          s += dci[cc] * vj[cc];
          dvj[cc] += a * dci[cc];
        }
        d_probs[j] = s * keep;
        weighted += row[j] * d_probs[j];
      }
      const T* qi = c.q.data() + i * d + h * dh;
      T* dqi = dq.data() + i * d + h * dh;
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask[j]) continue;
        const T d_logit = row[j] * (d_probs[j] - weighted) * inv_sqrt;
        if (d_logit == T(0)) continue;
        const T* kj = c.k.data() + j * d + h * dh;
        T* dkj = dk.data() + j * d + h * dh;
        for (std::size_t cc = 0; cc < dh; ++cc) {
          dqi[cc] += d_logit * kj[cc];
          dkj[cc] += d_logit * qi[cc];
        }
      }
    }
  }

  detail::accumulate_weight_grad(c.input.data(), dq.data(), g.wq.data.data(), g.bq.data.data(),
                                 n, d, d);
  detail::accumulate_weight_grad(c.input.data(), dk.data(), g.wk.data.data(), g.bk.data.data(),
                                 n, d, d);
  detail::accumulate_weight_grad(c.input.data(), dv.data(), g.wv.data.data(), g.bv.data.data(),
                                 n, d, d);
  detail::accumulate_input_grad(dq.data(), lp.wq.data.data(), d_input.data(), n, d, d);
  detail::accumulate_input_grad(dk.data(), lp.wk.data.data(), d_input.data(), n, d, d);
  detail::accumulate_input_grad(dv.data(), lp.wv.data.data(), d_input.data(), n, d, d);
  dx = std::move(d_input);
}

/// Standalone self-attention encoder layer over a sequence of vectors
/// (inference semantics, no dropout).
template <typename T>
std::vector<std::vector<T>> attention_layer(const ModelConfig& cfg, const LayerParams<T>& lp,
                                            const std::vector<std::vector<T>>& x,
                                            std::span<const std::uint8_t> mask) {
  if (x.size() != mask.size()) throw ArgumentError("attention_layer: mask length mismatch");
  if (x.size() > cfg.max_positions) throw ArgumentError("attention_layer: sequence too long");
  std::vector<T> flat;
  for (const auto& row : x) {
    if (row.size() != cfg.hidden) throw ArgumentError("attention_layer: bad vector width");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  encoder_layer_forward<T>(cfg, lp, 0, flat, mask, DropoutContext{}, nullptr);
  std::vector<std::vector<T>> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i].assign(flat.begin() + i * cfg.hidden, flat.begin() + (i + 1) * cfg.hidden);
  }
  return out;
}

enum class Mode { kTrain, kInfer };

/// Everything backward needs for one batch element.
template <typename T>
struct ExampleCache {
  std::vector<TokenId> token_ids;
  std::vector<std::uint8_t> segment_ids;
  std::vector<std::uint8_t> mask;
  detail::LayerNormCache<T> emb_ln;
  std::vector<T> emb_keep;
  std::vector<LayerCache<T>> layers;
  std::vector<T> cls;       // final [CLS] state before dropout
  std::vector<T> cls_keep;
  T logits[2] = {T(0), T(0)};
  T probability = T(0);
};

template <typename T>
struct ForwardCache {
  std::vector<ExampleCache<T>> examples;
};

template <typename T>
struct ForwardResult {
  std::vector<T> probabilities;
  std::optional<ForwardCache<T>> cache;  // present iff run in training mode
};

namespace detail {

template <typename T>
void forward_example(const Parameters<T>& p, const EncodedPair& pair, Mode mode,
                     std::uint64_t dropout_seed, std::uint64_t example, T& probability,
                     ExampleCache<T>* cache) {
  const auto& cfg = p.config;
  const std::size_t n = pair.token_ids.size();
  const std::size_t d = cfg.hidden;
  const DropoutContext drop{mode == Mode::kTrain ? cfg.dropout : 0.0, dropout_seed, example};

  std::vector<T> emb(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const T* tok = p.token_emb.row(static_cast<std::size_t>(pair.token_ids[i]));
    const T* seg = p.segment_emb.row(pair.segment_ids[i]);
    const T* pos = p.position_emb.row(i);
    for (std::size_t j = 0; j < d; ++j) emb[i * d + j] = tok[j] + seg[j] + pos[j];
  }
  std::vector<T> x(n * d);
  layer_norm_rows(emb.data(), p.emb_ln_scale, p.emb_ln_shift, x.data(), n, d,
                  cache ? &cache->emb_ln : nullptr);
  auto emb_keep = dropout_multipliers<T>(drop.rate, drop.seed, example, kDropEmbedding, 0, n, d);
  apply_multipliers(x, emb_keep);
  check_finite(x, "embeddings");

  const std::span<const std::uint8_t> mask(pair.mask);
  if (cache) cache->layers.resize(cfg.num_layers);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    encoder_layer_forward(cfg, p.layers[l], l, x, mask, drop,
                          cache ? &cache->layers[l] : nullptr);
  }

  std::vector<T> cls(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d));
  auto cls_keep = dropout_multipliers<T>(drop.rate, drop.seed, example, kDropClassifier, 0, 1, d);
  std::vector<T> cls_dropped = cls;
  apply_multipliers(cls_dropped, cls_keep);
  T logits[2];
  matmul_bias(cls_dropped.data(), p.head_w.data.data(), p.head_b.data.data(), logits,
              std::size_t{1}, d, std::size_t{2});
  if (!std::isfinite(logits[0]) || !std::isfinite(logits[1])) {
    throw NumericError("non-finite activation in relevance head");
  }
  probability = softmax(std::span<const T>(logits, 2))[1];

  if (cache) {
    cache->token_ids = pair.token_ids;
    cache->segment_ids = pair.segment_ids;
    cache->mask = pair.mask;
    cache->emb_keep = std::move(emb_keep);
    cache->cls = std::move(cls);
    cache->cls_keep = std::move(cls_keep);
    cache->logits[0] = logits[0];
    cache->logits[1] = logits[1];
    cache->probability = probability;
  }
}

}  // namespace detail

/// Relevance probabilities for a batch padded to a common length. Dropout and
/// the backprop cache are active only in training mode; the dropout pattern is
/// a pure function of (dropout_seed, batch position, site, coordinates).
template <typename T>
ForwardResult<T> forward(const Parameters<T>& p, std::span<const EncodedPair> batch, Mode mode,
                         std::uint64_t dropout_seed = 0, std::size_t threads = 1) {
  if (batch.empty()) throw ArgumentError("forward: empty batch");
  const auto& cfg = p.config;
  const auto n = batch.front().token_ids.size();
  for (const auto& e : batch) {
    if (e.token_ids.size() != n || e.segment_ids.size() != n || e.mask.size() != n) {
      throw ArgumentError("forward: batch is not padded to a common length");
    }
    if (n == 0 || n > cfg.max_positions) {
      throw ArgumentError("forward: sequence length " + std::to_string(n) +
                          " outside [1, " + std::to_string(cfg.max_positions) + "]");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (e.token_ids[i] < 0 || static_cast<std::size_t>(e.token_ids[i]) >= cfg.vocab_size) {
        throw ArgumentError("forward: token id " + std::to_string(e.token_ids[i]) +
                            " outside the vocabulary");
      }
      if (e.segment_ids[i] > 1) throw ArgumentError("forward: segment id must be 0 or 1");
    }
  }

  ForwardResult<T> result;
  result.probabilities.resize(batch.size());
  if (mode == Mode::kTrain) result.cache.emplace().examples.resize(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t b) {
    detail::forward_example(p, batch[b], mode, dropout_seed, b, result.probabilities[b],
                            result.cache ? &result.cache->examples[b] : nullptr);
  });
  return result;
}

/// Probability clamp applied before logs in the relevance loss.
constexpr double kProbabilityClamp = 1e-7;

/// Gradient of the summed binary cross-entropy over the batch with respect to
/// every parameter. Per-example gradients are reduced in batch order, so the
/// result does not depend on the thread count.
template <typename T>
Gradients<T> backward(const Parameters<T>& p, const std::optional<ForwardCache<T>>& cache,
                      std::span<const int> labels, std::size_t threads = 1) {
  if (!cache) throw StateError("backward: no cache; run forward in training mode first");
  const auto& examples = cache->examples;
  if (labels.size() != examples.size()) throw ArgumentError("backward: label count mismatch");
  const auto& cfg = p.config;
  const std::size_t d = cfg.hidden;

  std::vector<Gradients<T>> per_example(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t b) {
    const auto& ex = examples[b];
    auto& g = per_example[b] = p.zeros_like();
    const std::size_t n = ex.mask.size();

    // d(loss)/d(logits) for the two-way softmax; zero where the clamp is active.
    const T prob = ex.probability;
    const T eps = static_cast<T>(kProbabilityClamp);
    T dz1 = 0;
    if (prob > eps && prob < T(1) - eps) dz1 = prob - static_cast<T>(labels[b]);
    const T dz[2] = {-dz1, dz1};

    std::vector<T> cls_dropped = ex.cls;
    detail::apply_multipliers(cls_dropped, ex.cls_keep);
    detail::accumulate_weight_grad(cls_dropped.data(), dz, g.head_w.data.data(),
                                   g.head_b.data.data(), std::size_t{1}, d, std::size_t{2});
    std::vector<T> d_cls(d, T(0));
    detail::accumulate_input_grad(dz, p.head_w.data.data(), d_cls.data(), std::size_t{1}, d,
                                  std::size_t{2});
    detail::apply_multipliers(d_cls, ex.cls_keep);

    std::vector<T> dx(n * d, T(0));
    std::copy(d_cls.begin(), d_cls.end(), dx.begin());
    const std::span<const std::uint8_t> mask(ex.mask);
    for (std::size_t l = cfg.num_layers; l-- > 0;) {
      encoder_layer_backward(cfg, p.layers[l], ex.layers[l], mask, dx, g.layers[l]);
    }

    detail::apply_multipliers(dx, ex.emb_keep);
    const auto d_emb = detail::layer_norm_rows_backward(ex.emb_ln, p.emb_ln_scale, dx,
                                                        g.emb_ln_scale, g.emb_ln_shift, n, d);
    for (std::size_t i = 0; i < n; ++i) {
      T* tok = g.token_emb.row(static_cast<std::size_t>(ex.token_ids[i]));
      T* seg = g.segment_emb.row(ex.segment_ids[i]);
      T* pos = g.position_emb.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        const T v = d_emb[i * d + j];
        tok[j] += v;
        seg[j] += v;
        pos[j] += v;
      }
    }
  });

  Gradients<T> total = p.zeros_like();
  for (const auto& g : per_example) total.add(g);
  return total;
}

}  // namespace rerank
