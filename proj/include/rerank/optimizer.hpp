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

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <span>
#include <string>

#include "rerank/error.hpp"
#include "rerank/model.hpp"

namespace rerank {

struct OptimizerHyper {
  double base_lr = 3e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t warmup_steps = 10000;
  std::uint64_t total_steps = 100000;

  void validate() const {
    if (!(warmup_steps > 0 && warmup_steps < total_steps)) {
      throw ArgumentError("optimizer: need 0 < warmup_steps (" + std::to_string(warmup_steps) +
                          ") < total_steps (" + std::to_string(total_steps) + ")");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw ArgumentError("optimizer: betas must lie in (0, 1)");
    }
    if (!(base_lr >= 0.0) || !(eps > 0.0) || !(weight_decay >= 0.0)) {
      throw ArgumentError("optimizer: lr, eps and weight decay must be non-negative");
    }
  }
};

/// Warmup steps used when none is given: 10% of the run.
inline std::uint64_t default_warmup(std::uint64_t total_steps) {
  return std::max<std::uint64_t>(1, total_steps / 10);
}

/// Linear warmup to base_lr over warmup_steps, then linear decay to zero at
/// total_steps.
inline double lr_schedule(std::uint64_t step, const OptimizerHyper& h) {
  if (step > h.total_steps) {
    throw ArgumentError("lr_schedule: step " + std::to_string(step) + " beyond total_steps " +
                        std::to_string(h.total_steps));
  }
  if (step <= h.warmup_steps) {
    return h.base_lr * static_cast<double>(step) / static_cast<double>(h.warmup_steps);
  }
  return h.base_lr * static_cast<double>(h.total_steps - step) /
         static_cast<double>(h.total_steps - h.warmup_steps);
}

/// Adam moments plus the number of updates applied so far.
template <typename T>
struct OptimizerState {
  Parameters<T> m;
  Parameters<T> v;
  std::uint64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(const Parameters<T>& params)
      : m(params.zeros_like()), v(params.zeros_like()) {}

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Adam update of one flat tensor at 1-based step \`t\` with learning rate
/// \`lr\` and decoupled weight decay \`weight_decay\`.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::uint64_t t, double lr, double weight_decay, const OptimizerHyper& h) {
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t j = 0; j < param.size(); ++j) {
    const double g = grad[j];
    const double mj = h.beta1 * m[j] + (1.0 - h.beta1) * g;
    const double vj = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
    m[j] = static_cast<T>(mj);
    v[j] = static_cast<T>(vj);
    const double update = (mj / bc1) / (std::sqrt(vj / bc2) + h.eps) + weight_decay * param[j];
    param[j] = static_cast<T>(param[j] - lr * update);
  }
}

/// One scheduled Adam step over every tensor. Weight decay is skipped for
/// biases and layer-norm tensors. Increments state.step and returns the
/// learning rate used. Parameters are untouched if any gradient is non-finite.
template <typename T>
double adam_step(Parameters<T>& params, const Gradients<T>& grads, OptimizerState<T>& state,
                 const OptimizerHyper& h) {
  if (!grads.all_finite()) {
    throw NumericError("adam_step: non-finite gradient at step " + std::to_string(state.step + 1));
  }
  const auto t = state.step + 1;
  const double lr = lr_schedule(t, h);
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    adam_update<T>(p[i]->data, g[i]->data, m[i]->data, v[i]->data, t, lr,
                   p[i]->decay ? h.weight_decay : 0.0, h);
  }
  state.step = t;
  return lr;
}

}  // namespace rerank
