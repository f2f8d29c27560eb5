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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rerank/corpus_io.hpp"
#include "rerank/error.hpp"
#include "rerank/model.hpp"
#include "rerank/optimizer.hpp"
#include "rerank/random.hpp"
#include "rerank/tokenizer.hpp"

namespace rerank {

/// Summed binary cross-entropy: -sum_pos ln(s) - sum_neg ln(1 - s), with
/// probabilities clamped to [1e-7, 1 - 1e-7].
template <typename T>
double bce_loss(std::span<const T> probs, std::span<const int> labels) {
  if (probs.size() != labels.size()) {
    throw ArgumentError("bce_loss: " + std::to_string(probs.size()) + " probabilities but " +
                        std::to_string(labels.size()) + " labels");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double s = std::clamp(static_cast<double>(probs[i]), kProbabilityClamp,
                                1.0 - kProbabilityClamp);
    loss -= labels[i] == 1 ? std::log(s) : std::log(1.0 - s);
  }
  return loss;
}

template <typename T>
double bce_loss(const std::vector<T>& probs, const std::vector<int>& labels) {
  return bce_loss(std::span<const T>(probs), std::span<const int>(labels));
}

struct TrainingExample {
  std::string query_id;
  std::string passage_id;
  int label = 0;

  friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

/// For each query of the run that has relevant passages: every relevant
/// passage as a positive, plus up to `negatives_per_query` negatives drawn
/// without replacement from its top-`depth` non-relevant candidates.
inline std::vector<TrainingExample> sample_training_pairs(const Qrels& qrels, const Run& run,
                                                          std::size_t depth,
                                                          std::size_t negatives_per_query,
                                                          std::uint64_t seed) {
  if (negatives_per_query == 0) throw ArgumentError("sample_training_pairs: need >= 1 negative");
  Rng rng(seed);
  std::vector<TrainingExample> out;
  for (const auto& list : run) {
    const auto& relevant = qrels.relevant(list.query_id);
    if (relevant.empty()) continue;
    for (const auto& pid : relevant) out.push_back({list.query_id, pid, 1});
    std::vector<const std::string*> pool;
    const auto limit = std::min(depth, list.entries.size());
    for (std::size_t i = 0; i < limit; ++i) {
      if (!relevant.count(list.entries[i].passage_id)) pool.push_back(&list.entries[i].passage_id);
    }
    const auto take = std::min(negatives_per_query, pool.size());
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
      std::swap(pool[i], pool[j]);
      out.push_back({list.query_id, *pool[i], 0});
    }
  }
  return out;
}

struct TrainLogRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;  // summed over the batch, before the update
};

inline void write_train_log(const std::vector<TrainLogRow>& log, std::ostream& out) {
  out << "step\tlr\tloss\n";
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%llu\t%.9g\t%.9g\n", static_cast<unsigned long long>(r.step),
                  r.lr, r.loss);
    out << buf;
  }
}

struct TrainOptions {
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  PairLimits limits;
  std::uint64_t checkpoint_every = 0;  // 0 disables the callback
  std::function<void(std::uint64_t, const Parameters<double>&, const OptimizerState<double>&)>
      on_checkpoint;
};

namespace detail {

// Example order for a given position of the global example stream; each epoch
// is a fresh seeded permutation.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::size_t at(std::uint64_t position) {
    const auto epoch = position / n_;
    if (epoch != epoch_ || order_.empty()) {
      order_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
      Rng rng(splitmix64(seed_ ^ splitmix64(epoch + 1)));
      shuffle(order_, rng);
      epoch_ = epoch;
    }
    return order_[position % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace detail

/// Fine-tunes `params` from state.step + 1 through hyper.total_steps. Each
/// step encodes a seeded batch, runs a training-mode forward pass, takes the
/// summed cross-entropy gradient and applies one Adam update. Returns one log
/// row per step. Resuming at state.step == total_steps runs nothing.
inline std::vector<TrainLogRow> train(Parameters<double>& params, OptimizerState<double>& state,
                                      const std::vector<TrainingExample>& examples,
                                      const Collection& collection, const QuerySet& queries,
                                      const Vocab& vocab, const OptimizerHyper& hyper,
                                      const TrainOptions& opts) {
  std::vector<TrainLogRow> log;
  if (state.step >= hyper.total_steps) return log;
  hyper.validate();
  if (examples.empty()) throw ArgumentError("train: no training examples");
  if (opts.batch_size == 0) throw ArgumentError("train: batch size must be positive");
  if (vocab.size() != params.config.vocab_size) {
    throw ArgumentError("train: vocabulary size does not match the model");
  }

  std::vector<EncodedPair> encoded;
  encoded.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto& q = queries.at(ex.query_id);
    const auto& p = collection.at(ex.passage_id);
    encoded.push_back(encode_pair(q.text, p.text, vocab, opts.limits));
  }

  detail::EpochSampler sampler(examples.size(), opts.seed);
  std::vector<EncodedPair> batch;
  std::vector<int> labels;
  while (state.step < hyper.total_steps) {
    const auto t = state.step + 1;
    batch.clear();
    labels.clear();
    for (std::size_t i = 0; i < opts.batch_size; ++i) {
      const auto idx = sampler.at((t - 1) * opts.batch_size + i);
      batch.push_back(encoded[idx]);
      labels.push_back(examples[idx].label);
    }
    pad_batch(batch);

    try {
      const auto dropout_seed = splitmix64(opts.seed ^ splitmix64(t));
      auto result = forward<double>(params, batch, Mode::kTrain, dropout_seed, opts.threads);
      const double loss = bce_loss(result.probabilities, labels);
      const auto grads = backward<double>(params, result.cache, labels, opts.threads);
      const double lr = adam_step(params, grads, state, hyper);
      log.push_back({t, lr, loss});
    } catch (const NumericError& e) {
      throw NumericError("train step " + std::to_string(t) + ": " + e.what());
    }
    if (opts.checkpoint_every > 0 && opts.on_checkpoint && t % opts.checkpoint_every == 0) {
      opts.on_checkpoint(t, params, state);
    }
  }
  return log;
}

}  // namespace rerank
