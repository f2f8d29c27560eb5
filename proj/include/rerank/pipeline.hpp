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

// End-to-end pieces shared by the command-line tool and the experiments:
// first-stage retrieval, fine-tuning from a first-stage run, and the
// training-size curve.

#include <cstdint>
#include <string>
#include <vector>

#include "rerank/bm25.hpp"
#include "rerank/corpus_io.hpp"
#include "rerank/eval.hpp"
#include "rerank/model.hpp"
#include "rerank/optimizer.hpp"
#include "rerank/tokenizer.hpp"
#include "rerank/train.hpp"

namespace rerank {

/// BM25 top-k for every query; queries matching nothing are left out.
inline Run retrieve(const InvertedIndex& index, const QuerySet& queries, std::size_t k) {
  Run run;
  for (const auto& q : queries) {
    auto list = search(index, q, k);
    if (!list.entries.empty()) run.push_back(std::move(list));
  }
  return run;
}

/// Keeps the top `depth` entries of every list (0 keeps everything).
inline Run truncate_run(Run run, std::size_t depth) {
  if (depth == 0) return run;
  for (auto& list : run) {
    if (list.entries.size() > depth) list.entries.resize(depth);
  }
  return run;
}

/// Everything needed to fine-tune a model from a first-stage run.
struct FineTuneSetup {
  ModelConfig model;  // vocab_size is filled in from the built vocabulary
  OptimizerHyper hyper;
  TrainOptions train;
  std::size_t max_vocab = 30000;
  std::size_t depth = 1000;  // negatives are drawn from this many candidates
  std::size_t negatives_per_query = 20;
  std::uint64_t sample_seed = 1;
};

struct FineTuned {
  Vocab vocab;
  Parameters<double> params;
  OptimizerState<double> optimizer;
  std::vector<TrainLogRow> log;
  std::size_t num_examples = 0;
};

/// Builds the vocabulary, samples training pairs and trains a fresh model.
inline FineTuned fine_tune(const Collection& collection, const QuerySet& queries, const Qrels& qrels,
                           const Run& first_stage, const FineTuneSetup& setup) {
  setup.hyper.validate();
  FineTuned out{build_vocab(collection, queries, setup.max_vocab), {}, {}, {}, 0};
  auto config = setup.model;
  config.vocab_size = out.vocab.size();
  out.params = init_params<double>(config);
  out.optimizer = OptimizerState<double>(out.params);
  const auto examples = sample_training_pairs(qrels, first_stage, setup.depth,
                                              setup.negatives_per_query, setup.sample_seed);
  out.num_examples = examples.size();
  out.log = train(out.params, out.optimizer, examples, collection, queries, out.vocab, setup.hyper,
                  setup.train);
  return out;
}

struct CurvePoint {
  std::uint64_t pairs = 0;  // training pairs seen: steps x batch size
  std::uint64_t steps = 0;
  double mrr10 = 0.0;
};

/// Steps needed to see at least `pairs` training pairs.
inline std::uint64_t steps_for_pairs(std::uint64_t pairs, std::size_t batch_size) {
  return (pairs + batch_size - 1) / batch_size;
}

inline void validate_curve_sizes(const std::vector<std::uint64_t>& sizes) {
  if (sizes.empty()) throw ArgumentError("learning curve: no sizes given");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0 || (i > 0 && sizes[i] <= sizes[i - 1])) {
      throw ArgumentError("learning curve: sizes must be positive and strictly increasing");
    }
  }
}

/// Trains one model per size from the same seed and scores each by MRR@10 on
/// the held-out run. `sizes` must be strictly increasing. When
/// setup.hyper.warmup_steps is 0 each run warms up over 10% of its steps.
inline std::vector<CurvePoint> learning_curve(const Collection& collection,
                                              const QuerySet& train_queries, const Run& train_run,
                                              const QuerySet& heldout_queries,
                                              const Run& heldout_candidates, const Qrels& qrels,
                                              const std::vector<std::uint64_t>& sizes,
                                              const FineTuneSetup& setup,
                                              const RerankOptions& rerank_opts = {}) {
  validate_curve_sizes(sizes);
  std::vector<FineTuneSetup> runs;
  for (auto pairs : sizes) {
    auto s = setup;
    s.hyper.total_steps = steps_for_pairs(pairs, setup.train.batch_size);
    if (setup.hyper.warmup_steps == 0) s.hyper.warmup_steps = default_warmup(s.hyper.total_steps);
    s.hyper.validate();
    runs.push_back(s);
  }
  std::vector<CurvePoint> points;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto model = fine_tune(collection, train_queries, qrels, train_run, runs[i]);
    const auto reranked = rerank_run(model.params, model.vocab, heldout_queries, collection,
                                     heldout_candidates, rerank_opts);
    points.push_back({sizes[i], runs[i].hyper.total_steps, mrr_at_10(reranked, qrels).value});
  }
  return points;
}

}  // namespace rerank
