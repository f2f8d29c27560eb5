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
#include <cstdio>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "rerank/corpus_io.hpp"
#include "rerank/error.hpp"
#include "rerank/model.hpp"
#include "rerank/tokenizer.hpp"

namespace rerank {

struct RerankOptions {
  PairLimits limits;
  std::size_t batch_size = 64;
  std::size_t threads = 1;
};

/// Scores every candidate independently and sorts by relevance probability,
/// ties by ascending passage id. Score fields hold the probabilities.
template <typename T>
RankedList rerank(const Parameters<T>& params, const Vocab& vocab, const Query& query,
                  const RankedList& candidates, const Collection& collection,
                  const RerankOptions& opts = {}) {
  if (candidates.entries.empty()) throw ArgumentError("rerank: no candidates");
  std::vector<std::string> ids;
  for (const auto& e : candidates.entries) ids.push_back(e.passage_id);
  // Canonical order, so batching does not depend on the input order.
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw IntegrityError("rerank: duplicate candidate for query '" + query.id + "'");
  }

  std::vector<T> probs;
  probs.reserve(ids.size());
  const auto chunk = std::max<std::size_t>(1, opts.batch_size);
  for (std::size_t start = 0; start < ids.size(); start += chunk) {
    std::vector<EncodedPair> batch;
    for (std::size_t i = start; i < std::min(ids.size(), start + chunk); ++i) {
      const auto* p = collection.find(ids[i]);
      if (p == nullptr) {
        throw IntegrityError("rerank: passage '" + ids[i] + "' is not in the collection");
      }
      batch.push_back(encode_pair(query.text, p->text, vocab, opts.limits));
    }
    pad_batch(batch);
    const auto out = forward<T>(params, batch, Mode::kInfer, 0, opts.threads);
    probs.insert(probs.end(), out.probabilities.begin(), out.probabilities.end());
  }

  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  RankedList out{query.id, {}};
  for (auto i : order) out.entries.push_back({ids[i], static_cast<double>(probs[i]), 0});
  assign_ranks(out);
  return out;
}

/// Re-ranks every list of a first-stage run. Empty lists stay empty.
template <typename T>
Run rerank_run(const Parameters<T>& params, const Vocab& vocab, const QuerySet& queries,
               const Collection& collection, const Run& first_stage,
               const RerankOptions& opts = {}) {
  Run out;
  for (const auto& list : first_stage) {
    const auto* q = queries.find(list.query_id);
    if (q == nullptr) {
      throw IntegrityError("rerank_run: query '" + list.query_id + "' is not in the query set");
    }
    if (list.entries.empty()) {
      out.push_back({list.query_id, {}});
      continue;
    }
    out.push_back(rerank(params, vocab, *q, list, collection, opts));
  }
  return out;
}

/// 1/r for the first relevant passage at rank r <= k, else 0.
inline double reciprocal_rank_at_k(const RankedList& ranked, const std::set<std::string>& relevant,
                                   std::size_t k = 10) {
  if (k == 0) throw ArgumentError("reciprocal_rank_at_k: k must be >= 1");
  const auto limit = std::min(k, ranked.entries.size());
  for (std::size_t i = 0; i < limit; ++i) {
    if (relevant.count(ranked.entries[i].passage_id)) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

/// Mean over relevant passages of precision at each relevant hit's rank.
/// Relevant passages never retrieved contribute zero. `cutoff` limits the
/// list depth considered (0 = full list).
inline double average_precision(const RankedList& ranked, const std::set<std::string>& relevant,
                                std::size_t cutoff = 0) {
  if (relevant.empty()) throw ArgumentError("average_precision: empty relevant set");
  const auto limit = cutoff == 0 ? ranked.entries.size() : std::min(cutoff, ranked.entries.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < limit; ++i) {
    if (relevant.count(ranked.entries[i].passage_id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // run queries without any relevant passage
};

namespace detail {

template <typename PerQuery>
MetricReport mean_over_judged(const std::string& name, const Run& run, const Qrels& qrels,
                              PerQuery&& per_query) {
  std::unordered_set<std::string> seen;
  MetricReport r{name, 0.0, 0, 0};
  double sum = 0.0;
  for (const auto& list : run) {
    if (!seen.insert(list.query_id).second) {
      throw IntegrityError(name + ": query '" + list.query_id + "' appears more than once");
    }
    const auto& relevant = qrels.relevant(list.query_id);
    if (relevant.empty()) {
      ++r.skipped;
      continue;
    }
    sum += per_query(list, relevant);
    ++r.evaluated;
  }
  r.value = r.evaluated == 0 ? 0.0 : sum / static_cast<double>(r.evaluated);
  return r;
}

}  // namespace detail

/// Queries without judgments are skipped, not scored as zero.
inline MetricReport mrr_at_k(const Run& run, const Qrels& qrels, std::size_t k = 10) {
  return detail::mean_over_judged("mrr@" + std::to_string(k), run, qrels,
                                  [k](const RankedList& l, const std::set<std::string>& rel) {
                                    return reciprocal_rank_at_k(l, rel, k);
                                  });
}

inline MetricReport mrr_at_10(const Run& run, const Qrels& qrels) { return mrr_at_k(run, qrels, 10); }

inline MetricReport map_metric(const Run& run, const Qrels& qrels, std::size_t cutoff = 0) {
  return detail::mean_over_judged(cutoff == 0 ? "map" : "map@" + std::to_string(cutoff), run,
                                  qrels,
                                  [cutoff](const RankedList& l, const std::set<std::string>& rel) {
                                    return average_precision(l, rel, cutoff);
                                  });
}

/// `metric<TAB>value<TAB>evaluated<TAB>skipped`
inline void write_report_tsv(const MetricReport& r, std::ostream& out) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", r.value);
  out << r.metric << '\t' << buf << '\t' << r.evaluated << '\t' << r.skipped << '\n';
}

inline void write_report_summary(const MetricReport& r, std::ostream& out) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", r.value);
  out << r.metric << " = " << buf << " over " << r.evaluated << " queries (" << r.skipped
      << " skipped without relevant passages)";
  if (r.evaluated == 0) out << " [no queries evaluated]";
  out << '\n';
}

}  // namespace rerank
