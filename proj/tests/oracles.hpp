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

// Brute-force reference implementations used as test oracles. They share no
// code with the library beyond the text analyzer and the record types.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rerank/corpus_io.hpp"
#include "rerank/random.hpp"
#include "rerank/text.hpp"

namespace rerank::testing {

/// Scores every document straight from the formula, without an index.
inline std::vector<std::pair<std::string, double>> bm25_brute_force(const Collection& c,
                                                                    const std::string& query,
                                                                    double k1, double b) {
  std::vector<std::vector<std::string>> docs;
  double total = 0;
  for (const auto& p : c) {
    docs.push_back(analyze(p.text));
    total += static_cast<double>(docs.back().size());
  }
  const double n = static_cast<double>(docs.size());
  const double avgdl = total / n;
  auto terms = analyze(query);
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

  std::vector<std::pair<std::string, double>> scored;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    std::vector<double> parts;
    for (const auto& t : terms) {
      double df = 0;
      for (const auto& other : docs) df += std::count(other.begin(), other.end(), t) > 0 ? 1 : 0;
      const double tf = static_cast<double>(std::count(docs[d].begin(), docs[d].end(), t));
      if (tf == 0) continue;
      const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
      const double dl = static_cast<double>(docs[d].size());
      parts.push_back(idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl)));
    }
    // Summing in value order makes equal contribution multisets tie exactly.
    std::sort(parts.begin(), parts.end());
    double score = 0;
    for (const double x : parts) score += x;
    if (score > 0) scored.emplace_back(c[d].id, score);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    return x.second != y.second ? x.second > y.second : x.first < y.first;
  });
  return scored;
}

/// Random corpus of up to `max_docs` documents over a vocabulary of at most
/// `max_vocab` terms. Returns the corpus and its vocabulary size.
inline std::pair<Collection, std::size_t> random_bm25_corpus(Rng& rng, std::int64_t max_docs = 200,
                                                             std::int64_t max_vocab = 20) {
  const auto n_docs = uniform_between(rng, 1, max_docs);
  const auto vocab = uniform_between(rng, 1, max_vocab);
  Collection c;
  for (std::int64_t d = 0; d < n_docs; ++d) {
    std::string t;
    const auto len = uniform_between(rng, 0, 12);
    for (std::int64_t i = 0; i < len; ++i) t += "t" + std::to_string(uniform_below(rng, vocab)) + " ";
    c.add({"doc" + std::to_string(d + 1), t});
  }
  return {std::move(c), static_cast<std::size_t>(vocab)};
}

inline std::string random_bm25_query(Rng& rng, std::size_t vocab) {
  std::string q;
  for (int i = 0; i < 3; ++i) q += "t" + std::to_string(uniform_below(rng, vocab + 2)) + " ";
  return q;
}

// Relevance flags of a ranked list, in rank order.
inline std::vector<bool> relevance_flags(const RankedList& l, const Qrels& qrels) {
  std::vector<bool> flags;
  for (const auto& e : l.entries) flags.push_back(qrels.is_relevant(l.query_id, e.passage_id));
  return flags;
}

/// Mean reciprocal rank of the first relevant passage within the top 10,
/// over queries with at least one judged-relevant passage.
inline double reference_mrr10(const Run& run, const Qrels& qrels) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& l : run) {
    if (qrels.relevant(l.query_id).empty()) continue;
    ++n;
    const auto flags = relevance_flags(l, qrels);
    for (std::size_t rank = 1; rank <= 10 && rank <= flags.size(); ++rank) {
      if (flags[rank - 1]) {
        sum += 1.0 / static_cast<double>(rank);
        break;
      }
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

/// Mean over judged queries of the average, over all judged-relevant
/// passages, of precision at the rank each is retrieved (0 if never).
inline double reference_map(const Run& run, const Qrels& qrels) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& l : run) {
    const auto& rel = qrels.relevant(l.query_id);
    if (rel.empty()) continue;
    ++n;
    const auto flags = relevance_flags(l, qrels);
    double ap = 0;
    for (std::size_t k = 1; k <= flags.size(); ++k) {
      if (!flags[k - 1]) continue;
      std::size_t hits = 0;
      for (std::size_t i = 0; i < k; ++i) hits += flags[i] ? 1 : 0;
      ap += static_cast<double>(hits) / static_cast<double>(k);
    }
    sum += ap / static_cast<double>(rel.size());
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

struct MetricInstance {
  Run run;
  Qrels qrels;
};

/// Random run and qrels with unjudged queries, empty lists, relevant
/// passages past rank 10 and relevant passages never retrieved.
inline MetricInstance random_metric_instance(Rng& rng) {
  MetricInstance inst;
  const auto n_queries = uniform_between(rng, 0, 8);
  for (std::int64_t q = 0; q < n_queries; ++q) {
    const std::string qid = "q" + std::to_string(q);
    const auto depth = uniform_between(rng, 0, 30);
    const auto pool = depth + uniform_between(rng, 0, 5);
    RankedList l{qid, {}};
    std::vector<std::size_t> ids(static_cast<std::size_t>(pool));
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    shuffle(ids, rng);
    for (std::int64_t r = 0; r < depth; ++r) {
      l.entries.push_back({"p" + std::to_string(ids[static_cast<std::size_t>(r)]),
                           static_cast<double>(depth - r), 0});
    }
    assign_ranks(l);
    inst.run.push_back(l);
    if (uniform_below(rng, 5) == 0) continue;  // unjudged
    const double density = uniform_unit(rng) * 0.3;
    for (std::int64_t p = 0; p < pool; ++p) {
      if (uniform_unit(rng) < density) inst.qrels.add(qid, "p" + std::to_string(p));
    }
    if (uniform_below(rng, 3) == 0) inst.qrels.add(qid, "unretrieved" + std::to_string(q));
  }
  return inst;
}

}  // namespace rerank::testing
