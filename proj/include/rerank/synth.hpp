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
#include <cstdint>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "rerank/corpus_io.hpp"
#include "rerank/error.hpp"
#include "rerank/random.hpp"

namespace rerank {

/// Shape of a generated keyword-matching dataset.
///
/// Every query is a set of distinct keywords. A passage is relevant to a
/// query iff it contains all of the query's keywords. Each query also gets
/// hard negatives that repeat all but one of its keywords several times,
/// which term-frequency scoring tends to rank above the true match. With a
/// single keyword per query there are no partial matches, so hard negatives
/// and background passages then carry no keywords.
struct SynthSpec {
  std::int64_t num_passages = 2000;
  std::int64_t num_queries = 250;
  std::int64_t vocab_words = 1000;
  std::int64_t passage_len_min = 12;
  std::int64_t passage_len_max = 24;
  std::int64_t relevant_per_query = 1;
  std::uint64_t seed = 7;

  std::int64_t keywords_per_query = 3;
  std::int64_t hard_negatives_per_query = 4;
  std::int64_t keyword_repeat = 6;
  /// Words reserved for queries; 0 selects vocab_words / 5.
  std::int64_t keyword_pool = 40;
};

struct SyntheticDataset {
  Collection collection;
  QuerySet queries;
  Qrels qrels;
};

namespace detail {

inline std::int64_t resolved_keyword_pool(const SynthSpec& s) {
  return s.keyword_pool > 0 ? s.keyword_pool : s.vocab_words / 5;
}

inline void validate_synth_spec(const SynthSpec& s) {
  if (s.num_passages <= 0 || s.num_queries <= 0 || s.vocab_words <= 0 ||
      s.relevant_per_query <= 0 || s.keywords_per_query <= 0 || s.keyword_repeat <= 0 ||
      s.hard_negatives_per_query < 0 || s.passage_len_min <= 0) {
    throw ArgumentError("synthetic spec: counts must be positive");
  }
  if (s.passage_len_max < s.passage_len_min) {
    throw ArgumentError("synthetic spec: passage length range is empty");
  }
  if (s.relevant_per_query > s.num_passages) {
    throw ArgumentError("synthetic spec: relevant_per_query (" +
                        std::to_string(s.relevant_per_query) + ") exceeds num_passages (" +
                        std::to_string(s.num_passages) + ")");
  }
  if (s.num_queries * (s.relevant_per_query + s.hard_negatives_per_query) > s.num_passages) {
    throw ArgumentError("synthetic spec: num_passages too small for queries' relevant and "
                        "hard-negative passages");
  }
  const auto pool = resolved_keyword_pool(s);
  if (pool <= s.keywords_per_query) {
    throw ArgumentError("synthetic spec: keyword pool must exceed keywords_per_query");
  }
  if (s.vocab_words - pool < 1) {
    throw ArgumentError("synthetic spec: no words left for filler");
  }
  // Distinct keyword sets must exist for every query.
  double combos = 1.0;
  for (std::int64_t i = 0; i < s.keywords_per_query; ++i) {
    combos = combos * static_cast<double>(pool - i) / static_cast<double>(i + 1);
  }
  if (combos < 2.0 * static_cast<double>(s.num_queries)) {
    throw ArgumentError("synthetic spec: keyword pool too small for distinct queries");
  }
}

// Pronounceable lowercase pseudo-words, unique within the returned list.
inline std::vector<std::string> make_words(Rng& rng, std::int64_t count) {
  static constexpr char kConsonants[] = "bcdfghjklmnprstvwz";
  static constexpr char kVowels[] = "aeiou";
  std::vector<std::string> words;
  std::unordered_set<std::string> seen;
  while (static_cast<std::int64_t>(words.size()) < count) {
    const auto syllables = uniform_between(rng, 2, 3);
    std::string w;
    for (std::int64_t i = 0; i < syllables; ++i) {
      w.push_back(kConsonants[uniform_below(rng, sizeof kConsonants - 1)]);
      w.push_back(kVowels[uniform_below(rng, sizeof kVowels - 1)]);
    }
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += words[i];
  }
  return out;
}

}  // namespace detail

/// Deterministic under spec.seed. Throws ArgumentError for infeasible specs.
inline SyntheticDataset generate_synthetic_dataset(const SynthSpec& spec) {
  detail::validate_synth_spec(spec);
  Rng rng(spec.seed);

  const auto pool_size = detail::resolved_keyword_pool(spec);
  auto words = detail::make_words(rng, spec.vocab_words);
  const std::vector<std::string> keywords(words.begin(), words.begin() + pool_size);
  const std::vector<std::string> filler(words.begin() + pool_size, words.end());
  const auto k = static_cast<std::size_t>(spec.keywords_per_query);

  auto pad_and_shuffle = [&](std::vector<std::string> tokens) {
    const auto target = uniform_between(rng, spec.passage_len_min, spec.passage_len_max);
    while (static_cast<std::int64_t>(tokens.size()) < target) {
      tokens.push_back(filler[uniform_below(rng, filler.size())]);
    }
    shuffle(tokens, rng);
    return detail::join_words(tokens);
  };

  // Passage texts paired with the query they are relevant to (-1 for none).
  std::vector<std::pair<std::string, std::int64_t>> passages;
  std::vector<std::vector<std::string>> query_keywords;
  std::set<std::vector<std::size_t>> used_sets;

  for (std::int64_t q = 0; q < spec.num_queries; ++q) {
    std::vector<std::size_t> picked;
    do {
      std::vector<std::size_t> candidate;
      while (candidate.size() < k) {
        const auto w = static_cast<std::size_t>(uniform_below(rng, keywords.size()));
        if (std::find(candidate.begin(), candidate.end(), w) == candidate.end()) {
          candidate.push_back(w);
        }
      }
      std::sort(candidate.begin(), candidate.end());
      if (used_sets.insert(candidate).second) picked = std::move(candidate);
    } while (picked.empty());

    std::vector<std::string> kw;
    for (auto w : picked) kw.push_back(keywords[w]);

    for (std::int64_t r = 0; r < spec.relevant_per_query; ++r) {
      passages.emplace_back(pad_and_shuffle(kw), q);
    }
    for (std::int64_t h = 0; h < spec.hard_negatives_per_query; ++h) {
      const auto dropped = uniform_below(rng, k);
      std::vector<std::string> tokens;
      for (std::size_t i = 0; i < k; ++i) {
        if (i == dropped) continue;
        for (std::int64_t rep = 0; rep < spec.keyword_repeat; ++rep) tokens.push_back(kw[i]);
      }
      passages.emplace_back(pad_and_shuffle(std::move(tokens)), -1);
    }
    shuffle(kw, rng);
    query_keywords.push_back(std::move(kw));
  }

  // Background passages mimic both the relevant layout (k distinct keywords,
  // once each) and the hard-negative layout (k - 1 keywords, repeated), so
  // layout alone says nothing about relevance. A distinct-layout draw that
  // would complete some query's keyword set is rejected.
  while (static_cast<std::int64_t>(passages.size()) < spec.num_passages) {
    const bool repeated = k > 1 && uniform_below(rng, 2) == 0;
    const std::size_t n_kw = k == 1 ? 0 : (repeated ? k - 1 : k);
    std::vector<std::size_t> picked;
    while (picked.size() < n_kw) {
      const auto w = static_cast<std::size_t>(uniform_below(rng, keywords.size()));
      if (std::find(picked.begin(), picked.end(), w) == picked.end()) picked.push_back(w);
    }
    std::sort(picked.begin(), picked.end());
    if (n_kw == k && used_sets.count(picked)) continue;
    std::vector<std::string> tokens;
    for (auto w : picked) {
      const auto reps = repeated ? spec.keyword_repeat : 1;
      for (std::int64_t r = 0; r < reps; ++r) tokens.push_back(keywords[w]);
    }
    passages.emplace_back(pad_and_shuffle(std::move(tokens)), -1);
  }

  shuffle(passages, rng);

  SyntheticDataset ds;
  for (std::int64_t q = 0; q < spec.num_queries; ++q) {
    ds.queries.add(Query{"q" + std::to_string(q), detail::join_words(query_keywords[q])});
  }
  for (std::size_t i = 0; i < passages.size(); ++i) {
    const auto id = std::to_string(i);
    ds.collection.add(Passage{id, passages[i].first});
    if (passages[i].second >= 0) ds.qrels.add("q" + std::to_string(passages[i].second), id);
  }
  return ds;
}

}  // namespace rerank
