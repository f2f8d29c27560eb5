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

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "rerank/bm25.hpp"
#include "oracles.hpp"
#include "rerank/random.hpp"

namespace rerank {
namespace {

Collection make_collection(const std::vector<std::string>& texts) {
  Collection c;
  for (std::size_t i = 0; i < texts.size(); ++i) c.add({"doc" + std::to_string(i + 1), texts[i]});
  return c;
}

using testing::bm25_brute_force;

TEST(Analyze, Definition) {
  EXPECT_EQ(analyze("Hello, World!"), (std::vector<std::string>{"hello", "world"}));
  EXPECT_TRUE(analyze("").empty());
  EXPECT_EQ(analyze("BM25-tuned"), (std::vector<std::string>{"bm25", "tuned"}));
}

TEST(BuildIndex, HandCountedStatistics) {
  const auto idx = build_index(make_collection({"a b", "a a b", "c"}));
  EXPECT_EQ(idx.doc_count(), 3u);
  EXPECT_EQ(idx.df("a"), 2u);
  EXPECT_EQ(idx.df("b"), 2u);
  EXPECT_EQ(idx.df("c"), 1u);
  EXPECT_DOUBLE_EQ(idx.avg_doc_length(), 2.0);
  EXPECT_EQ(idx.tf("a", 1), 2u);
}

TEST(BuildIndex, SingleDoc) {
  const auto idx = build_index(make_collection({"x"}));
  EXPECT_DOUBLE_EQ(idx.avg_doc_length(), 1.0);
  EXPECT_EQ(idx.df("x"), 1u);
}

TEST(BuildIndex, EmptyTextCountsTowardsStatistics) {
  const auto idx = build_index(make_collection({"a b", ""}));
  EXPECT_EQ(idx.doc_count(), 2u);
  EXPECT_EQ(idx.doc_length(1), 0u);
  EXPECT_DOUBLE_EQ(idx.avg_doc_length(), 1.0);
}

TEST(BuildIndex, EmptyCollectionRejected) {
  EXPECT_THROW(build_index(Collection{}), ArgumentError);
  EXPECT_THROW(build_index(make_collection({"a"}), Bm25Params{0.9, 1.5}), ArgumentError);
}

TEST(Bm25Score, HandEvaluatedFormula) {
  const auto idx = build_index(make_collection({"a b", "a a b", "c"}));
  const Bm25Params p;
  // tf = 1 and dl = avgdl make the tf component exactly 1.
  EXPECT_NEAR(bm25_score(idx, {"a"}, 0, p), std::log(1.6), 1e-12);
  EXPECT_NEAR(bm25_score(idx, {"a"}, 0, p), 0.4700, 5e-5);
  EXPECT_EQ(bm25_score(idx, {"z"}, 0, p), 0.0);
  EXPECT_EQ(bm25_score(idx, {"a", "a"}, 0, p), bm25_score(idx, {"a"}, 0, p));
}

TEST(Search, OrderingMatchesBruteForce) {
  const auto c = make_collection({"a b", "a a b", "c"});
  const auto idx = build_index(c);
  const auto list = search(idx, {"q", "a"}, 10);
  ASSERT_EQ(list.entries.size(), 2u);
  EXPECT_EQ(list.entries[0].passage_id, "doc2");
  EXPECT_EQ(list.entries[1].passage_id, "doc1");
  EXPECT_GT(list.entries[0].score, list.entries[1].score);
  EXPECT_NO_THROW(validate(list));
}

TEST(Search, OnlyMatchingDoc) {
  const auto idx = build_index(make_collection({"a b", "a a b", "c"}));
  const auto list = search(idx, {"q", "c"}, 1);
  ASSERT_EQ(list.entries.size(), 1u);
  EXPECT_EQ(list.entries[0].passage_id, "doc3");
  EXPECT_EQ(list.entries[0].rank, 1u);
}

TEST(Search, NoMatchesGivesEmptyList) {
  const auto idx = build_index(make_collection({"a b", "a a b", "c"}));
  EXPECT_TRUE(search(idx, {"q", "zzz"}, 10).entries.empty());
  EXPECT_THROW(search(idx, {"q", "a"}, 0), ArgumentError);
}

TEST(Search, TiesBrokenByAscendingId) {
  Collection c;
  c.add({"b", "x y"});
  c.add({"a", "x y"});
  c.add({"c", "x y"});
  const auto list = search(build_index(c), {"q", "x"}, 2);
  ASSERT_EQ(list.entries.size(), 2u);
  EXPECT_EQ(list.entries[0].passage_id, "a");
  EXPECT_EQ(list.entries[1].passage_id, "b");
}

// Documents whose term counts are permutations of each other tie exactly,
// whatever the query term order.
TEST(Search, PermutedContributionsTieExactly) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int ta = static_cast<int>(uniform_between(rng, 1, 5));
    const int tb = static_cast<int>(uniform_between(rng, 1, 5));
    const int tc = static_cast<int>(uniform_between(rng, 1, 5));
    auto text = [](int a, int b, int c) {
      std::string s;
      for (int i = 0; i < a; ++i) s += "a ";
      for (int i = 0; i < b; ++i) s += "b ";
      for (int i = 0; i < c; ++i) s += "c ";
      return s + "z";
    };
    Collection col;
    col.add({"p3", text(tc, ta, tb)});
    col.add({"p1", text(ta, tb, tc)});
    col.add({"p2", text(tb, tc, ta)});
    col.add({"p0", "y"});
    const Bm25Params params{uniform_unit(rng) * 2.0, uniform_unit(rng)};
    const auto idx = build_index(col, params);
    for (const char* q : {"a b c", "c b a", "b a c"}) {
      const auto list = search(idx, {"q", q}, 10);
      ASSERT_EQ(list.entries.size(), 3u);
      EXPECT_EQ(list.entries[0].score, list.entries[1].score);
      EXPECT_EQ(list.entries[1].score, list.entries[2].score);
      EXPECT_EQ(list.entries[0].passage_id, "p1");
      EXPECT_EQ(list.entries[1].passage_id, "p2");
      EXPECT_EQ(list.entries[2].passage_id, "p3");
    }
  }
}

// Full-depth search agrees with per-document formula evaluation.
TEST(Bm25Property, OracleEquivalence) {
  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const auto [c, vocab] = testing::random_bm25_corpus(rng);
    const Bm25Params params{uniform_unit(rng) * 2.0, uniform_unit(rng)};
    const auto idx = build_index(c, params);
    for (int q = 0; q < 5; ++q) {
      const auto query = testing::random_bm25_query(rng, vocab);
      const auto got = search(idx, {"q", query}, c.size());
      const auto want = bm25_brute_force(c, query, params.k1, params.b);
      ASSERT_EQ(got.entries.size(), want.size());
      for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_EQ(got.entries[i].passage_id, want[i].first);
        EXPECT_NEAR(got.entries[i].score, want[i].second, 1e-9);
      }
    }
  }
}

// With the document length pinned, one more occurrence raises the score.
TEST(Bm25Property, TermFrequencyMonotone) {
  const auto idx = build_index(make_collection({"a b c d", "a a b", "c d e"}));
  const Bm25Params p;
  for (std::uint32_t dl : {1u, 3u, 10u}) {
    double prev = 0;
    for (std::uint32_t tf = 1; tf < 20; ++tf) {
      const double w = idx.tf_weight(tf, dl, p);
      EXPECT_GT(w, prev);
      prev = w;
    }
  }
}

TEST(Bm25Property, IdfNonNegative) {
  std::vector<std::string> texts(50, "w");
  const auto idx = build_index(make_collection(texts));
  for (std::size_t df = 1; df <= idx.doc_count(); ++df) EXPECT_GE(idx.idf(df), 0.0);
}

TEST(IndexSnapshot, RoundTripIsStable) {
  const auto c = make_collection({"alpha beta", "beta gamma gamma", "", "delta"});
  const auto idx = build_index(c, {1.2, 0.75});
  std::stringstream a;
  idx.save(a);
  const auto bytes = a.str();
  const auto back = InvertedIndex::load(a);
  std::stringstream b;
  back.save(b);
  EXPECT_EQ(bytes, b.str());
  EXPECT_DOUBLE_EQ(back.params().k1, 1.2);
  EXPECT_EQ(back.df("gamma"), 1u);
  EXPECT_EQ(back.tf("gamma", 1), 2u);
  const auto s1 = search(idx, {"q", "beta gamma"}, 10);
  const auto s2 = search(back, {"q", "beta gamma"}, 10);
  ASSERT_EQ(s1.entries.size(), s2.entries.size());
  for (std::size_t i = 0; i < s1.entries.size(); ++i) {
    EXPECT_EQ(s1.entries[i].passage_id, s2.entries[i].passage_id);
    EXPECT_EQ(s1.entries[i].score, s2.entries[i].score);
  }
}

TEST(IndexSnapshot, CorruptInputRejected) {
  std::stringstream bad("NOTANIDX");
  EXPECT_THROW(InvertedIndex::load(bad), IoError);
  const auto idx = build_index(make_collection({"a b"}));
  std::stringstream full;
  idx.save(full);
  std::stringstream truncated(full.str().substr(0, full.str().size() - 3));
  EXPECT_THROW(InvertedIndex::load(truncated), IoError);
}

// Bounded-heap top-k over a 100k-passage collection stays under 50 ms/query.
TEST(SearchPerformance, HundredThousandDocsTopThousand) {
  Rng rng(5);
  Collection c;
  for (int d = 0; d < 100000; ++d) {
    std::string t;
    for (int i = 0; i < 40; ++i) {
      // Skewed term distribution so common terms carry long postings.
      const auto r = uniform_unit(rng);
      t += "w" + std::to_string(static_cast<int>(r * r * 5000)) + ' ';
    }
    c.add({std::to_string(d), t});
  }
  const auto idx = build_index(c);
  const int n_queries = 20;
  double total_ms = 0;
  for (int q = 0; q < n_queries; ++q) {
    std::string text;
    for (int i = 0; i < 8; ++i) text += "w" + std::to_string(uniform_below(rng, 200)) + ' ';
    const auto start = std::chrono::steady_clock::now();
    const auto list = search(idx, {"q", text}, 1000);
    total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    EXPECT_EQ(list.entries.size(), 1000u);
  }
  EXPECT_LT(total_ms / n_queries, 50.0);
}

}  // namespace
}  // namespace rerank
