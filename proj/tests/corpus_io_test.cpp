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

#include <sstream>

#include "rerank/corpus_io.hpp"
#include "rerank/random.hpp"
#include "rerank/synth.hpp"
#include "rerank/text.hpp"
#include "test_util.hpp"

namespace rerank {
namespace {

Collection collection_from(const std::string& s) {
  std::istringstream in(s);
  return parse_collection(in);
}

Qrels qrels_from(const std::string& s) {
  std::istringstream in(s);
  return parse_qrels(in);
}

Run run_from(const std::string& s) {
  std::istringstream in(s);
  return parse_run(in);
}

TEST(LoadCollection, ParsesIdAndText) {
  const auto c = collection_from("1\thello world\n2\tfoo\n");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].id, "1");
  EXPECT_EQ(c.at("1").text, "hello world");
  EXPECT_EQ(c[1].text, "foo");
}

TEST(LoadCollection, EmptyFileIsEmptyCollection) {
  EXPECT_TRUE(collection_from("").empty());
}

TEST(LoadCollection, DuplicateIdNamesTheId) {
  try {
    collection_from("1\ta\n1\tb\n");
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("'1'"), std::string::npos);
  }
}

TEST(LoadCollection, FromFile) {
  testing::TempDir dir("collection");
  testing::write_file(dir / "c.tsv", "a\tx y\nb\t\n");
  const auto c = load_collection(dir / "c.tsv");
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.at("b").text, "");
  EXPECT_THROW(load_collection(dir / "missing.tsv"), IoError);
}

TEST(LoadQueries, ParsesSingleQuery) {
  std::istringstream in("q1\twhat is bm25\n");
  const auto q = parse_queries(in);
  ASSERT_EQ(q.size(), 1u);
  EXPECT_EQ(q.at("q1").text, "what is bm25");
}

TEST(LoadQueries, ThreeFieldsIsParseErrorWithLine) {
  std::istringstream in("q0\tfine\nq1\ta\tb\n");
  try {
    parse_queries(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(LoadQueries, EmptyTextAccepted) {
  std::istringstream in("q1\t\n");
  const auto q = parse_queries(in);
  EXPECT_EQ(q.at("q1").text, "");
}

TEST(LoadQueries, InvalidUtf8Rejected) {
  std::istringstream in("q1\tcaf\xC3\n");
  EXPECT_THROW(parse_queries(in), ParseError);
  std::istringstream ok("q1\tcaf\xC3\xA9\n");
  EXPECT_EQ(parse_queries(ok).at("q1").text, "caf\xC3\xA9");
}

TEST(LoadQrels, SingleJudgment) {
  const auto q = qrels_from("q1 0 d3 1\n");
  EXPECT_EQ(q.relevant("q1"), (std::set<std::string>{"d3"}));
}

TEST(LoadQrels, NonRelevantIgnored) {
  EXPECT_TRUE(qrels_from("q1 0 d3 0\n").empty());
  EXPECT_TRUE(qrels_from("q1 0 d3 -1\n").empty());
}

TEST(LoadQrels, GradedCollapsesToBinary) {
  const auto q = qrels_from("q1 0 d3 1\nq1 0 d7 2\n");
  EXPECT_EQ(q.relevant("q1"), (std::set<std::string>{"d3", "d7"}));
}

TEST(LoadQrels, Errors) {
  EXPECT_THROW(qrels_from("q1 0 d3 yes\n"), ParseError);
  EXPECT_THROW(qrels_from("q1 0 d3\n"), ParseError);
  EXPECT_THROW(qrels_from("q1 0 d3 1.5\n"), ParseError);
}

TEST(WriteRun, FormatDefinition) {
  rerank::Run run{{"q1", {{"d2", 1.5, 1}, {"d9", 0.3, 2}}}};
  std::ostringstream out;
  write_run(run, "tag", out);
  EXPECT_EQ(out.str(), "q1 Q0 d2 1 1.500000 tag\nq1 Q0 d9 2 0.300000 tag\n");
}

TEST(WriteRun, EmptyRunIsEmptyFile) {
  std::ostringstream out;
  write_run(rerank::Run{}, "tag", out);
  EXPECT_EQ(out.str(), "");
}

TEST(LoadRun, RankGapIsIntegrityError) {
  EXPECT_THROW(run_from("q1 Q0 d1 1 2.0 t\nq1 Q0 d2 3 1.0 t\n"), IntegrityError);
}

TEST(LoadRun, ScoreInversionIsIntegrityError) {
  EXPECT_THROW(run_from("q1 Q0 d1 1 1.0 t\nq1 Q0 d2 2 2.0 t\n"), IntegrityError);
}

TEST(LoadRun, RankIsAuthoritativeOrder) {
  const auto run = run_from("q1 Q0 d2 2 1.0 t\nq2 Q0 x 1 5 t\nq1 Q0 d1 1 2.0 t\n");
  ASSERT_EQ(run.size(), 2u);
  EXPECT_EQ(run[0].query_id, "q1");
  EXPECT_EQ(run[0].entries[0].passage_id, "d1");
  EXPECT_EQ(run[0].entries[1].passage_id, "d2");
  EXPECT_EQ(run[1].query_id, "q2");
}

TEST(LoadRun, MalformedLines) {
  EXPECT_THROW(run_from("q1 Q0 d1 1 2.0\n"), ParseError);
  EXPECT_THROW(run_from("q1 Q0 d1 0 2.0 t\n"), ParseError);
  EXPECT_THROW(run_from("q1 Q0 d1 1 abc t\n"), ParseError);
}

// Any valid run survives write then load at the serialized precision.
TEST(RunProperty, RoundTrip) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    rerank::Run run;
    const auto n_queries = uniform_between(rng, 0, 5);
    for (std::int64_t q = 0; q < n_queries; ++q) {
      RankedList list{"q" + std::to_string(q), {}};
      double score = uniform_unit(rng) * 100.0;
      const auto n = uniform_between(rng, 1, 30);
      for (std::int64_t i = 0; i < n; ++i) {
        list.entries.push_back({"p" + std::to_string(i * 7 + q), score, 0});
        score -= uniform_unit(rng) * 3.0;
      }
      assign_ranks(list);
      run.push_back(list);
    }
    std::stringstream buf;
    write_run(run, "rt", buf);
    const auto back = parse_run(buf);
    ASSERT_EQ(back.size(), run.size());
    for (std::size_t q = 0; q < run.size(); ++q) {
      EXPECT_EQ(back[q].query_id, run[q].query_id);
      ASSERT_EQ(back[q].entries.size(), run[q].entries.size());
      for (std::size_t i = 0; i < run[q].entries.size(); ++i) {
        EXPECT_EQ(back[q].entries[i].passage_id, run[q].entries[i].passage_id);
        EXPECT_EQ(back[q].entries[i].rank, run[q].entries[i].rank);
        EXPECT_EQ(format_score(back[q].entries[i].score), format_score(run[q].entries[i].score));
      }
    }
  }
}

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec s;
  s.num_passages = 300;
  s.num_queries = 30;
  s.vocab_words = 200;
  s.seed = seed;
  return s;
}

std::string serialize(const SyntheticDataset& ds) {
  std::ostringstream out;
  for (const auto& p : ds.collection) out << p.id << '\t' << p.text << '\n';
  for (const auto& q : ds.queries) out << q.id << '\t' << q.text << '\n';
  write_qrels(ds.qrels, out);
  return out.str();
}

TEST(Synthetic, DeterministicUnderSeed) {
  EXPECT_EQ(serialize(generate_synthetic_dataset(small_spec(7))),
            serialize(generate_synthetic_dataset(small_spec(7))));
  EXPECT_NE(serialize(generate_synthetic_dataset(small_spec(7))),
            serialize(generate_synthetic_dataset(small_spec(8))));
}

TEST(Synthetic, InfeasibleSpecRejected) {
  auto s = small_spec(1);
  s.relevant_per_query = 5;
  s.num_passages = 3;
  EXPECT_THROW(generate_synthetic_dataset(s), ArgumentError);
  s = small_spec(1);
  s.num_queries = 0;
  EXPECT_THROW(generate_synthetic_dataset(s), ArgumentError);
}

// A passage is judged relevant for q iff it contains every keyword of q, and
// every query has exactly relevant_per_query relevant passages.
TEST(Synthetic, SoundnessByScan) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto spec = small_spec(seed);
    spec.relevant_per_query = 1 + static_cast<std::int64_t>(seed % 2);
    const auto ds = generate_synthetic_dataset(spec);
    ASSERT_EQ(ds.collection.size(), static_cast<std::size_t>(spec.num_passages));
    ASSERT_EQ(ds.queries.size(), static_cast<std::size_t>(spec.num_queries));
    for (const auto& q : ds.queries) {
      const auto kw = analyze(q.text);
      ASSERT_EQ(kw.size(), static_cast<std::size_t>(spec.keywords_per_query));
      std::size_t matches = 0;
      for (const auto& p : ds.collection) {
        const auto words = analyze(p.text);
        const bool all = std::all_of(kw.begin(), kw.end(), [&](const std::string& k) {
          return std::find(words.begin(), words.end(), k) != words.end();
        });
        EXPECT_EQ(all, ds.qrels.is_relevant(q.id, p.id)) << q.id << " / " << p.id;
        matches += all ? 1 : 0;
      }
      EXPECT_EQ(matches, static_cast<std::size_t>(spec.relevant_per_query));
    }
  }
}

TEST(Text, Utf8Validation) {
  EXPECT_TRUE(is_valid_utf8("plain"));
  EXPECT_TRUE(is_valid_utf8("\xE2\x82\xAC"));
  EXPECT_FALSE(is_valid_utf8("\xC0\xAF"));          // overlong
  EXPECT_FALSE(is_valid_utf8("\xED\xA0\x80"));      // surrogate
  EXPECT_FALSE(is_valid_utf8("\xF4\x90\x80\x80"));  // above U+10FFFF
  EXPECT_FALSE(is_valid_utf8("\x80"));
}

}  // namespace
}  // namespace rerank
