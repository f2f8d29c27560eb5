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

#include "cli_util.hpp"
#include "rerank/corpus_io.hpp"

namespace rerank {
namespace {

using testing::run_cli;
using testing::TempDir;

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    for (const auto& c : testing::pipeline_commands()) {
      const auto r = run_cli(c, dir_->path());
      ASSERT_EQ(r.status, 0) << c << "\n" << r.err;
    }
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::filesystem::path at(const std::string& name) { return dir_->path() / name; }

  static TempDir* dir_;
};

TempDir* PipelineTest::dir_ = nullptr;

TEST_F(PipelineTest, EveryOutputHasAManifest) {
  for (const auto* out : {"index.bin", "train.run", "heldout.run", "bm25.tsv", "model.ckpt",
                          "reranked.run", "reranked.tsv", "curve.tsv"}) {
    ASSERT_TRUE(std::filesystem::exists(at(out))) << out;
    const auto manifest = testing::read_file(at(std::string(out) + ".manifest.json"));
    EXPECT_NE(manifest.find("\"command\""), std::string::npos) << out;
    EXPECT_NE(manifest.find("\"seed\""), std::string::npos) << out;
  }
  EXPECT_TRUE(std::filesystem::exists(at("data/manifest.json")));
  EXPECT_TRUE(std::filesystem::exists(at("model.ckpt.vocab")));
  EXPECT_TRUE(std::filesystem::exists(at("model.ckpt.step3")));
  EXPECT_TRUE(std::filesystem::exists(at("model.ckpt.step6")));
}

TEST_F(PipelineTest, SearchRespectsK) {
  const auto run = load_run(at("heldout.run"));
  EXPECT_FALSE(run.empty());
  for (const auto& l : run) EXPECT_LE(l.entries.size(), 20u);
}

TEST_F(PipelineTest, TrainLogHasOneRowPerStep) {
  const auto log = testing::read_file(at("model.ckpt.log.tsv"));
  EXPECT_EQ(log.rfind("step\tlr\tloss\n", 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 7);
}

TEST_F(PipelineTest, RerankIsAPermutationPerQuery) {
  const auto first = load_run(at("heldout.run"));
  const auto second = load_run(at("reranked.run"));
  ASSERT_EQ(first.size(), second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    std::vector<std::string> a, b;
    for (const auto& e : first[i].entries) a.push_back(e.passage_id);
    for (const auto& e : second[i].entries) b.push_back(e.passage_id);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
}

TEST_F(PipelineTest, EvalReportFieldsSum) {
  const auto report = testing::read_file(at("bm25.tsv"));
  std::istringstream in(report);
  std::string header, metric;
  double value;
  std::size_t evaluated, skipped;
  std::getline(in, header);
  in >> metric >> value >> evaluated >> skipped;
  EXPECT_EQ(metric, "mrr@10");
  EXPECT_EQ(evaluated + skipped, load_run(at("heldout.run")).size());
}

TEST_F(PipelineTest, CurveHasOneRowPerSize) {
  EXPECT_EQ(testing::read_file(at("curve.tsv")).substr(0, 12), "pairs\tmrr10\n");
  const auto curve = testing::read_file(at("curve.tsv"));
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 3);
  EXPECT_NE(curve.find("\n16\t"), std::string::npos);
  EXPECT_NE(curve.find("\n32\t"), std::string::npos);
}

TEST_F(PipelineTest, ResumeWithNothingLeftIsIdentity) {
  const auto r = run_cli(
      "train --collection data/collection.tsv --queries data/train_queries.tsv --qrels "
      "data/qrels.txt --run train.run --out resumed.ckpt --resume model.ckpt --total-steps 6 "
      "--warmup-steps 6",
      dir_->path());
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(testing::read_file(at("resumed.ckpt")), testing::read_file(at("model.ckpt")));
}

TEST_F(PipelineTest, ResumeContinuesLikeAnUninterruptedRun) {
  const auto r = run_cli(
      "train --collection data/collection.tsv --queries data/train_queries.tsv --qrels "
      "data/qrels.txt --run train.run --out continued.ckpt --resume model.ckpt.step3 --vocab "
      "model.ckpt.vocab --total-steps 6 --batch-size 8 --lr 1e-3 --depth 50 "
      "--negatives-per-query 3",
      dir_->path());
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(testing::read_file(at("continued.ckpt")), testing::read_file(at("model.ckpt")));
}

TEST_F(PipelineTest, WarmupNotBelowTotalRejectedBeforeWork) {
  const auto r = run_cli(
      "train --collection data/collection.tsv --queries data/train_queries.tsv --qrels "
      "data/qrels.txt --run train.run --out never.ckpt --total-steps 10 --warmup-steps 10",
      dir_->path());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("warmup"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(at("never.ckpt")));
}

TEST_F(PipelineTest, ZeroInitCheckpointRanksByAscendingId) {
  // A zero learning rate leaves the zero-initialized head in place.
  auto r = run_cli(
      "train --collection data/collection.tsv --queries data/train_queries.tsv --qrels "
      "data/qrels.txt --run train.run --out zero.ckpt --total-steps 2 --lr 0 --hidden 16 --ff 32",
      dir_->path());
  ASSERT_EQ(r.status, 0) << r.err;
  r = run_cli(
      "rerank --checkpoint zero.ckpt --queries data/heldout_queries.tsv --collection "
      "data/collection.tsv --run heldout.run --out zero.run",
      dir_->path());
  ASSERT_EQ(r.status, 0) << r.err;
  for (const auto& l : load_run(at("zero.run"))) {
    for (std::size_t i = 1; i < l.entries.size(); ++i) {
      EXPECT_LT(l.entries[i - 1].passage_id, l.entries[i].passage_id);
      EXPECT_EQ(l.entries[i].score, 0.5);
    }
  }
}

TEST_F(PipelineTest, MissingCandidatePassageNamed) {
  const auto q = testing::read_file(at("data/heldout_queries.tsv"));
  const auto qid = q.substr(0, q.find('\t'));
  testing::write_file(at("bad.run"), qid + " Q0 no_such_passage 1 3.000000 x\n");
  const auto r = run_cli(
      "rerank --checkpoint model.ckpt --queries data/heldout_queries.tsv --collection "
      "data/collection.tsv --run bad.run --out bad_out.run",
      dir_->path());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("no_such_passage"), std::string::npos) << r.err;
}

TEST(Cli, PerfectRunScoresOne) {
  TempDir dir("cli_eval");
  testing::write_file(dir / "run", "q1 Q0 a 1 2.000000 t\nq1 Q0 b 2 1.000000 t\nq2 Q0 c 1 1.000000 t\n");
  testing::write_file(dir / "qrels", "q1 0 a 1\nq2 0 c 1\n");
  for (const auto* metric : {"mrr10", "map"}) {
    const auto r = run_cli(std::string("eval --run run --qrels qrels --metric ") + metric, dir.path());
    ASSERT_EQ(r.status, 0) << r.err;
    EXPECT_NE(r.out.find("= 1.0000 over 2 queries"), std::string::npos) << r.out;
  }
}

TEST(Cli, UnknownMetricListsOptions) {
  TempDir dir("cli_metric");
  testing::write_file(dir / "run", "q1 Q0 a 1 2.000000 t\n");
  testing::write_file(dir / "qrels", "q1 0 a 1\n");
  const auto r = run_cli("eval --run run --qrels qrels --metric ndcg", dir.path());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("mrr10"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("map"), std::string::npos) << r.err;
}

TEST(Cli, MissingInputNamesThePath) {
  TempDir dir("cli_missing");
  const auto r = run_cli("index --collection missing_collection.tsv --out x.bin", dir.path());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("missing_collection.tsv"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(dir / "x.bin"));
}

TEST(Cli, QueryMatchingNothingOmitted) {
  TempDir dir("cli_search");
  testing::write_file(dir / "c.tsv", "1\talpha beta\n2\tbeta gamma\n3\tdelta\n");
  testing::write_file(dir / "q.tsv", "q1\tbeta\nq2\tzzz\n");
  ASSERT_EQ(run_cli("index --collection c.tsv --out i.bin", dir.path()).status, 0);
  ASSERT_EQ(run_cli("search --index i.bin --queries q.tsv --out r.run", dir.path()).status, 0);
  const auto run = load_run(dir / "r.run");
  ASSERT_EQ(run.size(), 1u);
  EXPECT_EQ(run[0].query_id, "q1");
  EXPECT_EQ(run[0].entries.size(), 2u);
}

TEST(Cli, NonIncreasingSizesRejected) {
  TempDir dir("cli_curve");
  const auto r = run_cli(
      "learning-curve --collection c --train-queries t --heldout-queries h --qrels q --out o "
      "--sizes 5000,1000",
      dir.path());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("increasing"), std::string::npos) << r.err;
}

TEST(Cli, RerunsAreByteIdentical) {
  TempDir a("cli_det_a"), b("cli_det_b");
  for (const auto& c : testing::pipeline_commands()) {
    ASSERT_EQ(run_cli(c, a.path()).status, 0) << c;
    ASSERT_EQ(run_cli(c, b.path()).status, 0) << c;
  }
  const auto files = testing::list_files(a.path());
  ASSERT_EQ(files, testing::list_files(b.path()));
  EXPECT_GT(files.size(), 20u);
  for (const auto& f : files) {
    EXPECT_EQ(testing::read_file(a.path() / f), testing::read_file(b.path() / f)) << f;
  }
}

}  // namespace
}  // namespace rerank
