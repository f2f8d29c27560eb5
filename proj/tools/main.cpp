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

// rerank: command-line driver for the BM25 + cross-encoder pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rerank/rerank.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rerank;

namespace {

constexpr const char* kVersion = "0.1.0";

// Records the resolved value of every flag of a subcommand.
json resolved_flags(const CLI::App& sub) {
  json flags = json::object();
  for (const auto* opt : sub.get_options()) {
    if (opt->get_name() == "--help" || opt->get_lnames().empty()) continue;
    const auto& name = opt->get_lnames().front();
    if (opt->count() > 0) {
      const auto& results = opt->results();
      flags[name] = results.size() == 1 ? json(results.front()) : json(results);
    } else {
      flags[name] = opt->get_default_str();
    }
  }
  return flags;
}

void write_manifest(const fs::path& path, const CLI::App& sub, std::uint64_t seed,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
  json m;
  m["command"] = sub.get_name();
  m["flags"] = resolved_flags(sub);
  m["seed"] = seed;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["version"] = kVersion;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << m.dump(2) << '\n';
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

fs::path manifest_for(const std::string& output) { return output + ".manifest.json"; }

struct SynthFlags {
  SynthSpec spec;
  std::int64_t heldout = 50;
  std::string out_dir;
};

struct IndexFlags {
  std::string collection, out;
  Bm25Params bm25;
};

struct SearchFlags {
  std::string index, queries, out, tag = "bm25";
  std::size_t k = 1000;
};

// Model, optimizer and sampling flags shared by train and learning-curve.
struct TrainFlags {
  std::size_t layers = 2, heads = 2, hidden = 32, ff = 64, max_positions = 512;
  double dropout = 0.1;
  double lr = 3e-6, weight_decay = 0.01;
  std::uint64_t warmup_steps = 0, total_steps = 2000;
  std::size_t batch_size = 32, depth = 1000, negatives_per_query = 20;
  std::size_t max_vocab = 30000, max_query_tokens = 64, max_seq_len = 512;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  FineTuneSetup setup() const {
    FineTuneSetup s;
    s.model.num_layers = layers;
    s.model.num_heads = heads;
    s.model.hidden = hidden;
    s.model.ff = ff;
    s.model.max_positions = max_positions;
    s.model.dropout = dropout;
    s.model.seed = seed;
    s.hyper.base_lr = lr;
    s.hyper.weight_decay = weight_decay;
    s.hyper.total_steps = total_steps;
    s.hyper.warmup_steps = warmup_steps;
    s.train.batch_size = batch_size;
    s.train.seed = seed;
    s.train.threads = threads;
    s.train.limits = {max_query_tokens, max_seq_len};
    s.max_vocab = max_vocab;
    s.depth = depth;
    s.negatives_per_query = negatives_per_query;
    s.sample_seed = seed;
    return s;
  }
};

struct TrainCmdFlags {
  TrainFlags train;
  std::string collection, queries, qrels, run, out, vocab_out, log, resume, vocab;
  std::uint64_t checkpoint_every = 0;
};

struct RerankFlags {
  std::string checkpoint, vocab, queries, collection, run, out, tag = "rerank";
  std::size_t depth = 0, batch_size = 64, threads = 1, max_query_tokens = 64, max_seq_len = 512;
};

struct EvalFlags {
  std::string run, qrels, metric = "mrr10", out;
  std::size_t cutoff = 0;
};

struct CurveFlags {
  TrainFlags train;
  std::string collection, train_queries, heldout_queries, qrels, out;
  std::vector<std::uint64_t> sizes{1000, 5000, 20000};
  Bm25Params bm25;
  std::size_t candidates = 1000, rerank_depth = 1000;
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  sub->add_option("--layers", f.layers, "Encoder layers");
  sub->add_option("--heads", f.heads, "Attention heads");
  sub->add_option("--hidden", f.hidden, "Hidden size");
  sub->add_option("--ff", f.ff, "Feed-forward size");
  sub->add_option("--max-positions", f.max_positions, "Position embeddings");
  sub->add_option("--dropout", f.dropout, "Dropout rate");
  sub->add_option("--lr", f.lr, "Peak learning rate");
  sub->add_option("--weight-decay", f.weight_decay, "Decoupled weight decay");
  sub->add_option("--warmup-steps", f.warmup_steps, "Warmup steps (0: 10% of total)");
  sub->add_option("--total-steps", f.total_steps, "Training steps");
  sub->add_option("--batch-size", f.batch_size, "Pairs per step");
  sub->add_option("--depth", f.depth, "Candidates negatives are drawn from");
  sub->add_option("--negatives-per-query", f.negatives_per_query, "Negatives per query");
  sub->add_option("--max-vocab", f.max_vocab, "Vocabulary size limit");
  sub->add_option("--max-query-tokens", f.max_query_tokens, "Query piece limit");
  sub->add_option("--max-seq-len", f.max_seq_len, "Packed sequence limit");
  sub->add_option("--seed", f.seed, "Seed for init, sampling, shuffling and dropout");
  sub->add_option("--threads", f.threads, "Worker threads");
}

OptimizerHyper resolved_hyper(const FineTuneSetup& s) {
  auto h = s.hyper;
  if (h.warmup_steps == 0) h.warmup_steps = default_warmup(h.total_steps);
  return h;
}

void cmd_synth(const CLI::App& sub, const SynthFlags& f) {
  if (f.heldout < 0 || f.heldout >= f.spec.num_queries) {
    throw ArgumentError("--heldout must lie in [0, num-queries)");
  }
  const auto ds = generate_synthetic_dataset(f.spec);
  const fs::path dir(f.out_dir);
  fs::create_directories(dir);
  QuerySet train_q, held_q;
  const auto n_train = static_cast<std::size_t>(f.spec.num_queries - f.heldout);
  for (std::size_t i = 0; i < ds.queries.size(); ++i) {
    (i < n_train ? train_q : held_q).add(ds.queries[i]);
  }
  const std::vector<std::string> outputs{"collection.tsv", "queries.tsv", "qrels.txt",
                                         "train_queries.tsv", "heldout_queries.tsv"};
  write_collection(ds.collection, dir / outputs[0]);
  write_queries(ds.queries, dir / outputs[1]);
  write_qrels(ds.qrels, dir / outputs[2]);
  write_queries(train_q, dir / outputs[3]);
  write_queries(held_q, dir / outputs[4]);
  std::vector<std::string> paths;
  for (const auto& o : outputs) paths.push_back((dir / o).string());
  write_manifest(dir / "manifest.json", sub, f.spec.seed, {}, paths);
  std::cout << "synth: " << ds.collection.size() << " passages, " << train_q.size() << " train + "
            << held_q.size() << " held-out queries -> " << dir.string() << '\n';
}

void cmd_index(const CLI::App& sub, const IndexFlags& f) {
  f.bm25.validate();
  const auto collection = load_collection(f.collection);
  const auto index = build_index(collection, f.bm25);
  index.save(f.out);
  write_manifest(manifest_for(f.out), sub, 0, {f.collection}, {f.out});
  std::cout << "index: " << index.doc_count() << " passages, " << index.vocabulary_size()
            << " terms -> " << f.out << '\n';
}

void cmd_search(const CLI::App& sub, const SearchFlags& f) {
  if (f.k == 0) throw ArgumentError("--k must be >= 1");
  const auto index = InvertedIndex::load(fs::path(f.index));
  const auto queries = load_queries(f.queries);
  const auto run = retrieve(index, queries, f.k);
  write_run(run, f.tag, fs::path(f.out));
  write_manifest(manifest_for(f.out), sub, 0, {f.index, f.queries}, {f.out});
  std::cout << "search: " << run.size() << " of " << queries.size() << " queries matched -> "
            << f.out << '\n';
}

void cmd_train(const CLI::App& sub, const TrainCmdFlags& f) {
  const auto setup = f.train.setup();
  auto hyper = resolved_hyper(setup);
  std::optional<Checkpoint<double>> resumed;
  if (f.resume.empty()) {
    hyper.validate();
    setup.model.validate();
  } else {
    resumed = load_checkpoint<double>(fs::path(f.resume));
    if (!resumed->optimizer) {
      throw StateError("checkpoint '" + f.resume + "' has no optimizer state to resume from");
    }
    if (resumed->optimizer->step < hyper.total_steps) hyper.validate();
  }

  const auto collection = load_collection(f.collection);
  const auto queries = load_queries(f.queries);
  const auto qrels = load_qrels(f.qrels);
  const auto first_stage = load_run(f.run);

  Vocab vocab = Vocab::base();
  Parameters<double> params;
  OptimizerState<double> state;
  std::vector<std::string> inputs{f.collection, f.queries, f.qrels, f.run};
  if (resumed) {
    const auto vocab_path = f.vocab.empty() ? f.resume + ".vocab" : f.vocab;
    vocab = Vocab::load(vocab_path);
    params = std::move(resumed->params);
    state = std::move(*resumed->optimizer);
    inputs.push_back(f.resume);
    inputs.push_back(vocab_path);
  } else {
    vocab = build_vocab(collection, queries, setup.max_vocab);
    auto config = setup.model;
    config.vocab_size = vocab.size();
    params = init_params<double>(config);
    state = OptimizerState<double>(params);
  }

  const auto examples = sample_training_pairs(qrels, first_stage, setup.depth,
                                              setup.negatives_per_query, setup.sample_seed);
  auto opts = setup.train;
  std::vector<std::string> outputs{f.out};
  if (f.checkpoint_every > 0) {
    opts.checkpoint_every = f.checkpoint_every;
    opts.on_checkpoint = [&](std::uint64_t step, const Parameters<double>& p,
                             const OptimizerState<double>& s) {
      const auto path = f.out + ".step" + std::to_string(step);
      save_checkpoint(fs::path(path), p, &s);
      outputs.push_back(path);
    };
  }
  const auto log = train(params, state, examples, collection, queries, vocab, hyper, opts);

  save_checkpoint(fs::path(f.out), params, &state);
  const auto vocab_out = f.vocab_out.empty() ? f.out + ".vocab" : f.vocab_out;
  vocab.save(vocab_out);
  const auto log_path = f.log.empty() ? f.out + ".log.tsv" : f.log;
  {
    std::ofstream out(log_path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + log_path + "'");
    write_train_log(log, out);
    out.flush();
    if (!out) throw IoError("write failed for '" + log_path + "'");
  }
  outputs.push_back(vocab_out);
  outputs.push_back(log_path);
  write_manifest(manifest_for(f.out), sub, f.train.seed, inputs, outputs);
  std::cout << "train: " << examples.size() << " pairs, " << log.size() << " steps run, step "
            << state.step << " of " << hyper.total_steps;
  if (!log.empty()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", log.back().loss);
    std::cout << ", last loss " << buf;
  }
  std::cout << " -> " << f.out << '\n';
}

void cmd_rerank(const CLI::App& sub, const RerankFlags& f) {
  const auto ck = load_checkpoint<double>(fs::path(f.checkpoint));
  const auto vocab_path = f.vocab.empty() ? f.checkpoint + ".vocab" : f.vocab;
  const auto vocab = Vocab::load(vocab_path);
  if (vocab.size() != ck.params.config.vocab_size) {
    throw IntegrityError("vocabulary '" + vocab_path + "' does not match checkpoint '" +
                         f.checkpoint + "'");
  }
  const auto queries = load_queries(f.queries);
  const auto collection = load_collection(f.collection);
  const auto first_stage = truncate_run(load_run(f.run), f.depth);
  RerankOptions opts;
  opts.batch_size = f.batch_size;
  opts.threads = f.threads;
  opts.limits = {f.max_query_tokens, f.max_seq_len};
  const auto run = rerank_run(ck.params, vocab, queries, collection, first_stage, opts);
  write_run(run, f.tag, fs::path(f.out));
  write_manifest(manifest_for(f.out), sub, ck.params.config.seed,
                 {f.checkpoint, vocab_path, f.queries, f.collection, f.run}, {f.out});
  std::cout << "rerank: " << run.size() << " queries -> " << f.out << '\n';
}

void cmd_eval(const CLI::App& sub, const EvalFlags& f) {
  if (f.metric != "mrr10" && f.metric != "map") {
    throw ArgumentError("unknown metric '" + f.metric + "'; valid options: mrr10, map");
  }
  const auto run = load_run(f.run);
  const auto qrels = load_qrels(f.qrels);
  const auto report = f.metric == "mrr10" ? mrr_at_10(run, qrels) : map_metric(run, qrels, f.cutoff);
  write_report_summary(report, std::cout);
  if (!f.out.empty()) {
    std::ofstream out(f.out, std::ios::binary);
    if (!out) throw IoError("cannot write '" + f.out + "'");
    out << "metric\tvalue\tevaluated\tskipped\n";
    write_report_tsv(report, out);
    out.flush();
    if (!out) throw IoError("write failed for '" + f.out + "'");
    write_manifest(manifest_for(f.out), sub, 0, {f.run, f.qrels}, {f.out});
  }
}

void cmd_learning_curve(const CLI::App& sub, const CurveFlags& f) {
  f.bm25.validate();
  validate_curve_sizes(f.sizes);
  const auto setup = f.train.setup();
  setup.model.validate();
  if (f.candidates == 0) throw ArgumentError("--candidates must be >= 1");
  const auto collection = load_collection(f.collection);
  const auto train_q = load_queries(f.train_queries);
  const auto held_q = load_queries(f.heldout_queries);
  const auto qrels = load_qrels(f.qrels);
  const auto index = build_index(collection, f.bm25);
  const auto train_run = retrieve(index, train_q, f.candidates);
  const auto held_run = truncate_run(retrieve(index, held_q, f.candidates), f.rerank_depth);
  RerankOptions ropts;
  ropts.threads = f.train.threads;
  ropts.limits = setup.train.limits;
  const auto points =
      learning_curve(collection, train_q, train_run, held_q, held_run, qrels, f.sizes, setup, ropts);

  std::ofstream out(f.out, std::ios::binary);
  if (!out) throw IoError("cannot write '" + f.out + "'");
  out << "pairs\tmrr10\n";
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.6f", p.mrr10);
    out << p.pairs << '\t' << buf << '\n';
  }
  out.flush();
  if (!out) throw IoError("write failed for '" + f.out + "'");
  write_manifest(manifest_for(f.out), sub, f.train.seed,
                 {f.collection, f.train_queries, f.heldout_queries, f.qrels}, {f.out});
  std::snprintf(buf, sizeof buf, "%.4f", mrr_at_10(held_run, qrels).value);
  std::cout << "learning-curve: BM25 held-out MRR@10 " << buf << '\n';
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.4f", p.mrr10);
    std::cout << "  " << p.pairs << " pairs (" << p.steps << " steps): MRR@10 " << buf << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BM25 retrieval and cross-encoder re-ranking"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthFlags synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic keyword-matching dataset");
  s->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  s->add_option("--num-passages", synth.spec.num_passages, "Passages");
  s->add_option("--num-queries", synth.spec.num_queries, "Queries");
  s->add_option("--heldout", synth.heldout, "Queries held out from training");
  s->add_option("--vocab-words", synth.spec.vocab_words, "Distinct words");
  s->add_option("--passage-len-min", synth.spec.passage_len_min, "Minimum passage length");
  s->add_option("--passage-len-max", synth.spec.passage_len_max, "Maximum passage length");
  s->add_option("--relevant-per-query", synth.spec.relevant_per_query, "Relevant passages per query");
  s->add_option("--keywords-per-query", synth.spec.keywords_per_query, "Keywords per query");
  s->add_option("--hard-negatives-per-query", synth.spec.hard_negatives_per_query,
                "Near-miss passages per query");
  s->add_option("--keyword-repeat", synth.spec.keyword_repeat, "Keyword repetitions in near misses");
  s->add_option("--keyword-pool", synth.spec.keyword_pool, "Words reserved for queries");
  s->add_option("--seed", synth.spec.seed, "Seed");

  IndexFlags index;
  auto* ix = app.add_subcommand("index", "Build a BM25 index");
  ix->add_option("--collection", index.collection, "Collection TSV")->required();
  ix->add_option("--out", index.out, "Index file")->required();
  ix->add_option("--k1", index.bm25.k1, "BM25 k1");
  ix->add_option("--b", index.bm25.b, "BM25 b");

  SearchFlags search_flags;
  auto* se = app.add_subcommand("search", "BM25 top-k retrieval");
  se->add_option("--index", search_flags.index, "Index file")->required();
  se->add_option("--queries", search_flags.queries, "Queries TSV")->required();
  se->add_option("--out", search_flags.out, "Run file")->required();
  se->add_option("--k", search_flags.k, "Passages per query");
  se->add_option("--tag", search_flags.tag, "Run tag");

  TrainCmdFlags train_flags;
  auto* tr = app.add_subcommand("train", "Fine-tune a cross-encoder on a first-stage run");
  tr->add_option("--collection", train_flags.collection, "Collection TSV")->required();
  tr->add_option("--queries", train_flags.queries, "Training queries TSV")->required();
  tr->add_option("--qrels", train_flags.qrels, "Relevance judgments")->required();
  tr->add_option("--run", train_flags.run, "First-stage run")->required();
  tr->add_option("--out", train_flags.out, "Checkpoint file")->required();
  tr->add_option("--vocab-out", train_flags.vocab_out, "Vocabulary file (default: <out>.vocab)");
  tr->add_option("--log", train_flags.log, "Training log (default: <out>.log.tsv)");
  tr->add_option("--resume", train_flags.resume, "Checkpoint to continue from");
  tr->add_option("--vocab", train_flags.vocab, "Vocabulary when resuming (default: <resume>.vocab)");
  tr->add_option("--checkpoint-every", train_flags.checkpoint_every, "Save every N steps (0: off)");
  add_train_flags(tr, train_flags.train);

  RerankFlags rerank_flags;
  auto* rr = app.add_subcommand("rerank", "Re-rank a first-stage run with a checkpoint");
  rr->add_option("--checkpoint", rerank_flags.checkpoint, "Checkpoint file")->required();
  rr->add_option("--vocab", rerank_flags.vocab, "Vocabulary (default: <checkpoint>.vocab)");
  rr->add_option("--queries", rerank_flags.queries, "Queries TSV")->required();
  rr->add_option("--collection", rerank_flags.collection, "Collection TSV")->required();
  rr->add_option("--run", rerank_flags.run, "First-stage run")->required();
  rr->add_option("--out", rerank_flags.out, "Output run")->required();
  rr->add_option("--depth", rerank_flags.depth, "Candidates re-ranked per query (0: all)");
  rr->add_option("--batch-size", rerank_flags.batch_size, "Pairs per forward pass");
  rr->add_option("--threads", rerank_flags.threads, "Worker threads");
  rr->add_option("--max-query-tokens", rerank_flags.max_query_tokens, "Query piece limit");
  rr->add_option("--max-seq-len", rerank_flags.max_seq_len, "Packed sequence limit");
  rr->add_option("--tag", rerank_flags.tag, "Run tag");

  EvalFlags eval_flags;
  auto* ev = app.add_subcommand("eval", "Score a run against judgments");
  ev->add_option("--run", eval_flags.run, "Run file")->required();
  ev->add_option("--qrels", eval_flags.qrels, "Relevance judgments")->required();
  ev->add_option("--metric", eval_flags.metric, "mrr10 or map");
  ev->add_option("--cutoff", eval_flags.cutoff, "MAP cutoff (0: full depth)");
  ev->add_option("--out", eval_flags.out, "TSV report");

  CurveFlags curve;
  curve.train.lr = 1e-3;
  auto* lc = app.add_subcommand("learning-curve", "Held-out MRR@10 against training pairs seen");
  lc->add_option("--collection", curve.collection, "Collection TSV")->required();
  lc->add_option("--train-queries", curve.train_queries, "Training queries TSV")->required();
  lc->add_option("--heldout-queries", curve.heldout_queries, "Held-out queries TSV")->required();
  lc->add_option("--qrels", curve.qrels, "Relevance judgments")->required();
  lc->add_option("--out", curve.out, "Curve TSV")->required();
  lc->add_option("--sizes", curve.sizes, "Training pairs per point")->delimiter(',');
  lc->add_option("--k1", curve.bm25.k1, "BM25 k1");
  lc->add_option("--b", curve.bm25.b, "BM25 b");
  lc->add_option("--candidates", curve.candidates, "First-stage depth");
  lc->add_option("--rerank-depth", curve.rerank_depth, "Held-out candidates re-ranked");
  add_train_flags(lc, curve.train);

  CLI11_PARSE(app, argc, argv);

  const auto* sub = app.get_subcommands().front();
  try {
    if (sub == s) cmd_synth(*s, synth);
    if (sub == ix) cmd_index(*ix, index);
    if (sub == se) cmd_search(*se, search_flags);
    if (sub == tr) cmd_train(*tr, train_flags);
    if (sub == rr) cmd_rerank(*rr, rerank_flags);
    if (sub == ev) cmd_eval(*ev, eval_flags);
    if (sub == lc) cmd_learning_curve(*lc, curve);
  } catch (const std::exception& e) {
    std::cerr << "rerank " << sub->get_name() << ": error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
