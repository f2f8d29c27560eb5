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
#include <filesystem>
#include <fstream>
#include <queue>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rerank/binary_io.hpp"
#include "rerank/corpus_io.hpp"
#include "rerank/error.hpp"
#include "rerank/text.hpp"

namespace rerank {

/// Okapi BM25 free parameters. Defaults are the Anserini ones.
struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;

  void validate() const {
    if (!(k1 >= 0.0) || !std::isfinite(k1)) throw ArgumentError("bm25: k1 must be >= 0");
    if (!(b >= 0.0 && b <= 1.0)) throw ArgumentError("bm25: b must lie in [0, 1]");
  }
};

struct Posting {
  std::uint32_t doc = 0;
  std::uint32_t tf = 0;
};

/// Immutable after construction; safe to search concurrently.
class InvertedIndex {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  InvertedIndex() = default;

  /// Throws ArgumentError on an empty collection.
  InvertedIndex(const Collection& collection, Bm25Params params) : params_(params) {
    params_.validate();
    if (collection.empty()) throw ArgumentError("bm25: cannot index an empty collection");
    std::unordered_map<std::string, std::uint32_t> tf;
    for (std::size_t doc = 0; doc < collection.size(); ++doc) {
      const auto terms = analyze(collection[doc].text);
      doc_ids_.push_back(collection[doc].id);
      doc_lengths_.push_back(static_cast<std::uint32_t>(terms.size()));
      tf.clear();
      for (const auto& t : terms) ++tf[t];
      // Insert in term order so term ids do not depend on hash iteration.
      std::vector<std::pair<std::string_view, std::uint32_t>> sorted(tf.begin(), tf.end());
      std::sort(sorted.begin(), sorted.end());
      for (const auto& [term, count] : sorted) {
        postings_[term_id_or_insert(term)].push_back(
            Posting{static_cast<std::uint32_t>(doc), count});
      }
    }
    finalize();
  }

  const Bm25Params& params() const { return params_; }
  std::size_t doc_count() const { return doc_ids_.size(); }
  double avg_doc_length() const { return avg_doc_length_; }
  std::uint32_t doc_length(std::size_t doc) const { return doc_lengths_.at(doc); }
  const std::string& doc_id(std::size_t doc) const { return doc_ids_.at(doc); }
  std::size_t vocabulary_size() const { return postings_.size(); }

  std::size_t df(std::string_view term) const {
    const auto* p = postings(term);
    return p == nullptr ? 0 : p->size();
  }

  /// Postings sorted by doc ordinal, or nullptr for an unseen term.
  const std::vector<Posting>* postings(std::string_view term) const {
    const auto it = term_ids_.find(std::string(term));
    return it == term_ids_.end() ? nullptr : &postings_[it->second];
  }

  std::uint32_t tf(std::string_view term, std::size_t doc) const {
    const auto* p = postings(term);
    if (p == nullptr) return 0;
    const auto it = std::lower_bound(p->begin(), p->end(), doc,
                                     [](const Posting& x, std::size_t d) { return x.doc < d; });
    return (it != p->end() && it->doc == doc) ? it->tf : 0;
  }

  /// Lucene-style non-negative idf.
  double idf(std::size_t df) const {
    const auto n = static_cast<double>(doc_count());
    const auto d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
  }

  /// Saturated, length-normalized term frequency component.
  double tf_weight(std::uint32_t tf, std::uint32_t doc_len, const Bm25Params& p) const {
    const double f = tf;
    const double norm = avg_doc_length_ > 0.0 ? doc_len / avg_doc_length_ : 0.0;
    return f * (p.k1 + 1.0) / (f + p.k1 * (1.0 - p.b + p.b * norm));
  }

  void save(std::ostream& out) const {
    out.write("RRBM25IX", 8);
    binio::write_u32(out, kFormatVersion);
    binio::write_f64(out, params_.k1);
    binio::write_f64(out, params_.b);
    binio::write_u64(out, doc_ids_.size());
    for (std::size_t d = 0; d < doc_ids_.size(); ++d) {
      binio::write_string(out, doc_ids_[d]);
      binio::write_u32(out, doc_lengths_[d]);
    }
    std::vector<std::pair<std::string_view, std::uint32_t>> terms(term_ids_.begin(),
                                                                  term_ids_.end());
    std::sort(terms.begin(), terms.end());
    binio::write_u64(out, terms.size());
    for (const auto& [term, id] : terms) {
      binio::write_string(out, std::string(term));
      const auto& list = postings_[id];
      binio::write_u64(out, list.size());
      for (const auto& p : list) {
        binio::write_u32(out, p.doc);
        binio::write_u32(out, p.tf);
      }
    }
  }

  static InvertedIndex load(std::istream& in) {
    binio::expect_magic(in, "RRBM25IX");
    const auto version = binio::read_u32(in);
    if (version != kFormatVersion) {
      throw IoError("unsupported index version " + std::to_string(version));
    }
    InvertedIndex idx;
    idx.params_.k1 = binio::read_f64(in);
    idx.params_.b = binio::read_f64(in);
    idx.params_.validate();
    const auto n = binio::read_u64(in);
    for (std::uint64_t d = 0; d < n; ++d) {
      idx.doc_ids_.push_back(binio::read_string(in));
      idx.doc_lengths_.push_back(binio::read_u32(in));
    }
    const auto n_terms = binio::read_u64(in);
    for (std::uint64_t t = 0; t < n_terms; ++t) {
      const auto term = binio::read_string(in);
      const auto len = binio::read_u64(in);
      if (len > n) throw IoError("posting list longer than the collection");
      auto& list = idx.postings_[idx.term_id_or_insert(term)];
      for (std::uint64_t i = 0; i < len; ++i) {
        Posting p;
        p.doc = binio::read_u32(in);
        p.tf = binio::read_u32(in);
        if (p.doc >= n || (!list.empty() && p.doc <= list.back().doc)) {
          throw IoError("corrupt posting list for term '" + term + "'");
        }
        list.push_back(p);
      }
    }
    idx.finalize();
    return idx;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    save(out);
    out.flush();
    if (!out) throw IoError("write failed for '" + path.string() + "'");
  }

  static InvertedIndex load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return load(in);
  }

 private:
  std::uint32_t term_id_or_insert(std::string_view term) {
    const auto [it, inserted] =
        term_ids_.emplace(std::string(term), static_cast<std::uint32_t>(postings_.size()));
    if (inserted) postings_.emplace_back();
    return it->second;
  }

  void finalize() {
    std::uint64_t total = 0;
    for (auto len : doc_lengths_) total += len;
    avg_doc_length_ =
        doc_lengths_.empty() ? 0.0 : static_cast<double>(total) / doc_lengths_.size();
  }

  Bm25Params params_;
  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> doc_lengths_;
  double avg_doc_length_ = 0.0;
  std::unordered_map<std::string, std::uint32_t> term_ids_;
  std::vector<std::vector<Posting>> postings_;
};

inline InvertedIndex build_index(const Collection& collection, Bm25Params params = {}) {
  return InvertedIndex(collection, params);
}

namespace detail {

inline std::vector<std::string> distinct_terms(const std::vector<std::string>& terms) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& t : terms) {
    if (seen.insert(t).second) out.push_back(t);
  }
  return out;
}

// Per-document sum of term contributions. The wide accumulator holds these
// sums exactly, so the rounded score does not depend on term order and equal
// contribution multisets give bit-identical scores.
using ScoreSum = __float128;

}  // namespace detail

/// Score of one document; repeated query terms count once and unknown terms
/// contribute nothing.
inline double bm25_score(const InvertedIndex& index, const std::vector<std::string>& query_terms,
                         std::size_t doc, const Bm25Params& params) {
  if (doc >= index.doc_count()) throw ArgumentError("bm25: doc ordinal out of range");
  detail::ScoreSum score = 0;
  for (const auto& t : detail::distinct_terms(query_terms)) {
    const auto tf = index.tf(t, doc);
    if (tf == 0) continue;
    score += index.idf(index.df(t)) * index.tf_weight(tf, index.doc_length(doc), params);
  }
  return static_cast<double>(score);
}

/// Top-k passages with positive score, best first, ties by ascending id.
/// Uses the parameters the index was built with.
inline RankedList search(const InvertedIndex& index, const Query& query, std::size_t k) {
  if (k == 0) throw ArgumentError("search: k must be >= 1");
  const auto& params = index.params();
  std::vector<detail::ScoreSum> sums(index.doc_count(), 0);
  std::vector<std::uint32_t> touched;
  for (const auto& t : detail::distinct_terms(analyze(query.text))) {
    const auto* list = index.postings(t);
    if (list == nullptr) continue;
    const double idf = index.idf(list->size());
    for (const auto& p : *list) {
      if (sums[p.doc] == 0) touched.push_back(p.doc);
      sums[p.doc] += idf * index.tf_weight(p.tf, index.doc_length(p.doc), params);
    }
  }

  std::vector<double> acc(index.doc_count(), 0.0);
  for (auto doc : touched) acc[doc] = static_cast<double>(sums[doc]);

  // true when a ranks strictly before b
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (acc[a] != acc[b]) return acc[a] > acc[b];
    return index.doc_id(a) < index.doc_id(b);
  };
  // Max-heap on "worse", so the root is the weakest of the current top-k.
  std::priority_queue<std::uint32_t, std::vector<std::uint32_t>, decltype(better)> heap(better);
  for (auto doc : touched) {
    if (!(acc[doc] > 0.0)) continue;
    if (heap.size() < k) {
      heap.push(doc);
    } else if (better(doc, heap.top())) {
      heap.pop();
      heap.push(doc);
    }
  }

  RankedList out{query.id, {}};
  out.entries.resize(heap.size());
  for (auto i = heap.size(); i > 0; --i) {
    const auto doc = heap.top();
    heap.pop();
    out.entries[i - 1] = RankedEntry{index.doc_id(doc), acc[doc], i};
  }
  return out;
}

}  // namespace rerank
