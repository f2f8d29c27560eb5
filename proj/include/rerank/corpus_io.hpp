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
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rerank/error.hpp"
#include "rerank/text.hpp"

namespace rerank {

struct Passage {
  std::string id;
  std::string text;
};

struct Query {
  std::string id;
  std::string text;
};

/// Ordered id/text records with unique ids and O(1) lookup by id.
template <typename Record>
class RecordTable {
 public:
  /// Throws IntegrityError on an empty or duplicate id.
  void add(Record record) {
    if (record.id.empty()) throw IntegrityError("empty record id");
    const auto [it, inserted] = index_.emplace(record.id, records_.size());
    if (!inserted) throw IntegrityError("duplicate id '" + record.id + "'");
    records_.push_back(std::move(record));
  }

  const Record* find(std::string_view id) const {
    const auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  const Record& at(std::string_view id) const {
    const auto* r = find(id);
    if (r == nullptr) throw IntegrityError("unknown id '" + std::string(id) + "'");
    return *r;
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const Record& operator[](std::size_t i) const { return records_[i]; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

 private:
  std::vector<Record> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Collection = RecordTable<Passage>;
using QuerySet = RecordTable<Query>;

/// Binary relevance judgments: query id -> non-empty set of relevant passage ids.
class Qrels {
 public:
  void add(const std::string& query_id, const std::string& passage_id) {
    judgments_[query_id].insert(passage_id);
  }

  /// Empty set for queries without judgments.
  const std::set<std::string>& relevant(const std::string& query_id) const {
    static const std::set<std::string> kEmpty;
    const auto it = judgments_.find(query_id);
    return it == judgments_.end() ? kEmpty : it->second;
  }

  bool is_relevant(const std::string& query_id, const std::string& passage_id) const {
    return relevant(query_id).count(passage_id) > 0;
  }

  std::size_t size() const { return judgments_.size(); }
  bool empty() const { return judgments_.empty(); }
  const std::map<std::string, std::set<std::string>>& judgments() const { return judgments_; }

 private:
  std::map<std::string, std::set<std::string>> judgments_;
};

struct RankedEntry {
  std::string passage_id;
  double score = 0.0;
  std::size_t rank = 0;
};

struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;
};

using Run = std::vector<RankedList>;

/// Throws IntegrityError unless ranks are 1..n, scores are non-increasing and
/// passage ids are distinct.
inline void validate(const RankedList& list) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < list.entries.size(); ++i) {
    const auto& e = list.entries[i];
    if (e.rank != i + 1) {
      throw IntegrityError("query '" + list.query_id + "': rank " + std::to_string(e.rank) +
                           " at position " + std::to_string(i + 1));
    }
    if (i > 0 && e.score > list.entries[i - 1].score) {
      throw IntegrityError("query '" + list.query_id + "': score inversion at rank " +
                           std::to_string(e.rank));
    }
    if (!seen.insert(e.passage_id).second) {
      throw IntegrityError("query '" + list.query_id + "': duplicate passage '" +
                           e.passage_id + "'");
    }
  }
}

/// Assigns ranks 1..n to entries already in final order.
inline void assign_ranks(RankedList& list) {
  for (std::size_t i = 0; i < list.entries.size(); ++i) list.entries[i].rank = i + 1;
}

namespace detail {

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

inline void check_written(std::ostream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

template <typename Record>
RecordTable<Record> parse_tsv_records(std::istream& in, const std::string& source) {
  RecordTable<Record> table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!is_valid_utf8(line)) throw ParseError(source, lineno, "invalid UTF-8");
    const auto fields = split(line, '\t');
    if (fields.size() != 2) {
      throw ParseError(source, lineno,
                       "expected 2 tab-separated fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw ParseError(source, lineno, "empty id");
    try {
      table.add(Record{std::string(fields[0]), std::string(fields[1])});
    } catch (const IntegrityError& e) {
      throw IntegrityError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return table;
}

template <typename Record>
void write_tsv_records(const RecordTable<Record>& table, std::ostream& out) {
  for (const auto& r : table) out << r.id << '\t' << r.text << '\n';
}

template <typename Int>
bool parse_int(std::string_view s, Int& value) {
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  return ec == std::errc() && ptr == end;
}

inline bool parse_double(const std::string& s, double& value) {
  if (s.empty()) return false;
  char* end = nullptr;
  value = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace detail

// Collections and query sets: `id<TAB>text` per line.

inline Collection parse_collection(std::istream& in, const std::string& source = "<collection>") {
  return detail::parse_tsv_records<Passage>(in, source);
}

inline Collection load_collection(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_collection(in, path.string());
}

inline QuerySet parse_queries(std::istream& in, const std::string& source = "<queries>") {
  return detail::parse_tsv_records<Query>(in, source);
}

inline QuerySet load_queries(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_queries(in, path.string());
}

inline void write_collection(const Collection& c, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  detail::write_tsv_records(c, out);
  detail::check_written(out, path);
}

inline void write_queries(const QuerySet& q, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  detail::write_tsv_records(q, out);
  detail::check_written(out, path);
}

// Qrels: TREC `qid 0 pid rel`; rel >= 1 is relevant, rel <= 0 is ignored.

inline Qrels parse_qrels(std::istream& in, const std::string& source = "<qrels>") {
  Qrels qrels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!is_valid_utf8(line)) throw ParseError(source, lineno, "invalid UTF-8");
    const auto fields = split_whitespace(line);
    if (fields.size() != 4) {
      throw ParseError(source, lineno, "expected 4 fields, got " + std::to_string(fields.size()));
    }
    long rel = 0;
    if (!detail::parse_int(fields[3], rel)) {
      throw ParseError(source, lineno, "non-integer relevance '" + std::string(fields[3]) + "'");
    }
    if (rel >= 1) qrels.add(std::string(fields[0]), std::string(fields[2]));
  }
  return qrels;
}

inline Qrels load_qrels(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_qrels(in, path.string());
}

inline void write_qrels(const Qrels& qrels, std::ostream& out) {
  for (const auto& [qid, pids] : qrels.judgments()) {
    for (const auto& pid : pids) out << qid << " 0 " << pid << " 1\n";
  }
}

inline void write_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  write_qrels(qrels, out);
  detail::check_written(out, path);
}

// Run files: TREC `qid Q0 pid rank score tag`, score with 6 decimals.

inline std::string format_score(double score) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", score);
  return buf;
}

inline void write_run(const Run& run, const std::string& tag, std::ostream& out) {
  for (const auto& list : run) {
    validate(list);
    for (const auto& e : list.entries) {
      out << list.query_id << " Q0 " << e.passage_id << ' ' << e.rank << ' '
          << format_score(e.score) << ' ' << tag << '\n';
    }
  }
}

inline void write_run(const Run& run, const std::string& tag, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  write_run(run, tag, out);
  detail::check_written(out, path);
}

/// Queries keep their first-appearance order; entries are ordered by rank.
inline Run parse_run(std::istream& in, const std::string& source = "<run>") {
  Run run;
  std::unordered_map<std::string, std::size_t> slot;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!is_valid_utf8(line)) throw ParseError(source, lineno, "invalid UTF-8");
    const auto f = split_whitespace(line);
    if (f.size() != 6) {
      throw ParseError(source, lineno, "expected 6 fields, got " + std::to_string(f.size()));
    }
    std::size_t rank = 0;
    if (!detail::parse_int(f[3], rank) || rank == 0) {
      throw ParseError(source, lineno, "bad rank '" + std::string(f[3]) + "'");
    }
    double score = 0.0;
    if (!detail::parse_double(std::string(f[4]), score)) {
      throw ParseError(source, lineno, "bad score '" + std::string(f[4]) + "'");
    }
    const std::string qid(f[0]);
    auto [it, inserted] = slot.emplace(qid, run.size());
    if (inserted) run.push_back(RankedList{qid, {}});
    run[it->second].entries.push_back(RankedEntry{std::string(f[2]), score, rank});
  }
  for (auto& list : run) {
    std::stable_sort(list.entries.begin(), list.entries.end(),
                     [](const RankedEntry& a, const RankedEntry& b) { return a.rank < b.rank; });
    try {
      validate(list);
    } catch (const IntegrityError& e) {
      throw IntegrityError(source + ": " + e.what());
    }
  }
  return run;
}

inline Run load_run(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_run(in, path.string());
}

}  // namespace rerank
