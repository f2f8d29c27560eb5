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
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rerank/corpus_io.hpp"
#include "rerank/error.hpp"
#include "rerank/text.hpp"

namespace rerank {

using TokenId = std::int32_t;

/// Subword vocabulary. Reserved pieces occupy ids 0..3, followed by the bare
/// and "##"-continuation forms of every ASCII letter and digit, followed by
/// whole words.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr std::size_t kReserved = 4;
  static constexpr std::size_t kCharacterPieces = 2 * 36;
  static constexpr std::size_t kMinSize = kReserved + kCharacterPieces;
  static constexpr std::size_t kMaxWordChars = 100;

  /// Reserved tokens plus character pieces.
  static Vocab base() {
    Vocab v;
    for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) v.add_piece(s);
    const std::string chars = "abcdefghijklmnopqrstuvwxyz0123456789";
    for (char c : chars) v.add_piece(std::string(1, c));
    for (char c : chars) v.add_piece("##" + std::string(1, c));
    return v;
  }

  /// Returns the id of `piece`, adding it if absent.
  TokenId add_piece(const std::string& piece) {
    const auto [it, inserted] = ids_.emplace(piece, static_cast<TokenId>(pieces_.size()));
    if (inserted) pieces_.push_back(piece);
    return it->second;
  }

  std::optional<TokenId> find(std::string_view piece) const {
    const auto it = ids_.find(std::string(piece));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(std::string_view piece) const { return find(piece).has_value(); }
  const std::string& piece(TokenId id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return pieces_.size(); }

  /// One piece per line; the line number is the token id.
  void save(const std::filesystem::path& path) const {
    auto out = detail::open_output(path);
    for (const auto& p : pieces_) out << p << '\n';
    detail::check_written(out, path);
  }

  static Vocab load(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    Vocab v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!is_valid_utf8(line)) throw ParseError(path.string(), lineno, "invalid UTF-8");
      if (line.empty()) throw ParseError(path.string(), lineno, "empty piece");
      if (v.contains(line)) throw ParseError(path.string(), lineno, "duplicate piece '" + line + "'");
      v.add_piece(line);
    }
    const auto ref = base();
    if (v.size() < kMinSize) throw ParseError(path.string(), lineno, "vocabulary is truncated");
    for (std::size_t i = 0; i < kMinSize; ++i) {
      if (v.pieces_[i] != ref.pieces_[i]) {
        throw ParseError(path.string(), i + 1, "expected reserved piece '" + ref.pieces_[i] + "'");
      }
    }
    return v;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.pieces_ == b.pieces_; }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Reserved and character pieces, then the most frequent words of the
/// collection and queries (ties in lexicographic order) up to max_size.
inline Vocab build_vocab(const Collection& collection, const QuerySet& queries,
                         std::size_t max_size) {
  if (max_size < Vocab::kMinSize) {
    throw ArgumentError("vocab: max_size " + std::to_string(max_size) + " is below the " +
                        std::to_string(Vocab::kMinSize) + " reserved and character pieces");
  }
  std::map<std::string, std::uint64_t> freq;
  for (const auto& p : collection) {
    for (auto& w : analyze(p.text)) ++freq[std::move(w)];
  }
  for (const auto& q : queries) {
    for (auto& w : analyze(q.text)) ++freq[std::move(w)];
  }
  std::vector<std::pair<std::string, std::uint64_t>> words(freq.begin(), freq.end());
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  auto vocab = Vocab::base();
  for (const auto& [word, count] : words) {
    if (vocab.size() >= max_size) break;
    if (word.size() > Vocab::kMaxWordChars || vocab.contains(word)) continue;
    vocab.add_piece(word);
  }
  return vocab;
}

/// Greedy longest-match-first subword split. A word with any unmatched
/// position becomes a single [UNK].
inline std::vector<TokenId> wordpiece(std::string_view word, const Vocab& vocab) {
  if (word.empty()) return {};
  if (word.size() > Vocab::kMaxWordChars) return {Vocab::kUnk};
  std::vector<TokenId> out;
  std::size_t start = 0;
  std::string candidate;
  while (start < word.size()) {
    std::optional<TokenId> match;
    std::size_t end = word.size();
    for (; end > start; --end) {
      candidate.assign(start > 0 ? "##" : "");
      candidate.append(word.substr(start, end - start));
      match = vocab.find(candidate);
      if (match) break;
    }
    if (!match) return {Vocab::kUnk};
    out.push_back(*match);
    start = end;
  }
  return out;
}

/// Pre-tokenize with the shared analyzer, then split each word into pieces.
inline std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> out;
  for (const auto& w : analyze(text)) {
    const auto pieces = wordpiece(w, vocab);
    out.insert(out.end(), pieces.begin(), pieces.end());
  }
  return out;
}

/// Joins pieces back into words, gluing "##" continuations to their head.
inline std::vector<std::string> decode_words(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::vector<std::string> words;
  for (auto id : ids) {
    const auto& p = vocab.piece(id);
    if (p.size() > 2 && p.compare(0, 2, "##") == 0 && !words.empty()) {
      words.back() += p.substr(2);
    } else {
      words.push_back(p);
    }
  }
  return words;
}

/// [CLS] query [SEP] passage [SEP], with segment ids and an attention mask.
struct EncodedPair {
  std::vector<TokenId> token_ids;
  std::vector<std::uint8_t> segment_ids;
  std::vector<std::uint8_t> mask;
  std::size_t length = 0;  // real (unpadded) tokens

  std::size_t padded_length() const { return token_ids.size(); }
};

struct PairLimits {
  std::size_t max_query = 64;
  std::size_t max_total = 512;
};

/// Tail-truncates the query to max_query pieces and the passage so the
/// packed sequence fits max_total. No padding is added.
inline EncodedPair encode_pair(std::string_view query_text, std::string_view passage_text,
                               const Vocab& vocab, PairLimits limits = {}) {
  if (limits.max_query + 3 > limits.max_total) {
    throw ArgumentError("encode_pair: max_query + 3 exceeds max_total");
  }
  auto a = tokenize(query_text, vocab);
  if (a.size() > limits.max_query) a.resize(limits.max_query);
  auto b = tokenize(passage_text, vocab);
  const auto room = limits.max_total - a.size() - 3;
  if (b.size() > room) b.resize(room);

  EncodedPair e;
  e.token_ids.reserve(a.size() + b.size() + 3);
  e.token_ids.push_back(Vocab::kCls);
  e.token_ids.insert(e.token_ids.end(), a.begin(), a.end());
  e.token_ids.push_back(Vocab::kSep);
  e.segment_ids.assign(e.token_ids.size(), 0);
  e.token_ids.insert(e.token_ids.end(), b.begin(), b.end());
  e.token_ids.push_back(Vocab::kSep);
  e.segment_ids.resize(e.token_ids.size(), 1);
  e.mask.assign(e.token_ids.size(), 1);
  e.length = e.token_ids.size();
  return e;
}

/// Pads every pair with [PAD] (segment 0, mask 0) to the longest in the batch.
inline void pad_batch(std::vector<EncodedPair>& batch, std::size_t min_length = 0) {
  std::size_t len = min_length;
  for (const auto& e : batch) len = std::max(len, e.padded_length());
  for (auto& e : batch) {
    e.token_ids.resize(len, Vocab::kPad);
    e.segment_ids.resize(len, 0);
    e.mask.resize(len, 0);
  }
}

}  // namespace rerank
