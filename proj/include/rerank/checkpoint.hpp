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

// Checkpoint layout (all integers unsigned little-endian, reals IEEE-754
// binary64 little-endian):
//
//   "RRMODEL1"                        8-byte magic
//   u32  version                      currently 1
//   u64  num_layers, num_heads, hidden, ff, vocab_size, max_positions
//   f64  dropout
//   u64  seed
//   u64  tensor count, then per tensor:
//          u64 name length, name bytes, u64 rows, u64 cols, rows*cols f64
//   u64  has_optimizer (0 or 1); when 1:
//          u64 optimizer step, then every first-moment tensor's values, then
//          every second-moment tensor's values, in tensor order.

#include <filesystem>
#include <fstream>
#include <optional>

#include "rerank/binary_io.hpp"
#include "rerank/error.hpp"
#include "rerank/model.hpp"
#include "rerank/optimizer.hpp"

namespace rerank {

template <typename T>
struct Checkpoint {
  Parameters<T> params;
  std::optional<OptimizerState<T>> optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(std::ostream& out, const Parameters<T>& params,
                     const OptimizerState<T>* optimizer = nullptr) {
  const auto& c = params.config;
  out.write("RRMODEL1", 8);
  binio::write_u32(out, kCheckpointVersion);
  for (auto v : {c.num_layers, c.num_heads, c.hidden, c.ff, c.vocab_size, c.max_positions}) {
    binio::write_u64(out, v);
  }
  binio::write_f64(out, c.dropout);
  binio::write_u64(out, c.seed);
  const auto tensors = params.tensors();
  binio::write_u64(out, tensors.size());
  for (const auto* t : tensors) {
    binio::write_string(out, t->name);
    binio::write_u64(out, t->rows);
    binio::write_u64(out, t->cols);
    for (auto v : t->data) binio::write_f64(out, static_cast<double>(v));
  }
  binio::write_u64(out, optimizer ? 1 : 0);
  if (optimizer) {
    binio::write_u64(out, optimizer->step);
    for (const auto* moments : {&optimizer->m, &optimizer->v}) {
      for (const auto* t : moments->tensors()) {
        for (auto v : t->data) binio::write_f64(out, static_cast<double>(v));
      }
    }
  }
}

template <typename T>
Checkpoint<T> load_checkpoint(std::istream& in) {
  binio::expect_magic(in, "RRMODEL1");
  const auto version = binio::read_u32(in);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.num_layers = binio::read_u64(in);
  c.num_heads = binio::read_u64(in);
  c.hidden = binio::read_u64(in);
  c.ff = binio::read_u64(in);
  c.vocab_size = binio::read_u64(in);
  c.max_positions = binio::read_u64(in);
  c.dropout = binio::read_f64(in);
  c.seed = binio::read_u64(in);
  c.validate();

  Checkpoint<T> ck{Parameters<T>(c), std::nullopt};
  auto tensors = ck.params.tensors();
  if (binio::read_u64(in) != tensors.size()) throw IoError("checkpoint: tensor count mismatch");
  for (auto* t : tensors) {
    const auto name = binio::read_string(in, 4096);
    const auto rows = binio::read_u64(in);
    const auto cols = binio::read_u64(in);
    if (name != t->name || rows != t->rows || cols != t->cols) {
      throw IoError("checkpoint: unexpected tensor '" + name + "', wanted '" + t->name + "'");
    }
    for (auto& v : t->data) v = static_cast<T>(binio::read_f64(in));
  }
  const auto has_optimizer = binio::read_u64(in);
  if (has_optimizer > 1) throw IoError("checkpoint: bad optimizer flag");
  if (has_optimizer == 1) {
    OptimizerState<T> state(ck.params);
    state.step = binio::read_u64(in);
    for (auto* moments : {&state.m, &state.v}) {
      for (auto* t : moments->tensors()) {
        for (auto& v : t->data) v = static_cast<T>(binio::read_f64(in));
      }
    }
    ck.optimizer = std::move(state);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("checkpoint: trailing bytes");
  return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Parameters<T>& params,
                     const OptimizerState<T>* optimizer = nullptr) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  save_checkpoint(out, params, optimizer);
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return load_checkpoint<T>(in);
}

}  // namespace rerank
