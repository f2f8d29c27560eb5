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

#include "rerank/bm25.hpp"
#include "rerank/checkpoint.hpp"
#include "rerank/corpus_io.hpp"
#include "rerank/error.hpp"
#include "rerank/eval.hpp"
#include "rerank/model.hpp"
#include "rerank/optimizer.hpp"
#include "rerank/pipeline.hpp"
#include "rerank/synth.hpp"
#include "rerank/text.hpp"
#include "rerank/tokenizer.hpp"
#include "rerank/train.hpp"
