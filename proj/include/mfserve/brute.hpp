/*
 * Copyright 2026 The mfserve Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mfserve/model_io.hpp"
#include "mfserve/topk.hpp"

namespace mfserve {

/// Tile shape for the blocked user x item multiply.
struct BlockSpec {
    std::size_t user_block = 64;
    std::size_t item_block = 512;

    /// Tiles whose packed item panel plus one user tile fit in 256 KiB.
    static BlockSpec for_factors(std::size_t factors) noexcept;
};

struct MatmulStats {
    std::size_t pairs_scored = 0;
    std::size_t heap_ops = 0;
};

/// Item vectors of one tile transposed to factor-major order and padded to
/// the micro-kernel width.
struct PackedPanel {
    std::vector<double> values;
    std::size_t num_items = 0;
    std::size_t factors = 0;

    std::size_t stride() const noexcept;
};

/// Gathers `num_items` item rows (pointers, so callers may pick any subset).
void pack_panel(const double* const* item_rows, std::size_t num_items, std::size_t factors, PackedPanel& panel);

/// Scores every (user, panel item) pair into `out` (row-major, users x
/// panel.num_items). Each score is bit-identical to mfserve::dot.
void score_panel(const double* const* user_rows, std::size_t num_users, const PackedPanel& panel, double* out);

/// pack_panel followed by score_panel.
void score_tile(const double* const* user_rows, std::size_t num_users, const double* const* item_rows,
                std::size_t num_items, std::size_t factors, double* out, PackedPanel& scratch);

/// Reference oracle: full score vector per user, sorted under the ranking rule.
std::vector<TopKResult> topk_naive(const ModelPair& model, std::size_t k);

/// Blocked multiply with per-user bounded heaps carried across item tiles.
std::vector<TopKResult> topk_matmul(const ModelPair& model, std::size_t k, const BlockSpec& blocks,
                                    MatmulStats* stats = nullptr);

struct Throughput {
    double blocked_pairs_per_second = 0.0;
    double unblocked_pairs_per_second = 0.0;
};

/// Times topk_matmul and a per-user, per-pair scoring loop over the same work.
Throughput measure_throughput(const ModelPair& model, std::size_t k, const BlockSpec& blocks);

}  // namespace mfserve
