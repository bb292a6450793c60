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

#include "mfserve/brute.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>

#include "mfserve/error.hpp"

namespace mfserve {

namespace {

void check_k(std::size_t k) {
    if (k == 0) fail(ErrorCode::kInvalidArgument, "K must be at least 1");
}

}  // namespace

BlockSpec BlockSpec::for_factors(std::size_t factors) noexcept {
    // Budget in doubles: item panel (f x ni) + user tile (nu x f) + scores (nu x ni).
    constexpr std::size_t kBudget = 256 * 1024 / sizeof(double);
    constexpr std::size_t kUsers = 16;
    const std::size_t f = std::max<std::size_t>(factors, 1);
    const std::size_t spare = kBudget > kUsers * f ? kBudget - kUsers * f : 0;
    std::size_t items = spare / (f + kUsers);
    items = std::clamp<std::size_t>(items - items % 8, 8, 4096);
    return BlockSpec{kUsers, items};
}

namespace {

constexpr std::size_t kKernelItems = 8;
constexpr std::size_t kKernelUsers = 8;

typedef double Lane8 __attribute__((vector_size(kKernelItems * sizeof(double))));

// Register-blocked MR x 8 micro-kernel. Each lane still sums its own products
// in ascending factor order, so results match the scalar dot bit for bit.
template <std::size_t MR>
void kernel(const double* const* user_rows, const double* panel, std::size_t stride, std::size_t factors,
            std::size_t valid_items, double* out, std::size_t out_stride) {
    Lane8 acc[MR];
    for (std::size_t u = 0; u < MR; ++u) acc[u] = Lane8{};
    for (std::size_t k = 0; k < factors; ++k) {
        Lane8 col;
        std::memcpy(&col, panel + k * stride, sizeof col);
        for (std::size_t u = 0; u < MR; ++u) acc[u] += user_rows[u][k] * col;
    }
    if (valid_items == kKernelItems) {
        for (std::size_t u = 0; u < MR; ++u) std::memcpy(out + u * out_stride, &acc[u], sizeof(Lane8));
    } else {
        for (std::size_t u = 0; u < MR; ++u) {
            for (std::size_t j = 0; j < valid_items; ++j) out[u * out_stride + j] = acc[u][j];
        }
    }
}

}  // namespace

std::size_t PackedPanel::stride() const noexcept {
    return (num_items + kKernelItems - 1) / kKernelItems * kKernelItems;
}

void pack_panel(const double* const* item_rows, std::size_t num_items, std::size_t factors, PackedPanel& panel) {
    panel.num_items = num_items;
    panel.factors = factors;
    const std::size_t stride = panel.stride();
    panel.values.assign(factors * stride, 0.0);
    for (std::size_t j = 0; j < num_items; ++j) {
        const double* src = item_rows[j];
        for (std::size_t k = 0; k < factors; ++k) panel.values[k * stride + j] = src[k];
    }
}

void score_panel(const double* const* user_rows, std::size_t num_users, const PackedPanel& panel, double* out) {
    const std::size_t stride = panel.stride();
    const std::size_t n = panel.num_items;
    for (std::size_t u0 = 0; u0 < num_users; u0 += kKernelUsers) {
        const std::size_t mr = std::min(kKernelUsers, num_users - u0);
        for (std::size_t j0 = 0; j0 < n; j0 += kKernelItems) {
            const std::size_t nr = std::min(kKernelItems, n - j0);
            double* dst = out + u0 * n + j0;
            const double* p = panel.values.data() + j0;
            const auto* rows = user_rows + u0;
            switch (mr) {
                case 8: kernel<8>(rows, p, stride, panel.factors, nr, dst, n); break;
                case 7: kernel<7>(rows, p, stride, panel.factors, nr, dst, n); break;
                case 6: kernel<6>(rows, p, stride, panel.factors, nr, dst, n); break;
                case 5: kernel<5>(rows, p, stride, panel.factors, nr, dst, n); break;
                case 4: kernel<4>(rows, p, stride, panel.factors, nr, dst, n); break;
                case 3: kernel<3>(rows, p, stride, panel.factors, nr, dst, n); break;
                case 2: kernel<2>(rows, p, stride, panel.factors, nr, dst, n); break;
                default: kernel<1>(rows, p, stride, panel.factors, nr, dst, n); break;
            }
        }
    }
}

void score_tile(const double* const* user_rows, std::size_t num_users, const double* const* item_rows,
                std::size_t num_items, std::size_t factors, double* out, PackedPanel& scratch) {
    pack_panel(item_rows, num_items, factors, scratch);
    score_panel(user_rows, num_users, scratch, out);
}

std::vector<TopKResult> topk_naive(const ModelPair& model, std::size_t k) {
    check_k(k);
    const std::size_t n_items = model.items.rows();
    const std::size_t f = model.factors();
    const std::size_t keep = std::min(k, n_items);
    std::vector<TopKResult> out(model.users.rows());
    std::vector<ScoredItem> all(n_items);
    for (std::size_t u = 0; u < model.users.rows(); ++u) {
        const double* urow = model.users.row_ptr(u);
        for (std::size_t i = 0; i < n_items; ++i) {
            all[i] = ScoredItem{static_cast<ItemId>(i), dot(urow, model.items.row_ptr(i), f)};
        }
        std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), ranks_before);
        out[u].user_id = static_cast<UserId>(u);
        out[u].entries.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep));
        out[u].visited = n_items;
    }
    return out;
}

std::vector<TopKResult> topk_matmul(const ModelPair& model, std::size_t k, const BlockSpec& blocks,
                                    MatmulStats* stats) {
    check_k(k);
    const std::size_t n_users = model.users.rows();
    const std::size_t n_items = model.items.rows();
    const std::size_t f = model.factors();
    const std::size_t ub = std::max<std::size_t>(blocks.user_block, 1);
    const std::size_t ib = std::max<std::size_t>(blocks.item_block, 1);

    const std::size_t keep = std::min(k, n_items);
    std::vector<TopKHeap> heaps(n_users, TopKHeap(keep));
    std::vector<const double*> user_rows(n_users);
    for (std::size_t u = 0; u < n_users; ++u) user_rows[u] = model.users.row_ptr(u);
    std::vector<const double*> item_rows(ib);
    std::vector<double> scores(ub * ib);
    PackedPanel panel;
    MatmulStats local;

    for (std::size_t i0 = 0; i0 < n_items; i0 += ib) {
        const std::size_t ni = std::min(ib, n_items - i0);
        for (std::size_t i = 0; i < ni; ++i) item_rows[i] = model.items.row_ptr(i0 + i);
        pack_panel(item_rows.data(), ni, f, panel);
        for (std::size_t u0 = 0; u0 < n_users; u0 += ub) {
            const std::size_t nu = std::min(ub, n_users - u0);
            score_panel(user_rows.data() + u0, nu, panel, scores.data());
            for (std::size_t u = 0; u < nu; ++u) {
                const double* row = scores.data() + u * ni;
                heaps[u0 + u].offer_all(row, ni, [i0](std::size_t i) { return static_cast<ItemId>(i0 + i); });
            }
        }
    }

    std::vector<TopKResult> out(n_users);
    for (std::size_t u = 0; u < n_users; ++u) {
        local.heap_ops += heaps[u].heap_ops();
        out[u].user_id = static_cast<UserId>(u);
        out[u].entries = heaps[u].take_sorted();
        out[u].visited = n_items;
    }
    local.pairs_scored = n_users * n_items;
    if (stats) *stats = local;
    return out;
}

Throughput measure_throughput(const ModelPair& model, std::size_t k, const BlockSpec& blocks) {
    check_k(k);
    if (model.users.empty() || model.items.empty()) fail(ErrorCode::kInvalidArgument, "cannot time an empty model");
    using clock = std::chrono::steady_clock;
    const double pairs = static_cast<double>(model.users.rows()) * static_cast<double>(model.items.rows());
    const std::size_t f = model.factors();
    constexpr double kMinSeconds = 1e-9;

    auto t0 = clock::now();
    auto blocked = topk_matmul(model, k, blocks);
    auto t1 = clock::now();

    std::size_t sink = 0;
    for (std::size_t u = 0; u < model.users.rows(); ++u) {
        TopKHeap heap(std::min(k, model.items.rows()));
        const double* urow = model.users.row_ptr(u);
        for (std::size_t i = 0; i < model.items.rows(); ++i) {
            heap.offer(static_cast<ItemId>(i), dot(urow, model.items.row_ptr(i), f));
        }
        sink += heap.take_sorted().front().item;
    }
    auto t2 = clock::now();
    // Keep both result sets observable so neither loop is elided.
    sink += blocked.front().entries.front().item;
    volatile std::size_t keep = sink;
    (void)keep;

    const double blocked_s = std::max(std::chrono::duration<double>(t1 - t0).count(), kMinSeconds);
    const double unblocked_s = std::max(std::chrono::duration<double>(t2 - t1).count(), kMinSeconds);
    return Throughput{pairs / blocked_s, pairs / unblocked_s};
}

}  // namespace mfserve
