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

#include <algorithm>
#include <cstddef>
#include <vector>

#include "mfserve/model_io.hpp"

namespace mfserve {

struct ScoredItem {
    ItemId item = 0;
    double score = 0.0;

    friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};

/// Global ranking rule: higher score first, ascending item id on ties.
inline bool ranks_before(const ScoredItem& a, const ScoredItem& b) noexcept {
    return a.score > b.score || (a.score == b.score && a.item < b.item);
}

/// Bounded min-heap keeping the best `k` items under `ranks_before`.
/// The front of the heap is the current worst kept item.
class TopKHeap {
public:
    explicit TopKHeap(std::size_t k) : k_(k) { heap_.reserve(k); }

    bool full() const noexcept { return heap_.size() >= k_; }
    std::size_t size() const noexcept { return heap_.size(); }
    const ScoredItem& worst() const noexcept { return heap_.front(); }

    /// Number of push/replace operations performed so far.
    std::size_t heap_ops() const noexcept { return heap_ops_; }

    void offer(ItemId item, double score) {
        const ScoredItem cand{item, score};
        if (!full()) {
            heap_.push_back(cand);
            std::push_heap(heap_.begin(), heap_.end(), ranks_before);
            ++heap_ops_;
        } else if (k_ > 0 && ranks_before(cand, heap_.front())) {
            std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
            heap_.back() = cand;
            std::push_heap(heap_.begin(), heap_.end(), ranks_before);
            ++heap_ops_;
        }
    }

    /// Offers scores[j] for item id_of(j), j in [0, n). Equivalent to calling
    /// offer() for each, but skips the heap for scores below the current
    /// K-th score with a single comparison.
    template <typename IdOf>
    void offer_all(const double* scores, std::size_t n, IdOf id_of) {
        std::size_t j = 0;
        for (; j < n && !full(); ++j) offer(id_of(j), scores[j]);
        if (k_ == 0) return;
        double threshold = heap_.front().score;
        for (; j < n; ++j) {
            if (scores[j] >= threshold) {
                offer(id_of(j), scores[j]);
                threshold = heap_.front().score;
            }
        }
    }

    /// Drains the heap into best-first order.
    std::vector<ScoredItem> take_sorted() {
        std::sort_heap(heap_.begin(), heap_.end(), ranks_before);
        return std::move(heap_);
    }

private:
    std::size_t k_;
    std::size_t heap_ops_ = 0;
    std::vector<ScoredItem> heap_;
};

struct TopKResult {
    UserId user_id = 0;
    std::vector<ScoredItem> entries;
    /// Items whose true rating was computed for this user.
    std::size_t visited = 0;
};

}  // namespace mfserve
