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
#include <filesystem>
#include <span>
#include <vector>

#include "mfserve/brute.hpp"
#include "mfserve/clustering.hpp"
#include "mfserve/model_io.hpp"
#include "mfserve/topk.hpp"

namespace mfserve {

inline constexpr std::size_t kDefaultBlock = 4096;

/// Upper bound on the norm-scaled rating (u . i) / |u| of item i for every
/// user within theta_b of the centroid:
///   |i| cos(theta_ic - theta_b)   if theta_b < theta_ic
///   |i|                           otherwise
/// Throws if an angle lies outside [0, pi] or the norm is negative.
double item_bound(double item_norm, double theta_ic, double theta_b);

struct ListEntry {
    ItemId item = 0;
    double bound = 0.0;

    friend bool operator==(const ListEntry&, const ListEntry&) = default;
};

struct AddUserResult {
    UserId user_id = 0;
    ClusterId cluster = 0;
    double theta_uc = 0.0;
    /// False when theta_b had to be raised and the cluster list rebuilt.
    bool served_by_index = true;
};

/// One list per cluster holding every item, sorted by descending bound
/// (ascending item id on ties). Storage is exactly clusters x items entries.
class CentroidIndex {
public:
    CentroidIndex() = default;

    const Clustering& clustering() const noexcept { return clustering_; }
    std::size_t num_clusters() const noexcept { return lists_.size(); }
    std::size_t num_items() const noexcept { return item_norms_.size(); }
    std::size_t factors() const noexcept { return clustering_.centroids.factors(); }
    std::size_t block_size() const noexcept { return block_; }
    std::size_t entry_count() const noexcept;

    std::span<const ListEntry> list(ClusterId c) const noexcept { return lists_[c]; }
    std::span<const double> item_norms() const noexcept { return item_norms_; }

    /// Absolute allowance added to each bound in the termination test so
    /// last-ulp rounding in the bound or the dot product never prunes a
    /// qualifying item.
    double bound_slack() const noexcept { return slack_; }

    friend CentroidIndex build_index(const ModelPair& model, Clustering clustering, std::size_t block);
    friend ItemId insert_item(CentroidIndex& index, ModelPair& model, std::span<const double> item);
    friend AddUserResult add_user(CentroidIndex& index, ModelPair& model, std::span<const double> user);
    friend void save_index(const CentroidIndex& index, const std::filesystem::path& path);
    friend CentroidIndex load_index(const std::filesystem::path& path);
    friend std::vector<ListEntry> cluster_list_for(const CentroidIndex& index, const FactorMatrix& items,
                                                   ClusterId c, double theta_b);

private:
    Clustering clustering_;
    std::vector<std::vector<ListEntry>> lists_;
    std::vector<double> item_norms_;
    std::size_t block_ = kDefaultBlock;
    double slack_ = 0.0;
};

/// Computes every cluster's sorted bound list. `block` is clamped to |I|.
CentroidIndex build_index(const ModelPair& model, Clustering clustering, std::size_t block = kDefaultBlock);

/// Recomputes the sorted list of cluster `c` as if its distortion were `theta_b`.
std::vector<ListEntry> cluster_list_for(const CentroidIndex& index, const FactorMatrix& items, ClusterId c,
                                        double theta_b);

/// Exact top-K for one indexed user by early-terminating list walk.
/// K larger than |I| returns every item ranked.
TopKResult query_user(const CentroidIndex& index, const ModelPair& model, UserId user, std::size_t k);

/// Exact top-K for a vector that is not part of the model. The vector is
/// routed to its nearest centroid; if it lies outside that cluster's theta_b
/// a temporary list with the raised distortion is used.
TopKResult query_vector(const CentroidIndex& index, const ModelPair& model, std::span<const double> user,
                        std::size_t k);

struct BatchOptions {
    bool work_sharing = true;
    std::size_t threads = 1;
    /// Tiles for the shared-prefix multiply; zero fields pick for_factors().
    BlockSpec blocks{0, 0};
};

/// Serves many users. With work sharing, the first B list items of each
/// cluster are scored for all of that cluster's users by one blocked multiply
/// and the per-user walks resume at position B. Results match query_user.
std::vector<TopKResult> query_batch(const CentroidIndex& index, const ModelPair& model,
                                    std::span<const UserId> users, std::size_t k, const BatchOptions& options = {});

/// Appends the item to the model and places it in every cluster list.
ItemId insert_item(CentroidIndex& index, ModelPair& model, std::span<const double> item);

/// Appends the user to the model and its nearest cluster; raises theta_b and
/// rebuilds that cluster's list when the user falls outside it.
AddUserResult add_user(CentroidIndex& index, ModelPair& model, std::span<const double> user);

// Sidecar file: "MFIDX001", u64 clusters, items, factors, users, block, then
// centroids, theta_b, assignment (u64), item norms and the lists (u64 id, f64 bound).
inline constexpr char kIndexMagic[8] = {'M', 'F', 'I', 'D', 'X', '0', '0', '1'};

void save_index(const CentroidIndex& index, const std::filesystem::path& path);
CentroidIndex load_index(const std::filesystem::path& path);

}  // namespace mfserve
