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
#include <span>
#include <vector>

#include "mfserve/model_io.hpp"

namespace mfserve {

using ClusterId = std::uint32_t;

inline constexpr std::size_t kDefaultClusters = 8;
inline constexpr std::size_t kDefaultMaxIters = 100;

/// k-means partition of the user vectors plus, per cluster, the largest
/// user-to-centroid angle (theta_b).
struct Clustering {
    FactorMatrix centroids;
    std::vector<ClusterId> assignment;
    std::vector<double> theta_b;
    std::vector<std::vector<UserId>> members;
    /// Clusters whose centroid has zero norm; their theta_b is pi.
    std::vector<ClusterId> degenerate_clusters;
    /// Within-cluster sum of squares after each Lloyd iteration.
    std::vector<double> objective_history;
    std::size_t iterations = 0;

    std::size_t num_clusters() const noexcept { return centroids.rows(); }
};

struct ThetaBounds {
    std::vector<double> theta_b;
    std::vector<ClusterId> degenerate_clusters;
};

/// Angle between two nonzero vectors, in [0, pi]. Throws on a zero vector.
double angular_distance(std::span<const double> a, std::span<const double> b);

/// Same as angular_distance, but returns `fallback` when either side is zero.
double angle_or(std::span<const double> a, std::span<const double> b, double fallback) noexcept;

/// Lloyd's algorithm (L2) with k-means++ seeding. Stops when assignments are
/// stable or after `max_iters` rounds; empty clusters are reseeded with the
/// point farthest from its own centroid.
Clustering kmeans(const FactorMatrix& users, std::size_t num_clusters, std::size_t max_iters = kDefaultMaxIters,
                  std::uint64_t seed = 0);

ThetaBounds compute_theta_b(const FactorMatrix& users, const FactorMatrix& centroids,
                            std::span<const ClusterId> assignment);

/// Squared chord lengths |a^ - b^|^2 and |a^ + b^|^2 between the unit vectors
/// along `a` and `b`; their ratio fixes the angle without a cancellation.
struct UnitChords {
    double minus_sq = 0.0;
    double plus_sq = 0.0;
};

UnitChords unit_chords(const double* a, double norm_a, const double* b, double norm_b, std::size_t n) noexcept;

/// Angle between `a` and `b` given their (nonzero) norms, computed as
/// 2*atan2(|a^ - b^|, |a^ + b^|), which stays accurate near 0 and pi where
/// arccos of the cosine loses about half the significant digits.
double angle_between(const double* a, double norm_a, const double* b, double norm_b, std::size_t n) noexcept;

/// Nearest centroid under L2, lowest id on ties.
ClusterId nearest_centroid(const FactorMatrix& centroids, std::span<const double> v) noexcept;

}  // namespace mfserve
