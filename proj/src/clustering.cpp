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

#include "mfserve/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "mfserve/error.hpp"

namespace mfserve {

namespace {

double squared_distance(const double* a, const double* b, std::size_t n) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

std::vector<ClusterId> assign_all(const FactorMatrix& users, const FactorMatrix& centroids) {
    std::vector<ClusterId> out(users.rows());
    for (std::size_t u = 0; u < users.rows(); ++u) out[u] = nearest_centroid(centroids, users.row(u));
    return out;
}

FactorMatrix seed_plus_plus(const FactorMatrix& users, std::size_t num_clusters, std::mt19937_64& rng) {
    const std::size_t n = users.rows();
    const std::size_t f = users.factors();
    std::vector<std::size_t> chosen;
    chosen.reserve(num_clusters);
    chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));

    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (chosen.size() < num_clusters) {
        const double* last = users.row_ptr(chosen.back());
        double total = 0.0;
        for (std::size_t u = 0; u < n; ++u) {
            d2[u] = std::min(d2[u], squared_distance(users.row_ptr(u), last, f));
            total += d2[u];
        }
        std::size_t next = 0;
        if (total > 0.0) {
            double target = std::uniform_real_distribution<double>(0.0, total)(rng);
            next = n;
            for (std::size_t u = 0; u < n; ++u) {
                if (d2[u] > 0.0) next = u;
                if (target < d2[u]) break;
                target -= d2[u];
            }
        } else {
            // Fewer distinct points than clusters: take any point not yet chosen.
            std::vector<std::size_t> rest;
            for (std::size_t u = 0; u < n; ++u) {
                if (std::find(chosen.begin(), chosen.end(), u) == chosen.end()) rest.push_back(u);
            }
            next = rest[std::uniform_int_distribution<std::size_t>(0, rest.size() - 1)(rng)];
        }
        chosen.push_back(next);
    }

    std::vector<double> values;
    values.reserve(num_clusters * f);
    for (std::size_t c : chosen) values.insert(values.end(), users.row(c).begin(), users.row(c).end());
    return FactorMatrix(num_clusters, f, std::move(values));
}

// Moves the worst-fitting point of a multi-member cluster into each empty one.
void repair_empty(const FactorMatrix& users, const FactorMatrix& centroids, std::vector<ClusterId>& assignment) {
    const std::size_t k = centroids.rows();
    const std::size_t f = users.factors();
    std::vector<std::size_t> counts(k, 0);
    for (ClusterId c : assignment) ++counts[c];
    std::vector<char> taken(users.rows(), 0);

    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] != 0) continue;
        std::size_t best = users.rows();
        double best_d = -1.0;
        for (std::size_t u = 0; u < users.rows(); ++u) {
            if (taken[u] || counts[assignment[u]] < 2) continue;
            const double d = squared_distance(users.row_ptr(u), centroids.row_ptr(assignment[u]), f);
            if (d > best_d) {
                best_d = d;
                best = u;
            }
        }
        if (best == users.rows()) fail(ErrorCode::kInternal, "cannot repair empty cluster");
        --counts[assignment[best]];
        assignment[best] = static_cast<ClusterId>(c);
        counts[c] = 1;
        taken[best] = 1;
    }
}

FactorMatrix cluster_means(const FactorMatrix& users, std::span<const ClusterId> assignment, std::size_t k) {
    const std::size_t f = users.factors();
    std::vector<double> sums(k * f, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t u = 0; u < users.rows(); ++u) {
        const double* row = users.row_ptr(u);
        double* dst = sums.data() + assignment[u] * f;
        for (std::size_t j = 0; j < f; ++j) dst[j] += row[j];
        ++counts[assignment[u]];
    }
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < f; ++j) sums[c * f + j] /= static_cast<double>(counts[c]);
    }
    return FactorMatrix(k, f, std::move(sums));
}

double objective(const FactorMatrix& users, const FactorMatrix& centroids, std::span<const ClusterId> assignment) {
    double total = 0.0;
    for (std::size_t u = 0; u < users.rows(); ++u) {
        total += squared_distance(users.row_ptr(u), centroids.row_ptr(assignment[u]), users.factors());
    }
    return total;
}

}  // namespace

UnitChords unit_chords(const double* a, double norm_a, const double* b, double norm_b, std::size_t n) noexcept {
    const double inv_a = 1.0 / norm_a;
    const double inv_b = 1.0 / norm_b;
    // Four independent partial sums; the angle does not need the fixed
    // summation order that scores do.
    typedef double Lane4 __attribute__((vector_size(32)));
    Lane4 diff = {};
    Lane4 sum = {};
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4) {
        Lane4 x;
        Lane4 y;
        std::memcpy(&x, a + k, sizeof(Lane4));
        std::memcpy(&y, b + k, sizeof(Lane4));
        x *= inv_a;
        y *= inv_b;
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    for (; k < n; ++k) {
        const double x = a[k] * inv_a;
        const double y = b[k] * inv_b;
        diff[0] += (x - y) * (x - y);
        sum[0] += (x + y) * (x + y);
    }
    return {(diff[0] + diff[1]) + (diff[2] + diff[3]), (sum[0] + sum[1]) + (sum[2] + sum[3])};
}

double angle_between(const double* a, double norm_a, const double* b, double norm_b, std::size_t n) noexcept {
    const UnitChords ch = unit_chords(a, norm_a, b, norm_b, n);
    const double theta = 2.0 * std::atan2(std::sqrt(ch.minus_sq), std::sqrt(ch.plus_sq));
    return std::clamp(theta, 0.0, std::numbers::pi);
}

double angular_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail(ErrorCode::kDimensionMismatch, "angle operands differ in length");
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) fail(ErrorCode::kInvalidArgument, "angle is undefined for a zero vector");
    return angle_between(a.data(), na, b.data(), nb, a.size());
}

double angle_or(std::span<const double> a, std::span<const double> b, double fallback) noexcept {
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) return fallback;
    return angle_between(a.data(), na, b.data(), nb, a.size());
}

ClusterId nearest_centroid(const FactorMatrix& centroids, std::span<const double> v) noexcept {
    ClusterId best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        const double d = squared_distance(v.data(), centroids.row_ptr(c), v.size());
        if (d < best_d) {
            best_d = d;
            best = static_cast<ClusterId>(c);
        }
    }
    return best;
}

ThetaBounds compute_theta_b(const FactorMatrix& users, const FactorMatrix& centroids,
                            std::span<const ClusterId> assignment) {
    if (assignment.size() != users.rows()) {
        fail(ErrorCode::kInvalidArgument, "assignment does not cover every user");
    }
    const std::size_t k = centroids.rows();
    ThetaBounds out;
    out.theta_b.assign(k, 0.0);
    std::vector<double> centroid_norms(k);
    for (std::size_t c = 0; c < k; ++c) {
        centroid_norms[c] = norm(centroids.row(c));
        if (centroid_norms[c] == 0.0) {
            out.degenerate_clusters.push_back(static_cast<ClusterId>(c));
            out.theta_b[c] = std::numbers::pi;
        }
    }
    for (std::size_t u = 0; u < users.rows(); ++u) {
        const ClusterId c = assignment[u];
        if (c >= k) fail(ErrorCode::kInvalidArgument, "assignment refers to cluster " + std::to_string(c));
        if (centroid_norms[c] == 0.0) continue;
        const double nu = norm(users.row(u));
        // A zero user has no direction; pi keeps every bound conservative.
        const double theta = nu == 0.0 ? std::numbers::pi
                                       : angle_between(users.row_ptr(u), nu, centroids.row_ptr(c),
                                                       centroid_norms[c], users.factors());
        out.theta_b[c] = std::max(out.theta_b[c], theta);
    }
    return out;
}

Clustering kmeans(const FactorMatrix& users, std::size_t num_clusters, std::size_t max_iters, std::uint64_t seed) {
    if (users.empty()) fail(ErrorCode::kInvalidArgument, "cannot cluster an empty user matrix");
    if (num_clusters == 0 || num_clusters > users.rows()) {
        fail(ErrorCode::kInvalidArgument, "cluster count " + std::to_string(num_clusters) + " must be in [1, " +
                                              std::to_string(users.rows()) + "]");
    }
    if (max_iters == 0) fail(ErrorCode::kInvalidArgument, "max_iters must be at least 1");

    std::mt19937_64 rng(seed);
    Clustering out;
    FactorMatrix centroids = seed_plus_plus(users, num_clusters, rng);
    std::vector<ClusterId> assignment = assign_all(users, centroids);
    repair_empty(users, centroids, assignment);

    for (std::size_t it = 1; it <= max_iters; ++it) {
        centroids = cluster_means(users, assignment, num_clusters);
        out.objective_history.push_back(objective(users, centroids, assignment));
        out.iterations = it;

        std::vector<ClusterId> next = assign_all(users, centroids);
        repair_empty(users, centroids, next);
        if (next == assignment || it == max_iters) break;
        assignment = std::move(next);
    }

    out.centroids = std::move(centroids);
    out.assignment = std::move(assignment);
    out.members.assign(num_clusters, {});
    for (std::size_t u = 0; u < users.rows(); ++u) out.members[out.assignment[u]].push_back(static_cast<UserId>(u));

    ThetaBounds bounds = compute_theta_b(users, out.centroids, out.assignment);
    out.theta_b = std::move(bounds.theta_b);
    out.degenerate_clusters = std::move(bounds.degenerate_clusters);
    return out;
}

}  // namespace mfserve
