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

// Test-side reference computations. Nothing here calls into the library's
// scoring, angle or bound code, so agreement is evidence rather than echo.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mfserve/model_io.hpp"
#include "mfserve/topk.hpp"

namespace oracle {

// Plain left-to-right sum; the library promises bit-identical scores to this.
inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
    return s;
}

struct Ranked {
    std::uint32_t item;
    double score;
};

inline bool better(const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
}

// Full scan of every item, then the first k under the ranking rule. Item ids
// are unique, so the order is total and partial_sort is deterministic.
inline std::vector<Ranked> topk(const mfserve::FactorMatrix& items, const double* user, std::size_t k) {
    std::vector<Ranked> all;
    all.reserve(items.rows());
    for (std::size_t i = 0; i < items.rows(); ++i) {
        all.push_back({static_cast<std::uint32_t>(i), dot(user, items.row_ptr(i), items.factors())});
    }
    const std::size_t keep = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), better);
    all.resize(keep);
    return all;
}

inline bool same(const std::vector<Ranked>& want, const std::vector<mfserve::ScoredItem>& got) {
    if (want.size() != got.size()) return false;
    for (std::size_t r = 0; r < want.size(); ++r) {
        if (want[r].item != got[r].item || want[r].score != got[r].score) return false;
    }
    return true;
}

inline std::string describe(const std::vector<Ranked>& want, const std::vector<mfserve::ScoredItem>& got) {
    std::string s = "want";
    for (const auto& r : want) s += " " + std::to_string(r.item) + ":" + std::to_string(r.score);
    s += " | got";
    for (const auto& r : got) s += " " + std::to_string(r.item) + ":" + std::to_string(r.score);
    return s;
}

// Angle by arccos in long double; accurate enough away from 0 and pi.
inline double angle(const double* a, const double* b, std::size_t n) {
    long double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < n; ++k) {
        ab += static_cast<long double>(a[k]) * b[k];
        aa += static_cast<long double>(a[k]) * a[k];
        bb += static_cast<long double>(b[k]) * b[k];
    }
    long double c = ab / std::sqrt(aa * bb);
    c = std::clamp(c, -1.0L, 1.0L);
    return static_cast<double>(std::acos(c));
}

inline double norm(const double* a, std::size_t n) {
    long double s = 0;
    for (std::size_t k = 0; k < n; ++k) s += static_cast<long double>(a[k]) * a[k];
    return static_cast<double>(std::sqrt(s));
}

// Upper bound on u.i/|u| written straight from its definition.
inline double bound(double item_norm, double theta_ic, double theta_b) {
    if (theta_b < theta_ic) return item_norm * std::cos(theta_ic - theta_b);
    return item_norm;
}

enum class Regime { kTight, kModerate, kUniform, kIntegerTies };

inline const char* name(Regime r) {
    switch (r) {
        case Regime::kTight: return "tight";
        case Regime::kModerate: return "moderate";
        case Regime::kUniform: return "uniform";
        case Regime::kIntegerTies: return "integer-ties";
    }
    return "?";
}

// Small-integer coordinates with repeated rows: many exact score ties.
inline mfserve::FactorMatrix integer_matrix(std::size_t rows, std::size_t f, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> coord(-2, 2);
    std::uniform_int_distribution<std::size_t> pick(0, 9);
    std::vector<double> v(rows * f);
    for (std::size_t r = 0; r < rows; ++r) {
        if (r >= 10 && pick(rng) < 3) {
            std::uniform_int_distribution<std::size_t> src(0, r - 1);
            const std::size_t s = src(rng);
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(s * f), f, v.begin() + static_cast<std::ptrdiff_t>(r * f));
            continue;
        }
        bool nonzero = false;
        for (std::size_t k = 0; k < f; ++k) {
            v[r * f + k] = coord(rng);
            nonzero |= v[r * f + k] != 0.0;
        }
        if (!nonzero) v[r * f] = 1.0;
    }
    return mfserve::FactorMatrix(rows, f, std::move(v));
}

inline mfserve::ModelPair make_model(Regime regime, std::size_t users, std::size_t items, std::size_t f,
                                     std::uint64_t seed) {
    if (regime == Regime::kIntegerTies) {
        std::mt19937_64 rng(seed);
        auto u = integer_matrix(users, f, rng);
        auto i = integer_matrix(items, f, rng);
        return mfserve::ModelPair(std::move(u), std::move(i));
    }
    mfserve::SyntheticSpec spec;
    spec.num_users = users;
    spec.num_items = items;
    spec.factors = f;
    spec.seed = seed;
    spec.archetype_count = std::min<std::size_t>(8, users);
    switch (regime) {
        case Regime::kTight:
            spec.angular_spread = 0.05;
            break;
        case Regime::kModerate:
            spec.angular_spread = 0.5;
            spec.norm_low = 0.5;
            spec.norm_high = 1.5;
            break;
        default:
            spec.angular_spread = std::numbers::pi;
            spec.norm_low = 0.5;
            spec.norm_high = 2.0;
            break;
    }
    return mfserve::generate_synthetic(spec);
}

}  // namespace oracle
