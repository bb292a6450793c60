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

namespace mfserve {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

/// Dense row-major matrix of latent vectors (one user or item per row).
///
/// Construction validates shape and finiteness; afterwards the only mutation
/// is appending rows, which the incremental index maintenance relies on.
class FactorMatrix {
public:
    FactorMatrix() = default;
    FactorMatrix(std::size_t rows, std::size_t factors, std::vector<double> values);

    /// Convenience for tests and small literals: every inner vector is a row.
    static FactorMatrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t factors() const noexcept { return factors_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<const double> row(std::size_t r) const noexcept {
        return {values_.data() + r * factors_, factors_};
    }
    const double* row_ptr(std::size_t r) const noexcept { return values_.data() + r * factors_; }
    std::span<const double> values() const noexcept { return values_; }

    /// Appends one row; throws on dimension mismatch or non-finite values.
    std::size_t append_row(std::span<const double> row);

    friend bool operator==(const FactorMatrix&, const FactorMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t factors_ = 0;
    std::vector<double> values_;
};

struct ModelPair {
    FactorMatrix users;
    FactorMatrix items;

    ModelPair() = default;
    ModelPair(FactorMatrix u, FactorMatrix i);

    std::size_t factors() const noexcept { return users.factors(); }

    friend bool operator==(const ModelPair&, const ModelPair&) = default;
};

/// Parameters of the synthetic model generator. Users cluster around
/// `archetype_count` random directions, each perturbed by at most
/// `angular_spread` radians; items are uniform on the sphere.
struct SyntheticSpec {
    std::size_t num_users = 1000;
    std::size_t num_items = 1000;
    std::size_t factors = 16;
    std::size_t archetype_count = 8;
    double angular_spread = 0.1;
    double norm_low = 1.0;
    double norm_high = 1.0;
    std::uint64_t seed = 0;
};

// Matrix files: "MFMAT001", u64 rows, u64 factors, rows*factors LE f64.
inline constexpr char kMatrixMagic[8] = {'M', 'F', 'M', 'A', 'T', '0', '0', '1'};

FactorMatrix load_matrix(const std::filesystem::path& path);
void save_matrix(const FactorMatrix& m, const std::filesystem::path& path);

/// Parses one vector per line, comma separated, no header.
FactorMatrix load_matrix_csv(const std::filesystem::path& path);

/// Loads either format (binary detected by its magic, CSV otherwise) and
/// checks that both sides share a factor dimension.
ModelPair load_model(const std::filesystem::path& user_path, const std::filesystem::path& item_path);
void save_model(const ModelPair& model, const std::filesystem::path& user_path,
                const std::filesystem::path& item_path);

ModelPair generate_synthetic(const SyntheticSpec& spec);

/// Inner product accumulated in ascending index order. Every scoring path in
/// the library produces bit-identical values by sharing this order.
inline double dot(const double* a, const double* b, std::size_t n) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
    return s;
}

double norm(std::span<const double> v) noexcept;

/// r_ui = u . i; throws on length mismatch.
double predicted_rating(std::span<const double> u, std::span<const double> i);

}  // namespace mfserve
