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

#include "mfserve/model_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "mfserve/error.hpp"

namespace mfserve {

using detail::read_u64;
using detail::write_u64;

namespace {

std::string row_label(std::size_t r) { return "row " + std::to_string(r); }

void check_finite(std::span<const double> values, std::size_t factors, const std::string& where) {
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (!std::isfinite(values[k])) {
            fail(ErrorCode::kNonFinite, where + ": non-finite value at " + row_label(k / factors));
        }
    }
}

bool has_matrix_magic(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    char magic[8] = {};
    return in.read(magic, sizeof magic) && std::memcmp(magic, kMatrixMagic, sizeof magic) == 0;
}

// Uniform direction on the unit sphere via normalized Gaussians.
std::vector<double> random_direction(std::size_t f, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> v(f);
    double n = 0.0;
    while (n == 0.0) {
        for (auto& x : v) x = gauss(rng);
        n = norm(v);
    }
    for (auto& x : v) x /= n;
    return v;
}

// Unit vector orthogonal to `axis`, or all zeros when f == 1.
std::vector<double> random_tangent(std::span<const double> axis, std::mt19937_64& rng) {
    const std::size_t f = axis.size();
    std::vector<double> t(f, 0.0);
    if (f < 2) return t;
    for (;;) {
        t = random_direction(f, rng);
        const double along = dot(t.data(), axis.data(), f);
        for (std::size_t k = 0; k < f; ++k) t[k] -= along * axis[k];
        const double n = norm(t);
        if (n > 1e-6) {
            for (auto& x : t) x /= n;
            return t;
        }
    }
}

}  // namespace

FactorMatrix::FactorMatrix(std::size_t rows, std::size_t factors, std::vector<double> values)
    : rows_(rows), factors_(factors), values_(std::move(values)) {
    if (rows_ == 0 || factors_ == 0) {
        fail(ErrorCode::kInvalidArgument, "factor matrix needs at least one row and one factor");
    }
    if (values_.size() != rows_ * factors_) {
        fail(ErrorCode::kInvalidArgument, "factor matrix payload has " + std::to_string(values_.size()) +
                                              " values, expected " + std::to_string(rows_ * factors_));
    }
    check_finite(values_, factors_, "factor matrix");
}

FactorMatrix FactorMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) fail(ErrorCode::kInvalidArgument, "factor matrix needs at least one row");
    const std::size_t f = rows.front().size();
    std::vector<double> values;
    values.reserve(rows.size() * f);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != f) {
            fail(ErrorCode::kDimensionMismatch, "ragged literal at " + row_label(r));
        }
        values.insert(values.end(), rows[r].begin(), rows[r].end());
    }
    return FactorMatrix(rows.size(), f, std::move(values));
}

std::size_t FactorMatrix::append_row(std::span<const double> row) {
    if (row.size() != factors_) {
        fail(ErrorCode::kDimensionMismatch, "appended row has " + std::to_string(row.size()) +
                                                " factors, matrix has " + std::to_string(factors_));
    }
    check_finite(row, factors_, "appended row");
    values_.insert(values_.end(), row.begin(), row.end());
    return rows_++;
}

ModelPair::ModelPair(FactorMatrix u, FactorMatrix i) : users(std::move(u)), items(std::move(i)) {
    if (users.factors() != items.factors()) {
        fail(ErrorCode::kDimensionMismatch, "user factors (" + std::to_string(users.factors()) +
                                                ") differ from item factors (" +
                                                std::to_string(items.factors()) + ")");
    }
}

FactorMatrix load_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
    const std::string where = path.string();

    char magic[8] = {};
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMatrixMagic, sizeof magic) != 0) {
        fail(ErrorCode::kFormat, where + ": bad magic, expected MFMAT001");
    }
    std::uint64_t rows = 0, factors = 0;
    if (!read_u64(in, rows) || !read_u64(in, factors)) {
        fail(ErrorCode::kFormat, where + ": truncated header");
    }
    if (rows == 0 || factors == 0) fail(ErrorCode::kFormat, where + ": header declares an empty matrix");

    const auto header_bytes = static_cast<std::uint64_t>(sizeof magic + 2 * sizeof(std::uint64_t));
    const auto file_bytes = static_cast<std::uint64_t>(std::filesystem::file_size(path));
    if (factors > (file_bytes / 8) || rows > (file_bytes / 8) / factors ||
        header_bytes + rows * factors * 8 != file_bytes) {
        fail(ErrorCode::kFormat, where + ": payload size does not match header " + std::to_string(rows) +
                                     "x" + std::to_string(factors));
    }

    std::vector<double> values(rows * factors);
    for (std::uint64_t k = 0; k < rows * factors; ++k) {
        std::uint64_t bits = 0;
        if (!read_u64(in, bits)) fail(ErrorCode::kFormat, where + ": truncated payload at " + row_label(k / factors));
        values[k] = std::bit_cast<double>(bits);
    }
    check_finite(values, factors, where);
    return FactorMatrix(rows, factors, std::move(values));
}

void save_matrix(const FactorMatrix& m, const std::filesystem::path& path) {
    if (m.empty() || m.factors() == 0) fail(ErrorCode::kInvalidArgument, "refusing to write an empty matrix");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
    out.write(kMatrixMagic, sizeof kMatrixMagic);
    write_u64(out, m.rows());
    write_u64(out, m.factors());
    for (double v : m.values()) write_u64(out, std::bit_cast<std::uint64_t>(v));
    out.flush();
    if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

FactorMatrix load_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
    const std::string where = path.string();

    std::vector<double> values;
    std::size_t factors = 0;
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        std::size_t count = 0;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (;;) {
            while (p < end && (*p == ' ' || *p == '\t')) ++p;
            if (p < end && *p == '+') ++p;
            double v = 0.0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc()) {
                fail(ErrorCode::kFormat, where + ": unparsable number at " + row_label(rows));
            }
            if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, where + ": non-finite value at " + row_label(rows));
            values.push_back(v);
            ++count;
            p = next;
            while (p < end && (*p == ' ' || *p == '\t')) ++p;
            if (p == end) break;
            if (*p != ',') fail(ErrorCode::kFormat, where + ": unexpected character at " + row_label(rows));
            ++p;
        }
        if (rows == 0) {
            factors = count;
        } else if (count != factors) {
            fail(ErrorCode::kFormat, where + ": " + row_label(rows) + " has " + std::to_string(count) +
                                         " values, expected " + std::to_string(factors));
        }
        ++rows;
    }
    if (rows == 0) fail(ErrorCode::kFormat, where + ": no rows");
    return FactorMatrix(rows, factors, std::move(values));
}

namespace {

FactorMatrix load_any(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorCode::kIo, "no such file: " + path.string());
    return has_matrix_magic(path) ? load_matrix(path) : load_matrix_csv(path);
}

}  // namespace

ModelPair load_model(const std::filesystem::path& user_path, const std::filesystem::path& item_path) {
    FactorMatrix users = load_any(user_path);
    FactorMatrix items = load_any(item_path);
    if (users.factors() != items.factors()) {
        fail(ErrorCode::kDimensionMismatch, user_path.string() + " has " + std::to_string(users.factors()) +
                                                " factors but " + item_path.string() + " has " +
                                                std::to_string(items.factors()));
    }
    return ModelPair(std::move(users), std::move(items));
}

void save_model(const ModelPair& model, const std::filesystem::path& user_path,
                const std::filesystem::path& item_path) {
    if (model.users.empty() || model.items.empty()) {
        fail(ErrorCode::kInvalidArgument, "refusing to write a model with an empty matrix");
    }
    save_matrix(model.users, user_path);
    save_matrix(model.items, item_path);
}

ModelPair generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_users == 0 || spec.num_items == 0 || spec.factors == 0) {
        fail(ErrorCode::kInvalidArgument, "synthetic model needs users, items and factors >= 1");
    }
    if (spec.archetype_count == 0 || spec.archetype_count > spec.num_users) {
        fail(ErrorCode::kInvalidArgument, "archetype_count must be in [1, num_users]");
    }
    if (!(spec.angular_spread >= 0.0 && spec.angular_spread <= std::numbers::pi)) {
        fail(ErrorCode::kInvalidArgument, "angular_spread must be in [0, pi]");
    }
    if (!(spec.norm_low > 0.0 && spec.norm_low <= spec.norm_high && std::isfinite(spec.norm_high))) {
        fail(ErrorCode::kInvalidArgument, "norms must satisfy 0 < norm_low <= norm_high");
    }

    std::mt19937_64 rng(spec.seed);
    const std::size_t f = spec.factors;
    std::uniform_real_distribution<double> norm_dist(spec.norm_low, spec.norm_high);
    std::uniform_real_distribution<double> spread_dist(0.0, spec.angular_spread);
    std::uniform_int_distribution<std::size_t> pick(0, spec.archetype_count - 1);

    std::vector<std::vector<double>> archetypes;
    archetypes.reserve(spec.archetype_count);
    for (std::size_t a = 0; a < spec.archetype_count; ++a) archetypes.push_back(random_direction(f, rng));

    std::vector<double> users;
    users.reserve(spec.num_users * f);
    for (std::size_t u = 0; u < spec.num_users; ++u) {
        const auto& axis = archetypes[pick(rng)];
        const auto tangent = random_tangent(axis, rng);
        const double phi = spec.angular_spread > 0.0 ? spread_dist(rng) : 0.0;
        const double len = norm_dist(rng);
        const double c = std::cos(phi);
        const double s = std::sin(phi);
        for (std::size_t k = 0; k < f; ++k) users.push_back(len * (c * axis[k] + s * tangent[k]));
    }

    std::vector<double> items;
    items.reserve(spec.num_items * f);
    for (std::size_t i = 0; i < spec.num_items; ++i) {
        const auto dir = random_direction(f, rng);
        const double len = norm_dist(rng);
        for (double x : dir) items.push_back(len * x);
    }

    return ModelPair(FactorMatrix(spec.num_users, f, std::move(users)),
                     FactorMatrix(spec.num_items, f, std::move(items)));
}

double norm(std::span<const double> v) noexcept { return std::sqrt(dot(v.data(), v.data(), v.size())); }

double predicted_rating(std::span<const double> u, std::span<const double> i) {
    if (u.size() != i.size()) {
        fail(ErrorCode::kDimensionMismatch, "rating operands have lengths " + std::to_string(u.size()) + " and " +
                                                std::to_string(i.size()));
    }
    return dot(u.data(), i.data(), u.size());
}

}  // namespace mfserve
