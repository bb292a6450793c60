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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfserve/brute.hpp"
#include "mfserve/index.hpp"
#include "mfserve/model_io.hpp"
#include "mfserve/topk.hpp"

namespace mfserve {

enum class Decision { kIndex, kMatMul };

const char* to_string(Decision d) noexcept;

inline constexpr double kDefaultH0 = 0.05;
inline constexpr double kDefaultSampleFraction = 0.001;
inline constexpr std::size_t kMinSampleUsers = 30;

/// h = h0 * max(1, log2 K): blocked multiply's per-pair advantage, reduced by
/// the heap selection it needs for larger K.
double hardware_factor(std::size_t k, double h0);

/// max(0, w_hat - B) / (|I| - B), clamped to [0, 1]; 1 when B covers every item.
double pruning_fraction(double w_hat, std::size_t item_count, std::size_t block);

/// Index iff fraction < h (strict; ties go to the multiply).
Decision decide_fraction(double fraction, double h) noexcept;

Decision decide(double w_hat, std::size_t item_count, std::size_t block, std::size_t k, double h0);

struct WalkEstimate {
    double mean = 0.0;
    double stddev = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t sample_size = 0;
    std::uint64_t seed = 0;
    /// Results of the sampled walks, reusable when the index path is chosen.
    std::vector<TopKResult> sampled;
};

/// Mean visited count of query_user over a uniform user sample (at least
/// 30 users, or all of them) with a normal-approximation 95% interval.
WalkEstimate estimate_walk_length(const CentroidIndex& index, const ModelPair& model, double sample_fraction,
                                  std::size_t k, std::uint64_t seed);

struct CostEstimate {
    double w_hat = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double pruning_fraction = 0.0;
    double h = 0.0;
    Decision decision = Decision::kMatMul;
    std::size_t sample_size = 0;
    std::uint64_t seed = 0;
};

struct Calibration {
    double h0 = kDefaultH0;
    /// (max - min) / median over the repeats.
    double spread = 0.0;
    std::vector<double> samples;
    bool unstable = false;
};

/// Ratio of per-pair cost under the blocked multiply to per-pair cost under
/// per-user scoring at K = 1, median of `repeats` runs. Large models are
/// truncated to roughly `max_pairs` user-item pairs.
Calibration calibrate_h0(const ModelPair& model, std::size_t repeats = 5, std::optional<BlockSpec> blocks = {},
                         std::size_t max_pairs = 4'000'000);

enum class ForcePath { kNone, kIndex, kMatMul };

struct PipelineConfig {
    std::size_t clusters = kDefaultClusters;
    std::size_t block = kDefaultBlock;
    std::size_t k = 1;
    std::size_t max_iters = kDefaultMaxIters;
    double sample_fraction = kDefaultSampleFraction;
    double h0 = kDefaultH0;
    std::uint64_t seed = 0;         // k-means
    std::uint64_t sample_seed = 0;  // walk-length sample
    ForcePath force = ForcePath::kNone;
    std::size_t threads = 1;
};

struct StageTimings {
    double cluster = 0.0;
    double build = 0.0;
    double estimate = 0.0;
    double serve = 0.0;

    double total() const noexcept { return cluster + build + estimate + serve; }
};

struct PipelineReport {
    StageTimings seconds;
    CostEstimate estimate;
    /// Path actually served (differs from estimate.decision only when forced).
    Decision chosen = Decision::kMatMul;
    bool forced = false;
    std::size_t users = 0;
    std::size_t items = 0;
    std::size_t k = 0;
    std::size_t clusters = 0;

    double overhead_fraction() const noexcept;
};

struct PipelineOutput {
    std::vector<TopKResult> results;
    PipelineReport report;
};

/// cluster -> build -> estimate -> decide -> serve. Results are exact on
/// either serving path.
PipelineOutput run_pipeline(const ModelPair& model, const PipelineConfig& config);

struct SweepRow {
    std::size_t clusters = 0;
    double cluster_seconds = 0.0;
    double serve_seconds = 0.0;
    double w_bar = 0.0;
};

/// Runs the index path once per distinct cluster count (ascending).
std::vector<SweepRow> run_sweep(const ModelPair& model, std::span<const std::size_t> cluster_counts,
                                const PipelineConfig& config);

/// key=value lines; recognised keys: h0, clusters, block, sample_fraction,
/// seed, sample_seed, max_iters. Unknown keys are rejected.
void load_config(const std::filesystem::path& path, PipelineConfig& config);
void save_config(const std::filesystem::path& path, const PipelineConfig& config);

void write_topk_csv(std::span<const TopKResult> results, const std::filesystem::path& path);
void write_report_csv(const PipelineReport& report, const std::filesystem::path& path);
void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);

}  // namespace mfserve
