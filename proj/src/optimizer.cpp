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

#include "mfserve/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mfserve/error.hpp"

namespace mfserve {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr double kZ95 = 1.959963984540054;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

const char* to_string(Decision d) noexcept { return d == Decision::kIndex ? "Index" : "MatMul"; }

double hardware_factor(std::size_t k, double h0) {
    if (k == 0) fail(ErrorCode::kInvalidArgument, "K must be at least 1");
    if (!(h0 > 0.0) || !std::isfinite(h0)) fail(ErrorCode::kInvalidArgument, "h0 must be a positive number");
    return h0 * std::max(1.0, std::log2(static_cast<double>(k)));
}

double pruning_fraction(double w_hat, std::size_t item_count, std::size_t block) {
    if (block >= item_count) return 1.0;
    const double remaining = static_cast<double>(item_count - block);
    const double fraction = std::max(0.0, w_hat - static_cast<double>(block)) / remaining;
    return std::clamp(fraction, 0.0, 1.0);
}

Decision decide_fraction(double fraction, double h) noexcept {
    return fraction < h ? Decision::kIndex : Decision::kMatMul;
}

Decision decide(double w_hat, std::size_t item_count, std::size_t block, std::size_t k, double h0) {
    if (block >= item_count) return Decision::kMatMul;
    return decide_fraction(pruning_fraction(w_hat, item_count, block), hardware_factor(k, h0));
}

WalkEstimate estimate_walk_length(const CentroidIndex& index, const ModelPair& model, double sample_fraction,
                                  std::size_t k, std::uint64_t seed) {
    const std::size_t n_users = model.users.rows();
    if (n_users == 0) fail(ErrorCode::kInvalidArgument, "cannot estimate over an empty user set");
    if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
        fail(ErrorCode::kInvalidArgument, "sample fraction must be in (0, 1]");
    }
    auto wanted = static_cast<std::size_t>(std::ceil(sample_fraction * static_cast<double>(n_users)));
    wanted = std::min(std::max(wanted, kMinSampleUsers), n_users);

    std::vector<UserId> sample;
    sample.reserve(wanted);
    if (wanted == n_users) {
        sample.resize(n_users);
        std::iota(sample.begin(), sample.end(), UserId{0});
    } else {
        std::vector<UserId> all(n_users);
        std::iota(all.begin(), all.end(), UserId{0});
        std::mt19937_64 rng(seed);
        std::sample(all.begin(), all.end(), std::back_inserter(sample), wanted, rng);
    }

    WalkEstimate est;
    est.seed = seed;
    est.sample_size = sample.size();
    est.sampled.reserve(sample.size());
    double sum = 0.0;
    for (UserId u : sample) {
        est.sampled.push_back(query_user(index, model, u, k));
        sum += static_cast<double>(est.sampled.back().visited);
    }
    const double n = static_cast<double>(sample.size());
    est.mean = sum / n;
    if (sample.size() > 1) {
        double ss = 0.0;
        for (const auto& r : est.sampled) {
            const double d = static_cast<double>(r.visited) - est.mean;
            ss += d * d;
        }
        est.stddev = std::sqrt(ss / (n - 1.0));
    }
    const double half = kZ95 * est.stddev / std::sqrt(n);
    est.ci_low = est.mean - half;
    est.ci_high = est.mean + half;
    return est;
}

Calibration calibrate_h0(const ModelPair& model, std::size_t repeats, std::optional<BlockSpec> blocks,
                         std::size_t max_pairs) {
    if (repeats == 0) fail(ErrorCode::kInvalidArgument, "calibration needs at least one repeat");
    const std::size_t n_items = model.items.rows();
    const std::size_t n_users = std::clamp<std::size_t>(max_pairs / std::max<std::size_t>(n_items, 1), 1,
                                                        model.users.rows());
    const ModelPair* subject = &model;
    ModelPair truncated;
    if (n_users < model.users.rows()) {
        auto values = model.users.values().subspan(0, n_users * model.factors());
        truncated = ModelPair(FactorMatrix(n_users, model.factors(), {values.begin(), values.end()}), model.items);
        subject = &truncated;
    }
    const BlockSpec tiles = blocks.value_or(BlockSpec::for_factors(model.factors()));

    Calibration cal;
    for (std::size_t r = 0; r < repeats; ++r) {
        const Throughput t = measure_throughput(*subject, 1, tiles);
        cal.samples.push_back(t.unblocked_pairs_per_second / t.blocked_pairs_per_second);
    }
    std::vector<double> sorted = cal.samples;
    std::sort(sorted.begin(), sorted.end());
    cal.h0 = sorted[sorted.size() / 2];
    if (sorted.size() % 2 == 0) cal.h0 = 0.5 * (cal.h0 + sorted[sorted.size() / 2 - 1]);
    cal.spread = (sorted.back() - sorted.front()) / cal.h0;
    cal.unstable = cal.spread > 0.5;
    return cal;
}

double PipelineReport::overhead_fraction() const noexcept {
    const double total = seconds.total();
    if (total <= 0.0) return 0.0;
    return std::clamp((seconds.cluster + seconds.build + seconds.estimate) / total, 0.0, 1.0);
}

PipelineOutput run_pipeline(const ModelPair& model, const PipelineConfig& config) {
    if (config.k == 0) fail(ErrorCode::kInvalidArgument, "K must be at least 1");
    PipelineOutput out;
    PipelineReport& rep = out.report;
    rep.users = model.users.rows();
    rep.items = model.items.rows();
    rep.k = config.k;
    rep.clusters = config.clusters;

    auto t0 = Clock::now();
    Clustering clustering = kmeans(model.users, config.clusters, config.max_iters, config.seed);
    rep.seconds.cluster = seconds_since(t0);

    t0 = Clock::now();
    const CentroidIndex index = build_index(model, std::move(clustering), config.block);
    rep.seconds.build = seconds_since(t0);

    t0 = Clock::now();
    WalkEstimate walk = estimate_walk_length(index, model, config.sample_fraction, config.k, config.sample_seed);
    CostEstimate& est = rep.estimate;
    est.w_hat = walk.mean;
    est.ci_low = walk.ci_low;
    est.ci_high = walk.ci_high;
    est.sample_size = walk.sample_size;
    est.seed = walk.seed;
    est.pruning_fraction = pruning_fraction(walk.mean, rep.items, index.block_size());
    est.h = hardware_factor(config.k, config.h0);
    est.decision = decide(walk.mean, rep.items, index.block_size(), config.k, config.h0);
    rep.seconds.estimate = seconds_since(t0);

    rep.forced = config.force != ForcePath::kNone;
    rep.chosen = config.force == ForcePath::kIndex    ? Decision::kIndex
                 : config.force == ForcePath::kMatMul ? Decision::kMatMul
                                                      : est.decision;

    t0 = Clock::now();
    if (rep.chosen == Decision::kIndex) {
        out.results.resize(rep.users);
        std::vector<char> done(rep.users, 0);
        for (auto& r : walk.sampled) {
            done[r.user_id] = 1;
            out.results[r.user_id] = std::move(r);
        }
        std::vector<UserId> rest;
        rest.reserve(rep.users - walk.sample_size);
        for (std::size_t u = 0; u < rep.users; ++u) {
            if (!done[u]) rest.push_back(static_cast<UserId>(u));
        }
        BatchOptions opts;
        opts.threads = config.threads;
        auto served = query_batch(index, model, rest, config.k, opts);
        for (auto& r : served) out.results[r.user_id] = std::move(r);
    } else {
        out.results = topk_matmul(model, config.k, BlockSpec::for_factors(model.factors()));
    }
    rep.seconds.serve = seconds_since(t0);
    return out;
}

std::vector<SweepRow> run_sweep(const ModelPair& model, std::span<const std::size_t> cluster_counts,
                                const PipelineConfig& config) {
    std::vector<std::size_t> counts(cluster_counts.begin(), cluster_counts.end());
    std::sort(counts.begin(), counts.end());
    counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
    if (counts.empty()) fail(ErrorCode::kInvalidArgument, "sweep needs at least one cluster count");

    std::vector<UserId> all(model.users.rows());
    std::iota(all.begin(), all.end(), UserId{0});
    BatchOptions opts;
    opts.threads = config.threads;

    std::vector<SweepRow> rows;
    for (std::size_t c : counts) {
        SweepRow row;
        row.clusters = c;
        auto t0 = Clock::now();
        Clustering clustering = kmeans(model.users, c, config.max_iters, config.seed);
        const CentroidIndex index = build_index(model, std::move(clustering), config.block);
        row.cluster_seconds = seconds_since(t0);

        t0 = Clock::now();
        const auto results = query_batch(index, model, all, config.k, opts);
        row.serve_seconds = seconds_since(t0);
        double visited = 0.0;
        for (const auto& r : results) visited += static_cast<double>(r.visited);
        row.w_bar = visited / static_cast<double>(results.size());
        rows.push_back(row);
    }
    return rows;
}

void load_config(const std::filesystem::path& path, PipelineConfig& config) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::kIo, "cannot open config " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (eq == std::string::npos) fail(ErrorCode::kFormat, where + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            std::size_t used = 0;
            if (key == "h0") {
                config.h0 = std::stod(value, &used);
            } else if (key == "sample_fraction") {
                config.sample_fraction = std::stod(value, &used);
            } else if (key == "clusters") {
                config.clusters = std::stoull(value, &used);
            } else if (key == "block") {
                config.block = std::stoull(value, &used);
            } else if (key == "seed") {
                config.seed = std::stoull(value, &used);
            } else if (key == "sample_seed") {
                config.sample_seed = std::stoull(value, &used);
            } else if (key == "max_iters") {
                config.max_iters = std::stoull(value, &used);
            } else {
                fail(ErrorCode::kFormat, where + ": unknown key '" + key + "'");
            }
            if (used != value.size()) fail(ErrorCode::kFormat, where + ": trailing characters in value");
        } catch (const std::logic_error&) {
            fail(ErrorCode::kFormat, where + ": bad value for '" + key + "'");
        }
    }
}

void save_config(const std::filesystem::path& path, const PipelineConfig& config) {
    auto out = open_for_write(path);
    out << "h0=" << format_double(config.h0) << '\n'
        << "clusters=" << config.clusters << '\n'
        << "block=" << config.block << '\n'
        << "sample_fraction=" << format_double(config.sample_fraction) << '\n'
        << "seed=" << config.seed << '\n'
        << "sample_seed=" << config.sample_seed << '\n'
        << "max_iters=" << config.max_iters << '\n';
    finish(out, path);
}

void write_topk_csv(std::span<const TopKResult> results, const std::filesystem::path& path) {
    auto out = open_for_write(path);
    out << "user_id,rank,item_id,score\n";
    for (const auto& r : results) {
        for (std::size_t rank = 0; rank < r.entries.size(); ++rank) {
            out << r.user_id << ',' << rank + 1 << ',' << r.entries[rank].item << ','
                << format_double(r.entries[rank].score) << '\n';
        }
    }
    finish(out, path);
}

void write_report_csv(const PipelineReport& report, const std::filesystem::path& path) {
    auto out = open_for_write(path);
    out << "stage,seconds,decision,w_hat,pruning_fraction,h,users,items,k,overhead_fraction\n";
    const std::string meta = std::string(to_string(report.chosen)) + ',' + format_double(report.estimate.w_hat) + ',' +
                             format_double(report.estimate.pruning_fraction) + ',' +
                             format_double(report.estimate.h) + ',' + std::to_string(report.users) + ',' +
                             std::to_string(report.items) + ',' + std::to_string(report.k) + ',' +
                             format_double(report.overhead_fraction());
    const std::pair<const char*, double> stages[] = {{"cluster", report.seconds.cluster},
                                                     {"build", report.seconds.build},
                                                     {"estimate", report.seconds.estimate},
                                                     {"serve", report.seconds.serve},
                                                     {"total", report.seconds.total()}};
    for (const auto& [name, secs] : stages) out << name << ',' << format_double(secs) << ',' << meta << '\n';
    finish(out, path);
}

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
    auto out = open_for_write(path);
    out << "C,cluster_seconds,serve_seconds,w_bar\n";
    for (const auto& r : rows) {
        out << r.clusters << ',' << format_double(r.cluster_seconds) << ',' << format_double(r.serve_seconds) << ','
            << format_double(r.w_bar) << '\n';
    }
    finish(out, path);
}

}  // namespace mfserve
