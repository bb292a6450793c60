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

// Command-line front end. Talks to the library only through the C API.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mfserve/mfserve.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

struct ModelDeleter {
    void operator()(mfs_model* m) const { mfs_model_free(m); }
};
struct IndexDeleter {
    void operator()(mfs_index* i) const { mfs_index_free(i); }
};
struct RunDeleter {
    void operator()(mfs_run* r) const { mfs_run_free(r); }
};
using ModelPtr = std::unique_ptr<mfs_model, ModelDeleter>;
using IndexPtr = std::unique_ptr<mfs_index, IndexDeleter>;
using RunPtr = std::unique_ptr<mfs_run, RunDeleter>;

// Carries a C API failure out to main() with its exit code.
struct CommandError {
    int exit_code;
    std::string message;
};

int exit_code_for(mfs_status s) {
    switch (s) {
        case MFS_ERR_IO:
        case MFS_ERR_FORMAT:
        case MFS_ERR_NON_FINITE:
            return kExitIo;
        default:
            return kExitValidation;
    }
}

void check(mfs_status s) {
    if (s != MFS_OK) throw CommandError{exit_code_for(s), mfs_last_error()};
}

[[noreturn]] void usage_error(const std::string& message) { throw CommandError{kExitValidation, message}; }

const char* decision_name(mfs_decision d) { return d == MFS_DECISION_INDEX ? "Index" : "MatMul"; }

ModelPtr load(const std::string& users, const std::string& items) {
    mfs_model* raw = nullptr;
    check(mfs_model_load(users.c_str(), items.c_str(), &raw));
    return ModelPtr(raw);
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void print_entries(const std::vector<mfs_entry>& entries) {
    std::printf("rank,item_id,score\n");
    for (std::size_t r = 0; r < entries.size(); ++r) {
        std::printf("%zu,%u,%.17g\n", r + 1, entries[r].item_id, entries[r].score);
    }
}

struct ModelFiles {
    std::string users = "users.mfmat";
    std::string items = "items.mfmat";

    void add_to(CLI::App* cmd, bool required) {
        auto* u = cmd->add_option("--users-file", users, "User factor matrix (MFMAT or CSV)");
        auto* i = cmd->add_option("--items-file", items, "Item factor matrix (MFMAT or CSV)");
        if (required) {
            u->required();
            i->required();
        }
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Exact top-K inner-product serving for matrix factorization models"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic model pair");
    mfs_synthetic_spec spec;
    mfs_synthetic_spec_init(&spec);
    ModelFiles gen_files;
    gen_files.add_to(gen, false);
    gen->add_option("--users", spec.num_users, "Number of users")->capture_default_str();
    gen->add_option("--items", spec.num_items, "Number of items")->capture_default_str();
    gen->add_option("--factors", spec.factors, "Latent dimension")->capture_default_str();
    gen->add_option("--archetypes", spec.archetype_count, "User archetype directions")->capture_default_str();
    gen->add_option("--spread", spec.angular_spread, "Max user angle from its archetype (radians)")
        ->capture_default_str();
    gen->add_option("--norm-low", spec.norm_low, "Lower vector norm")->capture_default_str();
    gen->add_option("--norm-high", spec.norm_high, "Upper vector norm")->capture_default_str();
    gen->add_option("--seed", spec.seed, "RNG seed")->capture_default_str();

    // shared serving flags
    mfs_run_config cfg;
    mfs_run_config_init(&cfg);
    ModelFiles files;

    auto* build = app.add_subcommand("build-index", "Cluster users and write the index sidecar");
    files.add_to(build, true);
    std::string index_out = "index.mfidx";
    build->add_option("--clusters", cfg.clusters, "Number of user clusters")->capture_default_str();
    build->add_option("--block", cfg.block, "Work-sharing block size B")->capture_default_str();
    build->add_option("--max-iters", cfg.max_iters, "k-means iteration cap")->capture_default_str();
    build->add_option("--seed", cfg.seed, "k-means seed")->capture_default_str();
    build->add_option("--out", index_out, "Index output path")->capture_default_str();

    auto* run = app.add_subcommand("run", "Cluster, estimate, decide and serve every user");
    files.add_to(run, true);
    std::string out_dir = ".";
    bool force_index = false;
    bool force_matmul = false;
    run->add_option("--k", cfg.k, "Top-K size")->capture_default_str();
    auto* run_clusters = run->add_option("--clusters", cfg.clusters, "Number of user clusters")->capture_default_str();
    auto* run_block = run->add_option("--block", cfg.block, "Work-sharing block size B")->capture_default_str();
    auto* run_frac =
        run->add_option("--sample-frac", cfg.sample_fraction, "User sample fraction (floor 30)")->capture_default_str();
    auto* run_h0 = run->add_option("--h0", cfg.h0, "Base hardware factor")->capture_default_str();
    auto* run_seed = run->add_option("--seed", cfg.seed, "k-means seed")->capture_default_str();
    auto* run_sseed = run->add_option("--sample-seed", cfg.sample_seed, "Sampling seed")->capture_default_str();
    auto* run_iters = run->add_option("--max-iters", cfg.max_iters, "k-means iteration cap")->capture_default_str();
    run->add_option("--threads", cfg.threads, "Threads for index serving")->capture_default_str();
    run->add_flag("--force-index", force_index, "Serve through the index regardless of the estimate");
    run->add_flag("--force-matmul", force_matmul, "Serve through blocked multiply regardless of the estimate");
    run->add_option("--out", out_dir, "Directory for topk.csv and report.csv")->capture_default_str();

    auto* point = app.add_subcommand("point", "Serve one query from a prebuilt index");
    files.add_to(point, true);
    std::string index_in;
    long long user_id = -1;
    std::vector<double> vec;
    point->add_option("--index-file", index_in, "Index built by build-index")->required();
    auto* point_user = point->add_option("--user-id", user_id, "Model user to serve");
    auto* point_vec = point->add_option("--vector", vec, "Comma-separated query vector")->delimiter(',');
    point_user->excludes(point_vec);
    point->add_option("--k", cfg.k, "Top-K size")->capture_default_str();

    auto* sweep = app.add_subcommand("sweep", "Index runtime across cluster counts");
    files.add_to(sweep, true);
    std::vector<std::size_t> sweep_clusters{1, 2, 4, 8, 16};
    std::string sweep_out = "sweep.csv";
    sweep->add_option("--clusters", sweep_clusters, "Cluster counts, comma separated")
        ->delimiter(',')
        ->capture_default_str();
    sweep->add_option("--k", cfg.k, "Top-K size")->capture_default_str();
    sweep->add_option("--block", cfg.block, "Work-sharing block size B")->capture_default_str();
    sweep->add_option("--seed", cfg.seed, "k-means seed")->capture_default_str();
    sweep->add_option("--max-iters", cfg.max_iters, "k-means iteration cap")->capture_default_str();
    sweep->add_option("--out", sweep_out, "CSV output path")->capture_default_str();

    auto* calibrate = app.add_subcommand("calibrate", "Fit h0 on this machine and store it in the config file");
    files.add_to(calibrate, true);
    std::size_t repeats = 5;
    std::string config_out;
    calibrate->add_option("--repeats", repeats, "Timing repeats (median is kept)")->capture_default_str();
    calibrate->add_option("--out", config_out, "Config path (default: $MIPS_SIMDEX_CONFIG)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    const char* env_config = std::getenv("MIPS_SIMDEX_CONFIG");
    const auto t0 = std::chrono::steady_clock::now();

    try {
        if (gen->parsed()) {
            if (spec.factors == 0 || spec.num_users == 0 || spec.num_items == 0) {
                usage_error("--users, --items and --factors must be at least 1");
            }
            mfs_model* raw = nullptr;
            check(mfs_model_generate(&spec, &raw));
            ModelPtr model(raw);
            check(mfs_model_save(model.get(), gen_files.users.c_str(), gen_files.items.c_str()));
            std::printf("command=gen\nusers=%zu\nitems=%zu\nfactors=%zu\narchetypes=%zu\nspread=%.17g\n"
                        "norm_low=%.17g\nnorm_high=%.17g\nseed=%llu\nusers_file=%s\nitems_file=%s\nseconds=%.6f\n",
                        spec.num_users, spec.num_items, spec.factors, spec.archetype_count, spec.angular_spread,
                        spec.norm_low, spec.norm_high, static_cast<unsigned long long>(spec.seed),
                        gen_files.users.c_str(), gen_files.items.c_str(), elapsed(t0));
        } else if (build->parsed()) {
            auto model = load(files.users, files.items);
            mfs_index* raw = nullptr;
            check(mfs_index_build(model.get(), cfg.clusters, cfg.max_iters, cfg.seed, cfg.block, &raw));
            IndexPtr index(raw);
            check(mfs_index_save(index.get(), index_out.c_str()));
            std::printf("command=build-index\nclusters=%zu\nblock=%zu\nmax_iters=%zu\nseed=%llu\nentries=%zu\n"
                        "index_file=%s\nseconds=%.6f\n",
                        cfg.clusters, mfs_index_block_size(index.get()), cfg.max_iters,
                        static_cast<unsigned long long>(cfg.seed), mfs_index_entry_count(index.get()),
                        index_out.c_str(), elapsed(t0));
        } else if (run->parsed()) {
            if (force_index && force_matmul) usage_error("--force-index and --force-matmul are exclusive");
            if (cfg.k == 0) usage_error("--k must be at least 1");
            // Config file first, explicit flags win.
            if (env_config && std::filesystem::exists(env_config)) {
                mfs_run_config from_file = cfg;
                check(mfs_config_load(env_config, &from_file));
                if (!run_clusters->count()) cfg.clusters = from_file.clusters;
                if (!run_block->count()) cfg.block = from_file.block;
                if (!run_frac->count()) cfg.sample_fraction = from_file.sample_fraction;
                if (!run_h0->count()) cfg.h0 = from_file.h0;
                if (!run_seed->count()) cfg.seed = from_file.seed;
                if (!run_sseed->count()) cfg.sample_seed = from_file.sample_seed;
                if (!run_iters->count()) cfg.max_iters = from_file.max_iters;
            }
            cfg.force = force_index ? MFS_FORCE_INDEX : force_matmul ? MFS_FORCE_MATMUL : MFS_FORCE_NONE;

            auto model = load(files.users, files.items);
            mfs_run* raw = nullptr;
            check(mfs_run_pipeline(model.get(), &cfg, &raw));
            RunPtr result(raw);
            std::filesystem::create_directories(out_dir);
            const auto topk_path = (std::filesystem::path(out_dir) / "topk.csv").string();
            const auto report_path = (std::filesystem::path(out_dir) / "report.csv").string();
            check(mfs_run_write_topk_csv(result.get(), topk_path.c_str()));
            check(mfs_run_write_report_csv(result.get(), report_path.c_str()));

            mfs_run_summary s;
            check(mfs_run_get_summary(result.get(), &s));
            std::printf("command=run\nk=%zu\nclusters=%zu\nblock=%zu\nsample_frac=%.17g\nh0=%.17g\nseed=%llu\n"
                        "sample_seed=%llu\nmax_iters=%zu\nthreads=%zu\nforce=%s\nconfig_file=%s\n"
                        "topk_csv=%s\nreport_csv=%s\ndecision=%s\nestimated_decision=%s\nw_hat=%.6f\n"
                        "pruning_fraction=%.6f\nh=%.6f\noverhead_fraction=%.6f\nseconds=%.6f\n",
                        cfg.k, cfg.clusters, cfg.block, cfg.sample_fraction, cfg.h0,
                        static_cast<unsigned long long>(cfg.seed), static_cast<unsigned long long>(cfg.sample_seed),
                        cfg.max_iters, cfg.threads,
                        force_index ? "index" : force_matmul ? "matmul" : "none",
                        env_config ? env_config : "", topk_path.c_str(), report_path.c_str(),
                        decision_name(s.chosen), decision_name(s.estimated), s.w_hat, s.pruning_fraction, s.h,
                        s.overhead_fraction, elapsed(t0));
        } else if (point->parsed()) {
            if (!point_user->count() && !point_vec->count()) usage_error("give --user-id or --vector");
            if (cfg.k == 0) usage_error("--k must be at least 1");
            if (!std::filesystem::exists(index_in)) {
                throw CommandError{kExitIo, "missing index file: " + index_in};
            }
            auto model = load(files.users, files.items);
            mfs_index* raw = nullptr;
            check(mfs_index_load(index_in.c_str(), &raw));
            IndexPtr index(raw);

            std::vector<mfs_entry> entries(std::min(cfg.k, mfs_model_num_items(model.get())));
            std::size_t count = 0, visited = 0;
            const auto q0 = std::chrono::steady_clock::now();
            if (point_user->count()) {
                if (user_id < 0) usage_error("--user-id must be non-negative");
                check(mfs_query_user(index.get(), model.get(), static_cast<std::size_t>(user_id), cfg.k,
                                     entries.data(), entries.size(), &count, &visited));
            } else {
                check(mfs_query_vector(index.get(), model.get(), vec.data(), vec.size(), cfg.k, entries.data(),
                                       entries.size(), &count, &visited));
            }
            const double micros = elapsed(q0) * 1e6;
            entries.resize(count);
            print_entries(entries);
            std::fprintf(stderr, "visited=%zu\nlatency_us=%.3f\n", visited, micros);
        } else if (sweep->parsed()) {
            if (cfg.k == 0) usage_error("--k must be at least 1");
            auto model = load(files.users, files.items);
            check(mfs_sweep(model.get(), sweep_clusters.data(), sweep_clusters.size(), &cfg, sweep_out.c_str()));
            std::printf("command=sweep\nk=%zu\nblock=%zu\nseed=%llu\nsweep_csv=%s\nseconds=%.6f\n", cfg.k, cfg.block,
                        static_cast<unsigned long long>(cfg.seed), sweep_out.c_str(), elapsed(t0));
        } else if (calibrate->parsed()) {
            if (config_out.empty()) {
                if (!env_config) usage_error("give --out or set MIPS_SIMDEX_CONFIG");
                config_out = env_config;
            }
            auto model = load(files.users, files.items);
            double h0 = 0.0, spread = 0.0;
            check(mfs_calibrate_h0(model.get(), repeats, &h0, &spread));
            mfs_run_config stored;
            mfs_run_config_init(&stored);
            if (std::filesystem::exists(config_out)) check(mfs_config_load(config_out.c_str(), &stored));
            stored.h0 = h0;
            check(mfs_config_save(config_out.c_str(), &stored));
            if (spread > 0.5) std::fprintf(stderr, "warning: calibration spread %.2f exceeds 0.5\n", spread);
            std::printf("command=calibrate\nh0=%.6f\nspread=%.6f\nrepeats=%zu\nconfig_file=%s\nseconds=%.6f\n", h0,
                        spread, repeats, config_out.c_str(), elapsed(t0));
        }
    } catch (const CommandError& e) {
        std::fprintf(stderr, "error: %s\n", e.message.c_str());
        return e.exit_code;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIo;
    }
    return kExitOk;
}
