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

#include "mfserve/mfserve.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>
#include <utility>

#include "mfserve/brute.hpp"
#include "mfserve/clustering.hpp"
#include "mfserve/error.hpp"
#include "mfserve/index.hpp"
#include "mfserve/model_io.hpp"
#include "mfserve/optimizer.hpp"

struct mfs_model {
    mfserve::ModelPair model;
};

struct mfs_index {
    mfserve::CentroidIndex index;
};

struct mfs_run {
    mfserve::PipelineOutput output;
};

namespace {

thread_local std::string g_last_error;

mfs_status set_error(mfs_status status, const std::string& message) {
    g_last_error = message;
    return status;
}

template <typename Fn>
mfs_status guarded(Fn&& fn) noexcept {
    try {
        g_last_error.clear();
        std::forward<Fn>(fn)();
        return MFS_OK;
    } catch (const mfserve::Error& e) {
        return set_error(static_cast<mfs_status>(e.code()), e.what());
    } catch (const std::bad_alloc&) {
        return set_error(MFS_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return set_error(MFS_ERR_INTERNAL, e.what());
    } catch (...) {
        return set_error(MFS_ERR_INTERNAL, "unknown error");
    }
}

void require(bool ok, const char* what) {
    if (!ok) mfserve::fail(mfserve::ErrorCode::kInvalidArgument, what);
}

void copy_entries(const mfserve::TopKResult& r, mfs_entry* out, size_t capacity, size_t* count) {
    if (count) *count = r.entries.size();
    if (capacity < r.entries.size()) {
        mfserve::fail(mfserve::ErrorCode::kInvalidArgument,
                      "output buffer holds " + std::to_string(capacity) + " entries, need " +
                          std::to_string(r.entries.size()));
    }
    require(out != nullptr || r.entries.empty(), "output buffer is null");
    for (size_t j = 0; j < r.entries.size(); ++j) out[j] = mfs_entry{r.entries[j].item, r.entries[j].score};
}

mfserve::PipelineConfig to_config(const mfs_run_config& c) {
    mfserve::PipelineConfig out;
    out.clusters = c.clusters;
    out.block = c.block;
    out.k = c.k;
    out.max_iters = c.max_iters;
    out.sample_fraction = c.sample_fraction;
    out.h0 = c.h0;
    out.seed = c.seed;
    out.sample_seed = c.sample_seed;
    out.force = c.force == MFS_FORCE_INDEX    ? mfserve::ForcePath::kIndex
                : c.force == MFS_FORCE_MATMUL ? mfserve::ForcePath::kMatMul
                                              : mfserve::ForcePath::kNone;
    out.threads = c.threads;
    return out;
}

void from_config(const mfserve::PipelineConfig& in, mfs_run_config& c) {
    c.clusters = in.clusters;
    c.block = in.block;
    c.k = in.k;
    c.max_iters = in.max_iters;
    c.sample_fraction = in.sample_fraction;
    c.h0 = in.h0;
    c.seed = in.seed;
    c.sample_seed = in.sample_seed;
    c.threads = in.threads;
}

mfs_decision to_c(mfserve::Decision d) {
    return d == mfserve::Decision::kIndex ? MFS_DECISION_INDEX : MFS_DECISION_MATMUL;
}

}  // namespace

extern "C" {

const char* mfs_last_error(void) { return g_last_error.c_str(); }

const char* mfs_version(void) { return "0.1.0"; }

void mfs_run_config_init(mfs_run_config* config) {
    if (!config) return;
    *config = mfs_run_config{};
    from_config(mfserve::PipelineConfig{}, *config);
    config->force = MFS_FORCE_NONE;
}

void mfs_synthetic_spec_init(mfs_synthetic_spec* spec) {
    if (!spec) return;
    const mfserve::SyntheticSpec d;
    *spec = mfs_synthetic_spec{d.num_users,      d.num_items, d.factors,   d.archetype_count,
                               d.angular_spread, d.norm_low,  d.norm_high, d.seed};
}

mfs_status mfs_config_load(const char* path, mfs_run_config* config) {
    return guarded([&] {
        require(path && config, "null argument");
        mfserve::PipelineConfig c = to_config(*config);
        mfserve::load_config(path, c);
        from_config(c, *config);
    });
}

mfs_status mfs_config_save(const char* path, const mfs_run_config* config) {
    return guarded([&] {
        require(path && config, "null argument");
        mfserve::save_config(path, to_config(*config));
    });
}

mfs_status mfs_model_generate(const mfs_synthetic_spec* spec, mfs_model** out) {
    return guarded([&] {
        require(spec && out, "null argument");
        mfserve::SyntheticSpec s;
        s.num_users = spec->num_users;
        s.num_items = spec->num_items;
        s.factors = spec->factors;
        s.archetype_count = spec->archetype_count;
        s.angular_spread = spec->angular_spread;
        s.norm_low = spec->norm_low;
        s.norm_high = spec->norm_high;
        s.seed = spec->seed;
        *out = new mfs_model{mfserve::generate_synthetic(s)};
    });
}

mfs_status mfs_model_load(const char* user_path, const char* item_path, mfs_model** out) {
    return guarded([&] {
        require(user_path && item_path && out, "null argument");
        *out = new mfs_model{mfserve::load_model(user_path, item_path)};
    });
}

mfs_status mfs_model_save(const mfs_model* model, const char* user_path, const char* item_path) {
    return guarded([&] {
        require(model && user_path && item_path, "null argument");
        mfserve::save_model(model->model, user_path, item_path);
    });
}

void mfs_model_free(mfs_model* model) { delete model; }

size_t mfs_model_num_users(const mfs_model* model) { return model ? model->model.users.rows() : 0; }
size_t mfs_model_num_items(const mfs_model* model) { return model ? model->model.items.rows() : 0; }
size_t mfs_model_factors(const mfs_model* model) { return model ? model->model.factors() : 0; }

mfs_status mfs_model_user(const mfs_model* model, size_t user_id, double* out, size_t capacity) {
    return guarded([&] {
        require(model && out, "null argument");
        require(user_id < model->model.users.rows(), "user id out of range");
        const auto row = model->model.users.row(user_id);
        require(capacity >= row.size(), "output buffer too small");
        std::memcpy(out, row.data(), row.size() * sizeof(double));
    });
}

mfs_status mfs_topk_naive(const mfs_model* model, size_t user_id, size_t k, mfs_entry* out, size_t capacity,
                          size_t* count) {
    return guarded([&] {
        require(model != nullptr, "null model");
        require(user_id < model->model.users.rows(), "user id out of range");
        const auto& m = model->model;
        mfserve::ModelPair single(
            mfserve::FactorMatrix(1, m.factors(), {m.users.row(user_id).begin(), m.users.row(user_id).end()}),
            m.items);
        auto r = mfserve::topk_naive(single, k).front();
        copy_entries(r, out, capacity, count);
    });
}

mfs_status mfs_index_build(const mfs_model* model, size_t clusters, size_t max_iters, uint64_t seed, size_t block,
                           mfs_index** out) {
    return guarded([&] {
        require(model && out, "null argument");
        auto clustering = mfserve::kmeans(model->model.users, clusters, max_iters, seed);
        *out = new mfs_index{mfserve::build_index(model->model, std::move(clustering), block)};
    });
}

mfs_status mfs_index_load(const char* path, mfs_index** out) {
    return guarded([&] {
        require(path && out, "null argument");
        *out = new mfs_index{mfserve::load_index(path)};
    });
}

mfs_status mfs_index_save(const mfs_index* index, const char* path) {
    return guarded([&] {
        require(index && path, "null argument");
        mfserve::save_index(index->index, path);
    });
}

void mfs_index_free(mfs_index* index) { delete index; }

size_t mfs_index_num_clusters(const mfs_index* index) { return index ? index->index.num_clusters() : 0; }
size_t mfs_index_entry_count(const mfs_index* index) { return index ? index->index.entry_count() : 0; }
size_t mfs_index_block_size(const mfs_index* index) { return index ? index->index.block_size() : 0; }

mfs_status mfs_query_user(const mfs_index* index, const mfs_model* model, size_t user_id, size_t k, mfs_entry* out,
                          size_t capacity, size_t* count, size_t* visited) {
    return guarded([&] {
        require(index && model, "null argument");
        require(user_id <= UINT32_MAX, "user id out of range");
        const auto r = mfserve::query_user(index->index, model->model, static_cast<mfserve::UserId>(user_id), k);
        if (visited) *visited = r.visited;
        copy_entries(r, out, capacity, count);
    });
}

mfs_status mfs_query_vector(const mfs_index* index, const mfs_model* model, const double* vector, size_t length,
                            size_t k, mfs_entry* out, size_t capacity, size_t* count, size_t* visited) {
    return guarded([&] {
        require(index && model && vector, "null argument");
        const auto r = mfserve::query_vector(index->index, model->model, {vector, length}, k);
        if (visited) *visited = r.visited;
        copy_entries(r, out, capacity, count);
    });
}

mfs_status mfs_index_insert_item(mfs_index* index, mfs_model* model, const double* vector, size_t length,
                                 uint32_t* item_id) {
    return guarded([&] {
        require(index && model && vector, "null argument");
        const auto id = mfserve::insert_item(index->index, model->model, {vector, length});
        if (item_id) *item_id = id;
    });
}

mfs_status mfs_index_add_user(mfs_index* index, mfs_model* model, const double* vector, size_t length,
                              uint32_t* user_id, int* served_by_index) {
    return guarded([&] {
        require(index && model && vector, "null argument");
        const auto r = mfserve::add_user(index->index, model->model, {vector, length});
        if (user_id) *user_id = r.user_id;
        if (served_by_index) *served_by_index = r.served_by_index ? 1 : 0;
    });
}

double mfs_hardware_factor(size_t k, double h0) {
    double h = 0.0;
    if (guarded([&] { h = mfserve::hardware_factor(k, h0); }) != MFS_OK) return -1.0;
    return h;
}

mfs_decision mfs_decide(double w_hat, size_t item_count, size_t block, size_t k, double h0) {
    mfs_decision d = MFS_DECISION_MATMUL;
    guarded([&] { d = to_c(mfserve::decide(w_hat, item_count, block, k, h0)); });
    return d;
}

mfs_status mfs_calibrate_h0(const mfs_model* model, size_t repeats, double* h0, double* spread) {
    return guarded([&] {
        require(model && h0, "null argument");
        const auto cal = mfserve::calibrate_h0(model->model, repeats);
        *h0 = cal.h0;
        if (spread) *spread = cal.spread;
    });
}

mfs_status mfs_run_pipeline(const mfs_model* model, const mfs_run_config* config, mfs_run** out) {
    return guarded([&] {
        require(model && config && out, "null argument");
        *out = new mfs_run{mfserve::run_pipeline(model->model, to_config(*config))};
    });
}

void mfs_run_free(mfs_run* run) { delete run; }

mfs_status mfs_run_get_summary(const mfs_run* run, mfs_run_summary* summary) {
    return guarded([&] {
        require(run && summary, "null argument");
        const auto& rep = run->output.report;
        summary->chosen = to_c(rep.chosen);
        summary->estimated = to_c(rep.estimate.decision);
        summary->forced = rep.forced ? 1 : 0;
        summary->w_hat = rep.estimate.w_hat;
        summary->ci_low = rep.estimate.ci_low;
        summary->ci_high = rep.estimate.ci_high;
        summary->pruning_fraction = rep.estimate.pruning_fraction;
        summary->h = rep.estimate.h;
        summary->sample_size = rep.estimate.sample_size;
        summary->cluster_seconds = rep.seconds.cluster;
        summary->build_seconds = rep.seconds.build;
        summary->estimate_seconds = rep.seconds.estimate;
        summary->serve_seconds = rep.seconds.serve;
        summary->overhead_fraction = rep.overhead_fraction();
    });
}

mfs_status mfs_run_user_result(const mfs_run* run, size_t user_id, mfs_entry* out, size_t capacity, size_t* count) {
    return guarded([&] {
        require(run != nullptr, "null run");
        require(user_id < run->output.results.size(), "user id out of range");
        copy_entries(run->output.results[user_id], out, capacity, count);
    });
}

mfs_status mfs_run_write_topk_csv(const mfs_run* run, const char* path) {
    return guarded([&] {
        require(run && path, "null argument");
        mfserve::write_topk_csv(run->output.results, path);
    });
}

mfs_status mfs_run_write_report_csv(const mfs_run* run, const char* path) {
    return guarded([&] {
        require(run && path, "null argument");
        mfserve::write_report_csv(run->output.report, path);
    });
}

mfs_status mfs_sweep(const mfs_model* model, const size_t* clusters, size_t count, const mfs_run_config* config,
                     const char* csv_path) {
    return guarded([&] {
        require(model && clusters && config && csv_path, "null argument");
        const auto rows = mfserve::run_sweep(model->model, {clusters, count}, to_config(*config));
        mfserve::write_sweep_csv(rows, csv_path);
    });
}

}  // extern "C"
