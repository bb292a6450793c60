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

/*
 * C interface to the mfserve exact top-K inner-product serving library.
 *
 * All objects are opaque handles owned by the caller and released with the
 * matching *_free function. Every fallible call returns an mfs_status; on
 * failure mfs_last_error() describes the problem for the calling thread.
 * Handles are safe to read concurrently; mutating calls (mfs_index_insert_item,
 * mfs_index_add_user) need exclusive access to both the index and the model.
 */

#ifndef MFSERVE_H
#define MFSERVE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(MFS_BUILDING_LIBRARY)
#    define MFS_API __declspec(dllexport)
#  else
#    define MFS_API __declspec(dllimport)
#  endif
#else
#  define MFS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mfs_status {
    MFS_OK = 0,
    MFS_ERR_INVALID_ARGUMENT = 1,
    MFS_ERR_IO = 2,
    MFS_ERR_FORMAT = 3,
    MFS_ERR_DIMENSION = 4,
    MFS_ERR_NON_FINITE = 5,
    MFS_ERR_INTERNAL = 6
} mfs_status;

typedef enum mfs_decision { MFS_DECISION_INDEX = 0, MFS_DECISION_MATMUL = 1 } mfs_decision;

typedef enum mfs_force { MFS_FORCE_NONE = 0, MFS_FORCE_INDEX = 1, MFS_FORCE_MATMUL = 2 } mfs_force;

typedef struct mfs_model mfs_model;
typedef struct mfs_index mfs_index;
typedef struct mfs_run mfs_run;

typedef struct mfs_entry {
    uint32_t item_id;
    double score;
} mfs_entry;

typedef struct mfs_synthetic_spec {
    size_t num_users;
    size_t num_items;
    size_t factors;
    size_t archetype_count;
    double angular_spread;
    double norm_low;
    double norm_high;
    uint64_t seed;
} mfs_synthetic_spec;

typedef struct mfs_run_config {
    size_t clusters;
    size_t block;
    size_t k;
    size_t max_iters;
    double sample_fraction;
    double h0;
    uint64_t seed;
    uint64_t sample_seed;
    mfs_force force;
    size_t threads;
} mfs_run_config;

typedef struct mfs_run_summary {
    mfs_decision chosen;
    mfs_decision estimated;
    int forced;
    double w_hat;
    double ci_low;
    double ci_high;
    double pruning_fraction;
    double h;
    size_t sample_size;
    double cluster_seconds;
    double build_seconds;
    double estimate_seconds;
    double serve_seconds;
    double overhead_fraction;
} mfs_run_summary;

MFS_API const char* mfs_last_error(void);
MFS_API const char* mfs_version(void);

/* Defaults: 8 clusters, block 4096, K 1, 100 k-means iterations,
 * sample fraction 0.001, h0 0.05, seeds 0, one thread. */
MFS_API void mfs_run_config_init(mfs_run_config* config);
MFS_API void mfs_synthetic_spec_init(mfs_synthetic_spec* spec);

/* Reads key=value pairs over an initialised config. */
MFS_API mfs_status mfs_config_load(const char* path, mfs_run_config* config);
MFS_API mfs_status mfs_config_save(const char* path, const mfs_run_config* config);

/* Models */
MFS_API mfs_status mfs_model_generate(const mfs_synthetic_spec* spec, mfs_model** out);
MFS_API mfs_status mfs_model_load(const char* user_path, const char* item_path, mfs_model** out);
MFS_API mfs_status mfs_model_save(const mfs_model* model, const char* user_path, const char* item_path);
MFS_API void mfs_model_free(mfs_model* model);
MFS_API size_t mfs_model_num_users(const mfs_model* model);
MFS_API size_t mfs_model_num_items(const mfs_model* model);
MFS_API size_t mfs_model_factors(const mfs_model* model);
/* Copies `factors` values of one user row into `out`. */
MFS_API mfs_status mfs_model_user(const mfs_model* model, size_t user_id, double* out, size_t capacity);

/* Brute force */
MFS_API mfs_status mfs_topk_naive(const mfs_model* model, size_t user_id, size_t k, mfs_entry* out,
                                  size_t capacity, size_t* count);

/* Index */
MFS_API mfs_status mfs_index_build(const mfs_model* model, size_t clusters, size_t max_iters, uint64_t seed,
                                   size_t block, mfs_index** out);
MFS_API mfs_status mfs_index_load(const char* path, mfs_index** out);
MFS_API mfs_status mfs_index_save(const mfs_index* index, const char* path);
MFS_API void mfs_index_free(mfs_index* index);
MFS_API size_t mfs_index_num_clusters(const mfs_index* index);
MFS_API size_t mfs_index_entry_count(const mfs_index* index);
MFS_API size_t mfs_index_block_size(const mfs_index* index);

/* Exact top-K for a model user (no work sharing). Writes min(k, items)
 * entries best first; `visited` may be NULL. */
MFS_API mfs_status mfs_query_user(const mfs_index* index, const mfs_model* model, size_t user_id, size_t k,
                                  mfs_entry* out, size_t capacity, size_t* count, size_t* visited);
/* Exact top-K for an arbitrary vector of `length` factors. */
MFS_API mfs_status mfs_query_vector(const mfs_index* index, const mfs_model* model, const double* vector,
                                    size_t length, size_t k, mfs_entry* out, size_t capacity, size_t* count,
                                    size_t* visited);
MFS_API mfs_status mfs_index_insert_item(mfs_index* index, mfs_model* model, const double* vector, size_t length,
                                         uint32_t* item_id);
MFS_API mfs_status mfs_index_add_user(mfs_index* index, mfs_model* model, const double* vector, size_t length,
                                      uint32_t* user_id, int* served_by_index);

/* Optimizer */
MFS_API double mfs_hardware_factor(size_t k, double h0);
MFS_API mfs_decision mfs_decide(double w_hat, size_t item_count, size_t block, size_t k, double h0);
/* Median-of-`repeats` h0 on the given model; spread may be NULL. */
MFS_API mfs_status mfs_calibrate_h0(const mfs_model* model, size_t repeats, double* h0, double* spread);

/* End-to-end pipeline */
MFS_API mfs_status mfs_run_pipeline(const mfs_model* model, const mfs_run_config* config, mfs_run** out);
MFS_API void mfs_run_free(mfs_run* run);
MFS_API mfs_status mfs_run_get_summary(const mfs_run* run, mfs_run_summary* summary);
MFS_API mfs_status mfs_run_user_result(const mfs_run* run, size_t user_id, mfs_entry* out, size_t capacity,
                                       size_t* count);
/* top-K CSV columns: user_id,rank,item_id,score */
MFS_API mfs_status mfs_run_write_topk_csv(const mfs_run* run, const char* path);
/* report CSV columns: stage,seconds,decision,w_hat,pruning_fraction,h,users,items,k,overhead_fraction */
MFS_API mfs_status mfs_run_write_report_csv(const mfs_run* run, const char* path);

/* Cluster-count sweep; CSV columns: C,cluster_seconds,serve_seconds,w_bar.
 * Duplicate counts are dropped and rows come out in ascending C. */
MFS_API mfs_status mfs_sweep(const mfs_model* model, const size_t* clusters, size_t count,
                             const mfs_run_config* config, const char* csv_path);

#ifdef __cplusplus
}
#endif

#endif /* MFSERVE_H */
