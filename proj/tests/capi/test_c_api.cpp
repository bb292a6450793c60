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


// Exercises the shared library strictly through its C header.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"
#include "mfserve/mfserve.h"
#include "scratch.hpp"

namespace {

mfs_model* tight_model(size_t users, size_t items, size_t factors, uint64_t seed) {
    mfs_synthetic_spec spec;
    mfs_synthetic_spec_init(&spec);
    spec.num_users = users;
    spec.num_items = items;
    spec.factors = factors;
    spec.angular_spread = 0.05;
    spec.seed = seed;
    mfs_model* m = nullptr;
    REQUIRE(mfs_model_generate(&spec, &m) == MFS_OK);
    return m;
}

}  // namespace

TEST_CASE("version and defaults") {
    CHECK(std::string(mfs_version()).size() > 0);
    mfs_run_config cfg;
    mfs_run_config_init(&cfg);
    CHECK(cfg.clusters == 8);
    CHECK(cfg.block == 4096);
    CHECK(cfg.k == 1);
    CHECK(cfg.max_iters == 100);
    CHECK(cfg.sample_fraction == 0.001);
    CHECK(cfg.h0 == 0.05);
    CHECK(cfg.force == MFS_FORCE_NONE);
}

TEST_CASE("errors come back as status codes with a message") {
    mfs_model* m = nullptr;
    mfs_synthetic_spec spec;
    mfs_synthetic_spec_init(&spec);
    spec.factors = 0;
    CHECK(mfs_model_generate(&spec, &m) == MFS_ERR_INVALID_ARGUMENT);
    CHECK(m == nullptr);
    CHECK(std::string(mfs_last_error()).find("factors") != std::string::npos);
    CHECK(mfs_model_load("/nonexistent/u.bin", "/nonexistent/i.bin", &m) == MFS_ERR_IO);
    CHECK(mfs_model_generate(nullptr, &m) == MFS_ERR_INVALID_ARGUMENT);
    CHECK(mfs_hardware_factor(0, 0.05) < 0);
}

TEST_CASE("model, index and queries through the C surface") {
    test::Scratch dir;
    mfs_model* m = tight_model(300, 400, 6, 3);
    CHECK(mfs_model_num_users(m) == 300);
    CHECK(mfs_model_num_items(m) == 400);
    CHECK(mfs_model_factors(m) == 6);

    const std::string u = (dir / "u.bin").string(), i = (dir / "i.bin").string(), x = (dir / "x.idx").string();
    REQUIRE(mfs_model_save(m, u.c_str(), i.c_str()) == MFS_OK);
    mfs_model* m2 = nullptr;
    REQUIRE(mfs_model_load(u.c_str(), i.c_str(), &m2) == MFS_OK);

    mfs_index* idx = nullptr;
    REQUIRE(mfs_index_build(m, 4, 100, 0, 128, &idx) == MFS_OK);
    CHECK(mfs_index_num_clusters(idx) == 4);
    CHECK(mfs_index_entry_count(idx) == 4 * 400);
    CHECK(mfs_index_block_size(idx) == 128);
    REQUIRE(mfs_index_save(idx, x.c_str()) == MFS_OK);
    mfs_index* idx2 = nullptr;
    REQUIRE(mfs_index_load(x.c_str(), &idx2) == MFS_OK);

    std::vector<mfs_entry> a(10), b(10), c(10);
    for (size_t user = 0; user < 300; user += 7) {
        size_t na = 0, nb = 0, nc = 0, visited = 0;
        REQUIRE(mfs_query_user(idx, m, user, 10, a.data(), a.size(), &na, &visited) == MFS_OK);
        REQUIRE(mfs_query_user(idx2, m2, user, 10, b.data(), b.size(), &nb, nullptr) == MFS_OK);
        REQUIRE(mfs_topk_naive(m, user, 10, c.data(), c.size(), &nc) == MFS_OK);
        REQUIRE(na == 10);
        CHECK(visited >= 10);
        for (size_t r = 0; r < 10; ++r) {
            CHECK(a[r].item_id == c[r].item_id);
            CHECK(a[r].score == c[r].score);
            CHECK(b[r].item_id == c[r].item_id);
        }
        std::vector<double> vec(6);
        REQUIRE(mfs_model_user(m, user, vec.data(), vec.size()) == MFS_OK);
        REQUIRE(mfs_query_vector(idx, m, vec.data(), vec.size(), 10, b.data(), b.size(), &nb, nullptr) == MFS_OK);
        for (size_t r = 0; r < 10; ++r) CHECK(b[r].item_id == c[r].item_id);
    }

    size_t n = 0;
    CHECK(mfs_query_user(idx, m, 0, 10, a.data(), 3, &n, nullptr) == MFS_ERR_INVALID_ARGUMENT);
    CHECK(mfs_query_user(idx, m, 300, 1, a.data(), 3, &n, nullptr) == MFS_ERR_INVALID_ARGUMENT);
    const double short_vec[2] = {1, 2};
    CHECK(mfs_query_vector(idx, m, short_vec, 2, 1, a.data(), 3, &n, nullptr) == MFS_ERR_DIMENSION);

    std::vector<double> item(6, 0.0);
    REQUIRE(mfs_model_user(m, 5, item.data(), item.size()) == MFS_OK);
    for (double& v : item) v *= 50.0;
    uint32_t id = 0;
    REQUIRE(mfs_index_insert_item(idx, m, item.data(), item.size(), &id) == MFS_OK);
    CHECK(id == 400);
    REQUIRE(mfs_query_user(idx, m, 5, 1, a.data(), 1, &n, nullptr) == MFS_OK);
    CHECK(a[0].item_id == 400);

    const double orth[6] = {0, 0, 0, 0, 0, 1};
    uint32_t uid = 0;
    int served = -1;
    REQUIRE(mfs_index_add_user(idx, m, orth, 6, &uid, &served) == MFS_OK);
    CHECK(uid == 300);
    CHECK((served == 0 || served == 1));
    REQUIRE(mfs_query_user(idx, m, uid, 5, a.data(), 5, &n, nullptr) == MFS_OK);
    REQUIRE(mfs_topk_naive(m, uid, 5, c.data(), 5, &n) == MFS_OK);
    for (size_t r = 0; r < 5; ++r) CHECK(a[r].item_id == c[r].item_id);

    mfs_index_free(idx2);
    mfs_index_free(idx);
    mfs_model_free(m2);
    mfs_model_free(m);
}

TEST_CASE("pipeline, decision helpers and outputs") {
    test::Scratch dir;
    mfs_model* m = tight_model(500, 600, 5, 1);
    mfs_run_config cfg;
    mfs_run_config_init(&cfg);
    cfg.k = 4;
    cfg.block = 64;
    cfg.force = MFS_FORCE_INDEX;
    mfs_run* a = nullptr;
    REQUIRE(mfs_run_pipeline(m, &cfg, &a) == MFS_OK);
    cfg.force = MFS_FORCE_MATMUL;
    mfs_run* b = nullptr;
    REQUIRE(mfs_run_pipeline(m, &cfg, &b) == MFS_OK);

    mfs_run_summary sa, sb;
    REQUIRE(mfs_run_get_summary(a, &sa) == MFS_OK);
    REQUIRE(mfs_run_get_summary(b, &sb) == MFS_OK);
    CHECK(sa.chosen == MFS_DECISION_INDEX);
    CHECK(sb.chosen == MFS_DECISION_MATMUL);
    CHECK(sa.forced == 1);
    CHECK(sa.sample_size == 30);

    std::vector<mfs_entry> ea(4), eb(4);
    for (size_t u = 0; u < 500; ++u) {
        size_t na = 0, nb = 0;
        REQUIRE(mfs_run_user_result(a, u, ea.data(), 4, &na) == MFS_OK);
        REQUIRE(mfs_run_user_result(b, u, eb.data(), 4, &nb) == MFS_OK);
        REQUIRE(na == nb);
        for (size_t r = 0; r < na; ++r) CHECK(ea[r].item_id == eb[r].item_id);
    }
    const std::string ta = (dir / "a.csv").string(), tr = (dir / "r.csv").string();
    CHECK(mfs_run_write_topk_csv(a, ta.c_str()) == MFS_OK);
    CHECK(mfs_run_write_report_csv(a, tr.c_str()) == MFS_OK);

    const size_t counts[] = {2, 1, 2};
    const std::string sw = (dir / "s.csv").string();
    CHECK(mfs_sweep(m, counts, 3, &cfg, sw.c_str()) == MFS_OK);

    CHECK(mfs_decide(32, 1000, 0, 1, 0.05) == MFS_DECISION_INDEX);
    CHECK(mfs_decide(50, 1000, 0, 1, 0.05) == MFS_DECISION_MATMUL);
    CHECK(mfs_hardware_factor(1, 0.05) == 0.05);

    double h0 = 0, spread = -1;
    CHECK(mfs_calibrate_h0(m, 3, &h0, &spread) == MFS_OK);
    CHECK(h0 > 0);
    CHECK(spread >= 0);

    const std::string cf = (dir / "c.cfg").string();
    cfg.h0 = 0.3;
    CHECK(mfs_config_save(cf.c_str(), &cfg) == MFS_OK);
    mfs_run_config back;
    mfs_run_config_init(&back);
    CHECK(mfs_config_load(cf.c_str(), &back) == MFS_OK);
    CHECK(back.h0 == 0.3);

    mfs_run_free(a);
    mfs_run_free(b);
    mfs_model_free(m);
    mfs_model_free(nullptr);
}
