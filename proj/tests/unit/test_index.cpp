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


#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "mfserve/brute.hpp"
#include "mfserve/error.hpp"
#include "mfserve/index.hpp"
#include "oracle.hpp"
#include "scratch.hpp"

using namespace mfserve;
using doctest::Approx;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<UserId> all_users(const ModelPair& m) {
    std::vector<UserId> ids(m.users.rows());
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

// Bounds never increase along a list, and every item appears exactly once.
void check_lists(const CentroidIndex& index) {
    for (ClusterId c = 0; c < index.num_clusters(); ++c) {
        const auto list = index.list(c);
        REQUIRE(list.size() == index.num_items());
        std::vector<char> seen(index.num_items(), 0);
        for (std::size_t p = 0; p < list.size(); ++p) {
            REQUIRE(list[p].item < index.num_items());
            CHECK(seen[list[p].item] == 0);
            seen[list[p].item] = 1;
            if (p > 0) {
                CHECK(list[p - 1].bound >= list[p].bound);
                if (list[p - 1].bound == list[p].bound) CHECK(list[p - 1].item < list[p].item);
            }
        }
    }
}

// Every member's scaled rating is under its list's bound for every item.
void check_upper_bounds(const CentroidIndex& index, const ModelPair& m) {
    const auto& cl = index.clustering();
    const std::size_t f = m.factors();
    for (ClusterId c = 0; c < index.num_clusters(); ++c) {
        std::vector<double> bound(index.num_items());
        for (const auto& e : index.list(c)) bound[e.item] = e.bound;
        for (UserId u : cl.members[c]) {
            const double un = oracle::norm(m.users.row_ptr(u), f);
            if (un == 0.0) continue;
            for (std::size_t i = 0; i < m.items.rows(); ++i) {
                const double scaled = oracle::dot(m.users.row_ptr(u), m.items.row_ptr(i), f) / un;
                REQUIRE(bound[i] >= scaled - 1e-9);
            }
        }
    }
}

void check_exact(const std::vector<TopKResult>& got, const ModelPair& m, std::span<const UserId> users,
                 std::size_t k) {
    REQUIRE(got.size() == users.size());
    for (std::size_t p = 0; p < users.size(); ++p) {
        const auto want = oracle::topk(m.items, m.users.row_ptr(users[p]), k);
        CHECK(got[p].user_id == users[p]);
        CHECK_MESSAGE(oracle::same(want, got[p].entries),
                      "user " << users[p] << ": " << oracle::describe(want, got[p].entries));
    }
}

CentroidIndex make_index(const ModelPair& m, std::size_t clusters, std::size_t block = kDefaultBlock,
                         std::uint64_t seed = 0) {
    return build_index(m, kmeans(m.users, clusters, 100, seed), block);
}

}  // namespace

TEST_SUITE("index") {

TEST_CASE("item bound examples") {
    CHECK(item_bound(2.0, 0.5, 1.0) == 2.0);
    CHECK(item_bound(2.0, kPi / 3, kPi / 6) == Approx(std::sqrt(3.0)).epsilon(1e-15));
    CHECK(item_bound(2.0, kPi / 3, kPi / 6) == Approx(1.7320508).epsilon(1e-8));
    CHECK(item_bound(1.0, kPi / 2, 0.0) == Approx(0.0).epsilon(1e-15));
    CHECK(std::abs(item_bound(1.0, kPi / 2, 0.0)) < 1e-15);
    CHECK_THROWS_AS(item_bound(-1.0, 0.1, 0.1), Error);
    CHECK_THROWS_AS(item_bound(1.0, 4.0, 0.1), Error);
    CHECK_THROWS_AS(item_bound(1.0, 0.1, -0.1), Error);
}

TEST_CASE("item bound dominates the scaled rating of any user within theta_b") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> angle(0.0, kPi);
    std::uniform_real_distribution<double> len(0.0, 5.0);
    for (int t = 0; t < 20000; ++t) {
        const double theta_ic = angle(rng);
        const double theta_b = angle(rng);
        const double theta_uc = std::uniform_real_distribution<double>(0.0, theta_b)(rng);
        const double n = len(rng);
        // The largest cos(theta_ui) for such a user is cos(max(0, theta_ic - theta_b)).
        const double worst_case = n * std::cos(std::max(0.0, theta_ic - theta_uc));
        CHECK(item_bound(n, theta_ic, theta_b) >= worst_case - 1e-12);
    }
}

TEST_CASE("one cluster with every item inside theta_b sorts by norm") {
    // Users span the plane so theta_b is large; items sit near the centroid.
    const auto users = FactorMatrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
    const auto items = FactorMatrix::from_rows({{3, 3.1}, {1, 0.9}, {2, 2}});
    const ModelPair m(users, items);
    const auto index = make_index(m, 1);
    const auto list = index.list(0);
    CHECK(list[0].item == 0);
    CHECK(list[1].item == 2);
    CHECK(list[2].item == 1);
    CHECK(list[0].bound == Approx(oracle::norm(items.row_ptr(0), 2)));
}

TEST_CASE("zero distortion orders the list by true centroid ratings") {
    const auto user = FactorMatrix::from_rows({{0.3, -1.2, 0.7, 2.0}});
    const auto m = oracle::make_model(oracle::Regime::kUniform, 1, 300, 4, 2);
    const ModelPair model(user, m.items);
    const auto index = make_index(model, 1);
    REQUIRE(index.clustering().theta_b[0] == 0.0);
    const double un = oracle::norm(user.row_ptr(0), 4);
    const auto list = index.list(0);
    for (std::size_t p = 0; p < list.size(); ++p) {
        const double scaled = oracle::dot(user.row_ptr(0), m.items.row_ptr(list[p].item), 4) / un;
        CHECK(list[p].bound == Approx(scaled).epsilon(1e-12));
        if (p > 0) {
            const double prev = oracle::dot(user.row_ptr(0), m.items.row_ptr(list[p - 1].item), 4) / un;
            CHECK(prev >= scaled - 1e-12);
        }
    }
}

TEST_CASE("list bounds agree with an independent evaluation") {
    const auto m = oracle::make_model(oracle::Regime::kModerate, 300, 200, 6, 4);
    const auto index = make_index(m, 4);
    const auto& cl = index.clustering();
    for (ClusterId c = 0; c < 4; ++c) {
        for (const auto& e : index.list(c)) {
            const double n = oracle::norm(m.items.row_ptr(e.item), 6);
            const double t = oracle::angle(m.items.row_ptr(e.item), cl.centroids.row_ptr(c), 6);
            CHECK(e.bound == Approx(oracle::bound(n, t, cl.theta_b[c])).epsilon(1e-9));
        }
    }
}

TEST_CASE("lists are sorted, complete and bound every member exhaustively") {
    for (auto regime : {oracle::Regime::kTight, oracle::Regime::kModerate, oracle::Regime::kUniform,
                        oracle::Regime::kIntegerTies}) {
        CAPTURE(oracle::name(regime));
        const auto m = oracle::make_model(regime, 150, 220, 5, 6);
        for (std::size_t c : {1, 3, 8}) {
            const auto index = make_index(m, c);
            CHECK(index.entry_count() == c * 220);
            check_lists(index);
            check_upper_bounds(index, m);
        }
    }
}

TEST_CASE("query_user matches the oracle") {
    const auto m = oracle::make_model(oracle::Regime::kModerate, 200, 500, 8, 1);
    const auto index = make_index(m, 8);
    const auto users = all_users(m);
    for (std::size_t k : {1, 5, 10}) {
        CAPTURE(k);
        std::vector<TopKResult> got;
        for (UserId u : users) got.push_back(query_user(index, m, u, k));
        check_exact(got, m, users, k);
        for (const auto& r : got) {
            CHECK(r.visited >= k);
            CHECK(r.visited <= 500);
        }
    }
}

TEST_CASE("K beyond the item count ranks every item") {
    const auto m = oracle::make_model(oracle::Regime::kIntegerTies, 20, 30, 3, 2);
    const auto index = make_index(m, 3);
    for (UserId u = 0; u < 20; ++u) {
        const auto r = query_user(index, m, u, 50);
        CHECK(r.entries.size() == 30);
        CHECK(oracle::same(oracle::topk(m.items, m.users.row_ptr(u), 30), r.entries));
        CHECK(oracle::same(oracle::topk(m.items, m.users.row_ptr(u), 30), query_user(index, m, u, 30).entries));
    }
    CHECK_THROWS_AS(query_user(index, m, 0, 0), Error);
    CHECK_THROWS_AS(query_user(index, m, 20, 1), Error);
}

TEST_CASE("a user on its centroid at zero distortion stops after K items") {
    const auto user = FactorMatrix::from_rows({{1.0, 2.0, -0.5}});
    const auto items = oracle::make_model(oracle::Regime::kUniform, 1, 400, 3, 5).items;
    const ModelPair m(user, items);
    const auto index = make_index(m, 1);
    for (std::size_t k : {1, 3, 10}) {
        const auto r = query_user(index, m, 0, k);
        CHECK(r.visited == k);
        CHECK(oracle::same(oracle::topk(items, user.row_ptr(0), k), r.entries));
    }
}

TEST_CASE("batch serving matches the oracle with and without work sharing") {
    for (auto regime : {oracle::Regime::kTight, oracle::Regime::kUniform, oracle::Regime::kIntegerTies}) {
        CAPTURE(oracle::name(regime));
        const auto m = oracle::make_model(regime, 180, 260, 5, 9);
        const auto users = all_users(m);
        for (std::size_t block : {std::size_t{0}, std::size_t{1}, std::size_t{37}, std::size_t{260},
                                  std::size_t{5000}}) {
            CAPTURE(block);
            const auto index = make_index(m, 4, block);
            CHECK(index.block_size() == std::min<std::size_t>(block, 260));
            for (std::size_t k : {1, 7}) {
                BatchOptions shared;
                BatchOptions solo;
                solo.work_sharing = false;
                const auto a = query_batch(index, m, users, k, shared);
                const auto b = query_batch(index, m, users, k, solo);
                check_exact(a, m, users, k);
                check_exact(b, m, users, k);
                for (std::size_t p = 0; p < users.size(); ++p) {
                    CHECK(b[p].visited == query_user(index, m, users[p], k).visited);
                    CHECK(a[p].visited >= std::min<std::size_t>(index.block_size(), 260));
                }
            }
        }
    }
}

TEST_CASE("batch serving handles subsets, repeats and threads") {
    const auto m = oracle::make_model(oracle::Regime::kModerate, 120, 150, 4, 3);
    const auto index = make_index(m, 5, 16);
    const std::vector<UserId> users{7, 3, 7, 119, 0};
    BatchOptions opt;
    opt.threads = 3;
    opt.blocks = BlockSpec{2, 8};
    check_exact(query_batch(index, m, users, 4, opt), m, users, 4);
    const std::vector<UserId> bad{1, 500};
    CHECK_THROWS_AS(query_batch(index, m, bad, 1), Error);
}

TEST_CASE("default block on a ten thousand item model stays exact") {
    const auto m = oracle::make_model(oracle::Regime::kModerate, 300, 10000, 10, 12);
    const auto index = make_index(m, 8);
    CHECK(index.block_size() == 4096);
    const auto users = all_users(m);
    check_exact(query_batch(index, m, users, 10), m, users, 10);
}

TEST_CASE("novel vectors are answered exactly") {
    const auto m = oracle::make_model(oracle::Regime::kTight, 200, 300, 6, 4);
    const auto index = make_index(m, 4);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> v(6);
        for (double& x : v) x = g(rng);
        for (std::size_t k : {1, 5}) {
            const auto r = query_vector(index, m, v, k);
            CHECK(oracle::same(oracle::topk(m.items, v.data(), k), r.entries));
        }
    }
    CHECK_THROWS_AS(query_vector(index, m, std::vector<double>{1, 2}, 1), Error);
    CHECK_THROWS_AS(query_vector(index, m, std::vector<double>{1, 2, 3, 4, 5, NAN}, 1), Error);
    CHECK(query_vector(index, m, std::vector<double>(6, 0.0), 3).entries.size() == 3);
}

TEST_CASE("scaling a user never changes its ranking") {
    const auto m = oracle::make_model(oracle::Regime::kModerate, 100, 400, 7, 13);
    const auto index = make_index(m, 6);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> alpha(1e-3, 10.0);
    for (UserId u = 0; u < 100; ++u) {
        const double a = alpha(rng);
        std::vector<double> v(m.users.row(u).begin(), m.users.row(u).end());
        for (double& x : v) x *= a;
        const auto base = query_user(index, m, u, 10);
        const auto scaled = query_vector(index, m, v, 10);
        for (std::size_t r = 0; r < 10; ++r) CHECK(base.entries[r].item == scaled.entries[r].item);
    }
}

TEST_CASE("inserting a duplicate item places it next to the original") {
    auto m = oracle::make_model(oracle::Regime::kModerate, 100, 80, 5, 2);
    auto index = make_index(m, 3);
    const std::vector<double> copy(m.items.row(17).begin(), m.items.row(17).end());
    const ItemId id = insert_item(index, m, copy);
    CHECK(id == 80);
    CHECK(m.items.rows() == 81);
    CHECK(index.entry_count() == 3 * 81);
    check_lists(index);
    for (ClusterId c = 0; c < 3; ++c) {
        const auto list = index.list(c);
        const auto at = std::find_if(list.begin(), list.end(), [](const ListEntry& e) { return e.item == 17; });
        REQUIRE(at + 1 != list.end());
        CHECK((at + 1)->item == 80);
    }
}

TEST_CASE("an inserted item that dominates is returned") {
    auto m = oracle::make_model(oracle::Regime::kTight, 60, 100, 4, 5);
    auto index = make_index(m, 2);
    std::vector<double> v(m.users.row(9).begin(), m.users.row(9).end());
    for (double& x : v) x *= 100.0;
    const ItemId id = insert_item(index, m, v);
    const auto r = query_user(index, m, 9, 1);
    CHECK(r.entries[0].item == id);
    check_lists(index);
    check_upper_bounds(index, m);
    const auto users = all_users(m);
    check_exact(query_batch(index, m, users, 3), m, users, 3);
    CHECK_THROWS_AS(insert_item(index, m, std::vector<double>{1}), Error);
}

TEST_CASE("adding a user already inside its cluster changes nothing") {
    auto m = oracle::make_model(oracle::Regime::kTight, 100, 120, 5, 6);
    auto index = make_index(m, 3);
    const auto before_theta = index.clustering().theta_b;
    std::vector<std::vector<ListEntry>> before;
    for (ClusterId c = 0; c < 3; ++c) before.emplace_back(index.list(c).begin(), index.list(c).end());
    const std::vector<double> copy(m.users.row(4).begin(), m.users.row(4).end());
    const auto res = add_user(index, m, copy);
    CHECK(res.served_by_index);
    CHECK(res.user_id == 100);
    CHECK(res.cluster == index.clustering().assignment[4]);
    CHECK(res.theta_uc <= before_theta[res.cluster]);
    CHECK(index.clustering().theta_b == before_theta);
    for (ClusterId c = 0; c < 3; ++c) {
        CHECK(std::equal(before[c].begin(), before[c].end(), index.list(c).begin(), index.list(c).end()));
    }
    CHECK(oracle::same(oracle::topk(m.items, copy.data(), 5), query_user(index, m, 100, 5).entries));
}

TEST_CASE("adding an orthogonal user raises theta_b and keeps every bound valid") {
    // Users in the first two coordinates only; the new user is the third axis.
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> tilt(-0.03, 0.03);
    std::vector<std::vector<double>> rows;
    for (int u = 0; u < 60; ++u) {
        const double t = tilt(rng) + (u % 2 ? 1.2 : 0.0);
        rows.push_back({std::cos(t), std::sin(t), 0.0});
    }
    auto m = ModelPair(FactorMatrix::from_rows(rows), oracle::make_model(oracle::Regime::kUniform, 1, 200, 3, 1).items);
    auto index = make_index(m, 2);
    const auto res = add_user(index, m, std::vector<double>{0.0, 0.0, 2.0});
    CHECK_FALSE(res.served_by_index);
    CHECK(res.theta_uc == Approx(kPi / 2));
    CHECK(index.clustering().theta_b[res.cluster] == res.theta_uc);
    check_lists(index);
    check_upper_bounds(index, m);
    const auto users = all_users(m);
    check_exact(query_batch(index, m, users, 4), m, users, 4);
    CHECK_THROWS_AS(add_user(index, m, std::vector<double>{1.0}), Error);
}

TEST_CASE("index files round trip and reject damage") {
    test::Scratch dir;
    const auto m = oracle::make_model(oracle::Regime::kModerate, 90, 110, 4, 8);
    const auto index = make_index(m, 3, 20);
    save_index(index, dir / "x.idx");
    const auto back = load_index(dir / "x.idx");
    CHECK(back.num_clusters() == 3);
    CHECK(back.block_size() == 20);
    CHECK(back.clustering().assignment == index.clustering().assignment);
    CHECK(back.clustering().theta_b == index.clustering().theta_b);
    for (ClusterId c = 0; c < 3; ++c) {
        CHECK(std::equal(back.list(c).begin(), back.list(c).end(), index.list(c).begin(), index.list(c).end()));
    }
    for (UserId u = 0; u < 90; ++u) {
        CHECK(query_user(back, m, u, 5).entries == query_user(index, m, u, 5).entries);
    }
    std::filesystem::resize_file(dir / "x.idx", std::filesystem::file_size(dir / "x.idx") - 3);
    CHECK_THROWS_AS(load_index(dir / "x.idx"), Error);
    CHECK_THROWS_AS(load_index(dir / "none.idx"), Error);

    const auto other = oracle::make_model(oracle::Regime::kModerate, 90, 111, 4, 8);
    CHECK_THROWS_AS(query_user(index, other, 0, 1), Error);
}

TEST_CASE("storage is exactly clusters times items") {
    const auto m = oracle::make_model(oracle::Regime::kUniform, 64, 333, 3, 1);
    for (std::size_t c : {1, 2, 5, 16, 64}) CHECK(make_index(m, c).entry_count() == c * 333);
}

}  // TEST_SUITE
