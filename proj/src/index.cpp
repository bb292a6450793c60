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

#include "mfserve/index.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <thread>

#include "binary_io.hpp"
#include "mfserve/error.hpp"

namespace mfserve {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSlackScale = 1e-12;

bool list_order(const ListEntry& a, const ListEntry& b) noexcept {
    return a.bound > b.bound || (a.bound == b.bound && a.item < b.item);
}

// Maps a bound to an unsigned key whose ascending order is descending bound.
// -0.0 is folded into +0.0 so the two compare equal, as they do as doubles.
std::uint64_t descending_key(double bound) noexcept {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(bound == 0.0 ? 0.0 : bound);
    const std::uint64_t ascending = (bits >> 63) ? ~bits : bits | (std::uint64_t{1} << 63);
    return ~ascending;
}

// LSD radix sort by descending_key. Stable, so entries that arrive in
// ascending item order keep that order on equal bounds, matching list_order.
void sort_by_bound(std::vector<ListEntry>& list) {
    const std::size_t n = list.size();
    if (n < 2) return;
    std::vector<std::uint64_t> keys(n);
    for (std::size_t i = 0; i < n; ++i) keys[i] = descending_key(list[i].bound);
    std::vector<std::uint64_t> keys_tmp(n);
    std::vector<ListEntry> list_tmp(n);
    for (unsigned shift = 0; shift < 64; shift += 8) {
        std::size_t count[257] = {};
        for (std::uint64_t k : keys) ++count[((k >> shift) & 0xff) + 1];
        if (count[((keys[0] >> shift) & 0xff) + 1] == n) continue;
        for (std::size_t b = 0; b < 256; ++b) count[b + 1] += count[b];
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t dst = count[(keys[i] >> shift) & 0xff]++;
            keys_tmp[dst] = keys[i];
            list_tmp[dst] = list[i];
        }
        keys.swap(keys_tmp);
        list.swap(list_tmp);
    }
}

double bound_unchecked(double item_norm, double theta_ic, double theta_b) noexcept {
    return theta_b < theta_ic ? item_norm * std::cos(theta_ic - theta_b) : item_norm;
}

// A cluster's centroid and distortion, prepared for bounding many items.
struct ClusterFrame {
    const double* centroid = nullptr;
    double centroid_norm = 0.0;
    double theta_b = 0.0;
    double cos_b = 1.0;
    double sin_b = 0.0;
};

ClusterFrame frame_for(const Clustering& cl, ClusterId c, double theta_b) noexcept {
    return {cl.centroids.row_ptr(c), norm(cl.centroids.row(c)), theta_b, std::cos(theta_b), std::sin(theta_b)};
}

// Same value as bound_unchecked with theta_ic taken from the chords, but
// expands cos(theta_ic - theta_b) so no inverse or forward trig is needed per
// item. theta_b < theta_ic is tested on the cosines; both branches agree at
// equality, so rounding there is harmless. Zero-norm items (and any item
// against a zero centroid) sit at pi/2.
double list_bound(const ClusterFrame& frame, const double* item, double item_norm, std::size_t f) noexcept {
    if (item_norm == 0.0 || frame.centroid_norm == 0.0) return bound_unchecked(item_norm, kPi / 2, frame.theta_b);
    const UnitChords ch = unit_chords(item, item_norm, frame.centroid, frame.centroid_norm, f);
    const double r = ch.minus_sq + ch.plus_sq;
    const double cos_ic = (ch.plus_sq - ch.minus_sq) / r;
    const double sin_ic = 2.0 * std::sqrt(ch.minus_sq * ch.plus_sq) / r;
    if (!(cos_ic < frame.cos_b)) return item_norm;
    return item_norm * (cos_ic * frame.cos_b + sin_ic * frame.sin_b);
}

void check_model(const CentroidIndex& index, const ModelPair& model) {
    if (model.factors() != index.factors()) {
        fail(ErrorCode::kDimensionMismatch, "model has " + std::to_string(model.factors()) +
                                                " factors, index has " + std::to_string(index.factors()));
    }
    if (model.items.rows() != index.num_items()) {
        fail(ErrorCode::kDimensionMismatch, "model has " + std::to_string(model.items.rows()) +
                                                " items, index has " + std::to_string(index.num_items()));
    }
}

void check_k(std::size_t k) {
    if (k == 0) fail(ErrorCode::kInvalidArgument, "K must be at least 1");
}

// Resumes Algorithm-1 style walk at `start`. The heap is seeded without bound
// checks until it holds K items; afterwards the walk stops at the first entry
// whose bound cannot beat the current K-th score.
void walk(std::span<const ListEntry> list, std::size_t start, const FactorMatrix& items, const double* user,
          double user_norm, double slack, TopKHeap& heap, std::size_t& visited) {
    const std::size_t f = items.factors();
    for (std::size_t j = start; j < list.size(); ++j) {
        const ListEntry& e = list[j];
        if (heap.full() && heap.worst().score > user_norm * (e.bound + slack)) break;
        heap.offer(e.item, dot(user, items.row_ptr(e.item), f));
        ++visited;
    }
}

TopKResult walk_from_start(std::span<const ListEntry> list, const FactorMatrix& items, std::span<const double> user,
                           double slack, std::size_t k, UserId id) {
    TopKHeap heap(std::min(k, list.size()));
    TopKResult out;
    out.user_id = id;
    walk(list, 0, items, user.data(), norm(user), slack, heap, out.visited);
    out.entries = heap.take_sorted();
    return out;
}

}  // namespace

double item_bound(double item_norm, double theta_ic, double theta_b) {
    if (!(item_norm >= 0.0)) fail(ErrorCode::kInvalidArgument, "item norm must be non-negative");
    if (!(theta_ic >= 0.0 && theta_ic <= kPi) || !(theta_b >= 0.0 && theta_b <= kPi)) {
        fail(ErrorCode::kInvalidArgument, "angles must lie in [0, pi]");
    }
    return bound_unchecked(item_norm, theta_ic, theta_b);
}

std::size_t CentroidIndex::entry_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : lists_) n += l.size();
    return n;
}

std::vector<ListEntry> cluster_list_for(const CentroidIndex& index, const FactorMatrix& items, ClusterId c,
                                        double theta_b) {
    const std::size_t f = items.factors();
    const ClusterFrame frame = frame_for(index.clustering_, c, theta_b);
    std::vector<ListEntry> list(items.rows());
    for (std::size_t i = 0; i < items.rows(); ++i) {
        list[i] = ListEntry{static_cast<ItemId>(i), list_bound(frame, items.row_ptr(i), index.item_norms_[i], f)};
    }
    sort_by_bound(list);
    return list;
}

CentroidIndex build_index(const ModelPair& model, Clustering clustering, std::size_t block) {
    if (clustering.assignment.size() != model.users.rows()) {
        fail(ErrorCode::kInvalidArgument, "clustering was not built over this model's users");
    }
    if (clustering.centroids.factors() != model.factors()) {
        fail(ErrorCode::kDimensionMismatch, "centroid dimension differs from the model");
    }
    CentroidIndex index;
    index.clustering_ = std::move(clustering);
    index.block_ = std::min(block, model.items.rows());

    index.item_norms_.resize(model.items.rows());
    double max_norm = 0.0;
    for (std::size_t i = 0; i < model.items.rows(); ++i) {
        index.item_norms_[i] = norm(model.items.row(i));
        max_norm = std::max(max_norm, index.item_norms_[i]);
    }
    index.slack_ = kSlackScale * max_norm;

    const std::size_t c_count = index.clustering_.num_clusters();
    index.lists_.resize(c_count);
    for (std::size_t c = 0; c < c_count; ++c) {
        index.lists_[c] = cluster_list_for(index, model.items, static_cast<ClusterId>(c),
                                           index.clustering_.theta_b[c]);
    }
    return index;
}

TopKResult query_user(const CentroidIndex& index, const ModelPair& model, UserId user, std::size_t k) {
    check_model(index, model);
    check_k(k);
    if (user >= model.users.rows() || user >= index.clustering().assignment.size()) {
        fail(ErrorCode::kInvalidArgument, "user id " + std::to_string(user) + " is out of range");
    }
    const ClusterId c = index.clustering().assignment[user];
    return walk_from_start(index.list(c), model.items, model.users.row(user), index.bound_slack(), k, user);
}

TopKResult query_vector(const CentroidIndex& index, const ModelPair& model, std::span<const double> user,
                        std::size_t k) {
    check_model(index, model);
    check_k(k);
    if (user.size() != index.factors()) {
        fail(ErrorCode::kDimensionMismatch, "query vector has " + std::to_string(user.size()) + " factors, index has " +
                                                std::to_string(index.factors()));
    }
    for (double x : user) {
        if (!std::isfinite(x)) fail(ErrorCode::kNonFinite, "query vector has a non-finite component");
    }
    const auto& cl = index.clustering();
    const ClusterId c = nearest_centroid(cl.centroids, user);
    const double theta_uc = angle_or(user, cl.centroids.row(c), kPi);
    const auto id = static_cast<UserId>(model.users.rows());
    if (theta_uc <= cl.theta_b[c]) {
        return walk_from_start(index.list(c), model.items, user, index.bound_slack(), k, id);
    }
    const auto widened = cluster_list_for(index, model.items, c, theta_uc);
    return walk_from_start(widened, model.items, user, index.bound_slack(), k, id);
}

std::vector<TopKResult> query_batch(const CentroidIndex& index, const ModelPair& model,
                                    std::span<const UserId> users, std::size_t k, const BatchOptions& options) {
    check_model(index, model);
    check_k(k);
    const auto& cl = index.clustering();
    const std::size_t c_count = index.num_clusters();
    std::vector<std::vector<std::size_t>> by_cluster(c_count);
    for (std::size_t p = 0; p < users.size(); ++p) {
        if (users[p] >= model.users.rows() || users[p] >= cl.assignment.size()) {
            fail(ErrorCode::kInvalidArgument, "user id " + std::to_string(users[p]) + " is out of range");
        }
        by_cluster[cl.assignment[users[p]]].push_back(p);
    }

    const std::size_t f = model.factors();
    const std::size_t keep = std::min(k, model.items.rows());
    const std::size_t prefix = options.work_sharing ? std::min(index.block_size(), model.items.rows()) : 0;
    BlockSpec tiles = BlockSpec::for_factors(f);
    if (options.blocks.user_block > 0) tiles.user_block = options.blocks.user_block;
    if (options.blocks.item_block > 0) tiles.item_block = options.blocks.item_block;

    std::vector<TopKResult> out(users.size());

    auto serve_cluster = [&](std::size_t c, std::vector<double>& scores, PackedPanel& panel) {
        const auto& positions = by_cluster[c];
        if (positions.empty()) return;
        const auto list = index.list(static_cast<ClusterId>(c));
        std::vector<TopKHeap> heaps(positions.size(), TopKHeap(keep));

        if (prefix > 0) {
            std::vector<const double*> user_rows(positions.size());
            for (std::size_t q = 0; q < positions.size(); ++q) user_rows[q] = model.users.row_ptr(users[positions[q]]);
            std::vector<const double*> item_rows(tiles.item_block);
            scores.resize(tiles.user_block * tiles.item_block);
            for (std::size_t j0 = 0; j0 < prefix; j0 += tiles.item_block) {
                const std::size_t nj = std::min(tiles.item_block, prefix - j0);
                for (std::size_t j = 0; j < nj; ++j) item_rows[j] = model.items.row_ptr(list[j0 + j].item);
                pack_panel(item_rows.data(), nj, f, panel);
                for (std::size_t u0 = 0; u0 < positions.size(); u0 += tiles.user_block) {
                    const std::size_t nu = std::min(tiles.user_block, positions.size() - u0);
                    score_panel(user_rows.data() + u0, nu, panel, scores.data());
                    for (std::size_t u = 0; u < nu; ++u) {
                        const double* row = scores.data() + u * nj;
                        heaps[u0 + u].offer_all(row, nj, [&](std::size_t j) { return list[j0 + j].item; });
                    }
                }
            }
        }

        for (std::size_t q = 0; q < positions.size(); ++q) {
            const UserId id = users[positions[q]];
            TopKResult& r = out[positions[q]];
            r.user_id = id;
            r.visited = prefix;
            const auto row = model.users.row(id);
            walk(list, prefix, model.items, row.data(), norm(row), index.bound_slack(), heaps[q], r.visited);
            r.entries = heaps[q].take_sorted();
        }
    };

    const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(c_count, 1));
    if (threads == 1) {
        std::vector<double> scores;
        PackedPanel panel;
        for (std::size_t c = 0; c < c_count; ++c) serve_cluster(c, scores, panel);
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                std::vector<double> scores;
                PackedPanel panel;
                for (std::size_t c = t; c < c_count; c += threads) serve_cluster(c, scores, panel);
            });
        }
    }
    return out;
}

ItemId insert_item(CentroidIndex& index, ModelPair& model, std::span<const double> item) {
    check_model(index, model);
    if (item.size() != index.factors()) {
        fail(ErrorCode::kDimensionMismatch, "item has " + std::to_string(item.size()) + " factors, index has " +
                                                std::to_string(index.factors()));
    }
    const auto id = static_cast<ItemId>(model.items.append_row(item));
    const double item_norm = norm(item);
    index.item_norms_.push_back(item_norm);
    index.slack_ = std::max(index.slack_, kSlackScale * item_norm);

    for (std::size_t c = 0; c < index.lists_.size(); ++c) {
        const auto cid = static_cast<ClusterId>(c);
        const ClusterFrame frame = frame_for(index.clustering_, cid, index.clustering_.theta_b[c]);
        const ListEntry entry{id, list_bound(frame, item.data(), item_norm, item.size())};
        auto& list = index.lists_[c];
        list.insert(std::lower_bound(list.begin(), list.end(), entry, list_order), entry);
    }
    return id;
}

AddUserResult add_user(CentroidIndex& index, ModelPair& model, std::span<const double> user) {
    check_model(index, model);
    if (user.size() != index.factors()) {
        fail(ErrorCode::kDimensionMismatch, "user has " + std::to_string(user.size()) + " factors, index has " +
                                                std::to_string(index.factors()));
    }
    auto& cl = index.clustering_;
    if (model.users.rows() != cl.assignment.size()) {
        fail(ErrorCode::kInvalidArgument, "model users are out of sync with the index clustering");
    }
    AddUserResult r;
    r.cluster = nearest_centroid(cl.centroids, user);
    r.theta_uc = angle_or(user, cl.centroids.row(r.cluster), kPi);
    r.user_id = static_cast<UserId>(model.users.append_row(user));
    cl.assignment.push_back(r.cluster);
    cl.members[r.cluster].push_back(r.user_id);

    if (r.theta_uc > cl.theta_b[r.cluster]) {
        cl.theta_b[r.cluster] = r.theta_uc;
        index.lists_[r.cluster] = cluster_list_for(index, model.items, r.cluster, r.theta_uc);
        r.served_by_index = false;
    }
    return r;
}

void save_index(const CentroidIndex& index, const std::filesystem::path& path) {
    using detail::write_f64;
    using detail::write_u64;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
    const auto& cl = index.clustering_;
    out.write(kIndexMagic, sizeof kIndexMagic);
    write_u64(out, index.num_clusters());
    write_u64(out, index.num_items());
    write_u64(out, index.factors());
    write_u64(out, cl.assignment.size());
    write_u64(out, index.block_);
    for (double v : cl.centroids.values()) write_f64(out, v);
    for (double v : cl.theta_b) write_f64(out, v);
    for (ClusterId c : cl.assignment) write_u64(out, c);
    for (double v : index.item_norms_) write_f64(out, v);
    for (const auto& list : index.lists_) {
        for (const auto& e : list) {
            write_u64(out, e.item);
            write_f64(out, e.bound);
        }
    }
    out.flush();
    if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

CentroidIndex load_index(const std::filesystem::path& path) {
    using detail::read_f64;
    using detail::read_u64;
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
    const std::string where = path.string();
    auto truncated = [&] { fail(ErrorCode::kFormat, where + ": truncated index file"); };

    char magic[8] = {};
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kIndexMagic, sizeof magic) != 0) {
        fail(ErrorCode::kFormat, where + ": bad magic, expected MFIDX001");
    }
    std::uint64_t clusters = 0, items = 0, factors = 0, users = 0, block = 0;
    if (!read_u64(in, clusters) || !read_u64(in, items) || !read_u64(in, factors) || !read_u64(in, users) ||
        !read_u64(in, block)) {
        truncated();
    }
    if (clusters == 0 || items == 0 || factors == 0 || users < clusters) {
        fail(ErrorCode::kFormat, where + ": inconsistent index header");
    }
    const auto expected = 48 + 8 * (clusters * factors + clusters + users + items + 2 * clusters * items);
    if (std::filesystem::file_size(path) != expected) fail(ErrorCode::kFormat, where + ": size does not match header");

    CentroidIndex index;
    auto& cl = index.clustering_;
    std::vector<double> centroids(clusters * factors);
    for (auto& v : centroids) {
        if (!read_f64(in, v)) truncated();
    }
    cl.centroids = FactorMatrix(clusters, factors, std::move(centroids));
    cl.theta_b.resize(clusters);
    for (auto& v : cl.theta_b) {
        if (!read_f64(in, v)) truncated();
        if (!(v >= 0.0 && v <= kPi)) fail(ErrorCode::kFormat, where + ": theta_b outside [0, pi]");
    }
    cl.assignment.resize(users);
    cl.members.assign(clusters, {});
    for (std::uint64_t u = 0; u < users; ++u) {
        std::uint64_t c = 0;
        if (!read_u64(in, c)) truncated();
        if (c >= clusters) fail(ErrorCode::kFormat, where + ": assignment refers to a missing cluster");
        cl.assignment[u] = static_cast<ClusterId>(c);
        cl.members[c].push_back(static_cast<UserId>(u));
    }
    for (std::uint64_t c = 0; c < clusters; ++c) {
        if (norm(cl.centroids.row(c)) == 0.0) cl.degenerate_clusters.push_back(static_cast<ClusterId>(c));
    }
    index.item_norms_.resize(items);
    double max_norm = 0.0;
    for (auto& v : index.item_norms_) {
        if (!read_f64(in, v)) truncated();
        max_norm = std::max(max_norm, v);
    }
    index.slack_ = kSlackScale * max_norm;
    index.block_ = block;
    index.lists_.assign(clusters, std::vector<ListEntry>(items));
    for (auto& list : index.lists_) {
        for (auto& e : list) {
            std::uint64_t id = 0;
            if (!read_u64(in, id) || !read_f64(in, e.bound)) truncated();
            if (id >= items) fail(ErrorCode::kFormat, where + ": list entry refers to a missing item");
            e.item = static_cast<ItemId>(id);
        }
    }
    return index;
}

}  // namespace mfserve
