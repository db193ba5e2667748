// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// Cumulative-importance selection and the set algebra that turns two
// importance tables into per-stage trainable subsets.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dualpeft/importance.hpp"

namespace dualpeft::partition {

// Adapter flat indices, sorted ascending (equivalently ParamAddress order).
using IndexSet = std::vector<std::uint64_t>;

// Indices by score descending, ties by ascending index.
std::vector<std::uint64_t> rank_by_score(std::span<const double> score);

// Minimal score-ranked prefix whose sum reaches theta * total (to a relative
// 1e-12). theta = 1 selects every index, including zero-score ones.
IndexSet select_by_cumulative(std::span<const double> score, double theta);
inline IndexSet select_by_cumulative(const importance::ImportanceTable& t, double theta) {
    return select_by_cumulative(t.score, theta);
}

struct PartitionSpec {
    double theta = 0.0;
    double alpha = 1.0;
    double beta = 1.0;
    std::uint64_t total = 0;
    IndexSet s1, s2;
    IndexSet omega1_only, omega2_only, shared;
    // The shared set ranked by each system's score.
    std::vector<std::uint64_t> shared_by_s1, shared_by_s2;
    IndexSet stage1_active, stage2_active;

    bool operator==(const PartitionSpec&) const = default;
};

// Sets only; stage sets are filled with alpha = beta = 1.
PartitionSpec build_partition(const importance::ImportanceTable& t1, const importance::ImportanceTable& t2, double theta);

// ceil(fraction * n), robust to rounding in the product (0.3 * 10 is 3).
std::size_t ceil_count(double fraction, std::size_t n);

void stage_active_sets(PartitionSpec& spec, double alpha, double beta);

double jaccard(const IndexSet& a, const IndexSet& b);

IndexSet set_union(const IndexSet& a, const IndexSet& b);
IndexSet set_intersection(const IndexSet& a, const IndexSet& b);
IndexSet set_difference(const IndexSet& a, const IndexSet& b);

// CSV rows layer,site,matrix,flat_index,importance_s1,importance_s2,category
// followed by one "#summary" line with set sizes, the non-overlap fractions
// |s1only|/|S1| and |s2only|/|S2|, and the Jaccard overlap.
void export_scatter(const importance::ImportanceTable& t1, const importance::ImportanceTable& t2,
                    const PartitionSpec& spec, const model::AdapterLayout& layout, const std::filesystem::path& path);

// Binary partition file in the importance dump conventions.
void save_partition(const PartitionSpec& spec, const std::filesystem::path& path);
PartitionSpec load_partition(const std::filesystem::path& path, std::optional<std::size_t> expected_total = std::nullopt);

}  // namespace dualpeft::partition
