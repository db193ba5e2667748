// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// Per-scalar importance of adapter parameters for one dataset: the second
// order Taylor estimate of the loss change from zeroing a scalar, with the
// Hessian diagonal replaced by the empirical Fisher diagonal.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dualpeft/corpus.hpp"
#include "dualpeft/model.hpp"

namespace dualpeft::importance {

enum class DatasetTag : std::uint32_t { System1 = 1, System2 = 2 };
std::string_view dataset_tag_name(DatasetTag t);

// Entries are in adapter flat order, which is ascending ParamAddress order.
struct ImportanceTable {
    DatasetTag tag = DatasetTag::System1;
    std::uint64_t n = 0;
    std::vector<double> g;       // mean per-example gradient
    std::vector<double> fisher;  // mean squared per-example gradient
    std::vector<double> score;

    std::size_t size() const { return score.size(); }
    bool operator==(const ImportanceTable&) const = default;
};

// |g*phi - F*phi^2/2|. Rejects F < 0.
double score_param(double phi, double g, double fisher);

// Streaming (g, F) accumulator; gradients are added in call order.
class MomentAccumulator {
public:
    explicit MomentAccumulator(std::size_t size) : sum_(size, 0.0), sum_sq_(size, 0.0) {}
    void add(std::span<const double> grad);
    std::uint64_t count() const { return n_; }
    // Mean moments and scores at `phi`. Rejects an empty accumulator.
    ImportanceTable finish(DatasetTag tag, std::span<const double> phi) const;

private:
    std::vector<double> sum_, sum_sq_;
    std::uint64_t n_ = 0;
};

// One gradient pass per example (batch size 1), accumulated in example
// order. max_examples = 0 uses the whole dataset, otherwise its prefix.
ImportanceTable accumulate(const model::Model& model, const model::AdapterSet& adapters,
                           std::span<const corpus::TaskExample> dataset, DatasetTag tag, std::size_t max_examples = 0);

// Recomputes scores from the stored moments at a parameter snapshot.
void rescore(ImportanceTable& table, std::span<const double> phi);

// Binary dump: magic, u32 version, u32 dataset tag, u64 N, u64 address
// count, then (g, F, I) per address as f64, little-endian.
void dump(const ImportanceTable& table, const std::filesystem::path& path);
ImportanceTable load(const std::filesystem::path& path, std::optional<std::size_t> expected_count = std::nullopt);

// CSV with header layer,site,matrix,flat_index,g,fisher,importance.
void export_csv(const ImportanceTable& table, const model::AdapterLayout& layout, const std::filesystem::path& path);

}  // namespace dualpeft::importance
