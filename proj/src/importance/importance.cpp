// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include "dualpeft/importance.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "dualpeft/binio.hpp"
#include "dualpeft/objective.hpp"

namespace dualpeft::importance {

namespace {
constexpr io::Magic kMagic = {'D', 'P', 'F', 'T', 'I', 'M', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string_view dataset_tag_name(DatasetTag t) { return t == DatasetTag::System1 ? "system1" : "system2"; }

double score_param(double phi, double g, double fisher) {
    if (!(fisher >= 0.0)) throw std::invalid_argument("score_param: Fisher estimate must be non-negative");
    return std::abs(g * phi - 0.5 * fisher * phi * phi);
}

ImportanceTable accumulate(const model::Model& model, const model::AdapterSet& adapters,
                           std::span<const corpus::TaskExample> dataset, DatasetTag tag, std::size_t max_examples) {
    if (dataset.empty()) throw std::invalid_argument("importance: empty dataset");
    if (max_examples > 0 && max_examples < dataset.size()) dataset = dataset.first(max_examples);

    // Validate every mask before spending any gradient passes.
    std::vector<train::ShiftedExample> shifted;
    shifted.reserve(dataset.size());
    for (const auto& ex : dataset) shifted.push_back(train::shift(ex));

    MomentAccumulator acc(adapters.size());
    std::vector<double> grad(adapters.size());
    for (const auto& ex : shifted) {
        std::fill(grad.begin(), grad.end(), 0.0);
        ad::Tape tape;
        tape.backward(train::example_loss(tape, model, &adapters, ex, {{}, grad}));
        acc.add(grad);
    }
    return acc.finish(tag, adapters.values());
}

void MomentAccumulator::add(std::span<const double> grad) {
    if (grad.size() != sum_.size()) throw std::invalid_argument("MomentAccumulator: gradient size mismatch");
    for (std::size_t j = 0; j < grad.size(); ++j) {
        sum_[j] += grad[j];
        sum_sq_[j] += grad[j] * grad[j];
    }
    ++n_;
}

ImportanceTable MomentAccumulator::finish(DatasetTag tag, std::span<const double> phi) const {
    if (n_ == 0) throw std::invalid_argument("importance: no examples accumulated");
    ImportanceTable t;
    t.tag = tag;
    t.n = n_;
    t.g.resize(sum_.size());
    t.fisher.resize(sum_.size());
    const double inv = 1.0 / static_cast<double>(n_);
    for (std::size_t j = 0; j < sum_.size(); ++j) {
        t.g[j] = sum_[j] * inv;
        t.fisher[j] = sum_sq_[j] * inv;
    }
    rescore(t, phi);
    return t;
}

void rescore(ImportanceTable& table, std::span<const double> phi) {
    if (phi.size() != table.g.size() || table.fisher.size() != table.g.size()) {
        throw std::invalid_argument("rescore: parameter count " + std::to_string(phi.size()) + " does not match table (" +
                                    std::to_string(table.g.size()) + ")");
    }
    table.score.resize(phi.size());
    for (std::size_t j = 0; j < phi.size(); ++j) table.score[j] = score_param(phi[j], table.g[j], table.fisher[j]);
}

void dump(const ImportanceTable& table, const std::filesystem::path& path) {
    if (table.g.size() != table.size() || table.fisher.size() != table.size()) {
        throw std::invalid_argument("importance table columns have different lengths");
    }
    io::BinaryWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(table.tag));
    w.u64(table.n);
    w.u64(table.size());
    for (std::size_t j = 0; j < table.size(); ++j) {
        w.f64(table.g[j]);
        w.f64(table.fisher[j]);
        w.f64(table.score[j]);
    }
    w.save(path);
}

ImportanceTable load(const std::filesystem::path& path, std::optional<std::size_t> expected_count) {
    auto r = io::BinaryReader::open(path, "importance");
    r.expect_magic(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw io::FormatError("importance file version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kVersion) + ")");
    }
    ImportanceTable t;
    const std::uint32_t tag = r.u32();
    if (tag != 1 && tag != 2) throw io::FormatError("importance file has unknown dataset tag " + std::to_string(tag));
    t.tag = static_cast<DatasetTag>(tag);
    t.n = r.u64();
    const std::uint64_t count = r.u64();
    if (expected_count && count != *expected_count) {
        throw io::FormatError("importance file covers " + std::to_string(count) + " addresses, adapter layout has " +
                              std::to_string(*expected_count));
    }
    const auto raw = r.f64s(3 * count);
    r.expect_end();
    t.g.resize(count);
    t.fisher.resize(count);
    t.score.resize(count);
    for (std::size_t j = 0; j < count; ++j) {
        t.g[j] = raw[3 * j];
        t.fisher[j] = raw[3 * j + 1];
        t.score[j] = raw[3 * j + 2];
    }
    return t;
}

void export_csv(const ImportanceTable& table, const model::AdapterLayout& layout, const std::filesystem::path& path) {
    if (layout.size() != table.size()) throw std::invalid_argument("export_csv: table does not match adapter layout");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "layer,site,matrix,flat_index,g,fisher,importance\n";
    char buf[96];
    for (std::size_t j = 0; j < table.size(); ++j) {
        const auto a = layout.address(j);
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", table.g[j], table.fisher[j], table.score[j]);
        out << a.layer << ',' << model::site_name(a.site) << ',' << (a.matrix == model::Matrix::A ? 'A' : 'B') << ','
            << a.flat_index << ',' << buf << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace dualpeft::importance
