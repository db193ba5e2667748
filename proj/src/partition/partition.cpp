// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include "dualpeft/partition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dualpeft/binio.hpp"

namespace dualpeft::partition {

namespace {
constexpr io::Magic kMagic = {'D', 'P', 'F', 'T', 'P', 'A', 'R', 'T'};
constexpr std::uint32_t kVersion = 1;

void check_fraction(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(name) + " must be in [0, 1]");
}

IndexSet sorted(std::vector<std::uint64_t> v) {
    std::sort(v.begin(), v.end());
    return v;
}

IndexSet top_of_shared(const std::vector<std::uint64_t>& ranked, double fraction) {
    const std::size_t k = ceil_count(fraction, ranked.size());
    return sorted({ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k)});
}
}  // namespace

std::vector<std::uint64_t> rank_by_score(std::span<const double> score) {
    std::vector<std::uint64_t> order(score.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::uint64_t a, std::uint64_t b) { return score[a] > score[b]; });
    return order;
}

IndexSet select_by_cumulative(std::span<const double> score, double theta) {
    check_fraction(theta, "theta");
    for (double s : score) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("importance scores must be finite and non-negative");
    }
    if (theta == 0.0) return {};
    if (theta == 1.0) {
        IndexSet all(score.size());
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    const auto order = rank_by_score(score);
    double total = 0.0;
    for (auto j : order) total += score[j];
    if (total == 0.0) throw std::invalid_argument("cannot rank an all-zero importance table");
    // Relative slack so a prefix that hits the target exactly is not lost to
    // rounding in theta * total; keeps selections invariant to rescaling.
    const double target = theta * total * (1.0 - 1e-12);
    double acc = 0.0;
    std::size_t k = 0;
    while (k < order.size() && acc < target) acc += score[order[k++]];
    return sorted({order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)});
}

IndexSet set_union(const IndexSet& a, const IndexSet& b) {
    IndexSet out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

IndexSet set_intersection(const IndexSet& a, const IndexSet& b) {
    IndexSet out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

IndexSet set_difference(const IndexSet& a, const IndexSet& b) {
    IndexSet out;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

PartitionSpec build_partition(const importance::ImportanceTable& t1, const importance::ImportanceTable& t2, double theta) {
    if (t1.size() != t2.size()) {
        throw std::invalid_argument("importance tables cover different address sets (" + std::to_string(t1.size()) +
                                    " vs " + std::to_string(t2.size()) + ")");
    }
    PartitionSpec spec;
    spec.theta = theta;
    spec.total = t1.size();
    spec.s1 = select_by_cumulative(t1, theta);
    spec.s2 = select_by_cumulative(t2, theta);
    spec.omega1_only = set_difference(spec.s1, spec.s2);
    spec.omega2_only = set_difference(spec.s2, spec.s1);
    spec.shared = set_intersection(spec.s1, spec.s2);
    for (const auto* t : {&t1, &t2}) {
        auto& ranked = t == &t1 ? spec.shared_by_s1 : spec.shared_by_s2;
        ranked = spec.shared;
        std::stable_sort(ranked.begin(), ranked.end(),
                         [&](std::uint64_t a, std::uint64_t b) { return t->score[a] > t->score[b]; });
    }
    stage_active_sets(spec, 1.0, 1.0);
    return spec;
}

std::size_t ceil_count(double fraction, std::size_t n) {
    check_fraction(fraction, "fraction");
    const double x = fraction * static_cast<double>(n);
    const double r = std::round(x);
    const std::size_t k = std::abs(x - r) <= 1e-9 * std::max(1.0, x) ? static_cast<std::size_t>(r)
                                                                       : static_cast<std::size_t>(std::ceil(x));
    return std::min(k, n);
}

void stage_active_sets(PartitionSpec& spec, double alpha, double beta) {
    check_fraction(alpha, "alpha");
    check_fraction(beta, "beta");
    spec.alpha = alpha;
    spec.beta = beta;
    spec.stage1_active = set_union(spec.omega1_only, top_of_shared(spec.shared_by_s1, alpha));
    spec.stage2_active = set_union(spec.omega2_only, top_of_shared(spec.shared_by_s2, beta));
}

double jaccard(const IndexSet& a, const IndexSet& b) {
    const std::size_t inter = set_intersection(a, b).size();
    const std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void export_scatter(const importance::ImportanceTable& t1, const importance::ImportanceTable& t2,
                    const PartitionSpec& spec, const model::AdapterLayout& layout, const std::filesystem::path& path) {
    if (t1.size() != spec.total || t2.size() != spec.total || layout.size() != spec.total) {
        throw std::invalid_argument("export_scatter: tables, layout and partition disagree on the address count");
    }
    std::vector<std::uint8_t> in1(spec.total, 0), in2(spec.total, 0);
    for (auto j : spec.s1) in1[j] = 1;
    for (auto j : spec.s2) in2[j] = 1;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "layer,site,matrix,flat_index,importance_s1,importance_s2,category\n";
    char buf[128];
    for (std::size_t j = 0; j < spec.total; ++j) {
        const auto a = layout.address(j);
        const char* cat = in1[j] && in2[j] ? "shared" : in1[j] ? "s1only" : in2[j] ? "s2only" : "neither";
        std::snprintf(buf, sizeof buf, "%.17g,%.17g", t1.score[j], t2.score[j]);
        out << a.layer << ',' << model::site_name(a.site) << ',' << (a.matrix == model::Matrix::A ? 'A' : 'B') << ','
            << a.flat_index << ',' << buf << ',' << cat << '\n';
    }
    const auto frac = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    const std::size_t neither = spec.total - set_union(spec.s1, spec.s2).size();
    std::snprintf(buf, sizeof buf, "nonoverlap_s1=%.17g,nonoverlap_s2=%.17g,jaccard=%.17g",
                  frac(spec.omega1_only.size(), spec.s1.size()), frac(spec.omega2_only.size(), spec.s2.size()),
                  jaccard(spec.s1, spec.s2));
    out << "#summary,s1only=" << spec.omega1_only.size() << ",s2only=" << spec.omega2_only.size()
        << ",shared=" << spec.shared.size() << ",neither=" << neither << ',' << buf << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_partition(const PartitionSpec& spec, const std::filesystem::path& path) {
    io::BinaryWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.f64(spec.theta);
    w.f64(spec.alpha);
    w.f64(spec.beta);
    w.u64(spec.total);
    const std::vector<const std::vector<std::uint64_t>*> lists = {
        &spec.s1,     &spec.s2,           &spec.omega1_only,  &spec.omega2_only,  &spec.shared,
        &spec.shared_by_s1, &spec.shared_by_s2, &spec.stage1_active, &spec.stage2_active};
    for (const auto* l : lists) w.u64(l->size());
    for (const auto* l : lists) w.u64s(*l);
    w.save(path);
}

PartitionSpec load_partition(const std::filesystem::path& path, std::optional<std::size_t> expected_total) {
    auto r = io::BinaryReader::open(path, "partition");
    r.expect_magic(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw io::FormatError("partition file version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kVersion) + ")");
    }
    PartitionSpec spec;
    spec.theta = r.f64();
    spec.alpha = r.f64();
    spec.beta = r.f64();
    spec.total = r.u64();
    if (expected_total && spec.total != *expected_total) {
        throw io::FormatError("partition file covers " + std::to_string(spec.total) + " addresses, adapter layout has " +
                              std::to_string(*expected_total));
    }
    std::vector<std::vector<std::uint64_t>*> lists = {
        &spec.s1,     &spec.s2,           &spec.omega1_only,  &spec.omega2_only,  &spec.shared,
        &spec.shared_by_s1, &spec.shared_by_s2, &spec.stage1_active, &spec.stage2_active};
    std::vector<std::uint64_t> counts;
    for (std::size_t i = 0; i < lists.size(); ++i) counts.push_back(r.u64());
    for (std::size_t i = 0; i < lists.size(); ++i) {
        if (counts[i] > spec.total) throw io::FormatError("partition file lists more addresses than it covers");
        *lists[i] = r.u64s(counts[i]);
        for (auto j : *lists[i]) {
            if (j >= spec.total) throw io::FormatError("partition file address " + std::to_string(j) + " out of range");
        }
    }
    r.expect_end();
    return spec;
}

}  // namespace dualpeft::partition
