// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dualpeft/corpus.hpp"
#include "dualpeft/experiment.hpp"
#include "dualpeft/importance.hpp"
#include "dualpeft/objective.hpp"
#include "dualpeft/partition.hpp"
#include "dualpeft/rng.hpp"
#include "dualpeft/splitter.hpp"
#include "dualpeft/trainer.hpp"

using namespace dualpeft;
namespace fs = std::filesystem;
namespace ex = dualpeft::experiment;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path g_work;
std::size_t g_trials = 5;

// The shared micro configuration: 2 layers, d_model 32, vocab 48.
ex::RunConfig micro(const std::string& name) {
    ex::RunConfig c;
    c.output_dir = g_work / name;
    c.cache_dir = g_work / "cache";
    return c;
}

model::Model pretrained_base() {
    auto c = micro("base");
    ex::run_pretrain(c);
    return model::load_checkpoint(c.output_dir / ex::artifact::kBase).model;
}

// ---- 1 ---------------------------------------------------------------------

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); }

Outcome gradient_correctness() {
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        model::ModelConfig mc{2, 32, 4, 64, corpus::tokenizer().vocab_size(), 48};
        model::Model m = model::init_model(mc, seed);
        model::LoraConfig lc;
        lc.rank = 4;
        lc.init_mode = model::InitMode::SymmetricSmall;
        auto a = model::attach_lora(m, lc, seed + 100);
        const auto exs = corpus::gen_system2(1, 3, seed);
        const auto s = train::shift(exs[0]);
        std::vector<double> grad(a.size(), 0.0);
        {
            ad::Tape tape;
            tape.backward(train::example_loss(tape, m, &a, s, {{}, grad}));
        }
        const double h = 1e-5;
        for (std::size_t j = 0; j < a.size(); ++j) {
            const double keep = a.values()[j];
            a.values()[j] = keep + h;
            const double up = train::loss_value(m, &a, s);
            a.values()[j] = keep - h;
            const double down = train::loss_value(m, &a, s);
            a.values()[j] = keep;
            worst = std::max(worst, rel_err(grad[j], (up - down) / (2 * h)));
            ++checked;
        }
    }
    return {worst < 1e-4, fmt("max relative error %.3g over %zu adapter scalars, 3 seeds (limit 1e-4)", worst, checked)};
}

// ---- 2 ---------------------------------------------------------------------

importance::ImportanceTable table_from_shifted(const model::Model& m, const model::AdapterSet& a,
                                               const std::vector<train::ShiftedExample>& data) {
    importance::MomentAccumulator acc(a.size());
    std::vector<double> grad(a.size());
    for (const auto& s : data) {
        std::fill(grad.begin(), grad.end(), 0.0);
        ad::Tape tape;
        tape.backward(train::example_loss(tape, m, &a, s, {{}, grad}));
        acc.add(grad);
    }
    return acc.finish(importance::DatasetTag::System2, a.values());
}

Outcome mask_semantics() {
    bool ok = true;
    std::size_t corrupted = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        model::ModelConfig mc{2, 32, 4, 64, corpus::tokenizer().vocab_size(), 48};
        model::Model m = model::init_model(mc, seed);
        model::LoraConfig lc;
        lc.rank = 2;
        lc.init_mode = model::InitMode::SymmetricSmall;
        const auto a = model::attach_lora(m, lc, seed);
        auto data = corpus::gen_system2(6, 3, seed);
        const auto s1 = corpus::gen_system1(6, seed, corpus::FactTable(6, seed));
        data.insert(data.end(), s1.begin(), s1.end());
        const auto reference = importance::accumulate(m, a, data, importance::DatasetTag::System2);
        std::vector<train::ShiftedExample> shifted;
        for (const auto& e : data) shifted.push_back(train::shift(e));
        ok = ok && table_from_shifted(m, a, shifted) == reference;
        Rng rng(seed * 7 + 1);
        for (int round = 0; round < 3; ++round) {
            auto bad = shifted;
            for (auto& s : bad) {
                for (std::size_t t = 0; t < s.mask.size(); ++t) {
                    if (s.mask[t] == 0) {
                        s.targets[t] = static_cast<int>(rng.below(static_cast<std::uint64_t>(mc.vocab_size)));
                        ++corrupted;
                    }
                }
            }
            ok = ok && table_from_shifted(m, a, bad) == reference;
        }
    }
    return {ok, fmt("tables bit-identical after %zu random target corruptions at unmasked positions", corrupted)};
}

// ---- 3 ---------------------------------------------------------------------

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
        i = j + 1;
    }
    return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

Outcome importance_oracle() {
    const model::Model base = pretrained_base();
    const auto cfg = micro("c3");
    const corpus::FactTable facts(cfg.corpus.facts, cfg.corpus.fact_seed);
    auto data = corpus::gen_system1(20, 21, facts);
    const auto s2 = corpus::gen_system2(20, 3, 21);
    data.insert(data.end(), s2.begin(), s2.end());
    std::vector<train::ShiftedExample> shifted;
    for (const auto& e : data) shifted.push_back(train::shift(e));
    auto loss = [&](const model::Model& m, const model::AdapterSet& a) {
        double s = 0.0;
        for (const auto& x : shifted) s += train::loss_value(m, &a, x);
        return s / static_cast<double>(shifted.size());
    };

    std::vector<double> rhos;
    std::size_t scalars = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        model::Model m = base;
        model::LoraConfig lc;
        lc.rank = 2;
        auto a = model::attach_lora(m, lc, seed);
        scalars = a.size();
        // Calibration warm-up, as in the pipeline.
        train::SftConfig warm{50, 8, {2e-3}, seed};
        train::sft_stage(m, a, data, train::FreezeMask::full(a.size()), warm);
        const auto table = importance::accumulate(m, a, data, importance::DatasetTag::System1);
        const double l0 = loss(m, a);

        std::vector<std::size_t> order(a.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return std::abs(a.values()[x]) > std::abs(a.values()[y]); });
        order.resize(a.size() / 2);
        std::vector<double> predicted, actual;
        for (std::size_t j : order) {
            const double keep = a.values()[j];
            a.values()[j] = 0.0;
            actual.push_back(std::abs(loss(m, a) - l0));
            a.values()[j] = keep;
            predicted.push_back(table.score[j]);
        }
        rhos.push_back(spearman(predicted, actual));
    }
    const double med = ex::median(rhos);
    std::string all;
    for (double r : rhos) all += fmt("%s%.3f", all.empty() ? "" : " ", r);
    return {med >= 0.5, fmt("median Spearman %.3f over 5 seeds (%s), %zu scalars, top half by |phi| (limit >= 0.5)",
                            med, all.c_str(), scalars)};
}

// ---- 4 ---------------------------------------------------------------------

// Brute force: try every prefix length of an independently sorted ranking.
// theta = 1 keeps zero-score indices too.
partition::IndexSet oracle_select(const std::vector<double>& s, double theta) {
    if (theta == 1.0) {
        partition::IndexSet all(s.size());
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    std::vector<std::pair<double, std::uint64_t>> items;
    for (std::uint64_t i = 0; i < s.size(); ++i) items.emplace_back(-s[i], i);
    std::sort(items.begin(), items.end());
    double total = 0.0;
    for (double v : s) total += v;
    for (std::size_t k = 0; k <= items.size(); ++k) {
        double prefix = 0.0;
        for (std::size_t i = 0; i < k; ++i) prefix -= items[i].first;
        if (prefix >= theta * total * (1.0 - 1e-12)) {
            partition::IndexSet out;
            for (std::size_t i = 0; i < k; ++i) out.push_back(items[i].second);
            std::sort(out.begin(), out.end());
            return out;
        }
    }
    return {};
}

Outcome partition_exactness() {
    Rng rng(4);
    std::size_t mismatches = 0, violations = 0;
    const double thetas[] = {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 1.0};
    for (int v = 0; v < 1000; ++v) {
        const std::size_t n = 1 + rng.below(80);
        std::vector<double> s(n);
        const int kind = v % 3;
        for (double& x : s) x = kind == 0 ? rng.uniform() : kind == 1 ? static_cast<double>(rng.below(4)) : std::exp(rng.normal(0, 3));
        if (std::all_of(s.begin(), s.end(), [](double x) { return x == 0.0; })) s[0] = 1.0;
        partition::IndexSet prev;
        for (double th : thetas) {
            const auto got = partition::select_by_cumulative(s, th);
            if (got != oracle_select(s, th)) ++mismatches;
            if (!std::includes(got.begin(), got.end(), prev.begin(), prev.end())) ++violations;
            prev = got;
        }
    }
    // Set algebra on fuzzed table pairs.
    std::size_t algebra = 0;
    for (int v = 0; v < 300; ++v) {
        const std::size_t n = 2 + rng.below(60);
        importance::ImportanceTable t1, t2;
        for (auto* t : {&t1, &t2}) {
            t->n = 1;
            t->g.assign(n, 0.0);
            t->fisher.assign(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) t->score.push_back(rng.uniform() + 1e-3);
        }
        auto spec = partition::build_partition(t1, t2, rng.uniform());
        const double alpha = rng.uniform(), beta = rng.uniform();
        partition::stage_active_sets(spec, alpha, beta);
        using partition::set_difference, partition::set_intersection, partition::set_union;
        bool ok = spec.omega1_only == set_difference(spec.s1, spec.s2) &&
                  spec.omega2_only == set_difference(spec.s2, spec.s1) && spec.shared == set_intersection(spec.s1, spec.s2) &&
                  set_union(spec.omega1_only, set_union(spec.omega2_only, spec.shared)) == set_union(spec.s1, spec.s2) &&
                  set_intersection(spec.omega1_only, spec.omega2_only).empty() &&
                  spec.stage1_active.size() == spec.omega1_only.size() + partition::ceil_count(alpha, spec.shared.size()) &&
                  spec.stage2_active.size() == spec.omega2_only.size() + partition::ceil_count(beta, spec.shared.size()) &&
                  set_intersection(spec.stage1_active, spec.omega2_only).empty() &&
                  set_intersection(spec.stage2_active, spec.omega1_only).empty();
        algebra += ok ? 0 : 1;
    }
    return {mismatches == 0 && violations == 0 && algebra == 0,
            fmt("1000 vectors x 9 thetas: %zu oracle mismatches, %zu monotonicity violations; 300 table pairs: %zu "
                "set-algebra violations",
                mismatches, violations, algebra)};
}

// ---- 5 ---------------------------------------------------------------------

Outcome freeze_contract() {
    auto c = micro("c5");
    c.alpha = 0.5;
    c.beta = 0.5;
    const auto r = ex::run_pipeline(c);
    auto base = model::load_checkpoint(c.output_dir / ex::artifact::kBase).model;
    const auto init = model::attach_lora(base, c.lora, c.lora_seed());
    const auto sft = *model::load_checkpoint(c.output_dir / ex::artifact::kSft).adapters;
    const auto rl = *model::load_checkpoint(c.output_dir / ex::artifact::kRl).adapters;
    const auto [m1, m2] = ex::stage_masks(c);
    std::size_t broken = 0, moved1 = 0, moved2 = 0;
    for (std::size_t j = 0; j < init.size(); ++j) {
        if (!m1.is_active(j)) broken += sft.values()[j] != init.values()[j];
        else moved1 += sft.values()[j] != init.values()[j];
        if (!m2.is_active(j)) broken += rl.values()[j] != sft.values()[j];
        else moved2 += rl.values()[j] != sft.values()[j];
    }
    const bool state_ok = r.train.sft_optimizer_state == m1.count() && r.train.grpo_optimizer_state == m2.count();
    return {broken == 0 && state_ok,
            fmt("%zu frozen scalars changed; active %zu/%zu (moved %zu/%zu); optimizer state %zu/%zu entries for "
                "%zu/%zu active",
                broken, m1.count(), m2.count(), moved1, moved2, r.train.sft_optimizer_state,
                r.train.grpo_optimizer_state, m1.count(), m2.count())};
}

// ---- 6 ---------------------------------------------------------------------

Outcome grpo_stationarity() {
    model::Model m = pretrained_base();
    model::LoraConfig lc;
    lc.init_mode = model::InitMode::SymmetricSmall;
    auto a = model::attach_lora(m, lc, 3);
    const auto before = a;
    train::GrpoConfig gc;
    gc.steps = 1;
    gc.group_size = 4;
    gc.prompts_per_step = 4;
    gc.reward = {0.0, 0.0};
    gc.kl_coef = 0.04;
    const auto data = corpus::gen_system2(8, 3, 6);
    const auto res = train::grpo_stage(m, a, data, train::FreezeMask::full(a.size()), gc);
    const bool unchanged = a == before;

    Rng rng(6);
    double worst = 0.0;
    std::size_t nonzero_uniform = 0;
    for (int v = 0; v < 10000; ++v) {
        std::vector<double> r(2 + rng.below(15));
        for (double& x : r) x = v % 2 ? rng.normal(0, std::exp(rng.normal(0, 2))) : std::round(rng.uniform() * 2) * 0.6;
        const auto adv = train::compute_advantages(r);
        double s = 0.0;
        for (double x : adv) s += x;
        worst = std::max(worst, std::abs(s));
        const std::vector<double> same(r.size(), r[0]);
        for (double x : train::compute_advantages(same)) nonzero_uniform += x != 0.0;
    }
    return {unchanged && worst < 1e-9 && nonzero_uniform == 0,
            fmt("step-0 parameters %s under uniform rewards (kl %.3g); max |sum of advantages| %.3g over 10000 "
                "vectors (limit 1e-9)",
                unchanged ? "unchanged" : "CHANGED", res.kl[0], worst)};
}

// ---- 7 ---------------------------------------------------------------------

Outcome theta_trend() {
    const auto c = micro("c7");
    const std::vector<double> thetas = {0.9, 1.0};
    const std::vector<std::string> sites = {"QKVGUD"};
    const auto s = ex::theta_sweep(c, thetas, sites, g_trials);
    const auto& r9 = s.rows[0];
    const auto& r1 = s.rows[1];
    return {r9.perf >= r9.rand && r1.param_pct == 100.0,
            fmt("theta 0.9: %%Param %.1f, importance %.3f vs random %.3f (median of %zu); theta 1: %%Param %.1f", r9.param_pct,
                r9.perf, r9.rand, g_trials, r1.param_pct)};
}

// ---- 8 ---------------------------------------------------------------------

Outcome alpha_beta_trend() {
    const auto c = micro("c8");
    const std::vector<double> values = {0.0, 1.0};
    const auto g = ex::alpha_beta_grid(c, values, g_trials);
    double rl00 = 0, rl11 = 0;
    for (const auto& r : g.rows) {
        if (r.alpha == 0.0 && r.beta == 0.0) rl00 = r.perf_rl;
        if (r.alpha == 1.0 && r.beta == 1.0) rl11 = r.perf_rl;
    }
    std::size_t beta_dependent = 0;
    for (const auto& t : g.trials) {
        for (const auto& u : g.trials) {
            if (t.alpha == u.alpha && t.trial == u.trial && t.perf_sft != u.perf_sft) ++beta_dependent;
        }
    }
    return {rl11 >= rl00 && beta_dependent == 0,
            fmt("post-RL median (1,1) %.3f vs (0,0) %.3f over %zu seeds; %zu post-SFT values differ across beta", rl11,
                rl00, g_trials, beta_dependent)};
}

// ---- 9 ---------------------------------------------------------------------

Outcome splitter_trend() {
    const auto c = micro("c9");
    const std::vector<std::string> strategies = {"single:0.2", "vote5:0.2"};
    const auto a = ex::splitter_ablation(c, strategies, g_trials);
    const double single = a.rows[0].perf, vote = a.rows[1].perf;

    // Zero-error voters against the gold labels.
    const corpus::FactTable facts(c.corpus.facts, c.corpus.fact_seed);
    auto pool = corpus::gen_system1(c.corpus.train_system1, c.corpus.train_seed, facts);
    const auto s2 = corpus::gen_system2(c.corpus.train_system2, c.corpus.max_depth, c.corpus.train_seed);
    pool.insert(pool.end(), s2.begin(), s2.end());
    std::size_t wrong = 0;
    for (std::size_t n : {1, 3, 5}) {
        const auto settings = ex::SplitterStrategy::parse("vote" + std::to_string(n) + ":0").settings(9);
        const auto split = splitter::split_corpus(pool, settings.voters);
        for (std::size_t i = 0; i < pool.size(); ++i) wrong += split.assigned[i] != pool[i].gold_system;
    }
    return {vote >= single && wrong == 0,
            fmt("median accuracy vote-5 %.3f vs single %.3f at error 0.2 over %zu seeds (agreement %.3f vs %.3f); "
                "zero-error voters misassign %zu",
                vote, single, g_trials, a.rows[1].agreement, a.rows[0].agreement, wrong)};
}

// ---- 10 --------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome reproducibility() {
    auto c = micro("c10/a");
    const std::vector<double> values = {0.5, 1.0};
    ex::alpha_beta_grid(c, values, 1);
    auto d = c;
    d.output_dir = g_work / "c10/b";
    ex::alpha_beta_grid(d, values, 1);
    std::size_t compared = 0, differ = 0;
    for (const auto& e : fs::recursive_directory_iterator(c.output_dir)) {
        const auto ext = e.path().extension();
        if (!e.is_regular_file() || (ext != ".csv" && ext != ".ckpt")) continue;
        const auto rel = fs::relative(e.path(), c.output_dir);
        ++compared;
        if (!fs::exists(d.output_dir / rel) || slurp(e.path()) != slurp(d.output_dir / rel)) ++differ;
    }
    return {differ == 0 && compared > 0, fmt("%zu CSV/checkpoint files compared, %zu differ", compared, differ)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string work = "acceptance-work";
    std::vector<int> only;
    bool verbose = false;
    app.add_option("--work-dir", work, "Scratch directory (base-model cache is kept here)")->capture_default_str();
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    app.add_option("--trials", g_trials, "Seeds for the trend criteria")->capture_default_str()->check(CLI::Range(5, 100));
    app.add_flag("-v,--verbose", verbose, "Progress messages");
    CLI11_PARSE(app, argc, argv);
    g_work = fs::absolute(work);
    fs::create_directories(g_work);
    if (verbose) ex::set_log_sink([](const std::string& m) { std::fprintf(stderr, "  %s\n", m.c_str()); });

    const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
        {"gradient correctness", gradient_correctness},
        {"mask semantics", mask_semantics},
        {"importance oracle", importance_oracle},
        {"partition exactness", partition_exactness},
        {"freeze contract", freeze_contract},
        {"GRPO stationarity", grpo_stationarity},
        {"theta-sweep trend", theta_trend},
        {"alpha/beta trend", alpha_beta_trend},
        {"splitter trend", splitter_trend},
        {"reproducibility", reproducibility},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += o.pass ? 0 : 1;
        std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
