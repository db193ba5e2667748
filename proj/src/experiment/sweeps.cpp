// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>

#include "dualpeft/experiment.hpp"
#include "dualpeft/rng.hpp"

namespace dualpeft::experiment {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Short directory-safe label.
std::string label(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

RunConfig cell(const RunConfig& base, const fs::path& dir, std::uint64_t seed) {
    RunConfig c = base;
    c.output_dir = dir;
    c.seed = seed;
    return c;
}

double accuracy(const train::EvalResult& r) { return r.overall().value_or(0.0); }

class Csv {
public:
    Csv(const fs::path& path, const std::string& header) : out_(path) {
        if (!out_) throw std::runtime_error("cannot write " + path.string());
        out_ << header << '\n';
    }
    template <class... T>
    void row(const T&... cols) {
        std::string line;
        ((line += (line.empty() ? "" : ",") + cols), ...);
        out_ << line << '\n';
    }

private:
    std::ofstream out_;
};

}  // namespace

ThetaSweep theta_sweep(const RunConfig& cfg, std::span<const double> thetas, std::span<const std::string> sites,
                       std::size_t trials) {
    if (trials == 0) throw std::invalid_argument("theta sweep needs at least one trial");
    for (double t : thetas) {
        if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("theta " + num(t) + " outside [0, 1]");
    }
    ThetaSweep out;
    for (const auto& site_text : sites) {
        const auto site_set = model::SiteSet::parse(site_text);
        for (double theta : thetas) {
            std::vector<double> pct, perf, rand;
            for (std::size_t k = 0; k < trials; ++k) {
                RunConfig c = cell(cfg,
                                   cfg.output_dir / "theta" / site_set.name() / ("theta-" + label(theta)) /
                                       ("trial-" + std::to_string(k)) / "importance",
                                   cfg.seed + k);
                c.lora.sites = site_set;
                c.theta = theta;
                c.alpha = c.beta = 1.0;
                c.mask_mode = MaskMode::Importance;
                const auto imp = run_pipeline(c);
                c.output_dir = c.output_dir.parent_path() / "random";
                c.mask_mode = MaskMode::Random;
                const auto rnd = run_pipeline(c);

                ThetaTrial t{site_set.name(), theta, k, c.seed, 100.0 * imp.partition.param_fraction,
                             accuracy(imp.eval.rl), accuracy(rnd.eval.rl)};
                pct.push_back(t.param_pct);
                perf.push_back(t.perf);
                rand.push_back(t.rand);
                out.trials.push_back(t);
            }
            out.rows.push_back({site_set.name(), theta, median(pct), median(perf), median(rand), trials});
        }
    }
    fs::create_directories(cfg.output_dir);
    Csv summary(cfg.output_dir / "theta_sweep.csv", "sites,theta,param_pct,perf,rand,trials");
    for (const auto& r : out.rows) {
        summary.row(r.sites, num(r.theta), num(r.param_pct), num(r.perf), num(r.rand), std::to_string(r.trials));
    }
    Csv detail(cfg.output_dir / "theta_sweep_trials.csv", "sites,theta,trial,seed,param_pct,perf,rand");
    for (const auto& t : out.trials) {
        detail.row(t.sites, num(t.theta), std::to_string(t.trial), std::to_string(t.seed), num(t.param_pct),
                   num(t.perf), num(t.rand));
    }
    return out;
}

GridSweep alpha_beta_grid(const RunConfig& cfg, std::span<const double> values, std::size_t trials) {
    if (trials == 0) throw std::invalid_argument("alpha/beta grid needs at least one trial");
    for (double v : values) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("grid value " + num(v) + " outside [0, 1]");
    }
    GridSweep out;
    for (double a : values) {
        for (double b : values) {
            std::vector<double> sft, rl;
            for (std::size_t k = 0; k < trials; ++k) {
                RunConfig c = cell(cfg,
                                   cfg.output_dir / "grid" / ("a-" + label(a) + "_b-" + label(b)) /
                                       ("trial-" + std::to_string(k)),
                                   cfg.seed + k);
                c.alpha = a;
                c.beta = b;
                const auto r = run_pipeline(c);
                GridTrial t{a, b, k, c.seed, accuracy(r.eval.sft), accuracy(r.eval.rl)};
                sft.push_back(t.perf_sft);
                rl.push_back(t.perf_rl);
                out.trials.push_back(t);
            }
            out.rows.push_back({a, b, median(sft), median(rl), trials});
        }
    }
    fs::create_directories(cfg.output_dir);
    Csv summary(cfg.output_dir / "grid_ab.csv", "alpha,beta,perf_sft,perf_rl,trials");
    for (const auto& r : out.rows) {
        summary.row(num(r.alpha), num(r.beta), num(r.perf_sft), num(r.perf_rl), std::to_string(r.trials));
    }
    Csv detail(cfg.output_dir / "grid_ab_trials.csv", "alpha,beta,trial,seed,perf_sft,perf_rl");
    for (const auto& t : out.trials) {
        detail.row(num(t.alpha), num(t.beta), std::to_string(t.trial), std::to_string(t.seed), num(t.perf_sft),
                   num(t.perf_rl));
    }
    return out;
}

SplitterStrategy SplitterStrategy::parse(std::string_view text) {
    SplitterStrategy s;
    s.name = std::string(text);
    if (text == "gold") return s;
    if (text == "random") {
        s.mode = SplitMode::Random;
        return s;
    }
    const auto colon = text.find(':');
    const std::string_view head = text.substr(0, colon);
    s.mode = SplitMode::Vote;
    if (head == "single") {
        s.voters = 1;
    } else if (head.rfind("vote", 0) == 0 && head.size() > 4) {
        try {
            s.voters = std::stoul(std::string(head.substr(4)));
        } catch (const std::exception&) {
            s.voters = 0;
        }
    }
    if (s.voters == 0 || colon == std::string_view::npos) {
        throw std::invalid_argument("splitter strategy must be gold, random, single:<error> or vote<n>:<error>, got '" +
                                    std::string(text) + "'");
    }
    try {
        std::size_t used = 0;
        const std::string rate(text.substr(colon + 1));
        s.error_rate = std::stod(rate, &used);
        if (used != rate.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        throw std::invalid_argument("splitter strategy '" + std::string(text) + "': bad error rate");
    }
    if (!(s.error_rate >= 0.0 && s.error_rate < 0.5)) {
        throw std::invalid_argument("splitter strategy '" + std::string(text) + "': error rate must be in [0, 0.5)");
    }
    return s;
}

SplitSettings SplitterStrategy::settings(std::uint64_t trial_seed) const {
    SplitSettings s;
    s.mode = mode;
    s.seed = derive_seed(trial_seed, 0x5E);
    for (std::size_t i = 0; i < voters; ++i) {
        splitter::VoterProfile v;
        v.voter_id = "v" + std::to_string(i + 1);
        v.strategy = splitter::Strategy::OperatorCount;
        v.threshold = 2.0;
        v.error_rate = error_rate;
        v.seed = derive_seed(trial_seed, 0x700 + i);
        s.voters.push_back(v);
    }
    return s;
}

Ablation splitter_ablation(const RunConfig& cfg, std::span<const std::string> strategies, std::size_t trials) {
    if (strategies.size() < 2) throw std::invalid_argument("splitter ablation needs at least two strategies");
    if (trials == 0) throw std::invalid_argument("splitter ablation needs at least one trial");
    std::vector<SplitterStrategy> parsed;
    for (const auto& s : strategies) parsed.push_back(SplitterStrategy::parse(s));
    Ablation out;
    for (const auto& strat : parsed) {
        std::vector<double> agree, perf;
        for (std::size_t k = 0; k < trials; ++k) {
            RunConfig c = cell(cfg, cfg.output_dir / "ablation" / strat.name / ("trial-" + std::to_string(k)),
                               cfg.seed + k);
            c.split = strat.settings(c.seed);
            const auto r = run_pipeline(c);
            AblationTrial t{strat.name, k, c.seed, r.split.agreement, accuracy(r.eval.rl)};
            agree.push_back(t.agreement);
            perf.push_back(t.perf);
            out.trials.push_back(t);
        }
        out.rows.push_back({strat.name, median(agree), median(perf), trials});
    }
    fs::create_directories(cfg.output_dir);
    Csv summary(cfg.output_dir / "ablation.csv", "strategy,agreement,perf,trials");
    for (const auto& r : out.rows) summary.row(r.strategy, num(r.agreement), num(r.perf), std::to_string(r.trials));
    Csv detail(cfg.output_dir / "ablation_trials.csv", "strategy,trial,seed,agreement,perf");
    for (const auto& t : out.trials) {
        detail.row(t.strategy, std::to_string(t.trial), std::to_string(t.seed), num(t.agreement), num(t.perf));
    }
    return out;
}

}  // namespace dualpeft::experiment
