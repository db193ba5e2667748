// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Talks to the library only through the C interface.

#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dualpeft/c_api.h"

namespace {

struct ConfigDeleter {
    void operator()(dpeft_config* c) const { dpeft_config_free(c); }
};
struct ResultDeleter {
    void operator()(dpeft_result* r) const { dpeft_result_free(r); }
};
using ConfigPtr = std::unique_ptr<dpeft_config, ConfigDeleter>;
using ResultPtr = std::unique_ptr<dpeft_result, ResultDeleter>;

// Error raised after a failed library call; the message is already captured.
struct CallFailed {
    dpeft_status status;
    std::string message;
};

void check(dpeft_status s) {
    if (s != DPEFT_OK) throw CallFailed{s, dpeft_last_error()};
}

struct Options {
    std::string config_file;
    std::vector<std::string> sets;
    std::map<std::string, std::string> keys;  // --<key> value
    bool quiet = false;
};

ConfigPtr build_config(const Options& o) {
    dpeft_config* raw = nullptr;
    if (!o.config_file.empty()) {
        check(dpeft_config_load(o.config_file.c_str(), &raw));
    } else {
        check(dpeft_config_new(&raw));
    }
    ConfigPtr cfg(raw);
    for (const auto& [key, value] : o.keys) {
        if (!value.empty()) check(dpeft_config_set(cfg.get(), key.c_str(), value.c_str()));
    }
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw CallFailed{DPEFT_E_INVALID_ARGUMENT, "--set expects key=value, got '" + kv + "'"};
        check(dpeft_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    check(dpeft_config_validate(cfg.get()));
    return cfg;
}

std::string config_value(const dpeft_config* cfg, const char* key) {
    std::size_t len = 0;
    dpeft_config_get(cfg, key, nullptr, 0, &len);
    std::string buf(len + 1, '\0');
    check(dpeft_config_get(cfg, key, buf.data(), buf.size(), &len));
    buf.resize(len);
    return buf;
}

void print(const ResultPtr& r) {
    if (r) std::printf("%s\n", dpeft_result_json(r.get()));
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
    std::vector<const char*> out;
    for (const auto& s : v) out.push_back(s.c_str());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Importance-partitioned two-stage adapter fine-tuning on synthetic tasks"};
    app.require_subcommand(1);
    app.fallthrough();
    Options opts;
    app.add_option("-c,--config", opts.config_file, "Run configuration file (key = value lines)")->check(CLI::ExistingFile);
    app.add_option("--set", opts.sets, "Override a configuration key: key=value (repeatable)");
    app.add_flag("-q,--quiet", opts.quiet, "Suppress progress messages");
    auto* keys_group = app.add_option_group("Configuration keys", "Every configuration key is also a flag");
    for (std::size_t i = 0; i < dpeft_config_key_count(); ++i) {
        const std::string key = dpeft_config_key(i);
        keys_group->add_option("--" + key, opts.keys[key], "Configuration key " + key);
    }

    std::string stage;
    auto add_stage = [&](const char* name, const char* help) {
        app.add_subcommand(name, help)->callback([&stage, name] { stage = name; });
    };
    add_stage("split", "Generate the corpus and split it into System-1 and System-2 subsets");
    add_stage("pretrain", "Pretrain (or reuse the cached) base model and copy it into the run directory");
    add_stage("score", "Calibration warm-up, then importance tables for both subsets");
    add_stage("partition", "Select important parameters and build the stage activation sets");
    add_stage("train", "Stage-1 SFT then stage-2 GRPO under the activation masks");
    add_stage("eval", "Evaluate the base, post-SFT and post-RL checkpoints on the test corpus");
    add_stage("run", "All stages in order");

    auto* show = app.add_subcommand("show-config", "Print the effective configuration");
    std::string write_to;
    show->add_option("-o,--output", write_to, "Also write it to this file");

    auto* sweep = app.add_subcommand("sweep-theta", "Importance threshold sweep against size-matched random masks");
    std::vector<double> thetas = {0.5, 0.7, 0.9, 0.95, 1.0};
    std::vector<std::string> sites = {"QKVGUD"};
    std::size_t trials = 5;
    sweep->add_option("--thetas", thetas, "Threshold values")->delimiter(',')->capture_default_str();
    sweep->add_option("--sites", sites, "Adapter site configurations (QKV, GUD, QKVGUD)")->delimiter(',')->capture_default_str();
    sweep->add_option("--trials", trials, "Seeds per cell")->capture_default_str()->check(CLI::PositiveNumber);

    auto* grid = app.add_subcommand("grid-ab", "Grid over the shared-parameter fractions alpha and beta");
    std::vector<double> values = {0.0, 0.5, 1.0};
    grid->add_option("--values", values, "Grid values for both alpha and beta")->delimiter(',')->capture_default_str();
    grid->add_option("--trials", trials, "Seeds per cell")->capture_default_str()->check(CLI::PositiveNumber);

    auto* ablate = app.add_subcommand("ablate-splitter", "Downstream accuracy per data splitting strategy");
    std::vector<std::string> strategies = {"single:0.2", "random", "vote3:0.2", "vote5:0.2"};
    ablate->add_option("--strategies", strategies, "gold, random, single:<error> or vote<n>:<error>")
        ->delimiter(',')
        ->capture_default_str();
    ablate->add_option("--trials", trials, "Seeds per strategy")->capture_default_str()->check(CLI::PositiveNumber);

    auto* scatter = app.add_subcommand("export-scatter", "Per-parameter importance scatter table of a scored run");
    std::string scatter_path;
    scatter->add_option("-o,--output", scatter_path, "CSV path (default: <output.dir>/scatter.csv)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!opts.quiet) {
            dpeft_set_log([](const char* m, void*) { std::fprintf(stderr, "%s\n", m); }, nullptr);
        }
        const ConfigPtr cfg = build_config(opts);
        dpeft_result* raw = nullptr;
        if (!stage.empty()) {
            check(dpeft_run_stage(cfg.get(), stage == "run" ? "pipeline" : stage.c_str(), &raw));
            print(ResultPtr(raw));
        } else if (*show) {
            for (std::size_t i = 0; i < dpeft_config_key_count(); ++i) {
                const char* key = dpeft_config_key(i);
                std::printf("%s = %s\n", key, config_value(cfg.get(), key).c_str());
            }
            if (!write_to.empty()) check(dpeft_config_save(cfg.get(), write_to.c_str()));
        } else if (*sweep) {
            const auto s = c_strings(sites);
            check(dpeft_sweep_theta(cfg.get(), thetas.data(), thetas.size(), s.data(), s.size(), trials, &raw));
            print(ResultPtr(raw));
        } else if (*grid) {
            check(dpeft_grid_ab(cfg.get(), values.data(), values.size(), trials, &raw));
            print(ResultPtr(raw));
        } else if (*ablate) {
            const auto s = c_strings(strategies);
            check(dpeft_ablate_splitter(cfg.get(), s.data(), s.size(), trials, &raw));
            print(ResultPtr(raw));
        } else if (*scatter) {
            if (scatter_path.empty()) scatter_path = config_value(cfg.get(), "output.dir") + "/scatter.csv";
            check(dpeft_export_scatter(cfg.get(), scatter_path.c_str()));
            std::printf("%s\n", scatter_path.c_str());
        }
    } catch (const CallFailed& e) {
        std::fprintf(stderr, "error (%s): %s\n", dpeft_status_name(e.status), e.message.c_str());
        return 1;
    }
    return 0;
}
