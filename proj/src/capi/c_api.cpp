// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include "dualpeft/c_api.h"

#include <json.hpp>

#include <cstring>
#include <mutex>

#include "dualpeft/binio.hpp"
#include "dualpeft/experiment.hpp"

struct dpeft_config {
    dualpeft::experiment::RunConfig cfg;
};

struct dpeft_result {
    nlohmann::json doc;
    std::string text;
};

namespace {

using dualpeft::experiment::RunConfig;
using nlohmann::json;

thread_local std::string g_last_error;

std::mutex g_log_mutex;
dpeft_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

dpeft_status fail(dpeft_status s, const std::string& message) {
    g_last_error = message;
    return s;
}

// Runs `body`, translating exceptions into status codes.
template <class F>
dpeft_status wrap(F&& body) {
    try {
        g_last_error.clear();
        body();
        return DPEFT_OK;
    } catch (const dualpeft::experiment::StageError& e) {
        return fail(DPEFT_E_STAGE, e.what());
    } catch (const dualpeft::io::FormatError& e) {
        return fail(DPEFT_E_FORMAT, e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(DPEFT_E_IO, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(DPEFT_E_INVALID_ARGUMENT, e.what());
    } catch (const std::out_of_range& e) {
        return fail(DPEFT_E_INVALID_ARGUMENT, e.what());
    } catch (const nlohmann::json::exception& e) {
        return fail(DPEFT_E_INVALID_ARGUMENT, e.what());
    } catch (const std::runtime_error& e) {
        const std::string m = e.what();
        return fail(m.rfind("cannot ", 0) == 0 ? DPEFT_E_IO : DPEFT_E_INTERNAL, m);
    } catch (const std::exception& e) {
        return fail(DPEFT_E_INTERNAL, e.what());
    } catch (...) {
        return fail(DPEFT_E_INTERNAL, "unknown error");
    }
}

#define DP_REQUIRE(ptr)                                                      \
    do {                                                                     \
        if ((ptr) == nullptr) throw std::invalid_argument(#ptr " is NULL"); \
    } while (0)

void emit(dpeft_result** out, json doc) {
    if (out == nullptr) return;
    auto* r = new dpeft_result{std::move(doc), {}};
    r->text = r->doc.dump(2);
    *out = r;
}

json eval_doc(const dualpeft::train::EvalResult& r) {
    auto opt = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
    return {{"n", r.n}, {"overall", opt(r.overall())}, {"system1", opt(r.system1())}, {"system2", opt(r.system2())}};
}

}  // namespace

extern "C" {

const char* dpeft_version(void) { return "0.1.0"; }

const char* dpeft_status_name(dpeft_status s) {
    switch (s) {
        case DPEFT_OK: return "ok";
        case DPEFT_E_INVALID_ARGUMENT: return "invalid argument";
        case DPEFT_E_IO: return "i/o error";
        case DPEFT_E_FORMAT: return "format error";
        case DPEFT_E_STAGE: return "stage failure";
        case DPEFT_E_BUFFER_TOO_SMALL: return "buffer too small";
        case DPEFT_E_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* dpeft_last_error(void) { return g_last_error.c_str(); }

void dpeft_set_log(dpeft_log_fn fn, void* user) {
    std::lock_guard lock(g_log_mutex);
    g_log_fn = fn;
    g_log_user = user;
    if (fn == nullptr) {
        dualpeft::experiment::set_log_sink({});
        return;
    }
    dualpeft::experiment::set_log_sink([](const std::string& m) {
        std::lock_guard inner(g_log_mutex);
        if (g_log_fn) g_log_fn(m.c_str(), g_log_user);
    });
}

dpeft_status dpeft_config_new(dpeft_config** out) {
    return wrap([&] {
        DP_REQUIRE(out);
        *out = new dpeft_config{};
    });
}

dpeft_status dpeft_config_load(const char* path, dpeft_config** out) {
    return wrap([&] {
        DP_REQUIRE(path);
        DP_REQUIRE(out);
        *out = new dpeft_config{RunConfig::load(path)};
    });
}

dpeft_status dpeft_config_save(const dpeft_config* cfg, const char* path) {
    return wrap([&] {
        DP_REQUIRE(cfg);
        DP_REQUIRE(path);
        cfg->cfg.save(path);
    });
}

dpeft_status dpeft_config_set(dpeft_config* cfg, const char* key, const char* value) {
    return wrap([&] {
        DP_REQUIRE(cfg);
        DP_REQUIRE(key);
        DP_REQUIRE(value);
        cfg->cfg.set(key, value);
    });
}

dpeft_status dpeft_config_get(const dpeft_config* cfg, const char* key, char* buf, size_t cap, size_t* len) {
    std::string value;
    const dpeft_status s = wrap([&] {
        DP_REQUIRE(cfg);
        DP_REQUIRE(key);
        value = cfg->cfg.get(key);
    });
    if (s != DPEFT_OK) return s;
    if (len) *len = value.size();
    if (buf == nullptr || cap < value.size() + 1) {
        return fail(DPEFT_E_BUFFER_TOO_SMALL,
                    "value of " + std::string(key) + " needs " + std::to_string(value.size() + 1) + " bytes");
    }
    std::memcpy(buf, value.c_str(), value.size() + 1);
    return DPEFT_OK;
}

dpeft_status dpeft_config_validate(const dpeft_config* cfg) {
    return wrap([&] {
        DP_REQUIRE(cfg);
        cfg->cfg.validate();
    });
}

size_t dpeft_config_key_count(void) { return RunConfig::keys().size(); }

const char* dpeft_config_key(size_t i) {
    const auto& k = RunConfig::keys();
    return i < k.size() ? k[i].c_str() : nullptr;
}

void dpeft_config_free(dpeft_config* cfg) { delete cfg; }

dpeft_status dpeft_run_stage(const dpeft_config* cfg, const char* stage, dpeft_result** out) {
    namespace ex = dualpeft::experiment;
    return wrap([&] {
        DP_REQUIRE(cfg);
        DP_REQUIRE(stage);
        const RunConfig& c = cfg->cfg;
        const std::string name = stage;
        json doc;
        if (name == "pipeline") {
            doc = json::parse(ex::run_pipeline(c).to_json());
        } else if (name == "split") {
            const auto s = ex::run_split(c);
            doc = {{"train", s.train}, {"d1", s.d1}, {"d2", s.d2}, {"agreement", s.agreement}};
        } else if (name == "pretrain") {
            doc = {{"base", ex::run_pretrain(c).string()}, {"cache", ex::base_cache_path(c).string()}};
        } else if (name == "score") {
            ex::run_score(c);
            doc = {{"tables", {ex::artifact::kImportance1, ex::artifact::kImportance2}}};
        } else if (name == "partition") {
            const auto p = ex::run_partition(c);
            doc = {{"total", p.total},   {"s1", p.s1},         {"s2", p.s2},
                   {"shared", p.shared}, {"stage1", p.stage1}, {"stage2", p.stage2},
                   {"param_fraction", p.param_fraction},       {"jaccard", p.jaccard}};
        } else if (name == "train") {
            const auto t = ex::run_train(c);
            doc = {{"stage1_active", t.stage1_active},
                   {"stage2_active", t.stage2_active},
                   {"sft_final_loss", t.sft_final_loss},
                   {"grpo_final_reward", t.grpo_final_reward}};
        } else if (name == "eval") {
            const auto e = ex::run_eval(c);
            doc = {{"base", eval_doc(e.base)}, {"sft", eval_doc(e.sft)}, {"rl", eval_doc(e.rl)}};
        } else {
            throw std::invalid_argument("unknown stage '" + name + "'");
        }
        emit(out, std::move(doc));
    });
}

dpeft_status dpeft_export_scatter(const dpeft_config* cfg, const char* path) {
    return wrap([&] {
        DP_REQUIRE(cfg);
        DP_REQUIRE(path);
        dualpeft::experiment::run_export_scatter(cfg->cfg, path);
    });
}

dpeft_status dpeft_sweep_theta(const dpeft_config* cfg, const double* thetas, size_t n_thetas, const char* const* sites,
                               size_t n_sites, size_t trials, dpeft_result** out) {
    return wrap([&] {
        DP_REQUIRE(cfg);
        if (n_thetas > 0) DP_REQUIRE(thetas);
        if (n_sites > 0) DP_REQUIRE(sites);
        std::vector<std::string> site_list;
        for (size_t i = 0; i < n_sites; ++i) {
            DP_REQUIRE(sites[i]);
            site_list.emplace_back(sites[i]);
        }
        const auto s = dualpeft::experiment::theta_sweep(cfg->cfg, {thetas, n_thetas}, site_list, trials);
        json rows = json::array();
        for (const auto& r : s.rows) {
            rows.push_back({{"sites", r.sites},
                            {"theta", r.theta},
                            {"param_pct", r.param_pct},
                            {"perf", r.perf},
                            {"rand", r.rand},
                            {"trials", r.trials}});
        }
        emit(out, {{"rows", rows}, {"csv", (cfg->cfg.output_dir / "theta_sweep.csv").string()}});
    });
}

dpeft_status dpeft_grid_ab(const dpeft_config* cfg, const double* values, size_t n_values, size_t trials,
                           dpeft_result** out) {
    return wrap([&] {
        DP_REQUIRE(cfg);
        if (n_values > 0) DP_REQUIRE(values);
        const auto g = dualpeft::experiment::alpha_beta_grid(cfg->cfg, {values, n_values}, trials);
        json rows = json::array();
        for (const auto& r : g.rows) {
            rows.push_back({{"alpha", r.alpha},
                            {"beta", r.beta},
                            {"perf_sft", r.perf_sft},
                            {"perf_rl", r.perf_rl},
                            {"trials", r.trials}});
        }
        emit(out, {{"rows", rows}, {"csv", (cfg->cfg.output_dir / "grid_ab.csv").string()}});
    });
}

dpeft_status dpeft_ablate_splitter(const dpeft_config* cfg, const char* const* strategies, size_t n_strategies,
                                   size_t trials, dpeft_result** out) {
    return wrap([&] {
        DP_REQUIRE(cfg);
        if (n_strategies > 0) DP_REQUIRE(strategies);
        std::vector<std::string> list;
        for (size_t i = 0; i < n_strategies; ++i) {
            DP_REQUIRE(strategies[i]);
            list.emplace_back(strategies[i]);
        }
        const auto a = dualpeft::experiment::splitter_ablation(cfg->cfg, list, trials);
        json rows = json::array();
        for (const auto& r : a.rows) {
            rows.push_back({{"strategy", r.strategy}, {"agreement", r.agreement}, {"perf", r.perf}, {"trials", r.trials}});
        }
        emit(out, {{"rows", rows}, {"csv", (cfg->cfg.output_dir / "ablation.csv").string()}});
    });
}

const char* dpeft_result_json(const dpeft_result* result) { return result ? result->text.c_str() : ""; }

dpeft_status dpeft_result_number(const dpeft_result* result, const char* pointer, double* out) {
    return wrap([&] {
        DP_REQUIRE(result);
        DP_REQUIRE(pointer);
        DP_REQUIRE(out);
        const json::json_pointer ptr(pointer);
        if (!result->doc.contains(ptr)) throw std::invalid_argument(std::string("no field at ") + pointer);
        const json& v = result->doc.at(ptr);
        if (!v.is_number()) throw std::invalid_argument(std::string("field at ") + pointer + " is not a number");
        *out = v.get<double>();
    });
}

void dpeft_result_free(dpeft_result* result) { delete result; }

}  // extern "C"
