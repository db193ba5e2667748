// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "dualpeft/corpus.hpp"
#include "dualpeft/experiment.hpp"
#include "dualpeft/importance.hpp"
#include "dualpeft/partition.hpp"
#include "dualpeft/rng.hpp"

namespace dualpeft::experiment {

namespace fs = std::filesystem;
using corpus::TaskExample;
using nlohmann::json;

namespace {

std::function<void(const std::string&)>& sink() {
    static std::function<void(const std::string&)> s;
    return s;
}

void log(const std::string& message) {
    if (sink()) sink()(message);
}

template <class F>
auto guarded(const char* stage, F&& body) -> decltype(body()) {
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

fs::path at(const RunConfig& cfg, const char* name) { return cfg.output_dir / name; }

const fs::path& require(const fs::path& p, const char* producer) {
    if (!fs::exists(p)) throw std::runtime_error("missing " + p.string() + " (produced by stage " + producer + ")");
    return p;
}

corpus::FactTable fact_table(const RunConfig& cfg) { return corpus::FactTable(cfg.corpus.facts, cfg.corpus.fact_seed); }

std::vector<TaskExample> make_pool(const RunConfig& cfg, std::size_t n1, std::size_t n2, std::uint64_t seed) {
    auto pool = corpus::gen_system1(n1, seed, fact_table(cfg));
    const auto s2 = corpus::gen_system2(n2, cfg.corpus.max_depth, seed);
    pool.insert(pool.end(), s2.begin(), s2.end());
    return pool;
}

struct SplitData {
    std::vector<TaskExample> all, d1, d2;
};

SplitData load_split(const RunConfig& cfg) {
    SplitData out;
    for (auto& r : corpus::read_split(require(at(cfg, artifact::kSplit), "split"))) {
        (r.assigned == corpus::System::One ? out.d1 : out.d2).push_back(r.example);
        out.all.push_back(std::move(r.example));
    }
    return out;
}

model::Model load_base(const RunConfig& cfg) {
    auto ck = model::load_checkpoint(require(at(cfg, artifact::kBase), "pretrain"));
    if (!(ck.model.config() == cfg.model)) throw std::runtime_error("base checkpoint does not match the model config");
    return std::move(ck.model);
}

// Base model with freshly attached adapters; identical for every stage that
// calls it under one config.
std::pair<model::Model, model::AdapterSet> attach_init(const RunConfig& cfg) {
    model::Model m = load_base(cfg);
    model::AdapterSet a = model::attach_lora(m, cfg.lora, cfg.lora_seed());
    return {std::move(m), std::move(a)};
}

std::uint64_t file_digest(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json eval_json(const train::EvalResult& r) {
    auto opt = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
    return {{"n", r.n},         {"n_system1", r.n1},          {"n_system2", r.n2},
            {"overall", opt(r.overall())}, {"system1", opt(r.system1())}, {"system2", opt(r.system2())}};
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

}  // namespace

StageError::StageError(std::string stage, const std::string& message)
    : std::runtime_error("stage " + stage + ": " + message), stage_(std::move(stage)) {}

void set_log_sink(std::function<void(const std::string&)> s) { sink() = std::move(s); }

SplitSummary run_split(const RunConfig& cfg) {
    return guarded("split", [&] {
        cfg.validate();
        fs::create_directories(cfg.output_dir);
        cfg.save(at(cfg, artifact::kConfig));
        const auto pool = make_pool(cfg, cfg.corpus.train_system1, cfg.corpus.train_system2, cfg.corpus.train_seed);
        const auto test = make_pool(cfg, cfg.corpus.test_system1, cfg.corpus.test_system2, cfg.corpus.test_seed);
        corpus::write_corpus(at(cfg, artifact::kTrainCorpus), pool);
        corpus::write_corpus(at(cfg, artifact::kTestCorpus), test);

        std::vector<corpus::System> assigned;
        switch (cfg.split.mode) {
            case SplitMode::Gold:
                for (const auto& ex : pool) assigned.push_back(ex.gold_system);
                break;
            case SplitMode::Random:
                assigned = splitter::split_random(pool, cfg.split.seed).assigned;
                break;
            case SplitMode::Vote: {
                const auto r = splitter::split_corpus(pool, cfg.split.voters);
                splitter::write_verdicts(at(cfg, artifact::kVerdicts), r.verdicts);
                assigned = r.assigned;
                break;
            }
        }
        corpus::write_split(at(cfg, artifact::kSplit), pool, assigned);
        SplitSummary s;
        s.train = pool.size();
        std::size_t agree = 0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            (assigned[i] == corpus::System::One ? s.d1 : s.d2)++;
            agree += assigned[i] == pool[i].gold_system;
        }
        s.agreement = static_cast<double>(agree) / static_cast<double>(pool.size());
        log("split: |D1| = " + std::to_string(s.d1) + ", |D2| = " + std::to_string(s.d2));
        return s;
    });
}

fs::path base_cache_path(const RunConfig& cfg) {
    const auto& m = cfg.model;
    const auto& p = cfg.pretrain;
    char key[256];
    std::snprintf(key, sizeof key, "model %d %d %d %d %d %d seed %llu pretrain %zu %llu %llu %zu %.17g", m.n_layers,
                  m.d_model, m.n_heads, m.d_ff, m.vocab_size, m.max_seq_len, static_cast<unsigned long long>(cfg.model_seed),
                  p.count, static_cast<unsigned long long>(p.seed), static_cast<unsigned long long>(p.steps), p.batch_size,
                  p.lr);
    return cfg.cache_dir / ("base-" + hex(fnv1a(key)) + ".ckpt");
}

fs::path run_pretrain(const RunConfig& cfg) {
    return guarded("pretrain", [&] {
        cfg.validate();
        const fs::path cached = base_cache_path(cfg);
        if (!fs::exists(cached)) {
            log("pretrain: building base model " + cached.string());
            fs::create_directories(cfg.cache_dir);
            model::Model m = model::init_model(cfg.model, cfg.model_seed);
            const auto seqs = corpus::gen_pretrain(cfg.pretrain.count, cfg.pretrain.seed);
            train::PretrainConfig pc{cfg.pretrain.steps, cfg.pretrain.batch_size, {cfg.pretrain.lr},
                                     derive_seed(cfg.pretrain.seed, 0x50)};
            const std::uint64_t every = std::max<std::uint64_t>(1, cfg.pretrain.steps / 10);
            train::pretrain(m, seqs, pc, [&](const train::StepMetrics& s) {
                if ((s.step + 1) % every == 0) {
                    char buf[96];
                    std::snprintf(buf, sizeof buf, "pretrain: step %llu loss %.4f",
                                  static_cast<unsigned long long>(s.step + 1), s.loss);
                    log(buf);
                }
            });
            // Write then rename so concurrent sweeps never read a partial file.
            const fs::path tmp = cached.string() + ".tmp" + std::to_string(derive_seed(cfg.seed, fnv1a(cfg.output_dir.string())));
            model::save_checkpoint(tmp, m, nullptr);
            fs::rename(tmp, cached);
        }
        fs::create_directories(cfg.output_dir);
        fs::copy_file(cached, at(cfg, artifact::kBase), fs::copy_options::overwrite_existing);
        return at(cfg, artifact::kBase);
    });
}

void run_score(const RunConfig& cfg) {
    guarded("score", [&] {
        cfg.validate();
        auto [m, init] = attach_init(cfg);
        const SplitData data = load_split(cfg);
        model::AdapterSet warm = init;
        if (cfg.warmup.steps > 0) {
            train::SftConfig wc = cfg.warmup;
            wc.seed = cfg.warmup_seed();
            train::MetricsWriter metrics(at(cfg, artifact::kMetrics));
            train::sft_stage(m, warm, data.all, train::FreezeMask::full(warm.size()), wc, metrics.callback(), "warmup");
        }
        model::save_checkpoint(at(cfg, artifact::kWarmup), m, &warm);
        const auto t1 =
            importance::accumulate(m, warm, data.d1, importance::DatasetTag::System1, cfg.importance_max_examples);
        const auto t2 =
            importance::accumulate(m, warm, data.d2, importance::DatasetTag::System2, cfg.importance_max_examples);
        importance::dump(t1, at(cfg, artifact::kImportance1));
        importance::dump(t2, at(cfg, artifact::kImportance2));
        importance::export_csv(t1, warm.layout(), at(cfg, artifact::kImportance1Csv));
        importance::export_csv(t2, warm.layout(), at(cfg, artifact::kImportance2Csv));
        log("score: " + std::to_string(t1.size()) + " adapter scalars scored on " + std::to_string(t1.n) + " + " +
            std::to_string(t2.n) + " examples");
    });
}

PartitionSummary run_partition(const RunConfig& cfg) {
    return guarded("partition", [&] {
        cfg.validate();
        const std::size_t total = model::adapter_param_count(cfg.model, cfg.lora);
        const auto t1 = importance::load(require(at(cfg, artifact::kImportance1), "score"), total);
        const auto t2 = importance::load(require(at(cfg, artifact::kImportance2), "score"), total);
        auto spec = partition::build_partition(t1, t2, cfg.theta);
        partition::stage_active_sets(spec, cfg.alpha, cfg.beta);
        partition::save_partition(spec, at(cfg, artifact::kPartition));
        PartitionSummary s;
        s.total = total;
        s.s1 = spec.s1.size();
        s.s2 = spec.s2.size();
        s.shared = spec.shared.size();
        s.omega1_only = spec.omega1_only.size();
        s.omega2_only = spec.omega2_only.size();
        s.stage1 = spec.stage1_active.size();
        s.stage2 = spec.stage2_active.size();
        s.param_fraction = static_cast<double>(partition::set_union(spec.s1, spec.s2).size()) / static_cast<double>(total);
        s.jaccard = partition::jaccard(spec.s1, spec.s2);
        log("partition: |S1| = " + std::to_string(s.s1) + ", |S2| = " + std::to_string(s.s2) +
            ", shared = " + std::to_string(s.shared));
        return s;
    });
}

std::pair<train::FreezeMask, train::FreezeMask> stage_masks(const RunConfig& cfg) {
    const std::size_t total = model::adapter_param_count(cfg.model, cfg.lora);
    const auto spec = partition::load_partition(require(at(cfg, artifact::kPartition), "partition"), total);
    if (cfg.mask_mode == MaskMode::Importance) {
        return {train::FreezeMask(spec.stage1_active, total), train::FreezeMask(spec.stage2_active, total)};
    }
    return {train::random_mask(spec.stage1_active.size(), cfg.mask_seed(1), total),
            train::random_mask(spec.stage2_active.size(), cfg.mask_seed(2), total)};
}

TrainSummary run_train(const RunConfig& cfg) {
    return guarded("train", [&] {
        cfg.validate();
        auto [m, adapters] = attach_init(cfg);
        const SplitData data = load_split(cfg);
        const auto [mask1, mask2] = stage_masks(cfg);
        train::MetricsWriter metrics(at(cfg, artifact::kMetrics));
        TrainSummary s;
        s.stage1_active = mask1.count();
        s.stage2_active = mask2.count();

        train::SftConfig sc = cfg.sft;
        sc.seed = cfg.sft_seed();
        const auto sft = train::sft_stage(m, adapters, data.d1, mask1, sc, metrics.callback());
        s.sft_optimizer_state = sft.optimizer_state;
        s.sft_final_loss = sft.losses.empty() ? 0.0 : sft.losses.back();
        model::save_checkpoint(at(cfg, artifact::kSft), m, &adapters);
        log("train: stage 1 done, " + std::to_string(mask1.count()) + " active scalars");

        train::GrpoConfig gc = cfg.grpo;
        gc.seed = cfg.grpo_seed();
        const auto rl = train::grpo_stage(m, adapters, data.d2, mask2, gc, metrics.callback());
        s.grpo_optimizer_state = rl.optimizer_state;
        s.grpo_final_reward = rl.mean_reward.empty() ? 0.0 : rl.mean_reward.back();
        model::save_checkpoint(at(cfg, artifact::kRl), m, &adapters);
        log("train: stage 2 done, " + std::to_string(mask2.count()) + " active scalars");
        return s;
    });
}

EvalSummary run_eval(const RunConfig& cfg) {
    return guarded("eval", [&] {
        cfg.validate();
        const auto test = corpus::read_corpus(require(at(cfg, artifact::kTestCorpus), "split"));
        auto eval_ckpt = [&](const char* name, const char* producer) {
            const auto ck = model::load_checkpoint(require(at(cfg, name), producer));
            return train::evaluate(ck.model, ck.adapters ? &*ck.adapters : nullptr, test, cfg.eval_max_new_tokens);
        };
        EvalSummary s;
        s.base = eval_ckpt(artifact::kBase, "pretrain");
        s.sft = eval_ckpt(artifact::kSft, "train");
        s.rl = eval_ckpt(artifact::kRl, "train");
        write_json(at(cfg, artifact::kEval), {{"base", eval_json(s.base)}, {"sft", eval_json(s.sft)}, {"rl", eval_json(s.rl)}});
        train::MetricsWriter metrics(at(cfg, artifact::kMetrics));
        metrics.write({"eval-sft", 0, 0.0, std::nullopt, std::nullopt, s.sft.overall()});
        metrics.write({"eval-rl", 0, 0.0, std::nullopt, std::nullopt, s.rl.overall()});
        char buf[128];
        std::snprintf(buf, sizeof buf, "eval: base %.3f, sft %.3f, rl %.3f", s.base.overall().value_or(0.0),
                      s.sft.overall().value_or(0.0), s.rl.overall().value_or(0.0));
        log(buf);
        return s;
    });
}

void run_export_scatter(const RunConfig& cfg, const fs::path& out) {
    guarded("export-scatter", [&] {
        const std::size_t total = model::adapter_param_count(cfg.model, cfg.lora);
        const auto t1 = importance::load(require(at(cfg, artifact::kImportance1), "score"), total);
        const auto t2 = importance::load(require(at(cfg, artifact::kImportance2), "score"), total);
        const auto spec = partition::load_partition(require(at(cfg, artifact::kPartition), "partition"), total);
        partition::export_scatter(t1, t2, spec, model::AdapterLayout(cfg.model, cfg.lora), out);
    });
}

std::string RunReport::to_json() const {
    json j;
    j["split"] = {{"train", split.train}, {"d1", split.d1}, {"d2", split.d2}, {"agreement", split.agreement}};
    j["partition"] = {{"total", partition.total},
                      {"s1", partition.s1},
                      {"s2", partition.s2},
                      {"shared", partition.shared},
                      {"omega1_only", partition.omega1_only},
                      {"omega2_only", partition.omega2_only},
                      {"stage1", partition.stage1},
                      {"stage2", partition.stage2},
                      {"param_fraction", partition.param_fraction},
                      {"jaccard", partition.jaccard}};
    j["train"] = {{"stage1_active", train.stage1_active},
                  {"stage2_active", train.stage2_active},
                  {"sft_optimizer_state", train.sft_optimizer_state},
                  {"grpo_optimizer_state", train.grpo_optimizer_state},
                  {"sft_final_loss", train.sft_final_loss},
                  {"grpo_final_reward", train.grpo_final_reward}};
    j["eval"] = {{"base", eval_json(eval.base)}, {"sft", eval_json(eval.sft)}, {"rl", eval_json(eval.rl)}};
    return j.dump(2);
}

RunReport run_pipeline(const RunConfig& cfg) {
    guarded("config", [&] { cfg.validate(); });
    fs::create_directories(cfg.output_dir);
    fs::remove(at(cfg, artifact::kMetrics));
    RunReport r;
    r.split = run_split(cfg);
    run_pretrain(cfg);
    run_score(cfg);
    r.partition = run_partition(cfg);
    r.train = run_train(cfg);
    r.eval = run_eval(cfg);
    guarded("report", [&] {
        {
            std::ofstream out(at(cfg, artifact::kReport));
            out << r.to_json() << '\n';
        }
        json artifacts = json::array();
        for (const char* name :
             {artifact::kConfig, artifact::kTrainCorpus, artifact::kTestCorpus, artifact::kSplit, artifact::kVerdicts,
              artifact::kBase, artifact::kWarmup, artifact::kImportance1, artifact::kImportance2,
              artifact::kImportance1Csv, artifact::kImportance2Csv, artifact::kPartition, artifact::kSft, artifact::kRl,
              artifact::kMetrics, artifact::kEval, artifact::kReport}) {
            const fs::path p = at(cfg, name);
            if (!fs::exists(p)) continue;
            artifacts.push_back({{"file", name}, {"bytes", fs::file_size(p)}, {"fnv1a", hex(file_digest(p))}});
        }
        json seeds = {{"seed", cfg.seed},
                      {"model", cfg.model_seed},
                      {"pretrain", cfg.pretrain.seed},
                      {"corpus_facts", cfg.corpus.fact_seed},
                      {"corpus_train", cfg.corpus.train_seed},
                      {"corpus_test", cfg.corpus.test_seed},
                      {"split", cfg.split.seed},
                      {"lora_init", cfg.lora_seed()},
                      {"warmup", cfg.warmup_seed()},
                      {"sft", cfg.sft_seed()},
                      {"grpo", cfg.grpo_seed()},
                      {"mask_stage1", cfg.mask_seed(1)},
                      {"mask_stage2", cfg.mask_seed(2)}};
        json voters = json::array();
        for (const auto& v : cfg.split.voters) voters.push_back({{"id", v.voter_id}, {"seed", v.seed}});
        seeds["voters"] = voters;
        write_json(at(cfg, artifact::kManifest), {{"tool", "dualpeft"},
                                                  {"version", "0.1.0"},
                                                  {"config", artifact::kConfig},
                                                  {"base_cache_key", base_cache_path(cfg).filename().string()},
                                                  {"seeds", seeds},
                                                  {"artifacts", artifacts}});
    });
    return r;
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace dualpeft::experiment
