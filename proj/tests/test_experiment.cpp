// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>

#include "dualpeft/corpus.hpp"
#include "dualpeft/experiment.hpp"
#include "dualpeft/partition.hpp"

using namespace dualpeft;
using namespace dualpeft::experiment;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / "dualpeft_test_experiment" / name;
    fs::remove_all(p);
    return p;
}

RunConfig tiny(const std::string& name) {
    RunConfig c;
    c.output_dir = scratch(name);
    c.cache_dir = fs::temp_directory_path() / "dualpeft_test_experiment" / "cache";
    c.model = {1, 16, 2, 24, c.model.vocab_size, 48};
    c.lora.rank = 2;
    c.corpus = {4, 3, 10, 10, 6, 6, 2, 11, 12};
    c.pretrain = {200, 7, 150, 8, 3e-3};
    c.warmup.steps = 5;
    c.sft.steps = 20;
    c.sft.batch_size = 4;
    c.grpo.steps = 2;
    c.grpo.group_size = 2;
    c.grpo.prompts_per_step = 2;
    c.grpo.max_new_tokens = 8;
    c.eval_max_new_tokens = 10;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

}  // namespace

TEST_CASE("config text round trip") {
    RunConfig c;
    CHECK(RunConfig::from_text(c.to_text()) == c);
    c.theta = 0.1 + 0.2;
    c.sft.opt.lr = 1.0 / 3.0;
    c.lora.sites = model::SiteSet::parse("Q,Down");
    c.lora.init_mode = model::InitMode::PrincipalSingular;
    c.split.mode = SplitMode::Random;
    c.mask_mode = MaskMode::Random;
    c.seed = 18446744073709551615ULL;
    const auto back = RunConfig::from_text(c.to_text());
    CHECK(back == c);
    CHECK(back.theta == c.theta);
    CHECK(back.sft.opt.lr == c.sft.opt.lr);
    CHECK(back.split.voters.size() == 3);
    CHECK(back.split.voters[2].seed == 3);

    for (const auto& key : RunConfig::keys()) {
        RunConfig d;
        d.set(key, c.get(key));
        CHECK(d.get(key) == c.get(key));
    }
    const auto path = scratch("cfg") / "run.cfg";
    fs::create_directories(path.parent_path());
    c.save(path);
    CHECK(RunConfig::load(path) == c);
}

TEST_CASE("config errors name the offending key") {
    CHECK_THROWS_WITH(RunConfig::from_text("sft.stepz = 3\n"), doctest::Contains("sft.stepz"));
    CHECK_THROWS_WITH(RunConfig::from_text("sft.steps = three\n"), doctest::Contains("sft.steps"));
    CHECK_THROWS_WITH(RunConfig::from_text("seed = 1\nseed = 2\n"), doctest::Contains("already set on line 1"));
    CHECK_THROWS_WITH(RunConfig::from_text("# comment\n\njust words\n"), doctest::Contains("line 3"));
    CHECK_THROWS(RunConfig().set("split.mode", "poll"));
    const auto c = RunConfig::from_text("# partial\npartition.theta = 0.5\n");
    CHECK(c.theta == 0.5);
    CHECK(c.sft.steps == RunConfig().sft.steps);

    RunConfig bad;
    bad.theta = 1.5;
    CHECK_THROWS(bad.validate());
    bad = RunConfig();
    bad.split.voters.clear();
    CHECK_THROWS(bad.validate());
    bad.split.mode = SplitMode::Gold;
    CHECK_NOTHROW(bad.validate());
}

TEST_CASE("pipeline artifacts, determinism and freeze contract") {
    auto c = tiny("det-a");
    const auto r1 = run_pipeline(c);
    for (const char* name : {artifact::kConfig, artifact::kSplit, artifact::kVerdicts, artifact::kBase, artifact::kWarmup,
                             artifact::kImportance1, artifact::kImportance2, artifact::kPartition, artifact::kSft,
                             artifact::kRl, artifact::kMetrics, artifact::kEval, artifact::kReport, artifact::kManifest}) {
        CHECK_MESSAGE(fs::exists(c.output_dir / name), name);
    }
    CHECK(RunConfig::load(c.output_dir / artifact::kConfig) == c);
    const auto manifest = nlohmann::json::parse(slurp(c.output_dir / artifact::kManifest));
    CHECK(manifest["seeds"]["seed"] == c.seed);
    CHECK(manifest["artifacts"].size() >= 15);

    auto c2 = c;
    c2.output_dir = scratch("det-b");
    const auto r2 = run_pipeline(c2);
    CHECK(r1.to_json() == r2.to_json());
    for (const char* name : {artifact::kSplit, artifact::kImportance1Csv, artifact::kPartition, artifact::kSft,
                             artifact::kRl, artifact::kEval}) {
        CHECK_MESSAGE(slurp(c.output_dir / name) == slurp(c2.output_dir / name), name);
    }

    // Re-evaluating the stored checkpoints reproduces the report.
    CHECK(run_eval(c).rl.correct == r1.eval.rl.correct);

    // Frozen scalars per stage, read back from the checkpoints.
    auto base = model::load_checkpoint(c.output_dir / artifact::kBase).model;
    const auto init = model::attach_lora(base, c.lora, c.lora_seed());
    const auto sft = *model::load_checkpoint(c.output_dir / artifact::kSft).adapters;
    const auto rl = *model::load_checkpoint(c.output_dir / artifact::kRl).adapters;
    const auto [m1, m2] = stage_masks(c);
    for (std::size_t j = 0; j < init.size(); ++j) {
        if (!m1.is_active(j)) CHECK(sft.values()[j] == init.values()[j]);
        if (!m2.is_active(j)) CHECK(rl.values()[j] == sft.values()[j]);
    }
    CHECK(r1.train.sft_optimizer_state == m1.count());
    CHECK(r1.train.grpo_optimizer_state == m2.count());
}

TEST_CASE("theta extremes") {
    auto c = tiny("theta-one");
    c.theta = 1.0;
    const auto r = run_pipeline(c);
    CHECK(r.partition.stage1 == r.partition.total);
    CHECK(r.partition.stage2 == r.partition.total);
    CHECK(r.partition.param_fraction == 1.0);

    c = tiny("theta-zero");
    c.theta = 0.0;
    const auto z = run_pipeline(c);
    CHECK(z.partition.stage1 == 0);
    CHECK(z.partition.stage2 == 0);
    CHECK(z.eval.rl.correct == z.eval.base.correct);
    CHECK(z.eval.sft.correct == z.eval.base.correct);
}

TEST_CASE("stage failures name the stage") {
    auto c = tiny("fail");
    CHECK_THROWS_WITH_AS(run_score(c), doctest::Contains("stage score"), StageError);
    run_split(c);
    run_pretrain(c);
    run_score(c);
    run_partition(c);
    {
        std::ofstream out(c.output_dir / artifact::kPartition, std::ios::binary | std::ios::trunc);
        out << "garbage";
    }
    try {
        run_train(c);
        FAIL("expected a stage error");
    } catch (const StageError& e) {
        CHECK(e.stage() == "train");
    }
    // The earlier artifacts are retained.
    CHECK(fs::exists(c.output_dir / artifact::kImportance1));

    auto v = tiny("fail-vote");
    v.split.voters.clear();
    CHECK_THROWS_WITH_AS(run_pipeline(v), doctest::Contains("stage config"), StageError);
}

TEST_CASE("alpha/beta grid") {
    auto c = tiny("grid");
    const std::vector<double> values = {0.0, 1.0};
    const auto g = alpha_beta_grid(c, values, 1);
    CHECK(g.rows.size() == 4);
    CHECK(line_count(c.output_dir / "grid_ab.csv") == 1 + values.size() * values.size());
    // Beta only affects stage 2.
    const auto dir = c.output_dir / "grid";
    CHECK(slurp(dir / "a-1_b-0" / "trial-0" / artifact::kSft) == slurp(dir / "a-1_b-1" / "trial-0" / artifact::kSft));
    for (const auto& a : g.rows) {
        for (const auto& b : g.rows) {
            if (a.alpha == b.alpha) CHECK(a.perf_sft == b.perf_sft);
        }
    }
}

TEST_CASE("theta sweep table") {
    auto c = tiny("sweep");
    const std::vector<double> thetas = {0.3, 0.6, 1.0};
    const std::vector<std::string> sites = {"QKV", "QKVGUD"};
    const auto s = theta_sweep(c, thetas, sites, 1);
    REQUIRE(s.rows.size() == 6);
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
        if (i % 3 > 0) CHECK(s.rows[i].param_pct >= s.rows[i - 1].param_pct);
        if (s.rows[i].theta == 1.0) {
            CHECK(s.rows[i].param_pct == 100.0);
            CHECK(s.rows[i].perf == s.rows[i].rand);
        }
    }
    std::ifstream in(c.output_dir / "theta_sweep.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "sites,theta,param_pct,perf,rand,trials");
    CHECK(line_count(c.output_dir / "theta_sweep_trials.csv") == 7);
}

TEST_CASE("splitter strategies") {
    CHECK(SplitterStrategy::parse("vote5:0.2").voters == 5);
    CHECK(SplitterStrategy::parse("single:0.1").voters == 1);
    CHECK(SplitterStrategy::parse("random").mode == SplitMode::Random);
    CHECK_THROWS(SplitterStrategy::parse("vote:0.2"));
    CHECK_THROWS(SplitterStrategy::parse("single:0.7"));
    CHECK_THROWS(SplitterStrategy::parse("single"));
    CHECK_THROWS(SplitterStrategy::parse("tally3:0.1"));

    auto c = tiny("split-random");
    c.split = SplitterStrategy::parse("random").settings(1);
    run_split(c);
    const auto a = corpus::read_split(c.output_dir / artifact::kSplit);
    c.split = SplitterStrategy::parse("random").settings(2);
    run_split(c);
    const auto b = corpus::read_split(c.output_dir / artifact::kSplit);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < a.size(); ++i) differ += a[i].assigned != b[i].assigned;
    CHECK(differ > 0);

    auto z = tiny("ablation");
    const std::vector<std::string> strategies = {"gold", "single:0", "vote3:0"};
    const auto ab = splitter_ablation(z, strategies, 1);
    for (const auto& row : ab.rows) CHECK(row.agreement == 1.0);
    CHECK(ab.rows[0].perf == ab.rows[1].perf);
    CHECK(ab.rows[1].perf == ab.rows[2].perf);
    CHECK_THROWS(splitter_ablation(z, std::vector<std::string>{"gold"}, 1));
}
