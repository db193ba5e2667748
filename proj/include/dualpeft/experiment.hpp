// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// End-to-end runner: split -> base pretrain (cached) -> calibration warm-up
// -> importance scoring -> partition -> SFT -> GRPO -> evaluation, plus the
// sweep drivers built on top of it.
//
// Every stage reads its inputs from and writes its outputs to the run
// directory, so stages can also be invoked one at a time.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dualpeft/model.hpp"
#include "dualpeft/splitter.hpp"
#include "dualpeft/trainer.hpp"

namespace dualpeft::experiment {

enum class SplitMode : std::uint8_t { Gold, Random, Vote };
enum class MaskMode : std::uint8_t { Importance, Random };

struct CorpusSettings {
    std::size_t facts = 12;
    std::uint64_t fact_seed = 3;
    std::size_t train_system1 = 60;
    std::size_t train_system2 = 60;
    std::size_t test_system1 = 50;
    std::size_t test_system2 = 50;
    int max_depth = 3;
    std::uint64_t train_seed = 11;
    std::uint64_t test_seed = 12;
    bool operator==(const CorpusSettings&) const = default;
};

// Base-model pretraining; `seed` drives both the corpus and batch order.
struct PretrainSettings {
    std::size_t count = 6000;
    std::uint64_t seed = 7;
    std::uint64_t steps = 8000;
    std::size_t batch_size = 8;
    double lr = 3e-3;
};

struct SplitSettings {
    SplitMode mode = SplitMode::Vote;
    std::vector<splitter::VoterProfile> voters;
    std::uint64_t seed = 5;  // random mode
};

// Flat `key = value` text with dotted section names. `seed` drives adapter
// init, warm-up, SFT, GRPO and random-mask streams; the other seeds are
// separate keys.
struct RunConfig {
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "runs/default";
    std::filesystem::path cache_dir = "runs/cache";
    model::ModelConfig model{2, 32, 4, 64, 48, 48};
    std::uint64_t model_seed = 1;
    model::LoraConfig lora;
    CorpusSettings corpus;
    PretrainSettings pretrain;
    SplitSettings split;
    std::size_t importance_max_examples = 0;
    double theta = 0.9;
    double alpha = 1.0;
    double beta = 1.0;
    MaskMode mask_mode = MaskMode::Importance;
    train::SftConfig warmup{50, 8, {2e-3}, 0};
    train::SftConfig sft{300, 8, {2e-3}, 0};
    train::GrpoConfig grpo;
    int eval_max_new_tokens = 24;

    RunConfig();

    void validate() const;
    // Throws std::invalid_argument for an unknown key or a malformed value.
    void set(std::string_view key, std::string_view value);
    std::string get(std::string_view key) const;
    static const std::vector<std::string>& keys();

    std::string to_text() const;
    static RunConfig from_text(std::string_view text);
    static RunConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    // Streams derived from `seed`.
    std::uint64_t lora_seed() const;
    std::uint64_t warmup_seed() const;
    std::uint64_t sft_seed() const;
    std::uint64_t grpo_seed() const;
    std::uint64_t mask_seed(int stage) const;
};

bool operator==(const RunConfig& a, const RunConfig& b);

// A stage failure; what() starts with "stage <name>: ".
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& message);
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

// Progress messages; silent by default.
void set_log_sink(std::function<void(const std::string&)> sink);

struct SplitSummary {
    std::size_t train = 0, d1 = 0, d2 = 0;
    double agreement = 0.0;  // fraction assigned to the gold system
};

struct PartitionSummary {
    std::size_t total = 0, s1 = 0, s2 = 0, shared = 0, omega1_only = 0, omega2_only = 0;
    std::size_t stage1 = 0, stage2 = 0;
    double param_fraction = 0.0;  // |S1 u S2| / total
    double jaccard = 0.0;
};

struct TrainSummary {
    std::size_t stage1_active = 0, stage2_active = 0;
    std::size_t sft_optimizer_state = 0, grpo_optimizer_state = 0;
    double sft_final_loss = 0.0;
    double grpo_final_reward = 0.0;
};

struct EvalSummary {
    train::EvalResult base, sft, rl;
};

struct RunReport {
    SplitSummary split;
    PartitionSummary partition;
    TrainSummary train;
    EvalSummary eval;
    std::string to_json() const;
};

// Run-directory file names.
namespace artifact {
inline constexpr const char* kConfig = "config.txt";
inline constexpr const char* kTrainCorpus = "corpus_train.tsv";
inline constexpr const char* kTestCorpus = "corpus_test.tsv";
inline constexpr const char* kSplit = "split.tsv";
inline constexpr const char* kVerdicts = "verdicts.tsv";
inline constexpr const char* kBase = "base.ckpt";
inline constexpr const char* kWarmup = "warmup.ckpt";
inline constexpr const char* kImportance1 = "importance_s1.imp";
inline constexpr const char* kImportance2 = "importance_s2.imp";
inline constexpr const char* kImportance1Csv = "importance_s1.csv";
inline constexpr const char* kImportance2Csv = "importance_s2.csv";
inline constexpr const char* kPartition = "partition.part";
inline constexpr const char* kSft = "sft.ckpt";
inline constexpr const char* kRl = "rl.ckpt";
inline constexpr const char* kMetrics = "metrics.jsonl";
inline constexpr const char* kEval = "eval.json";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kScatter = "scatter.csv";
}  // namespace artifact

// Individual stages. Each throws StageError naming itself.
SplitSummary run_split(const RunConfig& cfg);
// Pretrains (or reuses) the cached base and copies it into the run directory.
std::filesystem::path run_pretrain(const RunConfig& cfg);
std::filesystem::path base_cache_path(const RunConfig& cfg);
void run_score(const RunConfig& cfg);
PartitionSummary run_partition(const RunConfig& cfg);
TrainSummary run_train(const RunConfig& cfg);
EvalSummary run_eval(const RunConfig& cfg);
void run_export_scatter(const RunConfig& cfg, const std::filesystem::path& out);

// All stages in order, then report.json and manifest.json.
RunReport run_pipeline(const RunConfig& cfg);

// Stage masks as the train stage builds them from the partition file.
std::pair<train::FreezeMask, train::FreezeMask> stage_masks(const RunConfig& cfg);

double median(std::vector<double> values);

struct ThetaTrial {
    std::string sites;
    double theta = 0.0;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    double param_pct = 0.0;
    double perf = 0.0;
    double rand = 0.0;
};

struct ThetaRow {
    std::string sites;
    double theta = 0.0;
    double param_pct = 0.0;  // median over trials
    double perf = 0.0;       // median post-RL held-out accuracy, importance masks
    double rand = 0.0;       // same, size-matched random masks
    std::size_t trials = 0;
};

struct ThetaSweep {
    std::vector<ThetaTrial> trials;
    std::vector<ThetaRow> rows;
};

// alpha = beta = 1; trial k uses seed cfg.seed + k. Writes theta_sweep.csv
// and theta_sweep_trials.csv into cfg.output_dir.
ThetaSweep theta_sweep(const RunConfig& cfg, std::span<const double> thetas, std::span<const std::string> sites,
                       std::size_t trials);

struct GridTrial {
    double alpha = 0.0, beta = 0.0;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    double perf_sft = 0.0, perf_rl = 0.0;
};

struct GridRow {
    double alpha = 0.0, beta = 0.0;
    double perf_sft = 0.0, perf_rl = 0.0;  // medians
    std::size_t trials = 0;
};

struct GridSweep {
    std::vector<GridTrial> trials;
    std::vector<GridRow> rows;
};

// Full (alpha, beta) grid over `values`. Writes grid_ab.csv and
// grid_ab_trials.csv.
GridSweep alpha_beta_grid(const RunConfig& cfg, std::span<const double> values, std::size_t trials);

// Splitting strategy for the ablation: "gold", "random", "single:<error>" or
// "vote<n>:<error>". Voters apply the operator-count rule.
struct SplitterStrategy {
    std::string name;
    SplitMode mode = SplitMode::Gold;
    std::size_t voters = 0;
    double error_rate = 0.0;

    static SplitterStrategy parse(std::string_view text);
    // Split settings for one trial seed.
    SplitSettings settings(std::uint64_t trial_seed) const;
};

struct AblationTrial {
    std::string strategy;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    double agreement = 0.0;
    double perf = 0.0;
};

struct AblationRow {
    std::string strategy;
    double agreement = 0.0;  // median
    double perf = 0.0;       // median post-RL held-out accuracy
    std::size_t trials = 0;
};

struct Ablation {
    std::vector<AblationTrial> trials;
    std::vector<AblationRow> rows;
};

// Needs at least two strategies. Writes ablation.csv and
// ablation_trials.csv.
Ablation splitter_ablation(const RunConfig& cfg, std::span<const std::string> strategies, std::size_t trials);

}  // namespace dualpeft::experiment
