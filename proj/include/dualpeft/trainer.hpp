// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// Masked adapter training: supervised fine-tuning on System-1 data, then
// group-relative policy optimization on System-2 data, each restricted to a
// per-scalar active set.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualpeft/corpus.hpp"
#include "dualpeft/model.hpp"

namespace dualpeft::train {

class FreezeMask {
public:
    FreezeMask() = default;
    // `active` must be sorted, unique and below `total`.
    FreezeMask(std::vector<std::uint64_t> active, std::size_t total);
    static FreezeMask full(std::size_t total);
    static FreezeMask none(std::size_t total);

    std::size_t total() const { return flags_.size(); }
    std::size_t count() const { return active_.size(); }
    bool is_active(std::size_t j) const { return flags_[j] != 0; }
    const std::vector<std::uint64_t>& active() const { return active_; }
    // Zeroes every entry outside the active set.
    void apply(std::span<double> grad) const;

private:
    std::vector<std::uint64_t> active_;
    std::vector<std::uint8_t> flags_;
};

// Uniform sample of `count` indices without replacement.
FreezeMask random_mask(std::size_t count, std::uint64_t seed, std::size_t total);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double grad_clip = 0.0;  // global L2 norm over active entries; 0 disables

    void validate() const;
};

// AdamW whose moment buffers cover only the mask's active indices.
class SparseAdamW {
public:
    SparseAdamW(FreezeMask mask, AdamWConfig cfg);
    void step(std::span<double> params, std::span<const double> grad);
    std::size_t state_size() const { return m_.size(); }
    const FreezeMask& mask() const { return mask_; }
    std::uint64_t steps() const { return t_; }

private:
    FreezeMask mask_;
    AdamWConfig cfg_;
    std::vector<double> m_, v_;
    std::uint64_t t_ = 0;
};

struct StepMetrics {
    std::string stage;
    std::uint64_t step = 0;
    double loss = 0.0;  // SFT loss or GRPO objective
    std::optional<double> mean_reward;
    std::optional<double> kl;
    std::optional<double> accuracy;
};

using MetricsCallback = std::function<void(const StepMetrics&)>;

// Appends one JSON object per step.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path);
    void write(const StepMetrics& m);
    MetricsCallback callback();

private:
    std::ofstream out_;
};

struct SftConfig {
    std::uint64_t steps = 200;
    std::size_t batch_size = 8;
    AdamWConfig opt{5e-3};
    std::uint64_t seed = 0;

    void validate() const;
};

struct SftResult {
    std::vector<double> losses;
    std::size_t optimizer_state = 0;
};

// Batches are drawn by reshuffling the dataset every epoch. The loss is the
// mean over the batch of per-example masked cross-entropies.
SftResult sft_stage(const model::Model& model, model::AdapterSet& adapters, std::span<const corpus::TaskExample> data,
                    const FreezeMask& mask, const SftConfig& cfg, const MetricsCallback& on_step = {},
                    const std::string& stage_name = "sft");

struct PretrainConfig {
    std::uint64_t steps = 1500;
    std::size_t batch_size = 8;
    AdamWConfig opt{3e-3};
    std::uint64_t seed = 0;

    void validate() const;
};

// Full-parameter next-token training of the base model (no adapters) on
// complete sequences; every position after BOS is counted.
std::vector<double> pretrain(model::Model& model, std::span<const std::vector<int>> sequences,
                             const PretrainConfig& cfg, const MetricsCallback& on_step = {});

struct RewardSpec {
    double exact_weight = 1.0;
    double format_weight = 0.2;
};

// exact_weight * [answers match] + format_weight * [completion has "=>"].
double reward(const RewardSpec& spec, std::string_view completion, std::string_view gold_answer);

// (r - mean) / (population std + 1e-8); exact zeros when all rewards agree.
std::vector<double> compute_advantages(std::span<const double> rewards);

struct GrpoConfig {
    std::size_t group_size = 4;
    std::size_t prompts_per_step = 4;
    double clip_eps = 0.2;
    double kl_coef = 0.04;
    double temperature = 1.0;
    int max_new_tokens = 24;
    std::uint64_t steps = 30;
    AdamWConfig opt{2e-3};
    RewardSpec reward;
    std::uint64_t seed = 0;

    void validate() const;
};

// Per-token terms of one completion's objective, returned as a scalar mean
// over tokens: -min(rho*A, clip(rho, 1-eps, 1+eps)*A) + kl_coef*(e^u - u - 1)
// with rho = exp(lp - old_lp) and u = ref_lp - lp.
ad::Var grpo_token_objective(ad::Var logprobs, std::span<const double> old_logprobs,
                             std::span<const double> ref_logprobs, double advantage, double clip_eps, double kl_coef);

struct GrpoResult {
    std::vector<double> objective;
    std::vector<double> mean_reward;
    std::vector<double> kl;
    std::size_t optimizer_state = 0;
};

struct Rollout {
    std::vector<int> prompt;
    std::vector<int> completion;  // may end with EOS
    double reward = 0.0;
    double advantage = 0.0;
};

// Log-probabilities of `completion` given `prompt`, traced on `tape`.
ad::Var completion_logprobs(ad::Tape& tape, const model::Model& model, const model::AdapterSet* adapters,
                            std::span<const int> prompt, std::span<const int> completion, model::GradSinks sinks = {});

// Objective of one batch of rollouts against a reference adapter snapshot;
// accumulates the gradient w.r.t. `adapters` into `grad` and returns
// (objective, mean per-token KL).
std::pair<double, double> grpo_loss_and_grad(const model::Model& model, const model::AdapterSet& adapters,
                                             const model::AdapterSet& reference, std::span<const Rollout> rollouts,
                                             const GrpoConfig& cfg, std::span<double> grad);

// The reference policy is a snapshot of `adapters` taken on entry.
GrpoResult grpo_stage(const model::Model& model, model::AdapterSet& adapters, std::span<const corpus::TaskExample> data,
                      const FreezeMask& mask, const GrpoConfig& cfg, const MetricsCallback& on_step = {});

struct EvalResult {
    std::size_t n = 0, n1 = 0, n2 = 0;
    std::size_t correct = 0, correct1 = 0, correct2 = 0;
    std::optional<double> overall() const;
    std::optional<double> system1() const;
    std::optional<double> system2() const;
};

// Greedy decoding; exact match of final answers, grouped by gold system.
EvalResult evaluate(const model::Model& model, const model::AdapterSet* adapters,
                    std::span<const corpus::TaskExample> data, int max_new_tokens = 24);

}  // namespace dualpeft::train
