// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include "dualpeft/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dualpeft/objective.hpp"
#include "dualpeft/rng.hpp"

namespace dualpeft::train {

FreezeMask::FreezeMask(std::vector<std::uint64_t> active, std::size_t total)
    : active_(std::move(active)), flags_(total, 0) {
    for (std::size_t i = 0; i < active_.size(); ++i) {
        if (active_[i] >= total) {
            throw std::out_of_range("freeze mask index " + std::to_string(active_[i]) + " outside address space of " +
                                    std::to_string(total));
        }
        if (i > 0 && active_[i] <= active_[i - 1]) throw std::invalid_argument("freeze mask indices must be sorted and unique");
        flags_[active_[i]] = 1;
    }
}

FreezeMask FreezeMask::full(std::size_t total) {
    std::vector<std::uint64_t> all(total);
    std::iota(all.begin(), all.end(), 0);
    return FreezeMask(std::move(all), total);
}

FreezeMask FreezeMask::none(std::size_t total) { return FreezeMask({}, total); }

void FreezeMask::apply(std::span<double> grad) const {
    if (grad.size() != flags_.size()) throw std::invalid_argument("freeze mask size differs from gradient size");
    for (std::size_t j = 0; j < grad.size(); ++j) {
        if (!flags_[j]) grad[j] = 0.0;
    }
}

FreezeMask random_mask(std::size_t count, std::uint64_t seed, std::size_t total) {
    if (count > total) {
        throw std::invalid_argument("random_mask: count " + std::to_string(count) + " exceeds address space of " +
                                    std::to_string(total));
    }
    // Partial Fisher-Yates over the index range.
    std::vector<std::uint64_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, 0x3A5C));
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(total - i)]);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return FreezeMask(std::move(idx), total);
}

void AdamWConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("optimizer lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("optimizer betas must be in [0, 1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("optimizer eps must be > 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
    if (!(grad_clip >= 0.0)) throw std::invalid_argument("grad clip must be >= 0");
}

SparseAdamW::SparseAdamW(FreezeMask mask, AdamWConfig cfg)
    : mask_(std::move(mask)), cfg_(cfg), m_(mask_.count(), 0.0), v_(mask_.count(), 0.0) {
    cfg_.validate();
}

void SparseAdamW::step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != mask_.total() || grad.size() != mask_.total()) {
        throw std::invalid_argument("optimizer step: parameter/gradient size differs from mask");
    }
    ++t_;
    const auto& idx = mask_.active();
    double clip = 1.0;
    if (cfg_.grad_clip > 0.0) {
        double sq = 0.0;
        for (auto j : idx) sq += grad[j] * grad[j];
        const double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip) clip = cfg_.grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const std::size_t j = idx[k];
        const double g = grad[j] * clip;
        m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
        v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g * g;
        const double update = (m_[k] / bc1) / (std::sqrt(v_[k] / bc2) + cfg_.eps);
        params[j] -= cfg_.lr * (update + cfg_.weight_decay * params[j]);
    }
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::app) {
    if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
}

void MetricsWriter::write(const StepMetrics& m) {
    nlohmann::json j;
    j["stage"] = m.stage;
    j["step"] = m.step;
    j["loss"] = m.loss;
    if (m.mean_reward) j["mean_reward"] = *m.mean_reward;
    if (m.kl) j["kl"] = *m.kl;
    if (m.accuracy) j["accuracy"] = *m.accuracy;
    out_ << j.dump() << '\n';
    out_.flush();
}

MetricsCallback MetricsWriter::callback() {
    return [this](const StepMetrics& m) { write(m); };
}

namespace {

// Epoch-wise reshuffled stream of dataset indices.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) { reshuffle(); }

    std::vector<std::size_t> next(std::size_t batch) {
        std::vector<std::size_t> out;
        out.reserve(batch);
        while (out.size() < batch) {
            if (pos_ == order_.size()) reshuffle();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void reshuffle() {
        std::iota(order_.begin(), order_.end(), 0);
        for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
        pos_ = 0;
    }

    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t pos_ = 0;
};

}  // namespace

void SftConfig::validate() const {
    if (batch_size == 0) throw std::invalid_argument("sft batch size must be >= 1");
    opt.validate();
}

SftResult sft_stage(const model::Model& model, model::AdapterSet& adapters, std::span<const corpus::TaskExample> data,
                    const FreezeMask& mask, const SftConfig& cfg, const MetricsCallback& on_step,
                    const std::string& stage_name) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument(stage_name + ": empty training set");
    if (mask.total() != adapters.size()) throw std::invalid_argument(stage_name + ": mask does not cover the adapter space");
    std::vector<ShiftedExample> shifted;
    shifted.reserve(data.size());
    for (const auto& ex : data) shifted.push_back(shift(ex));

    SparseAdamW opt(mask, cfg.opt);
    BatchSampler sampler(data.size(), derive_seed(cfg.seed, 0x5F7));
    std::vector<double> grad(adapters.size());
    SftResult result;
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::uint64_t step = 0; step < cfg.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (std::size_t i : sampler.next(cfg.batch_size)) {
            if (mask.count() == 0) {
                loss += loss_value(model, &adapters, shifted[i]) * inv_b;
                continue;
            }
            ad::Tape tape;
            const ad::Var l = ad::scale(example_loss(tape, model, &adapters, shifted[i], {{}, grad}), inv_b);
            loss += l.value().item();
            tape.backward(l);
        }
        if (mask.count() > 0) opt.step(adapters.values(), grad);
        result.losses.push_back(loss);
        if (on_step) on_step({stage_name, step, loss, std::nullopt, std::nullopt, std::nullopt});
    }
    result.optimizer_state = opt.state_size();
    return result;
}

void PretrainConfig::validate() const {
    if (batch_size == 0) throw std::invalid_argument("pretrain batch size must be >= 1");
    opt.validate();
}

std::vector<double> pretrain(model::Model& model, std::span<const std::vector<int>> sequences,
                             const PretrainConfig& cfg, const MetricsCallback& on_step) {
    cfg.validate();
    if (sequences.empty()) throw std::invalid_argument("pretrain: empty corpus");
    if (model.has_adapters()) throw std::logic_error("pretrain: model already carries adapters");
    std::vector<ShiftedExample> shifted;
    for (const auto& s : sequences) {
        if (s.size() > static_cast<std::size_t>(model.config().max_seq_len) + 1) {
            throw std::invalid_argument("pretrain: sequence of length " + std::to_string(s.size()) +
                                        " exceeds the model context");
        }
        std::vector<std::uint8_t> mask(s.size(), 1);
        shifted.push_back(shift(s, mask));
    }
    SparseAdamW opt(FreezeMask::full(model.param_count()), cfg.opt);
    BatchSampler sampler(shifted.size(), derive_seed(cfg.seed, 0x9E7));
    std::vector<double> grad(model.param_count());
    std::vector<double> losses;
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::uint64_t step = 0; step < cfg.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (std::size_t i : sampler.next(cfg.batch_size)) {
            ad::Tape tape;
            const ad::Var l = ad::scale(example_loss(tape, model, nullptr, shifted[i], {grad, {}}), inv_b);
            loss += l.value().item();
            tape.backward(l);
        }
        opt.step(model.params(), grad);
        losses.push_back(loss);
        if (on_step) on_step({"pretrain", step, loss, std::nullopt, std::nullopt, std::nullopt});
    }
    return losses;
}

double reward(const RewardSpec& spec, std::string_view completion, std::string_view gold_answer) {
    const bool exact = corpus::final_answer(completion) == corpus::final_answer(gold_answer);
    const bool format = completion.find(corpus::Tokenizer::kSepText) != std::string_view::npos;
    return spec.exact_weight * (exact ? 1.0 : 0.0) + spec.format_weight * (format ? 1.0 : 0.0);
}

std::vector<double> compute_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) throw std::invalid_argument("compute_advantages: group size must be >= 2");
    const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
    std::vector<double> adv(rewards.size(), 0.0);
    if (*lo == *hi) return adv;
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / n);
    for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / (sd + 1e-8);
    return adv;
}

void GrpoConfig::validate() const {
    if (group_size < 2) throw std::invalid_argument("grpo group size must be >= 2");
    if (prompts_per_step == 0) throw std::invalid_argument("grpo prompts per step must be >= 1");
    if (!(clip_eps > 0.0)) throw std::invalid_argument("grpo clip epsilon must be > 0");
    if (!(kl_coef >= 0.0)) throw std::invalid_argument("grpo kl coefficient must be >= 0");
    if (!(temperature > 0.0)) throw std::invalid_argument("grpo sampling temperature must be > 0");
    if (max_new_tokens < 1) throw std::invalid_argument("grpo max new tokens must be >= 1");
    opt.validate();
}

ad::Var grpo_token_objective(ad::Var logprobs, std::span<const double> old_logprobs,
                             std::span<const double> ref_logprobs, double advantage, double clip_eps, double kl_coef) {
    const ad::Tensor& lp = logprobs.value();
    const std::size_t n = lp.size();
    if (n == 0) throw std::invalid_argument("grpo objective: empty completion");
    if (old_logprobs.size() != n || ref_logprobs.size() != n) {
        throw ad::ShapeError("grpo objective: " + std::to_string(n) + " log-probs with " +
                             std::to_string(old_logprobs.size()) + " old and " + std::to_string(ref_logprobs.size()) +
                             " reference values");
    }
    std::vector<double> dvalue(n);
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t t = 0; t < n; ++t) {
        const double rho = std::exp(lp[t] - old_logprobs[t]);
        const double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps);
        const double unclipped_term = rho * advantage;
        const double clipped_term = clipped * advantage;
        // The min selects the clipped constant only when it is strictly smaller.
        const bool use_clipped = clipped_term < unclipped_term;
        const double u = ref_logprobs[t] - lp[t];
        const double eu = std::exp(u);
        total += -(use_clipped ? clipped_term : unclipped_term) + kl_coef * (eu - u - 1.0);
        dvalue[t] = ((use_clipped ? 0.0 : -unclipped_term) + kl_coef * (1.0 - eu)) * inv_n;
    }
    return logprobs.tape()->record(ad::Tensor::scalar(total * inv_n), {logprobs},
                                   [logprobs, dvalue = std::move(dvalue)](ad::Tape& tape, std::uint32_t self) {
                                       const double g = tape.grad(self)[0];
                                       auto gl = tape.grad_target(logprobs);
                                       for (std::size_t t = 0; t < gl.size(); ++t) gl[t] += g * dvalue[t];
                                   });
}

ad::Var completion_logprobs(ad::Tape& tape, const model::Model& model, const model::AdapterSet* adapters,
                            std::span<const int> prompt, std::span<const int> completion, model::GradSinks sinks) {
    if (prompt.empty() || completion.empty()) throw std::invalid_argument("completion_logprobs: empty prompt or completion");
    std::vector<int> seq(prompt.begin(), prompt.end());
    seq.insert(seq.end(), completion.begin(), completion.end() - 1);
    const ad::Var lg = model::forward(tape, model, adapters, seq, sinks);
    const std::size_t first = prompt.size() - 1;
    return ad::token_logprobs(ad::slice_rows(lg, first, first + completion.size()), completion);
}

std::pair<double, double> grpo_loss_and_grad(const model::Model& model, const model::AdapterSet& adapters,
                                             const model::AdapterSet& reference, std::span<const Rollout> rollouts,
                                             const GrpoConfig& cfg, std::span<double> grad) {
    std::size_t used = 0;
    for (const auto& r : rollouts) used += r.completion.empty() ? 0 : 1;
    if (used == 0) return {0.0, 0.0};
    const double inv = 1.0 / static_cast<double>(used);
    double objective = 0.0, kl = 0.0;
    for (const auto& r : rollouts) {
        if (r.completion.empty()) continue;
        std::vector<double> ref_lp;
        {
            ad::Tape ref_tape(false);
            const auto v = completion_logprobs(ref_tape, model, &reference, r.prompt, r.completion).value().data();
            ref_lp.assign(v.begin(), v.end());
        }
        ad::Tape tape;
        const ad::Var lp = completion_logprobs(tape, model, &adapters, r.prompt, r.completion, {{}, grad});
        // Single optimization pass per rollout batch: the sampling policy is
        // the current one, so the old log-probs equal the current values.
        const std::vector<double> old_lp(lp.value().data().begin(), lp.value().data().end());
        const ad::Var obj =
            ad::scale(grpo_token_objective(lp, old_lp, ref_lp, r.advantage, cfg.clip_eps, cfg.kl_coef), inv);
        objective += obj.value().item();
        double k = 0.0;
        for (std::size_t t = 0; t < old_lp.size(); ++t) {
            const double u = ref_lp[t] - old_lp[t];
            k += std::exp(u) - u - 1.0;
        }
        kl += k / static_cast<double>(old_lp.size()) * inv;
        tape.backward(obj);
    }
    return {objective, kl};
}

GrpoResult grpo_stage(const model::Model& model, model::AdapterSet& adapters, std::span<const corpus::TaskExample> data,
                      const FreezeMask& mask, const GrpoConfig& cfg, const MetricsCallback& on_step) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("grpo: empty training set");
    if (mask.total() != adapters.size()) throw std::invalid_argument("grpo: mask does not cover the adapter space");
    const model::AdapterSet reference = adapters;
    SparseAdamW opt(mask, cfg.opt);
    BatchSampler sampler(data.size(), derive_seed(cfg.seed, 0x6A0));
    Rng rng(derive_seed(cfg.seed, 0x6A1));
    const auto& tok = corpus::tokenizer();
    std::vector<double> grad(adapters.size());
    GrpoResult result;
    for (std::uint64_t step = 0; step < cfg.steps; ++step) {
        std::vector<Rollout> rollouts;
        double reward_sum = 0.0;
        for (std::size_t i : sampler.next(cfg.prompts_per_step)) {
            const auto& ex = data[i];
            std::vector<double> rewards;
            const std::size_t first = rollouts.size();
            for (std::size_t g = 0; g < cfg.group_size; ++g) {
                Rollout r;
                r.prompt = ex.prompt_tokens;
                r.completion = model::sample(model, &adapters, r.prompt, cfg.max_new_tokens, cfg.temperature, rng,
                                             corpus::Tokenizer::kEos);
                r.reward = reward(cfg.reward, tok.decode(r.completion), ex.answer);
                rewards.push_back(r.reward);
                reward_sum += r.reward;
                rollouts.push_back(std::move(r));
            }
            const auto adv = compute_advantages(rewards);
            for (std::size_t g = 0; g < cfg.group_size; ++g) rollouts[first + g].advantage = adv[g];
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        const auto [objective, kl] = grpo_loss_and_grad(model, adapters, reference, rollouts, cfg, grad);
        if (mask.count() > 0) opt.step(adapters.values(), grad);
        const double mean_reward = reward_sum / static_cast<double>(rollouts.size());
        result.objective.push_back(objective);
        result.mean_reward.push_back(mean_reward);
        result.kl.push_back(kl);
        if (on_step) on_step({"grpo", step, objective, mean_reward, kl, std::nullopt});
    }
    result.optimizer_state = opt.state_size();
    return result;
}

namespace {
std::optional<double> ratio(std::size_t a, std::size_t b) {
    if (b == 0) return std::nullopt;
    return static_cast<double>(a) / static_cast<double>(b);
}
}  // namespace

std::optional<double> EvalResult::overall() const { return ratio(correct, n); }
std::optional<double> EvalResult::system1() const { return ratio(correct1, n1); }
std::optional<double> EvalResult::system2() const { return ratio(correct2, n2); }

EvalResult evaluate(const model::Model& model, const model::AdapterSet* adapters,
                    std::span<const corpus::TaskExample> data, int max_new_tokens) {
    EvalResult r;
    const auto& tok = corpus::tokenizer();
    for (const auto& ex : data) {
        const auto out = model::sample(model, adapters, ex.prompt_tokens, max_new_tokens, 0.0, std::uint64_t{0},
                                       corpus::Tokenizer::kEos);
        const bool ok = corpus::final_answer(tok.decode(out)) == corpus::final_answer(ex.answer);
        ++r.n;
        r.correct += ok;
        if (ex.gold_system == corpus::System::One) {
            ++r.n1;
            r.correct1 += ok;
        } else if (ex.gold_system == corpus::System::Two) {
            ++r.n2;
            r.correct2 += ok;
        }
    }
    return r;
}

}  // namespace dualpeft::train
