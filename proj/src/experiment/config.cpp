// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dualpeft/corpus.hpp"
#include "dualpeft/experiment.hpp"
#include "dualpeft/rng.hpp"

namespace dualpeft::experiment {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T>
T parse_int(std::string_view key, std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw std::invalid_argument("config key " + std::string(key) + ": expected an integer, got '" + std::string(v) +
                                    "'");
    }
    return out;
}

double parse_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw std::invalid_argument("config key " + std::string(key) + ": expected a number, got '" + std::string(v) + "'");
    }
    return out;
}

std::string_view split_mode_name(SplitMode m) {
    switch (m) {
        case SplitMode::Gold: return "gold";
        case SplitMode::Random: return "random";
        case SplitMode::Vote: return "vote";
    }
    return "?";
}

SplitMode parse_split_mode(std::string_view v) {
    if (v == "gold") return SplitMode::Gold;
    if (v == "random") return SplitMode::Random;
    if (v == "vote") return SplitMode::Vote;
    throw std::invalid_argument("split.mode must be gold, random or vote, got '" + std::string(v) + "'");
}

std::string_view mask_mode_name(MaskMode m) { return m == MaskMode::Importance ? "importance" : "random"; }

MaskMode parse_mask_mode(std::string_view v) {
    if (v == "importance") return MaskMode::Importance;
    if (v == "random") return MaskMode::Random;
    throw std::invalid_argument("partition.mask_mode must be importance or random, got '" + std::string(v) + "'");
}

std::string format_voters(const std::vector<splitter::VoterProfile>& voters) {
    std::string out;
    for (const auto& v : voters) {
        if (!out.empty()) out += ';';
        out += splitter::format_voter(v);
    }
    return out;
}

std::vector<splitter::VoterProfile> parse_voters(std::string_view text) {
    std::vector<splitter::VoterProfile> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find(';', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string item = corpus::trim(text.substr(pos, end - pos));
        if (!item.empty()) out.push_back(splitter::parse_voter(item, "v" + std::to_string(out.size() + 1)));
        pos = end + 1;
    }
    return out;
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
};

#define DP_INT(member, type)                                                                     \
    Field {                                                                                      \
        [](const RunConfig& c) { return std::to_string(c.member); },                             \
            [](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_int<type>(k, v); } \
    }
#define DP_DOUBLE(member)                                                                        \
    Field {                                                                                      \
        [](const RunConfig& c) { return fmt_double(c.member); },                                 \
            [](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_double(k, v); } \
    }

// Ordered table; this order is also the serialization order.
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"seed", DP_INT(seed, std::uint64_t)},
        {"output.dir", {[](const RunConfig& c) { return c.output_dir.string(); },
                        [](RunConfig& c, std::string_view, std::string_view v) { c.output_dir = std::string(v); }}},
        {"cache.dir", {[](const RunConfig& c) { return c.cache_dir.string(); },
                       [](RunConfig& c, std::string_view, std::string_view v) { c.cache_dir = std::string(v); }}},
        {"model.layers", DP_INT(model.n_layers, int)},
        {"model.d_model", DP_INT(model.d_model, int)},
        {"model.heads", DP_INT(model.n_heads, int)},
        {"model.d_ff", DP_INT(model.d_ff, int)},
        {"model.max_seq_len", DP_INT(model.max_seq_len, int)},
        {"model.seed", DP_INT(model_seed, std::uint64_t)},
        {"lora.rank", DP_INT(lora.rank, int)},
        {"lora.scale", DP_DOUBLE(lora.scale)},
        {"lora.sites", {[](const RunConfig& c) { return c.lora.sites.name(); },
                        [](RunConfig& c, std::string_view, std::string_view v) { c.lora.sites = model::SiteSet::parse(v); }}},
        {"lora.init", {[](const RunConfig& c) { return std::string(model::init_mode_name(c.lora.init_mode)); },
                       [](RunConfig& c, std::string_view, std::string_view v) { c.lora.init_mode = model::parse_init_mode(v); }}},
        {"corpus.facts", DP_INT(corpus.facts, std::size_t)},
        {"corpus.fact_seed", DP_INT(corpus.fact_seed, std::uint64_t)},
        {"corpus.train_system1", DP_INT(corpus.train_system1, std::size_t)},
        {"corpus.train_system2", DP_INT(corpus.train_system2, std::size_t)},
        {"corpus.test_system1", DP_INT(corpus.test_system1, std::size_t)},
        {"corpus.test_system2", DP_INT(corpus.test_system2, std::size_t)},
        {"corpus.max_depth", DP_INT(corpus.max_depth, int)},
        {"corpus.train_seed", DP_INT(corpus.train_seed, std::uint64_t)},
        {"corpus.test_seed", DP_INT(corpus.test_seed, std::uint64_t)},
        {"pretrain.count", DP_INT(pretrain.count, std::size_t)},
        {"pretrain.seed", DP_INT(pretrain.seed, std::uint64_t)},
        {"pretrain.steps", DP_INT(pretrain.steps, std::uint64_t)},
        {"pretrain.batch", DP_INT(pretrain.batch_size, std::size_t)},
        {"pretrain.lr", DP_DOUBLE(pretrain.lr)},
        {"split.mode", {[](const RunConfig& c) { return std::string(split_mode_name(c.split.mode)); },
                        [](RunConfig& c, std::string_view, std::string_view v) { c.split.mode = parse_split_mode(v); }}},
        {"split.voters", {[](const RunConfig& c) { return format_voters(c.split.voters); },
                          [](RunConfig& c, std::string_view, std::string_view v) { c.split.voters = parse_voters(v); }}},
        {"split.seed", DP_INT(split.seed, std::uint64_t)},
        {"importance.max_examples", DP_INT(importance_max_examples, std::size_t)},
        {"partition.theta", DP_DOUBLE(theta)},
        {"partition.alpha", DP_DOUBLE(alpha)},
        {"partition.beta", DP_DOUBLE(beta)},
        {"partition.mask_mode", {[](const RunConfig& c) { return std::string(mask_mode_name(c.mask_mode)); },
                                 [](RunConfig& c, std::string_view, std::string_view v) { c.mask_mode = parse_mask_mode(v); }}},
        {"warmup.steps", DP_INT(warmup.steps, std::uint64_t)},
        {"warmup.batch", DP_INT(warmup.batch_size, std::size_t)},
        {"warmup.lr", DP_DOUBLE(warmup.opt.lr)},
        {"sft.steps", DP_INT(sft.steps, std::uint64_t)},
        {"sft.batch", DP_INT(sft.batch_size, std::size_t)},
        {"sft.lr", DP_DOUBLE(sft.opt.lr)},
        {"sft.weight_decay", DP_DOUBLE(sft.opt.weight_decay)},
        {"sft.grad_clip", DP_DOUBLE(sft.opt.grad_clip)},
        {"grpo.steps", DP_INT(grpo.steps, std::uint64_t)},
        {"grpo.group_size", DP_INT(grpo.group_size, std::size_t)},
        {"grpo.prompts", DP_INT(grpo.prompts_per_step, std::size_t)},
        {"grpo.lr", DP_DOUBLE(grpo.opt.lr)},
        {"grpo.weight_decay", DP_DOUBLE(grpo.opt.weight_decay)},
        {"grpo.grad_clip", DP_DOUBLE(grpo.opt.grad_clip)},
        {"grpo.clip_eps", DP_DOUBLE(grpo.clip_eps)},
        {"grpo.kl_coef", DP_DOUBLE(grpo.kl_coef)},
        {"grpo.temperature", DP_DOUBLE(grpo.temperature)},
        {"grpo.max_new_tokens", DP_INT(grpo.max_new_tokens, int)},
        {"grpo.exact_weight", DP_DOUBLE(grpo.reward.exact_weight)},
        {"grpo.format_weight", DP_DOUBLE(grpo.reward.format_weight)},
        {"eval.max_new_tokens", DP_INT(eval_max_new_tokens, int)},
    };
    return table;
}

#undef DP_INT
#undef DP_DOUBLE

const Field& field(std::string_view key) {
    for (const auto& [name, f] : fields()) {
        if (name == key) return f;
    }
    throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

}  // namespace

RunConfig::RunConfig() {
    model.vocab_size = corpus::tokenizer().vocab_size();
    grpo.group_size = 6;
    grpo.prompts_per_step = 4;
    grpo.steps = 40;
    grpo.opt.lr = 1e-3;
    for (std::uint64_t i = 1; i <= 3; ++i) {
        splitter::VoterProfile v;
        v.voter_id = "v" + std::to_string(i);
        v.strategy = splitter::Strategy::OperatorCount;
        v.threshold = 2.0;
        v.error_rate = 0.1;
        v.seed = i;
        split.voters.push_back(v);
    }
}

void RunConfig::validate() const {
    model.validate();
    if (model.vocab_size != corpus::tokenizer().vocab_size()) {
        throw std::invalid_argument("model vocabulary must match the tokenizer (" +
                                    std::to_string(corpus::tokenizer().vocab_size()) + ")");
    }
    lora.validate();
    if (corpus.facts == 0) throw std::invalid_argument("corpus.facts must be >= 1");
    if (corpus.max_depth < 2) throw std::invalid_argument("corpus.max_depth must be >= 2");
    if (corpus.train_system1 + corpus.train_system2 == 0) throw std::invalid_argument("training corpus is empty");
    if (pretrain.count == 0 || pretrain.batch_size == 0) throw std::invalid_argument("pretrain count and batch must be >= 1");
    if (!(pretrain.lr > 0.0)) throw std::invalid_argument("pretrain.lr must be > 0");
    if (split.mode == SplitMode::Vote) {
        if (split.voters.empty()) throw std::invalid_argument("split.mode = vote needs at least one voter");
        for (const auto& v : split.voters) v.validate();
    }
    for (double v : {theta, alpha, beta}) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("partition theta, alpha and beta must lie in [0, 1]");
    }
    if (warmup.batch_size == 0) throw std::invalid_argument("warmup.batch must be >= 1");
    if (warmup.steps > 0) warmup.opt.validate();
    sft.validate();
    grpo.validate();
    if (eval_max_new_tokens < 1) throw std::invalid_argument("eval.max_new_tokens must be >= 1");
}

void RunConfig::set(std::string_view key, std::string_view value) { field(key).set(*this, key, corpus::trim(value)); }

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& f : fields()) out.push_back(f.first);
        return out;
    }();
    return names;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [name, f] : fields()) out += name + " = " + f.get(*this) + "\n";
    return out;
}

RunConfig RunConfig::from_text(std::string_view text) {
    RunConfig cfg;
    std::map<std::string, std::size_t> seen;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const std::string t = corpus::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = corpus::trim(std::string_view(t).substr(0, eq));
        if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": key '" + key +
                                        "' already set on line " + std::to_string(it->second));
        }
        try {
            cfg.set(key, std::string_view(t).substr(eq + 1));
        } catch (const std::exception& e) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config " + path.string());
    out << to_text();
}

std::uint64_t RunConfig::lora_seed() const { return derive_seed(seed, 0x10); }
std::uint64_t RunConfig::warmup_seed() const { return derive_seed(seed, 0x11); }
std::uint64_t RunConfig::sft_seed() const { return derive_seed(seed, 0x12); }
std::uint64_t RunConfig::grpo_seed() const { return derive_seed(seed, 0x13); }
std::uint64_t RunConfig::mask_seed(int stage) const { return derive_seed(seed, 0x20 + static_cast<std::uint64_t>(stage)); }

bool operator==(const RunConfig& a, const RunConfig& b) { return a.to_text() == b.to_text(); }

}  // namespace dualpeft::experiment
