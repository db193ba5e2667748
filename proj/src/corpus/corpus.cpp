// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dualpeft/corpus.hpp"
#include "dualpeft/rng.hpp"

namespace dualpeft::corpus {

std::string_view system_name(System s) {
    switch (s) {
        case System::One: return "1";
        case System::Two: return "2";
        case System::Unknown: return "unknown";
    }
    return "unknown";
}

System parse_system(std::string_view text) {
    if (text == "1") return System::One;
    if (text == "2") return System::Two;
    if (text == "unknown" || text == "0") return System::Unknown;
    throw std::invalid_argument("bad system label '" + std::string(text) + "'");
}

Tokenizer::Tokenizer() : chars_("0123456789+-*()=: Kabcdefghijklmnopqrstuvwxyz") {
    std::fill(std::begin(lookup_), std::end(lookup_), -1);
    for (std::size_t i = 0; i < chars_.size(); ++i) lookup_[static_cast<unsigned char>(chars_[i])] = static_cast<int>(i) + 3;
}

bool Tokenizer::in_vocab(std::string_view text) const {
    try {
        encode(text);
        return true;
    } catch (const std::invalid_argument&) {
        return false;
    }
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text.compare(i, kSepText.size(), kSepText) == 0) {
            out.push_back(kSep);
            ++i;
            continue;
        }
        const int id = lookup_[static_cast<unsigned char>(text[i])];
        if (id < 0) {
            throw std::invalid_argument("character '" + std::string(1, text[i]) + "' at offset " + std::to_string(i) +
                                        " is not in the vocabulary");
        }
        out.push_back(id);
    }
    return out;
}

std::string Tokenizer::decode(std::span<const int> tokens) const {
    std::string out;
    for (int t : tokens) {
        if (t == kBos || t == kEos) continue;
        if (t == kSep) {
            out += kSepText;
        } else if (t >= 3 && t < vocab_size()) {
            out += chars_[static_cast<std::size_t>(t - 3)];
        } else {
            throw std::out_of_range("token id " + std::to_string(t) + " outside the vocabulary");
        }
    }
    return out;
}

const Tokenizer& tokenizer() {
    static const Tokenizer tok;
    return tok;
}

std::vector<int> TaskExample::sequence() const {
    std::vector<int> s = prompt_tokens;
    s.insert(s.end(), answer_tokens.begin(), answer_tokens.end());
    return s;
}

TaskExample make_example(std::string id, std::string prompt, std::string answer, System gold) {
    if (answer.empty()) throw std::invalid_argument("example " + id + " has an empty answer");
    TaskExample ex;
    ex.prompt_tokens.push_back(Tokenizer::kBos);
    const auto p = tokenizer().encode(prompt);
    ex.prompt_tokens.insert(ex.prompt_tokens.end(), p.begin(), p.end());
    ex.answer_tokens = tokenizer().encode(answer);
    ex.answer_tokens.push_back(Tokenizer::kEos);
    ex.loss_mask.assign(ex.prompt_tokens.size(), 0);
    ex.loss_mask.resize(ex.prompt_tokens.size() + ex.answer_tokens.size(), 1);
    ex.id = std::move(id);
    ex.prompt = std::move(prompt);
    ex.answer = std::move(answer);
    ex.gold_system = gold;
    return ex;
}

namespace {

std::string two_digits(std::size_t v) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%02zu", v);
    return buf;
}

constexpr char kOps[3] = {'+', '-', '*'};

long apply(long a, char op, long b) {
    switch (op) {
        case '+': return a + b;
        case '-': return a - b;
        default: return a * b;
    }
}

}  // namespace

FactTable::FactTable(std::size_t size, std::uint64_t seed) {
    if (size == 0 || size > 100) throw std::invalid_argument("fact table size must be in 1..100");
    Rng rng(derive_seed(seed, 0xFAC7));
    for (std::size_t i = 0; i < size; ++i) {
        entries_.emplace_back("K" + two_digits(i), std::to_string(10 + rng.below(90)));
    }
}

std::optional<std::string> FactTable::lookup(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return v;
    }
    return std::nullopt;
}

std::vector<TaskExample> gen_system1(std::size_t count, std::uint64_t seed, const FactTable& facts,
                                     double arithmetic_fraction) {
    if (count < 1) throw std::invalid_argument("gen_system1: count must be >= 1");
    Rng rng(derive_seed(seed, 0x5151));
    std::vector<TaskExample> out;
    out.reserve(count);
    // Fact keys are dealt from reshuffled decks, so any corpus with at least
    // facts.size() fact items asks about every key.
    std::vector<std::size_t> deck(facts.size());
    std::size_t dealt = deck.size();
    for (std::size_t i = 0; i < count; ++i) {
        const std::string id = "s1-" + std::to_string(seed) + "-" + std::to_string(i);
        if (rng.uniform() < arithmetic_fraction) {
            const long a = static_cast<long>(rng.below(10));
            const long b = static_cast<long>(rng.below(10));
            const char op = kOps[rng.below(3)];
            out.push_back(make_example(id, std::to_string(a) + op + std::to_string(b) + "=",
                                       std::to_string(apply(a, op, b)), System::One));
        } else {
            if (dealt == deck.size()) {
                std::iota(deck.begin(), deck.end(), std::size_t{0});
                for (std::size_t j = deck.size(); j > 1; --j) std::swap(deck[j - 1], deck[rng.below(j)]);
                dealt = 0;
            }
            const std::size_t k = deck[dealt++];
            out.push_back(make_example(id, "capof:" + facts.key(k) + "=", facts.value(k), System::One));
        }
    }
    return out;
}

std::vector<TaskExample> gen_system2(std::size_t count, int max_depth, std::uint64_t seed) {
    if (max_depth < 2) throw std::invalid_argument("gen_system2: max_depth must be >= 2");
    if (max_depth > 4) throw std::invalid_argument("gen_system2: max_depth above 4 can exceed four-digit results");
    Rng rng(derive_seed(seed, 0x5252));
    std::vector<TaskExample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int depth = 2 + static_cast<int>(i % static_cast<std::size_t>(max_depth - 1));
        long value = 1 + static_cast<long>(rng.below(9));
        std::string expr = std::to_string(value);
        std::vector<long> steps;
        for (int d = 0; d < depth; ++d) {
            const char op = kOps[rng.below(3)];
            const long operand = 1 + static_cast<long>(rng.below(9));
            value = apply(value, op, operand);
            expr += op + std::to_string(operand);
            if (d + 1 < depth) expr = "(" + expr + ")";
            steps.push_back(value);
        }
        std::string answer;
        for (std::size_t s = 0; s + 1 < steps.size(); ++s) answer += std::to_string(steps[s]) + " ";
        answer += "=> " + std::to_string(steps.back());
        out.push_back(make_example("s2-" + std::to_string(seed) + "-" + std::to_string(i), expr + "=>", answer,
                                   System::Two));
    }
    return out;
}

PretrainCounts pretrain_counts(std::size_t count, const PretrainMix& mix) {
    if (mix.system1 < 0 || mix.system2 < 0 || mix.system1 + mix.system2 > 1.0) {
        throw std::invalid_argument("pretrain mixture fractions must be >= 0 and sum to <= 1");
    }
    PretrainCounts c;
    c.system1 = static_cast<std::size_t>(std::llround(static_cast<double>(count) * mix.system1));
    c.system2 = std::min(count - c.system1, static_cast<std::size_t>(std::llround(static_cast<double>(count) * mix.system2)));
    c.random = count - c.system1 - c.system2;
    return c;
}

std::vector<std::vector<int>> gen_pretrain(std::size_t count, std::uint64_t seed, const PretrainMix& mix) {
    const PretrainCounts c = pretrain_counts(count, mix);
    std::vector<std::vector<int>> out;
    out.reserve(count);
    const FactTable pretrain_facts(mix.fact_count, derive_seed(seed, 0x9E7));
    if (c.system1) {
        for (const auto& ex : gen_system1(c.system1, derive_seed(seed, 1), pretrain_facts)) out.push_back(ex.sequence());
    }
    if (c.system2) {
        for (const auto& ex : gen_system2(c.system2, mix.max_depth, derive_seed(seed, 2))) out.push_back(ex.sequence());
    }
    Rng rng(derive_seed(seed, 3));
    const int vocab = tokenizer().vocab_size();
    for (std::size_t i = 0; i < c.random; ++i) {
        std::vector<int> s = {Tokenizer::kBos};
        const std::size_t len = 3 + rng.below(10);
        for (std::size_t k = 0; k < len; ++k) s.push_back(3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - 3))));
        s.push_back(Tokenizer::kEos);
        out.push_back(std::move(s));
    }
    for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.below(i)]);
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::optional<std::string> extract_answer(std::string_view text) {
    const auto pos = text.rfind(Tokenizer::kSepText);
    if (pos == std::string_view::npos) return std::nullopt;
    return trim(text.substr(pos + Tokenizer::kSepText.size()));
}

std::optional<std::string> extract_answer(std::span<const int> tokens) {
    return extract_answer(tokenizer().decode(tokens));
}

std::string final_answer(std::string_view text) {
    if (auto a = extract_answer(text)) return *a;
    return trim(text);
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
        const auto tab = line.find('\t', pos);
        cols.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
        if (tab == std::string::npos) break;
        pos = tab + 1;
    }
    return cols;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return out;
}

}  // namespace

void write_corpus(const std::filesystem::path& path, std::span<const TaskExample> examples) {
    auto out = open_out(path);
    for (const auto& ex : examples) {
        out << ex.id << '\t' << system_name(ex.gold_system) << '\t' << ex.prompt << '\t' << ex.answer << '\n';
    }
}

std::vector<TaskExample> read_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
    std::vector<TaskExample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cols = split_tabs(line);
        if (cols.size() < 4) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated columns");
        }
        out.push_back(make_example(cols[0], cols[2], cols[3], parse_system(cols[1])));
    }
    return out;
}

void write_split(const std::filesystem::path& path, std::span<const TaskExample> examples,
                 std::span<const System> assigned) {
    if (examples.size() != assigned.size()) throw std::invalid_argument("write_split: label count mismatch");
    auto out = open_out(path);
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        out << ex.id << '\t' << system_name(ex.gold_system) << '\t' << ex.prompt << '\t' << ex.answer << '\t'
            << system_name(assigned[i]) << '\n';
    }
}

std::vector<AssignedExample> read_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open split file " + path.string());
    std::vector<AssignedExample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cols = split_tabs(line);
        if (cols.size() != 5) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 5 tab-separated columns");
        }
        out.push_back({make_example(cols[0], cols[2], cols[3], parse_system(cols[1])), parse_system(cols[4])});
    }
    return out;
}

}  // namespace dualpeft::corpus
