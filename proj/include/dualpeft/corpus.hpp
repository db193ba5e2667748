// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// Synthetic task corpora: single-step (System 1) fact recall and digit
// arithmetic, multi-step (System 2) chained arithmetic with step traces, a
// pretraining mixture, and the character-level tokenizer they share.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dualpeft::corpus {

enum class System : std::uint8_t { Unknown = 0, One = 1, Two = 2 };
std::string_view system_name(System s);
System parse_system(std::string_view text);

// Fixed character vocabulary. Ids 0..2 are BOS, EOS and the answer separator,
// which is spelled "=>" in text.
class Tokenizer {
public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kSep = 2;
    static constexpr std::string_view kSepText = "=>";

    Tokenizer();

    int vocab_size() const { return static_cast<int>(chars_.size()) + 3; }
    bool in_vocab(std::string_view text) const;
    // Throws std::invalid_argument naming the first character outside the vocabulary.
    std::vector<int> encode(std::string_view text) const;
    // BOS and EOS render as nothing.
    std::string decode(std::span<const int> tokens) const;

private:
    std::string chars_;
    int lookup_[256];
};

const Tokenizer& tokenizer();

struct TaskExample {
    std::string id;
    std::string prompt;
    std::string answer;
    std::vector<int> prompt_tokens;  // BOS + prompt
    std::vector<int> answer_tokens;  // answer + EOS
    System gold_system = System::Unknown;
    std::vector<std::uint8_t> loss_mask;  // one entry per sequence position

    std::vector<int> sequence() const;
};

// Builds token fields and the loss mask from the text fields.
TaskExample make_example(std::string id, std::string prompt, std::string answer, System gold);

class FactTable {
public:
    FactTable(std::size_t size, std::uint64_t seed);
    std::size_t size() const { return entries_.size(); }
    const std::string& key(std::size_t i) const { return entries_[i].first; }
    const std::string& value(std::size_t i) const { return entries_[i].second; }
    std::optional<std::string> lookup(std::string_view key) const;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Fact prompts read "capof:<key>=", arithmetic prompts "<a><op><b>=". Fact
// keys cycle through shuffled passes over the table, so every key appears once
// the corpus holds facts.size() fact items.
std::vector<TaskExample> gen_system1(std::size_t count, std::uint64_t seed, const FactTable& facts,
                                     double arithmetic_fraction = 0.5);

// Left-nested chains of 2..max_depth operations, e.g. "((3+4)*2)-5=>" with
// reference answer "7 14 => 9". Depths cycle so every depth appears once the
// count reaches max_depth - 1.
std::vector<TaskExample> gen_system2(std::size_t count, int max_depth, std::uint64_t seed);

struct PretrainMix {
    double system1 = 0.4;
    double system2 = 0.4;  // remainder is random in-vocabulary strings
    int max_depth = 3;
    std::size_t fact_count = 12;
};

struct PretrainCounts {
    std::size_t system1 = 0, system2 = 0, random = 0;
};
PretrainCounts pretrain_counts(std::size_t count, const PretrainMix& mix);

// Full token sequences (BOS ... EOS), shuffled. Fact items come from a table
// seeded independently of the fine-tuning table.
std::vector<std::vector<int>> gen_pretrain(std::size_t count, std::uint64_t seed, const PretrainMix& mix = {});

// Text after the last "=>" marker, trimmed; nullopt without a marker.
std::optional<std::string> extract_answer(std::string_view text);
std::optional<std::string> extract_answer(std::span<const int> tokens);
// extract_answer when a marker is present, else the whole trimmed text.
std::string final_answer(std::string_view text);

std::string trim(std::string_view s);

// Corpus file: one record per line, tab separated: id, gold_system, prompt,
// answer. Split files append an assigned_system column.
void write_corpus(const std::filesystem::path& path, std::span<const TaskExample> examples);
std::vector<TaskExample> read_corpus(const std::filesystem::path& path);

struct AssignedExample {
    TaskExample example;
    System assigned = System::Unknown;
};
void write_split(const std::filesystem::path& path, std::span<const TaskExample> examples,
                 std::span<const System> assigned);
std::vector<AssignedExample> read_split(const std::filesystem::path& path);

}  // namespace dualpeft::corpus
