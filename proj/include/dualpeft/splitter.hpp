// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// Ensemble classification of examples into System 1 / System 2. Each voter
// applies a rule (or reads an external verdict file) and flips its label with
// a seeded per-example probability, standing in for disagreeing teacher
// models; labels are then aggregated by majority vote.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dualpeft/corpus.hpp"

namespace dualpeft::splitter {

using corpus::System;
using corpus::TaskExample;

enum class Strategy : std::uint8_t { OperatorCount, PromptLength, MarkerPresence, ExternalFile };
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view text);

struct Verdict {
    std::string example_id;
    std::string voter_id;
    System label = System::Unknown;
};

// Verdicts keyed by (example_id, voter_id); at most one per pair.
class VerdictTable {
public:
    void add(const Verdict& v);
    const Verdict* find(const std::string& example_id, const std::string& voter_id) const;
    std::size_t size() const { return table_.size(); }
    std::vector<Verdict> all() const;

private:
    std::map<std::pair<std::string, std::string>, Verdict> table_;
};

// One line per verdict: example_id, voter_id, label (1 or 2), tab separated.
void write_verdicts(const std::filesystem::path& path, std::span<const Verdict> verdicts);
VerdictTable read_verdicts(const std::filesystem::path& path);

struct VoterProfile {
    std::string voter_id;
    Strategy strategy = Strategy::OperatorCount;
    // OperatorCount: minimum operator count labelled System 2.
    // PromptLength: minimum prompt length (characters) labelled System 2.
    double threshold = 2.0;
    // ExternalFile: verdict file; lines for other voter ids are ignored.
    std::filesystem::path verdict_file;
    double error_rate = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Compact text form "strategy:error_rate:seed[:param]" where param is the
// threshold, or the verdict file path for external-file voters.
VoterProfile parse_voter(std::string_view text, std::string voter_id);
std::string format_voter(const VoterProfile& p);

class Voter {
public:
    explicit Voter(VoterProfile profile);
    const VoterProfile& profile() const { return profile_; }
    // Deterministic in (profile seed, example id).
    Verdict classify(const TaskExample& example) const;

private:
    VoterProfile profile_;
    std::shared_ptr<const VerdictTable> external_;
};

Verdict classify(const VoterProfile& profile, const TaskExample& example);

std::size_t operator_count(std::string_view prompt);

// Strict majority; an exact tie goes to System 2.
System vote(std::span<const Verdict> verdicts, std::size_t n_voters);

struct Tally {
    std::size_t system1 = 0;
    std::size_t system2 = 0;
};

struct SplitResult {
    std::vector<TaskExample> d1;
    std::vector<TaskExample> d2;
    std::vector<System> assigned;  // parallel to the input corpus
    std::vector<Tally> tallies;    // parallel to the input corpus
    std::vector<Verdict> verdicts;
};

SplitResult split_corpus(std::span<const TaskExample> examples, std::span<const VoterProfile> profiles);

// Content-blind baseline: each example goes to System 1 with probability 1/2.
SplitResult split_random(std::span<const TaskExample> examples, std::uint64_t seed);

// Role-play classification instruction for an external teacher model. The
// reply is parsed by parse_role_play_reply.
std::string role_play_prompt(std::string_view target_model, std::string_view question);
System parse_role_play_reply(std::string_view reply);

}  // namespace dualpeft::splitter
