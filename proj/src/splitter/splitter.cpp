// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include "dualpeft/splitter.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dualpeft/rng.hpp"

namespace dualpeft::splitter {

std::string_view strategy_name(Strategy s) {
    switch (s) {
        case Strategy::OperatorCount: return "operator-count";
        case Strategy::PromptLength: return "prompt-length";
        case Strategy::MarkerPresence: return "marker-presence";
        case Strategy::ExternalFile: return "external-file";
    }
    return "?";
}

Strategy parse_strategy(std::string_view text) {
    for (Strategy s : {Strategy::OperatorCount, Strategy::PromptLength, Strategy::MarkerPresence, Strategy::ExternalFile}) {
        if (text == strategy_name(s)) return s;
    }
    throw std::invalid_argument("unknown voter strategy '" + std::string(text) + "'");
}

void VerdictTable::add(const Verdict& v) {
    if (!table_.emplace(std::make_pair(v.example_id, v.voter_id), v).second) {
        throw std::invalid_argument("duplicate verdict for example " + v.example_id + " from voter " + v.voter_id);
    }
}

const Verdict* VerdictTable::find(const std::string& example_id, const std::string& voter_id) const {
    auto it = table_.find({example_id, voter_id});
    return it == table_.end() ? nullptr : &it->second;
}

std::vector<Verdict> VerdictTable::all() const {
    std::vector<Verdict> out;
    for (const auto& [k, v] : table_) out.push_back(v);
    return out;
}

void write_verdicts(const std::filesystem::path& path, std::span<const Verdict> verdicts) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (const auto& v : verdicts) out << v.example_id << '\t' << v.voter_id << '\t' << corpus::system_name(v.label) << '\n';
}

VerdictTable read_verdicts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open verdict file " + path.string());
    VerdictTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream is(line);
        Verdict v;
        std::string label, extra;
        if (!std::getline(is, v.example_id, '\t') || !std::getline(is, v.voter_id, '\t') || !std::getline(is, label, '\t') ||
            std::getline(is, extra, '\t')) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated columns");
        }
        v.label = corpus::parse_system(corpus::trim(label));
        if (v.label == System::Unknown) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": label must be 1 or 2");
        }
        table.add(v);
    }
    return table;
}

void VoterProfile::validate() const {
    if (!(error_rate >= 0.0 && error_rate < 0.5)) {
        throw std::invalid_argument("voter " + voter_id + ": error_rate must be in [0, 0.5)");
    }
    if (strategy == Strategy::ExternalFile && verdict_file.empty()) {
        throw std::invalid_argument("voter " + voter_id + ": external-file strategy needs a verdict file");
    }
}

VoterProfile parse_voter(std::string_view text, std::string voter_id) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    // The fourth field may itself contain ':' (paths), so split at most 3 times.
    for (int i = 0; i < 3; ++i) {
        const auto colon = text.find(':', pos);
        if (colon == std::string_view::npos) break;
        parts.emplace_back(text.substr(pos, colon - pos));
        pos = colon + 1;
    }
    parts.emplace_back(text.substr(pos));
    if (parts.size() < 3) throw std::invalid_argument("voter spec '" + std::string(text) + "' needs strategy:error_rate:seed");
    VoterProfile p;
    p.voter_id = std::move(voter_id);
    p.strategy = parse_strategy(parts[0]);
    p.error_rate = std::stod(parts[1]);
    p.seed = std::stoull(parts[2]);
    if (p.strategy == Strategy::PromptLength) p.threshold = 10.0;
    if (parts.size() == 4) {
        if (p.strategy == Strategy::ExternalFile) {
            p.verdict_file = parts[3];
        } else {
            p.threshold = std::stod(parts[3]);
        }
    }
    p.validate();
    return p;
}

std::string format_voter(const VoterProfile& p) {
    std::ostringstream os;
    os.precision(17);
    os << strategy_name(p.strategy) << ':' << p.error_rate << ':' << p.seed << ':';
    if (p.strategy == Strategy::ExternalFile) {
        os << p.verdict_file.string();
    } else {
        os << p.threshold;
    }
    return os.str();
}

std::size_t operator_count(std::string_view prompt) {
    std::size_t n = 0;
    for (char c : prompt) n += (c == '+' || c == '-' || c == '*') ? 1 : 0;
    return n;
}

Voter::Voter(VoterProfile profile) : profile_(std::move(profile)) {
    profile_.validate();
    if (profile_.strategy == Strategy::ExternalFile) {
        external_ = std::make_shared<VerdictTable>(read_verdicts(profile_.verdict_file));
    }
}

Verdict Voter::classify(const TaskExample& example) const {
    System label = System::One;
    switch (profile_.strategy) {
        case Strategy::OperatorCount:
            label = static_cast<double>(operator_count(example.prompt)) >= profile_.threshold ? System::Two : System::One;
            break;
        case Strategy::PromptLength:
            label = static_cast<double>(example.prompt.size()) >= profile_.threshold ? System::Two : System::One;
            break;
        case Strategy::MarkerPresence:
            label = example.prompt.find(corpus::Tokenizer::kSepText) != std::string::npos ? System::Two : System::One;
            break;
        case Strategy::ExternalFile: {
            const Verdict* v = external_->find(example.id, profile_.voter_id);
            if (!v) {
                throw std::runtime_error("voter " + profile_.voter_id + ": no external verdict for example " + example.id);
            }
            label = v->label;
            break;
        }
    }
    if (profile_.error_rate > 0.0) {
        Rng rng(derive_seed(profile_.seed, fnv1a(example.id)));
        if (rng.uniform() < profile_.error_rate) label = label == System::One ? System::Two : System::One;
    }
    return {example.id, profile_.voter_id, label};
}

Verdict classify(const VoterProfile& profile, const TaskExample& example) { return Voter(profile).classify(example); }

System vote(std::span<const Verdict> verdicts, std::size_t n_voters) {
    if (n_voters == 0) throw std::invalid_argument("vote: no voters");
    if (verdicts.size() != n_voters) {
        throw std::invalid_argument("vote: expected " + std::to_string(n_voters) + " verdicts, got " +
                                    std::to_string(verdicts.size()));
    }
    std::size_t ones = 0, twos = 0;
    for (const auto& v : verdicts) {
        if (v.example_id != verdicts[0].example_id) throw std::invalid_argument("vote: verdicts span several examples");
        if (v.label == System::One) ++ones;
        else if (v.label == System::Two) ++twos;
        else throw std::invalid_argument("vote: verdict without a label from voter " + v.voter_id);
    }
    return ones > twos ? System::One : System::Two;
}

SplitResult split_corpus(std::span<const TaskExample> examples, std::span<const VoterProfile> profiles) {
    if (profiles.empty()) throw std::invalid_argument("split_corpus: at least one voter profile is required");
    std::vector<Voter> voters;
    voters.reserve(profiles.size());
    for (const auto& p : profiles) voters.emplace_back(p);
    SplitResult r;
    std::vector<Verdict> row(voters.size());
    for (const auto& ex : examples) {
        Tally t;
        for (std::size_t i = 0; i < voters.size(); ++i) {
            row[i] = voters[i].classify(ex);
            (row[i].label == System::One ? t.system1 : t.system2)++;
            r.verdicts.push_back(row[i]);
        }
        const System s = vote(row, voters.size());
        r.assigned.push_back(s);
        r.tallies.push_back(t);
        (s == System::One ? r.d1 : r.d2).push_back(ex);
    }
    return r;
}

SplitResult split_random(std::span<const TaskExample> examples, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x4A4D));
    SplitResult r;
    for (const auto& ex : examples) {
        const System s = rng.bernoulli(0.5) ? System::One : System::Two;
        r.assigned.push_back(s);
        r.tallies.push_back(s == System::One ? Tally{1, 0} : Tally{0, 1});
        r.verdicts.push_back({ex.id, "random", s});
        (s == System::One ? r.d1 : r.d2).push_back(ex);
    }
    return r;
}

std::string role_play_prompt(std::string_view target_model, std::string_view question) {
    std::ostringstream os;
    os << "You are now acting as " << target_model
       << ". Answer as that model would, judging by its own ability rather than yours.\n"
       << "Decide whether the question below can be answered directly in a single step (System 1: fast, intuitive) "
       << "or needs multi-step reasoning (System 2: slow, deliberate).\n"
       << "Reply with exactly one of: System 1, System 2.\n\n"
       << "Question: " << question << "\n";
    return os.str();
}

System parse_role_play_reply(std::string_view reply) {
    const bool one = reply.find("System 1") != std::string_view::npos;
    const bool two = reply.find("System 2") != std::string_view::npos;
    if (one == two) throw std::invalid_argument("role-play reply names neither or both systems");
    return one ? System::One : System::Two;
}

}  // namespace dualpeft::splitter
