// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "dualpeft/splitter.hpp"

using namespace dualpeft;
using namespace dualpeft::splitter;

namespace {

std::vector<TaskExample> mixed_corpus(std::uint64_t seed, std::size_t n = 60) {
    const corpus::FactTable facts(12, seed);
    auto items = corpus::gen_system1(n, seed, facts);
    const auto s2 = corpus::gen_system2(n, 4, seed + 1);
    items.insert(items.end(), s2.begin(), s2.end());
    return items;
}

VoterProfile profile(std::string id, Strategy s, double error, std::uint64_t seed) {
    VoterProfile p;
    p.voter_id = std::move(id);
    p.strategy = s;
    p.error_rate = error;
    p.seed = seed;
    return p;
}

std::vector<Verdict> verdicts(std::initializer_list<int> labels) {
    std::vector<Verdict> out;
    int i = 0;
    for (int l : labels) out.push_back({"ex", "v" + std::to_string(i++), l == 1 ? System::One : System::Two});
    return out;
}

double gold_agreement(const SplitResult& r, const std::vector<TaskExample>& items) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < items.size(); ++i) ok += r.assigned[i] == items[i].gold_system;
    return static_cast<double>(ok) / static_cast<double>(items.size());
}

}  // namespace

TEST_CASE("rule voters") {
    const auto easy = corpus::make_example("a", "3+4=", "7", System::One);
    const auto hard = corpus::make_example("b", "((3+4)*2)-5=>", "7 14 => 9", System::Two);
    const auto op = profile("op", Strategy::OperatorCount, 0.0, 1);
    CHECK(operator_count(easy.prompt) == 1);
    CHECK(operator_count(hard.prompt) == 3);
    CHECK(classify(op, easy).label == System::One);
    CHECK(classify(op, hard).label == System::Two);
    CHECK(classify(profile("m", Strategy::MarkerPresence, 0.0, 1), hard).label == System::Two);
    CHECK(classify(profile("m", Strategy::MarkerPresence, 0.0, 1), easy).label == System::One);
    auto len = profile("l", Strategy::PromptLength, 0.0, 1);
    len.threshold = 10;
    CHECK(classify(len, easy).label == System::One);
    CHECK(classify(len, hard).label == System::Two);
}

TEST_CASE("error flips are seeded and roughly at the configured rate") {
    const auto items = mixed_corpus(3, 500);
    const Voter v(profile("noisy", Strategy::OperatorCount, 0.3, 77));
    const Voter clean(profile("clean", Strategy::OperatorCount, 0.0, 77));
    std::size_t flips = 0;
    for (const auto& ex : items) {
        const auto a = v.classify(ex);
        CHECK(a.label == v.classify(ex).label);
        flips += a.label != clean.classify(ex).label;
    }
    const double rate = static_cast<double>(flips) / static_cast<double>(items.size());
    CHECK(rate > 0.25);
    CHECK(rate < 0.35);
}

TEST_CASE("profile validation and text form") {
    CHECK_THROWS(Voter(profile("x", Strategy::OperatorCount, 0.5, 1)));
    CHECK_THROWS(Voter(profile("x", Strategy::OperatorCount, -0.1, 1)));
    CHECK_THROWS(Voter(profile("x", Strategy::ExternalFile, 0.0, 1)));
    const auto p = parse_voter("prompt-length:0.125:9:14", "v0");
    CHECK(p.strategy == Strategy::PromptLength);
    CHECK(p.error_rate == 0.125);
    CHECK(p.seed == 9);
    CHECK(p.threshold == 14.0);
    const auto q = parse_voter(format_voter(p), "v0");
    CHECK(q.threshold == p.threshold);
    CHECK(q.error_rate == p.error_rate);
    CHECK(parse_voter("external-file:0:1:/tmp/a:b.tsv", "v").verdict_file == "/tmp/a:b.tsv");
    CHECK_THROWS(parse_voter("operator-count:0.1", "v"));
    CHECK_THROWS(parse_voter("coin:0.1:1", "v"));
}

TEST_CASE("vote") {
    CHECK(vote(verdicts({1, 1, 2}), 3) == System::One);
    CHECK(vote(verdicts({2, 2, 2, 1, 1}), 5) == System::Two);
    CHECK(vote(verdicts({1, 1, 2, 2}), 4) == System::Two);
    CHECK(vote(verdicts({1}), 1) == System::One);
    CHECK_THROWS(vote(verdicts({1, 1}), 3));
    CHECK_THROWS(vote(verdicts({}), 0));
    auto v = verdicts({1, 2, 1, 1, 2});
    const System expect = vote(v, 5);
    std::sort(v.begin(), v.end(), [](const Verdict& a, const Verdict& b) { return a.voter_id < b.voter_id; });
    do {
        CHECK(vote(v, 5) == expect);
    } while (std::next_permutation(v.begin(), v.end(),
                                   [](const Verdict& a, const Verdict& b) { return a.voter_id < b.voter_id; }));
}

TEST_CASE("split is a partition and zero-error voters recover the gold labels") {
    const auto items = mixed_corpus(11);
    std::vector<VoterProfile> profiles = {profile("a", Strategy::OperatorCount, 0.0, 1),
                                          profile("b", Strategy::MarkerPresence, 0.0, 2),
                                          profile("c", Strategy::OperatorCount, 0.0, 3)};
    const auto r = split_corpus(items, profiles);
    CHECK(r.d1.size() + r.d2.size() == items.size());
    std::set<std::string> ids1, ids2;
    for (const auto& ex : r.d1) ids1.insert(ex.id);
    for (const auto& ex : r.d2) ids2.insert(ex.id);
    CHECK(ids1.size() == r.d1.size());
    for (const auto& id : ids1) CHECK(ids2.count(id) == 0);
    CHECK(gold_agreement(r, items) == 1.0);
    CHECK(r.verdicts.size() == 3 * items.size());
    for (const auto& t : r.tallies) CHECK(t.system1 + t.system2 == 3);

    const std::vector<VoterProfile> single = {profile("noisy", Strategy::OperatorCount, 0.2, 5)};
    const auto s = split_corpus(items, single);
    const Voter v(single[0]);
    for (std::size_t i = 0; i < items.size(); ++i) CHECK(s.assigned[i] == v.classify(items[i]).label);
    CHECK_THROWS(split_corpus(items, std::vector<VoterProfile>{}));
}

TEST_CASE("external verdict files") {
    const auto dir = std::filesystem::temp_directory_path() / "dualpeft_test_splitter";
    std::filesystem::create_directories(dir);
    const auto items = mixed_corpus(2, 5);
    std::vector<Verdict> vs;
    for (const auto& ex : items) vs.push_back({ex.id, "teacher", ex.gold_system});
    vs.push_back({items[0].id, "other", System::Two});
    write_verdicts(dir / "v.tsv", vs);
    CHECK(read_verdicts(dir / "v.tsv").size() == vs.size());

    auto p = profile("teacher", Strategy::ExternalFile, 0.0, 0);
    p.verdict_file = dir / "v.tsv";
    const auto r = split_corpus(items, std::vector<VoterProfile>{p});
    CHECK(gold_agreement(r, items) == 1.0);

    vs.pop_back();
    vs.pop_back();
    write_verdicts(dir / "short.tsv", vs);
    p.verdict_file = dir / "short.tsv";
    CHECK_THROWS_WITH(split_corpus(items, std::vector<VoterProfile>{p}), doctest::Contains(items.back().id.c_str()));

    vs.push_back(vs.front());
    write_verdicts(dir / "dup.tsv", vs);
    CHECK_THROWS(read_verdicts(dir / "dup.tsv"));
}

TEST_CASE("five noisy voters beat one, median over 20 trials") {
    const auto items = mixed_corpus(42, 100);
    for (double e : {0.1, 0.2, 0.3, 0.4}) {
        std::vector<double> single, ensemble;
        for (std::uint64_t trial = 0; trial < 20; ++trial) {
            std::vector<VoterProfile> five;
            for (std::uint64_t k = 0; k < 5; ++k) {
                five.push_back(profile("v" + std::to_string(k), Strategy::OperatorCount, e, 1000 * trial + k));
            }
            single.push_back(gold_agreement(split_corpus(items, std::span(five).first(1)), items));
            ensemble.push_back(gold_agreement(split_corpus(items, five), items));
        }
        std::nth_element(single.begin(), single.begin() + 10, single.end());
        std::nth_element(ensemble.begin(), ensemble.begin() + 10, ensemble.end());
        CHECK(ensemble[10] > single[10]);
    }
}

TEST_CASE("role-play template") {
    const auto prompt = role_play_prompt("a small model", "((3+4)*2)-5=>");
    CHECK(prompt.find("a small model") != std::string::npos);
    CHECK(prompt.find("((3+4)*2)-5=>") != std::string::npos);
    CHECK(parse_role_play_reply("I think System 2.") == System::Two);
    CHECK(parse_role_play_reply("System 1") == System::One);
    CHECK_THROWS(parse_role_play_reply("unsure"));
}

TEST_CASE("random split baseline is seeded") {
    const auto items = mixed_corpus(5);
    const auto a = split_random(items, 3);
    CHECK(a.assigned == split_random(items, 3).assigned);
    CHECK(a.d1.size() + a.d2.size() == items.size());
    CHECK(a.d1.size() > 20);
    CHECK(a.d2.size() > 20);
}
