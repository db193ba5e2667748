// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dualpeft/binio.hpp"
#include "dualpeft/importance.hpp"
#include "dualpeft/objective.hpp"
#include "fd_oracle.hpp"

using namespace dualpeft;
using namespace dualpeft::importance;

namespace {

struct Fixture {
    model::Model model;
    model::AdapterSet adapters;
    std::vector<corpus::TaskExample> data;
};

Fixture make_fixture(std::uint64_t seed) {
    model::ModelConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ff = 12;
    c.vocab_size = corpus::tokenizer().vocab_size();
    c.max_seq_len = 24;
    Fixture f{model::init_model(c, seed), {}, {}};
    model::LoraConfig l;
    l.rank = 1;
    l.sites = model::SiteSet::parse("V,Up");
    l.init_mode = model::InitMode::SymmetricSmall;
    f.adapters = model::attach_lora(f.model, l, seed + 1);
    Rng rng(seed + 2);
    for (double& v : f.adapters.values()) v = rng.normal(0.0, 0.3);
    f.data = corpus::gen_system2(3, 2, seed);
    const auto s1 = corpus::gen_system1(2, seed, corpus::FactTable(4, seed));
    f.data.insert(f.data.end(), s1.begin(), s1.end());
    return f;
}

// Per-example gradients by central differences, reduced independently.
std::pair<std::vector<double>, std::vector<double>> fd_moments(const Fixture& f) {
    const std::size_t p = f.adapters.size();
    std::vector<double> g(p, 0.0), fisher(p, 0.0);
    for (const auto& ex : f.data) {
        const auto s = train::shift(ex);
        auto loss = [&](std::span<const double> v) {
            model::AdapterSet a = f.adapters;
            std::copy(v.begin(), v.end(), a.values().begin());
            return train::loss_value(f.model, &a, s);
        };
        const auto grad =
            fd::central_gradient(std::vector<double>(f.adapters.values().begin(), f.adapters.values().end()), loss);
        for (std::size_t j = 0; j < p; ++j) {
            g[j] += grad[j] / static_cast<double>(f.data.size());
            fisher[j] += grad[j] * grad[j] / static_cast<double>(f.data.size());
        }
    }
    return {g, fisher};
}

}  // namespace

TEST_CASE("score_param") {
    CHECK(score_param(2.0, 0.5, 0.1) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(score_param(0.0, 3.0, 7.0) == 0.0);
    CHECK(score_param(3.0, 0.0, 0.2) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK_THROWS_AS(score_param(1.0, 1.0, -1e-12), std::invalid_argument);
}

TEST_CASE("moment reduction on hand-made gradients") {
    MomentAccumulator acc(1);
    acc.add(std::vector<double>{1.0});
    acc.add(std::vector<double>{-1.0});
    const std::vector<double> phi = {2.0};
    const auto t = acc.finish(DatasetTag::System1, phi);
    CHECK(t.n == 2);
    CHECK(t.g[0] == 0.0);
    CHECK(t.fisher[0] == 1.0);
    CHECK(t.score[0] == 2.0);
    CHECK_THROWS(MomentAccumulator(1).finish(DatasetTag::System1, phi));
}

TEST_CASE("accumulated moments match finite-difference oracle") {
    const Fixture f = make_fixture(5);
    const std::vector<double> before_base(f.model.params().begin(), f.model.params().end());
    const auto before_adapters = f.adapters;
    const auto t = accumulate(f.model, f.adapters, f.data, DatasetTag::System2);
    CHECK(std::equal(before_base.begin(), before_base.end(), f.model.params().begin()));
    CHECK(f.adapters == before_adapters);
    CHECK(t.n == f.data.size());
    CHECK(t.tag == DatasetTag::System2);

    const auto [g, fisher] = fd_moments(f);
    CHECK(fd::max_relative_error(t.g, g) < 1e-4);
    CHECK(fd::max_relative_error(t.fisher, fisher) < 1e-4);
    for (std::size_t j = 0; j < t.size(); ++j) {
        CHECK(t.fisher[j] >= 0.0);
        CHECK(t.score[j] == score_param(f.adapters.values()[j], t.g[j], t.fisher[j]));
    }
}

TEST_CASE("single example and duplicated dataset identities") {
    const Fixture f = make_fixture(8);
    const std::vector<corpus::TaskExample> one = {f.data[0]};
    const auto t1 = accumulate(f.model, f.adapters, one, DatasetTag::System1);
    for (std::size_t j = 0; j < t1.size(); ++j) CHECK(t1.fisher[j] == t1.g[j] * t1.g[j]);

    const auto t = accumulate(f.model, f.adapters, f.data, DatasetTag::System1);
    auto doubled = f.data;
    doubled.insert(doubled.end(), f.data.begin(), f.data.end());
    const auto t2 = accumulate(f.model, f.adapters, doubled, DatasetTag::System1);
    CHECK(t2.n == 2 * t.n);
    CHECK(fd::max_relative_error(t.g, t2.g) < 1e-12);
    CHECK(fd::max_relative_error(t.fisher, t2.fisher) < 1e-12);
    CHECK(fd::max_relative_error(t.score, t2.score) < 1e-12);

    const auto capped = accumulate(f.model, f.adapters, f.data, DatasetTag::System1, 1);
    CHECK(capped == accumulate(f.model, f.adapters, one, DatasetTag::System1));
}

TEST_CASE("prompt-position targets do not contribute") {
    const Fixture f = make_fixture(9);
    auto s = train::shift(f.data[0]);
    auto grad_of = [&](const train::ShiftedExample& ex) {
        std::vector<double> grad(f.adapters.size(), 0.0);
        ad::Tape tape;
        tape.backward(train::example_loss(tape, f.model, &f.adapters, ex, {{}, grad}));
        return grad;
    };
    const auto g0 = grad_of(s);
    for (std::size_t t = 0; t < s.mask.size(); ++t) {
        if (s.mask[t] == 0) s.targets[t] = (s.targets[t] + 7) % f.model.config().vocab_size;
    }
    CHECK(grad_of(s) == g0);
}

TEST_CASE("input validation") {
    const Fixture f = make_fixture(3);
    CHECK_THROWS(accumulate(f.model, f.adapters, std::vector<corpus::TaskExample>{}, DatasetTag::System1));
    auto bad = f.data;
    std::fill(bad[1].loss_mask.begin(), bad[1].loss_mask.end(), 0);
    CHECK_THROWS_WITH(accumulate(f.model, f.adapters, bad, DatasetTag::System1), doctest::Contains(bad[1].id.c_str()));
}

TEST_CASE("dump and load") {
    const auto dir = std::filesystem::temp_directory_path() / "dualpeft_test_importance";
    std::filesystem::create_directories(dir);
    const Fixture f = make_fixture(4);
    const auto t = accumulate(f.model, f.adapters, f.data, DatasetTag::System2);
    dump(t, dir / "t.imp");
    CHECK(load(dir / "t.imp") == t);
    CHECK(load(dir / "t.imp", t.size()) == t);
    CHECK_THROWS_WITH_AS(load(dir / "t.imp", t.size() + 4), doctest::Contains("addresses"), io::FormatError);

    const auto full = std::filesystem::file_size(dir / "t.imp");
    std::filesystem::resize_file(dir / "t.imp", full - 8);
    CHECK_THROWS_WITH_AS(load(dir / "t.imp"),
                         doctest::Contains(("expected at least " + std::to_string(full) + " bytes, actual length " +
                                            std::to_string(full - 8))
                                               .c_str()),
                         io::FormatError);

    {
        std::ofstream out(dir / "bad.imp", std::ios::binary);
        out << "NOTMAGIC0000";
    }
    CHECK_THROWS_AS(load(dir / "bad.imp"), io::FormatError);

    export_csv(t, f.adapters.layout(), dir / "t.csv");
    std::ifstream in(dir / "t.csv");
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == t.size() + 1);
}
