// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <set>

#include "dualpeft/binio.hpp"
#include "dualpeft/model.hpp"
#include "fd_oracle.hpp"

using namespace dualpeft;
using namespace dualpeft::model;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 24;
    c.vocab_size = 11;
    c.max_seq_len = 12;
    return c;
}

double max_abs_diff(const ad::Tensor& a, const ad::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig c = small_config();
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config();
    c.d_ff = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    LoraConfig l;
    l.sites = SiteSet();
    CHECK_THROWS_AS(l.validate(), std::invalid_argument);
    CHECK(SiteSet::parse("QKV") == SiteSet::qkv());
    CHECK(SiteSet::parse("Gate,Up,Down") == SiteSet::gud());
    CHECK(SiteSet::parse("Q,V").name() == "Q,V");
    CHECK_THROWS(SiteSet::parse("O"));
}

TEST_CASE("init is deterministic in the seed") {
    const Model a = init_model(small_config(), 42);
    const Model b = init_model(small_config(), 42);
    const Model c = init_model(small_config(), 43);
    CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
    CHECK_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
}

TEST_CASE("forward shapes and causality") {
    const Model m = init_model(small_config(), 1);
    const std::vector<int> one = {3};
    CHECK(logits(m, nullptr, one).shape() == ad::Shape{1, 11});

    const std::vector<int> s1 = {1, 2, 3, 4, 5, 6};
    std::vector<int> s2 = s1;
    s2[4] = 9;
    s2[5] = 0;
    const auto l1 = logits(m, nullptr, s1);
    const auto l2 = logits(m, nullptr, s2);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t v = 0; v < 11; ++v) CHECK(l1.at(t, v) == l2.at(t, v));
    CHECK(l1.at(4, 0) != l2.at(4, 0));

    const std::vector<int> bad = {1, 11};
    CHECK_THROWS_AS(logits(m, nullptr, bad), std::out_of_range);
    const std::vector<int> too_long(13, 1);
    CHECK_THROWS_AS(logits(m, nullptr, too_long), std::invalid_argument);
}

TEST_CASE("adapter parameter counts") {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 64;
    c.n_heads = 4;
    c.d_ff = 128;
    c.vocab_size = 48;
    LoraConfig l;
    l.rank = 4;
    l.sites = SiteSet::all();
    AdapterLayout layout(c, l);
    CHECK(layout.size() == 3840);
    CHECK(adapter_param_count(c, l) == 3840);
    std::size_t q = 0, gate = 0, down = 0;
    for (const auto& b : layout.blocks()) {
        if (b.site == Site::Q) q += b.size();
        if (b.site == Site::Gate) gate += b.size();
        if (b.site == Site::Down) down += b.size();
    }
    CHECK(q == 512);
    CHECK(gate == 768);
    CHECK(down == 768);

    l.sites = SiteSet::qkv();
    AdapterLayout qkv(c, l);
    for (const auto& b : qkv.blocks()) CHECK((b.site == Site::Q || b.site == Site::K || b.site == Site::V));
}

TEST_CASE("closed-form count and bijective addressing over many configs") {
    for (int layers : {1, 2})
        for (int rank : {1, 3})
            for (auto sites : {SiteSet::qkv(), SiteSet::gud(), SiteSet::all(), SiteSet::parse("K,Down")}) {
                ModelConfig c = small_config();
                c.n_layers = layers;
                LoraConfig l;
                l.rank = rank;
                l.sites = sites;
                AdapterLayout layout(c, l);
                std::size_t expect = 0;
                for (Site s : kAllSites) {
                    if (!sites.has(s)) continue;
                    const auto [in, out] = site_in_out(c, s);
                    expect += static_cast<std::size_t>(layers * rank * (in + out));
                }
                REQUIRE(layout.size() == expect);
                std::set<ParamAddress> seen;
                ParamAddress prev{};
                for (std::size_t i = 0; i < layout.size(); ++i) {
                    const ParamAddress a = layout.address(i);
                    CHECK(layout.index(a) == i);
                    if (i > 0) CHECK(prev < a);
                    prev = a;
                    seen.insert(a);
                }
                CHECK(seen.size() == layout.size());
            }
}

TEST_CASE("standard init and zero scale leave the base forward unchanged") {
    const std::vector<int> toks = {1, 5, 2, 7, 3};
    const Model base = init_model(small_config(), 7);
    const auto ref = logits(base, nullptr, toks);

    Model m = base;
    LoraConfig l;
    l.rank = 2;
    AdapterSet set = attach_lora(m, l, 11);
    for (const auto& b : set.layout().blocks()) {
        if (b.matrix != Matrix::B) continue;
        for (double v : set.block_values(b)) CHECK(v == 0.0);
    }
    CHECK(max_abs_diff(logits(m, &set, toks), ref) == 0.0);

    Model m2 = base;
    l.scale = 0.0;
    l.init_mode = InitMode::SymmetricSmall;
    AdapterSet s2 = attach_lora(m2, l, 11);
    CHECK(max_abs_diff(logits(m2, &s2, toks), ref) == 0.0);

    CHECK_THROWS_AS(attach_lora(m, l, 1), std::logic_error);
}

TEST_CASE("principal-singular init preserves the function") {
    const std::vector<int> toks = {1, 5, 2, 7, 3};
    const Model base = init_model(small_config(), 7);
    Model m = base;
    LoraConfig l;
    l.rank = 3;
    l.scale = 0.5;
    l.init_mode = InitMode::PrincipalSingular;
    AdapterSet set = attach_lora(m, l, 0);
    CHECK(max_abs_diff(logits(m, &set, toks), logits(base, nullptr, toks)) < 1e-10);
    bool nonzero = false;
    for (double v : set.values()) nonzero = nonzero || v != 0.0;
    CHECK(nonzero);
}

TEST_CASE("doubling A and B quadruples the adapter delta") {
    // Oracle: B*A computed directly by triple loop.
    ModelConfig c = small_config();
    c.n_layers = 1;
    Model m = init_model(c, 3);
    LoraConfig l;
    l.rank = 2;
    l.init_mode = InitMode::SymmetricSmall;
    AdapterSet set = attach_lora(m, l, 5);
    const auto* a = set.layout().find(0, Site::V, Matrix::A);
    const auto* b = set.layout().find(0, Site::V, Matrix::B);
    auto delta = [&](const AdapterSet& s) {
        std::vector<double> out(b->rows * a->cols, 0.0);
        auto av = s.block_values(*a);
        auto bv = s.block_values(*b);
        for (std::size_t i = 0; i < b->rows; ++i)
            for (std::size_t j = 0; j < a->cols; ++j)
                for (std::size_t k = 0; k < a->rows; ++k) out[i * a->cols + j] += bv[i * b->cols + k] * av[k * a->cols + j];
        return out;
    };
    AdapterSet doubled = set;
    for (double& v : doubled.values()) v *= 2.0;
    const auto d1 = delta(set);
    const auto d2 = delta(doubled);
    for (std::size_t i = 0; i < d1.size(); ++i) CHECK(d2[i] == doctest::Approx(4.0 * d1[i]).epsilon(1e-12));

    // The forward pass realises exactly W + scale * B * A at the V site: fold
    // the delta into a copy of the base weight and compare logits.
    Model folded = init_model(c, 3);
    auto w = folded.params().subspan(folded.site_weight(0, Site::V), d2.size());
    for (std::size_t i = 0; i < d2.size(); ++i) w[i] += l.scale * d2[i];
    AdapterSet only_v = doubled;
    for (const auto& blk : only_v.layout().blocks()) {
        if (blk.site == Site::V) continue;
        for (double& v : only_v.block_values(blk)) v = 0.0;
    }
    const std::vector<int> toks = {1, 2, 3, 4};
    CHECK(max_abs_diff(logits(m, &only_v, toks), logits(folded, nullptr, toks)) < 1e-12);
}

TEST_CASE("sampling") {
    const Model m = init_model(small_config(), 9);
    const std::vector<int> prompt = {1, 2};
    CHECK(sample(m, nullptr, prompt, 0, 0.0, std::uint64_t{1}).empty());
    CHECK(sample(m, nullptr, prompt, 6, 0.0, std::uint64_t{1}) == sample(m, nullptr, prompt, 6, 0.0, std::uint64_t{2}));
    CHECK(sample(m, nullptr, prompt, 6, 1.0, std::uint64_t{5}) == sample(m, nullptr, prompt, 6, 1.0, std::uint64_t{5}));
    CHECK(sample(m, nullptr, prompt, 100, 1.0, std::uint64_t{5}).size() <= 10);
    CHECK_THROWS(sample(m, nullptr, prompt, 3, -1.0, std::uint64_t{5}));
}

TEST_CASE("adapter gradients match central differences on a random model") {
    ModelConfig c = small_config();
    Model m = init_model(c, 21);
    LoraConfig l;
    l.rank = 2;
    AdapterSet set = attach_lora(m, l, 22);
    Rng rng(23);
    for (double& v : set.values()) v = rng.normal(0.0, 0.3);
    const std::vector<int> toks = {1, 4, 2, 8, 5, 3};
    const std::vector<int> tgt = {4, 2, 8, 5, 3, 0};
    const std::vector<std::uint8_t> mask = {0, 0, 1, 1, 1, 1};
    std::vector<double> grad(set.size(), 0.0);
    {
        ad::Tape tape;
        tape.backward(ad::masked_cross_entropy(forward(tape, m, &set, toks, {{}, grad}), tgt, mask));
    }
    auto loss = [&](std::span<const double> v) {
        AdapterSet s = set;
        std::copy(v.begin(), v.end(), s.values().begin());
        ad::Tape tape(false);
        return ad::masked_cross_entropy(forward(tape, m, &s, toks), tgt, mask).value().item();
    };
    const auto numeric = fd::central_gradient(std::vector<double>(set.values().begin(), set.values().end()), loss);
    CHECK(fd::max_relative_error(grad, numeric) < 1e-4);
}

TEST_CASE("checkpoint round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "dualpeft_test_model";
    std::filesystem::create_directories(dir);
    Model m = init_model(small_config(), 31);
    LoraConfig l;
    l.sites = SiteSet::gud();
    l.init_mode = InitMode::SymmetricSmall;
    AdapterSet set = attach_lora(m, l, 32);
    save_checkpoint(dir / "a.ckpt", m, &set);
    const Checkpoint ck = load_checkpoint(dir / "a.ckpt");
    CHECK(ck.model.config() == m.config());
    CHECK(std::equal(m.params().begin(), m.params().end(), ck.model.params().begin()));
    REQUIRE(ck.adapters.has_value());
    CHECK(*ck.adapters == set);

    save_checkpoint(dir / "base.ckpt", m, nullptr);
    CHECK_FALSE(load_checkpoint(dir / "base.ckpt").adapters.has_value());

    std::filesystem::resize_file(dir / "a.ckpt", 100);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "a.ckpt"), doctest::Contains("truncated"), io::FormatError);
}
