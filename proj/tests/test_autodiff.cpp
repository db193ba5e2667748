// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "dualpeft/autodiff.hpp"
#include "dualpeft/rng.hpp"
#include "fd_oracle.hpp"

using namespace dualpeft;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double sd = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, sd);
    return v;
}

// Builds a scalar loss from one parameter leaf, returns analytic gradient and
// central-difference gradient.
struct GradPair {
    std::vector<double> analytic;
    std::vector<double> numeric;
};

GradPair check(const Shape& shape, std::uint64_t seed, const std::function<Var(Var)>& build) {
    std::vector<double> x = random_values(ad::shape_numel(shape), seed);
    std::vector<double> grad(x.size(), 0.0);
    {
        Tape tape;
        Var p = tape.parameter(x, shape, grad);
        tape.backward(build(p));
    }
    auto f = [&](std::span<const double> v) {
        Tape tape(false);
        return build(tape.parameter(v, shape, {})).value().item();
    };
    return {grad, fd::central_gradient(x, f)};
}

}  // namespace

TEST_CASE("matmul with identity returns the other operand") {
    Tape tape(false);
    Var eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Var x = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    const Tensor& y = ad::matmul(eye, x).value();
    CHECK(y.shape() == Shape{2, 3});
    for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == x.value()[i]);
}

TEST_CASE("softmax of equal logits is uniform") {
    Tape tape(false);
    const Tensor& y = ad::softmax(tape.constant(Tensor({4}, {0, 0, 0, 0}))).value();
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("silu fixes zero") {
    Tape tape(false);
    CHECK(ad::silu(tape.constant(Tensor::scalar(0.0))).value().item() == 0.0);
}

TEST_CASE("shape mismatch names both shapes") {
    Tape tape(false);
    Var a = tape.constant(Tensor({2, 3}));
    Var b = tape.constant(Tensor({2, 3}));
    try {
        ad::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ad::ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2 x 3]") != std::string::npos);
    }
    CHECK_THROWS_AS(ad::add(a, tape.constant(Tensor({3, 2}))), ad::ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ad::ShapeError);
}

TEST_CASE("masked cross entropy") {
    const std::vector<int> targets = {0, 1, 2, 3};

    SUBCASE("uniform logits give ln V over the selected positions") {
        Tape tape(false);
        const std::vector<std::uint8_t> mask = {0, 1, 0, 1};
        Var logits = tape.constant(Tensor({4, 4}));
        CHECK(ad::masked_cross_entropy(logits, targets, mask).value().item() ==
              doctest::Approx(1.386294361119890).epsilon(1e-12));
    }
    SUBCASE("infinite margin on the correct token gives zero") {
        Tape tape(false);
        const double inf = std::numeric_limits<double>::infinity();
        Tensor lg({4, 4});
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c) lg.at(r, c) = c == static_cast<std::size_t>(targets[r]) ? 0.0 : -inf;
        const std::vector<std::uint8_t> mask = {1, 1, 1, 1};
        CHECK(ad::masked_cross_entropy(tape.constant(lg), targets, mask).value().item() == 0.0);
    }
    SUBCASE("targets at masked-out positions do not matter") {
        const std::vector<std::uint8_t> mask = {0, 1, 0, 1};
        const Tensor lg({4, 4}, random_values(16, 3));
        Tape t1(false), t2(false);
        const std::vector<int> permuted = {2, 1, 0, 3};
        CHECK(ad::masked_cross_entropy(t1.constant(lg), targets, mask).value().item() ==
              ad::masked_cross_entropy(t2.constant(lg), permuted, mask).value().item());
    }
    SUBCASE("all-zero mask is rejected") {
        Tape tape(false);
        const std::vector<std::uint8_t> mask = {0, 0, 0, 0};
        CHECK_THROWS_AS(ad::masked_cross_entropy(tape.constant(Tensor({4, 4})), targets, mask), std::invalid_argument);
    }
    SUBCASE("gradient at masked-out rows is exactly zero") {
        const std::vector<std::uint8_t> mask = {1, 0, 0, 1};
        auto x = random_values(16, 4);
        std::vector<double> g(16, 0.0);
        Tape tape;
        Var lg = tape.parameter(x, {4, 4}, g);
        tape.backward(ad::masked_cross_entropy(lg, targets, mask));
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(g[1 * 4 + c] == 0.0);
            CHECK(g[2 * 4 + c] == 0.0);
        }
        CHECK(g[0] != 0.0);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("d(x^2)/dx at 3 is 6") {
        Tensor x = Tensor::scalar(3.0, true);
        Tape tape;
        Var v = tape.leaf(x);
        tape.backward(ad::mul(v, v));
        CHECK(x.grad()[0] == 6.0);
    }
    SUBCASE("second backward on a trace is rejected") {
        Tensor x = Tensor::scalar(3.0, true);
        Tape tape;
        Var loss = ad::mul(tape.leaf(x), tape.leaf(x));
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), ad::TraceError);
    }
    SUBCASE("non-scalar loss is rejected") {
        Tensor x({2, 2}, {1, 2, 3, 4}, true);
        Tape tape;
        CHECK_THROWS_AS(tape.backward(ad::scale(tape.leaf(x), 2.0)), ad::ShapeError);
    }
    SUBCASE("sum(A*B) against central differences") {
        const auto b = random_values(12, 9);
        auto pair = check({3, 4}, 10, [&](Var a) {
            Var bv = a.tape()->constant(Tensor({4, 3}, b));
            return ad::sum(ad::matmul(a, bv));
        });
        CHECK(fd::max_relative_error(pair.analytic, pair.numeric) < 1e-4);
    }
}

TEST_CASE("every op agrees with central differences") {
    const auto other = random_values(64, 77);
    const std::vector<std::pair<const char*, std::function<Var(Var)>>> cases = {
        {"matmul_nt", [&](Var a) { return ad::sum(ad::silu(ad::matmul_nt(a, a.tape()->constant(Tensor({2, 4}, std::vector<double>(other.begin(), other.begin() + 8)))))); }},
        {"transpose", [&](Var a) { return ad::sum(ad::mul(ad::transpose(a), ad::transpose(a))); }},
        {"softmax", [&](Var a) { return ad::sum(ad::mul(ad::softmax(a), a)); }},
        {"rms_norm", [&](Var a) {
             Var g = a.tape()->constant(Tensor({4}, {0.5, 1.0, 1.5, -2.0}));
             return ad::sum(ad::mul(ad::rms_norm(a, g), a));
         }},
        {"slices", [&](Var a) {
             Var l = ad::slice_cols(a, 0, 2);
             Var r = ad::slice_cols(a, 2, 4);
             return ad::sum(ad::mul(ad::concat_cols({r, l}), ad::softmax(a)));
         }},
        {"rows", [&](Var a) { return ad::sum(ad::silu(ad::slice_rows(a, 1, 3))); }},
        {"causal", [&](Var a) {
             Var sq = ad::slice_cols(a, 0, 3);
             return ad::sum(ad::mul(ad::softmax(ad::causal_mask(sq)), sq));
         }},
        {"embedding", [&](Var a) {
             const std::vector<int> ids = {2, 0, 2};
             return ad::sum(ad::silu(ad::embedding(a, ids)));
         }},
        {"sub", [&](Var a) { return ad::sum(ad::mul(ad::sub(a, ad::scale(a, 0.3)), a)); }},
        {"token_logprobs", [&](Var a) {
             const std::vector<int> tok = {3, 0, 1};
             return ad::sum(ad::token_logprobs(a, tok));
         }},
        {"cross_entropy", [&](Var a) {
             const std::vector<int> tok = {3, 0, 1};
             const std::vector<std::uint8_t> mask = {1, 0, 1};
             return ad::masked_cross_entropy(a, tok, mask);
         }},
    };
    std::uint64_t seed = 100;
    for (const auto& [name, build] : cases) {
        CAPTURE(name);
        auto pair = check({3, 4}, seed++, build);
        CHECK(fd::max_relative_error(pair.analytic, pair.numeric) < 1e-4);
    }
}

TEST_CASE("backward is linear in the loss") {
    const auto x = random_values(12, 5);
    auto grad_of = [&](double a, double b) {
        std::vector<double> g(12, 0.0);
        Tape tape;
        Var p = tape.parameter(x, {3, 4}, g);
        Var l1 = ad::sum(ad::softmax(ad::mul(p, p)));
        Var l2 = ad::sum(ad::silu(p));
        tape.backward(ad::add(ad::scale(l1, a), ad::scale(l2, b)));
        return g;
    };
    const auto g1 = grad_of(1.0, 0.0);
    const auto g2 = grad_of(0.0, 1.0);
    const auto gc = grad_of(2.5, -0.75);
    for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(gc[i] - (2.5 * g1[i] - 0.75 * g2[i])) < 1e-10);
}

TEST_CASE("ops without grad inputs are not traced for backward") {
    Tape tape;
    Var c = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    Var y = ad::matmul(c, c);
    CHECK_FALSE(y.requires_grad());
    Tensor p({2, 2}, {1, 1, 1, 1}, true);
    Var z = ad::matmul(tape.leaf(p), c);
    CHECK(z.requires_grad());
}
