// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode automatic differentiation over dense row-major float64 tensors.
//
// A Tape records every operation of one forward pass. Nodes are appended in
// creation order, which is a topological order of the computation, so
// backward() walks them once in reverse. Gradients of parameter leaves are
// accumulated into caller-owned sinks, which lets several independent tapes
// (one per example) feed the same gradient buffer in a fixed order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualpeft::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class TraceError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor scalar(double v, bool requires_grad = false);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double item() const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on);
    // Empty unless requires_grad; otherwise same element count as data.
    std::span<double> grad() { return grad_; }
    std::span<const double> grad() const { return grad_; }
    void zero_grad();

private:
    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
    bool requires_grad_ = false;
};

class Tape;

// Lightweight handle to a node on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    Tape* tape() const { return tape_; }
    std::uint32_t id() const { return id_; }

private:
    Tape* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

class Tape {
public:
    // Backward closure: receives the tape and the index of the node whose
    // gradient is complete; it must push that gradient into its inputs.
    using BackFn = std::function<void(Tape&, std::uint32_t)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var constant(Tensor value);
    // Leaf whose gradient is added into `grad_sink` on backward (sink may be
    // empty, in which case the leaf is treated as a constant).
    Var parameter(std::span<const double> values, Shape shape, std::span<double> grad_sink);
    // Leaf bound to a tensor; when it requires grad, backward accumulates into
    // tensor.grad().
    Var leaf(Tensor& tensor);

    // Record an op output. The backward closure is kept only if grad is
    // enabled and at least one input needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackFn back);
    Var record(Tensor value, const std::vector<Var>& inputs, BackFn back);

    void backward(Var loss);
    bool consumed() const { return consumed_; }
    std::size_t node_count() const { return nodes_.size(); }

    const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
    bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
    // Gradient of node `id`; valid inside backward closures.
    std::span<const double> grad(std::uint32_t id) const { return nodes_[id].grad; }
    // Accumulation target for an input's gradient, allocated on first use.
    // Returns an empty span for inputs that do not need gradients.
    std::span<double> grad_target(Var input);

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool needs_grad = false;
        BackFn back;
        std::span<double> sink;
    };

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
    bool consumed_ = false;
};

// --- Operations ------------------------------------------------------------

// [m x k] * [k x n]
Var matmul(Var a, Var b);
// [m x k] * [n x k]^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var silu(Var a);
// Row-wise softmax over the last dimension of a 2-D tensor (1-D allowed).
Var softmax(Var a);
// x: [T x d], gain: [d]
Var rms_norm(Var x, Var gain, double eps = 1e-6);
// table: [V x d] -> [ids.size() x d]
Var embedding(Var table, std::span<const int> ids);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
// Entries above the diagonal of a square [T x T] tensor become -inf.
Var causal_mask(Var scores);
Var sum(Var a);
// log softmax(logits[t])[tokens[t]] for each row t, giving a [T] vector.
Var token_logprobs(Var logits, std::span<const int> tokens);
// Mean negative log-likelihood over positions with mask = 1.
Var masked_cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask);

double silu_value(double x);

}  // namespace dualpeft::ad
