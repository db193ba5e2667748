// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include "dualpeft/autodiff.hpp"

namespace dualpeft::ad {

const Tensor& Var::value() const {
    if (!tape_) throw TraceError("use of an unbound Var");
    return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->needs_grad(id_); }

Var Tape::constant(Tensor value) {
    if (nodes_.capacity() == 0) nodes_.reserve(512);
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::parameter(std::span<const double> values, Shape shape, std::span<double> grad_sink) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("parameter shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
    }
    if (!grad_sink.empty() && grad_sink.size() != values.size()) {
        throw ShapeError("gradient sink size " + std::to_string(grad_sink.size()) + " does not match parameter shape " +
                         shape_str(shape));
    }
    Var v = constant(Tensor(std::move(shape), std::vector<double>(values.begin(), values.end())));
    Node& n = nodes_.back();
    n.needs_grad = grad_enabled_ && !grad_sink.empty();
    if (n.needs_grad) n.sink = grad_sink;
    return v;
}

Var Tape::leaf(Tensor& tensor) {
    Var v = constant(Tensor(tensor.shape(), std::vector<double>(tensor.data().begin(), tensor.data().end())));
    Node& n = nodes_.back();
    n.needs_grad = grad_enabled_ && tensor.requires_grad();
    if (n.needs_grad) n.sink = tensor.grad();
    return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackFn back) {
    bool any = false;
    for (const Var& in : inputs) {
        if (in.tape() != this) throw TraceError("operation mixes Vars from different tapes");
        any = any || nodes_[in.id()].needs_grad;
    }
    Var out = constant(std::move(value));
    if (grad_enabled_ && any) {
        nodes_.back().needs_grad = true;
        nodes_.back().back = std::move(back);
    }
    return out;
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackFn back) {
    bool any = false;
    for (const Var& in : inputs) {
        if (in.tape() != this) throw TraceError("operation mixes Vars from different tapes");
        any = any || nodes_[in.id()].needs_grad;
    }
    Var out = constant(std::move(value));
    if (grad_enabled_ && any) {
        nodes_.back().needs_grad = true;
        nodes_.back().back = std::move(back);
    }
    return out;
}

std::span<double> Tape::grad_target(Var input) {
    Node& n = nodes_[input.id()];
    if (!n.needs_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw TraceError("backward on a Var from another tape");
    if (consumed_) throw TraceError("backward called twice on the same trace");
    const Tensor& lv = nodes_[loss.id()].value;
    if (lv.size() != 1) throw ShapeError("backward needs a scalar loss, got shape " + shape_str(lv.shape()));
    consumed_ = true;
    if (!nodes_[loss.id()].needs_grad) return;

    nodes_[loss.id()].grad.assign(1, 1.0);
    for (std::int64_t i = loss.id(); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.back) n.back(*this, static_cast<std::uint32_t>(i));
        Node& m = nodes_[static_cast<std::size_t>(i)];
        if (!m.sink.empty()) {
            for (std::size_t k = 0; k < m.grad.size(); ++k) m.sink[k] += m.grad[k];
        }
        m.back = nullptr;
    }
}

}  // namespace dualpeft::ad
