// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include "dualpeft/autodiff.hpp"

#include <algorithm>
#include <sstream>

namespace dualpeft::ad {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << " x ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {
void check_dims(const Shape& shape) {
    if (shape.empty()) return;  // scalar
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor shape " + shape_str(shape) + " has a zero dimension");
    }
}
}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_.assign(shape_numel(shape_), 0.0);
    set_requires_grad(requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims(shape_);
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                         " values, got " + std::to_string(data_.size()));
    }
    set_requires_grad(requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({}, {v}, requires_grad); }

std::size_t Tensor::rows() const {
    if (shape_.size() == 2) return shape_[0];
    return 1;
}

std::size_t Tensor::cols() const {
    if (shape_.empty()) return 1;
    return shape_.back();
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

void Tensor::set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on) {
        grad_.assign(data_.size(), 0.0);
    } else {
        grad_.clear();
    }
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

}  // namespace dualpeft::ad
