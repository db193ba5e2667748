// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include "dualpeft/objective.hpp"

#include <stdexcept>

namespace dualpeft::train {

ShiftedExample shift(std::span<const int> sequence, std::span<const std::uint8_t> loss_mask) {
    if (sequence.size() != loss_mask.size()) throw std::invalid_argument("loss mask length differs from sequence length");
    if (sequence.size() < 2) throw std::invalid_argument("sequence too short for next-token loss");
    ShiftedExample s;
    s.inputs.assign(sequence.begin(), sequence.end() - 1);
    s.targets.assign(sequence.begin() + 1, sequence.end());
    s.mask.assign(loss_mask.begin() + 1, loss_mask.end());
    return s;
}

ShiftedExample shift(const corpus::TaskExample& ex) {
    const auto seq = ex.sequence();
    ShiftedExample s = shift(seq, ex.loss_mask);
    bool any = false;
    for (auto m : s.mask) any = any || m != 0;
    if (!any) throw std::invalid_argument("example " + ex.id + " has an all-zero loss mask");
    return s;
}

ad::Var example_loss(ad::Tape& tape, const model::Model& model, const model::AdapterSet* adapters,
                     const ShiftedExample& ex, model::GradSinks sinks) {
    return ad::masked_cross_entropy(model::forward(tape, model, adapters, ex.inputs, sinks), ex.targets, ex.mask);
}

double loss_value(const model::Model& model, const model::AdapterSet* adapters, const ShiftedExample& ex) {
    ad::Tape tape(false);
    return example_loss(tape, model, adapters, ex).value().item();
}

double mean_loss(const model::Model& model, const model::AdapterSet* adapters,
                 std::span<const corpus::TaskExample> examples) {
    if (examples.empty()) throw std::invalid_argument("mean_loss: no examples");
    double total = 0.0;
    for (const auto& ex : examples) total += loss_value(model, adapters, shift(ex));
    return total / static_cast<double>(examples.size());
}

}  // namespace dualpeft::train
