// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "dualpeft/corpus.hpp"
#include "dualpeft/model.hpp"

namespace dualpeft::train {

// Next-token view of an example: position t predicts sequence[t + 1] and is
// counted when that target is an answer token.
struct ShiftedExample {
    std::vector<int> inputs;
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
};

// Throws std::invalid_argument naming the example when no position is counted.
ShiftedExample shift(const corpus::TaskExample& ex);
ShiftedExample shift(std::span<const int> sequence, std::span<const std::uint8_t> loss_mask);

// Masked mean cross-entropy of one example.
ad::Var example_loss(ad::Tape& tape, const model::Model& model, const model::AdapterSet* adapters,
                     const ShiftedExample& ex, model::GradSinks sinks = {});

double loss_value(const model::Model& model, const model::AdapterSet* adapters, const ShiftedExample& ex);

// Mean over examples of the per-example masked loss.
double mean_loss(const model::Model& model, const model::AdapterSet* adapters,
                 std::span<const corpus::TaskExample> examples);

}  // namespace dualpeft::train
