#pragma once

#include <span>

#include "hylite/tensor.hpp"

namespace hylite {

enum class RegMode {
  centroid,   // || x0 - mean_i x_i ||^2
  per_token,  // (1/m) sum_i || x0 - x_i ||^2
};

/// Regularizer over a final token matrix (class-token row 0, m token rows
/// below). Pulls the class token toward the spectral-token centroid.
Tensor reg_loss(Tensor x_final, RegMode mode = RegMode::centroid);

/// cross_entropy(logits, targets) + lambda * mean_i reg_loss(x_final_i).
/// With lambda == 0 this returns the cross-entropy node itself, so values and
/// gradients reduce to plain CE exactly.
Tensor objective(Tensor logits, std::span<const int> targets, std::span<const Tensor> x_finals,
                 double lambda, RegMode mode = RegMode::centroid);

}  // namespace hylite
