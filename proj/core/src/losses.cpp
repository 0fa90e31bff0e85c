#include "hylite/losses.hpp"

namespace hylite {

Tensor reg_loss(Tensor x_final, RegMode mode) {
  const std::size_t rows = x_final.rows();
  if (rows < 2) fail(Err::ShapeMismatch, "reg_loss needs the class token plus at least one token");
  Tensor class_row = slice_rows(x_final, 0, 1);
  Tensor tokens = slice_rows(x_final, 1, rows);
  if (mode == RegMode::centroid) return l2_sq(sub(class_row, mean_axis0(tokens)));
  Tensor diffs = sub(tokens, class_row);  // row-broadcast
  return mul_scalar(l2_sq(diffs), 1.0 / static_cast<double>(rows - 1));
}

Tensor objective(Tensor logits, std::span<const int> targets, std::span<const Tensor> x_finals,
                 double lambda, RegMode mode) {
  if (lambda < 0.0) fail(Err::NegativeLambda, "lambda = " + std::to_string(lambda));
  Tensor ce = cross_entropy(logits, targets);
  if (lambda == 0.0) return ce;
  if (x_finals.empty()) fail(Err::EmptySplit, "objective needs token matrices when lambda > 0");
  Tensor reg_sum;
  for (const Tensor& xf : x_finals) {
    Tensor r = reg_loss(xf, mode);
    reg_sum = reg_sum.valid() ? add(reg_sum, r) : r;
  }
  Tensor reg_mean = mul_scalar(reg_sum, 1.0 / static_cast<double>(x_finals.size()));
  return add(ce, mul_scalar(reg_mean, lambda));
}

}  // namespace hylite
