#pragma once

#include <span>
#include <vector>

#include "relbal/tensor.hpp"

namespace relbal {

// softmax(v / delta), max-shifted. Throws InvalidArgument on non-finite input
// or delta <= 0.
std::vector<double> softmax_temp(std::span<const double> v, double delta = 1.0);

// Per-row normalisation of a token matrix [tokens x features].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Dense kernel: c += op(a) * op(b), where op transposes when the flag is set.
// Operands are interpreted as rank-2 via rows()/cols().
void gemm_accumulate(Tensor& c, const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace relbal
