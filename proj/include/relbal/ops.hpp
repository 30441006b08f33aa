#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "relbal/tape.hpp"

// Differentiable primitives recorded on a Tape. Matrices are rank-2
// [rows x cols]; vectors used as biases/gains may have any shape with the
// right element count.
namespace relbal::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// x [m x n] + bias broadcast over rows.
Var add_bias(Var x, Var bias);
// Row i of x [m x n] multiplied by w[i], w [m x 1].
Var scale_rows(Var x, Var w);

Var matmul(Var a, Var b);
// a * transpose(b)
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var relu(Var a);
Var gelu(Var a);
Var exp(Var a);
// log(max(a, floor)); entries below the floor get zero gradient.
Var log(Var a, double floor);
Var square(Var a);

Var sum(Var a);
Var mean(Var a);
// [m x n] -> [1 x n]
Var mean_rows(Var a);
// [m x n] -> [m x 1]
Var sum_cols(Var a);

Var softmax_rows(Var a, double temperature = 1.0);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var slice_cols(Var a, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> index);
Var concat_rows(std::span<const Var> parts);
// y[k] = a[index[k]] over the flattened values of a.
Var gather_elements(Var a, std::span<const std::size_t> index, Shape shape);

// Inverted dropout; identity when !training or p == 0.
Var dropout(Var a, double p, std::mt19937_64& rng, bool training);

struct BatchNormBuffers {
    Tensor* running_mean = nullptr;
    Tensor* running_var = nullptr;
    double momentum = 0.1;
};
// Normalises each column over the rows (the batch). Training mode uses batch
// statistics and updates the running buffers; evaluation uses the buffers.
Var batch_norm(Var x, Var gain, Var bias, BatchNormBuffers buffers, bool training, double eps = 1e-5);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace relbal::ops
