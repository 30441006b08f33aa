#include "relbal/numeric.hpp"

#include <algorithm>
#include <cmath>

#include "relbal/error.hpp"

namespace relbal {

std::vector<double> softmax_temp(std::span<const double> v, double delta) {
    if (!(delta > 0.0) || !std::isfinite(delta))
        throw InvalidArgument("softmax_temp: temperature must be positive and finite");
    if (v.empty()) throw InvalidArgument("softmax_temp: empty input");
    for (double x : v)
        if (!std::isfinite(x)) throw InvalidArgument("softmax_temp: non-finite input");

    const double top = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp((v[i] - top) / delta);
        total += out[i];
    }
    for (double& x : out) x /= total;
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const auto n = x.cols();
    if (gain.size() != n || bias.size() != n)
        throw ShapeError("layer_norm: gain/bias length must equal feature dimension " + std::to_string(n));
    if (!(eps > 0.0)) throw InvalidArgument("layer_norm: eps must be positive");
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto dst = out.row(r);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) dst[c] = gain[c] * (in[c] - mean) * inv + bias[c];
    }
    return out;
}

void gemm_accumulate(Tensor& c, const Tensor& a, bool ta, const Tensor& b, bool tb) {
    const std::size_t m = ta ? a.cols() : a.rows();
    const std::size_t k = ta ? a.rows() : a.cols();
    const std::size_t kb = tb ? b.cols() : b.rows();
    const std::size_t n = tb ? b.rows() : b.cols();
    if (k != kb || c.rows() != m || c.cols() != n)
        throw ShapeError("matmul: incompatible operands " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
    const double* A = a.data();
    const double* B = b.data();
    double* C = c.data();
    const std::size_t lda = a.cols();
    const std::size_t ldb = b.cols();

    if (!ta && !tb) {
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = C + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = A[i * lda + p];
                if (av == 0.0) continue;
                const double* brow = B + p * ldb;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = A + i * lda;
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = B + j * ldb;
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                C[i * n + j] += acc;
            }
        }
    } else if (ta && !tb) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* arow = A + p * lda;
            const double* brow = B + p * ldb;
            for (std::size_t i = 0; i < m; ++i) {
                const double av = arow[i];
                if (av == 0.0) continue;
                double* crow = C + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += A[p * lda + i] * B[j * ldb + p];
                C[i * n + j] += acc;
            }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: incompatible operands " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
    Tensor out({a.rows(), b.cols()}, 0.0);
    gemm_accumulate(out, a, false, b, false);
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out({a.cols(), a.rows()});
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
    return out;
}

namespace {
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
}

double gelu_derivative(double x) {
    const double inner = kGeluScale * (x + kGeluCubic * x * x * x);
    const double th = std::tanh(inner);
    const double dinner = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner;
}

}  // namespace relbal
