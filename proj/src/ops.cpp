#include "relbal/ops.hpp"

#include <algorithm>
#include <cmath>

#include "relbal/error.hpp"
#include "relbal/numeric.hpp"

namespace relbal::ops {

namespace {

Tape& tape_of(const Var& a) {
    if (!a.valid()) throw ContractError("op applied to an unbound Var");
    return *a.tape();
}

// dydx(x, y) is the local derivative given input x and output y.
template <class F, class G>
Var unary(Var a, F forward_fn, G dydx) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = forward_fn(x[i]);
    const auto ia = a.id();
    return t.record(std::move(y), {a}, [ia, dydx](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& x = tp.value(ia);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx(x[i], y[i]);
    });
}

}  // namespace

Var add(Var a, Var b) {
    Tape& t = tape_of(a);
    require_same_shape(a.value(), b.value(), "add");
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    const auto ia = a.id(), ib = b.id();
    return t.record(std::move(y), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        for (auto id : {ia, ib}) {
            if (!tp.needs_grad(id)) continue;
            Tensor& gx = tp.grad(id);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
    });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a);
    require_same_shape(a.value(), b.value(), "sub");
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    const auto ia = a.id(), ib = b.id();
    return t.record(std::move(y), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(ia)) {
            Tensor& gx = tp.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (tp.needs_grad(ib)) {
            Tensor& gx = tp.grad(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a);
    require_same_shape(a.value(), b.value(), "mul");
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    const auto ia = a.id(), ib = b.id();
    return t.record(std::move(y), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(ia)) {
            Tensor& gx = tp.grad(ia);
            const Tensor& other = tp.value(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * other[i];
        }
        if (tp.needs_grad(ib)) {
            Tensor& gx = tp.grad(ib);
            const Tensor& other = tp.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * other[i];
        }
    });
}

Var scale(Var a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_bias(Var x, Var bias) {
    Tape& t = tape_of(x);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    const auto n = xv.cols();
    if (bv.size() != n)
        throw ShapeError("add_bias: bias has " + std::to_string(bv.size()) + " values, expected " +
                         std::to_string(n));
    Tensor y = xv;
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) y[r * n + c] += bv[c];
    const auto ix = x.id(), ib = bias.id();
    return t.record(std::move(y), {x, bias}, [ix, ib, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(ix)) {
            Tensor& gx = tp.grad(ix);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (tp.needs_grad(ib)) {
            Tensor& gb = tp.grad(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
    });
}

Var scale_rows(Var x, Var w) {
    Tape& t = tape_of(x);
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (wv.size() != xv.rows())
        throw ShapeError("scale_rows: weight count " + std::to_string(wv.size()) + " != rows " +
                         std::to_string(xv.rows()));
    const auto n = xv.cols();
    Tensor y = xv;
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) y[r * n + c] *= wv[r];
    const auto ix = x.id(), iw = w.id();
    return t.record(std::move(y), {x, w}, [ix, iw, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(ix);
        const Tensor& wv = tp.value(iw);
        const auto m = xv.rows();
        if (tp.needs_grad(ix)) {
            Tensor& gx = tp.grad(ix);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r * n + c] * wv[r];
        }
        if (tp.needs_grad(iw)) {
            Tensor& gw = tp.grad(iw);
            for (std::size_t r = 0; r < m; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < n; ++c) acc += g[r * n + c] * xv[r * n + c];
                gw[r] += acc;
            }
        }
    });
}

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a);
    Tensor y = relbal::matmul(a.value(), b.value());
    const auto ia = a.id(), ib = b.id();
    return t.record(std::move(y), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(ia)) gemm_accumulate(tp.grad(ia), g, false, tp.value(ib), true);
        if (tp.needs_grad(ib)) gemm_accumulate(tp.grad(ib), tp.value(ia), true, g, false);
    });
}

Var matmul_nt(Var a, Var b) {
    Tape& t = tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor y({av.rows(), bv.rows()}, 0.0);
    gemm_accumulate(y, av, false, bv, true);
    const auto ia = a.id(), ib = b.id();
    return t.record(std::move(y), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(ia)) gemm_accumulate(tp.grad(ia), g, false, tp.value(ib), false);
        if (tp.needs_grad(ib)) gemm_accumulate(tp.grad(ib), g, true, tp.value(ia), false);
    });
}

Var transpose(Var a) {
    Tape& t = tape_of(a);
    Tensor y = relbal::transpose(a.value());
    const auto ia = a.id();
    return t.record(std::move(y), {a}, [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ia);
        const auto rows = g.rows(), cols = g.cols();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) ga[c * rows + r] += g[r * cols + c];
    });
}

Var reshape(Var a, Shape shape) {
    Tape& t = tape_of(a);
    Tensor y = a.value().reshaped(std::move(shape));
    y.set_requires_grad(false);
    const auto ia = a.id();
    return t.record(std::move(y), {a}, [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var relu(Var a) {
    Tape& t = tape_of(a);
    if (t.tracking_branches()) {
        const Tensor& x = a.value();
        for (std::size_t i = 0; i < x.size(); ++i) t.note_branch((x[i] > 0.0 ? 2 : 1) + 4 * i);
    }
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
    return unary(a, [](double x) { return relbal::gelu(x); },
                 [](double x, double) { return gelu_derivative(x); });
}

Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a, double floor) {
    Tape& t = tape_of(a);
    if (t.tracking_branches()) {
        const Tensor& x = a.value();
        for (std::size_t i = 0; i < x.size(); ++i) t.note_branch((x[i] > floor ? 2 : 1) + 4 * i);
    }
    return unary(a, [floor](double x) { return std::log(std::max(x, floor)); },
                 [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Var square(Var a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(Var a) {
    Tape& t = tape_of(a);
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    const auto ia = a.id();
    return t.record(Tensor({1}, total), {a}, [ia](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)[0];
        Tensor& ga = tp.grad(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean_rows(Var a) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const auto m = x.rows(), n = x.cols();
    Tensor y({1, n}, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) y[c] += x[r * n + c];
    for (std::size_t c = 0; c < n; ++c) y[c] /= static_cast<double>(m);
    const auto ia = a.id();
    return t.record(std::move(y), {a}, [ia, m, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ia);
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[c] * inv;
    });
}

Var sum_cols(Var a) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const auto m = x.rows(), n = x.cols();
    Tensor y({m, 1}, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) y[r] += x[r * n + c];
    const auto ia = a.id();
    return t.record(std::move(y), {a}, [ia, m, n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ia);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r];
    });
}

Var softmax_rows(Var a, double temperature) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const auto m = x.rows(), n = x.cols();
    Tensor y(x.shape());
    for (std::size_t r = 0; r < m; ++r) {
        auto probs = softmax_temp(x.row(r), temperature);
        std::copy(probs.begin(), probs.end(), y.row(r).begin());
    }
    const auto ia = a.id();
    return t.record(std::move(y), {a}, [ia, m, n, temperature](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad(ia);
        for (std::size_t r = 0; r < m; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
            for (std::size_t c = 0; c < n; ++c)
                ga[r * n + c] += y[r * n + c] * (g[r * n + c] - dot) / temperature;
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape& t = tape_of(x);
    Tensor y = relbal::layer_norm(x.value(), gain.value(), bias.value(), eps);
    const auto ix = x.id(), ig = gain.id(), ib = bias.id();
    return t.record(std::move(y), {x, gain, bias}, [ix, ig, ib, eps](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.value(ix);
        const Tensor& gv = tp.value(ig);
        const auto m = xv.rows(), n = xv.cols();
        const double inv_n = 1.0 / static_cast<double>(n);
        std::vector<double> xhat(n), dxhat(n);
        for (std::size_t r = 0; r < m; ++r) {
            const double* xr = xv.data() + r * n;
            const double* gr = g.data() + r * n;
            double mu = 0.0;
            for (std::size_t c = 0; c < n; ++c) mu += xr[c];
            mu *= inv_n;
            double var = 0.0;
            for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
            var *= inv_n;
            const double inv_std = 1.0 / std::sqrt(var + eps);
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                xhat[c] = (xr[c] - mu) * inv_std;
                dxhat[c] = gr[c] * gv[c];
                mean_d += dxhat[c];
                mean_dx += dxhat[c] * xhat[c];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            if (tp.needs_grad(ix)) {
                Tensor& gx = tp.grad(ix);
                for (std::size_t c = 0; c < n; ++c)
                    gx[r * n + c] += inv_std * (dxhat[c] - mean_d - xhat[c] * mean_dx);
            }
            if (tp.needs_grad(ig)) {
                Tensor& gg = tp.grad(ig);
                for (std::size_t c = 0; c < n; ++c) gg[c] += gr[c] * xhat[c];
            }
            if (tp.needs_grad(ib)) {
                Tensor& gb = tp.grad(ib);
                for (std::size_t c = 0; c < n; ++c) gb[c] += gr[c];
            }
        }
    });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const auto m = x.rows(), n = x.cols();
    if (count == 0 || start + count > n)
        throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + std::to_string(n) + " columns");
    Tensor y({m, count});
    for (std::size_t r = 0; r < m; ++r)
        std::copy_n(x.data() + r * n + start, count, y.data() + r * count);
    const auto ia = a.id();
    return t.record(std::move(y), {a}, [ia, m, n, start, count](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ia);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < count; ++c) ga[r * n + start + c] += g[r * count + c];
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    Tape& t = tape_of(parts[0]);
    const auto m = parts[0].rows();
    std::vector<std::size_t> ids, widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
        ids.push_back(p.id());
        widths.push_back(p.cols());
        total += p.cols();
    }
    Tensor y({m, total});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Tensor& x = p.value();
        const auto w = x.cols();
        for (std::size_t r = 0; r < m; ++r) std::copy_n(x.data() + r * w, w, y.data() + r * total + offset);
        offset += w;
    }
    return t.record(std::move(y), parts, [ids, widths, m, total](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const auto w = widths[k];
            if (tp.needs_grad(ids[k])) {
                Tensor& gx = tp.grad(ids[k]);
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < w; ++c) gx[r * w + c] += g[r * total + offset + c];
            }
            offset += w;
        }
    });
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    const auto m = x.rows(), n = x.cols();
    if (index.empty()) throw ShapeError("gather_rows: empty index");
    Tensor y({index.size(), n});
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= m) throw ShapeError("gather_rows: row index out of range");
        std::copy_n(x.data() + index[k] * n, n, y.data() + k * n);
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    const auto ia = a.id();
    return t.record(std::move(y), {a}, [ia, idx = std::move(idx), n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ia);
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t c = 0; c < n; ++c) ga[idx[k] * n + c] += g[k * n + c];
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    Tape& t = tape_of(parts[0]);
    const auto n = parts[0].cols();
    std::size_t total = 0;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
        total += p.rows();
        ids.push_back(p.id());
    }
    Tensor y({total, n});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.value().values().begin(), p.value().values().end(), y.data() + offset);
        offset += p.value().size();
    }
    return t.record(std::move(y), parts, [ids](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        std::size_t offset = 0;
        for (auto id : ids) {
            const auto sz = tp.value(id).size();
            if (tp.needs_grad(id)) {
                Tensor& gx = tp.grad(id);
                for (std::size_t i = 0; i < sz; ++i) gx[i] += g[offset + i];
            }
            offset += sz;
        }
    });
}

Var gather_elements(Var a, std::span<const std::size_t> index, Shape shape) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    if (shape_size(shape) != index.size()) throw ShapeError("gather_elements: index count does not match shape");
    Tensor y(std::move(shape));
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= x.size()) throw ShapeError("gather_elements: index out of range");
        y[k] = x[index[k]];
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    const auto ia = a.id();
    return t.record(std::move(y), {a}, [ia, idx = std::move(idx)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ia);
        for (std::size_t k = 0; k < idx.size(); ++k) ga[idx[k]] += g[k];
    });
}

Var dropout(Var a, double p, std::mt19937_64& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw InvalidArgument("dropout: probability must lie in [0, 1)");
    if (!training || p == 0.0) return a;
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    std::bernoulli_distribution keep(1.0 - p);
    const double s = 1.0 / (1.0 - p);
    Tensor mask(x.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? s : 0.0;
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
    const auto ia = a.id();
    return t.record(std::move(y), {a}, [ia, mask = std::move(mask)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
    });
}

Var batch_norm(Var x, Var gain, Var bias, BatchNormBuffers buffers, bool training, double eps) {
    Tape& t = tape_of(x);
    const Tensor& xv = x.value();
    const auto m = xv.rows(), n = xv.cols();
    if (gain.value().size() != n || bias.value().size() != n || !buffers.running_mean ||
        !buffers.running_var || buffers.running_mean->size() != n || buffers.running_var->size() != n)
        throw ShapeError("batch_norm: parameter sizes must equal feature dimension " + std::to_string(n));
    if (training && m < 2) throw ContractError("batch_norm: training needs at least two rows");

    std::vector<double> mu(n, 0.0), var(n, 0.0);
    if (training) {
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) mu[c] += xv[r * n + c];
        for (auto& v : mu) v /= static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) {
                const double d = xv[r * n + c] - mu[c];
                var[c] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(m);
        Tensor& rm = *buffers.running_mean;
        Tensor& rv = *buffers.running_var;
        const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
        for (std::size_t c = 0; c < n; ++c) {
            rm[c] = (1.0 - buffers.momentum) * rm[c] + buffers.momentum * mu[c];
            rv[c] = (1.0 - buffers.momentum) * rv[c] + buffers.momentum * var[c] * unbias;
        }
    } else {
        for (std::size_t c = 0; c < n; ++c) {
            mu[c] = (*buffers.running_mean)[c];
            var[c] = (*buffers.running_var)[c];
        }
    }

    std::vector<double> inv_std(n);
    for (std::size_t c = 0; c < n; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    Tensor xhat(xv.shape());
    Tensor y(xv.shape());
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            xhat[r * n + c] = (xv[r * n + c] - mu[c]) * inv_std[c];
            y[r * n + c] = gv[c] * xhat[r * n + c] + bv[c];
        }

    const auto ix = x.id(), ig = gain.id(), ib = bias.id();
    return t.record(std::move(y), {x, gain, bias},
                    [ix, ig, ib, m, n, training, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
                        const Tensor& g = tp.grad(self);
                        const Tensor& gv = tp.value(ig);
                        if (tp.needs_grad(ig)) {
                            Tensor& gg = tp.grad(ig);
                            for (std::size_t i = 0; i < g.size(); ++i) gg[i % n] += g[i] * xhat[i];
                        }
                        if (tp.needs_grad(ib)) {
                            Tensor& gb = tp.grad(ib);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                        }
                        if (!tp.needs_grad(ix)) return;
                        Tensor& gx = tp.grad(ix);
                        if (!training) {
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gv[i % n] * inv_std[i % n];
                            return;
                        }
                        const double inv_m = 1.0 / static_cast<double>(m);
                        for (std::size_t c = 0; c < n; ++c) {
                            double mean_d = 0.0, mean_dx = 0.0;
                            for (std::size_t r = 0; r < m; ++r) {
                                const double d = g[r * n + c] * gv[c];
                                mean_d += d;
                                mean_dx += d * xhat[r * n + c];
                            }
                            mean_d *= inv_m;
                            mean_dx *= inv_m;
                            for (std::size_t r = 0; r < m; ++r) {
                                const double d = g[r * n + c] * gv[c];
                                gx[r * n + c] += inv_std[c] * (d - mean_d - xhat[r * n + c] * mean_dx);
                            }
                        }
                    });
}

}  // namespace relbal::ops
