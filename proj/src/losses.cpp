#include "relbal/losses.hpp"

#include <cmath>

#include "relbal/error.hpp"

namespace relbal {

namespace {

Tape& tape_of(const Var& v) {
    if (!v.valid()) throw ContractError("use of an unbound Var");
    return *v.tape();
}

void check_targets(const Tensor& l, const Tensor& y) {
    if (l.rows() != y.rows())
        throw ShapeError("class_distribution_loss: " + std::to_string(l.rows()) + " predictions vs " +
                         std::to_string(y.rows()) + " targets");
    if (l.cols() != y.cols()) throw ShapeError("class_distribution_loss: class counts differ");
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

void check_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t n_classes) {
    if (labels.size() != rows)
        throw ShapeError("center_loss: " + std::to_string(rows) + " embeddings vs " + std::to_string(labels.size()) +
                         " labels");
    for (auto y : labels)
        if (y >= n_classes)
            throw ContractError("center_loss: label " + std::to_string(y) + " out of range for " +
                                std::to_string(n_classes) + " classes");
}

// Index of the first anchor of class y minimising the squared distance to e.
std::pair<std::size_t, double> nearest_same_class(std::span<const double> e, const Tensor& anchors, std::size_t y,
                                                  std::size_t k) {
    std::size_t best = y * k;
    double best_d = squared_distance(e, anchors.row(best));
    for (std::size_t j = 1; j < k; ++j) {
        const double d = squared_distance(e, anchors.row(y * k + j));
        if (d < best_d) {
            best_d = d;
            best = y * k + j;
        }
    }
    return {best, best_d};
}

}  // namespace

void LossWeights::validate() const {
    for (double v : {cls, anchor, center})
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and nonnegative");
    if (cls == 0.0 && anchor == 0.0 && center == 0.0) throw ConfigError("loss weights must not all be zero");
}

double class_distribution_loss(const Tensor& l_final, const Tensor& targets) {
    check_targets(l_final, targets);
    const auto B = l_final.rows(), N = l_final.cols();
    double total = 0.0;
    for (std::size_t i = 0; i < B * N; ++i)
        if (targets[i] != 0.0) total -= targets[i] * std::log(std::max(l_final[i], kProbabilityFloor));
    return total / static_cast<double>(B);
}

double anchor_loss(const AnchorSet& anchors, std::string* note) {
    const auto P = anchors.anchors.rows();
    if (P < 2) {
        if (note) *note = "anchor_loss: fewer than two anchors, loss is 0";
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t q = p + 1; q < P; ++q) total += squared_distance(anchors.anchors.row(p), anchors.anchors.row(q));
    return -total / static_cast<double>(P * (P - 1) / 2);
}

double center_loss(const Tensor& embeddings, std::span<const std::size_t> labels, const AnchorSet& anchors) {
    anchors.validate();
    check_labels(labels, embeddings.rows(), anchors.n_classes);
    if (embeddings.cols() != anchors.dim()) throw ShapeError("center_loss: embedding and anchor widths differ");
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        total += nearest_same_class(embeddings.row(i), anchors.anchors, labels[i], anchors.k).second;
    return total / static_cast<double>(labels.size());
}

double total_loss(const LossParts& parts, const LossWeights& w) {
    for (double v : {parts.cls, parts.anchor, parts.center})
        if (!std::isfinite(v)) throw NumericError("total_loss: non-finite loss term");
    return w.cls * parts.cls + w.anchor * parts.anchor + w.center * parts.center;
}

namespace ops {

Var class_distribution_loss(Var l_final, const Tensor& targets) {
    check_targets(l_final.value(), targets);
    Tape& t = tape_of(l_final);
    Var ll = ops::log(l_final, kProbabilityFloor);
    Var weighted = ops::mul(ll, t.constant(targets));
    return ops::scale(ops::sum(weighted), -1.0 / static_cast<double>(targets.rows()));
}

Var anchor_loss(Var anchors) {
    Tape& t = tape_of(anchors);
    const Tensor& a = anchors.value();
    const auto P = a.rows(), d = a.cols();
    if (P < 2) return t.constant(Tensor({1}, 0.0));
    // sum over unordered pairs of |a_p - a_q|^2 = P * sum |a_p|^2 - |sum a_p|^2
    std::vector<double> col_sum(d, 0.0);
    double sq = 0.0;
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t c = 0; c < d; ++c) {
            col_sum[c] += a[p * d + c];
            sq += a[p * d + c] * a[p * d + c];
        }
    double sum_sq = 0.0;
    for (double v : col_sum) sum_sq += v * v;
    const double pairs = static_cast<double>(P * (P - 1) / 2);
    const double value = -(static_cast<double>(P) * sq - sum_sq) / pairs;
    const auto ia = anchors.id();
    return t.record(Tensor({1}, value), {anchors},
                    [ia, P, d, pairs, col_sum = std::move(col_sum)](Tape& tp, std::size_t self) {
                        const double g = tp.grad(self)[0];
                        const Tensor& a = tp.value(ia);
                        Tensor& ga = tp.grad(ia);
                        const double f = -2.0 * g / pairs;
                        for (std::size_t p = 0; p < P; ++p)
                            for (std::size_t c = 0; c < d; ++c)
                                ga[p * d + c] += f * (static_cast<double>(P) * a[p * d + c] - col_sum[c]);
                    });
}

Var center_loss(Var embeddings, std::span<const std::size_t> labels, Var anchors, std::size_t k) {
    Tape& t = tape_of(embeddings);
    const Tensor& e = embeddings.value();
    const Tensor& a = anchors.value();
    if (k == 0 || a.rows() % k != 0) throw ShapeError("center_loss: anchor rows are not a multiple of K");
    if (e.cols() != a.cols()) throw ShapeError("center_loss: embedding and anchor widths differ");
    check_labels(labels, e.rows(), a.rows() / k);
    const auto B = e.rows(), d = e.cols();
    std::vector<std::size_t> nearest(B);
    double total = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const auto [idx, dist] = nearest_same_class(e.row(i), a, labels[i], k);
        nearest[i] = idx;
        total += dist;
        if (t.tracking_branches()) t.note_branch(idx + 1 + 1000003ULL * i);
    }
    const double inv_b = 1.0 / static_cast<double>(B);
    const auto ie = embeddings.id(), ia = anchors.id();
    return t.record(Tensor({1}, total * inv_b), {embeddings, anchors},
                    [ie, ia, B, d, inv_b, nearest = std::move(nearest)](Tape& tp, std::size_t self) {
                        const double g = tp.grad(self)[0] * 2.0 * inv_b;
                        const Tensor& ev = tp.value(ie);
                        const Tensor& av = tp.value(ia);
                        Tensor* ge = tp.needs_grad(ie) ? &tp.grad(ie) : nullptr;
                        Tensor* ga = tp.needs_grad(ia) ? &tp.grad(ia) : nullptr;
                        for (std::size_t i = 0; i < B; ++i) {
                            const auto p = nearest[i];
                            for (std::size_t c = 0; c < d; ++c) {
                                const double diff = g * (ev[i * d + c] - av[p * d + c]);
                                if (ge) (*ge)[i * d + c] += diff;
                                if (ga) (*ga)[p * d + c] -= diff;
                            }
                        }
                    });
}

Var total_loss(Var cls, Var anchor, Var center, const LossWeights& w) {
    Var out;
    auto accumulate = [&](Var part, double weight, const char* name) {
        if (!part.valid()) return;
        if (!std::isfinite(part.value()[0]))
            throw NumericError(std::string("total_loss: non-finite ") + name + " term");
        if (weight == 0.0) return;
        Var term = weight == 1.0 ? part : ops::scale(part, weight);
        out = out.valid() ? ops::add(out, term) : term;
    };
    accumulate(cls, w.cls, "classification");
    accumulate(anchor, w.anchor, "anchor");
    accumulate(center, w.center, "center");
    if (!out.valid()) {
        Var any = cls.valid() ? cls : anchor.valid() ? anchor : center;
        if (!any.valid()) throw ContractError("total_loss: no loss terms");
        return ops::scale(any, 0.0);
    }
    return out;
}

}  // namespace ops

}  // namespace relbal
