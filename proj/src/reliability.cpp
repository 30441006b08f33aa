#include "relbal/reliability.hpp"

#include <algorithm>
#include <cmath>

#include "relbal/encoder.hpp"
#include "relbal/error.hpp"
#include "relbal/numeric.hpp"

namespace relbal {

namespace {

constexpr double kMixFloor = 1e-12;
constexpr double kLogFloor = 1e-300;

void require_distribution(std::span<const double> p, const char* what) {
    if (p.size() < 2) throw ContractError(std::string(what) + ": distribution needs at least two classes");
    if (!on_simplex(p))
        throw ContractError(std::string(what) + ": input is not a probability distribution");
}

bool all_equal(std::span<const double> p) {
    return std::all_of(p.begin(), p.end(), [&](double v) { return v == p.front(); });
}

double entropy_ratio(std::span<const double> p) {
    if (all_equal(p)) return 1.0;
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return std::clamp(h / std::log(static_cast<double>(p.size())), 0.0, 1.0);
}

LabelDistribution mix(std::span<const double> a, std::span<const double> b, double ca, double cb) {
    if (a.size() != b.size()) throw ShapeError("distribution sizes differ");
    LabelDistribution out(a.size());
    const double s = ca + cb;
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = s < kMixFloor ? 0.5 * (a[i] + b[i]) : (ca * a[i] + cb * b[i]) / s;
    return out;
}

Tape& tape_of(const Var& v) {
    if (!v.valid()) throw ContractError("use of an unbound Var");
    return *v.tape();
}

// y = x * w + b for a single row.
std::vector<double> affine(std::span<const double> x, const Tensor& w, const Tensor& b) {
    if (x.size() != w.rows()) throw ShapeError("affine: input width does not match weight rows");
    std::vector<double> y(w.cols());
    for (std::size_t c = 0; c < w.cols(); ++c) y[c] = b[c];
    for (std::size_t r = 0; r < w.rows(); ++r)
        for (std::size_t c = 0; c < w.cols(); ++c) y[c] += x[r] * w.at(r, c);
    return y;
}

}  // namespace

bool on_simplex(std::span<const double> p, double tol) {
    if (p.empty()) return false;
    double s = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0.0) return false;
        s += v;
    }
    return std::abs(s - 1.0) <= tol;
}

void AnchorSet::validate() const {
    if (k == 0) throw ConfigError("anchor set: K must be at least 1");
    if (n_classes == 0) throw ConfigError("anchor set: no classes");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("anchor set: delta must be positive");
    if (anchors.rows() != count())
        throw ShapeError("anchor set: expected " + std::to_string(count()) + " anchor rows, got " +
                         std::to_string(anchors.rows()));
}

AnchorSet make_anchor_set(std::size_t n_classes, std::size_t k, std::size_t dim, double delta, std::mt19937_64& rng) {
    AnchorSet a;
    a.n_classes = n_classes;
    a.k = k;
    a.delta = delta;
    if (k == 0 || n_classes == 0 || dim == 0) throw ConfigError("anchor set: N_cls, K and dim must be positive");
    a.anchors = init_normal({n_classes * k, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
    a.validate();
    return a;
}

Tensor anchor_label_matrix(std::size_t n_classes, std::size_t k) {
    Tensor m({n_classes * k, n_classes}, 0.0);
    for (std::size_t i = 0; i < n_classes; ++i)
        for (std::size_t j = 0; j < k; ++j) m.at(i * k + j, i) = 1.0;
    return m;
}

double normalized_entropy(std::span<const double> l) {
    require_distribution(l, "normalized_entropy");
    return entropy_ratio(l);
}

double confidence(std::span<const double> l) {
    require_distribution(l, "confidence");
    return 1.0 - entropy_ratio(l);
}

double anchor_distance(std::span<const double> e, std::span<const double> a) {
    if (e.size() != a.size())
        throw ShapeError("anchor_distance: embedding has " + std::to_string(e.size()) + " dims, anchor has " +
                         std::to_string(a.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) s += (a[i] - e[i]) * (a[i] - e[i]);
    return std::sqrt(s);
}

Tensor similarity_scores(std::span<const double> e, const AnchorSet& anchors) {
    anchors.validate();
    std::vector<double> neg(anchors.count());
    for (std::size_t p = 0; p < neg.size(); ++p) neg[p] = -anchor_distance(e, anchors.anchors.row(p));
    return Tensor({anchors.n_classes, anchors.k}, softmax_temp(neg, anchors.delta));
}

LabelDistribution geometric_correction(std::span<const double> e, const AnchorSet& anchors) {
    const Tensor s = similarity_scores(e, anchors);
    LabelDistribution t(anchors.n_classes, 0.0);
    for (std::size_t i = 0; i < anchors.n_classes; ++i)
        for (std::size_t j = 0; j < anchors.k; ++j) t[i] += s.at(i, j);
    return t;
}

LabelDistribution fuse_corrections(std::span<const double> t_g, std::span<const double> t_a) {
    return mix(t_g, t_a, confidence(t_g), confidence(t_a));
}

LabelDistribution final_distribution(std::span<const double> l, std::span<const double> t) {
    return mix(l, t, confidence(l), confidence(t));
}

std::size_t predict(std::span<const double> dist) {
    if (dist.empty()) throw ContractError("predict: empty distribution");
    return static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
}

// --- ClassifierHead ----------------------------------------------------------

ClassifierHead::ClassifierHead(std::size_t in_dim, std::size_t n_classes, HeadConfig config, std::string prefix)
    : in_dim_(in_dim), n_classes_(n_classes), config_(config), prefix_(std::move(prefix)) {
    if (in_dim_ == 0 || n_classes_ < 2 || config_.hidden == 0)
        throw ConfigError("classifier head: widths must be positive and N_cls >= 2");
    if (config_.dropout < 0.0 || config_.dropout >= 1.0) throw ConfigError("classifier head: dropout must lie in [0, 1)");
}

void ClassifierHead::init_parameters(ParameterSet& params, std::mt19937_64& rng) const {
    std::size_t in = in_dim_;
    for (int i = 0; i < 2; ++i) {
        const auto p = prefix_ + "fc" + std::to_string(i + 1) + ".";
        params.add(p + "w", init_fan_in(in, config_.hidden, rng));
        params.add(p + "b", Tensor({config_.hidden}, 0.0));
        params.add(p + "bn.gain", Tensor({config_.hidden}, 1.0));
        params.add(p + "bn.bias", Tensor({config_.hidden}, 0.0));
        params.add(p + "bn.running_mean", Tensor({config_.hidden}, 0.0), false);
        params.add(p + "bn.running_var", Tensor({config_.hidden}, 1.0), false);
        in = config_.hidden;
    }
    params.add(prefix_ + "out.w", init_fan_in(config_.hidden, n_classes_, rng));
    params.add(prefix_ + "out.b", Tensor({n_classes_}, 0.0));
}

ClassifierHead::Bound ClassifierHead::bind(Tape& tape, ParameterSet& params) const {
    Bound b;
    for (int i = 0; i < 2; ++i) {
        const auto p = prefix_ + "fc" + std::to_string(i + 1) + ".";
        b.blocks[i] = {tape.leaf(params.get(p + "w")),       tape.leaf(params.get(p + "b")),
                       tape.leaf(params.get(p + "bn.gain")), tape.leaf(params.get(p + "bn.bias")),
                       &params.get(p + "bn.running_mean"),   &params.get(p + "bn.running_var")};
    }
    b.out_w = tape.leaf(params.get(prefix_ + "out.w"));
    b.out_b = tape.leaf(params.get(prefix_ + "out.b"));
    return b;
}

Var ClassifierHead::logits(const Bound& bound, Var e, std::mt19937_64& rng, bool training) const {
    if (e.cols() != in_dim_)
        throw ShapeError("classifier head: embedding width " + std::to_string(e.cols()) + " != " +
                         std::to_string(in_dim_));
    Var h = e;
    for (const auto& blk : bound.blocks) {
        h = ops::relu(ops::add_bias(ops::matmul(h, blk.w), blk.b));
        h = ops::dropout(h, config_.dropout, rng, training);
        h = ops::batch_norm(h, blk.gain, blk.bias, {blk.running_mean, blk.running_var}, training);
    }
    return ops::add_bias(ops::matmul(h, bound.out_w), bound.out_b);
}

std::vector<double> ClassifierHead::eval_logits(const ParameterSet& params, std::span<const double> e) const {
    if (e.size() != in_dim_)
        throw ShapeError("classifier head: embedding width " + std::to_string(e.size()) + " != " +
                         std::to_string(in_dim_));
    std::vector<double> h(e.begin(), e.end());
    for (int i = 0; i < 2; ++i) {
        const auto p = prefix_ + "fc" + std::to_string(i + 1) + ".";
        h = affine(h, params.get(p + "w"), params.get(p + "b"));
        const Tensor& g = params.get(p + "bn.gain");
        const Tensor& b = params.get(p + "bn.bias");
        const Tensor& rm = params.get(p + "bn.running_mean");
        const Tensor& rv = params.get(p + "bn.running_var");
        for (std::size_t c = 0; c < h.size(); ++c) {
            const double r = std::max(h[c], 0.0);
            h[c] = g[c] * (r - rm[c]) / std::sqrt(rv[c] + 1e-5) + b[c];
        }
    }
    return affine(h, params.get(prefix_ + "out.w"), params.get(prefix_ + "out.b"));
}

void ClassifierHead::recalibrate(ParameterSet& params, const Tensor& embeddings) const {
    if (embeddings.rank() != 2 || embeddings.cols() != in_dim_)
        throw ShapeError("classifier head: recalibration needs [n x " + std::to_string(in_dim_) + "] embeddings");
    const auto n = embeddings.rows();
    if (n < 2) throw ContractError("classifier head: recalibration needs at least two embeddings");
    std::vector<std::vector<double>> h;
    for (std::size_t r = 0; r < n; ++r) h.emplace_back(embeddings.row(r).begin(), embeddings.row(r).end());
    for (int i = 0; i < 2; ++i) {
        const auto p = prefix_ + "fc" + std::to_string(i + 1) + ".";
        for (auto& row : h) {
            row = affine(row, params.get(p + "w"), params.get(p + "b"));
            for (auto& v : row) v = std::max(v, 0.0);
        }
        const auto width = h.front().size();
        std::vector<double> mu(width, 0.0), var(width, 0.0);
        for (const auto& row : h)
            for (std::size_t c = 0; c < width; ++c) mu[c] += row[c] / static_cast<double>(n);
        for (const auto& row : h)
            for (std::size_t c = 0; c < width; ++c) var[c] += (row[c] - mu[c]) * (row[c] - mu[c]);
        Tensor& rm = params.get(p + "bn.running_mean");
        Tensor& rv = params.get(p + "bn.running_var");
        const Tensor& g = params.get(p + "bn.gain");
        const Tensor& b = params.get(p + "bn.bias");
        for (std::size_t c = 0; c < width; ++c) {
            rm[c] = mu[c];
            rv[c] = var[c] / static_cast<double>(n - 1);
        }
        for (auto& row : h)
            for (std::size_t c = 0; c < width; ++c) row[c] = g[c] * (row[c] - rm[c]) / std::sqrt(rv[c] + 1e-5) + b[c];
    }
}

LabelDistribution primary_distribution(std::span<const double> e, const ClassifierHead& head,
                                       const ParameterSet& params) {
    return softmax_temp(head.eval_logits(params, e), 1.0);
}

// --- AttentiveCorrector ------------------------------------------------------

AttentiveCorrector::AttentiveCorrector(std::size_t in_dim, std::size_t n_classes, CorrectorConfig config,
                                       std::string prefix)
    : in_dim_(in_dim), n_classes_(n_classes), config_(config), prefix_(std::move(prefix)) {
    if (config_.tokens == 0 || in_dim_ % config_.tokens != 0)
        throw ConfigError("attentive corrector: dim_e = " + std::to_string(in_dim_) + " cannot be split into " +
                          std::to_string(config_.tokens) + " tokens");
    if (config_.heads == 0 || d_model() % config_.heads != 0)
        throw ConfigError("attentive corrector: " + std::to_string(config_.heads) + " heads do not divide d_model = " +
                          std::to_string(d_model()));
    if (n_classes_ < 2) throw ConfigError("attentive corrector: N_cls must be at least 2");
}

void AttentiveCorrector::init_parameters(ParameterSet& params, std::mt19937_64& rng) const {
    const auto d = d_model();
    for (const char* n : {"wq", "wk", "wv", "wo"}) params.add(prefix_ + n, init_fan_in(d, d, rng));
    params.add(prefix_ + "out.w", init_fan_in(d, n_classes_, rng));
    params.add(prefix_ + "out.b", Tensor({n_classes_}, 0.0));
}

AttentiveCorrector::Bound AttentiveCorrector::bind(Tape& tape, const ParameterSet& params) const {
    auto leaf = [&](const std::string& n) { return tape.leaf(params.get(prefix_ + n)); };
    return {{leaf("wq"), leaf("wk"), leaf("wv"), leaf("wo")}, leaf("out.w"), leaf("out.b")};
}

Var AttentiveCorrector::distribution(const Bound& bound, Var e) const {
    if (e.cols() != in_dim_)
        throw ShapeError("attentive corrector: embedding width " + std::to_string(e.cols()) + " != " +
                         std::to_string(in_dim_));
    const auto batch = e.rows();
    std::vector<Var> pooled;
    pooled.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t idx[1] = {b};
        Var row = batch == 1 ? e : ops::gather_rows(e, idx);
        Var tokens = ops::reshape(row, {config_.tokens, d_model()});
        Var w_out = multi_head_attention(tokens, tokens, bound.attn, config_.heads);
        pooled.push_back(ops::mean_rows(w_out));
    }
    Var stacked = batch == 1 ? pooled.front() : ops::concat_rows(pooled);
    return ops::softmax_rows(ops::add_bias(ops::matmul(stacked, bound.out_w), bound.out_b));
}

CorrectorWeights corrector_weights(const ParameterSet& params, const AttentiveCorrector& corrector,
                                   const std::string& prefix) {
    return {{params.get(prefix + "wq"), params.get(prefix + "wk"), params.get(prefix + "wv"), params.get(prefix + "wo")},
            params.get(prefix + "out.w"),
            params.get(prefix + "out.b"),
            corrector.config().tokens,
            corrector.config().heads};
}

LabelDistribution attentive_correction(std::span<const double> e, const CorrectorWeights& w) {
    if (w.tokens == 0 || e.size() % w.tokens != 0)
        throw ConfigError("attentive_correction: embedding of " + std::to_string(e.size()) +
                          " entries cannot be split into " + std::to_string(w.tokens) + " tokens");
    const std::size_t n = w.tokens, dm = e.size() / n;
    if (w.heads == 0 || dm % w.heads != 0)
        throw ConfigError("attentive_correction: heads must divide d_model = " + std::to_string(dm));
    if (w.attn.wq.rows() != dm || w.attn.wq.cols() != dm || w.out_w.rows() != dm)
        throw ShapeError("attentive_correction: projection shapes do not match d_model = " + std::to_string(dm));

    const Tensor x({n, dm}, std::vector<double>(e.begin(), e.end()));
    const Tensor q = matmul(x, w.attn.wq), k = matmul(x, w.attn.wk), v = matmul(x, w.attn.wv);
    const std::size_t dh = dm / w.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor merged({n, dm}, 0.0);
    std::vector<double> logits(n);
    for (std::size_t h = 0; h < w.heads; ++h)
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += q.at(i, h * dh + c) * k.at(j, h * dh + c);
                logits[j] = s * scale;
            }
            const auto a = softmax_temp(logits, 1.0);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = 0; c < dh; ++c) merged.at(i, h * dh + c) += a[j] * v.at(j, h * dh + c);
        }
    const Tensor out = matmul(merged, w.attn.wo);
    std::vector<double> pooled(dm, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < dm; ++c) pooled[c] += out.at(i, c) / static_cast<double>(n);
    return softmax_temp(affine(pooled, w.out_w, w.out_b), 1.0);
}

// --- differentiable batch forms -----------------------------------------------

namespace ops {

Var pairwise_distance(Var e, Var a) {
    Tape& t = tape_of(e);
    const Tensor& ev = e.value();
    const Tensor& av = a.value();
    const auto B = ev.rows(), P = av.rows(), d = ev.cols();
    if (av.cols() != d) throw ShapeError("pairwise_distance: embedding and anchor widths differ");
    Tensor y({B, P});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < P; ++p) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = ev[b * d + c] - av[p * d + c];
                s += diff * diff;
            }
            y[b * P + p] = std::sqrt(s);
            if (t.tracking_branches()) t.note_branch((s > 0.0 ? 2 : 1) + 4 * (b * P + p));
        }
    const auto ie = e.id(), ia = a.id();
    return t.record(std::move(y), {e, a}, [ie, ia, B, P, d](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& dist = tp.value(self);
        const Tensor& ev = tp.value(ie);
        const Tensor& av = tp.value(ia);
        const bool need_e = tp.needs_grad(ie), need_a = tp.needs_grad(ia);
        Tensor* ge = need_e ? &tp.grad(ie) : nullptr;
        Tensor* ga = need_a ? &tp.grad(ia) : nullptr;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t p = 0; p < P; ++p) {
                const double dv = dist[b * P + p];
                if (dv == 0.0) continue;
                const double f = g[b * P + p] / dv;
                for (std::size_t c = 0; c < d; ++c) {
                    const double diff = (ev[b * d + c] - av[p * d + c]) * f;
                    if (ge) (*ge)[b * d + c] += diff;
                    if (ga) (*ga)[p * d + c] -= diff;
                }
            }
    });
}

Var row_confidence(Var p) {
    Tape& t = tape_of(p);
    const Tensor& pv = p.value();
    const auto B = pv.rows(), N = pv.cols();
    if (N < 2) throw ShapeError("row_confidence: need at least two classes");
    const double inv_log_n = 1.0 / std::log(static_cast<double>(N));
    Tensor y({B, 1});
    for (std::size_t b = 0; b < B; ++b) y[b] = 1.0 - entropy_ratio(pv.row(b));
    const auto ip = p.id();
    return t.record(std::move(y), {p}, [ip, B, N, inv_log_n](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& pv = tp.value(ip);
        Tensor& gp = tp.grad(ip);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < N; ++c)
                gp[b * N + c] += g[b] * (std::log(std::max(pv[b * N + c], kLogFloor)) + 1.0) * inv_log_n;
    });
}

Var confidence_mix(Var a, Var b, Var c_a, Var c_b) {
    Tape& t = tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape(av, bv, "confidence_mix");
    const auto B = av.rows(), N = av.cols();
    if (c_a.value().size() != B || c_b.value().size() != B)
        throw ShapeError("confidence_mix: one confidence per row is required");
    const Tensor& cav = c_a.value();
    const Tensor& cbv = c_b.value();
    Tensor y(av.shape());
    for (std::size_t r = 0; r < B; ++r) {
        const double s = cav[r] + cbv[r];
        const bool fallback = s < kMixFloor;
        if (t.tracking_branches()) t.note_branch((fallback ? 1 : 2) + 4 * r);
        for (std::size_t c = 0; c < N; ++c)
            y[r * N + c] = fallback ? 0.5 * (av[r * N + c] + bv[r * N + c])
                                    : (cav[r] * av[r * N + c] + cbv[r] * bv[r * N + c]) / s;
    }
    const auto ia = a.id(), ib = b.id(), ica = c_a.id(), icb = c_b.id();
    return t.record(std::move(y), {a, b, c_a, c_b}, [ia, ib, ica, icb, B, N](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.value(self);
        const Tensor& av = tp.value(ia);
        const Tensor& bv = tp.value(ib);
        const Tensor& cav = tp.value(ica);
        const Tensor& cbv = tp.value(icb);
        Tensor* ga = tp.needs_grad(ia) ? &tp.grad(ia) : nullptr;
        Tensor* gb = tp.needs_grad(ib) ? &tp.grad(ib) : nullptr;
        Tensor* gca = tp.needs_grad(ica) ? &tp.grad(ica) : nullptr;
        Tensor* gcb = tp.needs_grad(icb) ? &tp.grad(icb) : nullptr;
        for (std::size_t r = 0; r < B; ++r) {
            const double s = cav[r] + cbv[r];
            if (s < kMixFloor) {
                for (std::size_t c = 0; c < N; ++c) {
                    if (ga) (*ga)[r * N + c] += 0.5 * g[r * N + c];
                    if (gb) (*gb)[r * N + c] += 0.5 * g[r * N + c];
                }
                continue;
            }
            double dca = 0.0, dcb = 0.0;
            for (std::size_t c = 0; c < N; ++c) {
                const auto i = r * N + c;
                if (ga) (*ga)[i] += g[i] * cav[r] / s;
                if (gb) (*gb)[i] += g[i] * cbv[r] / s;
                dca += g[i] * (av[i] - y[i]) / s;
                dcb += g[i] * (bv[i] - y[i]) / s;
            }
            if (gca) (*gca)[r] += dca;
            if (gcb) (*gcb)[r] += dcb;
        }
    });
}

}  // namespace ops

ReliabilityOutputs reliability_forward(Var logits, Var e, Var anchor_var, const Tensor& labels, double delta,
                                       const AttentiveCorrector* corrector, const AttentiveCorrector::Bound* bound,
                                       ReliabilitySwitches switches) {
    if (!(delta > 0.0)) throw ConfigError("reliability: delta must be positive");
    Tape& t = tape_of(logits);
    ReliabilityOutputs out;
    out.l = ops::softmax_rows(logits);
    if (switches.anchors) {
        if (!anchor_var.valid()) throw ContractError("reliability: anchors enabled but none bound");
        if (labels.rows() != anchor_var.rows() || labels.cols() != logits.cols())
            throw ShapeError("reliability: anchor label matrix does not match anchors and classes");
        Var dist = ops::pairwise_distance(e, anchor_var);
        Var s = ops::softmax_rows(ops::scale(dist, -1.0), delta);
        out.t_g = ops::matmul(s, t.constant(labels));
    }
    if (switches.mhsa) {
        if (!corrector || !bound) throw ContractError("reliability: MHSA enabled but no corrector bound");
        out.t_a = corrector->distribution(*bound, e);
    }
    if (out.t_g.valid() && out.t_a.valid())
        out.t = ops::confidence_mix(out.t_g, out.t_a, ops::row_confidence(out.t_g), ops::row_confidence(out.t_a));
    else if (out.t_g.valid())
        out.t = out.t_g;
    else if (out.t_a.valid())
        out.t = out.t_a;

    out.l_final = out.t.valid()
                      ? ops::confidence_mix(out.l, out.t, ops::row_confidence(out.l), ops::row_confidence(out.t))
                      : out.l;
    return out;
}

}  // namespace relbal
