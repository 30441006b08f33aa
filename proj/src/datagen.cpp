#include "relbal/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "relbal/checkpoint.hpp"
#include "relbal/error.hpp"
#include "relbal/random.hpp"

namespace relbal {

namespace {

constexpr std::uint64_t kStreamBasis = 0xB45E;
constexpr std::uint64_t kStreamMeans = 0x3EA7;
constexpr std::uint64_t kStreamGroups = 0x6120;
constexpr std::uint64_t kStreamTrain = 0x7A1;
constexpr std::uint64_t kStreamTest = 0x7E57;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct RenderBasis {
    // Image: per latent dim, per channel, a separable cosine pattern.
    std::vector<double> fy, fx;      // [latent]
    std::vector<double> phase;       // [latent x C]
    std::vector<double> amplitude;   // [latent]
    std::vector<double> channel_bias;  // [C]
    // Landmarks: base positions and latent displacement directions.
    std::vector<double> base_y, base_x;  // [A]
    std::vector<double> disp_y, disp_x;  // [A x latent]
    double sigma = 4.0;
};

RenderBasis make_basis(const DatasetSpec& spec) {
    auto rng = make_rng(spec.seed, {kStreamBasis});
    const auto L = spec.latent_dim(), C = spec.image_channels, A = spec.landmark_channels;
    const double S = static_cast<double>(spec.source_size);
    std::uniform_int_distribution<int> freq(0, 2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    RenderBasis b;
    for (std::size_t j = 0; j < L; ++j) {
        b.fy.push_back(freq(rng));
        b.fx.push_back(freq(rng));
        b.amplitude.push_back(0.5 + 0.5 * unit(rng));
        for (std::size_t c = 0; c < C; ++c) b.phase.push_back(2.0 * std::numbers::pi * unit(rng));
    }
    for (std::size_t c = 0; c < C; ++c) b.channel_bias.push_back(0.3 * normal(rng));
    const double inv_sqrt_l = 1.0 / std::sqrt(static_cast<double>(L));
    for (std::size_t a = 0; a < A; ++a) {
        b.base_y.push_back(S * (0.3 + 0.4 * unit(rng)));
        b.base_x.push_back(S * (0.3 + 0.4 * unit(rng)));
        for (std::size_t j = 0; j < L; ++j) {
            b.disp_y.push_back(S / 12.0 * normal(rng) * inv_sqrt_l);
            b.disp_x.push_back(S / 12.0 * normal(rng) * inv_sqrt_l);
        }
    }
    b.sigma = S / 8.0;
    return b;
}

SyntheticSample render(const DatasetSpec& spec, const RenderBasis& basis, std::span<const double> z) {
    const auto S = spec.source_size, C = spec.image_channels, A = spec.landmark_channels;
    const auto L = spec.latent_dim();
    if (z.size() != L) throw ShapeError("render_sample: latent must have " + std::to_string(L) + " entries");
    const double two_pi = 2.0 * std::numbers::pi;
    const double mid = (static_cast<double>(S) - 1.0) / 2.0;
    const double gain = 1.0 / std::sqrt(static_cast<double>(L)) * 1.5;

    SyntheticSample s;
    s.image = Tensor({S, S, C}, 0.0);
    std::vector<double> logits(S * S * C, 0.0);
    std::vector<double> row(S * C), col(S);
    for (std::size_t j = 0; j < L; ++j) {
        const double w = z[j] * basis.amplitude[j] * gain;
        if (w == 0.0) continue;
        for (std::size_t y = 0; y < S; ++y) {
            const double vy = two_pi * basis.fy[j] * static_cast<double>(y) / static_cast<double>(S);
            for (std::size_t c = 0; c < C; ++c) row[y * C + c] = w * std::cos(vy + basis.phase[j * C + c]);
        }
        // Even in x about the image centre, so horizontal flips keep the pattern.
        for (std::size_t x = 0; x < S; ++x)
            col[x] = std::cos(two_pi * basis.fx[j] * (static_cast<double>(x) - mid) / static_cast<double>(S));
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x)
                for (std::size_t c = 0; c < C; ++c) logits[(y * S + x) * C + c] += row[y * C + c] * col[x];
    }
    for (std::size_t i = 0; i < logits.size(); ++i) s.image[i] = sigmoid(logits[i] + basis.channel_bias[i % C]);

    s.landmark = Tensor({A, S, S}, 0.0);
    const double inv_two_sigma2 = 1.0 / (2.0 * basis.sigma * basis.sigma);
    const double hi = static_cast<double>(S) - 1.0;
    for (std::size_t a = 0; a < A; ++a) {
        double cy = basis.base_y[a], cx = basis.base_x[a];
        for (std::size_t j = 0; j < L; ++j) {
            cy += z[j] * basis.disp_y[a * L + j];
            cx += z[j] * basis.disp_x[a * L + j];
        }
        cy = std::clamp(cy, 0.0, hi);
        cx = std::clamp(cx, 0.0, hi);
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x) {
                const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                s.landmark[(a * S + y) * S + x] = std::exp(-(dy * dy + dx * dx) * inv_two_sigma2);
            }
    }
    return s;
}

Tensor make_class_means(const DatasetSpec& spec) {
    const auto N = spec.n_classes, L = spec.latent_dim();
    Tensor mu({N, L}, 0.0);
    for (std::size_t c = 0; c < N; ++c) mu.at(c, c) = spec.separation;
    for (const auto& p : spec.confusion_pairs)
        for (std::size_t j = 0; j < L; ++j)
            mu.at(p.b, j) = (1.0 - spec.confusion_strength) * mu.at(p.b, j) + spec.confusion_strength * mu.at(p.a, j);
    return mu;
}

Tensor make_group_offsets(const DatasetSpec& spec) {
    auto rng = make_rng(spec.seed, {kStreamGroups});
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto G = spec.n_classes * spec.groups_per_class, L = spec.latent_dim();
    Tensor off({G, L}, 0.0);
    for (auto& v : off.values()) v = spec.group_scale * spec.spread * normal(rng);
    return off;
}

Dataset generate(const DatasetSpec& spec, const std::vector<std::size_t>& counts, std::uint64_t stream) {
    spec.validate();
    const auto L = spec.latent_dim();
    const auto basis = make_basis(spec);
    Dataset ds;
    ds.spec = spec;
    ds.class_means = make_class_means(spec);
    const Tensor offsets = make_group_offsets(spec);
    std::size_t total = 0;
    for (auto c : counts) total += c;
    ds.latents = Tensor({total, L}, 0.0);
    ds.samples.reserve(total);
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec.n_classes; ++c)
        for (std::size_t i = 0; i < counts[c]; ++i, ++row) {
            auto rng = make_rng(spec.seed, {stream, c, i});
            std::normal_distribution<double> normal(0.0, 1.0);
            const std::size_t group = c * spec.groups_per_class + i % spec.groups_per_class;
            auto z = ds.latents.row(row);
            for (std::size_t j = 0; j < L; ++j)
                z[j] = ds.class_means.at(c, j) + offsets.at(group, j) + spec.spread * normal(rng);
            SyntheticSample s = render(spec, basis, z);
            s.label = c;
            s.group = group;
            ds.samples.push_back(std::move(s));
        }
    return ds;
}

double bilinear(const double* plane, std::size_t S, std::size_t stride, double y, double x) {
    const double hi = static_cast<double>(S) - 1.0;
    y = std::clamp(y, 0.0, hi);
    x = std::clamp(x, 0.0, hi);
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const auto y1 = std::min(y0 + 1, S - 1), x1 = std::min(x0 + 1, S - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    auto at = [&](std::size_t yy, std::size_t xx) { return plane[(yy * S + xx) * stride]; };
    return (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
}

struct Geometry {
    std::size_t crop, oy, ox;
    bool flip;
    double cos_t, sin_t;
};

SyntheticSample warp(const SyntheticSample& s, const Geometry& g, std::span<const double> gain,
                     std::span<const double> offset) {
    const auto S = s.image.shape()[0], C = s.image.shape()[2];
    const auto A = s.landmark.shape()[0];
    const auto n = g.crop;
    const double mid = (static_cast<double>(n) - 1.0) / 2.0;
    SyntheticSample out;
    out.label = s.label;
    out.group = s.group;
    out.image = Tensor({n, n, C});
    out.landmark = Tensor({A, n, n});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double xf = g.flip ? static_cast<double>(n - 1 - x) : static_cast<double>(x);
            const double dy = static_cast<double>(y) - mid, dx = xf - mid;
            const double sy = mid + g.sin_t * dx + g.cos_t * dy + static_cast<double>(g.oy);
            const double sx = mid + g.cos_t * dx - g.sin_t * dy + static_cast<double>(g.ox);
            for (std::size_t c = 0; c < C; ++c) {
                const double v = bilinear(s.image.data() + c, S, C, sy, sx) * gain[c] + offset[c];
                out.image[(y * n + x) * C + c] = std::clamp(v, 0.0, 1.0);
            }
            for (std::size_t a = 0; a < A; ++a)
                out.landmark[(a * n + y) * n + x] = std::clamp(bilinear(s.landmark.data() + a * S * S, S, 1, sy, sx), 0.0, 1.0);
        }
    return out;
}

void check_streams(const SyntheticSample& s) {
    if (s.image.rank() != 3 || s.landmark.rank() != 3 || s.image.shape()[0] != s.image.shape()[1] ||
        s.landmark.shape()[1] != s.image.shape()[0] || s.landmark.shape()[2] != s.image.shape()[1])
        throw ShapeError("sample streams must be [S x S x C] and [A_c x S x S]");
}

// --- little-endian double arrays ---

void append_doubles(std::vector<std::uint8_t>& out, std::span<const double> v) {
    const auto start = out.size();
    out.resize(start + v.size() * 8);
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(v[i]);
        for (int b = 0; b < 8; ++b) out[start + i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
}

std::vector<double> parse_doubles(std::span<const std::uint8_t> bytes, std::size_t expected, const std::string& what) {
    if (bytes.size() != expected * 8)
        throw FormatError(what + ": expected " + std::to_string(expected * 8) + " bytes, found " +
                          std::to_string(bytes.size()));
    std::vector<double> out(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    write_file_atomic(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::size_t> read_int_column(const std::filesystem::path& p, const std::string& header) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    std::string line;
    if (!std::getline(in, line) || line != header) throw FormatError(p.string() + ": expected header '" + header + "'");
    std::vector<std::size_t> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            std::size_t pos = 0;
            out.push_back(std::stoull(line, &pos));
            if (pos != line.size()) throw std::invalid_argument(line);
        } catch (const std::exception&) {
            throw FormatError(p.string() + ": invalid integer '" + line + "'");
        }
    }
    return out;
}

}  // namespace

void DatasetSpec::validate() const {
    if (n_classes == 0) throw ConfigError("dataset: number of classes must be positive");
    if (n_classes < 2) throw ConfigError("dataset: at least two classes are required");
    if (samples_per_class == 0) throw ConfigError("dataset: samples per class must be positive");
    if (!(separation > 0.0)) throw ConfigError("dataset: separation must be positive");
    if (!(spread >= 0.0)) throw ConfigError("dataset: spread must be nonnegative");
    if (!(confusion_strength >= 0.0 && confusion_strength <= 1.0))
        throw ConfigError("dataset: confusion strength must lie in [0, 1]");
    for (const auto& p : confusion_pairs)
        if (p.a >= n_classes || p.b >= n_classes || p.a == p.b)
            throw ConfigError("dataset: confusion pair " + std::to_string(p.a) + ":" + std::to_string(p.b) +
                              " is not a pair of distinct classes");
    if (!(imbalance >= 1.0)) throw ConfigError("dataset: imbalance ratio must be >= 1");
    if (groups_per_class == 0) throw ConfigError("dataset: groups per class must be positive");
    if (!(group_scale >= 0.0)) throw ConfigError("dataset: group scale must be nonnegative");
    if (source_size < 2 || image_channels == 0 || landmark_channels == 0)
        throw ConfigError("dataset: stream sizes must be positive");
}

std::vector<std::size_t> DatasetSpec::class_counts() const {
    std::vector<std::size_t> counts(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        const double frac = n_classes == 1 ? 0.0 : static_cast<double>(c) / static_cast<double>(n_classes - 1);
        const double n = static_cast<double>(samples_per_class) * std::pow(imbalance, -frac);
        counts[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n)));
    }
    return counts;
}

std::vector<std::size_t> Dataset::labels() const {
    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
}

std::vector<std::size_t> Dataset::groups() const {
    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.group);
    return out;
}

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    return generate(spec, spec.class_counts(), kStreamTrain);
}

Dataset generate_test_split(const DatasetSpec& spec, std::size_t per_class) {
    spec.validate();
    if (per_class == 0) throw ConfigError("test split: samples per class must be positive");
    return generate(spec, std::vector<std::size_t>(spec.n_classes, per_class), kStreamTest);
}

SyntheticSample render_sample(const DatasetSpec& spec, std::span<const double> latent) {
    spec.validate();
    return render(spec, make_basis(spec), latent);
}

SyntheticSample augment(const SyntheticSample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
    check_streams(s);
    const auto S = s.image.shape()[0], C = s.image.shape()[2];
    if (cfg.crop == 0 || cfg.crop > S) throw ConfigError("augment: crop must lie in [1, source size]");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Geometry g{cfg.crop, (S - cfg.crop) / 2, (S - cfg.crop) / 2, false, 1.0, 0.0};
    if (!cfg.center_crop) {
        std::uniform_int_distribution<std::size_t> off(0, S - cfg.crop);
        g.oy = off(rng);
        g.ox = off(rng);
    }
    g.flip = cfg.flip_probability > 0.0 && unit(rng) < cfg.flip_probability;
    if (cfg.max_rotation_deg > 0.0) {
        const double theta = (2.0 * unit(rng) - 1.0) * cfg.max_rotation_deg * std::numbers::pi / 180.0;
        g.cos_t = std::cos(theta);
        g.sin_t = std::sin(theta);
    }
    std::vector<double> gain(C, 1.0), offset(C, 0.0);
    if (cfg.jitter > 0.0)
        for (std::size_t c = 0; c < C; ++c) {
            gain[c] = 1.0 + cfg.jitter * (2.0 * unit(rng) - 1.0);
            offset[c] = cfg.jitter * (2.0 * unit(rng) - 1.0);
        }
    return warp(s, g, gain, offset);
}

SyntheticSample center_crop(const SyntheticSample& s, std::size_t crop) {
    check_streams(s);
    const auto S = s.image.shape()[0];
    if (crop == 0 || crop > S) throw ConfigError("center_crop: crop must lie in [1, source size]");
    const auto C = s.image.shape()[2];
    return warp(s, {crop, (S - crop) / 2, (S - crop) / 2, false, 1.0, 0.0}, std::vector<double>(C, 1.0),
                std::vector<double>(C, 0.0));
}

SyntheticSample flip_horizontal(const SyntheticSample& s) {
    check_streams(s);
    const auto S = s.image.shape()[0], C = s.image.shape()[2], A = s.landmark.shape()[0];
    SyntheticSample out = s;
    for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
            for (std::size_t c = 0; c < C; ++c) out.image[(y * S + x) * C + c] = s.image[(y * S + (S - 1 - x)) * C + c];
            for (std::size_t a = 0; a < A; ++a)
                out.landmark[(a * S + y) * S + x] = s.landmark[(a * S + y) * S + (S - 1 - x)];
        }
    return out;
}

void RefinementConfig::validate() const {
    if (b == 0) throw ConfigError("refinement: B must be at least 1");
    if (n_pg < b) throw ConfigError("refinement: N_pg (" + std::to_string(n_pg) + ") must be >= B (" + std::to_string(b) + ")");
}

std::vector<std::size_t> refine_batch(std::span<const std::size_t> labels, std::span<const std::size_t> groups,
                                      std::size_t n_classes, const RefinementConfig& rc, std::mt19937_64& rng,
                                      std::vector<std::string>* warnings) {
    rc.validate();
    if (labels.size() != groups.size()) throw ShapeError("refine_batch: labels and groups differ in length");
    std::map<std::size_t, std::vector<std::size_t>> by_group;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= n_classes) throw DataError("refine_batch: label " + std::to_string(labels[i]) + " out of range");
        by_group[groups[i]].push_back(i);
    }
    std::vector<std::vector<std::size_t>> pool(n_classes);
    for (auto& [g, members] : by_group) {
        std::shuffle(members.begin(), members.end(), rng);
        const auto keep = std::min(rc.n_pg, members.size());
        for (std::size_t i = 0; i < keep; ++i) pool[labels[members[i]]].push_back(members[i]);
    }
    std::vector<std::size_t> batch;
    batch.reserve(rc.b * n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        auto& cand = pool[c];
        if (cand.empty()) throw DataError("refine_batch: class " + std::to_string(c) + " has no samples");
        std::sort(cand.begin(), cand.end());
        if (cand.size() >= rc.b) {
            std::shuffle(cand.begin(), cand.end(), rng);
            batch.insert(batch.end(), cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(rc.b));
        } else {
            if (warnings)
                warnings->push_back("refine_batch: class " + std::to_string(c) + " has " + std::to_string(cand.size()) +
                                    " samples for B = " + std::to_string(rc.b) + "; sampling with replacement");
            std::uniform_int_distribution<std::size_t> pick(0, cand.size() - 1);
            for (std::size_t i = 0; i < rc.b; ++i) batch.push_back(cand[pick(rng)]);
        }
    }
    std::shuffle(batch.begin(), batch.end(), rng);
    return batch;
}

NoisyLabels inject_noise(std::span<const std::size_t> labels, std::size_t n_classes, double rate, std::mt19937_64& rng) {
    if (!(rate >= 0.0 && rate <= 0.5)) throw ConfigError("inject_noise: rate must lie in [0, 0.5]");
    if (n_classes < 2) throw ConfigError("inject_noise: at least two classes are required");
    NoisyLabels out{{labels.begin(), labels.end()}, std::vector<bool>(labels.size(), false)};
    if (rate == 0.0) return out;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> other(0, n_classes - 2);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= n_classes) throw ContractError("inject_noise: label out of range");
        if (unit(rng) < rate) {
            const auto r = other(rng);
            out.labels[i] = r >= labels[i] ? r + 1 : r;
            out.flipped[i] = true;
        }
    }
    return out;
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t n_classes) {
    if (labels.empty()) throw ContractError("one_hot: no labels");
    Tensor y({labels.size(), n_classes}, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= n_classes) throw ContractError("one_hot: label out of range");
        y.at(i, labels[i]) = 1.0;
    }
    return y;
}

Tensor smooth_labels(const Tensor& one_hot, double term) {
    if (!(term >= 0.0 && term <= 50.0)) throw ConfigError("smooth_labels: term must lie in [0, 50]");
    const double alpha = term / 100.0;
    const double uniform = alpha / static_cast<double>(one_hot.cols());
    Tensor out(one_hot.shape());
    for (std::size_t i = 0; i < one_hot.size(); ++i) out[i] = (1.0 - alpha) * one_hot[i] + uniform;
    return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const auto& spec = ds.spec;
    if (ds.samples.empty()) throw DataError("save_dataset: empty dataset");
    const auto& first = ds.samples.front();

    nlohmann::json m;
    m["format"] = "relbal-dataset";
    m["version"] = 1;
    m["count"] = ds.size();
    m["image_shape"] = first.image.shape();
    m["landmark_shape"] = first.landmark.shape();
    m["latent_dim"] = ds.latents.cols();
    nlohmann::json s;
    s["n_classes"] = spec.n_classes;
    s["samples_per_class"] = spec.samples_per_class;
    s["separation"] = spec.separation;
    s["spread"] = spec.spread;
    s["confusion_strength"] = spec.confusion_strength;
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : spec.confusion_pairs) pairs.push_back({p.a, p.b});
    s["confusion_pairs"] = pairs;
    s["imbalance"] = spec.imbalance;
    s["groups_per_class"] = spec.groups_per_class;
    s["group_scale"] = spec.group_scale;
    s["latent_extra"] = spec.latent_extra;
    s["source_size"] = spec.source_size;
    s["image_channels"] = spec.image_channels;
    s["landmark_channels"] = spec.landmark_channels;
    s["seed"] = spec.seed;
    m["spec"] = s;

    std::vector<std::uint8_t> image, landmark, latent;
    std::ostringstream labels, groups;
    labels << "label\n";
    groups << "group\n";
    for (const auto& smp : ds.samples) {
        if (smp.image.shape() != first.image.shape() || smp.landmark.shape() != first.landmark.shape())
            throw ShapeError("save_dataset: samples have inconsistent shapes");
        append_doubles(image, smp.image.values());
        append_doubles(landmark, smp.landmark.values());
        labels << smp.label << '\n';
        groups << smp.group << '\n';
    }
    append_doubles(latent, ds.latents.values());
    write_file_atomic(dir / "image.f64", image);
    write_file_atomic(dir / "landmark.f64", landmark);
    write_file_atomic(dir / "latent.f64", latent);
    write_text(dir / "labels.csv", labels.str());
    write_text(dir / "groups.csv", groups.str());
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto bytes = read_file_bytes(dir / "manifest.json");
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    Dataset ds;
    try {
        if (m.at("format") != "relbal-dataset" || m.at("version") != 1)
            throw FormatError("manifest.json: unsupported dataset format");
        const auto& s = m.at("spec");
        auto& spec = ds.spec;
        spec.n_classes = s.at("n_classes");
        spec.samples_per_class = s.at("samples_per_class");
        spec.separation = s.at("separation");
        spec.spread = s.at("spread");
        spec.confusion_strength = s.at("confusion_strength");
        for (const auto& p : s.at("confusion_pairs")) spec.confusion_pairs.push_back({p.at(0), p.at(1)});
        spec.imbalance = s.at("imbalance");
        spec.groups_per_class = s.at("groups_per_class");
        spec.group_scale = s.at("group_scale");
        spec.latent_extra = s.at("latent_extra");
        spec.source_size = s.at("source_size");
        spec.image_channels = s.at("image_channels");
        spec.landmark_channels = s.at("landmark_channels");
        spec.seed = s.at("seed");
        spec.validate();

        const std::size_t n = m.at("count");
        const Shape ishape = m.at("image_shape").get<Shape>();
        const Shape lshape = m.at("landmark_shape").get<Shape>();
        const std::size_t ldim = m.at("latent_dim");
        const auto isz = shape_size(ishape), lsz = shape_size(lshape);
        const auto image = parse_doubles(read_file_bytes(dir / "image.f64"), n * isz, "image.f64");
        const auto landmark = parse_doubles(read_file_bytes(dir / "landmark.f64"), n * lsz, "landmark.f64");
        ds.latents = Tensor({n, ldim}, parse_doubles(read_file_bytes(dir / "latent.f64"), n * ldim, "latent.f64"));
        const auto labels = read_int_column(dir / "labels.csv", "label");
        const auto groups = read_int_column(dir / "groups.csv", "group");
        if (labels.size() != n || groups.size() != n) throw FormatError("dataset: label/group counts do not match manifest");
        ds.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto& smp = ds.samples[i];
            smp.image = Tensor(ishape, std::vector<double>(image.begin() + i * isz, image.begin() + (i + 1) * isz));
            smp.landmark = Tensor(lshape, std::vector<double>(landmark.begin() + i * lsz, landmark.begin() + (i + 1) * lsz));
            if (labels[i] >= spec.n_classes) throw FormatError("labels.csv: label out of range");
            smp.label = labels[i];
            smp.group = groups[i];
        }
        ds.class_means = make_class_means(spec);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    return ds;
}

}  // namespace relbal
