#include "relbal/metrics.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "relbal/error.hpp"

namespace relbal {

namespace {

void check_pair(std::span<const std::size_t> preds, std::span<const std::size_t> labels, const char* what) {
    if (preds.empty() || labels.empty()) throw ContractError(std::string(what) + ": empty input");
    if (preds.size() != labels.size()) throw ShapeError(std::string(what) + ": predictions and labels differ in length");
}

void check_range(std::span<const std::size_t> v, std::size_t n, const char* what) {
    for (auto x : v)
        if (x >= n) throw ContractError(std::string(what) + ": class " + std::to_string(x) + " out of range");
}

struct Clusters {
    std::vector<std::size_t> ids;        // distinct labels, ascending
    std::vector<std::size_t> member_of;  // per point, index into ids
    Tensor centroids;                    // [k x d]
    std::vector<std::size_t> sizes;
};

Clusters cluster(const Tensor& x, std::span<const std::size_t> labels, const char* what) {
    if (x.rows() != labels.size()) throw ShapeError(std::string(what) + ": embeddings and labels differ in length");
    std::map<std::size_t, std::size_t> index;
    for (auto y : labels) index.emplace(y, 0);
    if (index.size() < 2) throw ContractError(std::string(what) + ": at least two clusters are required");
    Clusters c;
    for (auto& [label, slot] : index) {
        slot = c.ids.size();
        c.ids.push_back(label);
    }
    const auto k = c.ids.size(), d = x.cols();
    c.centroids = Tensor({k, d}, 0.0);
    c.sizes.assign(k, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto m = index[labels[i]];
        c.member_of.push_back(m);
        ++c.sizes[m];
        for (std::size_t j = 0; j < d; ++j) c.centroids.at(m, j) += x.at(i, j);
    }
    for (std::size_t m = 0; m < k; ++m)
        for (std::size_t j = 0; j < d; ++j) c.centroids.at(m, j) /= static_cast<double>(c.sizes[m]);
    return c;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

double pooled_std(const Tensor& t) {
    if (t.empty()) throw ContractError("distribution_spread: empty batch");
    double mean = 0.0;
    for (double v : t.values()) mean += v;
    mean /= static_cast<double>(t.size());
    double var = 0.0;
    for (double v : t.values()) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(t.size()));
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
    check_pair(preds, labels, "accuracy");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

Tensor confusion_counts(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t n_classes) {
    check_pair(preds, labels, "confusion_matrix");
    check_range(preds, n_classes, "confusion_matrix");
    check_range(labels, n_classes, "confusion_matrix");
    Tensor m({n_classes, n_classes}, 0.0);
    for (std::size_t i = 0; i < preds.size(); ++i) m.at(labels[i], preds[i]) += 1.0;
    return m;
}

Tensor confusion_matrix(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t n_classes) {
    Tensor m = confusion_counts(preds, labels, n_classes);
    for (std::size_t r = 0; r < n_classes; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n_classes; ++c) s += m.at(r, c);
        if (s > 0.0)
            for (std::size_t c = 0; c < n_classes; ++c) m.at(r, c) /= s;
    }
    return m;
}

double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t n_classes) {
    const Tensor m = confusion_counts(preds, labels, n_classes);
    double total = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        double tp = m.at(c, c), fp = 0.0, fn = 0.0;
        for (std::size_t o = 0; o < n_classes; ++o) {
            if (o == c) continue;
            fp += m.at(o, c);
            fn += m.at(c, o);
        }
        const double denom = 2.0 * tp + fp + fn;
        total += denom > 0.0 ? 2.0 * tp / denom : 0.0;
    }
    return total / static_cast<double>(n_classes);
}

double davies_bouldin(const Tensor& embeddings, std::span<const std::size_t> labels) {
    const Clusters c = cluster(embeddings, labels, "davies_bouldin");
    const auto k = c.ids.size();
    std::vector<double> sigma(k, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i)
        sigma[c.member_of[i]] += std::sqrt(squared_distance(embeddings.row(i), c.centroids.row(c.member_of[i])));
    for (std::size_t m = 0; m < k; ++m) sigma[m] /= static_cast<double>(c.sizes[m]);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double worst = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            const double d = std::sqrt(squared_distance(c.centroids.row(i), c.centroids.row(j)));
            if (d == 0.0)
                throw NumericError("davies_bouldin: centroids of clusters " + std::to_string(c.ids[i]) + " and " +
                                   std::to_string(c.ids[j]) + " coincide");
            worst = std::max(worst, (sigma[i] + sigma[j]) / d);
        }
        total += worst;
    }
    return total / static_cast<double>(k);
}

double calinski_harabasz(const Tensor& embeddings, std::span<const std::size_t> labels, std::string* diagnostic) {
    const Clusters c = cluster(embeddings, labels, "calinski_harabasz");
    const auto k = c.ids.size(), n = labels.size(), d = embeddings.cols();
    if (n <= k) throw ContractError("calinski_harabasz: need more points than clusters");
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += embeddings.at(i, j) / static_cast<double>(n);
    double between = 0.0, within = 0.0;
    for (std::size_t m = 0; m < k; ++m) between += static_cast<double>(c.sizes[m]) * squared_distance(c.centroids.row(m), mean);
    for (std::size_t i = 0; i < n; ++i) within += squared_distance(embeddings.row(i), c.centroids.row(c.member_of[i]));
    if (within == 0.0) {
        if (diagnostic) *diagnostic = "calinski_harabasz: zero within-cluster dispersion, score is +inf";
        return std::numeric_limits<double>::infinity();
    }
    return (between / static_cast<double>(k - 1)) / (within / static_cast<double>(n - k));
}

std::pair<double, double> distribution_spread(const Tensor& primary, const Tensor& corrected) {
    require_same_shape(primary, corrected, "distribution_spread");
    return {pooled_std(primary), pooled_std(corrected)};
}

std::string eval_report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["accuracy"] = r.accuracy;
    j["macro_f1"] = r.macro_f1;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.confusion.rows(); ++i) {
        auto row = r.confusion.row(i);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["confusion"] = rows;
    j["db_score"] = finite_or_null(r.db_score);
    j["ch_score"] = finite_or_null(r.ch_score);
    j["primary_std"] = r.primary_std;
    j["corrected_std"] = r.corrected_std;
    j["n_samples"] = r.n_samples;
    j["n_classes"] = r.n_classes;
    j["diagnostics"] = r.diagnostics;
    return j.dump(2) + "\n";
}

std::string confusion_csv(const Tensor& confusion) {
    std::ostringstream out;
    out.precision(17);
    out << "true";
    for (std::size_t c = 0; c < confusion.cols(); ++c) out << ",pred_" << c;
    out << '\n';
    for (std::size_t r = 0; r < confusion.rows(); ++r) {
        out << r;
        for (std::size_t c = 0; c < confusion.cols(); ++c) out << ',' << confusion.at(r, c);
        out << '\n';
    }
    return out.str();
}

}  // namespace relbal
