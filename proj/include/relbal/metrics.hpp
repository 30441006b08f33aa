#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "relbal/tensor.hpp"

namespace relbal {

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);
// Unweighted mean of per-class F1; a class with no true, predicted or
// labelled members contributes 0.
double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t n_classes);
// Unnormalised counts, (true, predicted).
Tensor confusion_counts(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t n_classes);
// Rows normalised by support; rows without support stay zero.
Tensor confusion_matrix(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t n_classes);

// Clusters are the distinct labels present. Throws NumericError when two
// centroids coincide.
double davies_bouldin(const Tensor& embeddings, std::span<const std::size_t> labels);
// Returns +infinity (with a message in `diagnostic`) when every point sits on
// its centroid.
double calinski_harabasz(const Tensor& embeddings, std::span<const std::size_t> labels,
                         std::string* diagnostic = nullptr);

// Population standard deviation of all entries of each batch.
std::pair<double, double> distribution_spread(const Tensor& primary, const Tensor& corrected);

struct EvalReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    Tensor confusion;
    double db_score = 0.0;
    double ch_score = 0.0;
    double primary_std = 0.0;
    double corrected_std = 0.0;
    std::size_t n_samples = 0;
    std::size_t n_classes = 0;
    std::string diagnostics;
};

inline constexpr std::array<std::string_view, 10> kEvalReportKeys = {
    "accuracy", "macro_f1", "confusion", "db_score", "ch_score", "primary_std",
    "corrected_std", "n_samples", "n_classes", "diagnostics"};

// JSON text with exactly kEvalReportKeys; non-finite scores are written as null.
std::string eval_report_json(const EvalReport& r);
std::string confusion_csv(const Tensor& confusion);

}  // namespace relbal
