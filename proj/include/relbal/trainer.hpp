#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "relbal/config.hpp"
#include "relbal/metrics.hpp"
#include "relbal/model.hpp"

namespace relbal {

struct EpochLog {
    std::size_t epoch = 0;
    double learning_rate = 0.0;
    double total = 0.0;
    double cls = 0.0;
    double anchor = 0.0;
    double center = 0.0;
    std::size_t steps = 0;
};

struct RunRecord {
    std::uint64_t config_hash = 0;
    std::string code_version = kCodeVersion;
    std::uint64_t seed = 0;
    std::vector<EpochLog> epochs;
    EvalReport eval;
    double wall_clock_seconds = 0.0;
    std::vector<std::string> warnings;
};

// `include_timing` = false drops the wall-clock field, leaving only values
// that (config, seed) determine.
std::string run_record_json(const RunRecord& r, bool include_timing = true);

struct TrainOptions {
    bool write_outputs = true;  // checkpoint, run record and eval report under output_dir
    std::ostream* log = nullptr;
};

struct TrainResult {
    ParameterSet params;
    RunRecord record;
};

// The dataset is loaded from data.dir or generated, training labels are
// corrupted at noise.rate, and evaluation uses a clean balanced split.
TrainResult train(const ExperimentConfig& cfg, const TrainOptions& options = {});

struct EvalDetail {
    EvalReport report;
    Tensor embeddings;  // [n x dim_e]
    Tensor primary;     // l, [n x N_cls]
    Tensor corrected;   // L_final, [n x N_cls]
    std::vector<std::size_t> preds;
    std::vector<std::size_t> labels;
};

EvalDetail evaluate_detail(const ExperimentConfig& cfg, const ParameterSet& params);
EvalReport evaluate(const ExperimentConfig& cfg, const ParameterSet& params);
// Loads the checkpoint, checks it against the config geometry, evaluates and
// writes eval_report.json and confusion.csv under output_dir.
EvalReport evaluate_checkpoint(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint);

Dataset load_or_generate(const ExperimentConfig& cfg);

}  // namespace relbal
