#pragma once

#include <functional>
#include <string>
#include <vector>

#include "relbal/config.hpp"
#include "relbal/metrics.hpp"

namespace relbal {

enum class Sweep { k, noise, smoothing, loss_setup, rb_setup, lambda };

Sweep parse_sweep(const std::string& name);
std::string sweep_name(Sweep s);

// One table cell: a row label, a column label and the config it trains.
struct AblationCell {
    std::string row;
    std::string column;
    ExperimentConfig config;
};

struct CellResult {
    std::string row;
    std::string column;
    std::vector<std::uint64_t> seeds;
    std::vector<double> accuracy;  // per replicate; NaN where the run failed
    std::vector<double> macro_f1;
    std::vector<std::string> errors;  // per replicate; empty when the run succeeded
    bool ok() const;
    double mean_accuracy() const;
    double mean_f1() const;
};

struct AblationTable {
    Sweep sweep = Sweep::k;
    std::vector<CellResult> cells;
    std::string csv;        // wide table, one column per swept value
    std::string cells_csv;  // one line per (cell, replicate)
};

// Evaluates one configuration; the default trains and evaluates it.
using CellRunner = std::function<EvalReport(const ExperimentConfig&)>;

std::vector<AblationCell> plan_ablation(const ExperimentConfig& base, Sweep sweep);
// Seed of replicate r of cell `index`: a hash of the base seed and the cell
// coordinates, or of the base seed and r alone when ablate.paired is set.
std::uint64_t cell_seed(const ExperimentConfig& base, Sweep sweep, std::size_t index, std::size_t replicate);
// Runs every cell for ablate.seeds replicates on ablate.workers threads. A
// failing run is recorded with an error marker and the sweep continues.
AblationTable run_ablation(const ExperimentConfig& base, Sweep sweep, const CellRunner& runner = {});
// Writes ablation_<sweep>.csv and ablation_<sweep>_cells.csv under output_dir.
void write_ablation(const ExperimentConfig& base, const AblationTable& table);

}  // namespace relbal
