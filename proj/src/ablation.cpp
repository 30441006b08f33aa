#include "relbal/ablation.hpp"

#include <atomic>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "relbal/checkpoint.hpp"
#include "relbal/error.hpp"
#include "relbal/random.hpp"
#include "relbal/trainer.hpp"

namespace relbal {

namespace {

constexpr const char* kErrorMarker = "ERROR";

std::string number(double v) {
    std::ostringstream o;
    o << std::setprecision(12) << v;
    return o.str();
}

std::string percent(double v) {
    if (!std::isfinite(v)) return kErrorMarker;
    std::ostringstream o;
    o << std::fixed << std::setprecision(2) << 100.0 * v;
    return o.str();
}

std::size_t as_count(double v, const char* what) {
    if (!(v >= 0.0) || v != std::floor(v)) throw ConfigError(std::string("ablation: ") + what + " must be a whole number");
    return static_cast<std::size_t>(v);
}

std::vector<double> table_rows_k(const ExperimentConfig& base) {
    return base.ablate.table_k.empty() ? std::vector<double>{static_cast<double>(base.rb.k)} : base.ablate.table_k;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

const std::map<std::string, CellResult*> index_cells(std::vector<CellResult>& cells) {
    std::map<std::string, CellResult*> m;
    for (auto& c : cells) m[c.row + "\x1f" + c.column] = &c;
    return m;
}

std::string wide_csv(Sweep sweep, const ExperimentConfig& base, std::vector<CellResult>& cells) {
    const auto at = index_cells(cells);
    auto cell = [&](const std::string& row, const std::string& col) -> const CellResult& {
        return *at.at(row + "\x1f" + col);
    };
    auto acc = [&](const std::string& row, const std::string& col) {
        const auto& c = cell(row, col);
        return c.ok() ? percent(c.mean_accuracy()) : std::string(kErrorMarker);
    };
    auto f1 = [&](const std::string& row, const std::string& col) {
        const auto& c = cell(row, col);
        return c.ok() ? number(c.mean_f1()) : std::string(kErrorMarker);
    };
    std::ostringstream out;
    switch (sweep) {
        case Sweep::k: {
            out << "K";
            for (double v : base.ablate.k) out << ',' << number(v);
            out << "\naccuracy";
            for (double v : base.ablate.k) out << ',' << acc("accuracy", number(v));
            out << "\nmacro_f1";
            for (double v : base.ablate.k) out << ',' << f1("accuracy", number(v));
            out << '\n';
            break;
        }
        case Sweep::noise:
        case Sweep::smoothing: {
            const auto& values = sweep == Sweep::noise ? base.ablate.noise : base.ablate.smoothing;
            out << "K";
            for (double v : values) out << ',' << number(v);
            out << '\n';
            for (double k : table_rows_k(base)) {
                out << number(k);
                for (double v : values) out << ',' << acc(number(k), number(v));
                out << '\n';
            }
            break;
        }
        case Sweep::loss_setup:
        case Sweep::rb_setup: {
            out << (sweep == Sweep::loss_setup ? "loss" : "setup") << ",accuracy,f1_score\n";
            for (const auto& c : cells) out << csv_field(c.row) << ',' << acc(c.row, c.column) << ',' << f1(c.row, c.column) << '\n';
            break;
        }
        case Sweep::lambda: {
            out << "lambda_cls,accuracy_cls,lambda_a,accuracy_a,lambda_c,accuracy_c\n";
            for (double v : base.ablate.lambda) {
                const auto s = number(v);
                out << s << ',' << acc("lambda_cls", s) << ',' << s << ',' << acc("lambda_a", s) << ',' << s << ','
                    << acc("lambda_c", s) << '\n';
            }
            break;
        }
    }
    return out.str();
}

}  // namespace

bool CellResult::ok() const {
    for (const auto& e : errors)
        if (!e.empty()) return false;
    return !accuracy.empty();
}

double CellResult::mean_accuracy() const {
    double s = 0.0;
    for (double v : accuracy) s += v;
    return s / static_cast<double>(accuracy.size());
}

double CellResult::mean_f1() const {
    double s = 0.0;
    for (double v : macro_f1) s += v;
    return s / static_cast<double>(macro_f1.size());
}

Sweep parse_sweep(const std::string& name) {
    if (name == "K" || name == "k") return Sweep::k;
    if (name == "noise") return Sweep::noise;
    if (name == "smoothing") return Sweep::smoothing;
    if (name == "loss-setup") return Sweep::loss_setup;
    if (name == "rb-setup") return Sweep::rb_setup;
    if (name == "lambda") return Sweep::lambda;
    throw ConfigError("unknown sweep '" + name + "' (expected K, noise, smoothing, loss-setup, rb-setup or lambda)");
}

std::string sweep_name(Sweep s) {
    switch (s) {
        case Sweep::k: return "K";
        case Sweep::noise: return "noise";
        case Sweep::smoothing: return "smoothing";
        case Sweep::loss_setup: return "loss-setup";
        case Sweep::rb_setup: return "rb-setup";
        case Sweep::lambda: return "lambda";
    }
    return "";
}

std::vector<AblationCell> plan_ablation(const ExperimentConfig& base, Sweep sweep) {
    std::vector<AblationCell> cells;
    auto add = [&](std::string row, std::string col, const std::function<void(ExperimentConfig&)>& edit) {
        ExperimentConfig c = base;
        edit(c);
        cells.push_back({std::move(row), std::move(col), std::move(c)});
    };
    switch (sweep) {
        case Sweep::k:
            for (double v : base.ablate.k) {
                const auto k = as_count(v, "K");
                add("accuracy", number(v), [k](ExperimentConfig& c) { c.rb.k = k; });
            }
            break;
        case Sweep::noise:
            for (double k : table_rows_k(base))
                for (double v : base.ablate.noise) {
                    const auto kk = as_count(k, "K");
                    add(number(k), number(v), [kk, v](ExperimentConfig& c) {
                        c.rb.k = kk;
                        c.noise_rate = v / 100.0;
                    });
                }
            break;
        case Sweep::smoothing:
            for (double k : table_rows_k(base))
                for (double v : base.ablate.smoothing) {
                    const auto kk = as_count(k, "K");
                    add(number(k), number(v), [kk, v](ExperimentConfig& c) {
                        c.rb.k = kk;
                        c.smoothing_term = v;
                    });
                }
            break;
        case Sweep::loss_setup: {
            const std::pair<const char*, LossWeights> setups[] = {
                {"L_cls", {1, 0, 0}}, {"L_a", {0, 1, 0}}, {"L_c", {0, 0, 1}},
                {"L_cls+L_a", {1, 1, 0}}, {"L_cls+L_a+L_c", {1, 1, 1}}};
            for (const auto& [name, w] : setups) add(name, "loss", [w = w](ExperimentConfig& c) { c.loss = w; });
            break;
        }
        case Sweep::rb_setup: {
            const std::tuple<const char*, bool, bool> setups[] = {
                {"Without RB", false, false}, {"Anchors", true, false}, {"MHSA", false, true}, {"Both", true, true}};
            for (const auto& [name, anchors, mhsa] : setups)
                add(name, "setup", [a = anchors, m = mhsa](ExperimentConfig& c) {
                    c.rb.anchors = a;
                    c.rb.mhsa = m;
                });
            break;
        }
        case Sweep::lambda:
            for (const char* which : {"lambda_cls", "lambda_a", "lambda_c"})
                for (double v : base.ablate.lambda)
                    add(which, number(v), [which, v](ExperimentConfig& c) {
                        const std::string w = which;
                        (w == "lambda_cls" ? c.loss.cls : w == "lambda_a" ? c.loss.anchor : c.loss.center) = v;
                    });
            break;
    }
    return cells;
}

std::uint64_t cell_seed(const ExperimentConfig& base, Sweep sweep, std::size_t index, std::size_t replicate) {
    if (base.ablate.paired) return derive_seed(base.seed, {replicate});
    return derive_seed(base.seed, {static_cast<std::uint64_t>(sweep) + 1, index, replicate});
}

AblationTable run_ablation(const ExperimentConfig& base, Sweep sweep, const CellRunner& runner) {
    base.validate();
    const auto plan = plan_ablation(base, sweep);
    const auto reps = base.ablate.seeds;
    CellRunner run = runner ? runner : [](const ExperimentConfig& c) {
        TrainOptions o;
        o.write_outputs = false;
        return train(c, o).record.eval;
    };

    AblationTable table;
    table.sweep = sweep;
    table.cells.resize(plan.size());
    for (std::size_t i = 0; i < plan.size(); ++i) {
        auto& c = table.cells[i];
        c.row = plan[i].row;
        c.column = plan[i].column;
        c.seeds.resize(reps);
        c.accuracy.assign(reps, std::nan(""));
        c.macro_f1.assign(reps, std::nan(""));
        c.errors.assign(reps, "");
        for (std::size_t r = 0; r < reps; ++r) c.seeds[r] = cell_seed(base, sweep, i, r);
    }

    std::atomic<std::size_t> next{0};
    const std::size_t jobs = plan.size() * reps;
    auto worker = [&]() {
        for (std::size_t j = next++; j < jobs; j = next++) {
            const auto i = j / reps, r = j % reps;
            auto& cell = table.cells[i];
            try {
                ExperimentConfig c = plan[i].config;
                c.seed = cell.seeds[r];
                c.validate();
                const EvalReport rep = run(c);
                cell.accuracy[r] = rep.accuracy;
                cell.macro_f1[r] = rep.macro_f1;
            } catch (const Error& e) {
                cell.errors[r] = e.kind() + ": " + e.what();
            } catch (const std::exception& e) {
                cell.errors[r] = std::string("internal: ") + e.what();
            }
        }
    };
    const auto n_workers = std::min(base.ablate.workers, std::max<std::size_t>(1, jobs));
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    table.csv = wide_csv(sweep, base, table.cells);
    std::ostringstream cells;
    cells << "sweep,row,column,replicate,seed,accuracy,macro_f1,status,message\n";
    for (const auto& c : table.cells)
        for (std::size_t r = 0; r < reps; ++r) {
            const bool failed = !c.errors[r].empty();
            cells << sweep_name(sweep) << ',' << csv_field(c.row) << ',' << csv_field(c.column) << ',' << r << ','
                  << c.seeds[r] << ',' << (failed ? kErrorMarker : number(c.accuracy[r])) << ','
                  << (failed ? kErrorMarker : number(c.macro_f1[r])) << ',' << (failed ? "error" : "ok") << ','
                  << csv_field(c.errors[r]) << '\n';
        }
    table.cells_csv = cells.str();
    return table;
}

void write_ablation(const ExperimentConfig& base, const AblationTable& table) {
    const std::filesystem::path dir = base.output_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    auto write = [&](const std::string& name, const std::string& text) {
        write_file_atomic(dir / name, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    };
    write("ablation_" + sweep_name(table.sweep) + ".csv", table.csv);
    write("ablation_" + sweep_name(table.sweep) + "_cells.csv", table.cells_csv);
}

}  // namespace relbal
