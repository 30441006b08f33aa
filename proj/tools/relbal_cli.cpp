#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "relbal/ablation.hpp"
#include "relbal/config.hpp"
#include "relbal/datagen.hpp"
#include "relbal/error.hpp"
#include "relbal/trainer.hpp"

namespace {

// Errors go to stderr as a single JSON object: {"error": kind, "message": text}.
int fail(const std::string& kind, const std::string& message) {
    nlohmann::ordered_json j;
    j["error"] = kind;
    j["message"] = message;
    std::cerr << j.dump() << '\n';
    return 1;
}

relbal::ExperimentConfig load(const std::string& path, const std::vector<std::string>& overrides) {
    auto cfg = relbal::load_config(path);
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw relbal::ConfigError("override '" + o + "' is not key=value");
        relbal::apply_config_line(cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"relbal: reliability-balanced expression classifier harness"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, config_path, ckpt_path, sweep;
    std::vector<std::string> overrides;
    bool verbose = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset from the data.* keys of a config file");
    gen->add_option("--spec", spec_path, "config file")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* tr = app.add_subcommand("train", "train, evaluate and write checkpoint and reports to output_dir");
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the clean test split");
    auto* ab = app.add_subcommand("ablate", "run an ablation sweep and write its CSV tables");
    for (auto* sub : {tr, ev, ab}) {
        sub->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--set", overrides, "key=value override, repeatable");
    }
    gen->add_option("--set", overrides, "key=value override, repeatable");
    tr->add_flag("-v,--verbose", verbose, "log per-epoch losses to stderr");
    ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    ab->add_option("--sweep", sweep, "K, noise, smoothing, loss-setup, rb-setup or lambda")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what()) + 1;
    }

    try {
        if (*gen) {
            const auto cfg = load(spec_path, overrides);
            const auto ds = relbal::generate_dataset(cfg.dataset_spec());
            relbal::save_dataset(out_dir, ds);
            nlohmann::ordered_json j;
            j["out"] = out_dir;
            j["n_samples"] = ds.size();
            j["n_classes"] = ds.spec.n_classes;
            std::cout << j.dump() << '\n';
        } else if (*tr) {
            const auto cfg = load(config_path, overrides);
            relbal::TrainOptions opts;
            if (verbose) opts.log = &std::cerr;
            const auto result = relbal::train(cfg, opts);
            std::cout << relbal::eval_report_json(result.record.eval);
        } else if (*ev) {
            const auto cfg = load(config_path, overrides);
            std::cout << relbal::eval_report_json(relbal::evaluate_checkpoint(cfg, ckpt_path));
        } else if (*ab) {
            const auto cfg = load(config_path, overrides);
            const auto table = relbal::run_ablation(cfg, relbal::parse_sweep(sweep));
            relbal::write_ablation(cfg, table);
            std::cout << table.csv;
        }
    } catch (const relbal::Error& e) {
        return fail(e.kind(), e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
