#include <doctest.h>

#include <filesystem>
#include <mutex>
#include <set>
#include <sstream>

#include <unistd.h>

#include "relbal/ablation.hpp"
#include "relbal/checkpoint.hpp"
#include "relbal/error.hpp"

using namespace relbal;

namespace {

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

// Accuracy encodes the swept knobs so cell placement can be read back.
EvalReport encode_config(const ExperimentConfig& c) {
    EvalReport r;
    r.accuracy = static_cast<double>(c.rb.k) / 100.0 + c.noise_rate / 100.0 + c.smoothing_term / 10000.0;
    r.macro_f1 = 0.5;
    return r;
}

ExperimentConfig base_config() {
    ExperimentConfig c;
    c.seed = 17;
    return c;
}

}  // namespace

TEST_CASE("sweep names") {
    for (auto s : {Sweep::k, Sweep::noise, Sweep::smoothing, Sweep::loss_setup, Sweep::rb_setup, Sweep::lambda})
        CHECK(parse_sweep(sweep_name(s)) == s);
    CHECK(parse_sweep("k") == Sweep::k);
    CHECK_THROWS_AS(parse_sweep("dropout"), ConfigError);
}

TEST_CASE("default table layouts") {
    const auto base = base_config();
    SUBCASE("K") {
        const auto t = lines(run_ablation(base, Sweep::k, encode_config).csv);
        REQUIRE(t.size() == 3);
        CHECK(t[0] == "K,0,1,4,6,8,10,20");
        CHECK(t[1].rfind("accuracy,", 0) == 0);
        CHECK(t[2].rfind("macro_f1,", 0) == 0);
        // Default noise 0 and smoothing 11 add 0.11 percent.
        CHECK(t[1] == "accuracy,0.11,1.11,4.11,6.11,8.11,10.11,20.11");
    }
    SUBCASE("noise") {
        const auto t = lines(run_ablation(base, Sweep::noise, encode_config).csv);
        REQUIRE(t.size() == 2);
        CHECK(t[0] == "K,0,5,10,15,20,25,30,35,40,50");
        CHECK(t[1].rfind("8,8.11,8.16,", 0) == 0);
    }
    SUBCASE("smoothing with several K rows") {
        auto b = base;
        b.ablate.table_k = {0, 8};
        const auto t = lines(run_ablation(b, Sweep::smoothing, encode_config).csv);
        REQUIRE(t.size() == 3);
        CHECK(t[0] == "K,0,5,10,11,15,18,20,25,30,35,40,50");
        CHECK(t[1].rfind("0,0.00,0.05,", 0) == 0);
        CHECK(t[2].rfind("8,8.00,", 0) == 0);
    }
    SUBCASE("loss setups") {
        const auto t = lines(run_ablation(base, Sweep::loss_setup, encode_config).csv);
        REQUIRE(t.size() == 6);
        CHECK(t[0] == "loss,accuracy,f1_score");
        const char* rows[] = {"L_cls,", "L_a,", "L_c,", "L_cls+L_a,", "L_cls+L_a+L_c,"};
        for (int i = 0; i < 5; ++i) CHECK(t[i + 1].rfind(rows[i], 0) == 0);
    }
    SUBCASE("reliability setups") {
        const auto t = lines(run_ablation(base, Sweep::rb_setup, encode_config).csv);
        REQUIRE(t.size() == 5);
        CHECK(t[0] == "setup,accuracy,f1_score");
        const char* rows[] = {"Without RB,", "Anchors,", "MHSA,", "Both,"};
        for (int i = 0; i < 4; ++i) CHECK(t[i + 1].rfind(rows[i], 0) == 0);
    }
    SUBCASE("lambda") {
        const auto t = lines(run_ablation(base, Sweep::lambda, encode_config).csv);
        REQUIRE(t.size() == 4);
        CHECK(t[0] == "lambda_cls,accuracy_cls,lambda_a,accuracy_a,lambda_c,accuracy_c");
        CHECK(t[1].rfind("0.1,", 0) == 0);
        CHECK(t[3].rfind("1,", 0) == 0);
    }
}

TEST_CASE("planned cells carry the swept settings") {
    auto base = base_config();
    const auto rb = plan_ablation(base, Sweep::rb_setup);
    REQUIRE(rb.size() == 4);
    CHECK((!rb[0].config.rb.anchors && !rb[0].config.rb.mhsa));
    CHECK((rb[3].config.rb.anchors && rb[3].config.rb.mhsa));
    const auto loss = plan_ablation(base, Sweep::loss_setup);
    CHECK(loss[1].config.loss.cls == 0.0);
    CHECK(loss[1].config.loss.anchor == 1.0);
    const auto noise = plan_ablation(base, Sweep::noise);
    CHECK(noise.back().config.noise_rate == 0.5);
    const auto lambda = plan_ablation(base, Sweep::lambda);
    REQUIRE(lambda.size() == 9);
    CHECK(lambda[4].config.loss.anchor == 0.5);
    CHECK(lambda[4].config.loss.cls == 1.0);
    base.ablate.k = {2.5};
    CHECK_THROWS_AS(plan_ablation(base, Sweep::k), ConfigError);
}

TEST_CASE("a failing cell is marked and the sweep continues") {
    auto base = base_config();
    base.ablate.seeds = 2;
    const auto t = run_ablation(base, Sweep::k, [](const ExperimentConfig& c) {
        if (c.rb.k == 4) throw NumericError("diverged");
        return encode_config(c);
    });
    const auto wide = lines(t.csv);
    CHECK(wide[1] == "accuracy,0.11,1.11,ERROR,6.11,8.11,10.11,20.11");
    CHECK(wide[2].find("ERROR") != std::string::npos);
    const auto cells = lines(t.cells_csv);
    CHECK(cells[0] == "sweep,row,column,replicate,seed,accuracy,macro_f1,status,message");
    CHECK(cells.size() == 1 + 7 * 2);
    std::size_t errors = 0;
    for (const auto& l : cells)
        if (l.find(",error,numeric: diverged") != std::string::npos) ++errors;
    CHECK(errors == 2);
    CHECK_FALSE(t.cells[2].ok());
    CHECK(t.cells[3].ok());
}

TEST_CASE("seeds per cell") {
    auto base = base_config();
    base.ablate.seeds = 3;
    std::set<std::uint64_t> unpaired;
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t r = 0; r < 3; ++r) unpaired.insert(cell_seed(base, Sweep::k, i, r));
    CHECK(unpaired.size() == 21);
    CHECK(cell_seed(base, Sweep::k, 1, 0) != cell_seed(base, Sweep::noise, 1, 0));
    base.ablate.paired = true;
    for (std::size_t r = 0; r < 3; ++r) CHECK(cell_seed(base, Sweep::k, 0, r) == cell_seed(base, Sweep::rb_setup, 5, r));

    std::mutex m;
    std::set<std::uint64_t> used;
    run_ablation(base, Sweep::rb_setup, [&](const ExperimentConfig& c) {
        std::lock_guard lock(m);
        used.insert(c.seed);
        return encode_config(c);
    });
    CHECK(used.size() == 3);
}

TEST_CASE("results do not depend on the worker count") {
    auto base = base_config();
    base.ablate.seeds = 3;
    auto runner = [](const ExperimentConfig& c) {
        EvalReport r = encode_config(c);
        r.macro_f1 = static_cast<double>(c.seed % 1000) / 1000.0;
        return r;
    };
    const auto one = run_ablation(base, Sweep::noise, runner);
    base.ablate.workers = 4;
    const auto four = run_ablation(base, Sweep::noise, runner);
    CHECK(one.csv == four.csv);
    CHECK(one.cells_csv == four.cells_csv);
}

TEST_CASE("tables are written under the output directory") {
    auto base = base_config();
    base.output_dir = (std::filesystem::temp_directory_path() / ("relbal_ablate_" + std::to_string(::getpid()))).string();
    const auto t = run_ablation(base, Sweep::rb_setup, encode_config);
    write_ablation(base, t);
    const std::filesystem::path dir = base.output_dir;
    const auto wide = read_file_bytes(dir / "ablation_rb-setup.csv");
    CHECK(std::string(wide.begin(), wide.end()) == t.csv);
    CHECK(std::filesystem::exists(dir / "ablation_rb-setup_cells.csv"));
    std::filesystem::remove_all(dir);
}
