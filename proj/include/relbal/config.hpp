#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "relbal/adam.hpp"
#include "relbal/datagen.hpp"
#include "relbal/encoder.hpp"
#include "relbal/losses.hpp"
#include "relbal/reliability.hpp"

namespace relbal {

struct ReliabilityConfig {
    std::size_t k = 8;  // anchors per class; 0 disables the geometric correction
    double delta = 1.0;
    std::size_t tokens = 4;
    std::size_t heads = 4;
    bool anchors = true;
    bool mhsa = true;

    bool anchors_active() const noexcept { return anchors && k > 0; }
};

struct AblationConfig {
    std::vector<double> k{0, 1, 4, 6, 8, 10, 20};
    std::vector<double> noise{0, 5, 10, 15, 20, 25, 30, 35, 40, 50};  // percent
    std::vector<double> smoothing{0, 5, 10, 11, 15, 18, 20, 25, 30, 35, 40, 50};
    std::vector<double> lambda{0.1, 0.5, 1.0};
    // Rows of the noise and smoothing tables; empty means the configured rb.k.
    std::vector<double> table_k;
    std::size_t seeds = 1;
    std::size_t workers = 1;
    // Share seeds across cells (replicate r uses the same seed in every cell).
    bool paired = false;
};

struct ExperimentConfig {
    DatasetSpec data;
    std::optional<std::uint64_t> data_seed;  // defaults to `seed`
    std::size_t test_per_class = 50;
    std::string data_dir;  // load instead of generating when set

    EncoderGeometry encoder;
    ReliabilityConfig rb;
    HeadConfig head;
    LossWeights loss;
    AdamConfig optim;
    std::size_t epochs = 60;
    std::size_t minibatch = 0;  // 0: one optimizer step per epoch
    RefinementConfig refine;
    double noise_rate = 0.0;
    double smoothing_term = 11.0;
    bool augment_enabled = true;
    AugmentConfig augment;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    AblationConfig ablate;

    void validate() const;
    std::uint64_t effective_data_seed() const { return data_seed.value_or(seed); }
    // Dataset spec with the effective seed and the image crop applied.
    DatasetSpec dataset_spec() const;
};

// Flat "key = value" lines; '#' starts a comment. Unknown keys and malformed
// values raise ConfigError naming the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void apply_config_line(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Canonical text of every key in a fixed order; parse_config round-trips it.
std::string config_to_text(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace relbal
