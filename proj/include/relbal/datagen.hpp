#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "relbal/tensor.hpp"

namespace relbal {

struct ConfusionPair {
    std::size_t a = 0;
    std::size_t b = 0;
};

struct DatasetSpec {
    std::size_t n_classes = 8;
    std::size_t samples_per_class = 250;
    double separation = 3.0;
    double spread = 1.0;
    // Mean of class b is pulled toward class a by `confusion_strength`.
    std::vector<ConfusionPair> confusion_pairs;
    double confusion_strength = 0.5;
    // Ratio between the largest and the smallest class; counts decay
    // geometrically with the class index.
    double imbalance = 1.0;
    std::size_t groups_per_class = 4;
    // Group offsets have standard deviation group_scale * spread.
    double group_scale = 0.5;
    std::size_t latent_extra = 4;  // nuisance latent dimensions beyond N_cls
    std::size_t source_size = 32;
    std::size_t image_channels = 3;
    std::size_t landmark_channels = 4;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t latent_dim() const noexcept { return n_classes + latent_extra; }
    std::vector<std::size_t> class_counts() const;
};

struct SyntheticSample {
    Tensor image;     // [S x S x C], values in [0, 1]
    Tensor landmark;  // [A_c x S x S], values in [0, 1]
    std::size_t label = 0;
    std::size_t group = 0;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<SyntheticSample> samples;
    Tensor latents;  // [n x latent_dim]
    Tensor class_means;  // [N_cls x latent_dim]

    std::size_t size() const noexcept { return samples.size(); }
    std::vector<std::size_t> labels() const;
    std::vector<std::size_t> groups() const;
};

Dataset generate_dataset(const DatasetSpec& spec);
// Balanced split with `per_class` samples per class drawn from the same class
// geometry on an independent substream.
Dataset generate_test_split(const DatasetSpec& spec, std::size_t per_class);

// Maps a latent vector to both streams with the spec's fixed rendering bases.
SyntheticSample render_sample(const DatasetSpec& spec, std::span<const double> latent);

struct AugmentConfig {
    std::size_t crop = 28;
    double flip_probability = 0.5;
    double max_rotation_deg = 15.0;
    double jitter = 0.1;  // per-channel gain in [1-j, 1+j], offset in [-j, j]
    bool center_crop = false;
};

SyntheticSample augment(const SyntheticSample& s, const AugmentConfig& cfg, std::mt19937_64& rng);
SyntheticSample center_crop(const SyntheticSample& s, std::size_t crop);
SyntheticSample flip_horizontal(const SyntheticSample& s);

struct RefinementConfig {
    std::size_t n_pg = 64;
    std::size_t b = 32;

    void validate() const;
};

// Indices of one balanced epoch batch: at most N_pg random samples kept per
// group, then exactly B per class from that pool (with replacement when a
// class has fewer than B). Warnings are appended to `warnings` when given.
std::vector<std::size_t> refine_batch(std::span<const std::size_t> labels, std::span<const std::size_t> groups,
                                      std::size_t n_classes, const RefinementConfig& rc, std::mt19937_64& rng,
                                      std::vector<std::string>* warnings = nullptr);

struct NoisyLabels {
    std::vector<std::size_t> labels;
    std::vector<bool> flipped;
};

// Each label flips with probability `rate` to a uniformly chosen other class.
NoisyLabels inject_noise(std::span<const std::size_t> labels, std::size_t n_classes, double rate,
                         std::mt19937_64& rng);

Tensor one_hot(std::span<const std::size_t> labels, std::size_t n_classes);
// (1 - alpha) * one_hot + alpha / N_cls with alpha = term / 100, term in [0, 50].
Tensor smooth_labels(const Tensor& one_hot, double term);

// Directory layout: manifest.json, image.f64, landmark.f64, latent.f64,
// labels.csv, groups.csv.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace relbal
