#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "serum/detector.hpp"
#include "serum/perturb.hpp"
#include "serum/sampler.hpp"

namespace serum::config {

// Fully-defaulted run configuration. Every default matches the benchmark
// operating point: alpha 0.5, 50 epochs, 32+32 batches, m = 4, Adam at
// 1e-3 with betas 0.9/0.999, plateau scheduler 0.2/2, and the sampler
// hyperparameters eps 1e-3, eps_smooth 1e-3, tau 1, lr+ 0.2, lr- 0.05,
// boost 3, beta 1.
struct RunConfig {
    struct Pipeline {
        std::uint64_t seed = 1;
        std::uint32_t channels = 4, width = 16, height = 16;
    } pipeline;

    struct Pattern {
        std::uint64_t seed = 2;
        double alpha = 0.5;
        std::string id;
    } pattern;

    std::vector<perturb::PerturbSpec> perturbations;  // defaults to the full suite

    struct Training {
        std::uint32_t epochs = 50;
        std::uint32_t batch_clean = 32, batch_marked = 32;
        std::uint32_t m = 4;
        double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
        double sched_factor = 0.2;
        std::uint32_t sched_patience = 2;
        sampler::Hyperparams sampler;
        std::uint32_t precompute_copies = 1;
        std::uint64_t seed = 3;
        double val_fraction = 0.1;
        std::optional<std::vector<detector::ConvSpec>> model_convs;
    } training;

    struct DatasetSection {
        std::uint32_t n_per_class = 500;
        std::uint64_t seed = 1000;
    } dataset;

    struct Evaluation {
        double fpr_target = 0.01;
        std::uint32_t n_per_class = 500;
        std::uint64_t seed = 500000;
    } evaluation;

    struct Multiuser {
        std::uint32_t m = 135, k = 2;
        std::uint64_t n = 9045;
        double alpha_per_pattern = 0.3, alpha_total = 0.6;
        std::uint64_t seed = 4;
        std::uint32_t train_n_per_class = 200;
        std::uint32_t train_epochs = 10;
    } multiuser;

    struct Paths {
        std::string out_dir = "out";
    } paths;

    // canonical JSON (defaults materialized, keys sorted)
    std::string canonical_json() const;
    std::string config_hash() const;

    detector::TrainConfig train_config() const;
    detector::ModelSpec model_spec() const;
};

// Parses and validates a structured text document. Unknown keys anywhere
// are rejected; type and range violations name the offending field.
RunConfig validate_config(const std::string& text);
RunConfig default_config();

}  // namespace serum::config
