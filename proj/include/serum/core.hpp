#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "serum/rng.hpp"
#include "serum/tensor.hpp"

namespace serum::core {

// A fixed noise map together with its zero-mean unit-std normalization.
// The normalized form is what gets mixed into generation noise; keeping the
// raw map allows re-deriving it and auditing the normalization.
struct WatermarkPattern {
    std::string id;
    std::uint64_t seed = 0;
    LatentTensor raw;
    LatentTensor normalized;
    double alpha_default = 0.5;
};

struct InjectionConfig {
    double alpha = 0.5;
    std::string pattern_id;
};

// i.i.d. standard-normal noise; identical (seed, dims) gives bit-identical
// output on every platform.
LatentTensor sample_noise(std::uint64_t seed, std::uint32_t channels,
                          std::uint32_t width, std::uint32_t height);

// (A - mean(A)) / std(A) with the population std (divide by d), so the
// normalized map satisfies ||A'||^2 = d exactly up to rounding.
LatentTensor normalize_pattern(const LatentTensor& raw);

// Generates A ~ N(0, I) from the seed and normalizes it.
WatermarkPattern make_pattern(std::uint64_t seed, std::uint32_t channels,
                              std::uint32_t width, std::uint32_t height,
                              double alpha_default = 0.5, std::string id = {});

// eta' = sqrt(1-alpha) * eta + sqrt(alpha) * A'
LatentTensor inject(const LatentTensor& eta, const WatermarkPattern& pattern,
                    double alpha);

// eta'_i = sqrt(1-alpha) * eta + sqrt(alpha/k) * sum of the subset's
// normalized patterns; reduces to inject for a single pattern.
LatentTensor inject_multi(const LatentTensor& eta,
                          const std::vector<const WatermarkPattern*>& patterns,
                          double alpha_total);

// Closed-form divergence of N(sqrt(alpha) A', (1-alpha) I) from N(0, I):
// -(d/2) * ln(1-alpha). Natural log throughout.
double kl_serum(double alpha, std::uint64_t d);

// Divergence of the orthant-truncated Gaussian from N(0, I): d * ln 2.
double kl_gaussmarker(std::uint64_t d);

}  // namespace serum::core
