#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "serum/core.hpp"
#include "serum/detector.hpp"

namespace serum::multiuser {

using core::LatentTensor;
using core::WatermarkPattern;

// Binomial coefficient saturated at uint64 max.
std::uint64_t binomial(std::uint64_t m, std::uint64_t k);

using Subset = std::vector<std::uint32_t>;  // sorted pattern indices, size k

// m patterns, n users holding distinct k-subsets, one cached detector per
// pattern, and the calibrated detection threshold.
struct UserRegistry {
    std::vector<WatermarkPattern> patterns;
    std::uint32_t subset_size = 0;
    std::vector<Subset> users;  // user id == position
    std::vector<detector::DetectorModel> detectors;
    double threshold = 0.5;
    double alpha_per_pattern = 0.3;
    double alpha_total = 0.6;
    std::uint64_t seed = 0;

    std::uint32_t pattern_count() const {
        return static_cast<std::uint32_t>(patterns.size());
    }
    std::uint32_t user_count() const { return static_cast<std::uint32_t>(users.size()); }
    std::uint64_t capacity() const { return binomial(pattern_count(), subset_size); }
};

// n distinct k-subsets of {0..m-1}: the full lexicographic enumeration when
// n equals C(m,k), otherwise n lexicographic ranks sampled without
// replacement from the seed.
UserRegistry assign_users(std::uint32_t m, std::uint32_t k, std::uint64_t n,
                          std::uint64_t seed);

// One detector forward per pattern; callers reuse the returned vector for
// any number of identification queries against the same latent.
std::vector<double> score_all(const UserRegistry& registry, const LatentTensor& latent);

// S(x) = max over per-pattern scores.
double watermark_score(const std::vector<double>& scores);

// Smallest threshold whose empirical false-positive rate is at most the
// target; negatives exactly at the threshold count as negatives.
double calibrate_threshold(const std::vector<double>& negative_scores,
                           double fpr_target);

struct IdentifyResult {
    bool watermarked = false;
    std::uint32_t user_id = 0;  // valid only when watermarked
    double log_score = 0;       // log product over the subset
};

// argmax over users of the product of their subset's scores, evaluated in
// log space; detection against registry.threshold runs first, and a
// below-threshold sample reports watermarked=false rather than a user.
// Ties break toward the lowest user id.
IdentifyResult identify(const UserRegistry& registry,
                        const std::vector<double>& scores);

// Registry directory: manifest + patterns + detector checkpoints bound by
// content hash, plus a text index of user subsets.
void write_registry(const UserRegistry& registry, const std::string& dir);
UserRegistry read_registry(const std::string& dir);

}  // namespace serum::multiuser
