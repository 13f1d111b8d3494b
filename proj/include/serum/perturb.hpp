#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "serum/tensor.hpp"
#include "serum/toygen.hpp"

namespace serum::perturb {

using core::ImageTensor;
using core::LatentTensor;

enum class Kind : std::uint8_t {
    Rotate = 0,
    Jpeg = 1,
    CropScale = 2,
    RandomDrop = 3,
    SaltPepper = 4,
    GaussNoise = 5,
    Brightness = 6,
    GaussBlur = 7,
};

const char* kind_name(Kind k);
Kind kind_from_name(const std::string& name);

// One perturbation with its parameters. Defaults are the benchmark
// operating points: rotation +-90 deg with gray padding, JPEG quality 25,
// crop retaining 75% area at aspect 1, drop of 64% of pixels, 5%
// salt-and-pepper, additive noise sigma 0.1, brightness factor 6, and a
// 15x15 Gaussian blur with sigma uniform in [0.1, 2].
struct PerturbSpec {
    Kind kind = Kind::GaussNoise;
    double angle_min = -90.0, angle_max = 90.0;  // Rotate, degrees
    std::uint32_t jpeg_quality = 25;             // Jpeg, 1..100
    double retain_area = 0.75;                   // CropScale, (0,1]
    double drop_fraction = 0.64;                 // RandomDrop, [0,1]
    double corrupt_fraction = 0.05;              // SaltPepper, [0,1]
    double noise_sigma = 0.1;                    // GaussNoise, >= 0
    double brightness_factor = 6.0;              // Brightness, > 0
    std::uint32_t blur_kernel = 15;              // GaussBlur, odd
    double blur_sigma_min = 0.1, blur_sigma_max = 2.0;

    static PerturbSpec make(Kind k);
    void validate() const;
    std::string to_text() const;            // structured text block
    static PerturbSpec from_text(const std::string& text);
};

// The eight-perturbation benchmark suite at its standard parameters.
std::vector<PerturbSpec> default_suite();

// Pure function of (spec, image, seed): the seed fixes every random choice
// (angle, crop placement, dropped pixels, noise, blur sigma). Output has the
// input's dimensions with values clamped to [0,1].
ImageTensor apply(const PerturbSpec& spec, const ImageTensor& image,
                  std::uint64_t seed);

struct AugmentedEntry {
    std::uint64_t source_index = 0;
    std::uint64_t source_prompt_seed = 0;
    std::uint32_t spec_index = 0;
    std::uint64_t rng_seed = 0;
    LatentTensor latent;  // re-encoded perturbed image
};

// Precomputed perturbations of a dataset: every row is replayable from its
// recorded (spec, seed) pair against the source entry's image.
struct AugmentedDataset {
    std::vector<PerturbSpec> specs;
    std::vector<AugmentedEntry> rows;
    std::map<std::uint64_t, std::vector<std::uint32_t>> rows_by_seed;
    std::uint64_t source_entry_count = 0;
    std::uint64_t seed = 0;

    void rebuild_index();
    // rows whose source entry carries this prompt seed; null when none
    const std::vector<std::uint32_t>* rows_for(std::uint64_t prompt_seed) const;
};

AugmentedDataset precompute(const toygen::Dataset& dataset,
                            const std::vector<PerturbSpec>& specs,
                            std::uint32_t copies_per_entry,
                            const toygen::ToyPipeline& pipeline,
                            std::uint64_t seed);

// Same, restricted to a subset of entries (by index into dataset.entries).
AugmentedDataset precompute_subset(const toygen::Dataset& dataset,
                                   const std::vector<std::uint32_t>& entry_indices,
                                   const std::vector<PerturbSpec>& specs,
                                   std::uint32_t copies_per_entry,
                                   const toygen::ToyPipeline& pipeline,
                                   std::uint64_t seed);

void write_augmented(const AugmentedDataset& aug, const std::string& path,
                     const std::map<std::string, std::string>& extra_metadata = {});
AugmentedDataset read_augmented(const std::string& path);

// Self-contained baseline JPEG round trip (8x8 DCT, standard quantization
// tables scaled by quality, 4:2:0 chroma subsampling). Bit-stable across
// platforms; entropy coding is lossless and therefore omitted.
ImageTensor jpeg_roundtrip(const ImageTensor& image, std::uint32_t quality);

double psnr(const ImageTensor& a, const ImageTensor& b);

}  // namespace serum::perturb
