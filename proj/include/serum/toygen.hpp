#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "serum/core.hpp"
#include "serum/tensor.hpp"

namespace serum::toygen {

using core::ImageTensor;
using core::LatentTensor;
using core::WatermarkPattern;

// Deterministic surrogate for the latent-diffusion pipeline. generate() runs
// three fixed mixing stages on the latent (local 3x3 cross-channel residual
// plus a bounded global-context broadcast, both tanh-limited), then an 8x
// block-basis decode into [0,1] pixel space. encode() projects 8x8 pixel
// blocks back onto the same orthonormal basis, approximately inverting
// decode. All weights derive from pipeline_seed alone.
class ToyPipeline {
  public:
    static constexpr std::uint32_t kBlock = 8;

    ToyPipeline(std::uint64_t pipeline_seed, std::uint32_t channels,
                std::uint32_t width, std::uint32_t height);

    std::uint64_t seed() const { return seed_; }
    std::uint32_t latent_channels() const { return c_; }
    std::uint32_t latent_width() const { return w_; }
    std::uint32_t latent_height() const { return h_; }
    std::uint32_t image_width() const { return w_ * kBlock; }
    std::uint32_t image_height() const { return h_ * kBlock; }

    LatentTensor denoise(const LatentTensor& z) const;
    ImageTensor decode(const LatentTensor& z) const;
    ImageTensor generate(const LatentTensor& eta) const;
    LatentTensor encode(const ImageTensor& image) const;

    // Construction record persisted with pipeline artifacts.
    std::map<std::string, std::string> construction() const;

  private:
    struct Carrier {
        std::uint32_t channel;
        std::vector<float> field;       // w*h spatial carrier, unit per-coord scale
        std::vector<float> projection;  // unit-norm projection field over c*w*h
    };
    struct Stage {
        std::vector<float> conv;  // [c][c][3][3]
        std::vector<Carrier> carriers;
    };

    void check_latent(const LatentTensor& z) const;
    void check_image(const ImageTensor& im) const;

    std::uint64_t seed_;
    std::uint32_t c_, w_, h_;
    std::uint32_t carriers_per_stage_;
    std::vector<Stage> stages_;
    std::vector<float> basis_;  // [c][kBlock*kBlock] per-channel spatial basis
    std::vector<float> color_;  // [c][3] per-channel color vector
};

enum class Label : std::uint8_t { clean = 0, watermarked = 1 };

struct DatasetEntry {
    LatentTensor latent;
    ImageTensor image;
    Label label = Label::clean;
    std::vector<std::string> pattern_ids;
    std::uint64_t prompt_seed = 0;
};

struct Dataset {
    std::map<std::string, std::string> metadata;
    std::vector<DatasetEntry> entries;

    std::vector<const DatasetEntry*> with_label(Label l) const {
        std::vector<const DatasetEntry*> out;
        for (const auto& e : entries)
            if (e.label == l) out.push_back(&e);
        return out;
    }
};

// n_per_class clean followed by n_per_class watermarked entries. Entry
// prompt seeds are consecutive starting at base_seed; the covered range is
// recorded in metadata for train/test leakage checks.
Dataset make_dataset(const ToyPipeline& pipeline, std::uint32_t n_per_class,
                     const WatermarkPattern& pattern, double alpha,
                     std::uint64_t base_seed);

// Loads a dataset container and enforces its invariants (consistent dims,
// exhaustive labels, unique per-entry seeds).
Dataset import_latents(const std::string& path);
void export_dataset(const Dataset& dataset, const std::string& path,
                    bool include_images = true);
void validate_dataset(const Dataset& dataset);

}  // namespace serum::toygen
