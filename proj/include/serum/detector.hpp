#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "serum/perturb.hpp"
#include "serum/sampler.hpp"
#include "serum/tensor.hpp"
#include "serum/toygen.hpp"

namespace serum::detector {

using core::LatentTensor;

// Scores are clamped into [kScoreClamp, 1 - kScoreClamp] before any log so
// the loss stays finite at saturation. The clamp is part of the loss
// definition; gradients are exactly zero where it is active.
inline constexpr double kScoreClamp = 1e-7;

struct ConvSpec {
    std::uint32_t in_ch, out_ch, kernel, stride, pad;
};

// Conv+ReLU stack, global average pool, affine head, sigmoid.
struct ModelSpec {
    std::uint32_t in_channels = 4, in_width = 16, in_height = 16;
    std::vector<ConvSpec> convs;

    static ModelSpec desk_default(std::uint32_t c, std::uint32_t w, std::uint32_t h);
    // Small randomized topologies for gradient-oracle fuzzing.
    static ModelSpec tiny(std::uint32_t c, std::uint32_t w, std::uint32_t h,
                          std::uint32_t channels);

    std::size_t param_count() const;
    std::uint32_t head_inputs() const {
        return convs.empty() ? in_channels : convs.back().out_ch;
    }
    void validate() const;
};

struct DetectorModel {
    ModelSpec spec;
    std::vector<float> params;
    mutable std::uint64_t forward_calls = 0;  // instrumentation only

    static DetectorModel init(const ModelSpec& spec, std::uint64_t seed);
    double forward(const LatentTensor& latent) const;
};

// One training batch: the two static classes, their dynamically transformed
// slices, and their precomputed perturbed counterparts. Dynamic and
// precomputed slots may be empty (ablation configurations); the static
// classes may not.
struct Batch {
    std::vector<const LatentTensor*> marked, clean;
    std::vector<const LatentTensor*> marked_dynamic, clean_dynamic;
    std::vector<const LatentTensor*> marked_pre, clean_pre;
};

struct LossBreakdown {
    double marked_clean = 0, marked_transformed = 0, marked_precomputed = 0;
    double clean = 0, clean_transformed = 0, clean_precomputed = 0;
    double total = 0;
};

LossBreakdown loss(const DetectorModel& model, const Batch& batch);

struct BatchGradients {
    LossBreakdown loss;
    std::vector<float> grads;
    std::vector<double> marked_dynamic_scores, clean_dynamic_scores;
};

BatchGradients gradients(const DetectorModel& model, const Batch& batch);

struct OptimizerState {
    std::vector<float> m, v;
    std::uint64_t step = 0;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static OptimizerState init(std::size_t n_params, double lr);
};

void adam_step(OptimizerState& opt, std::span<float> params,
               std::span<const float> grads);

struct SchedulerState {
    double best_loss = 0;
    bool has_best = false;
    std::uint32_t bad_epochs = 0;
    double factor = 0.2;
    std::uint32_t patience = 2;
    double lr = 1e-3;
};

// Reduce-on-plateau: lr is multiplied by factor once the loss has failed to
// improve for more than `patience` consecutive epochs.
double scheduler_step(SchedulerState& sched, double epoch_val_loss);

struct TrainConfig {
    std::uint32_t epochs = 50;
    std::uint32_t batch_clean = 32, batch_marked = 32;
    std::uint32_t dynamic_count = 4;  // m
    double alpha = 0.5;
    std::vector<perturb::PerturbSpec> augmentations;
    std::uint32_t precompute_copies = 1;
    std::uint64_t seed = 0;
    double val_fraction = 0.1;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double sched_factor = 0.2;
    std::uint32_t sched_patience = 2;
    ModelSpec model;
    std::uint32_t start_epoch = 0;  // nonzero when resuming
};

struct EpochRecord {
    std::uint32_t epoch;
    double train_loss, val_loss, lr;
    LossBreakdown mean_terms;
    std::vector<double> priorities;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0;
};

struct TrainResult {
    DetectorModel model;
    OptimizerState optimizer;
    SchedulerState scheduler;
    TrainHistory history;
};

// Full training loop: batches of clean+marked latents, m dynamic transforms
// per class driven by the priority sampler, precomputed perturbations, Adam
// and the plateau scheduler. Everything derives from config.seed, so two
// runs with the same inputs produce bit-identical parameters.
TrainResult train(const TrainConfig& config,
                  const std::vector<const toygen::DatasetEntry*>& clean_set,
                  const std::vector<const toygen::DatasetEntry*>& marked_set,
                  const perturb::AugmentedDataset* clean_pre,
                  const perturb::AugmentedDataset* marked_pre,
                  sampler::PriorityState& priorities,
                  const toygen::ToyPipeline& pipeline,
                  const TrainResult* resume_from = nullptr);

double detect(const DetectorModel& model, const toygen::ToyPipeline& pipeline,
              const core::ImageTensor& image);

// Checkpoint container "SRMC": layer spec, parameters, optimizer, scheduler
// and sampler state plus history; training resumes bit-identically.
struct Checkpoint {
    TrainConfig config;
    DetectorModel model;
    OptimizerState optimizer;
    SchedulerState scheduler;
    sampler::PriorityState priorities;
    TrainHistory history;
    std::uint32_t next_epoch = 0;
    std::map<std::string, std::string> metadata;
};

void write_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

namespace detail {

// Double-precision twin of the float path, used by the finite-difference
// oracle. Keeping one templated implementation guarantees the two paths
// compute the same function.
template <typename T>
struct Workspace {
    std::vector<std::vector<T>> acts;
    std::vector<T> gap;
};

template <typename T>
T forward_logit(const ModelSpec& spec, const T* params, const float* input,
                Workspace<T>& ws);

template <typename T>
void backward_logit(const ModelSpec& spec, const T* params, const float* input,
                    const Workspace<T>& ws, T dlogit, T* grads);

double clamp_score(double sigmoid_value);

}  // namespace detail

}  // namespace serum::detector
