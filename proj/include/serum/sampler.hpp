#pragma once

#include <cstdint>
#include <vector>

#include "serum/rng.hpp"

namespace serum::sampler {

// Prioritized augmentation sampler. Priorities live in (0,1) per
// augmentation kind; sampling sharpens or flattens them with a temperature,
// and feedback from detector mistakes moves them with adaptive step sizes.
struct Hyperparams {
    double eps = 1e-3;         // clip bound: p stays in [eps, 1-eps]
    double eps_smooth = 1e-3;  // smoothing added before the temperature
    double tau = 1.0;          // temperature; +inf samples uniformly, 0 = argmax
    double base_lr_pos = 0.2;
    double base_lr_neg = 0.05;
    double boost = 3.0;
    double beta = 1.0;
};

struct PriorityState {
    std::vector<double> priorities;
    Hyperparams hyper;
    // diagnostics only; never feed back into sampling
    std::vector<std::uint64_t> times_chosen, times_mistake;

    static PriorityState init(std::size_t n, Hyperparams hyper = {},
                              double initial_priority = 0.5);
    std::size_t size() const { return priorities.size(); }
};

// q_i proportional to (p_i + eps_smooth)^(1/tau). Requires finite tau > 0;
// tau = +inf yields the uniform distribution.
std::vector<double> distribution(const PriorityState& state);

// Draws an index from the categorical distribution above. tau = 0 is the
// strict-prioritization limit: argmax over p, ties to the lowest index.
std::size_t sample(PriorityState& state, core::Rng& rng);

// mistake: p += lr_pos * (1 + boost * (1-p)^beta) * (1-p)
// otherwise: p -= lr_neg * (1 + boost * p^beta) * p
// then clip to [eps, 1-eps]. Only the chosen index moves.
void update(PriorityState& state, std::size_t index, bool mistake);

}  // namespace serum::sampler
