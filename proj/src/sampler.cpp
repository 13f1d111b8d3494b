#include "serum/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "serum/errors.hpp"

namespace serum::sampler {

PriorityState PriorityState::init(std::size_t n, Hyperparams hyper,
                                  double initial_priority) {
    if (n == 0) throw InvalidArgumentError("PriorityState: need at least one augmentation");
    if (!(hyper.eps > 0.0 && hyper.eps < 0.5))
        throw RangeError("PriorityState: eps must lie in (0, 0.5)");
    PriorityState s;
    s.hyper = hyper;
    const double p = std::clamp(initial_priority, hyper.eps, 1.0 - hyper.eps);
    s.priorities.assign(n, p);
    s.times_chosen.assign(n, 0);
    s.times_mistake.assign(n, 0);
    return s;
}

std::vector<double> distribution(const PriorityState& state) {
    const double tau = state.hyper.tau;
    if (!(tau > 0.0)) throw RangeError("distribution: temperature must be positive");
    std::vector<double> q(state.priorities.size());
    const double inv_tau = std::isinf(tau) ? 0.0 : 1.0 / tau;
    double total = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        q[i] = std::pow(state.priorities[i] + state.hyper.eps_smooth, inv_tau);
        total += q[i];
    }
    for (auto& v : q) v /= total;
    return q;
}

std::size_t sample(PriorityState& state, core::Rng& rng) {
    std::size_t idx;
    if (state.hyper.tau == 0.0) {
        // strict prioritization: argmax over p, lowest index wins ties
        idx = 0;
        for (std::size_t i = 1; i < state.priorities.size(); ++i)
            if (state.priorities[i] > state.priorities[idx]) idx = i;
    } else {
        const auto q = distribution(state);
        const double u = rng.uniform01();
        double acc = 0.0;
        idx = q.size() - 1;
        for (std::size_t i = 0; i < q.size(); ++i) {
            acc += q[i];
            if (u < acc) {
                idx = i;
                break;
            }
        }
    }
    ++state.times_chosen[idx];
    return idx;
}

void update(PriorityState& state, std::size_t index, bool mistake) {
    if (index >= state.priorities.size())
        throw RangeError("update: augmentation index out of range");
    double p = state.priorities[index];
    const auto& h = state.hyper;
    if (mistake) {
        const double adapt = std::pow(1.0 - p, h.beta);
        const double lr = h.base_lr_pos * (1.0 + h.boost * adapt);
        p += lr * (1.0 - p);
        ++state.times_mistake[index];
    } else {
        const double adapt = std::pow(p, h.beta);
        const double lr = h.base_lr_neg * (1.0 + h.boost * adapt);
        p -= lr * p;
    }
    state.priorities[index] = std::clamp(p, h.eps, 1.0 - h.eps);
}

}  // namespace serum::sampler
