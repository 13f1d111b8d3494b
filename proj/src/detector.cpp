#include "serum/detector.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numeric>

#include "serum/errors.hpp"
#include "serum/io.hpp"
#include "serum/rng.hpp"

#include <nlohmann/json.hpp>

namespace serum::detector {

using json = nlohmann::json;

namespace {

struct LayerDims {
    std::uint32_t c, w, h;
};

std::vector<LayerDims> layer_dims(const ModelSpec& spec) {
    std::vector<LayerDims> dims;
    dims.push_back({spec.in_channels, spec.in_width, spec.in_height});
    for (const auto& cv : spec.convs) {
        const auto& in = dims.back();
        if (cv.in_ch != in.c)
            throw core::ShapeError("ModelSpec: conv input channels mismatch");
        if (in.w + 2 * cv.pad < cv.kernel || in.h + 2 * cv.pad < cv.kernel)
            throw core::ShapeError("ModelSpec: kernel larger than padded input");
        dims.push_back({cv.out_ch, (in.w + 2 * cv.pad - cv.kernel) / cv.stride + 1,
                        (in.h + 2 * cv.pad - cv.kernel) / cv.stride + 1});
    }
    return dims;
}

std::size_t conv_params(const ConvSpec& cv) {
    return static_cast<std::size_t>(cv.out_ch) * cv.in_ch * cv.kernel * cv.kernel +
           cv.out_ch;
}

}  // namespace

ModelSpec ModelSpec::desk_default(std::uint32_t c, std::uint32_t w, std::uint32_t h) {
    ModelSpec spec;
    spec.in_channels = c;
    spec.in_width = w;
    spec.in_height = h;
    spec.convs = {
        {c, 32, 3, 1, 1},
        {32, 64, 3, 2, 1},
        {64, 128, 3, 2, 1},
    };
    spec.validate();
    return spec;
}

ModelSpec ModelSpec::tiny(std::uint32_t c, std::uint32_t w, std::uint32_t h,
                          std::uint32_t channels) {
    ModelSpec spec;
    spec.in_channels = c;
    spec.in_width = w;
    spec.in_height = h;
    spec.convs = {
        {c, channels, 3, 1, 1},
        {channels, channels, 3, 2, 1},
    };
    spec.validate();
    return spec;
}

void ModelSpec::validate() const {
    if (in_channels == 0 || in_width == 0 || in_height == 0)
        throw core::InvalidArgumentError("ModelSpec: zero input dimension");
    for (const auto& cv : convs) {
        if (cv.out_ch == 0 || cv.kernel == 0 || cv.stride == 0)
            throw core::InvalidArgumentError("ModelSpec: zero conv field");
        if (cv.pad >= cv.kernel)
            throw core::InvalidArgumentError("ModelSpec: padding must be < kernel");
    }
    layer_dims(*this);  // throws on inconsistent chains
}

std::size_t ModelSpec::param_count() const {
    std::size_t n = 0;
    for (const auto& cv : convs) n += conv_params(cv);
    return n + head_inputs() + 1;
}

DetectorModel DetectorModel::init(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    DetectorModel m;
    m.spec = spec;
    m.params.assign(spec.param_count(), 0.0f);
    core::Rng rng(core::derive_seed(seed, "detector.init"));
    std::size_t off = 0;
    for (const auto& cv : spec.convs) {
        const std::size_t nw =
            static_cast<std::size_t>(cv.out_ch) * cv.in_ch * cv.kernel * cv.kernel;
        const double he = std::sqrt(2.0 / (cv.in_ch * cv.kernel * cv.kernel));
        for (std::size_t i = 0; i < nw; ++i)
            m.params[off + i] = static_cast<float>(rng.normal() * he);
        off += nw + cv.out_ch;  // biases stay zero
    }
    // zero head: every input scores exactly 0.5 until trained
    return m;
}

namespace detail {

double clamp_score(double sigmoid_value) {
    return std::clamp(sigmoid_value, kScoreClamp, 1.0 - kScoreClamp);
}

template <typename T>
T forward_logit(const ModelSpec& spec, const T* params, const float* input,
                Workspace<T>& ws) {
    const auto dims = layer_dims(spec);
    ws.acts.resize(dims.size());
    for (std::size_t l = 0; l < dims.size(); ++l)
        ws.acts[l].assign(static_cast<std::size_t>(dims[l].c) * dims[l].w * dims[l].h,
                          T(0));
    {
        auto& a0 = ws.acts[0];
        for (std::size_t i = 0; i < a0.size(); ++i) a0[i] = static_cast<T>(input[i]);
    }

    std::size_t off = 0;
    for (std::size_t l = 0; l < spec.convs.size(); ++l) {
        const auto& cv = spec.convs[l];
        const auto& in = dims[l];
        const auto& out = dims[l + 1];
        const T* W = params + off;
        const T* b = W + static_cast<std::size_t>(cv.out_ch) * cv.in_ch * cv.kernel *
                             cv.kernel;
        const auto& src = ws.acts[l];
        auto& dst = ws.acts[l + 1];
        const int pad = static_cast<int>(cv.pad);
        for (std::uint32_t o = 0; o < cv.out_ch; ++o) {
            T* dchan = dst.data() + static_cast<std::size_t>(o) * out.h * out.w;
            for (std::uint32_t y = 0; y < out.h; ++y)
                for (std::uint32_t x = 0; x < out.w; ++x)
                    dchan[y * out.w + x] = b[o];
            for (std::uint32_t i = 0; i < cv.in_ch; ++i) {
                const T* schan = src.data() + static_cast<std::size_t>(i) * in.h * in.w;
                const T* wk = W + (static_cast<std::size_t>(o) * cv.in_ch + i) *
                                      cv.kernel * cv.kernel;
                for (std::uint32_t ky = 0; ky < cv.kernel; ++ky)
                    for (std::uint32_t kx = 0; kx < cv.kernel; ++kx) {
                        const T wv = wk[ky * cv.kernel + kx];
                        if (wv == T(0)) continue;
                        for (std::uint32_t y = 0; y < out.h; ++y) {
                            const int sy = static_cast<int>(y * cv.stride + ky) - pad;
                            if (sy < 0 || sy >= static_cast<int>(in.h)) continue;
                            const T* srow = schan + static_cast<std::size_t>(sy) * in.w;
                            T* drow = dchan + static_cast<std::size_t>(y) * out.w;
                            for (std::uint32_t x = 0; x < out.w; ++x) {
                                const int sx = static_cast<int>(x * cv.stride + kx) - pad;
                                if (sx < 0 || sx >= static_cast<int>(in.w)) continue;
                                drow[x] += wv * srow[sx];
                            }
                        }
                    }
            }
        }
        for (auto& v : dst)
            if (v < T(0)) v = T(0);
        off += conv_params(cv);
    }

    const auto& last = dims.back();
    const std::size_t npos = static_cast<std::size_t>(last.w) * last.h;
    ws.gap.assign(last.c, T(0));
    const auto& feat = ws.acts.back();
    for (std::uint32_t c = 0; c < last.c; ++c) {
        T acc(0);
        const T* chan = feat.data() + static_cast<std::size_t>(c) * npos;
        for (std::size_t i = 0; i < npos; ++i) acc += chan[i];
        ws.gap[c] = acc / static_cast<T>(npos);
    }

    const T* hw = params + off;
    T logit = hw[last.c];
    for (std::uint32_t c = 0; c < last.c; ++c) logit += hw[c] * ws.gap[c];
    return logit;
}

template <typename T>
void backward_logit(const ModelSpec& spec, const T* params, const float* /*input*/,
                    const Workspace<T>& ws, T dlogit, T* grads) {
    const auto dims = layer_dims(spec);
    const auto& last = dims.back();
    const std::size_t npos = static_cast<std::size_t>(last.w) * last.h;

    std::size_t head_off = 0;
    for (const auto& cv : spec.convs) head_off += conv_params(cv);
    const T* hw = params + head_off;

    // head and GAP
    for (std::uint32_t c = 0; c < last.c; ++c)
        grads[head_off + c] += dlogit * ws.gap[c];
    grads[head_off + last.c] += dlogit;

    std::vector<T> dact(static_cast<std::size_t>(last.c) * npos);
    for (std::uint32_t c = 0; c < last.c; ++c) {
        const T g = dlogit * hw[c] / static_cast<T>(npos);
        T* chan = dact.data() + static_cast<std::size_t>(c) * npos;
        for (std::size_t i = 0; i < npos; ++i) chan[i] = g;
    }

    std::vector<std::size_t> offsets(spec.convs.size());
    {
        std::size_t off = 0;
        for (std::size_t l = 0; l < spec.convs.size(); ++l) {
            offsets[l] = off;
            off += conv_params(spec.convs[l]);
        }
    }

    std::vector<T> dprev;
    for (std::size_t l = spec.convs.size(); l-- > 0;) {
        const auto& cv = spec.convs[l];
        const auto& in = dims[l];
        const auto& out = dims[l + 1];
        const auto& act_out = ws.acts[l + 1];
        const auto& act_in = ws.acts[l];
        const T* W = params + offsets[l];
        T* gW = grads + offsets[l];
        T* gb = gW + static_cast<std::size_t>(cv.out_ch) * cv.in_ch * cv.kernel *
                         cv.kernel;
        const int pad = static_cast<int>(cv.pad);

        // ReLU mask on the layer output
        for (std::size_t i = 0; i < dact.size(); ++i)
            if (act_out[i] <= T(0)) dact[i] = T(0);

        dprev.assign(static_cast<std::size_t>(in.c) * in.h * in.w, T(0));
        for (std::uint32_t o = 0; o < cv.out_ch; ++o) {
            const T* dchan = dact.data() + static_cast<std::size_t>(o) * out.h * out.w;
            {
                T acc(0);
                for (std::size_t i = 0; i < static_cast<std::size_t>(out.h) * out.w; ++i)
                    acc += dchan[i];
                gb[o] += acc;
            }
            for (std::uint32_t i = 0; i < cv.in_ch; ++i) {
                const T* schan =
                    act_in.data() + static_cast<std::size_t>(i) * in.h * in.w;
                T* pchan = dprev.data() + static_cast<std::size_t>(i) * in.h * in.w;
                const std::size_t wbase =
                    (static_cast<std::size_t>(o) * cv.in_ch + i) * cv.kernel * cv.kernel;
                for (std::uint32_t ky = 0; ky < cv.kernel; ++ky)
                    for (std::uint32_t kx = 0; kx < cv.kernel; ++kx) {
                        const T wv = W[wbase + ky * cv.kernel + kx];
                        T gw(0);
                        for (std::uint32_t y = 0; y < out.h; ++y) {
                            const int sy = static_cast<int>(y * cv.stride + ky) - pad;
                            if (sy < 0 || sy >= static_cast<int>(in.h)) continue;
                            const T* srow = schan + static_cast<std::size_t>(sy) * in.w;
                            T* prow = pchan + static_cast<std::size_t>(sy) * in.w;
                            const T* drow = dchan + static_cast<std::size_t>(y) * out.w;
                            for (std::uint32_t x = 0; x < out.w; ++x) {
                                const int sx = static_cast<int>(x * cv.stride + kx) - pad;
                                if (sx < 0 || sx >= static_cast<int>(in.w)) continue;
                                gw += drow[x] * srow[sx];
                                prow[sx] += wv * drow[x];
                            }
                        }
                        gW[wbase + ky * cv.kernel + kx] += gw;
                    }
            }
        }
        dact.swap(dprev);
    }
}

template double forward_logit<double>(const ModelSpec&, const double*, const float*,
                                      Workspace<double>&);
template float forward_logit<float>(const ModelSpec&, const float*, const float*,
                                    Workspace<float>&);
template void backward_logit<double>(const ModelSpec&, const double*, const float*,
                                     const Workspace<double>&, double, double*);
template void backward_logit<float>(const ModelSpec&, const float*, const float*,
                                    const Workspace<float>&, float, float*);

}  // namespace detail

double DetectorModel::forward(const LatentTensor& latent) const {
    if (latent.channels != spec.in_channels || latent.width != spec.in_width ||
        latent.height != spec.in_height)
        throw core::ShapeError("forward: latent dims do not match model input");
    ++forward_calls;
    detail::Workspace<float> ws;
    const float logit =
        detail::forward_logit<float>(spec, params.data(), latent.values.data(), ws);
    return detail::clamp_score(1.0 / (1.0 + std::exp(-static_cast<double>(logit))));
}

namespace {

struct SlotAccum {
    double sum = 0;
    std::size_t n = 0;
    double mean() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
};

// Shared evaluation core for loss() and gradients().
struct BatchEvaluator {
    const DetectorModel& model;
    bool want_grads;
    std::vector<float> grads;
    detail::Workspace<float> ws;

    explicit BatchEvaluator(const DetectorModel& m, bool g) : model(m), want_grads(g) {
        if (g) grads.assign(m.params.size(), 0.0f);
    }

    // positive_class: term is -log f; otherwise -log(1-f)
    double eval_one(const LatentTensor& latent, bool positive_class, double weight,
                    double* score_out) {
        if (latent.channels != model.spec.in_channels ||
            latent.width != model.spec.in_width ||
            latent.height != model.spec.in_height)
            throw core::ShapeError("loss: latent dims do not match model input");
        const float logit = detail::forward_logit<float>(
            model.spec, model.params.data(), latent.values.data(), ws);
        const double raw = 1.0 / (1.0 + std::exp(-static_cast<double>(logit)));
        const double f = detail::clamp_score(raw);
        if (score_out) *score_out = f;
        const double term = positive_class ? -std::log(f) : -std::log(1.0 - f);
        if (want_grads && raw > kScoreClamp && raw < 1.0 - kScoreClamp) {
            // d(-log sigma)/dz = f-1 ; d(-log(1-sigma))/dz = f
            const double dz = (positive_class ? f - 1.0 : f) * weight;
            detail::backward_logit<float>(model.spec, model.params.data(),
                                          latent.values.data(), ws,
                                          static_cast<float>(dz), grads.data());
        }
        return term;
    }

    SlotAccum eval_slot(const std::vector<const LatentTensor*>& slot,
                        bool positive_class, std::vector<double>* scores) {
        SlotAccum acc;
        acc.n = slot.size();
        const double weight = slot.empty() ? 0.0 : 1.0 / static_cast<double>(slot.size());
        for (const auto* latent : slot) {
            double score = 0;
            acc.sum += eval_one(*latent, positive_class, weight, &score);
            if (scores) scores->push_back(score);
        }
        return acc;
    }
};

LossBreakdown eval_batch(const Batch& batch, BatchEvaluator& ev,
                         std::vector<double>* marked_dyn_scores,
                         std::vector<double>* clean_dyn_scores) {
    if (batch.marked.empty() || batch.clean.empty())
        throw InvalidBatchError("loss: both static classes must be nonempty");
    LossBreakdown b;
    b.marked_clean = ev.eval_slot(batch.marked, true, nullptr).mean();
    b.marked_transformed = ev.eval_slot(batch.marked_dynamic, true, marked_dyn_scores).mean();
    b.marked_precomputed = ev.eval_slot(batch.marked_pre, true, nullptr).mean();
    b.clean = ev.eval_slot(batch.clean, false, nullptr).mean();
    b.clean_transformed = ev.eval_slot(batch.clean_dynamic, false, clean_dyn_scores).mean();
    b.clean_precomputed = ev.eval_slot(batch.clean_pre, false, nullptr).mean();
    b.total = b.marked_clean + b.marked_transformed + b.marked_precomputed + b.clean +
              b.clean_transformed + b.clean_precomputed;
    return b;
}

}  // namespace

LossBreakdown loss(const DetectorModel& model, const Batch& batch) {
    BatchEvaluator ev(model, false);
    return eval_batch(batch, ev, nullptr, nullptr);
}

BatchGradients gradients(const DetectorModel& model, const Batch& batch) {
    BatchEvaluator ev(model, true);
    BatchGradients out;
    out.loss = eval_batch(batch, ev, &out.marked_dynamic_scores,
                          &out.clean_dynamic_scores);
    out.grads = std::move(ev.grads);
    return out;
}

OptimizerState OptimizerState::init(std::size_t n_params, double lr) {
    OptimizerState s;
    s.m.assign(n_params, 0.0f);
    s.v.assign(n_params, 0.0f);
    s.lr = lr;
    return s;
}

void adam_step(OptimizerState& opt, std::span<float> params,
               std::span<const float> grads) {
    if (params.size() != grads.size() || params.size() != opt.m.size())
        throw core::ShapeError("adam_step: array length mismatch");
    for (float g : grads)
        if (!std::isfinite(g))
            throw TrainingDivergedError("adam_step: non-finite gradient");
    opt.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        const double m = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        const double v = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        opt.m[i] = static_cast<float>(m);
        opt.v[i] = static_cast<float>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        params[i] = static_cast<float>(params[i] - opt.lr * mhat /
                                                       (std::sqrt(vhat) + opt.eps));
    }
}

double scheduler_step(SchedulerState& sched, double epoch_val_loss) {
    if (!std::isfinite(epoch_val_loss))
        throw TrainingDivergedError("scheduler_step: non-finite validation loss");
    if (!sched.has_best || epoch_val_loss < sched.best_loss) {
        sched.best_loss = epoch_val_loss;
        sched.has_best = true;
        sched.bad_epochs = 0;
    } else {
        ++sched.bad_epochs;
        if (sched.bad_epochs > sched.patience) {
            sched.lr *= sched.factor;
            sched.bad_epochs = 0;
        }
    }
    return sched.lr;
}

double detect(const DetectorModel& model, const toygen::ToyPipeline& pipeline,
              const core::ImageTensor& image) {
    return model.forward(pipeline.encode(image));
}

namespace {

std::vector<std::uint32_t> shuffled_indices(std::size_t n, core::Rng& rng) {
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

}  // namespace

TrainResult train(const TrainConfig& config,
                  const std::vector<const toygen::DatasetEntry*>& clean_set,
                  const std::vector<const toygen::DatasetEntry*>& marked_set,
                  const perturb::AugmentedDataset* clean_pre,
                  const perturb::AugmentedDataset* marked_pre,
                  sampler::PriorityState& priorities,
                  const toygen::ToyPipeline& pipeline, const TrainResult* resume_from) {
    if (clean_set.empty() || marked_set.empty())
        throw InvalidBatchError("train: datasets must be nonempty");
    const std::uint32_t m = config.augmentations.empty() ? 0 : config.dynamic_count;
    if (m > config.batch_clean || m > config.batch_marked)
        throw core::InvalidArgumentError("train: m exceeds per-class batch size");
    if (m > 0 && priorities.size() != config.augmentations.size())
        throw core::InvalidArgumentError(
            "train: sampler size does not match augmentation count");

    const auto t0 = std::chrono::steady_clock::now();

    TrainResult r;
    if (resume_from) {
        r = *resume_from;
    } else {
        r.model = DetectorModel::init(config.model, config.seed);
        r.optimizer = OptimizerState::init(r.model.params.size(), config.lr);
        r.optimizer.beta1 = config.beta1;
        r.optimizer.beta2 = config.beta2;
        r.optimizer.eps = config.adam_eps;
        r.scheduler = SchedulerState{};
        r.scheduler.factor = config.sched_factor;
        r.scheduler.patience = config.sched_patience;
        r.scheduler.lr = config.lr;
    }

    // held-out split per class for the plateau scheduler
    auto split = [&](const std::vector<const toygen::DatasetEntry*>& all,
                     std::uint64_t tag) {
        core::Rng rng(core::derive_seed(config.seed, "train.val_split", tag));
        auto idx = shuffled_indices(all.size(), rng);
        std::size_t n_val = static_cast<std::size_t>(
            std::floor(config.val_fraction * static_cast<double>(all.size())));
        if (n_val >= all.size()) n_val = all.size() - 1;
        std::pair<std::vector<const toygen::DatasetEntry*>,
                  std::vector<const toygen::DatasetEntry*>>
            out;
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_val ? out.second : out.first).push_back(all[idx[i]]);
        return out;
    };
    const auto [clean_train, clean_val] = split(clean_set, 0);
    const auto [marked_train, marked_val] = split(marked_set, 1);

    const std::uint32_t batch_c = std::min<std::uint32_t>(
        config.batch_clean, static_cast<std::uint32_t>(clean_train.size()));
    const std::uint32_t batch_m = std::min<std::uint32_t>(
        config.batch_marked, static_cast<std::uint32_t>(marked_train.size()));
    const std::size_t steps_per_epoch =
        std::max<std::size_t>(1, std::min(clean_train.size() / batch_c,
                                          marked_train.size() / batch_m));

    auto pick_pre = [](const perturb::AugmentedDataset* pre,
                       const toygen::DatasetEntry* entry,
                       core::Rng& rng) -> const LatentTensor* {
        if (!pre) return nullptr;
        const auto* rows = pre->rows_for(entry->prompt_seed);
        if (!rows || rows->empty()) return nullptr;
        return &pre->rows[(*rows)[rng.below(rows->size())]].latent;
    };

    for (std::uint32_t epoch = config.start_epoch;
         epoch < config.start_epoch + config.epochs; ++epoch) {
        core::Rng shuffle_c(core::derive_seed(config.seed, "train.shuffle.c", epoch));
        core::Rng shuffle_m(core::derive_seed(config.seed, "train.shuffle.m", epoch));
        const auto order_c = shuffled_indices(clean_train.size(), shuffle_c);
        const auto order_m = shuffled_indices(marked_train.size(), shuffle_m);

        double epoch_loss = 0;
        LossBreakdown term_sums;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            Batch batch;
            std::vector<LatentTensor> dynamic_store;
            dynamic_store.reserve(2 * m);
            std::vector<std::size_t> dyn_aug;

            core::Rng pre_rng(core::derive_seed(config.seed, "train.pre", epoch, step));
            core::Rng samp_rng(
                core::derive_seed(config.seed, "train.sampler", epoch, step));

            for (std::uint32_t i = 0; i < batch_c; ++i) {
                const auto src = order_c[(step * batch_c + i) % clean_train.size()];
                batch.clean.push_back(&clean_train[src]->latent);
                if (const auto* pl = pick_pre(clean_pre, clean_train[src], pre_rng))
                    batch.clean_pre.push_back(pl);
            }
            for (std::uint32_t i = 0; i < batch_m; ++i) {
                const auto src = order_m[(step * batch_m + i) % marked_train.size()];
                batch.marked.push_back(&marked_train[src]->latent);
                if (const auto* pl = pick_pre(marked_pre, marked_train[src], pre_rng))
                    batch.marked_pre.push_back(pl);
            }

            // one augmentation draw per dynamic slot; the same kind is
            // applied to the slot's marked and clean sample with
            // independent parameter seeds
            for (std::uint32_t j = 0; j < m; ++j) {
                const std::size_t aug = sampler::sample(priorities, samp_rng);
                dyn_aug.push_back(aug);
                const auto& spec = config.augmentations[aug];
                const auto* me = marked_train[order_m[(step * batch_m + j) %
                                                      marked_train.size()]];
                const auto* ce = clean_train[order_c[(step * batch_c + j) %
                                                     clean_train.size()]];
                const std::uint64_t sm = core::derive_seed(
                    config.seed, "train.dyn.m", (static_cast<std::uint64_t>(epoch) << 24) | step, j);
                const std::uint64_t sc = core::derive_seed(
                    config.seed, "train.dyn.c", (static_cast<std::uint64_t>(epoch) << 24) | step, j);
                dynamic_store.push_back(
                    pipeline.encode(perturb::apply(spec, me->image, sm)));
                batch.marked_dynamic.push_back(&dynamic_store.back());
                dynamic_store.push_back(
                    pipeline.encode(perturb::apply(spec, ce->image, sc)));
                batch.clean_dynamic.push_back(&dynamic_store.back());
            }

            auto bg = gradients(r.model, batch);
            if (!std::isfinite(bg.loss.total))
                throw TrainingDivergedError(
                    "train: non-finite loss at epoch " + std::to_string(epoch) +
                    " step " + std::to_string(step));
            r.optimizer.lr = r.scheduler.lr;
            adam_step(r.optimizer, r.model.params, bg.grads);

            // per-sample mistake feedback at threshold 0.5
            for (std::uint32_t j = 0; j < m; ++j) {
                sampler::update(priorities, dyn_aug[j],
                                bg.marked_dynamic_scores[j] < 0.5);
                sampler::update(priorities, dyn_aug[j],
                                bg.clean_dynamic_scores[j] >= 0.5);
            }

            epoch_loss += bg.loss.total;
            term_sums.marked_clean += bg.loss.marked_clean;
            term_sums.marked_transformed += bg.loss.marked_transformed;
            term_sums.marked_precomputed += bg.loss.marked_precomputed;
            term_sums.clean += bg.loss.clean;
            term_sums.clean_transformed += bg.loss.clean_transformed;
            term_sums.clean_precomputed += bg.loss.clean_precomputed;
        }

        // static-term validation loss on the held-out split
        Batch val_batch;
        for (const auto* e : clean_val.empty() ? clean_train : clean_val)
            val_batch.clean.push_back(&e->latent);
        for (const auto* e : marked_val.empty() ? marked_train : marked_val)
            val_batch.marked.push_back(&e->latent);
        const double val_loss = loss(r.model, val_batch).total;
        const double lr_after = scheduler_step(r.scheduler, val_loss);

        EpochRecord rec;
        rec.epoch = epoch;
        const double ns = static_cast<double>(steps_per_epoch);
        rec.train_loss = epoch_loss / ns;
        rec.val_loss = val_loss;
        rec.lr = lr_after;
        rec.mean_terms = term_sums;
        rec.mean_terms.marked_clean /= ns;
        rec.mean_terms.marked_transformed /= ns;
        rec.mean_terms.marked_precomputed /= ns;
        rec.mean_terms.clean /= ns;
        rec.mean_terms.clean_transformed /= ns;
        rec.mean_terms.clean_precomputed /= ns;
        rec.mean_terms.total = rec.train_loss;
        rec.priorities = priorities.priorities;
        r.history.epochs.push_back(std::move(rec));
    }

    r.history.wall_seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

namespace {

json spec_to_json(const ModelSpec& s) {
    json convs = json::array();
    for (const auto& cv : s.convs)
        convs.push_back({{"in", cv.in_ch},
                         {"out", cv.out_ch},
                         {"kernel", cv.kernel},
                         {"stride", cv.stride},
                         {"pad", cv.pad}});
    return {{"in_channels", s.in_channels},
            {"in_width", s.in_width},
            {"in_height", s.in_height},
            {"convs", convs}};
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.in_channels = j.at("in_channels");
    s.in_width = j.at("in_width");
    s.in_height = j.at("in_height");
    for (const auto& cv : j.at("convs"))
        s.convs.push_back({cv.at("in"), cv.at("out"), cv.at("kernel"), cv.at("stride"),
                           cv.at("pad")});
    s.validate();
    return s;
}

json history_to_json(const TrainHistory& h) {
    json epochs = json::array();
    for (const auto& e : h.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"lr", e.lr},
                          {"terms",
                           {{"marked_clean", e.mean_terms.marked_clean},
                            {"marked_transformed", e.mean_terms.marked_transformed},
                            {"marked_precomputed", e.mean_terms.marked_precomputed},
                            {"clean", e.mean_terms.clean},
                            {"clean_transformed", e.mean_terms.clean_transformed},
                            {"clean_precomputed", e.mean_terms.clean_precomputed}}},
                          {"priorities", e.priorities}});
    }
    return {{"epochs", epochs}, {"wall_seconds", h.wall_seconds}};
}

TrainHistory history_from_json(const json& j) {
    TrainHistory h;
    h.wall_seconds = j.value("wall_seconds", 0.0);
    for (const auto& e : j.at("epochs")) {
        EpochRecord rec;
        rec.epoch = e.at("epoch");
        rec.train_loss = e.at("train_loss");
        rec.val_loss = e.at("val_loss");
        rec.lr = e.at("lr");
        const auto& t = e.at("terms");
        rec.mean_terms.marked_clean = t.at("marked_clean");
        rec.mean_terms.marked_transformed = t.at("marked_transformed");
        rec.mean_terms.marked_precomputed = t.at("marked_precomputed");
        rec.mean_terms.clean = t.at("clean");
        rec.mean_terms.clean_transformed = t.at("clean_transformed");
        rec.mean_terms.clean_precomputed = t.at("clean_precomputed");
        rec.priorities = e.at("priorities").get<std::vector<double>>();
        h.epochs.push_back(std::move(rec));
    }
    return h;
}

json train_config_to_json(const TrainConfig& c) {
    json augs = json::array();
    for (const auto& a : c.augmentations) augs.push_back(json::parse(a.to_text()));
    return {{"epochs", c.epochs},
            {"batch_clean", c.batch_clean},
            {"batch_marked", c.batch_marked},
            {"m", c.dynamic_count},
            {"alpha", c.alpha},
            {"augmentations", augs},
            {"precompute_copies", c.precompute_copies},
            {"seed", c.seed},
            {"val_fraction", c.val_fraction},
            {"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"sched_factor", c.sched_factor},
            {"sched_patience", c.sched_patience},
            {"model", spec_to_json(c.model)},
            {"start_epoch", c.start_epoch}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs");
    c.batch_clean = j.at("batch_clean");
    c.batch_marked = j.at("batch_marked");
    c.dynamic_count = j.at("m");
    c.alpha = j.at("alpha");
    for (const auto& a : j.at("augmentations"))
        c.augmentations.push_back(perturb::PerturbSpec::from_text(a.dump()));
    c.precompute_copies = j.at("precompute_copies");
    c.seed = j.at("seed");
    c.val_fraction = j.at("val_fraction");
    c.lr = j.at("lr");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.adam_eps = j.at("adam_eps");
    c.sched_factor = j.at("sched_factor");
    c.sched_patience = j.at("sched_patience");
    c.model = spec_from_json(j.at("model"));
    c.start_epoch = j.at("start_epoch");
    return c;
}

}  // namespace

void write_checkpoint(const Checkpoint& ck, const std::string& path) {
    io::ByteWriter w;
    w.magic("SRMC");
    w.u16(1);
    w.str(train_config_to_json(ck.config).dump());
    w.str(spec_to_json(ck.model.spec).dump());
    w.u64(ck.model.params.size());
    w.f32_array(ck.model.params);
    w.u64(ck.optimizer.step);
    w.f64(ck.optimizer.lr);
    w.f64(ck.optimizer.beta1);
    w.f64(ck.optimizer.beta2);
    w.f64(ck.optimizer.eps);
    w.f32_array(ck.optimizer.m);
    w.f32_array(ck.optimizer.v);
    w.f64(ck.scheduler.best_loss);
    w.u8(ck.scheduler.has_best ? 1 : 0);
    w.u32(ck.scheduler.bad_epochs);
    w.f64(ck.scheduler.factor);
    w.u32(ck.scheduler.patience);
    w.f64(ck.scheduler.lr);
    w.u32(static_cast<std::uint32_t>(ck.priorities.size()));
    w.f64_array(ck.priorities.priorities);
    w.f64(ck.priorities.hyper.eps);
    w.f64(ck.priorities.hyper.eps_smooth);
    w.f64(ck.priorities.hyper.tau);
    w.f64(ck.priorities.hyper.base_lr_pos);
    w.f64(ck.priorities.hyper.base_lr_neg);
    w.f64(ck.priorities.hyper.boost);
    w.f64(ck.priorities.hyper.beta);
    for (auto v : ck.priorities.times_chosen) w.u64(v);
    for (auto v : ck.priorities.times_mistake) w.u64(v);
    w.u32(ck.next_epoch);
    w.str(history_to_json(ck.history).dump());
    io::Footer footer(ck.metadata.begin(), ck.metadata.end());
    footer["generator"] = std::string(core::kGeneratorName);
    footer["param_count"] = std::to_string(ck.model.params.size());
    io::write_footer(w, footer);
    io::atomic_write_file(path, w.bytes());
}

Checkpoint read_checkpoint(const std::string& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes.data(), bytes.size(), path);
    r.expect_magic("SRMC");
    const auto version = r.u16("version");
    if (version != 1)
        throw ParseError(path + ": unsupported checkpoint version", 4);
    Checkpoint ck;
    ck.config = train_config_from_json(json::parse(r.str("train config")));
    ck.model.spec = spec_from_json(json::parse(r.str("model spec")));
    const std::uint64_t np = r.u64("param count");
    if (np != ck.model.spec.param_count())
        throw ParseError(path + ": parameter count does not match layer spec",
                         r.offset());
    r.f32_array(ck.model.params, static_cast<std::size_t>(np), "parameters");
    ck.optimizer.step = r.u64("optimizer step");
    ck.optimizer.lr = r.f64("optimizer lr");
    ck.optimizer.beta1 = r.f64("optimizer beta1");
    ck.optimizer.beta2 = r.f64("optimizer beta2");
    ck.optimizer.eps = r.f64("optimizer eps");
    r.f32_array(ck.optimizer.m, static_cast<std::size_t>(np), "optimizer m");
    r.f32_array(ck.optimizer.v, static_cast<std::size_t>(np), "optimizer v");
    ck.scheduler.best_loss = r.f64("scheduler best");
    ck.scheduler.has_best = r.u8("scheduler has_best") != 0;
    ck.scheduler.bad_epochs = r.u32("scheduler bad_epochs");
    ck.scheduler.factor = r.f64("scheduler factor");
    ck.scheduler.patience = r.u32("scheduler patience");
    ck.scheduler.lr = r.f64("scheduler lr");
    const std::uint32_t naug = r.u32("sampler size");
    r.f64_array(ck.priorities.priorities, naug, "sampler priorities");
    ck.priorities.hyper.eps = r.f64("sampler eps");
    ck.priorities.hyper.eps_smooth = r.f64("sampler eps_smooth");
    ck.priorities.hyper.tau = r.f64("sampler tau");
    ck.priorities.hyper.base_lr_pos = r.f64("sampler lr_pos");
    ck.priorities.hyper.base_lr_neg = r.f64("sampler lr_neg");
    ck.priorities.hyper.boost = r.f64("sampler boost");
    ck.priorities.hyper.beta = r.f64("sampler beta");
    ck.priorities.times_chosen.resize(naug);
    for (auto& v : ck.priorities.times_chosen) v = r.u64("sampler chosen");
    ck.priorities.times_mistake.resize(naug);
    for (auto& v : ck.priorities.times_mistake) v = r.u64("sampler mistakes");
    ck.next_epoch = r.u32("next epoch");
    ck.history = history_from_json(json::parse(r.str("history")));
    const auto footer = io::read_footer(r);
    ck.metadata.insert(footer.begin(), footer.end());
    return ck;
}

}  // namespace serum::detector
