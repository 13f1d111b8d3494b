#include "serum/core.hpp"

#include <cmath>
#include <cstdio>

#include "serum/errors.hpp"

namespace serum::core {

LatentTensor sample_noise(std::uint64_t seed, std::uint32_t channels,
                          std::uint32_t width, std::uint32_t height) {
    if (channels == 0 || width == 0 || height == 0)
        throw InvalidArgumentError("sample_noise: zero-sized dimension");
    LatentTensor out(channels, width, height);
    Rng rng(derive_seed(seed, "noise"));
    for (auto& v : out.values) v = static_cast<float>(rng.normal());
    return out;
}

LatentTensor normalize_pattern(const LatentTensor& raw) {
    if (raw.size() == 0) throw InvalidArgumentError("normalize_pattern: empty tensor");
    const double d = static_cast<double>(raw.size());
    double mean = 0.0;
    for (float v : raw.values) mean += v;
    mean /= d;
    double var = 0.0;
    for (float v : raw.values) {
        const double c = v - mean;
        var += c * c;
    }
    var /= d;  // population convention
    const double std_dev = std::sqrt(var);
    if (!(std_dev > 0.0) || !std::isfinite(std_dev))
        throw DegeneratePatternError("normalize_pattern: constant or non-finite input");
    LatentTensor out(raw.channels, raw.width, raw.height);
    for (std::size_t i = 0; i < raw.values.size(); ++i)
        out.values[i] = static_cast<float>((raw.values[i] - mean) / std_dev);
    return out;
}

WatermarkPattern make_pattern(std::uint64_t seed, std::uint32_t channels,
                              std::uint32_t width, std::uint32_t height,
                              double alpha_default, std::string id) {
    WatermarkPattern p;
    p.seed = seed;
    p.raw = LatentTensor(channels, width, height);
    Rng rng(derive_seed(seed, "pattern"));
    for (auto& v : p.raw.values) v = static_cast<float>(rng.normal());
    p.normalized = normalize_pattern(p.raw);
    p.alpha_default = alpha_default;
    if (id.empty()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "pat-%016llx",
                      static_cast<unsigned long long>(seed));
        id = buf;
    }
    p.id = std::move(id);
    return p;
}

LatentTensor inject(const LatentTensor& eta, const WatermarkPattern& pattern,
                    double alpha) {
    if (!eta.same_dims(pattern.normalized))
        throw ShapeError("inject: eta and pattern dims differ");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw RangeError("inject: alpha outside [0, 1]");
    const float a = static_cast<float>(std::sqrt(1.0 - alpha));
    const float b = static_cast<float>(std::sqrt(alpha));
    LatentTensor out(eta.channels, eta.width, eta.height);
    for (std::size_t i = 0; i < eta.values.size(); ++i)
        out.values[i] = a * eta.values[i] + b * pattern.normalized.values[i];
    return out;
}

LatentTensor inject_multi(const LatentTensor& eta,
                          const std::vector<const WatermarkPattern*>& patterns,
                          double alpha_total) {
    if (patterns.empty())
        throw InvalidArgumentError("inject_multi: empty pattern list");
    if (!(alpha_total >= 0.0 && alpha_total <= 1.0))
        throw RangeError("inject_multi: alpha outside [0, 1]");
    for (const auto* p : patterns)
        if (!eta.same_dims(p->normalized))
            throw ShapeError("inject_multi: pattern dims differ from eta");
    const double k = static_cast<double>(patterns.size());
    const float a = static_cast<float>(std::sqrt(1.0 - alpha_total));
    const float b = static_cast<float>(std::sqrt(alpha_total / k));
    LatentTensor out(eta.channels, eta.width, eta.height);
    for (std::size_t i = 0; i < eta.values.size(); ++i) {
        float acc = 0.0f;
        for (const auto* p : patterns) acc += p->normalized.values[i];
        out.values[i] = a * eta.values[i] + b * acc;
    }
    return out;
}

double kl_serum(double alpha, std::uint64_t d) {
    if (d == 0) throw InvalidArgumentError("kl_serum: d must be >= 1");
    if (alpha == 1.0)
        throw DivergenceInfiniteError("kl_serum: divergence is infinite at alpha = 1");
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw RangeError("kl_serum: alpha outside [0, 1)");
    return -0.5 * static_cast<double>(d) * std::log1p(-alpha);
}

double kl_gaussmarker(std::uint64_t d) {
    if (d == 0) throw InvalidArgumentError("kl_gaussmarker: d must be >= 1");
    return static_cast<double>(d) * 0.6931471805599453;
}

}  // namespace serum::core
