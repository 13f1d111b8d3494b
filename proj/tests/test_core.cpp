#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "serum/core.hpp"
#include "serum/errors.hpp"

using namespace serum;
using core::LatentTensor;

TEST_CASE("sample_noise determinism and seed sensitivity") {
    const auto a = core::sample_noise(7, 4, 16, 16);
    const auto b = core::sample_noise(7, 4, 16, 16);
    CHECK(a == b);
    const auto c = core::sample_noise(8, 4, 16, 16);
    CHECK(a.values != c.values);
    CHECK_THROWS_AS(core::sample_noise(7, 0, 16, 16), InvalidArgumentError);
}

TEST_CASE("sample_noise moments") {
    // ~1.3e5 standard-normal draws across many tensors
    double sum = 0, sum2 = 0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 128; ++seed) {
        const auto t = core::sample_noise(seed, 4, 16, 16);
        for (float v : t.values) {
            sum += v;
            sum2 += static_cast<double>(v) * v;
            ++n;
        }
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("normalize_pattern hand arithmetic") {
    LatentTensor t(1, 2, 1);
    t.values = {2.0f, 4.0f};
    const auto n = core::normalize_pattern(t);
    CHECK(n.values[0] == doctest::Approx(-1.0));
    CHECK(n.values[1] == doctest::Approx(1.0));
}

TEST_CASE("normalize_pattern idempotence and degenerate input") {
    const auto noise = core::sample_noise(3, 2, 5, 5);
    const auto once = core::normalize_pattern(noise);
    const auto twice = core::normalize_pattern(once);
    for (std::size_t i = 0; i < once.values.size(); ++i)
        CHECK(std::abs(once.values[i] - twice.values[i]) < 1e-6);

    LatentTensor flat(1, 3, 1);
    flat.values = {5.0f, 5.0f, 5.0f};
    CHECK_THROWS_AS(core::normalize_pattern(flat), DegeneratePatternError);
}

TEST_CASE("normalized pattern statistics") {
    const auto p = core::make_pattern(42, 4, 16, 16);
    const double d = static_cast<double>(p.normalized.size());
    double mean = 0, norm2 = 0;
    for (float v : p.normalized.values) {
        mean += v;
        norm2 += static_cast<double>(v) * v;
    }
    mean /= d;
    CHECK(std::abs(mean) < 1e-5);
    const double pop_std = std::sqrt(norm2 / d - mean * mean);
    CHECK(std::abs(pop_std - 1.0) < 1e-5);
    CHECK(std::abs(norm2 - d) / d < 1e-2);
}

TEST_CASE("inject endpoints and hand arithmetic") {
    const auto p = core::make_pattern(9, 2, 4, 4);
    const auto eta = core::sample_noise(5, 2, 4, 4);

    const auto zero = core::inject(eta, p, 0.0);
    CHECK(zero == eta);
    const auto one = core::inject(eta, p, 1.0);
    CHECK(one == p.normalized);

    core::WatermarkPattern pat;
    pat.normalized = LatentTensor(1, 2, 1);
    pat.normalized.values = {1.0f, -1.0f};
    LatentTensor e(1, 2, 1);
    e.values = {1.0f, 0.0f};
    const auto mixed = core::inject(e, pat, 0.5);
    CHECK(mixed.values[0] == doctest::Approx(1.41421).epsilon(1e-4));
    CHECK(mixed.values[1] == doctest::Approx(-0.70711).epsilon(1e-4));

    CHECK_THROWS_AS(core::inject(eta, p, 1.5), RangeError);
    const auto small = core::sample_noise(5, 2, 2, 2);
    CHECK_THROWS_AS(core::inject(small, p, 0.5), ShapeError);
}

TEST_CASE("inject linearity in eta at fixed pattern") {
    const auto p = core::make_pattern(11, 2, 4, 4);
    const auto e1 = core::sample_noise(21, 2, 4, 4);
    const auto e2 = core::sample_noise(22, 2, 4, 4);
    const double a = 0.3, b = 0.7;  // a + b = 1
    LatentTensor combo(2, 4, 4);
    for (std::size_t i = 0; i < combo.values.size(); ++i)
        combo.values[i] =
            static_cast<float>(a * e1.values[i] + b * e2.values[i]);
    const auto injected = core::inject(combo, p, 0.4);
    const auto i1 = core::inject(e1, p, 0.4);
    const auto i2 = core::inject(e2, p, 0.4);
    for (std::size_t i = 0; i < combo.values.size(); ++i)
        CHECK(injected.values[i] ==
              doctest::Approx(a * i1.values[i] + b * i2.values[i]).epsilon(1e-5));
}

TEST_CASE("inject_multi reduction and cancellation") {
    const auto eta_zero = [] {
        LatentTensor t(1, 2, 1);
        t.values = {0.0f, 0.0f};
        return t;
    }();

    core::WatermarkPattern pa, pb;
    pa.normalized = LatentTensor(1, 2, 1);
    pa.normalized.values = {1.0f, -1.0f};
    pb.normalized = LatentTensor(1, 2, 1);
    pb.normalized.values = {-1.0f, 1.0f};

    const auto cancel = core::inject_multi(eta_zero, {&pa, &pb}, 0.5);
    CHECK(cancel.values[0] == doctest::Approx(0.0));
    CHECK(cancel.values[1] == doctest::Approx(0.0));

    const auto twice = core::inject_multi(eta_zero, {&pa, &pa}, 0.5);
    CHECK(twice.values[0] == doctest::Approx(1.0));
    CHECK(twice.values[1] == doctest::Approx(-1.0));

    const auto p = core::make_pattern(33, 2, 4, 4);
    const auto eta = core::sample_noise(44, 2, 4, 4);
    const auto single = core::inject_multi(eta, {&p}, 0.37);
    const auto direct = core::inject(eta, p, 0.37);
    CHECK(single == direct);

    CHECK_THROWS_AS(core::inject_multi(eta, {}, 0.5), InvalidArgumentError);
}

TEST_CASE("injection moment convergence") {
    const std::uint32_t d_c = 1, d_w = 8, d_h = 8;
    const auto p = core::make_pattern(77, d_c, d_w, d_h);
    const double alpha = 0.5;
    const std::size_t draws = 10000;
    const std::size_t d = p.normalized.size();
    std::vector<double> mean(d, 0.0), m2(d, 0.0);
    for (std::size_t i = 0; i < draws; ++i) {
        const auto eta = core::sample_noise(1000 + i, d_c, d_w, d_h);
        const auto inj = core::inject(eta, p, alpha);
        for (std::size_t j = 0; j < d; ++j) {
            const double delta = inj.values[j] - mean[j];
            mean[j] += delta / static_cast<double>(i + 1);
            m2[j] += delta * (inj.values[j] - mean[j]);
        }
    }
    const double se_mean = std::sqrt((1.0 - alpha) / draws);
    const double se_var = (1.0 - alpha) * std::sqrt(2.0 / (draws - 1));
    std::size_t mean_ok = 0, var_ok = 0;
    for (std::size_t j = 0; j < d; ++j) {
        const double expect = std::sqrt(alpha) * p.normalized.values[j];
        if (std::abs(mean[j] - expect) < 3 * se_mean) ++mean_ok;
        const double var = m2[j] / (draws - 1);
        if (std::abs(var - (1.0 - alpha)) < 3 * se_var) ++var_ok;
    }
    // 3-sigma bands hold for ~99.7% of coordinates; allow the binomial tail
    CHECK(mean_ok >= d * 99 / 100);
    CHECK(var_ok >= d * 99 / 100);
}

TEST_CASE("kl closed forms") {
    CHECK(core::kl_serum(0.5, 16384) == doctest::Approx(5678.6).epsilon(0.0002));
    CHECK(core::kl_serum(0.0, 123) == 0.0);
    CHECK(core::kl_serum(0.5, 2) == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(core::kl_serum(1.0, 4), DivergenceInfiniteError);
    CHECK_THROWS_AS(core::kl_serum(-0.1, 4), RangeError);
    CHECK_THROWS_AS(core::kl_serum(1.1, 4), RangeError);

    CHECK(core::kl_gaussmarker(16384) == doctest::Approx(11356.5).epsilon(1e-4));
    CHECK(core::kl_gaussmarker(1) == doctest::Approx(std::log(2.0)));
    CHECK(core::kl_gaussmarker(2) == doctest::Approx(2.0 * std::log(2.0)));
}

TEST_CASE("kl ordering below alpha = 3/4") {
    for (std::uint64_t d : {1ULL, 2ULL, 64ULL, 16384ULL})
        for (double alpha : {0.0, 0.1, 0.3, 0.5, 0.6, 0.75})
            CHECK(core::kl_serum(alpha, d) <= core::kl_gaussmarker(d) + 1e-9);
}

TEST_CASE("kl Monte Carlo cross-check at d = 64") {
    const std::uint32_t c = 1, w = 8, h = 8;
    const auto p = core::make_pattern(5150, c, w, h);
    const double alpha = 0.5;
    const std::size_t n = 100000;
    const std::size_t d = p.normalized.size();
    std::vector<double> sum(d, 0.0), sum2(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto inj = core::inject(core::sample_noise(90000 + i, c, w, h), p, alpha);
        for (std::size_t j = 0; j < d; ++j) {
            sum[j] += inj.values[j];
            sum2[j] += static_cast<double>(inj.values[j]) * inj.values[j];
        }
    }
    // Gaussian closed form with empirical moments
    double kl = 0;
    for (std::size_t j = 0; j < d; ++j) {
        const double mu = sum[j] / n;
        const double var = sum2[j] / n - mu * mu;
        kl += 0.5 * (var + mu * mu - 1.0 - std::log(var));
    }
    const double expect = core::kl_serum(alpha, d);
    CHECK(std::abs(kl - expect) / expect < 0.02);
}
