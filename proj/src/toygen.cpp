#include "serum/toygen.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "serum/errors.hpp"
#include "serum/io.hpp"
#include "serum/rng.hpp"

namespace serum::toygen {

namespace {

constexpr float kLocalGain = 0.35f;    // residual gain of the 3x3 mixing
constexpr float kGlobalGain = 0.6f;    // residual gain of the carrier broadcast
constexpr float kDecodeScale = 1.0f;   // latent-to-pixel amplitude
constexpr std::uint32_t kStageCount = 3;
constexpr std::uint32_t kCarrierTarget = 16;  // per stage

// Orthonormal DCT-II basis value on an n-point grid.
double dct_basis(std::uint32_t f, std::uint32_t x, std::uint32_t n) {
    if (f == 0) return std::sqrt(1.0 / n);
    return std::sqrt(2.0 / n) *
           std::cos(3.14159265358979323846 * f * (2.0 * x + 1.0) / (2.0 * n));
}

// Zigzag enumeration of (fy, fx) block-basis indices.
std::vector<std::pair<std::uint32_t, std::uint32_t>> zigzag(std::uint32_t n) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
    for (std::uint32_t sum = 0; out.size() < n * n && sum < 2 * n; ++sum)
        for (std::uint32_t fy = 0; fy <= sum && fy < n; ++fy) {
            const std::uint32_t fx = sum - fy;
            if (fx < n) out.emplace_back(fy, fx);
        }
    return out;
}

const double kColorBasis[3][3] = {
    {0.5773502691896258, 0.5773502691896258, 0.5773502691896258},
    {0.7071067811865476, 0.0, -0.7071067811865476},
    {0.4082482904638630, -0.8164965809277260, 0.4082482904638630},
};

}  // namespace

ToyPipeline::ToyPipeline(std::uint64_t pipeline_seed, std::uint32_t channels,
                         std::uint32_t width, std::uint32_t height)
    : seed_(pipeline_seed), c_(channels), w_(width), h_(height) {
    if (c_ == 0 || w_ == 0 || h_ == 0)
        throw core::InvalidArgumentError("ToyPipeline: zero-sized latent dimension");

    // Per-channel block basis: spatial zigzag index paired with a color
    // direction; distinct pairs are jointly orthonormal, which makes encode
    // an exact inverse of decode away from the [0,1] clamp.
    basis_.assign(static_cast<std::size_t>(c_) * kBlock * kBlock, 0.0f);
    color_.assign(static_cast<std::size_t>(c_) * 3, 0.0f);
    const auto zz = zigzag(kBlock);
    for (std::uint32_t ch = 0; ch < c_; ++ch) {
        const auto [fy, fx] = zz[(ch / 3) % zz.size()];
        for (std::uint32_t u = 0; u < kBlock; ++u)
            for (std::uint32_t v = 0; v < kBlock; ++v)
                basis_[(static_cast<std::size_t>(ch) * kBlock + u) * kBlock + v] =
                    static_cast<float>(dct_basis(fy, u, kBlock) *
                                       dct_basis(fx, v, kBlock));
        for (std::uint32_t j = 0; j < 3; ++j)
            color_[ch * 3 + j] = static_cast<float>(kColorBasis[ch % 3][j]);
    }

    // Carrier frequency table over the latent grid, low energy first.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> freqs;
    for (std::uint32_t fy = 0; fy < h_; ++fy)
        for (std::uint32_t fx = 0; fx < w_; ++fx)
            if (fx + fy > 0) freqs.emplace_back(fy, fx);
    std::sort(freqs.begin(), freqs.end(), [](auto a, auto b) {
        const auto ea = a.first * a.first + a.second * a.second;
        const auto eb = b.first * b.first + b.second * b.second;
        return ea != eb ? ea < eb : a < b;
    });
    carriers_per_stage_ = std::min<std::uint32_t>(
        kCarrierTarget,
        static_cast<std::uint32_t>(freqs.size() * c_ / kStageCount));

    const std::size_t d = static_cast<std::size_t>(c_) * w_ * h_;
    stages_.resize(kStageCount);
    for (std::uint32_t s = 0; s < kStageCount; ++s) {
        auto& stage = stages_[s];
        core::Rng wrng(core::derive_seed(seed_, "toy.mix", s));
        const double wscale = 0.5 / std::sqrt(9.0 * c_);
        stage.conv.resize(static_cast<std::size_t>(c_) * c_ * 9);
        for (auto& w : stage.conv) w = static_cast<float>(wrng.normal() * wscale);

        stage.carriers.resize(carriers_per_stage_);
        for (std::uint32_t k = 0; k < carriers_per_stage_; ++k) {
            auto& car = stage.carriers[k];
            const std::uint32_t g = s * carriers_per_stage_ + k;
            car.channel = g % c_;
            const auto [fy, fx] = freqs[(g / c_) % freqs.size()];
            car.field.resize(static_cast<std::size_t>(w_) * h_);
            const double amp = std::sqrt(static_cast<double>(w_) * h_);
            for (std::uint32_t y = 0; y < h_; ++y)
                for (std::uint32_t x = 0; x < w_; ++x)
                    car.field[static_cast<std::size_t>(y) * w_ + x] =
                        static_cast<float>(amp * dct_basis(fy, y, h_) *
                                           dct_basis(fx, x, w_));

            core::Rng prng(core::derive_seed(seed_, "toy.proj", g));
            car.projection.resize(d);
            double norm2 = 0.0;
            for (auto& v : car.projection) {
                v = static_cast<float>(prng.normal());
                norm2 += static_cast<double>(v) * v;
            }
            const float inv = static_cast<float>(1.0 / std::sqrt(norm2));
            for (auto& v : car.projection) v *= inv;
        }
    }
}

void ToyPipeline::check_latent(const LatentTensor& z) const {
    if (z.channels != c_ || z.width != w_ || z.height != h_)
        throw core::ShapeError("ToyPipeline: latent dims do not match pipeline");
}

void ToyPipeline::check_image(const ImageTensor& im) const {
    if (im.channels != 3 || im.width != image_width() || im.height != image_height())
        throw core::ShapeError("ToyPipeline: image dims do not match pipeline");
}

LatentTensor ToyPipeline::denoise(const LatentTensor& z) const {
    check_latent(z);
    LatentTensor cur = z;
    LatentTensor mixed(c_, w_, h_);
    const float ggain =
        carriers_per_stage_ > 0
            ? kGlobalGain / std::sqrt(static_cast<float>(carriers_per_stage_))
            : 0.0f;
    for (const auto& stage : stages_) {
        // local cross-channel 3x3 residual
        for (std::uint32_t co = 0; co < c_; ++co)
            for (std::uint32_t y = 0; y < h_; ++y)
                for (std::uint32_t x = 0; x < w_; ++x) {
                    float acc = 0.0f;
                    for (std::uint32_t ci = 0; ci < c_; ++ci)
                        for (int ky = -1; ky <= 1; ++ky)
                            for (int kx = -1; kx <= 1; ++kx) {
                                const int yy = static_cast<int>(y) + ky;
                                const int xx = static_cast<int>(x) + kx;
                                if (yy < 0 || xx < 0 || yy >= static_cast<int>(h_) ||
                                    xx >= static_cast<int>(w_))
                                    continue;
                                acc += stage.conv[((static_cast<std::size_t>(co) * c_ +
                                                    ci) * 3 + (ky + 1)) * 3 + (kx + 1)] *
                                       cur.at(ci, static_cast<std::uint32_t>(yy),
                                              static_cast<std::uint32_t>(xx));
                            }
                    mixed.at(co, y, x) =
                        cur.at(co, y, x) + kLocalGain * std::tanh(acc);
                }
        // bounded global-context broadcast
        for (const auto& car : stage.carriers) {
            double t = 0.0;
            for (std::size_t i = 0; i < mixed.values.size(); ++i)
                t += static_cast<double>(mixed.values[i]) * car.projection[i];
            const float a = ggain * static_cast<float>(std::tanh(t));
            float* chan = &mixed.values[static_cast<std::size_t>(car.channel) * h_ * w_];
            for (std::size_t i = 0; i < car.field.size(); ++i)
                chan[i] += a * car.field[i];
        }
        std::swap(cur, mixed);
    }
    return cur;
}

ImageTensor ToyPipeline::decode(const LatentTensor& z) const {
    check_latent(z);
    ImageTensor im(3, image_width(), image_height());
    std::fill(im.values.begin(), im.values.end(), 0.5f);
    for (std::uint32_t ch = 0; ch < c_; ++ch) {
        const float* B = &basis_[static_cast<std::size_t>(ch) * kBlock * kBlock];
        const float* col = &color_[ch * 3];
        for (std::uint32_t by = 0; by < h_; ++by)
            for (std::uint32_t bx = 0; bx < w_; ++bx) {
                const float v = kDecodeScale * z.at(ch, by, bx);
                if (v == 0.0f) continue;
                for (std::uint32_t j = 0; j < 3; ++j) {
                    const float cv = v * col[j];
                    if (cv == 0.0f) continue;
                    for (std::uint32_t u = 0; u < kBlock; ++u) {
                        float* row = &im.values[im.index(j, by * kBlock + u,
                                                         bx * kBlock)];
                        const float* brow = &B[u * kBlock];
                        for (std::uint32_t vv = 0; vv < kBlock; ++vv)
                            row[vv] += cv * brow[vv];
                    }
                }
            }
    }
    for (auto& v : im.values) v = std::clamp(v, 0.0f, 1.0f);
    return im;
}

ImageTensor ToyPipeline::generate(const LatentTensor& eta) const {
    return decode(denoise(eta));
}

LatentTensor ToyPipeline::encode(const ImageTensor& image) const {
    check_image(image);
    LatentTensor z(c_, w_, h_);
    for (std::uint32_t ch = 0; ch < c_; ++ch) {
        const float* B = &basis_[static_cast<std::size_t>(ch) * kBlock * kBlock];
        const float* col = &color_[ch * 3];
        for (std::uint32_t by = 0; by < h_; ++by)
            for (std::uint32_t bx = 0; bx < w_; ++bx) {
                double acc = 0.0;
                for (std::uint32_t j = 0; j < 3; ++j) {
                    if (col[j] == 0.0f) continue;
                    double sp = 0.0;
                    for (std::uint32_t u = 0; u < kBlock; ++u) {
                        const float* row = &image.values[image.index(
                            j, by * kBlock + u, bx * kBlock)];
                        const float* brow = &B[u * kBlock];
                        for (std::uint32_t vv = 0; vv < kBlock; ++vv)
                            sp += static_cast<double>(row[vv] - 0.5f) * brow[vv];
                    }
                    acc += sp * col[j];
                }
                z.at(ch, by, bx) = static_cast<float>(acc / kDecodeScale);
            }
    }
    return z;
}

std::map<std::string, std::string> ToyPipeline::construction() const {
    return {
        {"pipeline_seed", std::to_string(seed_)},
        {"latent_dims", std::to_string(c_) + "x" + std::to_string(w_) + "x" +
                            std::to_string(h_)},
        {"stages", std::to_string(kStageCount)},
        {"local_gain", std::to_string(kLocalGain)},
        {"global_gain", std::to_string(kGlobalGain)},
        {"carriers_per_stage", std::to_string(carriers_per_stage_)},
        {"decode_scale", std::to_string(kDecodeScale)},
        {"block", std::to_string(kBlock)},
        {"generator", std::string(core::kGeneratorName)},
    };
}

Dataset make_dataset(const ToyPipeline& pipeline, std::uint32_t n_per_class,
                     const WatermarkPattern& pattern, double alpha,
                     std::uint64_t base_seed) {
    if (n_per_class == 0)
        throw core::InvalidArgumentError("make_dataset: n_per_class must be >= 1");
    Dataset ds;
    ds.entries.reserve(2 * static_cast<std::size_t>(n_per_class));
    for (std::uint32_t cls = 0; cls < 2; ++cls)
        for (std::uint32_t i = 0; i < n_per_class; ++i) {
            DatasetEntry e;
            e.prompt_seed = base_seed + cls * static_cast<std::uint64_t>(n_per_class) + i;
            auto eta = core::sample_noise(core::derive_seed(e.prompt_seed, "toy.eta"),
                                          pipeline.latent_channels(),
                                          pipeline.latent_width(),
                                          pipeline.latent_height());
            if (cls == 1) {
                eta = core::inject(eta, pattern, alpha);
                e.label = Label::watermarked;
                e.pattern_ids.push_back(pattern.id);
            }
            e.image = pipeline.generate(eta);
            e.latent = pipeline.encode(e.image);
            ds.entries.push_back(std::move(e));
        }
    ds.metadata["pipeline_seed"] = std::to_string(pipeline.seed());
    ds.metadata["latent_dims"] = std::to_string(pipeline.latent_channels()) + "x" +
                                 std::to_string(pipeline.latent_width()) + "x" +
                                 std::to_string(pipeline.latent_height());
    ds.metadata["alpha"] = std::to_string(alpha);
    ds.metadata["pattern_ids"] = pattern.id;
    ds.metadata["generator"] = std::string(core::kGeneratorName);
    ds.metadata["base_seed"] = std::to_string(base_seed);
    ds.metadata["seed_lo"] = std::to_string(base_seed);
    ds.metadata["seed_hi"] = std::to_string(base_seed + 2ULL * n_per_class);
    ds.metadata["n_per_class"] = std::to_string(n_per_class);
    return ds;
}

void validate_dataset(const Dataset& ds) {
    std::set<std::uint64_t> seeds;
    const DatasetEntry* first = ds.entries.empty() ? nullptr : &ds.entries.front();
    for (const auto& e : ds.entries) {
        if (e.label != Label::clean && e.label != Label::watermarked)
            throw core::InvalidArgumentError("dataset: unknown label value");
        if (e.label == Label::watermarked && e.pattern_ids.empty())
            throw core::InvalidArgumentError(
                "dataset: watermarked entry without pattern ids");
        if (!seeds.insert(e.prompt_seed).second)
            throw core::InvalidArgumentError(
                "dataset: duplicate prompt seed " + std::to_string(e.prompt_seed));
        if (!e.latent.same_dims(first->latent))
            throw core::InvalidArgumentError("dataset: mixed latent dims across entries");
        for (float v : e.latent.values)
            if (!std::isfinite(v))
                throw core::InvalidArgumentError("dataset: non-finite latent value");
        if (e.image.size() != 0) {
            if (!e.image.same_dims(first->image))
                throw core::InvalidArgumentError(
                    "dataset: mixed image dims across entries");
            for (float v : e.image.values)
                if (!(v >= 0.0f && v <= 1.0f))
                    throw core::InvalidArgumentError(
                        "dataset: image value outside [0,1]");
        }
    }
}

Dataset import_latents(const std::string& path) {
    Dataset ds = io::read_dataset(path);
    validate_dataset(ds);
    return ds;
}

void export_dataset(const Dataset& dataset, const std::string& path,
                    bool include_images) {
    io::write_dataset(dataset, path, include_images);
}

}  // namespace serum::toygen
