#include "serum/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "serum/errors.hpp"
#include "serum/io.hpp"
#include "serum/rng.hpp"

#include <nlohmann/json.hpp>

namespace serum::perturb {

using json = nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr float kGray = 0.5f;

float bilinear(const ImageTensor& im, std::uint32_t ch, double sy, double sx,
               float fill) {
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const double wy = sy - y0;
    const double wx = sx - x0;
    auto sample = [&](int y, int x) -> double {
        if (y < 0 || x < 0 || y >= static_cast<int>(im.height) ||
            x >= static_cast<int>(im.width))
            return fill;
        return im.at(ch, static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x));
    };
    return static_cast<float>((1 - wy) * ((1 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1)) +
                              wy * ((1 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1)));
}

float bilinear_clamped(const ImageTensor& im, std::uint32_t ch, double sy, double sx) {
    const auto h = static_cast<int>(im.height), w = static_cast<int>(im.width);
    const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, h - 1);
    const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const double wy = std::clamp(sy - y0, 0.0, 1.0);
    const double wx = std::clamp(sx - x0, 0.0, 1.0);
    const double v = (1 - wy) * ((1 - wx) * im.at(ch, y0, x0) + wx * im.at(ch, y0, x1)) +
                     wy * ((1 - wx) * im.at(ch, y1, x0) + wx * im.at(ch, y1, x1));
    return static_cast<float>(v);
}

ImageTensor rotate(const ImageTensor& im, double degrees) {
    ImageTensor out(im.channels, im.width, im.height);
    const double rad = degrees * kPi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy = (im.height - 1) / 2.0, cx = (im.width - 1) / 2.0;
    for (std::uint32_t ch = 0; ch < im.channels; ++ch)
        for (std::uint32_t y = 0; y < im.height; ++y)
            for (std::uint32_t x = 0; x < im.width; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double sy = cy + (c * dy - s * dx);
                const double sx = cx + (s * dy + c * dx);
                out.at(ch, y, x) = bilinear(im, ch, sy, sx, kGray);
            }
    return out;
}

ImageTensor crop_scale(const ImageTensor& im, double retain_area, core::Rng& rng) {
    const double side_f = std::sqrt(retain_area * im.width * im.height);
    const std::uint32_t side = std::max<std::uint32_t>(
        1, std::min<std::uint32_t>(
               static_cast<std::uint32_t>(std::llround(side_f)),
               std::min(im.width, im.height)));
    // crops land anywhere valid, not just the center
    const std::uint32_t y0 =
        side < im.height ? static_cast<std::uint32_t>(rng.below(im.height - side + 1)) : 0;
    const std::uint32_t x0 =
        side < im.width ? static_cast<std::uint32_t>(rng.below(im.width - side + 1)) : 0;
    ImageTensor out(im.channels, im.width, im.height);
    const double sy_scale = static_cast<double>(side) / im.height;
    const double sx_scale = static_cast<double>(side) / im.width;
    for (std::uint32_t ch = 0; ch < im.channels; ++ch)
        for (std::uint32_t y = 0; y < im.height; ++y)
            for (std::uint32_t x = 0; x < im.width; ++x) {
                const double sy = y0 + (y + 0.5) * sy_scale - 0.5;
                const double sx = x0 + (x + 0.5) * sx_scale - 0.5;
                out.at(ch, y, x) = bilinear_clamped(im, ch, sy, sx);
            }
    return out;
}

// k pixel positions without replacement (partial Fisher-Yates)
std::vector<std::uint32_t> choose_pixels(std::uint32_t n, std::uint32_t k,
                                         core::Rng& rng) {
    std::vector<std::uint32_t> idx(n);
    for (std::uint32_t i = 0; i < n; ++i) idx[i] = i;
    for (std::uint32_t i = 0; i < k; ++i)
        std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(k);
    return idx;
}

ImageTensor gauss_blur(const ImageTensor& im, std::uint32_t kernel, double sigma) {
    const int r = static_cast<int>(kernel) / 2;
    std::vector<double> k(kernel);
    double total = 0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        total += k[i + r];
    }
    for (auto& v : k) v /= total;

    const int h = static_cast<int>(im.height), w = static_cast<int>(im.width);
    ImageTensor tmp(im.channels, im.width, im.height);
    ImageTensor out(im.channels, im.width, im.height);
    for (std::uint32_t ch = 0; ch < im.channels; ++ch) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int i = -r; i <= r; ++i)
                    acc += k[i + r] * im.at(ch, y, std::clamp(x + i, 0, w - 1));
                tmp.at(ch, y, x) = static_cast<float>(acc);
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int i = -r; i <= r; ++i)
                    acc += k[i + r] * tmp.at(ch, std::clamp(y + i, 0, h - 1), x);
                out.at(ch, y, x) = static_cast<float>(acc);
            }
    }
    return out;
}

// Annex K quantization tables.
constexpr int kLumaQuant[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr int kChromaQuant[64] = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

void scaled_quant(const int* base, std::uint32_t quality, int out[64]) {
    const int scale = quality < 50 ? 5000 / static_cast<int>(quality)
                                   : 200 - 2 * static_cast<int>(quality);
    for (int i = 0; i < 64; ++i)
        out[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
}

void dct8x8(const double in[64], double out[64]) {
    static double cs[8][8];
    static bool init = false;
    if (!init) {
        for (int u = 0; u < 8; ++u)
            for (int x = 0; x < 8; ++x)
                cs[u][x] = std::cos((2 * x + 1) * u * kPi / 16.0);
        init = true;
    }
    double tmp[64];
    for (int y = 0; y < 8; ++y)
        for (int u = 0; u < 8; ++u) {
            double acc = 0;
            for (int x = 0; x < 8; ++x) acc += in[y * 8 + x] * cs[u][x];
            tmp[y * 8 + u] = acc * (u == 0 ? std::sqrt(1.0 / 8.0) : 0.5);
        }
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
            double acc = 0;
            for (int y = 0; y < 8; ++y) acc += tmp[y * 8 + u] * cs[v][y];
            out[v * 8 + u] = acc * (v == 0 ? std::sqrt(1.0 / 8.0) : 0.5);
        }
}

void idct8x8(const double in[64], double out[64]) {
    static double cs[8][8];
    static bool init = false;
    if (!init) {
        for (int u = 0; u < 8; ++u)
            for (int x = 0; x < 8; ++x)
                cs[u][x] = std::cos((2 * x + 1) * u * kPi / 16.0);
        init = true;
    }
    double tmp[64];
    for (int v = 0; v < 8; ++v)
        for (int x = 0; x < 8; ++x) {
            double acc = 0;
            for (int u = 0; u < 8; ++u)
                acc += (u == 0 ? std::sqrt(1.0 / 8.0) : 0.5) * in[v * 8 + u] * cs[u][x];
            tmp[v * 8 + x] = acc;
        }
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y) {
            double acc = 0;
            for (int v = 0; v < 8; ++v)
                acc += (v == 0 ? std::sqrt(1.0 / 8.0) : 0.5) * tmp[v * 8 + x] * cs[v][y];
            out[y * 8 + x] = acc;
        }
}

struct Plane {
    std::uint32_t w = 0, h = 0;
    std::vector<double> v{};  // [0,255] sample units
    double at(std::uint32_t y, std::uint32_t x) const { return v[y * w + x]; }
    double& at(std::uint32_t y, std::uint32_t x) { return v[y * w + x]; }
};

void quantize_plane(Plane& p, const int q[64]) {
    for (std::uint32_t by = 0; by < p.h; by += 8)
        for (std::uint32_t bx = 0; bx < p.w; bx += 8) {
            double block[64], coef[64];
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    const std::uint32_t sy = std::min(by + y, p.h - 1);
                    const std::uint32_t sx = std::min(bx + x, p.w - 1);
                    block[y * 8 + x] = p.at(sy, sx) - 128.0;
                }
            dct8x8(block, coef);
            for (int i = 0; i < 64; ++i)
                coef[i] = std::nearbyint(coef[i] / q[i]) * q[i];
            idct8x8(coef, block);
            for (int y = 0; y < 8 && by + y < p.h; ++y)
                for (int x = 0; x < 8 && bx + x < p.w; ++x)
                    p.at(by + y, bx + x) = block[y * 8 + x] + 128.0;
        }
}

}  // namespace

ImageTensor jpeg_roundtrip(const ImageTensor& im, std::uint32_t quality) {
    if (quality < 1 || quality > 100)
        throw core::RangeError("jpeg: quality must be in [1, 100]");
    const std::uint32_t w = im.width, h = im.height;
    Plane Y{w, h}, Cb{(w + 1) / 2, (h + 1) / 2}, Cr{(w + 1) / 2, (h + 1) / 2};
    Y.v.resize(static_cast<std::size_t>(w) * h);
    Cb.v.assign(static_cast<std::size_t>(Cb.w) * Cb.h, 0.0);
    Cr.v.assign(static_cast<std::size_t>(Cr.w) * Cr.h, 0.0);

    std::vector<double> cb_full(static_cast<std::size_t>(w) * h);
    std::vector<double> cr_full(static_cast<std::size_t>(w) * h);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            // 8-bit quantization happens only here, inside the codec
            const double r = std::nearbyint(255.0 * im.at(0, y, x));
            const double g = std::nearbyint(255.0 * im.at(1 % im.channels, y, x));
            const double b = std::nearbyint(255.0 * im.at(2 % im.channels, y, x));
            Y.at(y, x) = 0.299 * r + 0.587 * g + 0.114 * b;
            cb_full[y * w + x] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
            cr_full[y * w + x] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
        }
    // 4:2:0: average 2x2 neighborhoods
    for (std::uint32_t y = 0; y < Cb.h; ++y)
        for (std::uint32_t x = 0; x < Cb.w; ++x) {
            double sb = 0, sr = 0;
            int n = 0;
            for (std::uint32_t dy = 0; dy < 2; ++dy)
                for (std::uint32_t dx = 0; dx < 2; ++dx) {
                    const std::uint32_t sy = std::min(2 * y + dy, h - 1);
                    const std::uint32_t sx = std::min(2 * x + dx, w - 1);
                    sb += cb_full[sy * w + sx];
                    sr += cr_full[sy * w + sx];
                    ++n;
                }
            Cb.at(y, x) = sb / n;
            Cr.at(y, x) = sr / n;
        }

    int lq[64], cq[64];
    scaled_quant(kLumaQuant, quality, lq);
    scaled_quant(kChromaQuant, quality, cq);
    quantize_plane(Y, lq);
    quantize_plane(Cb, cq);
    quantize_plane(Cr, cq);

    ImageTensor out(im.channels, w, h);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const double yy = Y.at(y, x);
            const double cb = Cb.at(y / 2, x / 2) - 128.0;
            const double cr = Cr.at(y / 2, x / 2) - 128.0;
            const double r = yy + 1.402 * cr;
            const double g = yy - 0.344136 * cb - 0.714136 * cr;
            const double b = yy + 1.772 * cb;
            out.at(0, y, x) = static_cast<float>(std::clamp(r / 255.0, 0.0, 1.0));
            if (im.channels > 1)
                out.at(1, y, x) = static_cast<float>(std::clamp(g / 255.0, 0.0, 1.0));
            if (im.channels > 2)
                out.at(2, y, x) = static_cast<float>(std::clamp(b / 255.0, 0.0, 1.0));
        }
    return out;
}

double psnr(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_dims(b)) throw core::ShapeError("psnr: dimension mismatch");
    double mse = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = static_cast<double>(a.values[i]) - b.values[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.values.size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::Rotate: return "rotate";
        case Kind::Jpeg: return "jpeg";
        case Kind::CropScale: return "crop_scale";
        case Kind::RandomDrop: return "random_drop";
        case Kind::SaltPepper: return "salt_pepper";
        case Kind::GaussNoise: return "gauss_noise";
        case Kind::Brightness: return "brightness";
        case Kind::GaussBlur: return "gauss_blur";
    }
    throw core::InvalidArgumentError("unknown perturbation kind");
}

Kind kind_from_name(const std::string& name) {
    for (int k = 0; k <= static_cast<int>(Kind::GaussBlur); ++k)
        if (name == kind_name(static_cast<Kind>(k))) return static_cast<Kind>(k);
    throw core::InvalidArgumentError("unknown perturbation kind: " + name);
}

PerturbSpec PerturbSpec::make(Kind k) {
    PerturbSpec s;
    s.kind = k;
    return s;
}

void PerturbSpec::validate() const {
    switch (kind) {
        case Kind::Rotate:
            if (angle_min > angle_max || angle_min < -360.0 || angle_max > 360.0)
                throw core::RangeError("rotate: invalid angle range");
            break;
        case Kind::Jpeg:
            if (jpeg_quality < 1 || jpeg_quality > 100)
                throw core::RangeError("jpeg: quality outside [1, 100]");
            break;
        case Kind::CropScale:
            if (!(retain_area > 0.0 && retain_area <= 1.0))
                throw core::RangeError("crop_scale: retain fraction outside (0, 1]");
            break;
        case Kind::RandomDrop:
            if (!(drop_fraction >= 0.0 && drop_fraction <= 1.0))
                throw core::RangeError("random_drop: drop fraction outside [0, 1]");
            break;
        case Kind::SaltPepper:
            if (!(corrupt_fraction >= 0.0 && corrupt_fraction <= 1.0))
                throw core::RangeError("salt_pepper: corruption fraction outside [0, 1]");
            break;
        case Kind::GaussNoise:
            if (!(noise_sigma >= 0.0))
                throw core::RangeError("gauss_noise: sigma must be >= 0");
            break;
        case Kind::Brightness:
            if (!(brightness_factor > 0.0))
                throw core::RangeError("brightness: factor must be > 0");
            break;
        case Kind::GaussBlur:
            if (blur_kernel == 0 || blur_kernel % 2 == 0)
                throw core::RangeError("gauss_blur: kernel must be odd");
            if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max))
                throw core::RangeError("gauss_blur: invalid sigma range");
            break;
    }
}

std::string PerturbSpec::to_text() const {
    json j{{"kind", kind_name(kind)}};
    switch (kind) {
        case Kind::Rotate:
            j["angle_min"] = angle_min;
            j["angle_max"] = angle_max;
            break;
        case Kind::Jpeg: j["quality"] = jpeg_quality; break;
        case Kind::CropScale: j["retain_area"] = retain_area; break;
        case Kind::RandomDrop: j["drop_fraction"] = drop_fraction; break;
        case Kind::SaltPepper: j["corrupt_fraction"] = corrupt_fraction; break;
        case Kind::GaussNoise: j["sigma"] = noise_sigma; break;
        case Kind::Brightness: j["factor"] = brightness_factor; break;
        case Kind::GaussBlur:
            j["kernel"] = blur_kernel;
            j["sigma_min"] = blur_sigma_min;
            j["sigma_max"] = blur_sigma_max;
            break;
    }
    return j.dump();
}

PerturbSpec PerturbSpec::from_text(const std::string& text) {
    json j = json::parse(text);
    PerturbSpec s;
    s.kind = kind_from_name(j.at("kind"));
    switch (s.kind) {
        case Kind::Rotate:
            s.angle_min = j.at("angle_min");
            s.angle_max = j.at("angle_max");
            break;
        case Kind::Jpeg: s.jpeg_quality = j.at("quality"); break;
        case Kind::CropScale: s.retain_area = j.at("retain_area"); break;
        case Kind::RandomDrop: s.drop_fraction = j.at("drop_fraction"); break;
        case Kind::SaltPepper: s.corrupt_fraction = j.at("corrupt_fraction"); break;
        case Kind::GaussNoise: s.noise_sigma = j.at("sigma"); break;
        case Kind::Brightness: s.brightness_factor = j.at("factor"); break;
        case Kind::GaussBlur:
            s.blur_kernel = j.at("kernel");
            s.blur_sigma_min = j.at("sigma_min");
            s.blur_sigma_max = j.at("sigma_max");
            break;
    }
    s.validate();
    return s;
}

std::vector<PerturbSpec> default_suite() {
    std::vector<PerturbSpec> out;
    for (int k = 0; k <= static_cast<int>(Kind::GaussBlur); ++k)
        out.push_back(PerturbSpec::make(static_cast<Kind>(k)));
    return out;
}

ImageTensor apply(const PerturbSpec& spec, const ImageTensor& image,
                  std::uint64_t seed) {
    spec.validate();
    if (image.size() == 0) throw core::InvalidArgumentError("apply: empty image");
    core::Rng rng(core::derive_seed(seed, "perturb", static_cast<std::uint64_t>(spec.kind)));
    ImageTensor out;
    switch (spec.kind) {
        case Kind::Rotate: {
            const double angle = spec.angle_min == spec.angle_max
                                     ? spec.angle_min
                                     : rng.uniform(spec.angle_min, spec.angle_max);
            if (angle == 0.0) return image;
            out = rotate(image, angle);
            break;
        }
        case Kind::Jpeg:
            out = jpeg_roundtrip(image, spec.jpeg_quality);
            break;
        case Kind::CropScale:
            out = crop_scale(image, spec.retain_area, rng);
            break;
        case Kind::RandomDrop: {
            out = image;
            const std::uint32_t n = image.width * image.height;
            const auto k = static_cast<std::uint32_t>(
                std::llround(spec.drop_fraction * static_cast<double>(n)));
            for (std::uint32_t p : choose_pixels(n, k, rng))
                for (std::uint32_t ch = 0; ch < image.channels; ++ch)
                    out.values[static_cast<std::size_t>(ch) * n + p] = 0.0f;
            break;
        }
        case Kind::SaltPepper: {
            out = image;
            const std::uint32_t n = image.width * image.height;
            const auto k = static_cast<std::uint32_t>(
                std::llround(spec.corrupt_fraction * static_cast<double>(n)));
            for (std::uint32_t p : choose_pixels(n, k, rng)) {
                const float v = rng.next_u64() & 1 ? 1.0f : 0.0f;
                for (std::uint32_t ch = 0; ch < image.channels; ++ch)
                    out.values[static_cast<std::size_t>(ch) * n + p] = v;
            }
            break;
        }
        case Kind::GaussNoise: {
            out = image;
            for (auto& v : out.values)
                v = std::clamp(
                    v + static_cast<float>(spec.noise_sigma * rng.normal()), 0.0f, 1.0f);
            break;
        }
        case Kind::Brightness: {
            out = image;
            const float f = static_cast<float>(spec.brightness_factor);
            for (auto& v : out.values) v = std::clamp(v * f, 0.0f, 1.0f);
            break;
        }
        case Kind::GaussBlur: {
            const double sigma = spec.blur_sigma_min == spec.blur_sigma_max
                                     ? spec.blur_sigma_min
                                     : rng.uniform(spec.blur_sigma_min, spec.blur_sigma_max);
            out = gauss_blur(image, spec.blur_kernel, sigma);
            break;
        }
    }
    for (auto& v : out.values) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

void AugmentedDataset::rebuild_index() {
    rows_by_seed.clear();
    for (std::uint32_t i = 0; i < rows.size(); ++i)
        rows_by_seed[rows[i].source_prompt_seed].push_back(i);
}

const std::vector<std::uint32_t>* AugmentedDataset::rows_for(
    std::uint64_t prompt_seed) const {
    const auto it = rows_by_seed.find(prompt_seed);
    return it == rows_by_seed.end() ? nullptr : &it->second;
}

AugmentedDataset precompute_subset(const toygen::Dataset& dataset,
                                   const std::vector<std::uint32_t>& entry_indices,
                                   const std::vector<PerturbSpec>& specs,
                                   std::uint32_t copies_per_entry,
                                   const toygen::ToyPipeline& pipeline,
                                   std::uint64_t seed) {
    if (specs.empty())
        throw core::InvalidArgumentError("precompute: perturbation list is empty");
    if (copies_per_entry == 0)
        throw core::InvalidArgumentError("precompute: copies_per_entry must be >= 1");
    for (const auto& s : specs) s.validate();
    AugmentedDataset aug;
    aug.specs = specs;
    aug.seed = seed;
    aug.source_entry_count = dataset.entries.size();
    aug.rows.reserve(static_cast<std::size_t>(entry_indices.size()) * copies_per_entry);
    for (std::uint32_t ei : entry_indices) {
        const auto& entry = dataset.entries.at(ei);
        if (entry.image.size() == 0)
            throw core::InvalidArgumentError(
                "precompute: dataset entry has no image payload");
        for (std::uint32_t copy = 0; copy < copies_per_entry; ++copy) {
            AugmentedEntry row;
            row.source_index = ei;
            row.source_prompt_seed = entry.prompt_seed;
            core::Rng pick(core::derive_seed(seed, "aug.pick", ei, copy));
            row.spec_index = static_cast<std::uint32_t>(pick.below(specs.size()));
            row.rng_seed = core::derive_seed(seed, "aug.apply", ei, copy);
            row.latent = pipeline.encode(
                apply(specs[row.spec_index], entry.image, row.rng_seed));
            aug.rows.push_back(std::move(row));
        }
    }
    aug.rebuild_index();
    return aug;
}

AugmentedDataset precompute(const toygen::Dataset& dataset,
                            const std::vector<PerturbSpec>& specs,
                            std::uint32_t copies_per_entry,
                            const toygen::ToyPipeline& pipeline, std::uint64_t seed) {
    std::vector<std::uint32_t> all(dataset.entries.size());
    for (std::uint32_t i = 0; i < all.size(); ++i) all[i] = i;
    return precompute_subset(dataset, all, specs, copies_per_entry, pipeline, seed);
}

void write_augmented(const AugmentedDataset& aug, const std::string& path,
                     const std::map<std::string, std::string>& extra_metadata) {
    io::ByteWriter w;
    w.magic("SRMD");
    w.u16(1);
    std::map<std::string, std::string> metadata = extra_metadata;
    metadata["augmented"] = "1";
    metadata["source_entry_count"] = std::to_string(aug.source_entry_count);
    metadata["seed"] = std::to_string(aug.seed);
    metadata["generator"] = std::string(core::kGeneratorName);
    w.u32(static_cast<std::uint32_t>(metadata.size()));
    for (const auto& [k, v] : metadata) {
        w.str(k);
        w.str(v);
    }
    w.u64(0);  // no base entries; rows live in the augmentation index section

    io::ByteWriter section;
    section.u32(static_cast<std::uint32_t>(aug.specs.size()));
    for (const auto& s : aug.specs) section.str(s.to_text());
    section.u64(aug.rows.size());
    for (const auto& row : aug.rows) {
        section.u64(row.source_index);
        section.u64(row.source_prompt_seed);
        section.u32(row.spec_index);
        section.u64(row.rng_seed);
        section.u32(row.latent.channels);
        section.u32(row.latent.width);
        section.u32(row.latent.height);
        section.f32_array(row.latent.values);
    }
    w.magic("AUGX");
    w.u64(section.bytes().size());
    std::vector<std::uint8_t> bytes = w.bytes();
    bytes.insert(bytes.end(), section.bytes().begin(), section.bytes().end());
    io::atomic_write_file(path, bytes);
}

AugmentedDataset read_augmented(const std::string& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes.data(), bytes.size(), path);
    r.expect_magic("SRMD");
    if (r.u16("version") != 1)
        throw ParseError(path + ": unsupported container version", 4);
    const std::uint32_t nmeta = r.u32("metadata count");
    AugmentedDataset aug;
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        const std::string k = r.str("metadata key");
        const std::string v = r.str("metadata value");
        if (k == "source_entry_count") aug.source_entry_count = std::stoull(v);
        if (k == "seed") aug.seed = std::stoull(v);
    }
    const std::uint64_t n_entries = r.u64("entry count");
    if (n_entries != 0)
        throw ParseError(path + ": augmented container must carry no base entries",
                         r.offset());
    r.expect_magic("AUGX");
    r.u64("section length");
    const std::uint32_t nspecs = r.u32("spec count");
    for (std::uint32_t i = 0; i < nspecs; ++i)
        aug.specs.push_back(PerturbSpec::from_text(r.str("spec text")));
    const std::uint64_t nrows = r.u64("row count");
    aug.rows.reserve(static_cast<std::size_t>(nrows));
    for (std::uint64_t i = 0; i < nrows; ++i) {
        AugmentedEntry row;
        row.source_index = r.u64("row source");
        row.source_prompt_seed = r.u64("row prompt seed");
        row.spec_index = r.u32("row spec index");
        if (row.spec_index >= aug.specs.size())
            throw ParseError(path + ": row references unknown spec", r.offset());
        row.rng_seed = r.u64("row rng seed");
        const std::uint32_t c = r.u32("row latent dims");
        const std::uint32_t wdt = r.u32("row latent dims");
        const std::uint32_t hgt = r.u32("row latent dims");
        row.latent = LatentTensor(c, wdt, hgt);
        r.f32_array(row.latent.values, row.latent.size(), "row latent values");
        aug.rows.push_back(std::move(row));
    }
    aug.rebuild_index();
    return aug;
}

}  // namespace serum::perturb
