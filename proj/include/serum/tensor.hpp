#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "serum/errors.hpp"

namespace serum::core {

// Dense c×w×h grid of 32-bit reals, laid out row-major in
// (channel, row, column) order. Houses noise maps, watermark patterns and
// encoder outputs alike.
struct LatentTensor {
    std::uint32_t channels = 0;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<float> values;

    LatentTensor() = default;
    LatentTensor(std::uint32_t c, std::uint32_t w, std::uint32_t h)
        : channels(c), width(w), height(h),
          values(static_cast<std::size_t>(c) * w * h, 0.0f) {
        if (c == 0 || w == 0 || h == 0)
            throw InvalidArgumentError("tensor dimensions must be positive");
    }

    std::size_t size() const { return values.size(); }

    std::size_t index(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
        return (static_cast<std::size_t>(c) * height + y) * width + x;
    }
    float& at(std::uint32_t c, std::uint32_t y, std::uint32_t x) {
        return values[index(c, y, x)];
    }
    float at(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
        return values[index(c, y, x)];
    }

    bool same_dims(const LatentTensor& o) const {
        return channels == o.channels && width == o.width && height == o.height;
    }

    friend bool operator==(const LatentTensor& a, const LatentTensor& b) {
        return a.channels == b.channels && a.width == b.width &&
               a.height == b.height && a.values == b.values;
    }
};

// Pixel-space carrier: 3 channels, values in [0, 1]. Same layout rules as
// LatentTensor.
struct ImageTensor {
    std::uint32_t channels = 0;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<float> values;

    ImageTensor() = default;
    ImageTensor(std::uint32_t c, std::uint32_t w, std::uint32_t h)
        : channels(c), width(w), height(h),
          values(static_cast<std::size_t>(c) * w * h, 0.0f) {
        if (c == 0 || w == 0 || h == 0)
            throw InvalidArgumentError("image dimensions must be positive");
    }

    std::size_t size() const { return values.size(); }

    std::size_t index(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
        return (static_cast<std::size_t>(c) * height + y) * width + x;
    }
    float& at(std::uint32_t c, std::uint32_t y, std::uint32_t x) {
        return values[index(c, y, x)];
    }
    float at(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
        return values[index(c, y, x)];
    }

    bool same_dims(const ImageTensor& o) const {
        return channels == o.channels && width == o.width && height == o.height;
    }

    friend bool operator==(const ImageTensor& a, const ImageTensor& b) {
        return a.channels == b.channels && a.width == b.width &&
               a.height == b.height && a.values == b.values;
    }
};

}  // namespace serum::core
