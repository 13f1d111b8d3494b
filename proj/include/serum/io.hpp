#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "serum/core.hpp"
#include "serum/errors.hpp"
#include "serum/tensor.hpp"
#include "serum/toygen.hpp"

namespace serum::io {

// All integers and floats are little-endian on disk.
class ByteWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void magic(const char tag[5]) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(tag[i]));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void f32_array(const std::vector<float>& v) {
        for (float x : v) f32(x);
    }
    void f64_array(const std::vector<double>& v) {
        for (double x : v) f64(x);
    }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }

  private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
  public:
    ByteReader(const std::uint8_t* data, std::size_t size, std::string source)
        : data_(data), size_(size), source_(std::move(source)) {}

    std::uint64_t offset() const { return pos_; }
    bool at_end() const { return pos_ == size_; }
    std::size_t remaining() const { return size_ - pos_; }

    std::uint8_t u8(const char* section) { return take(1, section)[0]; }
    std::uint16_t u16(const char* section) {
        const auto* p = take(2, section);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32(const char* section) {
        const auto* p = take(4, section);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) |
               (static_cast<std::uint32_t>(p[3]) << 24);
    }
    std::uint64_t u64(const char* section) {
        std::uint64_t lo = u32(section);
        std::uint64_t hi = u32(section);
        return lo | (hi << 32);
    }
    float f32(const char* section) {
        const std::uint32_t bits = u32(section);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64(const char* section) {
        const std::uint64_t bits = u64(section);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    void expect_magic(const char tag[5]) {
        const std::uint64_t at = pos_;
        const auto* p = take(4, "magic");
        if (std::memcmp(p, tag, 4) != 0)
            throw ParseError(source_ + ": bad magic, expected '" + std::string(tag, 4) + "'", at);
    }
    // consumes the tag only when it matches
    bool try_magic(const char tag[5]) {
        if (size_ - pos_ < 4 || std::memcmp(data_ + pos_, tag, 4) != 0) return false;
        pos_ += 4;
        return true;
    }
    void skip(std::uint64_t n, const char* section) { take(static_cast<std::size_t>(n), section); }
    std::string str(const char* section) {
        const std::uint32_t n = u32(section);
        const auto* p = take(n, section);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    void f32_array(std::vector<float>& out, std::size_t n, const char* section) {
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = f32(section);
    }
    void f64_array(std::vector<double>& out, std::size_t n, const char* section) {
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = f64(section);
    }

  private:
    const std::uint8_t* take(std::size_t n, const char* section) {
        if (size_ - pos_ < n)
            throw ParseError(source_ + ": truncated while reading " + section, pos_);
        const auto* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::uint64_t pos_ = 0;
    std::string source_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
// write-temp-then-rename so partial artifacts never shadow complete ones
void atomic_write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void atomic_write_file(const std::string& path, const std::string& text);

std::string sha256_hex(const std::uint8_t* data, std::size_t size);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::string& path);

// Trailing metadata footer shared by all binary artifacts: carries the
// generator name, config hash and format-specific extras without touching
// the fixed header layouts.
using Footer = std::map<std::string, std::string>;
void write_footer(ByteWriter& w, const Footer& footer);
Footer read_footer(ByteReader& r);

// Pattern container "SRMP": version, seed, dims, raw then normalized values.
void write_pattern(const core::WatermarkPattern& p, const std::string& path,
                   const Footer& extra = {});
core::WatermarkPattern read_pattern(const std::string& path);

// Tensor container "SRMT": same header layout, single value payload.
void write_tensor(const core::LatentTensor& t, std::uint64_t seed,
                  const std::string& path, const Footer& extra = {});
void write_image(const core::ImageTensor& t, std::uint64_t seed,
                 const std::string& path, const Footer& extra = {});
core::LatentTensor read_tensor(const std::string& path);
core::ImageTensor read_image(const std::string& path);

// Dataset container "SRMD".
void write_dataset(const toygen::Dataset& ds, const std::string& path,
                   bool include_images = true);
toygen::Dataset read_dataset(const std::string& path);
std::vector<std::uint8_t> dataset_bytes(const toygen::Dataset& ds, bool include_images);
toygen::Dataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes,
                                   const std::string& source);

}  // namespace serum::io
