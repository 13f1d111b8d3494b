#include "serum/io.hpp"

#include <array>
#include <cstdio>
#include <fstream>

namespace serum::io {

namespace {

// FIPS 180-4 SHA-256.
struct Sha256 {
    std::array<std::uint32_t, 8> h = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                                      0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    std::array<std::uint8_t, 64> block{};
    std::size_t block_len = 0;
    std::uint64_t total = 0;

    static constexpr std::uint32_t k[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
        0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
        0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
        0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
        0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
        0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
        0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
        0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
        0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
        0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

    static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

    void compress(const std::uint8_t* p) {
        std::uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
                   (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
        for (int i = 16; i < 64; ++i) {
            const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        auto [a, b, c, d, e, f, g, hh] = h;
        for (int i = 0; i < 64; ++i) {
            const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            const std::uint32_t ch = (e & f) ^ (~e & g);
            const std::uint32_t t1 = hh + s1 + ch + k[i] + w[i];
            const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            const std::uint32_t t2 = s0 + maj;
            hh = g; g = f; f = e; e = d + t1;
            d = c; c = b; b = a; a = t1 + t2;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d;
        h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
    }

    void update(const std::uint8_t* data, std::size_t n) {
        total += n;
        while (n > 0) {
            const std::size_t take = std::min(n, block.size() - block_len);
            std::memcpy(block.data() + block_len, data, take);
            block_len += take;
            data += take;
            n -= take;
            if (block_len == block.size()) {
                compress(block.data());
                block_len = 0;
            }
        }
    }

    std::string finish() {
        const std::uint64_t bits = total * 8;
        const std::uint8_t pad = 0x80;
        update(&pad, 1);
        const std::uint8_t zero = 0;
        while (block_len != 56) update(&zero, 1);
        std::uint8_t len[8];
        for (int i = 0; i < 8; ++i) len[i] = static_cast<std::uint8_t>(bits >> (56 - 8 * i));
        update(len, 8);
        char out[65];
        for (int i = 0; i < 8; ++i) std::snprintf(out + 8 * i, 9, "%08x", h[i]);
        return std::string(out, 64);
    }
};

constexpr std::uint16_t kFormatVersion = 1;

void write_tensor_payload(ByteWriter& w, std::uint32_t c, std::uint32_t width,
                          std::uint32_t height, const std::vector<float>& values) {
    w.u32(c);
    w.u32(width);
    w.u32(height);
    w.f32_array(values);
}

template <typename TensorT>
TensorT read_tensor_payload(ByteReader& r, const char* section) {
    const std::uint32_t c = r.u32(section);
    const std::uint32_t width = r.u32(section);
    const std::uint32_t height = r.u32(section);
    if (c == 0 || width == 0 || height == 0)
        throw ParseError(std::string(section) + ": zero-sized dimension", r.offset());
    const std::uint64_t n = static_cast<std::uint64_t>(c) * width * height;
    if (n > (1ULL << 32))
        throw ParseError(std::string(section) + ": implausible tensor size", r.offset());
    TensorT t(c, width, height);
    r.f32_array(t.values, static_cast<std::size_t>(n), section);
    return t;
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> out(static_cast<std::size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(out.data()), size);
    if (!f) throw Error("read failed: " + path);
    return out;
}

void atomic_write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot open for writing: " + tmp);
        if (!bytes.empty())
            f.write(reinterpret_cast<const char*>(bytes.data()),
                    static_cast<std::streamsize>(bytes.size()));
        if (!f) throw Error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw Error("rename failed: " + tmp + " -> " + path);
}

void atomic_write_file(const std::string& path, const std::string& text) {
    atomic_write_file(path,
                      std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string sha256_hex(const std::uint8_t* data, std::size_t size) {
    Sha256 s;
    s.update(data, size);
    return s.finish();
}

std::string sha256_hex(const std::string& str) {
    return sha256_hex(reinterpret_cast<const std::uint8_t*>(str.data()), str.size());
}

std::string sha256_file(const std::string& path) {
    const auto bytes = read_file(path);
    return sha256_hex(bytes.data(), bytes.size());
}

void write_footer(ByteWriter& w, const Footer& footer) {
    w.magic("META");
    w.u32(static_cast<std::uint32_t>(footer.size()));
    for (const auto& [k, v] : footer) {
        w.str(k);
        w.str(v);
    }
}

Footer read_footer(ByteReader& r) {
    Footer out;
    if (r.at_end()) return out;
    r.expect_magic("META");
    const std::uint32_t n = r.u32("footer count");
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string k = r.str("footer key");
        out[k] = r.str("footer value");
    }
    return out;
}

void write_pattern(const core::WatermarkPattern& p, const std::string& path,
                   const Footer& extra) {
    ByteWriter w;
    w.magic("SRMP");
    w.u16(kFormatVersion);
    w.u64(p.seed);
    w.u32(p.raw.channels);
    w.u32(p.raw.width);
    w.u32(p.raw.height);
    w.f32_array(p.raw.values);
    w.f32_array(p.normalized.values);
    Footer footer = extra;
    footer["generator"] = std::string(core::kGeneratorName);
    footer["id"] = p.id;
    footer["alpha_default"] = std::to_string(p.alpha_default);
    write_footer(w, footer);
    atomic_write_file(path, w.bytes());
}

core::WatermarkPattern read_pattern(const std::string& path) {
    const auto bytes = read_file(path);
    ByteReader r(bytes.data(), bytes.size(), path);
    r.expect_magic("SRMP");
    const std::uint16_t version = r.u16("version");
    if (version != kFormatVersion)
        throw ParseError(path + ": unsupported pattern version " + std::to_string(version), 4);
    core::WatermarkPattern p;
    p.seed = r.u64("seed");
    const std::uint32_t c = r.u32("dims");
    const std::uint32_t width = r.u32("dims");
    const std::uint32_t height = r.u32("dims");
    if (c == 0 || width == 0 || height == 0)
        throw ParseError(path + ": zero-sized pattern dimension", r.offset());
    p.raw = core::LatentTensor(c, width, height);
    r.f32_array(p.raw.values, p.raw.size(), "raw values");
    p.normalized = core::LatentTensor(c, width, height);
    r.f32_array(p.normalized.values, p.normalized.size(), "normalized values");
    const Footer footer = read_footer(r);
    if (auto it = footer.find("id"); it != footer.end()) p.id = it->second;
    if (auto it = footer.find("alpha_default"); it != footer.end())
        p.alpha_default = std::stod(it->second);
    if (p.id.empty()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "pat-%016llx",
                      static_cast<unsigned long long>(p.seed));
        p.id = buf;
    }
    return p;
}

namespace {

template <typename TensorT>
void write_tensor_file(const TensorT& t, std::uint64_t seed, const std::string& path,
                       Footer footer) {
    ByteWriter w;
    w.magic("SRMT");
    w.u16(kFormatVersion);
    w.u64(seed);
    write_tensor_payload(w, t.channels, t.width, t.height, t.values);
    footer["generator"] = std::string(core::kGeneratorName);
    write_footer(w, footer);
    atomic_write_file(path, w.bytes());
}

template <typename TensorT>
TensorT read_tensor_file(const std::string& path) {
    const auto bytes = read_file(path);
    ByteReader r(bytes.data(), bytes.size(), path);
    r.expect_magic("SRMT");
    const std::uint16_t version = r.u16("version");
    if (version != kFormatVersion)
        throw ParseError(path + ": unsupported tensor version " + std::to_string(version), 4);
    r.u64("seed");
    return read_tensor_payload<TensorT>(r, "tensor values");
}

}  // namespace

void write_tensor(const core::LatentTensor& t, std::uint64_t seed,
                  const std::string& path, const Footer& extra) {
    Footer f = extra;
    f["kind"] = "latent";
    write_tensor_file(t, seed, path, std::move(f));
}

void write_image(const core::ImageTensor& t, std::uint64_t seed,
                 const std::string& path, const Footer& extra) {
    Footer f = extra;
    f["kind"] = "image";
    write_tensor_file(t, seed, path, std::move(f));
}

core::LatentTensor read_tensor(const std::string& path) {
    return read_tensor_file<core::LatentTensor>(path);
}

core::ImageTensor read_image(const std::string& path) {
    return read_tensor_file<core::ImageTensor>(path);
}

std::vector<std::uint8_t> dataset_bytes(const toygen::Dataset& ds, bool include_images) {
    ByteWriter w;
    w.magic("SRMD");
    w.u16(kFormatVersion);
    auto metadata = ds.metadata;
    metadata["generator"] = std::string(core::kGeneratorName);
    w.u32(static_cast<std::uint32_t>(metadata.size()));
    for (const auto& [k, v] : metadata) {
        w.str(k);
        w.str(v);
    }
    w.u64(ds.entries.size());
    for (const auto& e : ds.entries) {
        w.u8(static_cast<std::uint8_t>(e.label));
        w.u16(static_cast<std::uint16_t>(e.pattern_ids.size()));
        for (const auto& id : e.pattern_ids) w.str(id);
        w.u64(e.prompt_seed);
        write_tensor_payload(w, e.latent.channels, e.latent.width, e.latent.height,
                             e.latent.values);
        const bool has_image = include_images && e.image.size() != 0;
        w.u8(has_image ? 1 : 0);
        if (has_image)
            write_tensor_payload(w, e.image.channels, e.image.width, e.image.height,
                                 e.image.values);
    }
    return w.bytes();
}

toygen::Dataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes,
                                   const std::string& source) {
    ByteReader r(bytes.data(), bytes.size(), source);
    r.expect_magic("SRMD");
    const std::uint16_t version = r.u16("version");
    if (version != kFormatVersion)
        throw ParseError(source + ": unsupported dataset version " + std::to_string(version), 4);
    toygen::Dataset ds;
    const std::uint32_t nmeta = r.u32("metadata count");
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        std::string k = r.str("metadata key");
        ds.metadata[k] = r.str("metadata value");
    }
    const std::uint64_t n = r.u64("entry count");
    ds.entries.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) {
        toygen::DatasetEntry e;
        const std::uint8_t label = r.u8("entry label");
        if (label > 1)
            throw ParseError(source + ": invalid label value " + std::to_string(label),
                             r.offset() - 1);
        e.label = static_cast<toygen::Label>(label);
        const std::uint16_t nids = r.u16("pattern id count");
        for (std::uint16_t j = 0; j < nids; ++j)
            e.pattern_ids.push_back(r.str("pattern id"));
        e.prompt_seed = r.u64("prompt seed");
        e.latent = read_tensor_payload<core::LatentTensor>(r, "entry latent");
        if (r.u8("image flag") != 0)
            e.image = read_tensor_payload<core::ImageTensor>(r, "entry image");
        ds.entries.push_back(std::move(e));
    }
    if (r.try_magic("AUGX")) r.skip(r.u64("augmentation section length"),
                                    "augmentation section");
    read_footer(r);
    return ds;
}

void write_dataset(const toygen::Dataset& ds, const std::string& path,
                   bool include_images) {
    atomic_write_file(path, dataset_bytes(ds, include_images));
}

toygen::Dataset read_dataset(const std::string& path) {
    return dataset_from_bytes(read_file(path), path);
}

}  // namespace serum::io
