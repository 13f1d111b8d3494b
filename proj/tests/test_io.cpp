#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "serum/core.hpp"
#include "serum/errors.hpp"
#include "serum/io.hpp"
#include "serum/toygen.hpp"

using namespace serum;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
    fs::path path;
    TmpDir() {
        path = fs::temp_directory_path() /
               ("serum-io-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TmpDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("sha256 known vectors") {
    CHECK(io::sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(io::sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(io::sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("pattern file round trip") {
    TmpDir tmp;
    const auto p = core::make_pattern(1234, 4, 8, 8, 0.4, "unit-pattern");
    const auto path = tmp.file("p.srmp");
    io::write_pattern(p, path, {{"config_hash", "deadbeef"}});
    const auto q = io::read_pattern(path);
    CHECK(q.id == p.id);
    CHECK(q.seed == p.seed);
    CHECK(q.alpha_default == doctest::Approx(p.alpha_default));
    CHECK(q.raw == p.raw);
    CHECK(q.normalized == p.normalized);
}

TEST_CASE("tensor and image files") {
    TmpDir tmp;
    const auto t = core::sample_noise(5, 2, 3, 4);
    io::write_tensor(t, 5, tmp.file("t.srmt"));
    CHECK(io::read_tensor(tmp.file("t.srmt")) == t);

    core::ImageTensor im(3, 4, 4);
    for (std::size_t i = 0; i < im.values.size(); ++i)
        im.values[i] = static_cast<float>(i) / static_cast<float>(im.values.size());
    io::write_image(im, 0, tmp.file("i.srmt"));
    CHECK(io::read_image(tmp.file("i.srmt")) == im);
}

TEST_CASE("truncated pattern file reports the failing section and offset") {
    TmpDir tmp;
    const auto p = core::make_pattern(7, 2, 4, 4);
    const auto path = tmp.file("p.srmp");
    io::write_pattern(p, path);
    auto bytes = io::read_file(path);
    bytes.resize(bytes.size() / 2);
    io::atomic_write_file(path, bytes);
    try {
        io::read_pattern(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("normalized values") != std::string::npos);
        CHECK(e.byte_offset > 0);
    }
}

TEST_CASE("bad magic rejected") {
    TmpDir tmp;
    io::atomic_write_file(tmp.file("junk.srmp"), std::string("NOPExxxxxxxxxxxx"));
    CHECK_THROWS_AS(io::read_pattern(tmp.file("junk.srmp")), ParseError);
}

TEST_CASE("dataset container round trip") {
    TmpDir tmp;
    toygen::ToyPipeline pipe(3, 2, 4, 4);
    const auto pattern = core::make_pattern(11, 2, 4, 4);
    auto ds = toygen::make_dataset(pipe, 3, pattern, 0.5, 100);
    ds.metadata["config_hash"] = "cafe";
    const auto path = tmp.file("d.srmd");
    toygen::export_dataset(ds, path);
    const auto back = toygen::import_latents(path);
    CHECK(back.entries.size() == ds.entries.size());
    CHECK(back.metadata.at("config_hash") == "cafe");
    for (std::size_t i = 0; i < ds.entries.size(); ++i) {
        CHECK(back.entries[i].latent == ds.entries[i].latent);
        CHECK(back.entries[i].image == ds.entries[i].image);
        CHECK(back.entries[i].label == ds.entries[i].label);
        CHECK(back.entries[i].prompt_seed == ds.entries[i].prompt_seed);
        CHECK(back.entries[i].pattern_ids == ds.entries[i].pattern_ids);
    }

    // byte-identical re-export
    toygen::export_dataset(back, tmp.file("d2.srmd"));
    CHECK(io::sha256_file(path) == io::sha256_file(tmp.file("d2.srmd")));
}

TEST_CASE("dataset with images stripped") {
    TmpDir tmp;
    toygen::ToyPipeline pipe(3, 2, 4, 4);
    const auto pattern = core::make_pattern(11, 2, 4, 4);
    const auto ds = toygen::make_dataset(pipe, 2, pattern, 0.5, 0);
    toygen::export_dataset(ds, tmp.file("lean.srmd"), false);
    const auto back = toygen::import_latents(tmp.file("lean.srmd"));
    CHECK(back.entries.front().image.size() == 0);
    CHECK(back.entries.front().latent == ds.entries.front().latent);
}

TEST_CASE("truncated dataset names the failing section") {
    TmpDir tmp;
    toygen::ToyPipeline pipe(3, 2, 4, 4);
    const auto pattern = core::make_pattern(11, 2, 4, 4);
    const auto ds = toygen::make_dataset(pipe, 2, pattern, 0.5, 0);
    toygen::export_dataset(ds, tmp.file("t.srmd"));
    auto bytes = io::read_file(tmp.file("t.srmd"));
    bytes.resize(bytes.size() - 40);
    io::atomic_write_file(tmp.file("t.srmd"), bytes);
    CHECK_THROWS_AS(toygen::import_latents(tmp.file("t.srmd")), ParseError);
}

TEST_CASE("mixed dims across entries rejected") {
    TmpDir tmp;
    toygen::ToyPipeline pipe(3, 2, 4, 4);
    const auto pattern = core::make_pattern(11, 2, 4, 4);
    auto ds = toygen::make_dataset(pipe, 2, pattern, 0.5, 0);
    ds.entries[1].latent = core::LatentTensor(2, 2, 2);
    ds.entries[1].image = core::ImageTensor(3, 16, 16);
    const auto path = tmp.file("mixed.srmd");
    io::write_dataset(ds, path);
    CHECK_THROWS_AS(toygen::import_latents(path), InvalidArgumentError);
}

TEST_CASE("duplicate prompt seeds rejected") {
    toygen::ToyPipeline pipe(3, 2, 4, 4);
    const auto pattern = core::make_pattern(11, 2, 4, 4);
    auto ds = toygen::make_dataset(pipe, 2, pattern, 0.5, 0);
    ds.entries[1].prompt_seed = ds.entries[0].prompt_seed;
    CHECK_THROWS_AS(toygen::validate_dataset(ds), InvalidArgumentError);
}
