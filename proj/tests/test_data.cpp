#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "jmvl/data.hpp"

using namespace jmvl;

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "jmvl_data_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<std::uint8_t> file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("idx read/write round trip") {
    auto dir = temp_dir();
    std::string img = (dir / "img.idx").string();
    std::string lab = (dir / "lab.idx").string();

    SECTION("all-zero ten-item file loads as a valid degenerate dataset") {
        IdxData images;
        images.dtype = 0x08;
        images.dims = {10, 28, 28};
        images.payload.assign(10 * 28 * 28, 0);
        write_idx(img, images);
        IdxData labels;
        labels.dtype = 0x08;
        labels.dims = {10};
        labels.payload = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
        write_idx(lab, labels);

        BimodalDataset ds = load_mnist(img, lab);
        REQUIRE(ds.n == 10);
        REQUIRE(ds.x_dim == 784);
        REQUIRE(ds.w_dim == 10);
        for (float v : ds.x) REQUIRE(v == 0.0f);
        for (std::size_t i = 0; i < 10; ++i) {
            REQUIRE(ds.labels[i] == static_cast<int>(i));
            REQUIRE(ds.w[i * 10 + i] == 1.0f);
        }
    }

    SECTION("write(load(f)) reproduces f byte-for-byte") {
        BimodalDataset digits = make_synthetic_digits(64, 9001);
        write_mnist(digits, img, lab);
        auto img_bytes = file_bytes(img);
        auto lab_bytes = file_bytes(lab);

        BimodalDataset loaded = load_mnist(img, lab);
        std::string img2 = (dir / "img2.idx").string();
        std::string lab2 = (dir / "lab2.idx").string();
        write_mnist(loaded, img2, lab2);
        REQUIRE(file_bytes(img2) == img_bytes);
        REQUIRE(file_bytes(lab2) == lab_bytes);
    }

    SECTION("truncated payload reports the failing offset") {
        IdxData images;
        images.dtype = 0x08;
        images.dims = {10, 28, 28};
        images.payload.assign(10 * 28 * 28, 0);
        write_idx(img, images);
        auto bytes = file_bytes(img);
        bytes.resize(bytes.size() - 100);
        {
            std::ofstream out(img, std::ios::binary | std::ios::trunc);
            out.write(reinterpret_cast<const char*>(bytes.data()),
                      static_cast<std::streamsize>(bytes.size()));
        }
        try {
            read_idx(img);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            REQUIRE(e.offset == bytes.size());
        }
    }

    SECTION("bad magic and count mismatch") {
        {
            std::ofstream out(img, std::ios::binary | std::ios::trunc);
            const char junk[] = "\x01\x00\x08\x01zzzz";
            out.write(junk, 8);
        }
        REQUIRE_THROWS_AS(read_idx(img), FormatError);

        IdxData images;
        images.dtype = 0x08;
        images.dims = {3, 2, 2};
        images.payload.assign(12, 0);
        write_idx(img, images);
        IdxData labels;
        labels.dtype = 0x08;
        labels.dims = {4};
        labels.payload = {0, 1, 2, 3};
        write_idx(lab, labels);
        REQUIRE_THROWS_AS(load_mnist(img, lab), FormatError);
    }
}

TEST_CASE("binarize") {
    SECTION("endpoints are deterministic") {
        std::vector<float> gray = {0.0f, 1.0f, 0.0f, 1.0f};
        for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
            auto bits = binarize(gray, seed);
            REQUIRE(bits == std::vector<float>{0.0f, 1.0f, 0.0f, 1.0f});
        }
    }
    SECTION("gray 0.5 hits frequency 0.5 within binomial error") {
        std::vector<float> gray(10000, 0.5f);
        auto bits = binarize(gray, 77);
        double freq = 0.0;
        for (float b : bits) freq += b;
        freq /= gray.size();
        REQUIRE(std::abs(freq - 0.5) < 3.0 * std::sqrt(0.25 / 10000.0));
    }
    SECTION("same seed twice gives identical draws") {
        std::vector<float> gray(256);
        Rng rng(5);
        for (auto& g : gray) g = static_cast<float>(rng.uniform());
        REQUIRE(binarize(gray, 123) == binarize(gray, 123));
        REQUIRE(binarize(gray, 123) != binarize(gray, 124));
    }
    SECTION("out-of-range values are rejected") {
        REQUIRE_THROWS_AS(binarize({1.5f}, 1), RangeError);
        REQUIRE_THROWS_AS(binarize({-0.1f}, 1), RangeError);
    }
}

TEST_CASE("make_toy") {
    SECTION("one-hot rows sum to 1 and regeneration is bit-identical") {
        ToySpec spec{3, 2, 500, 11};
        BimodalDataset a = make_toy(spec);
        BimodalDataset b = make_toy(spec);
        REQUIRE(a.x == b.x);
        REQUIRE(a.w == b.w);
        REQUIRE(a.toy_means == b.toy_means);
        for (std::size_t i = 0; i < a.n; ++i) {
            float sum = 0;
            for (std::size_t c = 0; c < 3; ++c) sum += a.w[i * 3 + c];
            REQUIRE(sum == 1.0f);
        }
    }
    SECTION("class frequencies are uniform within 3 standard errors at 1e4 items") {
        ToySpec spec{4, 1, 10000, 3};
        BimodalDataset ds = make_toy(spec);
        std::vector<std::size_t> counts(4, 0);
        for (int lab : ds.labels) counts[lab]++;
        const double p = 0.25, se = std::sqrt(p * (1 - p) / 10000.0);
        for (auto c : counts)
            REQUIRE(std::abs(static_cast<double>(c) / 10000.0 - p) < 3.0 * se);
    }
    SECTION("invalid specs are rejected") {
        REQUIRE_THROWS_AS(make_toy(ToySpec{1, 1, 10, 0}), ConfigError);
        REQUIRE_THROWS_AS(make_toy(ToySpec{2, 0, 10, 0}), ConfigError);
    }
    SECTION("toy idx export reloads exactly") {
        auto dir = temp_dir();
        ToySpec spec{2, 3, 50, 21};
        BimodalDataset ds = make_toy(spec);
        std::string xp = (dir / "toy_x.idx").string(), lp = (dir / "toy_w.idx").string();
        write_toy_idx(ds, xp, lp);
        IdxData xs = read_idx(xp);
        REQUIRE(xs.dtype == 0x0D);
        REQUIRE(xs.dims == std::vector<std::uint32_t>{50, 3});
        // decode the big-endian float payload and compare
        for (std::size_t i = 0; i < ds.x.size(); ++i) {
            std::uint32_t bits = (std::uint32_t(xs.payload[i * 4]) << 24) |
                                 (std::uint32_t(xs.payload[i * 4 + 1]) << 16) |
                                 (std::uint32_t(xs.payload[i * 4 + 2]) << 8) |
                                 std::uint32_t(xs.payload[i * 4 + 3]);
            float v;
            std::memcpy(&v, &bits, 4);
            REQUIRE(v == ds.x[i]);
        }
    }
}

TEST_CASE("synthetic digits") {
    BimodalDataset ds = make_synthetic_digits(200, 42);
    SECTION("values live on the u8 gray grid in [0,1]") {
        for (float v : ds.x) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
            REQUIRE(std::lround(v * 255.0f) / 255.0f == v);
        }
    }
    SECTION("items of one class differ (pose jitter) but share the label") {
        int first3 = -1, second3 = -1;
        for (std::size_t i = 0; i < ds.n; ++i)
            if (ds.labels[i] == 3) {
                if (first3 < 0) first3 = static_cast<int>(i);
                else if (second3 < 0) second3 = static_cast<int>(i);
            }
        REQUIRE(second3 >= 0);
        std::vector<float> a(ds.x.begin() + first3 * 784, ds.x.begin() + (first3 + 1) * 784);
        std::vector<float> b(ds.x.begin() + second3 * 784, ds.x.begin() + (second3 + 1) * 784);
        REQUIRE(a != b);
    }
    SECTION("regeneration is bit-identical and images are non-trivial") {
        BimodalDataset ds2 = make_synthetic_digits(200, 42);
        REQUIRE(ds.x == ds2.x);
        REQUIRE(ds.labels == ds2.labels);
        double mean = 0;
        for (float v : ds.x) mean += v;
        mean /= ds.x.size();
        REQUIRE(mean > 0.02);
        REQUIRE(mean < 0.5);
    }
}
