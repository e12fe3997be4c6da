#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "jmvl/common.hpp"
#include "jmvl/rng.hpp"

namespace jmvl {

/// Raw IDX container: magic = [0, 0, dtype, ndims], big-endian u32 dims,
/// then the payload. dtype 0x08 is unsigned byte, 0x0D is float32.
struct IdxData {
    std::uint8_t dtype = 0x08;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
    std::size_t elem_size() const { return dtype == 0x0D ? 4 : 1; }
};

inline IdxData read_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 4) throw FormatError(path + ": file too short for an IDX magic", bytes.size());
    if (bytes[0] != 0 || bytes[1] != 0) throw FormatError(path + ": bad IDX magic", 0);
    IdxData idx;
    idx.dtype = bytes[2];
    if (idx.dtype != 0x08 && idx.dtype != 0x0D)
        throw FormatError(path + ": unsupported IDX dtype " + std::to_string(bytes[2]), 2);
    std::uint8_t ndims = bytes[3];
    if (ndims == 0 || ndims > 4) throw FormatError(path + ": bad IDX rank", 3);
    std::size_t offset = 4;
    for (std::uint8_t i = 0; i < ndims; ++i) {
        if (offset + 4 > bytes.size()) throw FormatError(path + ": truncated IDX header", bytes.size());
        std::uint32_t d = (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
                          (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
        idx.dims.push_back(d);
        offset += 4;
    }
    std::size_t expected = idx.count() * idx.elem_size();
    if (bytes.size() - offset != expected)
        throw FormatError(path + ": payload length mismatch, expected " + std::to_string(expected) +
                              " bytes",
                          bytes.size());
    idx.payload.assign(bytes.begin() + offset, bytes.end());
    return idx;
}

inline void write_idx(const std::string& path, const IdxData& idx) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    std::uint8_t head[4] = {0, 0, idx.dtype, static_cast<std::uint8_t>(idx.dims.size())};
    out.write(reinterpret_cast<const char*>(head), 4);
    for (std::uint32_t d : idx.dims) {
        std::uint8_t b[4] = {static_cast<std::uint8_t>(d >> 24), static_cast<std::uint8_t>(d >> 16),
                             static_cast<std::uint8_t>(d >> 8), static_cast<std::uint8_t>(d)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    out.write(reinterpret_cast<const char*>(idx.payload.data()),
              static_cast<std::streamsize>(idx.payload.size()));
    if (!out) throw IoError("short write to " + path);
}

/// Paired modality blocks with aligned item counts. Pixels are stored as
/// gray values; binarization happens lazily per epoch.
struct BimodalDataset {
    std::size_t n = 0;
    std::size_t x_dim = 0, w_dim = 0;
    std::vector<float> x;     // [n, x_dim]
    std::vector<float> w;     // [n, w_dim], one-hot rows for categorical w
    std::vector<int> labels;  // class ids alongside the one-hot block
    std::size_t img_rows = 0, img_cols = 0;  // nonzero when x is an image grid
    bool x_is_image = false;                 // gray in [0,1], bernoulli modality
    std::map<std::string, std::string> provenance;
    std::vector<float> toy_means;  // [clusters, x_dim] generative means, toy only
};

/// Loads an MNIST-layout IDX pair: images (dtype u8, rank 3) + labels
/// (dtype u8, rank 1). Pixels scale to [0,1], labels widen to one-hot.
inline BimodalDataset load_mnist(const std::string& image_path, const std::string& label_path) {
    IdxData images = read_idx(image_path);
    if (images.dtype != 0x08 || images.dims.size() != 3)
        throw FormatError(image_path + ": expected magic 0x00000803 (u8 images, rank 3)", 0);
    IdxData labels = read_idx(label_path);
    if (labels.dtype != 0x08 || labels.dims.size() != 1)
        throw FormatError(label_path + ": expected magic 0x00000801 (u8 labels, rank 1)", 0);
    if (images.dims[0] != labels.dims[0])
        throw FormatError(image_path + ": image count " + std::to_string(images.dims[0]) +
                              " does not match label count " + std::to_string(labels.dims[0]),
                          4);

    BimodalDataset ds;
    ds.n = images.dims[0];
    ds.img_rows = images.dims[1];
    ds.img_cols = images.dims[2];
    ds.x_dim = ds.img_rows * ds.img_cols;
    ds.w_dim = 10;
    ds.x_is_image = true;
    ds.x.resize(ds.n * ds.x_dim);
    for (std::size_t i = 0; i < ds.x.size(); ++i)
        ds.x[i] = static_cast<float>(images.payload[i]) / 255.0f;
    ds.w.assign(ds.n * 10, 0.0f);
    ds.labels.resize(ds.n);
    for (std::size_t i = 0; i < ds.n; ++i) {
        std::uint8_t lab = labels.payload[i];
        if (lab > 9) throw FormatError(label_path + ": label out of range", 8 + i);
        ds.labels[i] = lab;
        ds.w[i * 10 + lab] = 1.0f;
    }
    ds.provenance["source_images"] = image_path;
    ds.provenance["source_labels"] = label_path;
    return ds;
}

/// Writes the dataset back to an IDX pair; inverse of load_mnist for
/// image datasets (byte-exact round trip).
inline void write_mnist(const BimodalDataset& ds, const std::string& image_path,
                        const std::string& label_path) {
    if (!ds.x_is_image) throw InputError("write_mnist: dataset does not carry images");
    IdxData images;
    images.dtype = 0x08;
    images.dims = {static_cast<std::uint32_t>(ds.n), static_cast<std::uint32_t>(ds.img_rows),
                   static_cast<std::uint32_t>(ds.img_cols)};
    images.payload.resize(ds.x.size());
    for (std::size_t i = 0; i < ds.x.size(); ++i)
        images.payload[i] = static_cast<std::uint8_t>(std::lround(ds.x[i] * 255.0f));
    write_idx(image_path, images);

    IdxData labels;
    labels.dtype = 0x08;
    labels.dims = {static_cast<std::uint32_t>(ds.n)};
    labels.payload.resize(ds.n);
    for (std::size_t i = 0; i < ds.n; ++i) labels.payload[i] = static_cast<std::uint8_t>(ds.labels[i]);
    write_idx(label_path, labels);
}

/// Bernoulli draw per pixel with success probability equal to the gray value.
inline std::vector<float> binarize(const std::vector<float>& gray, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> out(gray.size());
    for (std::size_t i = 0; i < gray.size(); ++i) {
        if (gray[i] < 0.0f || gray[i] > 1.0f)
            throw RangeError("binarize: value " + std::to_string(gray[i]) + " outside [0,1]");
        out[i] = rng.uniform() < static_cast<double>(gray[i]) ? 1.0f : 0.0f;
    }
    return out;
}

/// Synthetic bimodal toy: cluster one-hot w, continuous x drawn from a
/// unit-variance Gaussian around a per-cluster mean. The generative
/// parameters stay on the dataset for quadrature oracles.
struct ToySpec {
    std::size_t clusters = 2;
    std::size_t x_dim = 1;
    std::size_t items = 1000;
    std::uint64_t seed = 0;
};

inline BimodalDataset make_toy(const ToySpec& spec) {
    if (spec.clusters < 2) throw ConfigError("toy dataset needs at least 2 clusters");
    if (spec.x_dim < 1 || spec.items < 1) throw ConfigError("toy dataset dims/items must be positive");
    BimodalDataset ds;
    ds.n = spec.items;
    ds.x_dim = spec.x_dim;
    ds.w_dim = spec.clusters;
    ds.x_is_image = false;

    Rng mean_rng(derive_seed(spec.seed, {0x7031}));
    ds.toy_means.resize(spec.clusters * spec.x_dim);
    for (auto& v : ds.toy_means) v = static_cast<float>(mean_rng.uniform(-2.0, 2.0));

    Rng item_rng(derive_seed(spec.seed, {0x7032}));
    ds.x.resize(ds.n * spec.x_dim);
    ds.w.assign(ds.n * spec.clusters, 0.0f);
    ds.labels.resize(ds.n);
    for (std::size_t i = 0; i < ds.n; ++i) {
        std::size_t c = static_cast<std::size_t>(item_rng.below(spec.clusters));
        ds.labels[i] = static_cast<int>(c);
        ds.w[i * spec.clusters + c] = 1.0f;
        for (std::size_t d = 0; d < spec.x_dim; ++d)
            ds.x[i * spec.x_dim + d] =
                ds.toy_means[c * spec.x_dim + d] + static_cast<float>(item_rng.normal());
    }
    ds.provenance["toy_clusters"] = std::to_string(spec.clusters);
    ds.provenance["toy_x_dim"] = std::to_string(spec.x_dim);
    ds.provenance["toy_seed"] = std::to_string(spec.seed);
    return ds;
}

/// Exports the toy blocks as IDX (float32 x, u8 labels) so the same
/// container carries every dataset.
inline void write_toy_idx(const BimodalDataset& ds, const std::string& x_path,
                          const std::string& label_path) {
    IdxData xs;
    xs.dtype = 0x0D;
    xs.dims = {static_cast<std::uint32_t>(ds.n), static_cast<std::uint32_t>(ds.x_dim)};
    xs.payload.resize(ds.x.size() * 4);
    for (std::size_t i = 0; i < ds.x.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &ds.x[i], 4);
        xs.payload[i * 4 + 0] = static_cast<std::uint8_t>(bits >> 24);
        xs.payload[i * 4 + 1] = static_cast<std::uint8_t>(bits >> 16);
        xs.payload[i * 4 + 2] = static_cast<std::uint8_t>(bits >> 8);
        xs.payload[i * 4 + 3] = static_cast<std::uint8_t>(bits);
    }
    write_idx(x_path, xs);
    IdxData labels;
    labels.dtype = 0x08;
    labels.dims = {static_cast<std::uint32_t>(ds.n)};
    labels.payload.resize(ds.n);
    for (std::size_t i = 0; i < ds.n; ++i) labels.payload[i] = static_cast<std::uint8_t>(ds.labels[i]);
    write_idx(label_path, labels);
}

// ---------------------------------------------------------------------------
// Synthetic digit corpus: 28x28 gray glyph renderings with per-item affine
// and elastic jitter, written as standard IDX pairs. Fills in for handwriting
// data in fully-offline runs.
// ---------------------------------------------------------------------------

namespace detail {

// 5x7 digit glyphs, one bit per cell, row-major top to bottom.
inline const std::uint8_t kDigitFont[10][7] = {
    {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110},  // 0
    {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},  // 1
    {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111},  // 2
    {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110},  // 3
    {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010},  // 4
    {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110},  // 5
    {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110},  // 6
    {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000},  // 7
    {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110},  // 8
    {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100},  // 9
};

}  // namespace detail

/// Renders one 28x28 digit with randomized pose, stroke width, elastic warp
/// and intensity; output gray values in [0,1].
inline void render_digit(int digit, Rng& rng, float* out784) {
    const double angle = rng.uniform(-0.25, 0.25);
    const double sx = rng.uniform(0.85, 1.2), sy = rng.uniform(0.85, 1.2);
    const double shear = rng.uniform(-0.25, 0.25);
    const double tx = rng.uniform(-2.0, 2.0), ty = rng.uniform(-2.0, 2.0);
    const double pen = rng.uniform(0.75, 1.35);
    const double amp = rng.uniform(0.75, 1.0);
    const double ex = rng.uniform(0.0, 1.2), ey = rng.uniform(0.0, 1.2);
    const double px = rng.uniform(0.0, 6.28), py = rng.uniform(0.0, 6.28);
    const double fx = rng.uniform(0.15, 0.45), fy = rng.uniform(0.15, 0.45);

    const double ca = std::cos(angle), sa = std::sin(angle);
    double img[28][28] = {};
    for (int r = 0; r < 7; ++r) {
        for (int c = 0; c < 5; ++c) {
            if (!((detail::kDigitFont[digit][r] >> (4 - c)) & 1)) continue;
            // glyph cell center in canvas coordinates, centered on (14, 14)
            double gx = (c - 2.0) * 3.2;
            double gy = (r - 3.0) * 3.0;
            double wx = sx * (gx + shear * gy), wy = sy * gy;
            double cx = 14.0 + ca * wx - sa * wy + tx;
            double cy = 14.0 + sa * wx + ca * wy + ty;
            cx += ex * std::sin(fx * cy * 6.28 + px);
            cy += ey * std::sin(fy * cx * 6.28 + py);
            int lo_r = std::max(0, static_cast<int>(cy - 4)), hi_r = std::min(27, static_cast<int>(cy + 4));
            int lo_c = std::max(0, static_cast<int>(cx - 4)), hi_c = std::min(27, static_cast<int>(cx + 4));
            for (int ir = lo_r; ir <= hi_r; ++ir)
                for (int ic = lo_c; ic <= hi_c; ++ic) {
                    double d2 = (ir - cy) * (ir - cy) + (ic - cx) * (ic - cx);
                    img[ir][ic] += std::exp(-d2 / (2.0 * pen * pen));
                }
        }
    }
    for (int r = 0; r < 28; ++r)
        for (int c = 0; c < 28; ++c) {
            double v = amp * (1.0 - std::exp(-1.2 * img[r][c]));
            v += rng.uniform(-0.015, 0.015);
            out784[r * 28 + c] = static_cast<float>(std::min(std::max(v, 0.0), 1.0));
        }
}

/// Deterministic synthetic digit dataset in the MNIST layout.
inline BimodalDataset make_synthetic_digits(std::size_t items, std::uint64_t seed) {
    BimodalDataset ds;
    ds.n = items;
    ds.img_rows = 28;
    ds.img_cols = 28;
    ds.x_dim = 784;
    ds.w_dim = 10;
    ds.x_is_image = true;
    ds.x.resize(items * 784);
    ds.w.assign(items * 10, 0.0f);
    ds.labels.resize(items);
    for (std::size_t i = 0; i < items; ++i) {
        Rng rng(derive_seed(seed, {0xd161, i}));
        int digit = static_cast<int>(rng.below(10));
        ds.labels[i] = digit;
        ds.w[i * 10 + digit] = 1.0f;
        render_digit(digit, rng, ds.x.data() + i * 784);
        // snap to the u8 grid so IDX export/import is lossless
        for (std::size_t j = 0; j < 784; ++j) {
            float v = ds.x[i * 784 + j];
            ds.x[i * 784 + j] = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
        }
    }
    ds.provenance["synthetic_digits_seed"] = std::to_string(seed);
    return ds;
}

/// Takes the leading `count` items.
inline BimodalDataset dataset_head(const BimodalDataset& ds, std::size_t count) {
    if (count == 0 || count >= ds.n) return ds;
    BimodalDataset out = ds;
    out.n = count;
    out.x.assign(ds.x.begin(), ds.x.begin() + count * ds.x_dim);
    out.w.assign(ds.w.begin(), ds.w.begin() + count * ds.w_dim);
    out.labels.assign(ds.labels.begin(), ds.labels.begin() + count);
    return out;
}

}  // namespace jmvl
