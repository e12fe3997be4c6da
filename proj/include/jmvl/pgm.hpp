#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "jmvl/common.hpp"

namespace jmvl {

/// 8-bit binary PGM (P5).
inline void write_pgm(const std::string& path, std::size_t width, std::size_t height,
                      const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != width * height) throw ShapeError("write_pgm: pixel count mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw IoError("short write to " + path);
}

/// Tiles row-major cells (each `cell_h` x `cell_w`, gray in [0,1]) into one
/// grid image and writes it.
template <typename T>
void write_pgm_grid(const std::string& path, const std::vector<std::vector<T>>& cells,
                    std::size_t rows, std::size_t cols, std::size_t cell_h, std::size_t cell_w) {
    if (cells.size() != rows * cols) throw ShapeError("write_pgm_grid: cell count mismatch");
    std::vector<std::uint8_t> pixels(rows * cell_h * cols * cell_w, 0);
    const std::size_t stride = cols * cell_w;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const auto& cell = cells[r * cols + c];
            if (cell.size() != cell_h * cell_w) throw ShapeError("write_pgm_grid: cell size mismatch");
            for (std::size_t y = 0; y < cell_h; ++y)
                for (std::size_t x = 0; x < cell_w; ++x) {
                    double v = static_cast<double>(cell[y * cell_w + x]);
                    v = std::min(std::max(v, 0.0), 1.0);
                    pixels[(r * cell_h + y) * stride + c * cell_w + x] =
                        static_cast<std::uint8_t>(std::lround(v * 255.0));
                }
        }
    write_pgm(path, stride, rows * cell_h, pixels);
}

}  // namespace jmvl
