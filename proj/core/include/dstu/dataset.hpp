#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dstu/tensor.hpp"

namespace dstu {

/// One training example: image (H, W, 3) in [0, 1] and mask (H, W, 1) in {0, 1}.
struct Sample {
  std::string id;
  Tensor image;
  Tensor mask;
};

/// Smooth low-frequency background with one to three filled ellipses of
/// distinct color; the mask is their union and covers 2%..50% of the image.
/// Sample i depends only on (seed, i).
Sample synthetic_sample(std::size_t resolution, std::uint64_t seed, std::size_t index);
std::vector<Sample> gen_synthetic(std::size_t n, std::size_t resolution, std::uint64_t seed);

/// Bilinear (half-pixel centers) image resize and nearest-neighbor mask resize.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
Tensor resize_nearest(const Tensor& map, std::size_t height, std::size_t width);

/// `.img`: "DSIM", H, W, C as u32 little-endian, then H*W*C float32 values.
void write_image(const std::filesystem::path& path, const Tensor& image);
Tensor read_image(const std::filesystem::path& path);

/// Binary 8-bit PGM (P5). Written as 0/255; read back thresholded at 128.
void write_mask_pgm(const std::filesystem::path& path, const std::vector<unsigned char>& mask,
                    std::size_t height, std::size_t width);
Tensor read_mask_pgm(const std::filesystem::path& path);

/// Directory of ID.img / ID.mask.pgm pairs; loading sorts by ID.
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

}  // namespace dstu
