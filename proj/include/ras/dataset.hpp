#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ras/common.hpp"

namespace ras {

/// Labelled images, channel-major (c, h, w) per sample, values in [0, 1].
struct Dataset {
  int channels = 3;
  int height = 0;
  int width = 0;
  int n_classes = 0;
  std::vector<float> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return static_cast<std::size_t>(channels) * height * width; }
  std::span<const float> image(std::size_t i) const { return {pixels.data() + i * image_size(), image_size()}; }

  Dataset select(std::span<const std::size_t> indices) const;
  void append(std::span<const float> image, int label);
};

struct SyntheticOptions {
  int n_classes = 3;
  int size = 8;  // square images
  int channels = 3;
  int samples = 1200;
  double amplitude = 0.35;  // blob peak above the background
  double blob_sigma = 1.6;  // in pixels
  double noise = 0.12;
  double jitter = 0.8;  // blob centre jitter in pixels
};

/// Seeded Gaussian-blob classes: each class owns a blob position and colour
/// on a grey background; samples add centre jitter and pixel noise.
Dataset make_synthetic(const SyntheticOptions& options, std::uint64_t seed);

struct CifarOptions {
  int n_classes = 10;       // keep labels < n_classes
  int downscale = 0;        // target side length; 0 keeps 32
  std::size_t limit = 0;    // 0 = all records
};

/// Reads the standard binary batches (1 label byte + 3072 pixel bytes per record).
Dataset load_cifar10_binary(const std::vector<std::string>& files, const CifarOptions& options);

/// Centre-crops to a multiple of `side` and block-averages down to side x side.
Dataset downscale(const Dataset& data, int side);

/// Seeded shuffle then split: the first part gets round(fraction * n) samples.
std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed);

/// `count` distinct indices drawn uniformly without replacement, ascending order.
std::vector<std::size_t> sample_indices(std::size_t population, std::size_t count, std::uint64_t seed);

}  // namespace ras
