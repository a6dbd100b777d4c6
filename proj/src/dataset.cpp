#include "ras/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ras {

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out{channels, height, width, n_classes, {}, {}};
  out.pixels.reserve(indices.size() * image_size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.append(image(i), labels.at(i));
  return out;
}

void Dataset::append(std::span<const float> img, int label) {
  if (img.size() != image_size()) throw ConfigError("image size does not match dataset dimensions");
  pixels.insert(pixels.end(), img.begin(), img.end());
  labels.push_back(label);
}

Dataset make_synthetic(const SyntheticOptions& o, std::uint64_t seed) {
  if (o.n_classes < 2 || o.size < 2 || o.channels < 1) throw ConfigError("synthetic dataset too small");
  Rng rng(seed);
  struct Proto {
    double cy, cx;
    std::vector<double> colour;
  };
  // Class centres spread on a circle; colours drawn per class.
  std::vector<Proto> protos;
  const double r = 0.28 * o.size, mid = 0.5 * (o.size - 1);
  for (int k = 0; k < o.n_classes; ++k) {
    const double angle = 2.0 * M_PI * k / o.n_classes;
    Proto p{mid + r * std::sin(angle), mid + r * std::cos(angle), {}};
    for (int c = 0; c < o.channels; ++c) p.colour.push_back(uniform_real(rng, -1.0, 1.0));
    protos.push_back(std::move(p));
  }
  Dataset d{o.channels, o.size, o.size, o.n_classes, {}, {}};
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<float> img(d.image_size());
  for (int s = 0; s < o.samples; ++s) {
    const int label = s % o.n_classes;
    const Proto& p = protos[label];
    const double cy = p.cy + o.jitter * gauss(rng), cx = p.cx + o.jitter * gauss(rng);
    for (int c = 0; c < o.channels; ++c)
      for (int y = 0; y < o.size; ++y)
        for (int x = 0; x < o.size; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          const double blob = std::exp(-d2 / (2.0 * o.blob_sigma * o.blob_sigma));
          const double v = 0.5 + o.amplitude * p.colour[c] * blob + o.noise * gauss(rng);
          img[(static_cast<std::size_t>(c) * o.size + y) * o.size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    d.append(img, label);
  }
  // Interleaved labels would make index-based splits trivially balanced; shuffle.
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return d.select(order);
}

Dataset load_cifar10_binary(const std::vector<std::string>& files, const CifarOptions& options) {
  constexpr int kSide = 32, kRecord = 1 + 3 * kSide * kSide;
  Dataset d{3, kSide, kSide, options.n_classes, {}, {}};
  std::vector<unsigned char> rec(kRecord);
  std::vector<float> img(d.image_size());
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open CIFAR-10 batch " + path);
    while (in.read(reinterpret_cast<char*>(rec.data()), kRecord)) {
      const int label = rec[0];
      if (label > 9) throw ParseError(path, "label byte " + std::to_string(label) + " out of range");
      if (label >= options.n_classes) continue;
      for (int i = 0; i < 3 * kSide * kSide; ++i) img[i] = rec[1 + i] / 255.0f;
      d.append(img, label);
      if (options.limit && d.size() >= options.limit) break;
    }
    if (in.gcount() != 0 && in.gcount() != kRecord) throw ParseError(path, "truncated record");
    if (options.limit && d.size() >= options.limit) break;
  }
  if (d.size() == 0) throw ConfigError("no CIFAR-10 records loaded");
  return options.downscale > 0 && options.downscale != kSide ? downscale(d, options.downscale) : d;
}

Dataset downscale(const Dataset& data, int side) {
  if (side < 1 || side > data.height || side > data.width) throw ConfigError("invalid downscale size");
  const int fy = data.height / side, fx = data.width / side;
  const int oy = (data.height - fy * side) / 2, ox = (data.width - fx * side) / 2;
  Dataset out{data.channels, side, side, data.n_classes, {}, {}};
  std::vector<float> img(out.image_size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto src = data.image(i);
    for (int c = 0; c < data.channels; ++c)
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          double acc = 0.0;
          for (int dy = 0; dy < fy; ++dy)
            for (int dx = 0; dx < fx; ++dx)
              acc += src[(static_cast<std::size_t>(c) * data.height + oy + y * fy + dy) * data.width + ox + x * fx + dx];
          img[(static_cast<std::size_t>(c) * side + y) * side + x] = static_cast<float>(acc / (fy * fx));
        }
    out.append(img, data.labels[i]);
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> a(order.begin(), order.begin() + first), b(order.begin() + first, order.end());
  return {data.select(a), data.select(b)};
}

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t count, std::uint64_t seed) {
  if (count > population) throw ConfigError("sample larger than population");
  std::vector<std::size_t> order(population);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, population - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace ras
