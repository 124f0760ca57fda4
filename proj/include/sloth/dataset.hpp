#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sloth/model_io.hpp"

namespace sloth {

/// Labeled images with values in [0, 1].
struct Dataset {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t num_classes = 2;
  std::vector<Tensor> inputs;
  std::vector<std::uint32_t> labels;

  std::size_t size() const noexcept { return inputs.size(); }
  Shape sample_shape() const { return {channels, height, width}; }

  void validate() const {
    if (inputs.size() != labels.size()) throw FormatError("dataset inputs and labels differ in length");
    if (num_classes < 2) throw FormatError("dataset needs at least two classes");
    for (std::size_t s = 0; s < inputs.size(); ++s) {
      if (inputs[s].shape() != sample_shape()) throw FormatError("dataset sample has the wrong shape");
      if (labels[s] >= num_classes) throw FormatError("label " + std::to_string(labels[s]) + " out of range");
      for (double v : inputs[s].data()) {
        if (!(v >= 0.0 && v <= 1.0)) throw FormatError("pixel value outside [0, 1]");
      }
    }
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d = empty_like();
    for (std::size_t i : idx) {
      d.inputs.push_back(inputs.at(i));
      d.labels.push_back(labels.at(i));
    }
    return d;
  }

  Dataset head(std::size_t n) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    std::iota(idx.begin(), idx.end(), 0);
    return subset(idx);
  }

  Dataset of_class(std::uint32_t c) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i)
      if (labels[i] == c) idx.push_back(i);
    return subset(idx);
  }

  Dataset empty_like() const {
    Dataset d;
    d.channels = channels;
    d.height = height;
    d.width = width;
    d.num_classes = num_classes;
    return d;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetSplits {
  Dataset train;
  Dataset holdout;
  Dataset test;
};

inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit draws so the order is library-independent.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

/// Disjoint test / holdout / train split; the holdout comes out of the training part.
inline DatasetSplits split_dataset(const Dataset& d, double test_fraction, double holdout_fraction,
                                   std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0) || !(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw Error("split fractions must lie in (0, 1)");
  }
  const auto perm = seeded_permutation(d.size(), seed);
  const auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(d.size())));
  const std::size_t n_rest = d.size() - n_test;
  const auto n_hold = static_cast<std::size_t>(std::round(holdout_fraction * static_cast<double>(n_rest)));
  std::span<const std::size_t> all(perm);
  DatasetSplits s;
  s.test = d.subset(all.subspan(0, n_test));
  s.holdout = d.subset(all.subspan(n_test, n_hold));
  s.train = d.subset(all.subspan(n_test + n_hold));
  return s;
}

struct SyntheticSpec {
  std::size_t classes = 8;
  std::size_t samples = 4000;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  /// Standard deviation of the per-pixel Gaussian noise at unit sample hardness.
  double difficulty = 0.15;
  /// Amplitude of the class templates around mid-grey.
  double contrast = 0.2;
  std::uint64_t seed = 1;
  /// Seed for the class templates; distinct values give disjoint domains.
  std::uint64_t template_seed = 1;
  /// Probability of inverting a sample's template polarity. Inverted samples are not
  /// linearly separable from the rest, which gives the deeper exits something to do.
  double polarity_flip = 0.2;
};

namespace detail {

inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double gaussian(std::mt19937_64& rng) {
  // Box-Muller from explicit uniforms keeps streams identical across standard libraries.
  double u1 = unit(rng);
  while (u1 <= 0.0) u1 = unit(rng);
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Smooth pattern in [-1, 1]: a coarse 4x4 random grid, bilinearly upsampled.
inline std::vector<double> smooth_template(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  constexpr std::size_t G = 4;
  std::vector<double> out(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double grid[G][G];
    for (auto& row : grid)
      for (double& v : row) v = 2.0 * unit(rng) - 1.0;
    for (std::size_t y = 0; y < h; ++y) {
      const double fy = (h > 1) ? static_cast<double>(y) * (G - 1) / static_cast<double>(h - 1) : 0.0;
      const auto y0 = std::min<std::size_t>(static_cast<std::size_t>(fy), G - 2);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < w; ++x) {
        const double fx = (w > 1) ? static_cast<double>(x) * (G - 1) / static_cast<double>(w - 1) : 0.0;
        const auto x0 = std::min<std::size_t>(static_cast<std::size_t>(fx), G - 2);
        const double tx = fx - static_cast<double>(x0);
        const double top = grid[y0][x0] * (1 - tx) + grid[y0][x0 + 1] * tx;
        const double bot = grid[y0 + 1][x0] * (1 - tx) + grid[y0 + 1][x0 + 1] * tx;
        out[(ch * h + y) * w + x] = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Class-template images: 0.5 + a * contrast * template_c + hardness * difficulty * noise,
/// clipped to [0, 1]. Per-sample contrast a and hardness vary so that some samples are
/// easy (early exits suffice) and some need the full network.
inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.samples < 2) throw Error("synthetic data needs at least two classes and samples");
  if (spec.channels == 0 || spec.height == 0 || spec.width == 0) throw Error("synthetic sample shape is empty");
  if (!(spec.difficulty >= 0.0) || !(spec.contrast > 0.0)) throw Error("invalid synthetic difficulty or contrast");
  if (!(spec.polarity_flip >= 0.0 && spec.polarity_flip <= 1.0)) throw Error("polarity flip must be a probability");
  std::mt19937_64 trng(spec.template_seed);
  std::vector<std::vector<double>> templates;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    templates.push_back(detail::smooth_template(spec.channels, spec.height, spec.width, trng));
  }
  std::mt19937_64 rng(spec.seed);
  Dataset d;
  d.channels = spec.channels;
  d.height = spec.height;
  d.width = spec.width;
  d.num_classes = spec.classes;
  const Shape shape{spec.channels, spec.height, spec.width};
  for (std::size_t s = 0; s < spec.samples; ++s) {
    const auto label = static_cast<std::uint32_t>(s % spec.classes);
    double amp = 0.5 + detail::unit(rng);  // [0.5, 1.5)
    if (detail::unit(rng) < spec.polarity_flip) amp = -amp;
    const double hardness = 0.25 + 1.5 * detail::unit(rng);  // [0.25, 1.75)
    Tensor x(shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double noise = spec.difficulty > 0.0 ? hardness * spec.difficulty * detail::gaussian(rng) : 0.0;
      x[i] = std::clamp(0.5 + amp * spec.contrast * templates[label][i] + noise, 0.0, 1.0);
    }
    d.inputs.push_back(std::move(x));
    d.labels.push_back(label);
  }
  const auto perm = seeded_permutation(d.size(), spec.seed ^ 0x9e3779b97f4a7c15ULL);
  return d.subset(perm);
}

// ---- MXDS file format ----

namespace io {
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr char kDatasetMagic[4] = {'M', 'X', 'D', 'S'};
}  // namespace io

/// "MXDS" | u32 version | u32 n, c, h, w, m | n*c*h*w f64 | n u32 labels | u32 CRC32 of everything after the header.
inline std::vector<unsigned char> serialize_dataset(const Dataset& d) {
  d.validate();
  io::Writer w;
  w.bytes(io::kDatasetMagic, 4);
  w.u32(io::kDatasetVersion);
  for (std::size_t v : {d.size(), d.channels, d.height, d.width, d.num_classes}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  io::Writer payload;
  for (const Tensor& x : d.inputs)
    for (double v : x.data()) payload.f64(v);
  for (std::uint32_t y : d.labels) payload.u32(y);
  w.bytes(payload.buffer().data(), payload.size());
  w.u32(io::crc32(payload.buffer()));
  return w.buffer();
}

inline Dataset deserialize_dataset(std::vector<unsigned char> bytes) {
  io::Reader r(std::move(bytes));
  if (r.remaining() < 4 || r.str(4) != std::string(io::kDatasetMagic, 4)) throw FormatError("bad magic");
  const std::uint32_t version = r.u32();
  if (version != io::kDatasetVersion) {
    throw FormatError("unsupported dataset format version " + std::to_string(version));
  }
  Dataset d;
  const std::size_t n = r.u32();
  d.channels = r.u32();
  d.height = r.u32();
  d.width = r.u32();
  d.num_classes = r.u32();
  if (d.channels == 0 || d.height == 0 || d.width == 0) throw FormatError("empty sample shape");
  const std::size_t per = d.channels * d.height * d.width;
  const std::size_t begin = r.pos();
  r.need(n * per * 8 + n * 4 + 4);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> v(per);
    for (double& x : v) x = r.f64();
    d.inputs.emplace_back(d.sample_shape(), std::move(v));
  }
  for (std::size_t s = 0; s < n; ++s) d.labels.push_back(r.u32());
  const std::uint32_t expected = io::crc32(r.slice(begin, r.pos()));
  if (r.u32() != expected) throw FormatError("checksum mismatch");
  if (r.remaining() != 0) throw FormatError("trailing bytes after dataset payload");
  d.validate();
  return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) { io::write_file(path, serialize_dataset(d)); }

inline Dataset load_dataset(const std::string& path) { return deserialize_dataset(io::read_file(path)); }

/// Rows of `label,v0,v1,...`; a non-numeric first row is treated as a header.
/// Samples are stored as [1, 1, d].
inline Dataset import_csv(std::istream& in, std::size_t num_classes) {
  Dataset d;
  d.num_classes = num_classes;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    std::vector<double> nums;
    try {
      for (const auto& c : cells) {
        std::size_t used = 0;
        nums.push_back(std::stod(c, &used));
        if (used != c.size() && c.find_first_not_of(" \r\t", used) != std::string::npos) throw std::invalid_argument(c);
      }
    } catch (const std::exception&) {
      if (first) {
        first = false;
        continue;
      }
      throw FormatError("non-numeric CSV cell in line: " + line);
    }
    first = false;
    if (nums.size() < 2) throw FormatError("CSV row needs a label and at least one value");
    if (nums[0] < 0 || nums[0] != std::floor(nums[0])) throw FormatError("CSV label must be a non-negative integer");
    if (d.inputs.empty()) d.width = nums.size() - 1;
    if (nums.size() - 1 != d.width) throw FormatError("CSV rows differ in length");
    d.labels.push_back(static_cast<std::uint32_t>(nums[0]));
    d.inputs.emplace_back(d.sample_shape(), std::vector<double>(nums.begin() + 1, nums.end()));
  }
  d.validate();
  return d;
}

}  // namespace sloth
