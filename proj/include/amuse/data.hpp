// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

#include "amuse/error.hpp"
#include "amuse/linalg.hpp"
#include "amuse/mlp.hpp"
#include "amuse/rng.hpp"

namespace amuse {

/// Labelled classification data; features in [0, 1].
struct Dataset {
  DenseMatrix inputs;                 // n x d
  std::vector<std::uint32_t> labels;  // n
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return inputs.cols(); }

  /// Throws unless n > 0, every label < k, and (for k > 1) every class occurs.
  void validate() const {
    if (labels.empty()) throw ShapeError("dataset is empty");
    if (inputs.rows() != labels.size()) throw ShapeError("dataset: input rows and labels differ in count");
    std::vector<std::size_t> hist(num_classes, 0);
    for (auto y : labels) {
      if (y >= num_classes) throw ShapeError("dataset: label " + std::to_string(y) + " >= num_classes");
      ++hist[y];
    }
    if (num_classes > 1) {
      for (std::size_t c = 0; c < num_classes; ++c)
        if (hist[c] == 0) throw ShapeError("dataset: class " + std::to_string(c) + " has no samples");
    }
  }

  std::vector<std::size_t> class_histogram() const {
    std::vector<std::size_t> hist(num_classes, 0);
    for (auto y : labels) ++hist[y];
    return hist;
  }

  Batch as_batch() const { return Batch{inputs, labels}; }
};

// ---------------------------------------------------------------------------
// IDX container (big-endian header, unsigned-byte payload)

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const std::string& what) {
  if (buf.size() < off + 4) throw FormatError(FormatError::Kind::truncated, what + ": truncated header");
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
         std::uint32_t{buf[off + 3]};
}

inline void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace detail

/// Loads an IDX image/label pair (MNIST layout). Pixels are scaled by 1/255
/// and the class count is max(label) + 1.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lbl = detail::read_file(labels_path);

  const std::string iname = images_path.string(), lname = labels_path.string();
  if (const auto m = detail::read_be32(img, 0, iname); m != kIdxImageMagic) {
    throw FormatError(FormatError::Kind::bad_magic, iname + ": bad image magic " + std::to_string(m));
  }
  if (const auto m = detail::read_be32(lbl, 0, lname); m != kIdxLabelMagic) {
    throw FormatError(FormatError::Kind::bad_magic, lname + ": bad label magic " + std::to_string(m));
  }
  const std::size_t n_img = detail::read_be32(img, 4, iname);
  const std::size_t rows = detail::read_be32(img, 8, iname);
  const std::size_t cols = detail::read_be32(img, 12, iname);
  const std::size_t n_lbl = detail::read_be32(lbl, 4, lname);
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n_img * d) throw FormatError(FormatError::Kind::truncated, iname + ": truncated pixel data");
  if (lbl.size() < 8 + n_lbl) throw FormatError(FormatError::Kind::truncated, lname + ": truncated label data");
  if (n_img != n_lbl) {
    throw FormatError(FormatError::Kind::count_mismatch, "IDX count mismatch: " + std::to_string(n_img) +
                                                             " images vs " + std::to_string(n_lbl) + " labels");
  }
  if (n_img == 0 || d == 0) throw FormatError(FormatError::Kind::truncated, iname + ": no samples");

  Dataset ds;
  ds.inputs = DenseMatrix(n_img, d);
  for (std::size_t i = 0; i < n_img * d; ++i) ds.inputs.data()[i] = static_cast<double>(img[16 + i]) / 255.0;
  ds.labels.resize(n_img);
  std::uint32_t max_label = 0;
  for (std::size_t i = 0; i < n_img; ++i) {
    ds.labels[i] = lbl[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

/// Writes a dataset as IDX (image dims 1 x d); features are quantized to bytes.
inline void save_idx(const Dataset& ds, const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lbl(labels_path, std::ios::binary);
  if (!img || !lbl) throw FormatError(FormatError::Kind::io, "cannot write IDX files");
  const auto n = static_cast<std::uint32_t>(ds.size());
  detail::put_be32(img, kIdxImageMagic);
  detail::put_be32(img, n);
  detail::put_be32(img, 1);
  detail::put_be32(img, static_cast<std::uint32_t>(ds.dim()));
  for (double v : ds.inputs.values()) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    img.put(static_cast<char>(static_cast<unsigned char>(q)));
  }
  detail::put_be32(lbl, kIdxLabelMagic);
  detail::put_be32(lbl, n);
  for (auto y : ds.labels) lbl.put(static_cast<char>(static_cast<unsigned char>(y)));
}

/// First n samples, order preserved. A short prefix may not contain every class.
inline Dataset take_first(const Dataset& ds, std::size_t n) {
  if (n == 0) throw std::invalid_argument("take_first: n must be positive");
  if (n > ds.size()) {
    throw std::invalid_argument("take_first: requested " + std::to_string(n) + " of " + std::to_string(ds.size()) +
                                " samples");
  }
  Dataset out;
  out.num_classes = ds.num_classes;
  out.inputs = DenseMatrix(n, ds.dim());
  std::copy_n(ds.inputs.data(), n * ds.dim(), out.inputs.data());
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

/// k isotropic unit-variance Gaussian clusters. Cluster c is centred at
/// (separation / sqrt 2) e_c, so every pair of means is `separation` apart.
/// Sample i belongs to class i mod k. The features are then mapped to [0, 1]
/// by one global affine map (isotropy is kept).
inline Dataset synthetic_gaussian(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k, double separation) {
  if (k < 2) throw std::invalid_argument("synthetic_gaussian: need k >= 2");
  if (d < k) throw std::invalid_argument("synthetic_gaussian: need d >= k");
  if (n == 0) throw std::invalid_argument("synthetic_gaussian: need n >= 1");
  Rng rng(seed);
  Dataset ds;
  ds.num_classes = k;
  ds.inputs = DenseMatrix(n, d);
  ds.labels.resize(n);
  const double offset = separation / std::sqrt(2.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::uint32_t>(i % k);
    ds.labels[i] = c;
    for (std::size_t j = 0; j < d; ++j) ds.inputs(i, j) = rng.normal() + (j == c ? offset : 0.0);
  }
  const auto [lo, hi] = std::minmax_element(ds.inputs.values().begin(), ds.inputs.values().end());
  const double mn = *lo, range = *hi - *lo;
  for (double& v : ds.inputs.values()) v = range > 0 ? (v - mn) / range : 0.0;
  return ds;
}

/// Shuffled mini-batches for one epoch; the permutation depends only on
/// (seed, epoch). The final partial batch is kept.
inline std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be >= 1");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::keyed(seed, epoch);
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<Batch> out;
  const std::size_t d = ds.dim();
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t m = std::min(batch_size, order.size() - start);
    Batch b{DenseMatrix(m, d), std::vector<std::uint32_t>(m)};
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t src = order[start + i];
      std::copy_n(ds.inputs.data() + src * d, d, b.inputs.data() + i * d);
      b.labels[i] = ds.labels[src];
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace amuse
