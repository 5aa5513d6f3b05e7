#pragma once

// Task sources: 2-D synthetic distributions, IDX image files, class splits
// and fuzzy-boundary class exchange.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ltgan/rng.hpp"
#include "ltgan/tensor.hpp"

namespace ltgan {

// ---------------------------------------------------------------------------
// Synthetic 2-D (or d-D) distributions

struct GaussianMixture {
  std::vector<std::vector<double>> means;
  std::vector<Tensor> covs;  // d x d each
  std::vector<double> weights;
};

struct Ring {
  double radius = 1.0;
  double noise = 0.0;
};

/// Uniform over the "even" cells of a cells x cells board on [-extent, extent]^2.
struct Checkerboard {
  int cells = 4;
  double extent = 2.0;
};

using SyntheticKind = std::variant<GaussianMixture, Ring, Checkerboard>;

class SyntheticTask {
 public:
  explicit SyntheticTask(SyntheticKind kind) : kind_(std::move(kind)) { validate(); }

  const SyntheticKind& kind() const noexcept { return kind_; }

  std::size_t dim() const {
    if (const auto* gm = std::get_if<GaussianMixture>(&kind_)) return gm->means.front().size();
    return 2;
  }

  Tensor sample(std::size_t n, Rng& rng) const {
    Tensor out = Tensor::matrix(n, dim());
    if (const auto* gm = std::get_if<GaussianMixture>(&kind_)) {
      const std::size_t d = dim();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = pick_component(rng);
        Eigen::VectorXd g(static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j) g(static_cast<Eigen::Index>(j)) = rng.normal();
        const Eigen::VectorXd x = chol_[c] * g;
        for (std::size_t j = 0; j < d; ++j) out(i, j) = gm->means[c][j] + x(static_cast<Eigen::Index>(j));
      }
    } else if (const auto* ring = std::get_if<Ring>(&kind_)) {
      for (std::size_t i = 0; i < n; ++i) {
        const double theta = 2.0 * std::numbers::pi * rng.uniform();
        const double r = ring->radius + ring->noise * rng.normal();
        out(i, 0) = r * std::cos(theta);
        out(i, 1) = r * std::sin(theta);
      }
    } else {
      const auto& cb = std::get<Checkerboard>(kind_);
      const double cell = 2.0 * cb.extent / cb.cells;
      const std::size_t even_cells = static_cast<std::size_t>(cb.cells * cb.cells + 1) / 2;
      for (std::size_t i = 0; i < n; ++i) {
        // k-th even cell in row-major order
        const std::size_t k = rng.below(even_cells);
        std::size_t seen = 0;
        int ci = 0, cj = 0;
        for (int a = 0; a < cb.cells; ++a) {
          for (int b = 0; b < cb.cells; ++b) {
            if ((a + b) % 2 != 0) continue;
            if (seen++ == k) {
              ci = a;
              cj = b;
            }
          }
        }
        out(i, 0) = -cb.extent + (cj + rng.uniform()) * cell;
        out(i, 1) = -cb.extent + (ci + rng.uniform()) * cell;
      }
    }
    return out;
  }

  /// Closed-form density; only defined for Gaussian mixtures.
  double density(std::span<const double> x) const {
    const auto* gm = std::get_if<GaussianMixture>(&kind_);
    if (!gm) throw std::logic_error("density: only available for Gaussian mixtures");
    const auto d = static_cast<Eigen::Index>(dim());
    double p = 0;
    for (std::size_t c = 0; c < gm->weights.size(); ++c) {
      Eigen::VectorXd diff(d);
      for (Eigen::Index j = 0; j < d; ++j) diff(j) = x[static_cast<std::size_t>(j)] - gm->means[c][static_cast<std::size_t>(j)];
      const Eigen::VectorXd sol = chol_[c].triangularView<Eigen::Lower>().solve(diff);
      const double log_det = 2.0 * chol_[c].diagonal().array().log().sum();
      p += gm->weights[c] *
           std::exp(-0.5 * sol.squaredNorm() - 0.5 * log_det - 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
    }
    return p;
  }

 private:
  void validate() {
    if (auto* gm = std::get_if<GaussianMixture>(&kind_)) {
      if (gm->means.empty()) throw std::invalid_argument("gaussian mixture: no components");
      if (gm->means.size() != gm->covs.size() || gm->means.size() != gm->weights.size()) {
        throw std::invalid_argument("gaussian mixture: means, covs and weights must have equal counts");
      }
      const std::size_t d = gm->means.front().size();
      if (d == 0) throw std::invalid_argument("gaussian mixture: zero-dimensional mean");
      double total = 0;
      for (std::size_t c = 0; c < gm->means.size(); ++c) {
        if (gm->means[c].size() != d) throw std::invalid_argument("gaussian mixture: ragged means");
        if (gm->covs[c].shape() != Shape{d, d}) throw ShapeError("gaussian mixture: covariance " + std::to_string(c) + " is " + shape_string(gm->covs[c].shape()));
        if (!(gm->weights[c] >= 0)) throw std::invalid_argument("gaussian mixture: negative weight");
        total += gm->weights[c];
        Eigen::MatrixXd cov(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = gm->covs[c](i, j);
        if (!cov.isApprox(cov.transpose(), 1e-12)) throw std::invalid_argument("gaussian mixture: covariance " + std::to_string(c) + " not symmetric");
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) throw std::invalid_argument("gaussian mixture: covariance " + std::to_string(c) + " not positive-definite");
        chol_.push_back(llt.matrixL());
      }
      if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("gaussian mixture: weights sum to " + std::to_string(total));
    } else if (const auto* ring = std::get_if<Ring>(&kind_)) {
      if (!(ring->radius > 0) || !(ring->noise >= 0)) throw std::invalid_argument("ring: radius must be > 0 and noise >= 0");
    } else {
      const auto& cb = std::get<Checkerboard>(kind_);
      if (cb.cells < 1 || !(cb.extent > 0)) throw std::invalid_argument("checkerboard: cells >= 1 and extent > 0 required");
    }
  }

  std::size_t pick_component(Rng& rng) const {
    const auto& w = std::get<GaussianMixture>(kind_).weights;
    double r = rng.uniform(), acc = 0;
    for (std::size_t c = 0; c < w.size(); ++c) {
      acc += w[c];
      if (r < acc) return c;
    }
    return w.size() - 1;
  }

  SyntheticKind kind_;
  std::vector<Eigen::MatrixXd> chol_;
};

/// n rows drawn from a fresh stream seeded with `seed`.
inline Tensor sample_task(const SyntheticTask& task, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_task: n must be >= 1");
  Rng rng(seed);
  return task.sample(n, rng);
}

inline Tensor isotropic_cov(std::size_t d, double variance) {
  Tensor c = Tensor::matrix(d, d);
  for (std::size_t i = 0; i < d; ++i) c(i, i) = variance;
  return c;
}

// ---------------------------------------------------------------------------
// Labelled datasets

/// Rows of `x` are samples; `labels` is empty for unlabelled data.
struct Dataset {
  std::string name;
  Tensor x;
  std::vector<int> labels;
  std::size_t image_rows = 0;  // 0 for non-image data
  std::size_t image_cols = 0;

  std::size_t size() const { return x.rank() == 2 ? x.rows() : 0; }
  std::size_t dim() const { return x.cols(); }
  bool is_image() const { return image_rows > 0; }
};

inline Dataset subset(const Dataset& d, std::span<const std::size_t> idx, std::string name) {
  Dataset out{std::move(name), gather_rows(d.x, idx), {}, d.image_rows, d.image_cols};
  if (!d.labels.empty()) {
    for (std::size_t i : idx) out.labels.push_back(d.labels[i]);
  }
  return out;
}

/// Deterministic shuffled split: the first `train_fraction` of a permutation trains.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& d, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
  std::span<const std::size_t> all(idx);
  return {subset(d, all.first(n_train), d.name + "/train"), subset(d, all.subspan(n_train), d.name + "/test")};
}

// ---------------------------------------------------------------------------
// IDX files

enum class IdxErrorKind { open_failed, wrong_magic, truncated, count_mismatch };

class IdxError : public std::runtime_error {
 public:
  IdxError(IdxErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  IdxErrorKind kind() const noexcept { return kind_; }

 private:
  IdxErrorKind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxErrorKind::open_failed, "idx: cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) throw IdxError(IdxErrorKind::truncated, "idx: '" + path + "' truncated in header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) | b[off + 3];
}

}  // namespace detail

/// Reads an idx3 image file and idx1 label file; pixels scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);

  const std::uint32_t img_magic = detail::read_be32(img, 0, images_path);
  if (img_magic != kIdxImageMagic) {
    throw IdxError(IdxErrorKind::wrong_magic, "idx: '" + images_path + "' has magic " + std::to_string(img_magic) + ", expected 2051");
  }
  const std::uint32_t lab_magic = detail::read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelMagic) {
    throw IdxError(IdxErrorKind::wrong_magic, "idx: '" + labels_path + "' has magic " + std::to_string(lab_magic) + ", expected 2049");
  }
  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t n_labels = detail::read_be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw IdxError(IdxErrorKind::count_mismatch, "idx: " + std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
  }
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + n * pixels) {
    throw IdxError(IdxErrorKind::truncated, "idx: '" + images_path + "' holds " + std::to_string(img.size() - 16) +
                                                " pixel bytes, header declares " + std::to_string(n * pixels));
  }
  if (lab.size() < 8 + n) {
    throw IdxError(IdxErrorKind::truncated, "idx: '" + labels_path + "' holds " + std::to_string(lab.size() - 8) +
                                                " labels, header declares " + std::to_string(n));
  }

  Dataset d;
  d.name = images_path;
  d.image_rows = rows;
  d.image_cols = cols;
  d.x = Tensor::matrix(n, pixels);
  for (std::size_t i = 0; i < n * pixels; ++i) d.x[i] = static_cast<double>(img[16 + i]) / 255.0;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = lab[8 + i];
  return d;
}

/// Writes the pair of files load_idx() reads. Pixels are rounded from [0,1] to bytes.
inline void write_idx(const std::string& images_path, const std::string& labels_path, const Dataset& d) {
  auto be32 = [](std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  std::ofstream img(images_path, std::ios::binary), lab(labels_path, std::ios::binary);
  if (!img || !lab) throw IdxError(IdxErrorKind::open_failed, "idx: cannot write '" + images_path + "'");
  be32(img, kIdxImageMagic);
  be32(img, static_cast<std::uint32_t>(d.size()));
  be32(img, static_cast<std::uint32_t>(d.image_rows));
  be32(img, static_cast<std::uint32_t>(d.image_cols));
  for (double v : d.x.data()) img.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  be32(lab, kIdxLabelMagic);
  be32(lab, static_cast<std::uint32_t>(d.size()));
  for (int l : d.labels) lab.put(static_cast<char>(l));
}

/// Area-weighted box downsampling; output pixel (i, j) averages the source
/// region it covers, with fractional weights on partially covered pixels.
inline Dataset downsample(const Dataset& d, std::size_t out_rows, std::size_t out_cols) {
  if (!d.is_image()) throw std::invalid_argument("downsample: dataset has no image geometry");
  if (out_rows == 0 || out_cols == 0 || out_rows > d.image_rows || out_cols > d.image_cols) {
    throw std::invalid_argument("downsample: target must be non-empty and no larger than the source");
  }
  // weights[o][s] = overlap of source cell s with output cell o, in source units
  auto overlaps = [](std::size_t src, std::size_t dst) {
    std::vector<std::vector<double>> w(dst, std::vector<double>(src, 0.0));
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (std::size_t o = 0; o < dst; ++o) {
      const double lo = o * scale, hi = (o + 1) * scale;
      for (std::size_t s = 0; s < src; ++s) {
        const double ov = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
        if (ov > 0) w[o][s] = ov / scale;
      }
    }
    return w;
  };
  const auto wr = overlaps(d.image_rows, out_rows);
  const auto wc = overlaps(d.image_cols, out_cols);
  Dataset out{d.name, Tensor::matrix(d.size(), out_rows * out_cols), d.labels, out_rows, out_cols};
  for (std::size_t n = 0; n < d.size(); ++n) {
    const auto src = d.x.row(n);
    auto dst = out.x.row(n);
    for (std::size_t i = 0; i < out_rows; ++i)
      for (std::size_t j = 0; j < out_cols; ++j) {
        double acc = 0;
        for (std::size_t r = 0; r < d.image_rows; ++r) {
          if (wr[i][r] == 0) continue;
          for (std::size_t c = 0; c < d.image_cols; ++c) acc += wr[i][r] * wc[j][c] * src[r * d.image_cols + c];
        }
        dst[i * out_cols + j] = acc;
      }
  }
  return out;
}

enum class ImageTransform { none, invert, flip_horizontal, transpose };

inline ImageTransform parse_transform(const std::string& s) {
  if (s == "none") return ImageTransform::none;
  if (s == "invert") return ImageTransform::invert;
  if (s == "flip_horizontal") return ImageTransform::flip_horizontal;
  if (s == "transpose") return ImageTransform::transpose;
  throw std::invalid_argument("unknown image transform '" + s + "'");
}

/// Pixel-domain shift used to build distinct image "databases" from one source.
inline Dataset transform_images(const Dataset& d, ImageTransform t) {
  if (t == ImageTransform::none) return d;
  if (!d.is_image()) throw std::invalid_argument("transform_images: dataset has no image geometry");
  Dataset out = d;
  const std::size_t R = d.image_rows, C = d.image_cols;
  if (t == ImageTransform::transpose && R != C) throw std::invalid_argument("transform_images: transpose needs square images");
  for (std::size_t n = 0; n < d.size(); ++n) {
    const auto src = d.x.row(n);
    auto dst = out.x.row(n);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        switch (t) {
          case ImageTransform::invert: dst[r * C + c] = 1.0 - src[r * C + c]; break;
          case ImageTransform::flip_horizontal: dst[r * C + c] = src[r * C + (C - 1 - c)]; break;
          case ImageTransform::transpose: dst[r * C + c] = src[c * C + r]; break;
          case ImageTransform::none: break;
        }
      }
  }
  return out;
}

inline std::vector<std::size_t> rows_with_label(const Dataset& d, int label) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (d.labels[i] == label) idx.push_back(i);
  }
  return idx;
}

/// Keeps only rows whose label is in `classes`.
inline Dataset filter_classes(const Dataset& d, std::span<const int> classes) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (std::find(classes.begin(), classes.end(), d.labels[i]) != classes.end()) idx.push_back(i);
  }
  return subset(d, idx, d.name);
}

/// Ten one-class datasets; a partition of `d`.
inline std::vector<Dataset> split_by_class(const Dataset& d) {
  if (d.labels.size() != d.size()) throw std::invalid_argument("split_by_class: dataset is unlabelled");
  for (int l : d.labels) {
    if (l < 0 || l > 9) throw std::invalid_argument("split_by_class: unseen label " + std::to_string(l));
  }
  std::vector<Dataset> out;
  for (int c = 0; c < 10; ++c) out.push_back(subset(d, rows_with_label(d, c), d.name + "/class" + std::to_string(c)));
  return out;
}

struct FuzzyPair {
  Dataset a;
  Dataset b;
  int swapped_class = -1;
};

/// Exchanges class-c rows between two datasets in place of each other: the
/// m-th class-c row of `a` trades places with the m-th class-c row of `b`,
/// for m below the smaller class count. Sizes and all other rows are kept,
/// and applying it twice restores both inputs.
inline FuzzyPair make_fuzzy(const Dataset& a, const Dataset& b, int class_id) {
  if (a.dim() != b.dim()) throw ShapeError("make_fuzzy: datasets differ in width");
  const auto ia = rows_with_label(a, class_id);
  const auto ib = rows_with_label(b, class_id);
  if (ia.empty() || ib.empty()) {
    throw std::invalid_argument("make_fuzzy: class " + std::to_string(class_id) + " absent in " + (ia.empty() ? a.name : b.name));
  }
  FuzzyPair out{a, b, class_id};
  const std::size_t m = std::min(ia.size(), ib.size());
  for (std::size_t k = 0; k < m; ++k) {
    auto ra = out.a.x.row(ia[k]);
    auto rb = out.b.x.row(ib[k]);
    std::swap_ranges(ra.begin(), ra.end(), rb.begin());
  }
  return out;
}

inline std::map<int, std::size_t> class_counts(const Dataset& d) {
  std::map<int, std::size_t> counts;
  for (int l : d.labels) ++counts[l];
  return counts;
}

}  // namespace ltgan
