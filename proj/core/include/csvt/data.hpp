#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "csvt/io.hpp"
#include "csvt/random.hpp"
#include "csvt/tensor.hpp"

namespace csvt {

// ------------------------------------------------------------- manifest

// Four nitrogen treatment categories, fixed order.
const std::array<std::string, 4>& label_names();
int label_index(const std::string& name);

struct ManifestRecord {
  std::string path;
  int label = 0;
  int fold = -1;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  static Manifest read(const std::string& path);
  void write(const std::string& path) const;
};

// Relative manifest paths resolve against $CSVT_DATA_DIR when set, otherwise
// against the manifest's own directory.
std::string resolve_data_path(const std::string& manifest_dir, const std::string& rel);
std::string directory_of(const std::string& path);

// Stratified fold assignment; deterministic in (manifest order, k, seed).
Manifest kfold_split(const Manifest& manifest, int k, uint64_t seed);

// ---------------------------------------------------------- image helpers

template <class T>
Tensor<T> crop(const Tensor<T>& img, int y0, int x0, int h, int w) {
  if (img.rank() != 3) throw std::invalid_argument("crop: image must be h x w x c");
  const int ih = img.dim(0), iw = img.dim(1), c = img.dim(2);
  if (y0 < 0 || x0 < 0 || y0 + h > ih || x0 + w > iw) throw std::invalid_argument("crop: window out of bounds");
  Tensor<T> out({h, w, c});
  auto& o = out.values_mut();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int q = 0; q < c; ++q)
        o[(size_t(i) * w + j) * c + q] = img[(size_t(i + y0) * iw + (j + x0)) * c + q];
  return out;
}

template <class T>
Tensor<T> center_crop(const Tensor<T>& img, int size) {
  const int ih = img.dim(0), iw = img.dim(1);
  if (ih < size || iw < size) throw std::invalid_argument("center_crop: image smaller than crop");
  return crop(img, (ih - size) / 2, (iw - size) / 2, size, size);
}

template <class T>
Tensor<T> hflip(const Tensor<T>& img) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Tensor<T> out(img.shape());
  auto& o = out.values_mut();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int q = 0; q < c; ++q) o[(size_t(i) * w + j) * c + q] = img[(size_t(i) * w + (w - 1 - j)) * c + q];
  return out;
}

// Random fully-interior square crops with uniform top-left corners.
template <class T>
std::vector<Tensor<T>> crop_patches(const Tensor<T>& image, int size, int count, Rng& rng) {
  const int h = image.dim(0), w = image.dim(1);
  if (h < size || w < size)
    throw std::invalid_argument("crop_patches: image " + std::to_string(w) + "x" + std::to_string(h) +
                                " smaller than patch size " + std::to_string(size));
  std::vector<Tensor<T>> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    const int y = int(rng.uniform_int(h - size + 1));
    const int x = int(rng.uniform_int(w - size + 1));
    out.push_back(crop(image, y, x, size, size));
  }
  return out;
}

// -------------------------------------------------- label regularization

template <class T>
std::vector<T> label_smooth(const std::vector<T>& onehot, double eps) {
  const size_t k = onehot.size();
  std::vector<T> out(k);
  for (size_t i = 0; i < k; ++i) out[i] = static_cast<T>((1.0 - eps) * onehot[i] + eps / double(k));
  return out;
}

// One lambda ~ Beta(alpha, alpha) per batch, shared between inputs and
// labels; partners drawn as a uniform permutation.
template <class T>
void mixup(std::vector<Tensor<T>>& batch, std::vector<std::vector<T>>& labels, double alpha, Rng& rng) {
  if (batch.size() != labels.size()) throw std::invalid_argument("mixup: batch/label size mismatch");
  if (batch.size() < 2) throw std::invalid_argument("mixup: need at least two samples");
  const double lam = alpha > 0 ? rng.beta(alpha, alpha) : 1.0;
  std::vector<size_t> perm(batch.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[size_t(rng.uniform_int(int64_t(i)))]);

  std::vector<Tensor<T>> mixed(batch.size());
  std::vector<std::vector<T>> mixed_labels(labels.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    const Tensor<T>& a = batch[i];
    const Tensor<T>& b = batch[perm[i]];
    if (a.shape() != b.shape()) throw std::invalid_argument("mixup: inconsistent image shapes");
    Tensor<T> m(a.shape());
    for (size_t q = 0; q < a.numel(); ++q)
      m.values_mut()[q] = static_cast<T>(lam * a[q] + (1.0 - lam) * b[q]);
    mixed[i] = std::move(m);
    std::vector<T> ml(labels[i].size());
    for (size_t q = 0; q < ml.size(); ++q)
      ml[q] = static_cast<T>(lam * labels[i][q] + (1.0 - lam) * labels[perm[i]][q]);
    mixed_labels[i] = std::move(ml);
  }
  batch = std::move(mixed);
  labels = std::move(mixed_labels);
}

// ------------------------------------------------------- synthetic fields

// Procedural canopy stand-in: a hue that walks from olive to green across the
// four treatments, band-limited value noise for texture, and dark stem
// strokes whose count also rises with treatment level.
struct SynthSpec {
  int image_size = 96;
  int samples_per_class = 32;
  std::array<double, 4> hue_means{0.070, 0.100, 0.130, 0.160};
  double hue_std = 0.005;
  double sat_lo = 0.73, sat_hi = 0.77;
  double val_lo = 0.54, val_hi = 0.56;
  std::array<double, 4> stem_density{8, 14, 20, 26};  // strokes per 96x96 area
  double texture_freq = 8.0;
  double texture_amp = 0.08;
  double noise_level = 0.02;
  int folds = 5;
  std::string format = "ppm";

  void validate() const;
  static SynthSpec from_file(const std::string& path);
};

void hsv_to_rgb(double h, double s, double v, double* r, double* g, double* b);

template <class T>
Tensor<T> synth_image(const SynthSpec& spec, int cls, Rng& rng);

// Renders the full set under out_dir, writes out_dir/manifest.csv with
// stratified folds, returns the manifest.
Manifest synth_generate(const SynthSpec& spec, const std::string& out_dir, uint64_t seed);

// ------------------------------------------------------- implementation

namespace detail {

// Multi-octave value noise on a bilinear-interpolated random lattice.
class ValueNoise {
 public:
  ValueNoise(Rng& rng, int cells, int octaves) {
    int c = cells;
    for (int o = 0; o < octaves; ++o) {
      Lattice l;
      l.cells = c;
      l.values.resize(size_t(c + 1) * (c + 1));
      for (auto& v : l.values) v = rng.uniform(-1.0, 1.0);
      lattices_.push_back(std::move(l));
      c *= 2;
    }
  }

  // u, v in [0,1]; output roughly in [-1,1]
  double at(double u, double v) const {
    double acc = 0.0, amp = 1.0, norm = 0.0;
    for (const auto& l : lattices_) {
      acc += amp * l.sample(u, v);
      norm += amp;
      amp *= 0.5;
    }
    return acc / norm;
  }

 private:
  struct Lattice {
    int cells = 0;
    std::vector<double> values;
    double sample(double u, double v) const {
      const double fu = u * cells, fv = v * cells;
      const int x0 = std::min(int(fu), cells - 1), y0 = std::min(int(fv), cells - 1);
      const double du = fu - x0, dv = fv - y0;
      const int stride = cells + 1;
      const double v00 = values[size_t(y0) * stride + x0];
      const double v01 = values[size_t(y0) * stride + x0 + 1];
      const double v10 = values[size_t(y0 + 1) * stride + x0];
      const double v11 = values[size_t(y0 + 1) * stride + x0 + 1];
      const double top = v00 + (v01 - v00) * du;
      const double bot = v10 + (v11 - v10) * du;
      return top + (bot - top) * dv;
    }
  };
  std::vector<Lattice> lattices_;
};

}  // namespace detail

template <class T>
Tensor<T> synth_image(const SynthSpec& spec, int cls, Rng& rng) {
  if (cls < 0 || cls >= 4) throw std::invalid_argument("synth_image: class out of range");
  const int size = spec.image_size;
  const double hue = std::clamp(rng.normal(spec.hue_means[size_t(cls)], spec.hue_std), 0.01, 0.95);
  const double sat = rng.uniform(spec.sat_lo, spec.sat_hi);
  const double val = rng.uniform(spec.val_lo, spec.val_hi);
  detail::ValueNoise noise(rng, std::max(2, int(spec.texture_freq)), 3);

  Tensor<T> img({size, size, 3});
  auto& px = img.values_mut();
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double v = std::clamp(val + spec.texture_amp * noise.at((j + 0.5) / size, (i + 0.5) / size), 0.05, 0.95);
      double r, g, b;
      hsv_to_rgb(hue, sat, v, &r, &g, &b);
      const size_t at = (size_t(i) * size + j) * 3;
      px[at] = T(r);
      px[at + 1] = T(g);
      px[at + 2] = T(b);
    }

  // stems: short dark strokes, count scales with treatment level and area
  const double area_scale = double(size) * size / (96.0 * 96.0);
  const int strokes = int(std::lround(spec.stem_density[size_t(cls)] * area_scale));
  for (int s = 0; s < strokes; ++s) {
    double y = rng.uniform(0, size);
    double x = rng.uniform(0, size);
    const double angle = rng.uniform(0, 2 * 3.14159265358979323846);
    const double dy = std::sin(angle), dx = std::cos(angle);
    const int steps = int(size * rng.uniform(0.15, 0.30));
    double r, g, b;
    hsv_to_rgb(std::clamp(hue + 0.02, 0.0, 1.0), sat, val * 0.55, &r, &g, &b);
    for (int t = 0; t < steps; ++t) {
      const int ii = int(y), jj = int(x);
      if (ii >= 0 && ii < size && jj >= 0 && jj < size) {
        const size_t at = (size_t(ii) * size + jj) * 3;
        px[at] = T(0.35 * px[at] + 0.65 * r);
        px[at + 1] = T(0.35 * px[at + 1] + 0.65 * g);
        px[at + 2] = T(0.35 * px[at + 2] + 0.65 * b);
      }
      y += dy;
      x += dx;
    }
  }

  for (auto& v : px) {
    v += T(rng.uniform(-spec.noise_level, spec.noise_level));
    v = std::clamp(v, T(0), T(1));
  }
  return img;
}

}  // namespace csvt
