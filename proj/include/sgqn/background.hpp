#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgqn/image_io.hpp"
#include "sgqn/rng.hpp"
#include "sgqn/tensor.hpp"

namespace sgqn {

enum class SuiteKind { train_plain, test_easy, test_hard };

inline std::string to_string(SuiteKind k) {
  switch (k) {
    case SuiteKind::train_plain: return "train_plain";
    case SuiteKind::test_easy: return "test_easy";
    case SuiteKind::test_hard: return "test_hard";
  }
  return "?";
}

inline SuiteKind suite_from_string(const std::string& s) {
  if (s == "train_plain") return SuiteKind::train_plain;
  if (s == "test_easy") return SuiteKind::test_easy;
  if (s == "test_hard") return SuiteKind::test_hard;
  throw std::invalid_argument("unknown background suite '" + s +
                              "' (expected train_plain, test_easy, or test_hard)");
}

// Seed-set tags. Test backgrounds and augmentation overlays draw from
// disjoint procedural families so the evaluation backgrounds are genuinely
// held out from everything seen in training.
inline constexpr uint64_t kTestBackgroundSet = 0xB16B00B5CAFED00DULL;
inline constexpr uint64_t kOverlaySet = 0x0DDBA11FEEDC0DEULL;

// Optional user-supplied distractor corpus. PNGs are split alternately into
// test backgrounds and overlay sources so the two stay disjoint.
struct BackgroundLibrary {
  std::vector<Tensor<float>> test_images;
  std::vector<Tensor<float>> overlay_images;

  bool empty() const { return test_images.empty() && overlay_images.empty(); }

  static BackgroundLibrary load_dir(const std::string& dir, int size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
      throw std::runtime_error("background dir '" + dir + "' is not a directory");
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png")
        paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty())
      throw std::runtime_error("background dir '" + dir + "' contains no .png files");
    BackgroundLibrary lib;
    for (size_t i = 0; i < paths.size(); ++i) {
      Tensor<float> img = resize_bilinear(read_png_rgb(paths[i]), size, size);
      if (i % 2 == 0) lib.test_images.push_back(std::move(img));
      else lib.overlay_images.push_back(std::move(img));
    }
    if (lib.overlay_images.empty()) lib.overlay_images.push_back(lib.test_images.back());
    return lib;
  }
};

namespace bg_detail {

constexpr int kLatticeMax = 17;

struct NoiseOctave {
  int res;
  float weight;
  float dx, dy;  // drift per frame, lattice units
  float values[kLatticeMax * kLatticeMax];

  float sample(float u, float v) const {
    // wrapped bilinear lookup with smoothstep easing
    u -= std::floor(u / res) * res;
    v -= std::floor(v / res) * res;
    const int i0 = int(u) % res, j0 = int(v) % res;
    const int i1 = (i0 + 1) % res, j1 = (j0 + 1) % res;
    float fu = u - std::floor(u), fv = v - std::floor(v);
    fu = fu * fu * (3.f - 2.f * fu);
    fv = fv * fv * (3.f - 2.f * fv);
    const float a = values[j0 * kLatticeMax + i0], b = values[j0 * kLatticeMax + i1];
    const float c = values[j1 * kLatticeMax + i0], d = values[j1 * kLatticeMax + i1];
    return (1 - fv) * ((1 - fu) * a + fu * b) + fv * ((1 - fu) * c + fu * d);
  }
};

struct Polygon {
  float cx, cy, vx, vy;
  int n;
  float px[6], py[6];  // vertex offsets, CCW
  float color[3];
  float alpha;
};

}  // namespace bg_detail

// Animated full-frame backdrop for one episode. train_plain is a fixed
// solid; the test suites animate multi-scale value noise with drifting
// convex polygons (or pan across a user-supplied image).
class Backdrop {
 public:
  Backdrop(SuiteKind kind, uint64_t episode_seed, int size,
           const BackgroundLibrary* lib = nullptr)
      : kind_(kind), size_(size) {
    if (size <= 0) throw std::invalid_argument("Backdrop: size must be positive");
    if (kind == SuiteKind::train_plain) return;
    const uint64_t gen_seed = hash_seed(episode_seed, kTestBackgroundSet);
    if (lib && !lib->test_images.empty()) {
      Rng rng(gen_seed);
      image_ = &lib->test_images[size_t(rng.uniform_int(0, int(lib->test_images.size()) - 1))];
      pan_x_ = float(rng.uniform(-0.3, 0.3));
      pan_y_ = float(rng.uniform(-0.3, 0.3));
      return;
    }
    init_procedural(gen_seed);
  }

  SuiteKind kind() const { return kind_; }

  // Writes the backdrop for raw-frame index `phase` into frame ([3,S,S]).
  void fill(int phase, Tensor<float>& frame) const {
    if (frame.ndim() != 3 || frame.dim(0) != 3 || frame.dim(1) != size_ || frame.dim(2) != size_)
      throw std::invalid_argument("Backdrop::fill: frame must be [3," +
                                  std::to_string(size_) + "," + std::to_string(size_) + "]");
    if (kind_ == SuiteKind::train_plain) {
      const float solid[3] = {0.16f, 0.18f, 0.22f};
      for (int c = 0; c < 3; ++c)
        std::fill_n(frame.ptr() + int64_t(c) * size_ * size_, size_ * size_, solid[c]);
      return;
    }
    if (image_) {
      fill_from_image(phase, frame);
      return;
    }
    fill_procedural(phase, frame);
  }

 private:
  void init_procedural(uint64_t gen_seed) {
    using namespace bg_detail;
    Rng rng(gen_seed);
    const int resolutions[3] = {4, 8, 16};
    const float weights[3] = {0.5f, 0.3f, 0.2f};
    for (int o = 0; o < 3; ++o) {
      NoiseOctave& oc = octaves_[o];
      oc.res = resolutions[o];
      oc.weight = weights[o];
      oc.dx = float(rng.uniform(-0.06, 0.06)) * oc.res;
      oc.dy = float(rng.uniform(-0.06, 0.06)) * oc.res;
      for (int j = 0; j < oc.res; ++j)
        for (int i = 0; i < oc.res; ++i)
          oc.values[j * kLatticeMax + i] = float(rng.uniform());
    }
    for (int c = 0; c < 3; ++c) {
      base_[c] = float(rng.uniform(0.25, 0.75));
      amp_[c] = float(rng.uniform(-0.35, 0.35));
    }
    const int npoly = rng.uniform_int(3, 5);
    for (int p = 0; p < npoly; ++p) {
      Polygon poly;
      poly.cx = float(rng.uniform());
      poly.cy = float(rng.uniform());
      poly.vx = float(rng.uniform(-0.008, 0.008));
      poly.vy = float(rng.uniform(-0.008, 0.008));
      poly.n = rng.uniform_int(3, 5);
      const float radius = float(rng.uniform(0.08, 0.22));
      for (int k = 0; k < poly.n; ++k) {
        const float ang = (float(k) + float(rng.uniform(0.1, 0.9))) * 2.f * 3.14159265f /
                          float(poly.n);
        const float r = radius * float(rng.uniform(0.6, 1.0));
        poly.px[k] = r * std::cos(ang);
        poly.py[k] = r * std::sin(ang);
      }
      for (int c = 0; c < 3; ++c) poly.color[c] = float(rng.uniform());
      poly.alpha = float(rng.uniform(0.55, 0.9));
      polys_.push_back(poly);
    }
  }

  void fill_procedural(int phase, Tensor<float>& frame) const {
    using namespace bg_detail;
    const float t = float(phase);
    float* r = frame.ptr();
    float* g = frame.ptr() + int64_t(size_) * size_;
    float* b = frame.ptr() + 2 * int64_t(size_) * size_;
    for (int y = 0; y < size_; ++y) {
      for (int x = 0; x < size_; ++x) {
        float n = 0.f;
        for (const auto& oc : octaves_) {
          const float u = (float(x) + 0.5f) / size_ * oc.res + t * oc.dx;
          const float v = (float(y) + 0.5f) / size_ * oc.res + t * oc.dy;
          n += oc.weight * oc.sample(u, v);
        }
        const float s = n * 2.f - 1.f;
        const int idx = y * size_ + x;
        r[idx] = std::clamp(base_[0] + amp_[0] * s, 0.f, 1.f);
        g[idx] = std::clamp(base_[1] + amp_[1] * s, 0.f, 1.f);
        b[idx] = std::clamp(base_[2] + amp_[2] * s, 0.f, 1.f);
      }
    }
    for (const auto& poly : polys_) draw_polygon(poly, t, frame);
  }

  void draw_polygon(const bg_detail::Polygon& poly, float t, Tensor<float>& frame) const {
    float cx = poly.cx + poly.vx * t;
    float cy = poly.cy + poly.vy * t;
    cx -= std::floor(cx);
    cy -= std::floor(cy);
    // wrapped copies so shapes glide across frame borders seamlessly
    for (int oy = -1; oy <= 1; ++oy)
      for (int ox = -1; ox <= 1; ++ox) draw_polygon_at(poly, cx + ox, cy + oy, frame);
  }

  void draw_polygon_at(const bg_detail::Polygon& poly, float cx, float cy,
                       Tensor<float>& frame) const {
    float minx = 1e9f, maxx = -1e9f, miny = 1e9f, maxy = -1e9f;
    for (int k = 0; k < poly.n; ++k) {
      minx = std::min(minx, cx + poly.px[k]);
      maxx = std::max(maxx, cx + poly.px[k]);
      miny = std::min(miny, cy + poly.py[k]);
      maxy = std::max(maxy, cy + poly.py[k]);
    }
    const int x0 = std::max(0, int(std::floor(minx * size_)));
    const int x1 = std::min(size_ - 1, int(std::ceil(maxx * size_)));
    const int y0 = std::max(0, int(std::floor(miny * size_)));
    const int y1 = std::min(size_ - 1, int(std::ceil(maxy * size_)));
    if (x0 > x1 || y0 > y1) return;
    for (int y = y0; y <= y1; ++y) {
      const float fy = (y + 0.5f) / size_;
      for (int x = x0; x <= x1; ++x) {
        const float fx = (x + 0.5f) / size_;
        bool inside = true;
        for (int k = 0; k < poly.n && inside; ++k) {
          const int k2 = (k + 1) % poly.n;
          const float ex = poly.px[k2] - poly.px[k];
          const float ey = poly.py[k2] - poly.py[k];
          const float qx = fx - (cx + poly.px[k]);
          const float qy = fy - (cy + poly.py[k]);
          if (ex * qy - ey * qx < 0.f) inside = false;
        }
        if (!inside) continue;
        const int idx = y * size_ + x;
        for (int c = 0; c < 3; ++c) {
          float* ch = frame.ptr() + int64_t(c) * size_ * size_;
          ch[idx] = (1.f - poly.alpha) * ch[idx] + poly.alpha * poly.color[c];
        }
      }
    }
  }

  void fill_from_image(int phase, Tensor<float>& frame) const {
    // slow pan with wraparound over the source image
    const int H = image_->dim(1), W = image_->dim(2);
    const float ox = pan_x_ * float(phase);
    const float oy = pan_y_ * float(phase);
    for (int y = 0; y < size_; ++y) {
      int sy = int(std::floor(float(y) + oy)) % H;
      if (sy < 0) sy += H;
      for (int x = 0; x < size_; ++x) {
        int sx = int(std::floor(float(x) + ox)) % W;
        if (sx < 0) sx += W;
        for (int c = 0; c < 3; ++c)
          frame[(int64_t(c) * size_ + y) * size_ + x] = (*image_)[(int64_t(c) * H + sy) * W + sx];
      }
    }
  }

  SuiteKind kind_;
  int size_;
  const Tensor<float>* image_ = nullptr;
  float pan_x_ = 0.f, pan_y_ = 0.f;
  bg_detail::NoiseOctave octaves_[3] = {};
  float base_[3] = {}, amp_[3] = {};
  std::vector<bg_detail::Polygon> polys_;
};

// One static distractor frame for overlay augmentation. Drawn from the
// overlay seed family (procedural) or the overlay half of the PNG corpus,
// never from the test-background family.
inline Tensor<float> overlay_distractor(uint64_t sample_seed, int size,
                                        const BackgroundLibrary* lib = nullptr) {
  if (lib && !lib->overlay_images.empty()) {
    Rng rng(hash_seed(sample_seed, kOverlaySet));
    const auto& img = lib->overlay_images[size_t(
        rng.uniform_int(0, int(lib->overlay_images.size()) - 1))];
    if (img.dim(1) == size && img.dim(2) == size) return img;
    return resize_bilinear(img, size, size);
  }
  // reuse the animated generator at a seed from the overlay family
  Backdrop bd(SuiteKind::test_easy, hash_seed(sample_seed, kOverlaySet), size);
  Tensor<float> frame({3, size, size});
  bd.fill(int(sample_seed % 97), frame);
  return frame;
}

}  // namespace sgqn
