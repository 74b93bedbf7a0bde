#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "sgqn/background.hpp"
#include "sgqn/config.hpp"
#include "sgqn/rng.hpp"
#include "sgqn/tensor.hpp"

namespace sgqn::aug {

// Blend an observation with a distractor frame: out = (1-alpha)*obs +
// alpha*distractor, clamped to [0,1]. A 3-channel distractor is tiled
// across the frames of a stacked observation.
template <typename T>
Tensor<T> overlay(const Tensor<T>& obs, const Tensor<T>& distractor,
                  double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("overlay: alpha must lie in [0,1]");
  if (obs.ndim() != 3)
    throw std::invalid_argument("overlay: obs must be [C,H,W], got " +
                                shape_str(obs.shape));
  if (distractor.ndim() != 3)
    throw std::invalid_argument("overlay: distractor must be [C,H,W], got " +
                                shape_str(distractor.shape));
  const int c = obs.dim(0), h = obs.dim(1), w = obs.dim(2);
  const int dc = distractor.dim(0);
  if (distractor.dim(1) != h || distractor.dim(2) != w ||
      (dc != c && !(dc == 3 && c % 3 == 0)))
    throw std::invalid_argument(
        "overlay: distractor shape " + shape_str(distractor.shape) +
        " is not broadcastable to obs shape " + shape_str(obs.shape));

  Tensor<T> out(obs.shape);
  const int plane = h * w;
  for (int ch = 0; ch < c; ++ch) {
    const T* o = obs.data.data() + size_t(ch) * plane;
    const T* d = distractor.data.data() + size_t(ch % dc) * plane;
    T* dst = out.data.data() + size_t(ch) * plane;
    for (int i = 0; i < plane; ++i) {
      double v = (1.0 - alpha) * double(o[i]) + alpha * double(d[i]);
      dst[i] = T(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

// Depthwise 3x3 convolution with replicate padding, every channel using the
// same kernel, followed by a min-max renormalization of the whole result
// into [0,1]. A constant post-convolution image maps to 0.5.
template <typename T>
Tensor<T> conv_with_kernel(const Tensor<T>& obs, const double (&kernel)[9]) {
  if (obs.ndim() != 3)
    throw std::invalid_argument("conv_with_kernel: obs must be [C,H,W], got " +
                                shape_str(obs.shape));
  const int c = obs.dim(0), h = obs.dim(1), w = obs.dim(2);
  Tensor<double> raw({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    const T* src = obs.data.data() + size_t(ch) * h * w;
    double* dst = raw.data.data() + size_t(ch) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ky = -1; ky <= 1; ++ky) {
          const int yy = std::clamp(y + ky, 0, h - 1);
          for (int kx = -1; kx <= 1; ++kx) {
            const int xx = std::clamp(x + kx, 0, w - 1);
            acc += kernel[(ky + 1) * 3 + (kx + 1)] * double(src[yy * w + xx]);
          }
        }
        dst[y * w + x] = acc;
      }
    }
  }
  const double mn = raw.min();
  const double mx = raw.max();
  Tensor<T> out(obs.shape);
  if (mx - mn < 1e-12) {
    out.fill(T(0.5));
    return out;
  }
  const double inv = 1.0 / (mx - mn);
  for (size_t i = 0; i < raw.data.size(); ++i)
    out.data[i] = T((raw.data[i] - mn) * inv);
  return out;
}

// One freshly sampled N(0,1) 3x3 kernel per call, shared across all frames
// of the stack. Consumes exactly 9 normal draws.
template <typename T>
Tensor<T> random_conv(const Tensor<T>& obs, Rng& rng) {
  double kernel[9];
  for (double& k : kernel) k = rng.normal();
  return conv_with_kernel(obs, kernel);
}

// Deterministic core of random_shift: replicate-pad by `pad`, then crop the
// original window starting at (oy, ox) of the padded image. Offsets lie in
// [0, 2*pad]; (pad, pad) is the identity.
template <typename T>
Tensor<T> shift_crop(const Tensor<T>& obs, int pad, int oy, int ox) {
  if (pad < 0) throw std::invalid_argument("shift_crop: pad must be >= 0");
  if (oy < 0 || oy > 2 * pad || ox < 0 || ox > 2 * pad)
    throw std::invalid_argument("shift_crop: offsets must lie in [0, 2*pad]");
  if (obs.ndim() != 3)
    throw std::invalid_argument("shift_crop: obs must be [C,H,W], got " +
                                shape_str(obs.shape));
  const int c = obs.dim(0), h = obs.dim(1), w = obs.dim(2);
  Tensor<T> out(obs.shape);
  for (int ch = 0; ch < c; ++ch) {
    const T* src = obs.data.data() + size_t(ch) * h * w;
    T* dst = out.data.data() + size_t(ch) * h * w;
    for (int y = 0; y < h; ++y) {
      const int sy = std::clamp(y + oy - pad, 0, h - 1);
      for (int x = 0; x < w; ++x) {
        const int sx = std::clamp(x + ox - pad, 0, w - 1);
        dst[y * w + x] = src[sy * w + sx];
      }
    }
  }
  return out;
}

// Replicate-pad by `pad` and crop a uniformly random window of the original
// size; the same offset applies to every channel. pad = 0 is the identity.
template <typename T>
Tensor<T> random_shift(const Tensor<T>& obs, Rng& rng, int pad = 4) {
  if (pad < 0) throw std::invalid_argument("random_shift: pad must be >= 0");
  if (pad == 0) return obs;
  const int oy = int(rng.uniform_int(0, 2 * pad));
  const int ox = int(rng.uniform_int(0, 2 * pad));
  return shift_crop(obs, pad, oy, ox);
}

// Dispatch on the configured augmentation kind. Overlay distractors come
// from the overlay seed family (or the overlay half of a PNG corpus).
template <typename T>
Tensor<T> apply_augmentation(const ExperimentConfig& cfg, const Tensor<T>& obs,
                             Rng& rng, const BackgroundLibrary* lib = nullptr) {
  switch (cfg.augmentation) {
    case Augmentation::none:
      return obs;
    case Augmentation::overlay: {
      const Tensor<float> frame =
          overlay_distractor(rng.next_u64(), obs.dim(2), lib);
      return overlay(obs, frame.template cast<T>(), cfg.overlay_alpha);
    }
    case Augmentation::random_conv:
      return random_conv(obs, rng);
    case Augmentation::random_shift:
      return random_shift(obs, rng, 4);
  }
  throw std::invalid_argument("apply_augmentation: unknown augmentation kind");
}

// Per-sample augmentation of a batch [B,C,H,W]; each sample draws fresh
// augmentation parameters from the stream.
template <typename T>
Tensor<T> apply_augmentation_batch(const ExperimentConfig& cfg,
                                   const Tensor<T>& batch, Rng& rng,
                                   const BackgroundLibrary* lib = nullptr) {
  if (batch.ndim() != 4)
    throw std::invalid_argument(
        "apply_augmentation_batch: batch must be [B,C,H,W], got " +
        shape_str(batch.shape));
  const int b = batch.dim(0), c = batch.dim(1), h = batch.dim(2),
            w = batch.dim(3);
  Tensor<T> out(batch.shape);
  Tensor<T> sample({c, h, w});
  const size_t stride = size_t(c) * h * w;
  for (int i = 0; i < b; ++i) {
    std::copy_n(batch.data.data() + size_t(i) * stride, stride,
                sample.data.data());
    Tensor<T> t = apply_augmentation(cfg, sample, rng, lib);
    std::copy_n(t.data.data(), stride, out.data.data() + size_t(i) * stride);
  }
  return out;
}

}  // namespace sgqn::aug
