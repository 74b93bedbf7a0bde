#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sgqn/autodiff.hpp"
#include "sgqn/networks.hpp"
#include "sgqn/tensor.hpp"

namespace sgqn {

enum class CriticHead { one, two, min_of };

// ---------------------------------------------------------------------------
// Generic cores. These take the Q computation as a callable so the same
// machinery runs against the full agent networks, hand-built toy networks,
// and downsized clones in tests.
// ---------------------------------------------------------------------------

// build(obs_leaf) must return one scalar per sample ([B,1] or [B]); summing
// them before the backward pass yields every sample's own input gradient.
template <typename T, typename BuildQ>
Tensor<T> gradient_map(const Tensor<T>& obs, BuildQ&& build) {
  auto obs_var = ad::leaf(Tensor<T>(obs), true);
  auto q = build(obs_var);
  ad::backward(ad::sum_all(q));
  if (!obs_var->grad_alloc) return Tensor<T>(obs.shape);  // Q ignores obs entirely
  if (!obs_var->grad.all_finite())
    throw std::runtime_error("attribution: non-finite gradient");
  return obs_var->grad;
}

// qeval(occluded_obs) -> scalar. For each patch position the difference
// Q(s) - Q(s with the patch zeroed across all channels) is spread over the
// patch, averaging where patches overlap. An extra clamped position is
// appended per axis when the stride does not land exactly on the border,
// so every pixel is covered; with stride == patch on an aligned image this
// reduces to an exact non-overlapping tiling.
template <typename T, typename QEval>
Tensor<T> occlusion_map_core(const Tensor<T>& obs, int patch, int stride, QEval&& qeval) {
  if (obs.ndim() != 3) throw std::invalid_argument("occlusion_map: expects [C,H,W]");
  const int C = obs.dim(0), H = obs.dim(1), W = obs.dim(2);
  if (patch <= 0 || patch > H || patch > W)
    throw std::invalid_argument("occlusion_map: patch must be in [1, image_size]");
  if (stride <= 0) throw std::invalid_argument("occlusion_map: stride must be positive");

  auto positions = [&](int extent) {
    std::vector<int> ps;
    for (int p = 0; p + patch <= extent; p += stride) ps.push_back(p);
    if (ps.empty() || ps.back() + patch < extent) ps.push_back(extent - patch);
    return ps;
  };
  const std::vector<int> ys = positions(H), xs = positions(W);

  const double base = double(qeval(obs));
  Tensor<double> acc({C, H, W});
  Tensor<double> cnt({C, H, W});
  Tensor<T> occluded(obs);
  for (int y0 : ys)
    for (int x0 : xs) {
      for (int c = 0; c < C; ++c)
        for (int y = y0; y < y0 + patch; ++y)
          for (int x = x0; x < x0 + patch; ++x) occluded[(int64_t(c) * H + y) * W + x] = T(0);
      const double v = base - double(qeval(occluded));
      for (int c = 0; c < C; ++c)
        for (int y = y0; y < y0 + patch; ++y)
          for (int x = x0; x < x0 + patch; ++x) {
            const int64_t i = (int64_t(c) * H + y) * W + x;
            acc[i] += v;
            cnt[i] += 1.0;
            occluded[i] = obs[i];
          }
    }
  Tensor<T> out(obs.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(cnt[i] > 0.0 ? acc[i] / cnt[i] : 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Agent-network front ends
// ---------------------------------------------------------------------------

namespace attr_detail {

template <typename T>
Tensor<T> as_batch4(const Tensor<T>& obs) {
  if (obs.ndim() == 4) return obs;
  if (obs.ndim() == 3) {
    Tensor<T> b;
    b.shape = {1, obs.dim(0), obs.dim(1), obs.dim(2)};
    b.data = obs.data;
    return b;
  }
  throw std::invalid_argument("attribution: obs must be [C,H,W] or [B,C,H,W]");
}

template <typename T>
Tensor<T> as_batch2(const Tensor<T>& action, int batch) {
  if (action.ndim() == 2) {
    if (action.dim(0) != batch) throw std::invalid_argument("attribution: action batch mismatch");
    return action;
  }
  if (action.ndim() == 1 && batch == 1) {
    Tensor<T> b;
    b.shape = {1, action.dim(0)};
    b.data = action.data;
    return b;
  }
  throw std::invalid_argument("attribution: action must be [d] or [B,d]");
}

template <typename T>
Tensor<T> net_gradient(const Networks<T>& nets, const Tensor<T>& obs, const Tensor<T>& action,
                       CriticHead head, bool guided) {
  const Tensor<T> obs4 = as_batch4(obs);
  const Tensor<T> act2 = as_batch2(action, obs4.dim(0));
  auto P = nets.wrap(nets.no_grads());
  Tensor<T> g = gradient_map(obs4, [&](const ad::Var<T>& o) {
    auto feats = nets.encode(P, o, false, guided);
    auto a = ad::constant(Tensor<T>(act2));
    if (head == CriticHead::one) return nets.q_head(P, feats, a, 1, false, guided);
    if (head == CriticHead::two) return nets.q_head(P, feats, a, 2, false, guided);
    return ad::min_elem(nets.q_head(P, feats, a, 1, false, guided),
                        nets.q_head(P, feats, a, 2, false, guided));
  });
  g.shape = obs.shape;  // restore [C,H,W] if the caller passed a single obs
  return g;
}

}  // namespace attr_detail

// Exact reverse-mode gradient of the selected critic scalar w.r.t. the
// observation. Parameters are untouched.
template <typename T>
Tensor<T> vanilla_grad(const Networks<T>& nets, const Tensor<T>& obs, const Tensor<T>& action,
                       CriticHead head = CriticHead::one) {
  return attr_detail::net_gradient(nets, obs, action, head, false);
}

// Same backward pass except every ReLU zeroes its backward signal where
// the forward pre-activation was <= 0 or the incoming signal is negative.
template <typename T>
Tensor<T> guided_backprop(const Networks<T>& nets, const Tensor<T>& obs, const Tensor<T>& action,
                          CriticHead head = CriticHead::one) {
  return attr_detail::net_gradient(nets, obs, action, head, true);
}

// Evaluation-only occlusion oracle over the agent critic.
template <typename T>
Tensor<T> occlusion_map(const Networks<T>& nets, const Tensor<T>& obs, const Tensor<T>& action,
                        int patch, int stride, CriticHead head = CriticHead::one) {
  const Tensor<T> act2 = attr_detail::as_batch2(action, 1);
  return occlusion_map_core(obs, patch, stride, [&](const Tensor<T>& o) {
    auto P = nets.wrap(nets.no_grads());
    Tensor<T> b;
    b.shape = {1, o.dim(0), o.dim(1), o.dim(2)};
    b.data = o.data;
    auto feats = nets.encode(P, ad::constant(std::move(b)));
    auto a = ad::constant(Tensor<T>(act2));
    if (head == CriticHead::one) return nets.q_head(P, feats, a, 1)->value[0];
    if (head == CriticHead::two) return nets.q_head(P, feats, a, 2)->value[0];
    return std::min(nets.q_head(P, feats, a, 1)->value[0],
                    nets.q_head(P, feats, a, 2)->value[0]);
  });
}

// ---------------------------------------------------------------------------
// Mask construction
// ---------------------------------------------------------------------------

// rho-quantile with linear interpolation between order statistics,
// computed over every element of the map jointly (one threshold per
// observation, all channels pooled).
template <typename T>
T quantile_threshold(const Tensor<T>& map, double rho) {
  if (!(rho > 0.0 && rho < 1.0))
    throw std::invalid_argument("binarize_quantile: rho must lie in (0,1)");
  if (!map.all_finite())
    throw std::invalid_argument("binarize_quantile: map contains non-finite values");
  if (map.numel() == 0) throw std::invalid_argument("binarize_quantile: empty map");
  std::vector<T> sorted(map.data);
  std::sort(sorted.begin(), sorted.end());
  const double h = rho * double(sorted.size() - 1);
  const auto lo = size_t(h);
  const double frac = h - double(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return T(double(sorted[lo]) + frac * (double(sorted[lo + 1]) - double(sorted[lo])));
}

// mask_j = 1 iff map_j >= threshold; ties included, so the fraction of
// ones is at least (1-rho) and equals it (to one element) when all values
// are distinct. use_abs thresholds |map| instead of the raw values.
template <typename T>
Tensor<T> binarize_quantile(const Tensor<T>& map, double rho, bool use_abs = false) {
  Tensor<T> source = map;
  if (use_abs)
    for (int64_t i = 0; i < source.numel(); ++i) source[i] = std::abs(source[i]);
  const T q = quantile_threshold(source, rho);
  Tensor<T> mask(map.shape);
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = source[i] >= q ? T(1) : T(0);
  return mask;
}

// Per-sample thresholds over a [B,C,H,W] stack of maps.
template <typename T>
Tensor<T> binarize_quantile_batch(const Tensor<T>& maps, double rho, bool use_abs = false) {
  if (maps.ndim() != 4) throw std::invalid_argument("binarize_quantile_batch: expects [B,C,H,W]");
  const int B = maps.dim(0);
  const int64_t per = maps.numel() / B;
  Tensor<T> mask(maps.shape);
  Tensor<T> one({maps.dim(1), maps.dim(2), maps.dim(3)});
  for (int b = 0; b < B; ++b) {
    std::copy_n(maps.ptr() + b * per, per, one.ptr());
    Tensor<T> m = binarize_quantile(one, rho, use_abs);
    std::copy_n(m.ptr(), per, mask.ptr() + b * per);
  }
  return mask;
}

template <typename T>
Tensor<T> masked_observation(const Tensor<T>& obs, const Tensor<T>& mask) {
  if (obs.shape != mask.shape)
    throw std::invalid_argument("masked_observation: shape mismatch " + shape_str(obs.shape) +
                                " vs " + shape_str(mask.shape));
  Tensor<T> out(obs.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = obs[i] * mask[i];
  return out;
}

// Gini coefficient of non-negative magnitudes: 0 for uniform maps, close
// to 1 when mass concentrates on few pixels. Standard sparsity summary
// for attribution maps.
template <typename T>
double gini_coefficient(const Tensor<T>& map) {
  const int64_t n = map.numel();
  if (n == 0) throw std::invalid_argument("gini_coefficient: empty map");
  std::vector<double> v(n);
  for (int64_t i = 0; i < n; ++i) v[i] = std::abs(double(map[i]));
  std::sort(v.begin(), v.end());
  double cum = 0.0, total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    cum += v[size_t(i)] * double(i + 1);
    total += v[size_t(i)];
  }
  if (total == 0.0) return 0.0;
  return (2.0 * cum) / (double(n) * total) - (double(n) + 1.0) / double(n);
}

}  // namespace sgqn
