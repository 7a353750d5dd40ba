// Naive reference implementations used as test oracles. Deliberately loop-for-loop
// transcriptions of the definitions, with no shared code from the library.
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <vector>

#include "gibbs_lens/network.hpp"
#include "gibbs_lens/tensor.hpp"

namespace oracle {

using gibbs_lens::KernelBank;
using gibbs_lens::Shape;
using gibbs_lens::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = u(gen);
  return t;
}

inline Tensor conv2d(const Tensor& x, const KernelBank& b) {
  const std::size_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  const std::size_t kh = b.kernels.shape()[0], kw = b.kernels.shape()[1], co = b.kernels.shape()[3];
  Tensor y(Shape{H - kh + 1, W - kw + 1, co});
  for (std::size_t i = 0; i + kh <= H; ++i)
    for (std::size_t j = 0; j + kw <= W; ++j)
      for (std::size_t o = 0; o < co; ++o) {
        double s = b.bias[o];
        for (std::size_t u = 0; u < kh; ++u)
          for (std::size_t v = 0; v < kw; ++v)
            for (std::size_t c = 0; c < C; ++c)
              s += x.at(i + u, j + v, c) * b.kernels[((u * kw + v) * C + c) * co + o];
        y.at(i, j, o) = s;
      }
  return y;
}

inline Tensor maxpool2(const Tensor& x) {
  const std::size_t H = x.shape()[0] / 2, W = x.shape()[1] / 2, C = x.shape()[2];
  Tensor y(Shape{H, W, C});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u < 2; ++u)
          for (std::size_t v = 0; v < 2; ++v) m = std::max(m, x.at(2 * i + u, 2 * j + v, c));
        y.at(i, j, c) = m;
      }
  return y;
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t M = w.shape()[0], L = w.shape()[1];
  Tensor y(Shape{L});
  for (std::size_t l = 0; l < L; ++l) {
    double s = b[l];
    for (std::size_t m = 0; m < M; ++m) s += x[m] * w[m * L + l];
    y[l] = s;
  }
  return y;
}

// Softmax evaluated in long double without any max shift.
inline Tensor softmax(const Tensor& z) {
  long double total = 0.0L;
  for (double v : z.data()) total += std::exp(static_cast<long double>(v));
  Tensor p(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = static_cast<double>(std::exp(static_cast<long double>(z[i])) / total);
  return p;
}

inline double cross_entropy(const Tensor& p, std::size_t label) { return -std::log(std::max(p[label], 1e-300)); }

/// Full forward pass of the chain with the oracle kernels, returning class probabilities.
inline Tensor forward_probs(const gibbs_lens::NetworkSpec& spec, const gibbs_lens::Parameters& p, const Tensor& img) {
  (void)spec;
  auto relu = [](Tensor t) {
    for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
    return t;
  };
  Tensor a = relu(oracle::maxpool2(oracle::conv2d(img, p.conv1)));
  Tensor b = relu(oracle::maxpool2(oracle::conv2d(a, p.conv2)));
  return oracle::softmax(oracle::linear(b, p.fc_weight, p.fc_bias));
}

inline double loss(const gibbs_lens::NetworkSpec& spec, const gibbs_lens::Parameters& p, const Tensor& img,
                   std::size_t label) {
  return oracle::cross_entropy(oracle::forward_probs(spec, p, img), label);
}

/// KL(N(mean, var) discretized || histogram of samples) on `bins` equal bins over [lo, hi]
/// plus two tail slots, each slot smoothed by eps and renormalized.
inline double kl_gaussian_vs_samples(const std::vector<double>& samples, double lo, double hi, std::size_t bins,
                                     double eps = 1e-6, double mean = 0.0, double var = 1024.0) {
  std::vector<double> q(bins + 2, 0.0), p(bins + 2, 0.0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : samples) {
    std::size_t slot;
    if (v < lo) {
      slot = 0;
    } else if (v >= hi) {
      slot = bins + 1;
    } else {
      slot = 1 + std::min(bins - 1, static_cast<std::size_t>((v - lo) / width));
    }
    q[slot] += 1.0 / static_cast<double>(samples.size());
  }
  auto cdf = [&](double x) { return 0.5 * (1.0 + std::erf((x - mean) / std::sqrt(2.0 * var))); };
  p[0] = cdf(lo);
  p[bins + 1] = 1.0 - cdf(hi);
  for (std::size_t i = 0; i < bins; ++i) p[i + 1] = cdf(lo + width * static_cast<double>(i + 1)) - cdf(lo + width * static_cast<double>(i));
  double pz = 0.0, qz = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    pz += p[i] + eps;
    qz += q[i] + eps;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = (p[i] + eps) / pz, b = (q[i] + eps) / qz;
    kl += a * std::log(a / b);
  }
  return kl;
}

inline bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

}  // namespace oracle
