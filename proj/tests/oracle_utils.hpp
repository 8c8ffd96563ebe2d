#pragma once

// Self-contained reference computations the unit tests check library results
// against. Everything here is written independently of the library internals
// (plain double loops, textbook algorithms), trading speed for obviousness.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlab/gptq.hpp"
#include "qlab/lm.hpp"
#include "qlab/quantizer.hpp"
#include "qlab/tensor.hpp"

namespace oracle {

// Smallest eigenvalue of a symmetric matrix via cyclic Jacobi rotations.
inline double smallest_eigenvalue(std::vector<double> a, int n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) off += std::abs(a[static_cast<size_t>(i) * n + j]);
    }
    if (off < 1e-14) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a[static_cast<size_t>(p) * n + q];
        if (std::abs(apq) < 1e-18) continue;
        double app = a[static_cast<size_t>(p) * n + p];
        double aqq = a[static_cast<size_t>(q) * n + q];
        double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
        double c = std::cos(theta), s = std::sin(theta);
        for (int k = 0; k < n; ++k) {
          double akp = a[static_cast<size_t>(k) * n + p];
          double akq = a[static_cast<size_t>(k) * n + q];
          a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a[static_cast<size_t>(p) * n + k];
          double aqk = a[static_cast<size_t>(q) * n + k];
          a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  double mn = a[0];
  for (int i = 1; i < n; ++i) mn = std::min(mn, a[static_cast<size_t>(i) * n + i]);
  return mn;
}

// Direct evaluation of the layer objective: mean over tap columns of
// ||(w_hat - w)^T x_c||^2.
inline double naive_layer_mse(const qlab::Tensor& w_hat, const qlab::Tensor& w,
                              const qlab::LayerTap& tap) {
  int d_in = w.rows(), d_out = w.cols();
  double total = 0.0;
  for (int64_t c = 0; c < tap.n_cols; ++c) {
    auto x = tap.col(c);
    for (int o = 0; o < d_out; ++o) {
      double dot = 0.0;
      for (int i = 0; i < d_in; ++i) {
        double e = static_cast<double>(w_hat(i, o)) - static_cast<double>(w(i, o));
        dot += e * static_cast<double>(x[static_cast<size_t>(i)]);
      }
      total += dot * dot;
    }
  }
  return total / static_cast<double>(tap.n_cols);
}

// Exhaustive minimum of the same objective over every on-grid weight
// assignment at the given scale. Only usable for a handful of weights.
inline double brute_force_best_mse(const qlab::Tensor& w, const qlab::LayerTap& tap,
                                   const qlab::CalibratedQuantizer& q) {
  int64_t numel = w.numel();
  int levels = q.format.max_level() - q.format.min_level() + 1;
  double best = std::numeric_limits<double>::infinity();
  int64_t combos = 1;
  for (int64_t i = 0; i < numel; ++i) {
    combos *= levels;
    if (combos > 2000000) throw std::runtime_error("brute force: layer too large");
  }
  qlab::Tensor cand = w;
  for (int64_t code = 0; code < combos; ++code) {
    int64_t rest = code;
    for (int64_t i = 0; i < numel; ++i) {
      int level = q.format.min_level() + static_cast<int>(rest % levels);
      rest /= levels;
      cand.data[static_cast<size_t>(i)] = q.scale * static_cast<float>(level);
    }
    best = std::min(best, naive_layer_mse(cand, w, tap));
  }
  return best;
}

// Fresh scratch directory under the system temp root; removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& label) {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto candidate = base / (label + "_" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directories(candidate, ec) && !ec) {
        path = candidate;
        return;
      }
    }
    throw std::runtime_error("TempDir: could not create a scratch directory");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& leaf) const { return (path / leaf).string(); }
};

// Deterministic float tensors for test inputs (std::mt19937 so test inputs do
// not depend on the library's own generator).
inline qlab::Tensor random_tensor(std::vector<int> shape, uint32_t seed, float lo = -1.0f,
                                  float hi = 1.0f) {
  qlab::Tensor t(std::move(shape));
  std::mt19937 gen(seed);
  for (float& v : t.data) {
    // 24-bit mantissa draw keeps values exactly representable.
    float u = static_cast<float>(gen() >> 8) / static_cast<float>(1 << 24);
    v = lo + (hi - lo) * u;
  }
  return t;
}

// Double-precision kernel references for finite-difference oracles. Written
// independently of the float tape so differences of these functions are a
// trustworthy standard for the analytic backward pass.
namespace refkernel {

using dvec = std::vector<double>;

inline dvec matmul(const dvec& a, const dvec& b, int m, int k, int n) {
  dvec c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      for (int j = 0; j < n; ++j) {
        c[static_cast<size_t>(i) * n + j] +=
            a[static_cast<size_t>(i) * k + l] * b[static_cast<size_t>(l) * n + j];
      }
    }
  }
  return c;
}

inline dvec add_rows(const dvec& a, const dvec& bias, int rows, int cols) {
  dvec y = a;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) y[static_cast<size_t>(i) * cols + j] += bias[static_cast<size_t>(j)];
  }
  return y;
}

inline dvec layernorm(const dvec& x, const dvec& gamma, const dvec& beta, int rows, int cols) {
  dvec y(x.size());
  for (int i = 0; i < rows; ++i) {
    const double* row = x.data() + static_cast<size_t>(i) * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += row[j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= cols;
    double rstd = 1.0 / std::sqrt(var + 1e-5);
    for (int j = 0; j < cols; ++j) {
      y[static_cast<size_t>(i) * cols + j] = gamma[static_cast<size_t>(j)] * (row[j] - mean) * rstd +
                                             beta[static_cast<size_t>(j)];
    }
  }
  return y;
}

inline double gelu_scalar(double v) {
  return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
}

inline dvec gelu(const dvec& x) {
  dvec y = x;
  for (double& v : y) v = gelu_scalar(v);
  return y;
}

inline dvec causal_attention(const dvec& q, const dvec& k, const dvec& v, int t, int d,
                             int n_heads) {
  int dh = d / n_heads;
  dvec y(static_cast<size_t>(t) * d, 0.0);
  dvec s(static_cast<size_t>(t));
  for (int h = 0; h < n_heads; ++h) {
    int off = h * dh;
    for (int i = 0; i < t; ++i) {
      for (int j = 0; j <= i; ++j) {
        double acc = 0.0;
        for (int e = 0; e < dh; ++e) {
          acc += q[static_cast<size_t>(i) * d + off + e] * k[static_cast<size_t>(j) * d + off + e];
        }
        s[static_cast<size_t>(j)] = acc / std::sqrt(static_cast<double>(dh));
      }
      double mx = s[0];
      for (int j = 1; j <= i; ++j) mx = std::max(mx, s[static_cast<size_t>(j)]);
      double z = 0.0;
      for (int j = 0; j <= i; ++j) z += std::exp(s[static_cast<size_t>(j)] - mx);
      for (int j = 0; j <= i; ++j) {
        double p = std::exp(s[static_cast<size_t>(j)] - mx) / z;
        for (int e = 0; e < dh; ++e) {
          y[static_cast<size_t>(i) * d + off + e] += p * v[static_cast<size_t>(j) * d + off + e];
        }
      }
    }
  }
  return y;
}

inline double cross_entropy(const dvec& logits, const std::vector<int>& targets, int t, int v) {
  double total = 0.0;
  int included = 0;
  for (int i = 0; i < t; ++i) {
    if (targets[static_cast<size_t>(i)] < 0) continue;
    const double* row = logits.data() + static_cast<size_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[targets[static_cast<size_t>(i)]];
    ++included;
  }
  return total / included;
}

}  // namespace refkernel

}  // namespace oracle
