#pragma once

// Scalar double-precision reference forward pass for the toy decoder. This is
// deliberately written from the architecture description with plain loops and
// no code shared with the float tape, so finite differences of this function
// are an independent check on the analytic backward pass.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlab/model.hpp"

namespace refmodel {

struct DoubleParams {
  std::map<std::string, std::vector<double>> t;

  const std::vector<double>& at(const std::string& name) const {
    auto it = t.find(name);
    if (it == t.end()) throw std::runtime_error("refmodel: missing tensor " + name);
    return it->second;
  }
};

inline DoubleParams to_double(const qlab::Parameters& p) {
  DoubleParams out;
  for (const auto& [name, tensor] : p.tensors) {
    out.t[name] = std::vector<double>(tensor.data.begin(), tensor.data.end());
  }
  return out;
}

namespace detail {

// y[n,c_out] = x[n,c_in] * w[c_in,c_out] + b[c_out]
inline std::vector<double> linear(const std::vector<double>& x, int n, int c_in,
                                  const std::vector<double>& w, const std::vector<double>& b,
                                  int c_out) {
  std::vector<double> y(static_cast<size_t>(n) * c_out, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < c_in; ++k) {
      double xv = x[static_cast<size_t>(i) * c_in + k];
      for (int j = 0; j < c_out; ++j) {
        y[static_cast<size_t>(i) * c_out + j] += xv * w[static_cast<size_t>(k) * c_out + j];
      }
    }
    if (!b.empty()) {
      for (int j = 0; j < c_out; ++j) y[static_cast<size_t>(i) * c_out + j] += b[static_cast<size_t>(j)];
    }
  }
  return y;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, int n, int d,
                                      const std::vector<double>& gamma,
                                      const std::vector<double>& beta) {
  std::vector<double> y(x.size());
  for (int i = 0; i < n; ++i) {
    const double* row = x.data() + static_cast<size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    double rstd = 1.0 / std::sqrt(var + 1e-5);
    for (int j = 0; j < d; ++j) {
      y[static_cast<size_t>(i) * d + j] =
          gamma[static_cast<size_t>(j)] * (row[j] - mean) * rstd + beta[static_cast<size_t>(j)];
    }
  }
  return y;
}

inline double gelu(double v) {
  double u = std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v);
  return 0.5 * v * (1.0 + std::tanh(u));
}

}  // namespace detail

// Mean NLL over the block: position i predicts tokens[i+1], the final
// position predicts nothing.
inline double nll(const qlab::ModelConfig& cfg, const DoubleParams& p,
                  std::span<const int32_t> tokens) {
  int n = static_cast<int>(tokens.size());
  int d = cfg.d_model, nh = cfg.n_heads, dh = d / nh;

  std::vector<double> x(static_cast<size_t>(n) * d);
  const auto& tok_emb = p.at("tok_emb");
  const auto& pos_emb = p.at("pos_emb");
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      x[static_cast<size_t>(i) * d + j] =
          tok_emb[static_cast<size_t>(tokens[i]) * d + j] + pos_emb[static_cast<size_t>(i) * d + j];
    }
  }

  for (int b = 0; b < cfg.n_layers; ++b) {
    std::string pre = "block" + std::to_string(b) + ".";
    std::vector<double> h = detail::layer_norm(x, n, d, p.at(pre + "ln1.gamma"), p.at(pre + "ln1.beta"));
    std::vector<double> q = detail::linear(h, n, d, p.at(pre + "wq"), p.at(pre + "bq"), d);
    std::vector<double> k = detail::linear(h, n, d, p.at(pre + "wk"), p.at(pre + "bk"), d);
    std::vector<double> v = detail::linear(h, n, d, p.at(pre + "wv"), p.at(pre + "bv"), d);

    std::vector<double> a(static_cast<size_t>(n) * d, 0.0);
    std::vector<double> scores(static_cast<size_t>(n));
    for (int hd = 0; hd < nh; ++hd) {
      int off = hd * dh;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
          double s = 0.0;
          for (int e = 0; e < dh; ++e) {
            s += q[static_cast<size_t>(i) * d + off + e] * k[static_cast<size_t>(j) * d + off + e];
          }
          scores[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
        }
        double mx = scores[0];
        for (int j = 1; j <= i; ++j) mx = std::max(mx, scores[static_cast<size_t>(j)]);
        double z = 0.0;
        for (int j = 0; j <= i; ++j) z += std::exp(scores[static_cast<size_t>(j)] - mx);
        for (int j = 0; j <= i; ++j) {
          double prob = std::exp(scores[static_cast<size_t>(j)] - mx) / z;
          for (int e = 0; e < dh; ++e) {
            a[static_cast<size_t>(i) * d + off + e] += prob * v[static_cast<size_t>(j) * d + off + e];
          }
        }
      }
    }
    std::vector<double> ao = detail::linear(a, n, d, p.at(pre + "wo"), p.at(pre + "bo"), d);
    for (size_t i = 0; i < x.size(); ++i) x[i] += ao[i];

    std::vector<double> h2 = detail::layer_norm(x, n, d, p.at(pre + "ln2.gamma"), p.at(pre + "ln2.beta"));
    std::vector<double> f1 = detail::linear(h2, n, d, p.at(pre + "wfc1"), p.at(pre + "bfc1"), cfg.d_ff);
    for (double& val : f1) val = detail::gelu(val);
    std::vector<double> f2 = detail::linear(f1, n, cfg.d_ff, p.at(pre + "wfc2"), p.at(pre + "bfc2"), d);
    for (size_t i = 0; i < x.size(); ++i) x[i] += f2[i];
  }

  std::vector<double> xf = detail::layer_norm(x, n, d, p.at("lnf.gamma"), p.at("lnf.beta"));
  std::vector<double> logits =
      detail::linear(xf, n, d, p.at("head"), std::vector<double>(), cfg.vocab_size);

  double total = 0.0;
  int included = 0;
  for (int i = 0; i + 1 < n; ++i) {
    const double* row = logits.data() + static_cast<size_t>(i) * cfg.vocab_size;
    double mx = row[0];
    for (int j = 1; j < cfg.vocab_size; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < cfg.vocab_size; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[tokens[i + 1]];
    ++included;
  }
  return total / included;
}

}  // namespace refmodel
