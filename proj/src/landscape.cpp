#include "qlab/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qlab/error.hpp"
#include "qlab/lm.hpp"
#include "qlab/rng.hpp"

namespace qlab {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) throw ContractViolation("median of an empty set");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// NLL at explicit quantized coordinates; overflow shows up as +inf samples so
// a sweep can walk arbitrarily far out.
LossSample probe_point(Parameters& scratch, const std::vector<float>& coords, double t_or_lambda,
                       const std::vector<float>& base_coords, const TokenDataset& dataset,
                       const LandscapeEvalConfig& eval) {
  LossSample s;
  s.t_or_lambda = t_or_lambda;
  s.distance = weight_distance(coords, base_coords);
  unflatten_quantized(scratch, coords);
  try {
    s.train_nll = eval_nll(scratch, nullptr, dataset, Split::kTrain, eval.train_blocks);
    s.val_nll = eval_nll(scratch, nullptr, dataset, Split::kVal, eval.val_blocks);
  } catch (const NumericFault&) {
    s.train_nll = std::numeric_limits<double>::infinity();
    s.val_nll = std::numeric_limits<double>::infinity();
  }
  return s;
}

}  // namespace

Direction sample_unit_direction(int64_t dim, uint64_t seed) {
  if (dim <= 0) throw ContractViolation("sample_unit_direction: dimension must be positive");
  Direction d;
  d.seed = seed;
  d.unit.resize(static_cast<size_t>(dim));
  Rng rng(seed);
  double norm_sq = 0.0;
  for (float& v : d.unit) {
    double g = rng.normal();
    v = static_cast<float>(g);
    norm_sq += g * g;
  }
  if (!(norm_sq > 0.0)) throw DegenerateInput("sample_unit_direction: zero draw");
  float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
  for (float& v : d.unit) v *= inv;
  return d;
}

std::vector<double> log_spaced_radii(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi > lo)) throw ContractViolation("log_spaced_radii: need 0 < lo < hi");
  if (count < 2) throw ContractViolation("log_spaced_radii: need at least two radii");
  std::vector<double> radii;
  radii.reserve(static_cast<size_t>(count) + 1);
  radii.push_back(0.0);
  double la = std::log(lo), lb = std::log(hi);
  for (int i = 0; i < count; ++i) {
    double f = static_cast<double>(i) / (count - 1);
    radii.push_back(std::exp(la + f * (lb - la)));
  }
  radii.back() = hi;  // exact endpoint, no exp/log round trip
  return radii;
}

LossProfile radial_profile(const Parameters& base, const Direction& dir,
                           const std::vector<double>& radii, const TokenDataset& dataset,
                           const LandscapeEvalConfig& eval) {
  std::vector<float> w0 = flatten_quantized(base);
  if (dir.unit.size() != w0.size()) {
    throw ContractViolation("radial_profile: direction dimension mismatch");
  }
  if (radii.empty() || radii.front() != 0.0) {
    throw ContractViolation("radial_profile: radii must start at 0");
  }
  for (size_t i = 1; i < radii.size(); ++i) {
    if (!(radii[i] > radii[i - 1])) {
      throw ContractViolation("radial_profile: radii must be strictly increasing");
    }
  }
  LossProfile p;
  p.kind = LossProfile::Kind::kRadial;
  p.anchor_a = "w";
  p.seed = dir.seed;
  Parameters scratch = base;
  std::vector<float> coords(w0.size());
  for (double lambda : radii) {
    for (size_t i = 0; i < w0.size(); ++i) {
      coords[i] = w0[i] + static_cast<float>(lambda) * dir.unit[i];
    }
    LossSample s = probe_point(scratch, coords, lambda, w0, dataset, eval);
    // ||(w + lambda e) - w|| = lambda for a unit direction; recomputing it in
    // float32 would only add rounding noise to a quantity known by construction.
    s.distance = lambda;
    p.samples.push_back(s);
  }
  return p;
}

LossProfile segment_profile(const Parameters& base, std::span<const float> w_a,
                            std::span<const float> w_b, const std::string& anchor_a,
                            const std::string& anchor_b, const std::vector<double>& ts,
                            const TokenDataset& dataset, const LandscapeEvalConfig& eval) {
  std::vector<float> w0 = flatten_quantized(base);
  if (w_a.size() != w0.size() || w_b.size() != w0.size()) {
    throw ContractViolation("segment_profile: anchor dimension mismatch");
  }
  if (ts.size() < 2 || ts.front() != 0.0 || ts.back() != 1.0) {
    throw ContractViolation("segment_profile: ts must run from 0 to 1");
  }
  for (size_t i = 1; i < ts.size(); ++i) {
    if (!(ts[i] > ts[i - 1])) {
      throw ContractViolation("segment_profile: ts must be strictly increasing");
    }
  }
  LossProfile p;
  p.kind = LossProfile::Kind::kSegment;
  p.anchor_a = anchor_a;
  p.anchor_b = anchor_b;
  Parameters scratch = base;
  std::vector<float> coords(w0.size());
  for (double t : ts) {
    float ft = static_cast<float>(t);
    for (size_t i = 0; i < w0.size(); ++i) {
      coords[i] = (1.0f - ft) * w_a[i] + ft * w_b[i];
    }
    p.samples.push_back(probe_point(scratch, coords, t, w0, dataset, eval));
  }
  return p;
}

BasinEstimate basin_radius(const std::vector<LossProfile>& profiles, const BasinRule& rule) {
  if (profiles.empty()) throw ContractViolation("basin_radius: no profiles");
  if (!(rule.rise_fraction > 0.0) || rule.rise_fraction > 1.0) {
    throw ContractViolation("basin_radius: rise_fraction must lie in (0, 1]");
  }
  size_t k = profiles.front().samples.size();
  if (k < 3) throw ContractViolation("basin_radius: profiles need at least three samples");
  for (const LossProfile& p : profiles) {
    if (p.kind != LossProfile::Kind::kRadial) {
      throw ContractViolation("basin_radius: only radial profiles apply");
    }
    if (p.samples.size() != k) {
      throw ContractViolation("basin_radius: profiles disagree on the radius grid");
    }
    for (size_t i = 0; i < k; ++i) {
      if (p.samples[i].t_or_lambda != profiles.front().samples[i].t_or_lambda) {
        throw ContractViolation("basin_radius: profiles disagree on the radius grid");
      }
    }
  }

  BasinEstimate est;
  // All profiles share the base point; average out evaluation noise anyway.
  {
    std::vector<double> l0;
    l0.reserve(profiles.size());
    for (const LossProfile& p : profiles) l0.push_back(p.samples[0].train_nll);
    est.base_loss = median(std::move(l0));
  }

  // A profile plateaus when its loss varies by at most plateau_tol (relative
  // to the window maximum) over the last tail_fraction of the radius range and
  // stays finite there. The window is the samples at lambda >= cut, extended
  // left by one sample so the edge of the range is bracketed even when the
  // grid is sparse out there (log spacing puts few samples near the top).
  double lambda_max = profiles.front().samples[k - 1].t_or_lambda;
  double cut = (1.0 - rule.tail_fraction) * lambda_max;
  size_t window_start = k - 1;
  while (window_start > 1 && profiles.front().samples[window_start - 1].t_or_lambda >= cut) {
    --window_start;
  }
  if (window_start > 1) --window_start;  // bracket the window edge
  std::vector<double> plateau_pool;
  for (const LossProfile& p : profiles) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    bool finite = true;
    for (size_t i = window_start; i < k; ++i) {
      double v = p.samples[i].train_nll;
      if (!std::isfinite(v)) {
        finite = false;
        break;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (!finite) continue;
    if (hi - lo <= rule.plateau_tol * std::max(std::abs(hi), 1e-12)) {
      for (size_t i = window_start; i < k; ++i) plateau_pool.push_back(p.samples[i].train_nll);
    }
  }
  if (plateau_pool.empty()) {
    throw DegenerateInput("basin_radius: no profile plateaued; extend radii");
  }
  est.plateau_loss = median(std::move(plateau_pool));
  if (!(est.plateau_loss > est.base_loss)) {
    throw DegenerateInput("basin_radius: no plateau rise above the base loss");
  }

  double threshold = est.base_loss + rule.rise_fraction * (est.plateau_loss - est.base_loss);
  double prev_median = est.base_loss;
  double prev_lambda = 0.0;
  for (size_t i = 1; i < k; ++i) {
    std::vector<double> cross;
    cross.reserve(profiles.size());
    for (const LossProfile& p : profiles) cross.push_back(p.samples[i].train_nll);
    double m = median(std::move(cross));
    double lambda = profiles.front().samples[i].t_or_lambda;
    if (m >= threshold) {
      if (std::isfinite(m) && m > prev_median) {
        est.radius = prev_lambda + (threshold - prev_median) * (lambda - prev_lambda) / (m - prev_median);
      } else {
        est.radius = lambda;
      }
      return est;
    }
    prev_median = m;
    prev_lambda = lambda;
  }
  throw DegenerateInput("basin_radius: median never reaches the threshold; extend radii");
}

double weight_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ContractViolation("weight_distance: dimension mismatch");
  double sq = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

}  // namespace qlab
