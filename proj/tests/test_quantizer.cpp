#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "oracle_utils.hpp"
#include "qlab/error.hpp"
#include "qlab/model.hpp"
#include "qlab/quantizer.hpp"

using namespace qlab;

TEST_CASE("format level ranges") {
  CHECK(QuantFormat(2).min_level() == -1);
  CHECK(QuantFormat(2).max_level() == 1);
  CHECK(QuantFormat(3).min_level() == -3);
  CHECK(QuantFormat(3).max_level() == 3);
  CHECK(QuantFormat(8).min_level() == -127);
  CHECK(QuantFormat(8).max_level() == 127);
  CHECK_THROWS_AS(QuantFormat(1), ConfigError);
  CHECK_THROWS_AS(QuantFormat(9), ConfigError);
  CHECK(QuantFormat::parse("int4").bits() == 4);
  CHECK_THROWS_AS(QuantFormat::parse("fp8"), ConfigError);
  LevelRange r = quant_levels(QuantFormat(6));
  CHECK(r.min_level == -31);
  CHECK(r.max_level == 31);
}

TEST_CASE("fake quantize rounds and clamps") {
  CalibratedQuantizer q{QuantFormat(2), 1.0f};
  Tensor w = Tensor::from_data({3}, {0.6f, -0.2f, 1.4f});
  Tensor y = fake_quantize(w, q);
  CHECK(y.data[0] == 1.0f);
  CHECK(y.data[1] == 0.0f);
  CHECK(y.data[2] == 1.0f);  // clamped to the top level

  Tensor zero({4});
  for (int bits : {2, 3, 4, 6, 8}) {
    Tensor z = fake_quantize(zero, CalibratedQuantizer{QuantFormat(bits), 0.3f});
    for (float v : z.data) CHECK(v == 0.0f);
  }
}

TEST_CASE("fake quantize rounds halves away from zero") {
  CalibratedQuantizer q{QuantFormat(4), 1.0f};
  Tensor w = Tensor::from_data({4}, {0.5f, -0.5f, 1.5f, -2.5f});
  Tensor y = fake_quantize(w, q);
  CHECK(y.data[0] == 1.0f);
  CHECK(y.data[1] == -1.0f);
  CHECK(y.data[2] == 2.0f);
  CHECK(y.data[3] == -3.0f);
}

TEST_CASE("fake quantize contracts") {
  Tensor w = Tensor::from_data({2}, {0.1f, 0.2f});
  CHECK_THROWS_AS(fake_quantize(w, CalibratedQuantizer{QuantFormat(4), 0.0f}),
                  ContractViolation);
  CHECK_THROWS_AS(fake_quantize(w, CalibratedQuantizer{QuantFormat(4), -1.0f}),
                  ContractViolation);
  Tensor bad = Tensor::from_data({1}, {1.0f});
  bad.data[0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(fake_quantize(bad, CalibratedQuantizer{QuantFormat(4), 1.0f}), NumericFault);
}

TEST_CASE("quantizer invariants on random tensors") {
  for (int bits : {2, 3, 4, 6, 8}) {
    QuantFormat f(bits);
    for (uint32_t seed = 0; seed < 25; ++seed) {
      Tensor w = oracle::random_tensor({5, 7}, 1000 * bits + seed, -2.0f, 2.0f);
      CalibratedQuantizer q = calibrate_scale(w, f);
      Tensor y = fake_quantize(w, q);

      // Idempotence, bitwise.
      Tensor yy = fake_quantize(y, q);
      CHECK(std::memcmp(yy.data.data(), y.data.data(), y.data.size() * sizeof(float)) == 0);

      // Odd symmetry, bitwise.
      Tensor neg = w;
      for (float& v : neg.data) v = -v;
      Tensor yn = fake_quantize(neg, q);
      for (size_t i = 0; i < y.data.size(); ++i) CHECK(yn.data[i] == -y.data[i]);

      // Level-set membership: every output is scale * integer level in range.
      for (float v : y.data) {
        double level = static_cast<double>(v) / q.scale;
        double nearest = std::round(level);
        CHECK(std::abs(level - nearest) < 1e-4);
        CHECK(nearest >= f.min_level());
        CHECK(nearest <= f.max_level());
      }
    }
  }
}

TEST_CASE("calibrate scale examples") {
  // Both endpoints exactly representable at scale 1: zero error.
  Tensor w = Tensor::from_data({2}, {-1.0f, 1.0f});
  CalibratedQuantizer q = calibrate_scale(w, QuantFormat(2));
  CHECK(q.scale == doctest::Approx(1.0).epsilon(1e-9));
  Tensor y = fake_quantize(w, q);
  CHECK(y.data[0] == -1.0f);
  CHECK(y.data[1] == 1.0f);
}

TEST_CASE("calibrate scale matches an exhaustive grid search") {
  for (int bits : {2, 3, 4}) {
    QuantFormat f(bits);
    for (uint32_t seed = 0; seed < 10; ++seed) {
      Tensor w = seed == 0 ? Tensor::from_data({2}, {0.1f, 0.9f})
                           : oracle::random_tensor({6}, 7000 + seed, -1.5f, 1.5f);
      CalibratedQuantizer q = calibrate_scale(w, f);

      float max_abs = 0.0f;
      for (float v : w.data) max_abs = std::max(max_abs, std::abs(v));
      double best_err = std::numeric_limits<double>::infinity();
      float best_scale = 0.0f;
      for (int i = 1; i <= kScaleGridSize; ++i) {
        float a = static_cast<float>(i) / kScaleGridSize * max_abs;
        Tensor cand = fake_quantize(w, CalibratedQuantizer{f, a});
        double err = 0.0;
        for (size_t j = 0; j < w.data.size(); ++j) {
          double d = static_cast<double>(cand.data[j]) - w.data[j];
          err += d * d;
        }
        if (err < best_err) {  // strict: ties keep the smaller scale
          best_err = err;
          best_scale = a;
        }
      }
      CHECK(q.scale == best_scale);
    }
  }
}

TEST_CASE("calibrate scale is homogeneous in positive scaling") {
  Tensor w = oracle::random_tensor({8}, 42, -1.0f, 1.0f);
  for (float c : {2.0f, 0.25f}) {
    Tensor scaled = w;
    for (float& v : scaled.data) v *= c;
    CalibratedQuantizer q1 = calibrate_scale(w, QuantFormat(3));
    CalibratedQuantizer q2 = calibrate_scale(scaled, QuantFormat(3));
    CHECK(q2.scale == doctest::Approx(c * q1.scale).epsilon(1e-6));
  }
}

TEST_CASE("calibrate scale refuses an all-zero tensor") {
  Tensor w({3, 3});
  CHECK_THROWS_AS(calibrate_scale(w, QuantFormat(4)), DegenerateInput);
}

TEST_CASE("rtn quantizes exactly the stack weights") {
  ModelConfig mc;
  mc.seed = 9;
  Parameters p = init_parameters(mc);
  QuantizerSet qs;
  Parameters rtn = quantize_model_rtn(p, QuantFormat(4), &qs);

  std::vector<std::string> names = quantized_weight_names(mc);
  CHECK(names.size() == static_cast<size_t>(6 * mc.n_layers));
  CHECK(qs.size() == names.size());
  for (const std::string& name : names) {
    CHECK(qs.count(name) == 1);
    const Tensor& y = rtn.at(name);
    Tensor expect = fake_quantize(p.at(name), qs.at(name));
    CHECK(std::memcmp(y.data.data(), expect.data.data(), y.data.size() * sizeof(float)) == 0);
  }
  // Everything else untouched, bitwise.
  for (const std::string& name : parameter_order(mc)) {
    if (std::find(names.begin(), names.end(), name) != names.end()) continue;
    const Tensor& a = p.at(name);
    const Tensor& b = rtn.at(name);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
  }

  // Applying the same quantizers to the already-quantized model changes nothing.
  Parameters twice = apply_quantizers(rtn, qs);
  for (const std::string& name : names) {
    CHECK(std::memcmp(twice.at(name).data.data(), rtn.at(name).data.data(),
                      rtn.at(name).data.size() * sizeof(float)) == 0);
  }
}
