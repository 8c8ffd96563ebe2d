#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "doctest.h"
#include "oracle_utils.hpp"
#include "qlab/error.hpp"
#include "qlab/finite_diff.hpp"
#include "qlab/graph.hpp"
#include "qlab/tensor.hpp"

using namespace qlab;

namespace {

using dvec = std::vector<double>;

dvec to_double(const Tensor& t) { return dvec(t.data.begin(), t.data.end()); }

// l^T Y r for a rows x cols matrix Y: the scalar readout the kernel subcases
// use so every coordinate of the kernel output reaches the loss.
double bilinear(const dvec& y, const dvec& l, const dvec& r, int rows, int cols) {
  double acc = 0.0;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) acc += l[static_cast<size_t>(i)] *
                                          y[static_cast<size_t>(i) * cols + j] *
                                          r[static_cast<size_t>(j)];
  }
  return acc;
}

// Analytic gradient of a scalar-valued graph builder with respect to one named
// input, compared against central differences of `ref`, an independent
// double-precision implementation of the same function. Differencing the float
// graph itself would bury small gradients under forward rounding noise, so the
// oracle works in double and is pinned to the float forward at the expansion
// point to prove it computes the same thing.
void check_against_fd(const std::function<Graph::NodeId(Graph&, const Tensor&)>& build,
                      const std::function<double(const dvec&)>& ref, const Tensor& x0,
                      double tol = 1e-3) {
  Graph g;
  Graph::NodeId loss = build(g, x0);
  double at_x0 = g.value(loss).data[0];
  GradientMap grads = g.backward(loss);
  const Tensor& analytic = grads.at("x");

  dvec flat = to_double(x0);
  CHECK(std::abs(ref(flat) - at_x0) <= 1e-5 * std::max(1.0, std::abs(at_x0)));
  dvec fd = finite_difference_gradient(ref, flat, 1e-3);
  for (size_t i = 0; i < fd.size(); ++i) {
    double a = analytic.data[i];
    if (std::abs(a) < 1e-6) continue;  // comparison skipped for negligible entries
    CHECK(std::abs(a - fd[i]) / std::max(std::abs(a), std::abs(fd[i])) < tol);
  }
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  for (float v : t.data) CHECK(v == 0.0f);
  t(1, 2) = 5.0f;
  CHECK(t.data[5] == 5.0f);
  CHECK_THROWS_AS(Tensor({2, 0}), ContractViolation);
  CHECK_THROWS_AS(Tensor({-1}), ContractViolation);
  Tensor s = Tensor::scalar(2.5f);
  CHECK(s.numel() == 1);
  CHECK(s.data[0] == 2.5f);
}

TEST_CASE("matmul against identity") {
  Graph g;
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye(i, i) = 1.0f;
  Tensor a = oracle::random_tensor({3, 4}, 11);
  Graph::NodeId out = g.matmul(g.input(eye), g.input(a));
  const Tensor& y = g.value(out);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(y.data[i] == a.data[i]);
}

TEST_CASE("matmul shape contracts") {
  Graph g;
  Graph::NodeId a = g.input(Tensor({2, 3}));
  Graph::NodeId b = g.input(Tensor({4, 2}));
  CHECK_THROWS_AS(g.matmul(a, b), ContractViolation);
  CHECK_THROWS_AS(g.matmul(a, g.input(Tensor({3}))), ContractViolation);
}

TEST_CASE("softmax of equal logits is uniform") {
  std::vector<float> row{1.7f, 1.7f, 1.7f, 1.7f};
  softmax_row(row);
  for (float v : row) CHECK(v == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("layernorm of a constant row returns beta") {
  Graph g;
  Tensor x({2, 4});
  for (int j = 0; j < 4; ++j) {
    x(0, j) = 3.25f;
    x(1, j) = -0.5f;
  }
  Tensor gamma({4}), beta({4});
  for (int j = 0; j < 4; ++j) {
    gamma.data[j] = 1.0f + 0.1f * j;
    beta.data[j] = -2.0f + j;
  }
  const Tensor& y = g.value(g.layernorm(g.input(x), g.input(gamma), g.input(beta)));
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(y(i, j) == doctest::Approx(beta.data[j]).epsilon(1e-5));
  }
}

TEST_CASE("gelu matches the closed form at a few points") {
  Graph g;
  Tensor x = Tensor::from_data({3}, {0.0f, 1.0f, -2.0f});
  const Tensor& y = g.value(g.gelu(g.input(x)));
  auto ref = [](double v) {
    return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
  };
  CHECK(y.data[0] == 0.0f);
  CHECK(y.data[1] == doctest::Approx(ref(1.0)).epsilon(1e-6));
  CHECK(y.data[2] == doctest::Approx(ref(-2.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy of uniform logits is ln V") {
  Graph g;
  int v = 257;
  Tensor logits({3, v});
  for (int64_t i = 0; i < logits.numel(); ++i) logits.data[i] = 0.42f;
  Graph::NodeId loss = g.cross_entropy(g.input(logits), {5, 99, 200});
  CHECK(g.value(loss).data[0] == doctest::Approx(std::log(257.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy ignores negative targets") {
  Graph g;
  Tensor logits = oracle::random_tensor({4, 7}, 3);
  Graph::NodeId all = g.cross_entropy(g.input(logits), {1, 2, 3, 4});
  Graph g2;
  Graph::NodeId masked = g2.cross_entropy(g2.input(logits), {1, 2, -1, -1});
  Graph g3;
  Tensor first_two({2, 7});
  for (int64_t i = 0; i < first_two.numel(); ++i) first_two.data[i] = logits.data[i];
  Graph::NodeId direct = g3.cross_entropy(g3.input(first_two), {1, 2});
  CHECK(g2.value(masked).data[0] == g3.value(direct).data[0]);
  CHECK(g.value(all).data[0] != g2.value(masked).data[0]);
  Graph g4;
  CHECK_THROWS_AS(g4.cross_entropy(g4.input(logits), {-1, -1, -1, -1}), ContractViolation);
}

TEST_CASE("backward of x squared at 3 is 6") {
  Graph g;
  Graph::NodeId x = g.input(Tensor::from_data({1, 1}, {3.0f}), "x", true);
  Graph::NodeId loss = g.matmul(x, x);  // 1x1 * 1x1
  GradientMap grads = g.backward(loss);
  CHECK(grads.at("x").data[0] == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("grad of sum(A*B) wrt A is row-broadcast of B's column sums") {
  // loss = ones_1xm * (A*B) * ones_nx1; dL/dA = ones * (B^T row sums) per the
  // chain rule: dA[i][k] = sum_j B[k][j].
  Tensor a = oracle::random_tensor({2, 3}, 21);
  Tensor b = oracle::random_tensor({3, 4}, 22);
  Graph g;
  Graph::NodeId an = g.input(a, "x", true);
  Graph::NodeId bn = g.input(b);
  Tensor left({1, 2}), right({4, 1});
  for (float& v : left.data) v = 1.0f;
  for (float& v : right.data) v = 1.0f;
  Graph::NodeId loss = g.matmul(g.matmul(g.input(left), g.matmul(an, bn)), g.input(right));
  GradientMap grads = g.backward(loss);
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 3; ++k) {
      double want = 0.0;
      for (int j = 0; j < 4; ++j) want += b(k, j);
      CHECK(grads.at("x")(i, k) == doctest::Approx(want).epsilon(1e-5));
    }
  }
}

TEST_CASE("per-kernel gradients match finite differences") {
  namespace rk = oracle::refkernel;
  SUBCASE("matmul left operand") {
    Tensor b = oracle::random_tensor({3, 2}, 31);
    dvec bd = to_double(b);
    dvec ld{1.0, -1.0, 0.5, 2.0};
    dvec rd{0.7, -0.3};
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          Tensor l({1, 4});
          l.data = {1.0f, -1.0f, 0.5f, 2.0f};
          Tensor r({2, 1});
          r.data = {0.7f, -0.3f};
          return g.matmul(g.matmul(g.input(l), g.matmul(g.input(x, "x", true), g.input(b))),
                          g.input(r));
        },
        [&](const dvec& p) { return bilinear(rk::matmul(p, bd, 4, 3, 2), ld, rd, 4, 2); },
        oracle::random_tensor({4, 3}, 30));
  }
  SUBCASE("add with row broadcast") {
    Tensor a = oracle::random_tensor({3, 4}, 41);
    dvec ad = to_double(a);
    dvec ld(3, 0.5), rd(4, 1.5);
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          Tensor l({1, 3}), r({4, 1});
          for (float& v : l.data) v = 0.5f;
          for (float& v : r.data) v = 1.5f;
          return g.matmul(g.matmul(g.input(l), g.add(g.input(a), g.input(x, "x", true))),
                          g.input(r));
        },
        [&](const dvec& p) { return bilinear(rk::add_rows(ad, p, 3, 4), ld, rd, 3, 4); },
        oracle::random_tensor({4}, 40));
  }
  SUBCASE("scale") {
    dvec rd{1.0, 2.0, 3.0};
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          Graph::NodeId s = g.scale(g.input(x, "x", true), -2.5f);
          return g.matmul(s, g.input(Tensor::from_data({3, 1}, {1.0f, 2.0f, 3.0f})));
        },
        [&](const dvec& p) {
          double acc = 0.0;
          for (size_t j = 0; j < 3; ++j) acc += -2.5 * p[j] * rd[j];
          return acc;
        },
        oracle::random_tensor({1, 3}, 50));
  }
  SUBCASE("embedding gather") {
    std::vector<int> ids{2, 0, 2};
    dvec ld{1.0, -0.5, 0.25};
    dvec rd(4, 1.0);
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          Graph::NodeId rows = g.embedding_gather(g.input(x, "x", true), {2, 0, 2});
          Tensor l({1, 3}), r({4, 1});
          l.data = {1.0f, -0.5f, 0.25f};
          for (float& v : r.data) v = 1.0f;
          return g.matmul(g.matmul(g.input(l), rows), g.input(r));
        },
        [&](const dvec& p) {
          dvec rows(static_cast<size_t>(3) * 4);
          for (size_t i = 0; i < ids.size(); ++i) {
            for (size_t j = 0; j < 4; ++j) rows[i * 4 + j] = p[static_cast<size_t>(ids[i]) * 4 + j];
          }
          return bilinear(rows, ld, rd, 3, 4);
        },
        oracle::random_tensor({5, 4}, 60));
  }
  SUBCASE("layernorm input gamma and beta") {
    Tensor x0 = oracle::random_tensor({2, 6}, 70);
    Tensor gamma = oracle::random_tensor({6}, 71, 0.5f, 1.5f);
    Tensor beta = oracle::random_tensor({6}, 72);
    dvec x0d = to_double(x0), gd = to_double(gamma), betad = to_double(beta);
    dvec ld{1.0, 0.5};
    dvec rd(6, 1.0);
    auto head = [](Graph& g, Graph::NodeId y) {
      Tensor l({1, 2}), r({6, 1});
      l.data = {1.0f, 0.5f};
      for (float& v : r.data) v = 1.0f;
      return g.matmul(g.matmul(g.input(l), y), g.input(r));
    };
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          return head(g, g.layernorm(g.input(x, "x", true), g.input(gamma), g.input(beta)));
        },
        [&](const dvec& p) { return bilinear(rk::layernorm(p, gd, betad, 2, 6), ld, rd, 2, 6); },
        x0);
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          return head(g, g.layernorm(g.input(x0), g.input(x, "x", true), g.input(beta)));
        },
        [&](const dvec& p) { return bilinear(rk::layernorm(x0d, p, betad, 2, 6), ld, rd, 2, 6); },
        gamma);
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          return head(g, g.layernorm(g.input(x0), g.input(gamma), g.input(x, "x", true)));
        },
        [&](const dvec& p) { return bilinear(rk::layernorm(x0d, gd, p, 2, 6), ld, rd, 2, 6); },
        beta);
  }
  SUBCASE("gelu") {
    dvec rd{1.0, 1.0, -1.0, 0.5};
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          Graph::NodeId y = g.gelu(g.input(x, "x", true));
          return g.matmul(y, g.input(Tensor::from_data({4, 1}, {1.0f, 1.0f, -1.0f, 0.5f})));
        },
        [&](const dvec& p) {
          double acc = 0.0;
          for (size_t j = 0; j < 4; ++j) acc += rk::gelu_scalar(p[j]) * rd[j];
          return acc;
        },
        oracle::random_tensor({1, 4}, 80, -2.0f, 2.0f));
  }
  SUBCASE("causal attention q k v") {
    Tensor q0 = oracle::random_tensor({4, 6}, 90);
    Tensor k0 = oracle::random_tensor({4, 6}, 91);
    Tensor v0 = oracle::random_tensor({4, 6}, 92);
    dvec qd = to_double(q0), kd = to_double(k0), vd = to_double(v0);
    dvec ld{1.0, -1.0, 0.5, 0.25};
    dvec rd(6, 1.0);
    auto head = [](Graph& g, Graph::NodeId y) {
      Tensor l({1, 4}), r({6, 1});
      l.data = {1.0f, -1.0f, 0.5f, 0.25f};
      for (float& v : r.data) v = 1.0f;
      return g.matmul(g.matmul(g.input(l), y), g.input(r));
    };
    auto readout = [&](const dvec& q, const dvec& k, const dvec& v) {
      return bilinear(rk::causal_attention(q, k, v, 4, 6, 2), ld, rd, 4, 6);
    };
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          return head(g, g.causal_attention(g.input(x, "x", true), g.input(k0), g.input(v0), 2));
        },
        [&](const dvec& p) { return readout(p, kd, vd); }, q0);
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          return head(g, g.causal_attention(g.input(q0), g.input(x, "x", true), g.input(v0), 2));
        },
        [&](const dvec& p) { return readout(qd, p, vd); }, k0);
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          return head(g, g.causal_attention(g.input(q0), g.input(k0), g.input(x, "x", true), 2));
        },
        [&](const dvec& p) { return readout(qd, kd, p); }, v0);
  }
  SUBCASE("cross entropy") {
    std::vector<int> targets{2, 0, -1};
    check_against_fd(
        [&](Graph& g, const Tensor& x) {
          return g.cross_entropy(g.input(x, "x", true), {2, 0, -1});
        },
        [&](const dvec& p) { return rk::cross_entropy(p, targets, 3, 5); },
        oracle::random_tensor({3, 5}, 95));
  }
}

TEST_CASE("same graph evaluated twice is bitwise identical") {
  Tensor a = oracle::random_tensor({6, 6}, 101);
  Tensor b = oracle::random_tensor({6, 6}, 102);
  auto run = [&]() {
    Graph g;
    Graph::NodeId x = g.input(a, "x", true);
    Graph::NodeId y = g.layernorm(g.matmul(x, g.input(b)), g.input(oracle::random_tensor({6}, 103)),
                                  g.input(oracle::random_tensor({6}, 104)));
    Graph::NodeId att = g.causal_attention(y, y, y, 2);
    Graph::NodeId loss = g.cross_entropy(g.gelu(att), {0, 1, 2, 3, 4, 5});
    GradientMap grads = g.backward(loss);
    return std::make_pair(g.value(loss).data[0], grads.at("x").data);
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("non-finite values fault with the kernel name") {
  Graph g;
  Tensor big({1, 2});
  big.data = {3e38f, 3e38f};
  Graph::NodeId x = g.input(big);
  CHECK_THROWS_WITH_AS(g.add(x, x), doctest::Contains("add"), NumericFault);
  Tensor bad({1});
  bad.data = {std::numeric_limits<float>::quiet_NaN()};
  CHECK_THROWS_AS(g.input(bad), NumericFault);
}

TEST_CASE("straight through passes upstream gradients unchanged") {
  Tensor x0 = oracle::random_tensor({2, 3}, 110);
  Tensor b = oracle::random_tensor({3, 1}, 111);
  auto run = [&](bool with_ste) {
    Graph g;
    Graph::NodeId x = g.input(x0, "x", true);
    Graph::NodeId h = x;
    if (with_ste) {
      h = g.straight_through(
          x,
          [](const Tensor& t) {
            Tensor y = t;
            for (float& v : y.data) v = std::floor(v * 4.0f) / 4.0f;  // non-differentiable fwd
            return y;
          },
          "floor4");
    }
    Tensor l({1, 2});
    l.data = {1.0f, -2.0f};
    GradientMap grads = g.backward(g.matmul(g.matmul(g.input(l), h), g.input(b)));
    return grads.at("x").data;
  };
  // The forward outputs differ, but the STE rule makes the gradients equal
  // bitwise because the downstream multiplications never see the activations.
  CHECK(run(true) == run(false));
}

TEST_CASE("backward requires a scalar loss and named trainable leaves") {
  Graph g;
  Graph::NodeId x = g.input(oracle::random_tensor({2, 2}, 120), "x", true);
  CHECK_THROWS_AS(g.backward(x), ContractViolation);
  Graph g2;
  CHECK_THROWS_AS(g2.input(Tensor::scalar(1.0f), "", true), ContractViolation);
  Graph g3;
  g3.input(Tensor::scalar(1.0f), "dup", true);
  CHECK_THROWS_AS(g3.input(Tensor::scalar(2.0f), "dup", true), ContractViolation);
}

TEST_CASE("unreached trainable inputs get zero gradients") {
  Graph g;
  Graph::NodeId x = g.input(Tensor::from_data({1, 1}, {3.0f}), "x", true);
  g.input(oracle::random_tensor({2, 2}, 130), "unused", true);
  GradientMap grads = g.backward(g.matmul(x, x));
  CHECK(grads.at("x").data[0] == doctest::Approx(6.0));
  for (float v : grads.at("unused").data) CHECK(v == 0.0f);
}

TEST_CASE("finite difference gradient of x squared") {
  auto f = [](const std::vector<double>& p) { return p[0] * p[0]; };
  std::vector<double> g = finite_difference_gradient(f, {3.0}, 1e-3);
  CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("finite difference of a constant is zero") {
  auto f = [](const std::vector<double>&) { return 4.2; };
  for (double d : finite_difference_gradient(f, {1.0, -2.0, 0.5}, 1e-3)) CHECK(d == 0.0);
}

TEST_CASE("finite difference coordinate subset") {
  auto f = [](const std::vector<double>& p) { return p[0] * p[0] + 3.0 * p[2]; };
  std::vector<double> g = finite_difference_gradient_at(f, {2.0, 5.0, 1.0}, {2, 0}, 1e-3);
  CHECK(g[0] == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-6));
  CHECK_THROWS_AS(finite_difference_gradient_at(f, {1.0}, {5}, 1e-3), ContractViolation);
  CHECK_THROWS_AS(finite_difference_gradient(f, {1.0, 1.0, 1.0}, 0.0), ContractViolation);
}
