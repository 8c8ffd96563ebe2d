#include "qlab/graph.hpp"

#include <cmath>
#include <set>
#include <utility>

#include "qlab/error.hpp"

namespace qlab {

namespace {

constexpr float kLayernormEps = 1e-5f;

// Tanh-approximation constants shared by the gelu forward and backward pass.
constexpr float kGeluRoot2OverPi = 0.7978845608028654f;
constexpr float kGeluCubic = 0.044715f;

void check_same_shape(const Tensor& a, const Tensor& b, const char* kernel) {
  if (!a.same_shape(b)) {
    throw ContractViolation(std::string(kernel) + ": operand shapes do not match");
  }
}

}  // namespace

void softmax_row(std::span<float> row) {
  if (row.empty()) throw ContractViolation("softmax_row: empty row");
  float mx = row[0];
  for (float v : row) mx = std::max(mx, v);
  double sum = 0.0;
  for (float& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  float inv = static_cast<float>(1.0 / sum);
  for (float& v : row) v *= inv;
}

void GradientMap::accumulate(const GradientMap& other) {
  if (grads.size() != other.grads.size()) {
    throw ContractViolation("GradientMap::accumulate: key sets differ");
  }
  auto it = grads.begin();
  auto jt = other.grads.begin();
  for (; it != grads.end(); ++it, ++jt) {
    if (it->first != jt->first || !it->second.same_shape(jt->second)) {
      throw ContractViolation("GradientMap::accumulate: mismatched entry " + it->first);
    }
    float* dst = it->second.data.data();
    const float* src = jt->second.data.data();
    for (int64_t i = 0; i < it->second.numel(); ++i) dst[i] += src[i];
  }
}

void GradientMap::scale_all(float c) {
  for (auto& [name, g] : grads) {
    for (float& v : g.data) v *= c;
  }
}

const Tensor& GradientMap::at(const std::string& name) const {
  auto it = grads.find(name);
  if (it == grads.end()) throw ContractViolation("GradientMap: no gradient named " + name);
  return it->second;
}

const Graph::Node& Graph::at(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
    throw ContractViolation("graph: node id out of range");
  }
  return nodes_[static_cast<size_t>(id)];
}

std::string Graph::describe(NodeId id) const {
  static const char* names[] = {"input",     "matmul", "add",       "scale",
                                "gather",    "layernorm", "gelu",   "attention",
                                "cross_entropy", "straight_through"};
  const Node& n = nodes_[static_cast<size_t>(id)];
  std::string s = names[static_cast<int>(n.op)];
  if (!n.name.empty()) s += "(" + n.name + ")";
  s += "#" + std::to_string(id);
  return s;
}

Graph::NodeId Graph::push(Node n, const std::string& kernel) {
  ensure_finite(n.value, kernel);
  n.needs_grad = n.requires_grad;
  for (NodeId in : n.in) {
    if (in >= 0 && nodes_[static_cast<size_t>(in)].needs_grad) n.needs_grad = true;
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

Graph::NodeId Graph::input(Tensor value, std::string name, bool requires_grad) {
  if (requires_grad && name.empty()) {
    throw ContractViolation("graph input: trainable inputs must be named");
  }
  if (requires_grad) {
    for (const Node& n : nodes_) {
      if (n.op == Op::kInput && n.requires_grad && n.name == name) {
        throw ContractViolation("graph input: duplicate trainable input " + name);
      }
    }
  }
  Node n;
  n.op = Op::kInput;
  n.value = std::move(value);
  n.name = std::move(name);
  n.requires_grad = requires_grad;
  std::string label = "input" + (n.name.empty() ? std::string() : "(" + n.name + ")");
  return push(std::move(n), label);
}

Graph::NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& A = at(a).value;
  const Tensor& B = at(b).value;
  if (A.rank() != 2 || B.rank() != 2) throw ContractViolation("matmul: operands must be rank 2");
  if (A.cols() != B.rows()) throw ContractViolation("matmul: inner dimensions do not match");
  int m = A.rows(), k = A.cols(), nn = B.cols();
  Tensor C({m, nn});
  for (int i = 0; i < m; ++i) {
    float* crow = C.data.data() + static_cast<size_t>(i) * nn;
    const float* arow = A.data.data() + static_cast<size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      float av = arow[l];
      const float* brow = B.data.data() + static_cast<size_t>(l) * nn;
      for (int j = 0; j < nn; ++j) crow[j] += av * brow[j];
    }
  }
  Node n;
  n.op = Op::kMatmul;
  n.in = {a, b, -1};
  n.value = std::move(C);
  return push(std::move(n), "matmul");
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& A = at(a).value;
  const Tensor& B = at(b).value;
  Tensor C;
  if (A.same_shape(B)) {
    C = A;
    for (int64_t i = 0; i < C.numel(); ++i) C.data[static_cast<size_t>(i)] += B.data[static_cast<size_t>(i)];
  } else if (A.rank() == 2 && B.rank() == 1 && A.cols() == B.shape[0]) {
    C = A;
    int r = A.rows(), c = A.cols();
    for (int i = 0; i < r; ++i) {
      float* row = C.data.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) row[j] += B.data[static_cast<size_t>(j)];
    }
  } else {
    throw ContractViolation("add: shapes must match or broadcast a vector over rows");
  }
  Node n;
  n.op = Op::kAdd;
  n.in = {a, b, -1};
  n.value = std::move(C);
  return push(std::move(n), "add");
}

Graph::NodeId Graph::scale(NodeId a, float factor) {
  if (!std::isfinite(factor)) throw ContractViolation("scale: factor must be finite");
  Tensor C = at(a).value;
  for (float& v : C.data) v *= factor;
  Node n;
  n.op = Op::kScale;
  n.in = {a, -1, -1};
  n.factor = factor;
  n.value = std::move(C);
  return push(std::move(n), "scale");
}

Graph::NodeId Graph::embedding_gather(NodeId table, std::vector<int> ids) {
  const Tensor& T = at(table).value;
  if (T.rank() != 2) throw ContractViolation("embedding_gather: table must be rank 2");
  if (ids.empty()) throw ContractViolation("embedding_gather: empty id list");
  int v = T.rows(), d = T.cols();
  for (int id : ids) {
    if (id < 0 || id >= v) throw ContractViolation("embedding_gather: id out of range");
  }
  Tensor C({static_cast<int>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    const float* src = T.data.data() + static_cast<size_t>(ids[i]) * d;
    float* dst = C.data.data() + i * static_cast<size_t>(d);
    for (int j = 0; j < d; ++j) dst[j] = src[j];
  }
  Node n;
  n.op = Op::kGather;
  n.in = {table, -1, -1};
  n.ids = std::move(ids);
  n.value = std::move(C);
  return push(std::move(n), "embedding_gather");
}

Graph::NodeId Graph::layernorm(NodeId x, NodeId gamma, NodeId beta) {
  const Tensor& X = at(x).value;
  const Tensor& G = at(gamma).value;
  const Tensor& B = at(beta).value;
  if (X.rank() != 2) throw ContractViolation("layernorm: input must be rank 2");
  int r = X.rows(), c = X.cols();
  if (G.rank() != 1 || G.shape[0] != c || B.rank() != 1 || B.shape[0] != c) {
    throw ContractViolation("layernorm: gamma/beta must be vectors of the feature size");
  }
  Tensor Y({r, c});
  std::vector<float> saved(static_cast<size_t>(r) * 2);  // mean, rstd per row
  for (int i = 0; i < r; ++i) {
    const float* row = X.data.data() + static_cast<size_t>(i) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      double dv = row[j] - mean;
      var += dv * dv;
    }
    var /= c;
    float rstd = static_cast<float>(1.0 / std::sqrt(var + kLayernormEps));
    float fmean = static_cast<float>(mean);
    saved[static_cast<size_t>(i) * 2] = fmean;
    saved[static_cast<size_t>(i) * 2 + 1] = rstd;
    float* out = Y.data.data() + static_cast<size_t>(i) * c;
    for (int j = 0; j < c; ++j) {
      float xhat = (row[j] - fmean) * rstd;
      out[j] = G.data[static_cast<size_t>(j)] * xhat + B.data[static_cast<size_t>(j)];
    }
  }
  Node n;
  n.op = Op::kLayernorm;
  n.in = {x, gamma, beta};
  n.saved = std::move(saved);
  n.value = std::move(Y);
  return push(std::move(n), "layernorm");
}

Graph::NodeId Graph::gelu(NodeId x) {
  const Tensor& X = at(x).value;
  Tensor Y = X;
  for (float& v : Y.data) {
    float u = kGeluRoot2OverPi * (v + kGeluCubic * v * v * v);
    v = 0.5f * v * (1.0f + std::tanh(u));
  }
  Node n;
  n.op = Op::kGelu;
  n.in = {x, -1, -1};
  n.value = std::move(Y);
  return push(std::move(n), "gelu");
}

Graph::NodeId Graph::causal_attention(NodeId q, NodeId k, NodeId v, int n_heads) {
  const Tensor& Q = at(q).value;
  const Tensor& K = at(k).value;
  const Tensor& V = at(v).value;
  if (Q.rank() != 2) throw ContractViolation("attention: inputs must be rank 2");
  check_same_shape(Q, K, "attention");
  check_same_shape(Q, V, "attention");
  int t = Q.rows(), d = Q.cols();
  if (n_heads <= 0 || d % n_heads != 0) {
    throw ContractViolation("attention: head count must divide the feature size");
  }
  int dh = d / n_heads;
  float rs = 1.0f / std::sqrt(static_cast<float>(dh));
  Tensor Y({t, d});
  std::vector<float> probs(static_cast<size_t>(n_heads) * t * t, 0.0f);
  std::vector<float> srow(static_cast<size_t>(t));
  for (int h = 0; h < n_heads; ++h) {
    int off = h * dh;
    float* hp = probs.data() + static_cast<size_t>(h) * t * t;
    for (int i = 0; i < t; ++i) {
      const float* qi = Q.data.data() + static_cast<size_t>(i) * d + off;
      for (int j = 0; j <= i; ++j) {
        const float* kj = K.data.data() + static_cast<size_t>(j) * d + off;
        float s = 0.0f;
        for (int e = 0; e < dh; ++e) s += qi[e] * kj[e];
        srow[static_cast<size_t>(j)] = s * rs;
      }
      softmax_row(std::span<float>(srow.data(), static_cast<size_t>(i) + 1));
      float* prow = hp + static_cast<size_t>(i) * t;
      for (int j = 0; j <= i; ++j) prow[j] = srow[static_cast<size_t>(j)];
      float* yi = Y.data.data() + static_cast<size_t>(i) * d + off;
      for (int j = 0; j <= i; ++j) {
        float p = prow[j];
        const float* vj = V.data.data() + static_cast<size_t>(j) * d + off;
        for (int e = 0; e < dh; ++e) yi[e] += p * vj[e];
      }
    }
  }
  Node n;
  n.op = Op::kAttention;
  n.in = {q, k, v};
  n.n_heads = n_heads;
  n.saved = std::move(probs);
  n.value = std::move(Y);
  return push(std::move(n), "attention");
}

Graph::NodeId Graph::cross_entropy(NodeId logits, std::vector<int> targets) {
  const Tensor& L = at(logits).value;
  if (L.rank() != 2) throw ContractViolation("cross_entropy: logits must be rank 2");
  int t = L.rows(), v = L.cols();
  if (static_cast<int>(targets.size()) != t) {
    throw ContractViolation("cross_entropy: one target per logit row required");
  }
  int included = 0;
  for (int tgt : targets) {
    if (tgt >= v) throw ContractViolation("cross_entropy: target out of range");
    if (tgt >= 0) ++included;
  }
  if (included == 0) throw ContractViolation("cross_entropy: every target is ignored");
  // Probabilities are kept for the backward pass; the loss itself is summed
  // in double via log-sum-exp so tiny target probabilities stay accurate.
  std::vector<float> probs(static_cast<size_t>(t) * v, 0.0f);
  double total = 0.0;
  for (int i = 0; i < t; ++i) {
    if (targets[static_cast<size_t>(i)] < 0) continue;
    const float* row = L.data.data() + static_cast<size_t>(i) * v;
    float mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    double lse = mx + std::log(sum);
    total += lse - row[targets[static_cast<size_t>(i)]];
    float* prow = probs.data() + static_cast<size_t>(i) * v;
    double inv = 1.0 / sum;
    for (int j = 0; j < v; ++j) {
      prow[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) * inv);
    }
  }
  Node n;
  n.op = Op::kCrossEntropy;
  n.in = {logits, -1, -1};
  n.ids = std::move(targets);
  n.saved = std::move(probs);
  n.value = Tensor::scalar(static_cast<float>(total / included));
  return push(std::move(n), "cross_entropy");
}

Graph::NodeId Graph::straight_through(NodeId x, std::function<Tensor(const Tensor&)> fwd,
                                      std::string tag) {
  if (!fwd) throw ContractViolation("straight_through: missing forward transform");
  Tensor y = fwd(at(x).value);
  if (!y.same_shape(at(x).value)) {
    throw ContractViolation("straight_through: transform changed the shape at " + tag);
  }
  Node n;
  n.op = Op::kStraightThrough;
  n.in = {x, -1, -1};
  n.ste_fwd = std::move(fwd);
  n.value = std::move(y);
  std::string label = "straight_through(" + tag + ")";
  n.name = std::move(tag);
  return push(std::move(n), label);
}

const Tensor& Graph::value(NodeId id) const { return at(id).value; }

GradientMap Graph::backward(NodeId loss) {
  const Node& ln = at(loss);
  if (ln.value.numel() != 1) throw ContractViolation("backward: loss must be a scalar");
  std::vector<Tensor> grads(nodes_.size());
  auto add_grad = [&](NodeId id, int64_t flat, float g) {
    grads[static_cast<size_t>(id)].data[static_cast<size_t>(flat)] += g;
  };
  auto ensure_alloc = [&](NodeId id) -> bool {
    if (!nodes_[static_cast<size_t>(id)].needs_grad) return false;
    Tensor& g = grads[static_cast<size_t>(id)];
    if (g.data.empty()) g = Tensor(nodes_[static_cast<size_t>(id)].value.shape);
    return true;
  };
  if (!ln.needs_grad) {
    // Loss does not depend on any trainable input: all gradients are zero.
  } else {
    ensure_alloc(loss);
    grads[static_cast<size_t>(loss)].data[0] = 1.0f;
  }
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    Tensor& g = grads[static_cast<size_t>(id)];
    if (g.data.empty()) continue;
    ensure_finite(g, "backward gradient of " + describe(id));
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kMatmul: {
        const Tensor& A = nodes_[static_cast<size_t>(n.in[0])].value;
        const Tensor& B = nodes_[static_cast<size_t>(n.in[1])].value;
        int m = A.rows(), k = A.cols(), nn = B.cols();
        if (ensure_alloc(n.in[0])) {
          Tensor& da = grads[static_cast<size_t>(n.in[0])];
          for (int i = 0; i < m; ++i) {
            const float* grow = g.data.data() + static_cast<size_t>(i) * nn;
            float* darow = da.data.data() + static_cast<size_t>(i) * k;
            for (int l = 0; l < k; ++l) {
              const float* brow = B.data.data() + static_cast<size_t>(l) * nn;
              float acc = 0.0f;
              for (int j = 0; j < nn; ++j) acc += grow[j] * brow[j];
              darow[l] += acc;
            }
          }
        }
        if (ensure_alloc(n.in[1])) {
          Tensor& db = grads[static_cast<size_t>(n.in[1])];
          for (int i = 0; i < m; ++i) {
            const float* arow = A.data.data() + static_cast<size_t>(i) * k;
            const float* grow = g.data.data() + static_cast<size_t>(i) * nn;
            for (int l = 0; l < k; ++l) {
              float av = arow[l];
              if (av == 0.0f) continue;
              float* dbrow = db.data.data() + static_cast<size_t>(l) * nn;
              for (int j = 0; j < nn; ++j) dbrow[j] += av * grow[j];
            }
          }
        }
        break;
      }
      case Op::kAdd: {
        const Tensor& A = nodes_[static_cast<size_t>(n.in[0])].value;
        const Tensor& B = nodes_[static_cast<size_t>(n.in[1])].value;
        if (ensure_alloc(n.in[0])) {
          Tensor& da = grads[static_cast<size_t>(n.in[0])];
          for (int64_t i = 0; i < g.numel(); ++i) da.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
        }
        if (ensure_alloc(n.in[1])) {
          Tensor& db = grads[static_cast<size_t>(n.in[1])];
          if (A.same_shape(B)) {
            for (int64_t i = 0; i < g.numel(); ++i) db.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
          } else {
            int r = A.rows(), c = A.cols();
            for (int i = 0; i < r; ++i) {
              const float* grow = g.data.data() + static_cast<size_t>(i) * c;
              for (int j = 0; j < c; ++j) db.data[static_cast<size_t>(j)] += grow[j];
            }
          }
        }
        break;
      }
      case Op::kScale: {
        if (ensure_alloc(n.in[0])) {
          Tensor& da = grads[static_cast<size_t>(n.in[0])];
          for (int64_t i = 0; i < g.numel(); ++i) {
            da.data[static_cast<size_t>(i)] += n.factor * g.data[static_cast<size_t>(i)];
          }
        }
        break;
      }
      case Op::kGather: {
        if (ensure_alloc(n.in[0])) {
          Tensor& dt = grads[static_cast<size_t>(n.in[0])];
          int d = dt.cols();
          for (size_t i = 0; i < n.ids.size(); ++i) {
            const float* grow = g.data.data() + i * static_cast<size_t>(d);
            float* drow = dt.data.data() + static_cast<size_t>(n.ids[i]) * d;
            for (int j = 0; j < d; ++j) drow[j] += grow[j];
          }
        }
        break;
      }
      case Op::kLayernorm: {
        const Tensor& X = nodes_[static_cast<size_t>(n.in[0])].value;
        const Tensor& G = nodes_[static_cast<size_t>(n.in[1])].value;
        int r = X.rows(), c = X.cols();
        bool wantx = ensure_alloc(n.in[0]);
        bool wantg = ensure_alloc(n.in[1]);
        bool wantb = ensure_alloc(n.in[2]);
        for (int i = 0; i < r; ++i) {
          const float* xrow = X.data.data() + static_cast<size_t>(i) * c;
          const float* grow = g.data.data() + static_cast<size_t>(i) * c;
          float mean = n.saved[static_cast<size_t>(i) * 2];
          float rstd = n.saved[static_cast<size_t>(i) * 2 + 1];
          if (wantg || wantb) {
            for (int j = 0; j < c; ++j) {
              float xhat = (xrow[j] - mean) * rstd;
              if (wantg) grads[static_cast<size_t>(n.in[1])].data[static_cast<size_t>(j)] += grow[j] * xhat;
              if (wantb) grads[static_cast<size_t>(n.in[2])].data[static_cast<size_t>(j)] += grow[j];
            }
          }
          if (wantx) {
            double dxhat_mean = 0.0, dxhat_xhat_mean = 0.0;
            for (int j = 0; j < c; ++j) {
              float xhat = (xrow[j] - mean) * rstd;
              float dxh = grow[j] * G.data[static_cast<size_t>(j)];
              dxhat_mean += dxh;
              dxhat_xhat_mean += static_cast<double>(dxh) * xhat;
            }
            dxhat_mean /= c;
            dxhat_xhat_mean /= c;
            float* dxrow = grads[static_cast<size_t>(n.in[0])].data.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) {
              float xhat = (xrow[j] - mean) * rstd;
              float dxh = grow[j] * G.data[static_cast<size_t>(j)];
              dxrow[j] += rstd * static_cast<float>(dxh - dxhat_mean - xhat * dxhat_xhat_mean);
            }
          }
        }
        break;
      }
      case Op::kGelu: {
        if (ensure_alloc(n.in[0])) {
          const Tensor& X = nodes_[static_cast<size_t>(n.in[0])].value;
          Tensor& dx = grads[static_cast<size_t>(n.in[0])];
          for (int64_t i = 0; i < X.numel(); ++i) {
            float x = X.data[static_cast<size_t>(i)];
            float u = kGeluRoot2OverPi * (x + kGeluCubic * x * x * x);
            float th = std::tanh(u);
            float du = kGeluRoot2OverPi * (1.0f + 3.0f * kGeluCubic * x * x);
            float dy = 0.5f * (1.0f + th) + 0.5f * x * (1.0f - th * th) * du;
            dx.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)] * dy;
          }
        }
        break;
      }
      case Op::kAttention: {
        const Tensor& Q = nodes_[static_cast<size_t>(n.in[0])].value;
        const Tensor& K = nodes_[static_cast<size_t>(n.in[1])].value;
        const Tensor& V = nodes_[static_cast<size_t>(n.in[2])].value;
        int t = Q.rows(), d = Q.cols();
        int nh = n.n_heads, dh = d / nh;
        float rs = 1.0f / std::sqrt(static_cast<float>(dh));
        bool wantq = ensure_alloc(n.in[0]);
        bool wantk = ensure_alloc(n.in[1]);
        bool wantv = ensure_alloc(n.in[2]);
        std::vector<float> dp(static_cast<size_t>(t));
        std::vector<float> ds(static_cast<size_t>(t));
        for (int h = 0; h < nh; ++h) {
          int off = h * dh;
          const float* hp = n.saved.data() + static_cast<size_t>(h) * t * t;
          for (int i = 0; i < t; ++i) {
            const float* prow = hp + static_cast<size_t>(i) * t;
            const float* gi = g.data.data() + static_cast<size_t>(i) * d + off;
            if (wantv) {
              Tensor& dv = grads[static_cast<size_t>(n.in[2])];
              for (int j = 0; j <= i; ++j) {
                float p = prow[j];
                if (p == 0.0f) continue;
                float* dvj = dv.data.data() + static_cast<size_t>(j) * d + off;
                for (int e = 0; e < dh; ++e) dvj[e] += p * gi[e];
              }
            }
            if (!wantq && !wantk) continue;
            double pdp = 0.0;
            for (int j = 0; j <= i; ++j) {
              const float* vj = V.data.data() + static_cast<size_t>(j) * d + off;
              float acc = 0.0f;
              for (int e = 0; e < dh; ++e) acc += gi[e] * vj[e];
              dp[static_cast<size_t>(j)] = acc;
              pdp += static_cast<double>(prow[j]) * acc;
            }
            for (int j = 0; j <= i; ++j) {
              ds[static_cast<size_t>(j)] =
                  prow[j] * (dp[static_cast<size_t>(j)] - static_cast<float>(pdp));
            }
            if (wantq) {
              float* dqi = grads[static_cast<size_t>(n.in[0])].data.data() +
                           static_cast<size_t>(i) * d + off;
              for (int j = 0; j <= i; ++j) {
                float s = ds[static_cast<size_t>(j)] * rs;
                if (s == 0.0f) continue;
                const float* kj = K.data.data() + static_cast<size_t>(j) * d + off;
                for (int e = 0; e < dh; ++e) dqi[e] += s * kj[e];
              }
            }
            if (wantk) {
              Tensor& dk = grads[static_cast<size_t>(n.in[1])];
              const float* qi = Q.data.data() + static_cast<size_t>(i) * d + off;
              for (int j = 0; j <= i; ++j) {
                float s = ds[static_cast<size_t>(j)] * rs;
                if (s == 0.0f) continue;
                float* dkj = dk.data.data() + static_cast<size_t>(j) * d + off;
                for (int e = 0; e < dh; ++e) dkj[e] += s * qi[e];
              }
            }
          }
        }
        break;
      }
      case Op::kCrossEntropy: {
        if (ensure_alloc(n.in[0])) {
          Tensor& dl = grads[static_cast<size_t>(n.in[0])];
          int t = dl.rows(), v = dl.cols();
          int included = 0;
          for (int tgt : n.ids) {
            if (tgt >= 0) ++included;
          }
          float go = g.data[0] / static_cast<float>(included);
          for (int i = 0; i < t; ++i) {
            int tgt = n.ids[static_cast<size_t>(i)];
            if (tgt < 0) continue;
            const float* prow = n.saved.data() + static_cast<size_t>(i) * v;
            float* drow = dl.data.data() + static_cast<size_t>(i) * v;
            for (int j = 0; j < v; ++j) drow[j] += go * prow[j];
            drow[tgt] -= go;
          }
        }
        break;
      }
      case Op::kStraightThrough: {
        if (ensure_alloc(n.in[0])) {
          Tensor& dx = grads[static_cast<size_t>(n.in[0])];
          for (int64_t i = 0; i < g.numel(); ++i) {
            dx.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
          }
        }
        break;
      }
    }
    if (n.op != Op::kInput) g = Tensor();  // free as soon as propagated
  }
  GradientMap gm;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op != Op::kInput || !n.requires_grad) continue;
    Tensor& g = grads[i];
    if (g.data.empty()) g = Tensor(n.value.shape);
    gm.grads[n.name] = std::move(g);
  }
  return gm;
}

}  // namespace qlab
