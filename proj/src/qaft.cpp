#include "qlab/qaft.hpp"

#include <cmath>

#include "qlab/error.hpp"
#include "qlab/lm.hpp"
#include "qlab/rng.hpp"

namespace qlab {

namespace {

constexpr uint64_t kQaftOrderStream = 11;

}  // namespace

double clip_gradients(GradientMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads.grads) {
    for (float v : g.data) sq += static_cast<double>(v) * v;
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    grads.scale_all(static_cast<float>(max_norm / norm));
  }
  return norm;
}

Tensor ste_gradient(const Tensor& upstream) {
  ensure_finite(upstream, "ste_gradient");
  return upstream;
}

double linear_decay(double lr0, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) throw ContractViolation("linear_decay: total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw ContractViolation("linear_decay: step outside [0, total_steps]");
  }
  if (!(lr0 > 0.0)) throw ContractViolation("linear_decay: lr0 must be positive");
  return lr0 * (1.0 - 0.9 * static_cast<double>(step) / static_cast<double>(total_steps));
}

void TrainConfig::validate() const {
  if (lr_grid.empty()) throw ConfigError("qaft: empty learning-rate grid");
  for (double lr : lr_grid) {
    if (!(lr > 0.0)) throw ConfigError("qaft: learning rates must be positive");
  }
  if (epochs <= 0) throw ConfigError("qaft: epochs must be positive");
  if (batch_size <= 0) throw ConfigError("qaft: batch_size must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("qaft: betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("qaft: adam_eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("qaft: weight_decay must be non-negative");
}

void adamw_step(Parameters& params, const GradientMap& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ContractViolation("adamw_step: bad learning rate");
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads.grads) {
    ensure_finite(g, "adamw gradient for " + name);
    Tensor& w = params.at(name);
    if (!w.same_shape(g)) throw ContractViolation("adamw_step: gradient shape mismatch at " + name);
    auto [mit, fresh_m] = state.m.try_emplace(name, Tensor(g.shape));
    auto [vit, fresh_v] = state.v.try_emplace(name, Tensor(g.shape));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (!m.same_shape(g) || !v.same_shape(g)) {
      throw ContractViolation("adamw_step: stale optimizer state at " + name);
    }
    for (int64_t i = 0; i < g.numel(); ++i) {
      size_t s = static_cast<size_t>(i);
      double gi = g.data[s];
      double mi = cfg.beta1 * m.data[s] + (1.0 - cfg.beta1) * gi;
      double vi = cfg.beta2 * v.data[s] + (1.0 - cfg.beta2) * gi * gi;
      m.data[s] = static_cast<float>(mi);
      v.data[s] = static_cast<float>(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      double update = mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * w.data[s];
      w.data[s] = static_cast<float>(w.data[s] - lr * update);
    }
    ensure_finite(w, "adamw update for " + name);
  }
}

QaftResult qaft_train(const Parameters& pretrained, const QuantizerSet& quantizers,
                      const TokenDataset& dataset, const TrainConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (quantizers.empty()) throw ContractViolation("qaft_train: no quantizers given");
  int64_t n_train = dataset.split_count(Split::kTrain);
  if (n_train == 0) throw ContractViolation("qaft_train: train split has no blocks");

  std::set<std::string> trainable;
  for (const auto& [name, q] : quantizers) trainable.insert(name);

  QaftResult result;
  result.quantizers = quantizers;
  result.params = pretrained;

  // Epoch 0 is the shared starting point: the round-to-nearest model.
  double start_train = eval_nll(pretrained, &quantizers, dataset, Split::kTrain);
  double start_val = eval_nll(pretrained, &quantizers, dataset, Split::kVal, cfg.eval_blocks);
  result.best_val_nll = start_val;
  result.best_lr = 0.0;
  result.best_epoch = 0;

  // Per-(lr, epoch) snapshots of the trainable coordinates, kept so the
  // test-NLL trace of the winning rate can be filled in afterwards without
  // retraining.
  std::vector<std::vector<std::vector<float>>> snapshots(cfg.lr_grid.size());
  std::vector<float> best_coords = flatten_quantized(pretrained);

  int64_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  int64_t total_steps = steps_per_epoch * cfg.epochs;

  for (size_t li = 0; li < cfg.lr_grid.size(); ++li) {
    double lr0 = cfg.lr_grid[li];
    Parameters params = pretrained;
    OptimizerState opt;
    Rng order(mix_seed(seed, kQaftOrderStream + li));
    std::vector<QaftTraceRow> lr_trace{{lr0, 0, start_train, start_val, -1.0}};
    snapshots[li].push_back(flatten_quantized(pretrained));
    // A rate only competes for the best snapshot once all its epochs finish;
    // a diverged rate is discarded wholesale.
    double lr_best_val = start_val;
    int lr_best_epoch = 0;
    bool diverged = false;
    int64_t step = 0;
    for (int epoch = 1; epoch <= cfg.epochs && !diverged; ++epoch) {
      std::vector<int64_t> order_ix(static_cast<size_t>(n_train));
      for (int64_t i = 0; i < n_train; ++i) order_ix[static_cast<size_t>(i)] = i;
      order.shuffle(order_ix);
      for (int64_t start = 0; start < n_train && !diverged; start += cfg.batch_size) {
        int64_t stop = std::min<int64_t>(start + cfg.batch_size, n_train);
        GradientMap batch;
        double loss = 0.0;
        try {
          for (int64_t bi = start; bi < stop; ++bi) {
            Graph g;
            Graph::NodeId node = build_nll_graph(
                g, params, &quantizers,
                dataset.split_block(Split::kTrain, order_ix[static_cast<size_t>(bi)]), &trainable);
            loss += static_cast<double>(g.value(node).data[0]);
            GradientMap grads = g.backward(node);
            if (bi == start) {
              batch = std::move(grads);
            } else {
              batch.accumulate(grads);
            }
          }
          batch.scale_all(1.0f / static_cast<float>(stop - start));
          clip_gradients(batch, cfg.grad_clip);
          adamw_step(params, batch, opt, linear_decay(lr0, step, total_steps), cfg);
        } catch (const NumericFault&) {
          diverged = true;
          break;
        }
        if (!std::isfinite(loss)) {
          diverged = true;
          break;
        }
        ++step;
      }
      if (diverged) break;
      double train_nll = 0.0, val_nll = 0.0;
      try {
        train_nll = eval_nll(params, &quantizers, dataset, Split::kTrain);
        val_nll = eval_nll(params, &quantizers, dataset, Split::kVal, cfg.eval_blocks);
      } catch (const NumericFault&) {
        diverged = true;
        break;
      }
      if (!std::isfinite(train_nll) || !std::isfinite(val_nll)) {
        diverged = true;
        break;
      }
      lr_trace.push_back({lr0, epoch, train_nll, val_nll, -1.0});
      snapshots[li].push_back(flatten_quantized(params));
      if (val_nll < lr_best_val) {
        lr_best_val = val_nll;
        lr_best_epoch = epoch;
      }
    }
    if (diverged) {
      result.failed_lrs.push_back(lr0);
      snapshots[li].clear();
      continue;
    }
    result.trace.insert(result.trace.end(), lr_trace.begin(), lr_trace.end());
    if (lr_best_epoch > 0 && lr_best_val < result.best_val_nll) {
      result.best_val_nll = lr_best_val;
      result.best_lr = lr0;
      result.best_epoch = lr_best_epoch;
      best_coords = snapshots[li][static_cast<size_t>(lr_best_epoch)];
    }
  }

  if (result.failed_lrs.size() == cfg.lr_grid.size()) {
    throw TrainingFault("qaft_train: every learning rate diverged");
  }

  unflatten_quantized(result.params, best_coords);

  if (cfg.trace_test_nll && result.best_lr > 0.0) {
    // Fill the test column for the selected rate, epoch by epoch.
    size_t li = 0;
    while (li < cfg.lr_grid.size() && cfg.lr_grid[li] != result.best_lr) ++li;
    Parameters probe = pretrained;
    for (auto& row : result.trace) {
      if (row.lr != result.best_lr) continue;
      unflatten_quantized(probe, snapshots[li][static_cast<size_t>(row.epoch)]);
      row.test_nll = eval_nll(probe, &quantizers, dataset, Split::kTest);
    }
  } else if (cfg.trace_test_nll) {
    // Round-to-nearest start was never beaten; report its test NLL on the
    // epoch-0 rows so the trace is still complete.
    double test0 = eval_nll(pretrained, &quantizers, dataset, Split::kTest);
    for (auto& row : result.trace) {
      if (row.epoch == 0) row.test_nll = test0;
    }
  }
  return result;
}

}  // namespace qlab
