#pragma once

// Lagrangian-dual training for knapsack predictors.
//
// Each epoch runs minibatch SGD on the loss
//   L = BCE(logits, labels) + lambda * mean_batch max(0, sum(x_hat * w) - W)
// where x_hat is the rounded network output; the capacity-overshoot term
// backpropagates through the surrogate rounding rule. After each epoch the
// multiplier moves by lambda <- max(0, lambda + step * total_violation),
// with total_violation the sum of per-instance overshoots accumulated from
// the training passes of that epoch.
//
// Three regimes:
//   fc             - plain supervised baseline: step and lambda forced to 0.
//   ldf            - multiplier starts at lambda_init and updates every epoch.
//   ldf_pretrained - lambda frozen at 0 (and selection by validation AR)
//                    until pretrain_epochs elapse or that phase early-stops,
//                    then lambda jumps to lambda_init and updates resume.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "kpldf/eval.hpp"
#include "kpldf/instance.hpp"
#include "kpldf/nn.hpp"
#include "kpldf/rng.hpp"

namespace kpldf::ldf {

enum class Regime { fc, ldf, ldf_pretrained };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::fc: return "fc";
    case Regime::ldf: return "ldf";
    case Regime::ldf_pretrained: return "ldf_pretrained";
  }
  throw std::logic_error("unknown regime");
}

inline Regime parse_regime(const std::string& s) {
  if (s == "fc") return Regime::fc;
  if (s == "ldf") return Regime::ldf;
  if (s == "ldf_pretrained") return Regime::ldf_pretrained;
  throw std::invalid_argument("unknown regime '" + s +
                              "' (expected fc, ldf, or ldf_pretrained)");
}

struct TrainConfig {
  Regime regime = Regime::ldf;
  double learning_rate = 1e-3;
  double lagrangian_step = 1e-4;   // multiplier step s; forced 0 for fc
  double max_grad_norm = 10.0;
  double lambda_init = 1.0;        // forced 0 for fc
  double k = 25.0;                 // surrogate rounding sharpness
  std::size_t batch_size = 256;
  std::size_t n_epochs = 500;
  std::size_t pretrain_epochs = 0; // ldf_pretrained: epochs with lambda frozen
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 25;
  double selection_mu = 1.0;       // mu of the validation selection loss
  std::vector<std::size_t> hidden = {2048, 1024};
};

// Apply regime constraints and reject unusable values.
inline TrainConfig canonicalize(TrainConfig c) {
  if (c.regime == Regime::fc) {
    c.lagrangian_step = 0.0;
    c.lambda_init = 0.0;
  }
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(c.lagrangian_step >= 0.0)) throw std::invalid_argument("lagrangian_step must be >= 0");
  if (!(c.max_grad_norm > 0.0)) throw std::invalid_argument("max_grad_norm must be > 0");
  if (!(c.lambda_init >= 0.0)) throw std::invalid_argument("lambda_init must be >= 0");
  if (!(c.k > 0.0)) throw std::invalid_argument("k must be > 0");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (c.n_epochs < 1) throw std::invalid_argument("n_epochs must be >= 1");
  if (c.early_stop_patience < 1) throw std::invalid_argument("early_stop_patience must be >= 1");
  if (!(c.selection_mu >= 0.0)) throw std::invalid_argument("selection_mu must be >= 0");
  if (c.hidden.empty()) throw std::invalid_argument("need at least one hidden layer");
  if (c.regime == Regime::ldf_pretrained && c.pretrain_epochs >= c.n_epochs) {
    throw std::invalid_argument("pretrain_epochs must be < n_epochs");
  }
  return c;
}

inline nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["regime"] = regime_name(c.regime);
  j["learning_rate"] = c.learning_rate;
  j["lagrangian_step"] = c.lagrangian_step;
  j["max_grad_norm"] = c.max_grad_norm;
  j["lambda_init"] = c.lambda_init;
  j["k"] = c.k;
  j["batch_size"] = c.batch_size;
  j["n_epochs"] = c.n_epochs;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["seed"] = c.seed;
  j["early_stop_patience"] = c.early_stop_patience;
  j["selection_mu"] = c.selection_mu;
  j["hidden"] = c.hidden;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.regime = parse_regime(j.at("regime").get<std::string>());
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("lagrangian_step")) c.lagrangian_step = j.at("lagrangian_step").get<double>();
    if (j.contains("max_grad_norm")) c.max_grad_norm = j.at("max_grad_norm").get<double>();
    if (j.contains("lambda_init")) c.lambda_init = j.at("lambda_init").get<double>();
    if (j.contains("k")) c.k = j.at("k").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("n_epochs")) c.n_epochs = j.at("n_epochs").get<std::size_t>();
    if (j.contains("pretrain_epochs")) c.pretrain_epochs = j.at("pretrain_epochs").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("early_stop_patience")) c.early_stop_patience = j.at("early_stop_patience").get<std::size_t>();
    if (j.contains("selection_mu")) c.selection_mu = j.at("selection_mu").get<double>();
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad training config: ") + e.what());
  }
  return c;
}

// FNV-1a over the canonical JSON rendering; stable fingerprint for sidecars.
inline std::string config_hash(const TrainConfig& c) {
  const std::string s = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

struct MultiplierState {
  double lambda = 0.0;
  struct Entry {
    double lambda;           // value after the epoch's update
    double total_violation;  // violation sum accumulated over the epoch
  };
  std::vector<Entry> history;
};

// lambda <- max(0, lambda + s * total_violation).
inline void update_multiplier(MultiplierState& state, double total_violation,
                              double s) {
  if (!(total_violation >= 0.0)) {
    throw std::invalid_argument("total_violation must be >= 0");
  }
  state.lambda = std::max(0.0, state.lambda + s * total_violation);
  state.history.push_back({state.lambda, total_violation});
}

// Capacity overshoot max(0, sum x_i w_i - W) in raw weight units.
inline double constraint_violation(const std::vector<std::uint8_t>& xhat,
                                   const KnapsackInstance& inst) {
  if (xhat.size() != inst.size()) {
    throw std::invalid_argument("constraint_violation: length mismatch");
  }
  return std::max(0.0, selection_weight(xhat, inst) - inst.capacity);
}

// How the rounding layer is treated inside the loss. `hard` is production
// training: the violation is measured on the binary x_hat and only its
// gradient uses the surrogate. `smooth` replaces round entirely by
// s(p) = sigmoid(k (p - 0.5)), whose exact derivative is the surrogate rule;
// it exists so finite-difference checks probe the same graph the analytic
// gradient differentiates.
enum class RoundMode { hard, smooth };

struct LossResult {
  double loss = 0.0;
  double bce = 0.0;
  double violation_sum = 0.0;  // sum over the batch, raw weight units
  nn::Matrix grad_logits;
};

inline LossResult lagrangian_loss(const nn::ForwardTrace& trace,
                                  const nn::Matrix& labels,
                                  const std::vector<const LabeledInstance*>& batch,
                                  double lambda, double k,
                                  RoundMode mode = RoundMode::hard) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  const auto B = trace.logits.rows();
  if (B != static_cast<Eigen::Index>(batch.size())) {
    throw std::invalid_argument("lagrangian_loss: batch size mismatch");
  }
  nn::BceResult bce = nn::bce_loss(trace.logits, labels);

  LossResult r;
  r.bce = bce.loss;
  r.grad_logits = std::move(bce.grad_logits);

  const double batch_n = static_cast<double>(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const KnapsackInstance& inst = batch[static_cast<std::size_t>(i)]->instance;
    double chosen_w = 0.0;
    for (Eigen::Index j = 0; j < trace.rounded.cols(); ++j) {
      const double x = mode == RoundMode::hard
                           ? trace.rounded(i, j)
                           : nn::sigmoid(k * (trace.probs(i, j) - 0.5));
      chosen_w += x * inst.weights[static_cast<std::size_t>(j)];
    }
    const double over = chosen_w - inst.capacity;
    if (over > 0.0) {
      r.violation_sum += over;
      // d(loss)/d(x_j) = lambda * w_j / B while the constraint is violated;
      // chain through the surrogate rounding rule, then the sigmoid.
      if (lambda > 0.0) {
        for (Eigen::Index j = 0; j < trace.rounded.cols(); ++j) {
          const double p = trace.probs(i, j);
          const double dxdp = nn::surrogate_round_grad(p, k);
          const double dldx =
              lambda * inst.weights[static_cast<std::size_t>(j)] / batch_n;
          r.grad_logits(i, j) += dldx * dxdp * p * (1.0 - p);
        }
      }
    }
  }
  // With lambda == 0 the loss is bit-identical to plain BCE; skipping the
  // multiply keeps that exact.
  r.loss = lambda > 0.0 ? r.bce + lambda * (r.violation_sum / batch_n) : r.bce;
  return r;
}

struct EpochLog {
  std::size_t epoch = 0;        // 1-based
  double lambda = 0.0;          // after this epoch's multiplier update
  double total_violation = 0.0;
  double train_loss = 0.0;      // per-instance mean over the epoch
  double val_ar = 0.0;
  double val_mu_loss = 0.0;
  double val_violation_rate = 0.0;  // fraction of validation instances
  double wall_clock_s = 0.0;
};

inline nlohmann::ordered_json epoch_log_to_json(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["lambda"] = e.lambda;
  j["total_violation"] = e.total_violation;
  j["train_loss"] = e.train_loss;
  j["val_ar"] = e.val_ar;
  j["val_mu_loss"] = e.val_mu_loss;
  j["val_violation_rate"] = e.val_violation_rate;
  j["wall_clock_s"] = e.wall_clock_s;
  return j;
}

struct TrainResult {
  nn::ModelParams params;       // state after the last epoch run
  nn::ModelParams best_params;  // minimizer of the selection metric
  std::size_t best_epoch = 0;   // 1-based epoch of best_params
  double best_metric = std::numeric_limits<double>::infinity();
  MultiplierState multiplier;
  std::vector<EpochLog> log;
  bool converged = false;            // early-stop rule fired after unfreezing
  std::size_t convergence_epoch = 0; // == best_epoch when converged
  std::size_t pretrain_end = 0;      // epochs spent with lambda frozen
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Run the full training loop. Deterministic given (dataset, config): epoch
// shuffles draw from per-epoch substreams of config.seed, and initialization
// draws from config.seed itself.
inline TrainResult train(const Dataset& ds, const TrainConfig& raw_config,
                         const EpochCallback& on_epoch = {}) {
  const TrainConfig cfg = canonicalize(raw_config);
  if (ds.items.empty()) throw std::invalid_argument("train: empty dataset");
  if (ds.split.train.empty() || ds.split.val.empty()) {
    throw std::invalid_argument("train: need non-empty train and val splits");
  }
  for (std::uint64_t idx : ds.split.train) {
    if (!ds.items.at(idx).labeled()) {
      throw std::invalid_argument("train: instance " +
                                  std::to_string(ds.items[idx].instance.id) +
                                  " is unlabeled");
    }
  }

  const std::size_t n_items = ds.items.front().instance.size();
  TrainResult res;
  res.params = nn::init_params(n_items, cfg.hidden, cfg.seed);
  nn::AdamState adam = nn::AdamState::init(res.params, cfg.learning_rate);

  // Multiplier bookkeeping. In the pretrained regime lambda starts frozen at
  // zero and the selection metric is the validation AR, exactly as for the
  // plain supervised baseline. pretrain_epochs == 0 means no frozen phase.
  bool frozen = cfg.regime == Regime::ldf_pretrained && cfg.pretrain_epochs > 0;
  res.multiplier.lambda = frozen || cfg.regime == Regime::fc ? 0.0 : cfg.lambda_init;

  bool select_by_ar = cfg.regime == Regime::fc || frozen;
  double best_metric = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_best = 0;

  std::vector<std::uint64_t> order(ds.split.train.begin(), ds.split.train.end());

  for (std::size_t epoch = 1; epoch <= cfg.n_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    Rng shuffle_rng = Rng::substream(cfg.seed, epoch);
    shuffle_rng.shuffle(order);

    eval::KahanSum loss_sum;       // batch loss * batch size
    eval::KahanSum violation_sum;  // raw weight units
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<const LabeledInstance*> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&ds.items[order[i]]);

      const nn::Matrix X = nn::make_input_matrix(batch);
      const nn::Matrix Y = nn::make_label_matrix(batch);
      nn::ForwardTrace trace = nn::forward(res.params, X, nn::Mode::train);
      LossResult loss = lagrangian_loss(trace, Y, batch, res.multiplier.lambda,
                                        cfg.k, RoundMode::hard);
      if (!std::isfinite(loss.loss)) {
        throw std::runtime_error(
            "non-finite training loss at epoch " + std::to_string(epoch) +
            ", batch " + std::to_string(start / cfg.batch_size));
      }
      loss_sum.add(loss.loss * static_cast<double>(batch.size()));
      violation_sum.add(loss.violation_sum);

      nn::Gradients grads = nn::backward(res.params, trace, loss.grad_logits);
      nn::clip_global_norm(grads, cfg.max_grad_norm);
      nn::adam_step(res.params, grads, adam);
    }

    const double epoch_violation = violation_sum.value();
    if (frozen) {
      res.multiplier.history.push_back({0.0, epoch_violation});
    } else {
      update_multiplier(res.multiplier, epoch_violation, cfg.lagrangian_step);
    }

    const eval::SplitMetrics val = eval::evaluate_split_metrics(
        res.params, ds, ds.split.val, cfg.selection_mu);

    EpochLog entry;
    entry.epoch = epoch;
    entry.lambda = res.multiplier.lambda;
    entry.total_violation = epoch_violation;
    entry.train_loss = loss_sum.value() / static_cast<double>(order.size());
    entry.val_ar = val.ar;
    entry.val_mu_loss = val.mu_loss;
    entry.val_violation_rate = val.violation_rate;
    entry.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    res.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    const double metric = select_by_ar ? val.ar : val.mu_loss;
    if (metric < best_metric) {
      best_metric = metric;
      res.best_params = res.params;
      res.best_epoch = epoch;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
    }

    const bool phase_done = epochs_since_best >= cfg.early_stop_patience;
    if (frozen && (epoch >= cfg.pretrain_epochs || phase_done)) {
      // Unfreeze: the multiplier jumps to its configured start, selection
      // switches to the mu-loss, and best tracking restarts so the reported
      // model comes from the constrained phase.
      frozen = false;
      select_by_ar = false;
      res.multiplier.lambda = cfg.lambda_init;
      res.pretrain_end = epoch;
      best_metric = std::numeric_limits<double>::infinity();
      res.best_epoch = 0;
      epochs_since_best = 0;
      continue;
    }
    if (phase_done) {
      res.converged = true;
      res.convergence_epoch = res.best_epoch;
      break;
    }
  }

  res.best_metric = best_metric;
  if (res.best_epoch == 0) {
    // Degenerate but possible: the cap landed exactly on the unfreeze epoch.
    res.best_params = res.params;
    res.best_epoch = res.log.size();
    res.best_metric = select_by_ar ? res.log.back().val_ar : res.log.back().val_mu_loss;
  }
  return res;
}

inline void write_epoch_log(const std::filesystem::path& path,
                            const std::vector<EpochLog>& log) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& e : log) f << epoch_log_to_json(e).dump() << "\n";
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace kpldf::ldf
