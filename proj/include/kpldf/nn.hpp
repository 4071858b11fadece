#pragma once

// Minimal dense-network engine sized for the knapsack predictor: dense
// layers, batch normalization, ReLU, a sigmoid+round output with a surrogate
// backward rule, binary cross entropy on logits, Adam, and global-norm
// gradient clipping. Backward passes are written out by hand; Eigen supplies
// the matrix arithmetic.
//
// Layout of a model for n items: input [w_1..w_n, v_1..v_n, W] of width
// 2n+1, two (by default 2048- and 1024-wide) hidden layers computing
// dense -> batchnorm -> ReLU, and a dense output layer producing one logit
// per item.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "kpldf/instance.hpp"
#include "kpldf/rng.hpp"

namespace kpldf::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Array = Eigen::ArrayXXd;

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.1;

enum class Mode { train, eval };

struct DenseLayer {
  Matrix weights;  // out x in
  RowVector bias;  // 1 x out
};

struct BatchNormLayer {
  RowVector gamma, beta;
  RowVector running_mean, running_var;
};

struct ModelParams {
  std::uint64_t n_items = 0;
  std::vector<std::size_t> layer_dims;  // input, hidden..., output widths
  std::vector<DenseLayer> dense;        // hidden layers + output layer
  std::vector<BatchNormLayer> bn;       // one per hidden layer
  std::uint64_t rng_seed = 0;

  std::size_t input_width() const { return layer_dims.front(); }
  std::size_t n_hidden() const { return layer_dims.size() - 2; }
};

inline void validate_params(const ModelParams& p) {
  if (p.layer_dims.size() < 3) {
    throw std::invalid_argument("model needs at least one hidden layer");
  }
  if (p.dense.size() != p.layer_dims.size() - 1 ||
      p.bn.size() != p.layer_dims.size() - 2) {
    throw std::invalid_argument("layer count mismatch");
  }
  for (std::size_t l = 0; l < p.dense.size(); ++l) {
    const auto out = static_cast<Eigen::Index>(p.layer_dims[l + 1]);
    const auto in = static_cast<Eigen::Index>(p.layer_dims[l]);
    if (p.dense[l].weights.rows() != out || p.dense[l].weights.cols() != in ||
        p.dense[l].bias.cols() != out) {
      throw std::invalid_argument("dense layer " + std::to_string(l) +
                                  " has inconsistent dimensions");
    }
  }
  for (std::size_t l = 0; l < p.bn.size(); ++l) {
    const auto width = static_cast<Eigen::Index>(p.layer_dims[l + 1]);
    const auto& b = p.bn[l];
    if (b.gamma.cols() != width || b.beta.cols() != width ||
        b.running_mean.cols() != width || b.running_var.cols() != width) {
      throw std::invalid_argument("batchnorm layer " + std::to_string(l) +
                                  " has inconsistent dimensions");
    }
    if ((b.running_var.array() < 0.0).any()) {
      throw std::invalid_argument("batchnorm layer " + std::to_string(l) +
                                  " has negative running variance");
    }
  }
}

// Weights uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero,
// gamma 1, beta 0, running mean 0, running variance 1. Entries are drawn
// from MT19937-64 in row-major order, layer by layer.
inline ModelParams init_params(std::size_t n_items,
                               const std::vector<std::size_t>& hidden,
                               std::uint64_t seed) {
  if (n_items < 1) throw std::invalid_argument("n_items must be >= 1");
  if (hidden.empty()) throw std::invalid_argument("need at least one hidden layer");

  ModelParams p;
  p.n_items = n_items;
  p.rng_seed = seed;
  p.layer_dims.push_back(2 * n_items + 1);
  for (std::size_t h : hidden) p.layer_dims.push_back(h);
  p.layer_dims.push_back(n_items);

  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < p.layer_dims.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(p.layer_dims[l]);
    const auto out = static_cast<Eigen::Index>(p.layer_dims[l + 1]);
    DenseLayer layer;
    layer.weights.resize(out, in);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) {
        layer.weights(r, c) = bound * (2.0 * rng.next_double() - 1.0);
      }
    }
    layer.bias = RowVector::Zero(out);
    p.dense.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l + 2 < p.layer_dims.size(); ++l) {
    const auto width = static_cast<Eigen::Index>(p.layer_dims[l + 1]);
    BatchNormLayer b;
    b.gamma = RowVector::Ones(width);
    b.beta = RowVector::Zero(width);
    b.running_mean = RowVector::Zero(width);
    b.running_var = RowVector::Ones(width);
    p.bn.push_back(std::move(b));
  }
  return p;
}

inline ModelParams init_params(std::size_t n_items, std::uint64_t seed) {
  return init_params(n_items, {2048, 1024}, seed);
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Input row for one instance: [w_1..w_n, v_1..v_n, W].
inline Matrix make_input_matrix(const std::vector<const LabeledInstance*>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const std::size_t n = batch.front()->instance.size();
  Matrix X(batch.size(), 2 * n + 1);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const KnapsackInstance& inst = batch[b]->instance;
    if (inst.size() != n) throw std::invalid_argument("ragged batch");
    for (std::size_t i = 0; i < n; ++i) X(b, i) = inst.weights[i];
    for (std::size_t i = 0; i < n; ++i) X(b, n + i) = inst.values[i];
    X(b, 2 * n) = inst.capacity;
  }
  return X;
}

inline Matrix make_label_matrix(const std::vector<const LabeledInstance*>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const std::size_t n = batch.front()->instance.size();
  Matrix Y(batch.size(), n);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (!batch[b]->labeled()) {
      throw std::invalid_argument("instance " +
                                  std::to_string(batch[b]->instance.id) +
                                  " is unlabeled");
    }
    for (std::size_t i = 0; i < n; ++i) {
      Y(b, i) = static_cast<double>(batch[b]->label[i]);
    }
  }
  return Y;
}

struct ForwardTrace {
  Mode mode = Mode::eval;
  Matrix input;
  // Per hidden layer.
  std::vector<Matrix> z;       // dense pre-activation
  std::vector<RowVector> mean; // normalization statistics actually used
  std::vector<RowVector> var;
  std::vector<Matrix> norm;    // (z - mean) / sqrt(var + eps)
  std::vector<Matrix> bn_out;  // gamma * norm + beta
  std::vector<Matrix> act;     // relu(bn_out)
  Matrix logits;
  Matrix probs;    // sigmoid(logits)
  Matrix rounded;  // 0/1, probs >= 0.5 rounds up
};

// In train mode batch statistics normalize the batch and running statistics
// move with momentum 0.1; eval mode uses running statistics and leaves the
// model untouched.
inline ForwardTrace forward(ModelParams& params, const Matrix& X, Mode mode) {
  validate_params(params);
  if (X.cols() != static_cast<Eigen::Index>(params.input_width())) {
    throw std::invalid_argument(
        "input width " + std::to_string(X.cols()) + " does not match model (" +
        std::to_string(params.input_width()) + ")");
  }
  const std::size_t n_hidden = params.n_hidden();
  ForwardTrace t;
  t.mode = mode;
  t.input = X;
  t.z.resize(n_hidden);
  t.mean.resize(n_hidden);
  t.var.resize(n_hidden);
  t.norm.resize(n_hidden);
  t.bn_out.resize(n_hidden);
  t.act.resize(n_hidden);

  const Matrix* cur = &X;
  const double batch = static_cast<double>(X.rows());
  for (std::size_t l = 0; l < n_hidden; ++l) {
    t.z[l].noalias() = (*cur) * params.dense[l].weights.transpose();
    t.z[l].rowwise() += params.dense[l].bias;

    BatchNormLayer& bn = params.bn[l];
    if (mode == Mode::train) {
      t.mean[l] = t.z[l].colwise().mean();
      Matrix centered = t.z[l].rowwise() - t.mean[l];
      t.var[l] = centered.array().square().colwise().mean().matrix();
      bn.running_mean = (1.0 - kBnMomentum) * bn.running_mean + kBnMomentum * t.mean[l];
      bn.running_var = (1.0 - kBnMomentum) * bn.running_var + kBnMomentum * t.var[l];
      t.norm[l] = (centered.array().rowwise() /
                   (t.var[l].array() + kBnEpsilon).sqrt()).matrix();
      (void)batch;
    } else {
      t.mean[l] = bn.running_mean;
      t.var[l] = bn.running_var;
      t.norm[l] = ((t.z[l].rowwise() - t.mean[l]).array().rowwise() /
                   (t.var[l].array() + kBnEpsilon).sqrt()).matrix();
    }
    t.bn_out[l] = (t.norm[l].array().rowwise() * bn.gamma.array()).matrix();
    t.bn_out[l].rowwise() += bn.beta;
    t.act[l] = t.bn_out[l].cwiseMax(0.0);
    cur = &t.act[l];
  }

  t.logits.noalias() = (*cur) * params.dense.back().weights.transpose();
  t.logits.rowwise() += params.dense.back().bias;
  t.probs = t.logits.unaryExpr([](double z) { return sigmoid(z); });
  t.rounded = (t.probs.array() >= 0.5).cast<double>().matrix();
  return t;
}

// Eval-mode forward never writes to the model; this wrapper makes that
// usable from const contexts.
inline ForwardTrace forward_eval(const ModelParams& params, const Matrix& X) {
  return forward(const_cast<ModelParams&>(params), X, Mode::eval);
}

// Surrogate derivative substituted for round() during backprop:
//   s'(x) = k e^{-k(x-0.5)} / (e^{-k(x-0.5)} + 1)^2
// evaluated through e^{-k|x-0.5|} so it is exactly symmetric about 0.5 and
// never overflows. Peak value is k/4 at x = 0.5.
inline double surrogate_round_grad(double x, double k) {
  const double t = std::exp(-k * std::abs(x - 0.5));
  const double denom = 1.0 + t;
  return k * t / (denom * denom);
}

inline Matrix surrogate_round_backward(const Matrix& p, const Matrix& upstream,
                                       double k) {
  if (p.rows() != upstream.rows() || p.cols() != upstream.cols()) {
    throw std::invalid_argument("surrogate_round_backward: shape mismatch");
  }
  return upstream.binaryExpr(
      p, [k](double g, double x) { return g * surrogate_round_grad(x, k); });
}

struct BceResult {
  double loss = 0.0;
  Matrix grad_logits;
};

// Mean over the batch of the per-instance sum over items, computed in the
// numerically stable logit form.
inline BceResult bce_loss(const Matrix& logits, const Matrix& labels) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols()) {
    throw std::invalid_argument("bce_loss: shape mismatch");
  }
  const double batch = static_cast<double>(logits.rows());
  BceResult r;
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double z = logits(i, j);
      const double y = labels(i, j);
      total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
  }
  r.loss = total / batch;
  r.grad_logits =
      (logits.unaryExpr([](double z) { return sigmoid(z); }) - labels) / batch;
  return r;
}

struct Gradients {
  std::vector<Matrix> dense_w;
  std::vector<RowVector> dense_b;
  std::vector<RowVector> bn_gamma;
  std::vector<RowVector> bn_beta;

  static Gradients zeros_like(const ModelParams& p) {
    Gradients g;
    for (const auto& d : p.dense) {
      g.dense_w.push_back(Matrix::Zero(d.weights.rows(), d.weights.cols()));
      g.dense_b.push_back(RowVector::Zero(d.bias.cols()));
    }
    for (const auto& b : p.bn) {
      g.bn_gamma.push_back(RowVector::Zero(b.gamma.cols()));
      g.bn_beta.push_back(RowVector::Zero(b.beta.cols()));
    }
    return g;
  }
};

// Backprop from d(loss)/d(logits) to all parameters. The batchnorm backward
// differentiates through the batch statistics in train mode and treats the
// running statistics as constants in eval mode.
inline Gradients backward(const ModelParams& params, const ForwardTrace& t,
                          const Matrix& dlogits) {
  const std::size_t n_hidden = params.n_hidden();
  Gradients g = Gradients::zeros_like(params);
  const double batch = static_cast<double>(t.input.rows());

  const Matrix& last_act = n_hidden > 0 ? t.act[n_hidden - 1] : t.input;
  g.dense_w.back().noalias() = dlogits.transpose() * last_act;
  g.dense_b.back() = dlogits.colwise().sum();
  Matrix dact = dlogits * params.dense.back().weights;

  for (std::size_t l = n_hidden; l-- > 0;) {
    // ReLU: pass-through where the pre-activation was positive.
    Matrix dbn =
        ((t.bn_out[l].array() > 0.0).cast<double>() * dact.array()).matrix();
    g.bn_gamma[l] = (dbn.array() * t.norm[l].array()).colwise().sum().matrix();
    g.bn_beta[l] = dbn.colwise().sum();
    Matrix dnorm = (dbn.array().rowwise() * params.bn[l].gamma.array()).matrix();

    const Eigen::Array<double, 1, Eigen::Dynamic> denom =
        (t.var[l].array() + kBnEpsilon).sqrt();
    Matrix dz;
    if (t.mode == Mode::train) {
      Matrix centered = t.z[l].rowwise() - t.mean[l];
      const Eigen::Array<double, 1, Eigen::Dynamic> dvar =
          (dnorm.array() * centered.array()).colwise().sum() * (-0.5) /
          (denom * denom * denom);
      const Eigen::Array<double, 1, Eigen::Dynamic> dmean =
          -(dnorm.array().rowwise() / denom).colwise().sum() +
          dvar * (centered.array().colwise().sum() * (-2.0 / batch));
      dz = (dnorm.array().rowwise() / denom).matrix();
      dz.array() += centered.array().rowwise() * (dvar * (2.0 / batch));
      dz.array().rowwise() += dmean * (1.0 / batch);
    } else {
      dz = (dnorm.array().rowwise() / denom).matrix();
    }

    const Matrix& prev = (l == 0) ? t.input : t.act[l - 1];
    g.dense_w[l].noalias() = dz.transpose() * prev;
    g.dense_b[l] = dz.colwise().sum();
    if (l > 0) dact = dz * params.dense[l].weights;
  }
  return g;
}

// Global L2 norm across every gradient tensor; if it exceeds max_norm all
// gradients are scaled by max_norm/norm. Returns the pre-clip norm.
inline double clip_global_norm(Gradients& g, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("max_norm must be > 0");
  double sumsq = 0.0;
  for (const auto& m : g.dense_w) sumsq += m.squaredNorm();
  for (const auto& v : g.dense_b) sumsq += v.squaredNorm();
  for (const auto& v : g.bn_gamma) sumsq += v.squaredNorm();
  for (const auto& v : g.bn_beta) sumsq += v.squaredNorm();
  const double norm = std::sqrt(sumsq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& m : g.dense_w) m *= scale;
    for (auto& v : g.dense_b) v *= scale;
    for (auto& v : g.bn_gamma) v *= scale;
    for (auto& v : g.bn_beta) v *= scale;
  }
  return norm;
}

struct AdamState {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<Matrix> m_w, v_w;
  std::vector<RowVector> m_b, v_b, m_gamma, v_gamma, m_beta, v_beta;

  static AdamState init(const ModelParams& p, double learning_rate) {
    AdamState s;
    s.alpha = learning_rate;
    for (const auto& d : p.dense) {
      s.m_w.push_back(Matrix::Zero(d.weights.rows(), d.weights.cols()));
      s.v_w.push_back(Matrix::Zero(d.weights.rows(), d.weights.cols()));
      s.m_b.push_back(RowVector::Zero(d.bias.cols()));
      s.v_b.push_back(RowVector::Zero(d.bias.cols()));
    }
    for (const auto& b : p.bn) {
      s.m_gamma.push_back(RowVector::Zero(b.gamma.cols()));
      s.v_gamma.push_back(RowVector::Zero(b.gamma.cols()));
      s.m_beta.push_back(RowVector::Zero(b.beta.cols()));
      s.v_beta.push_back(RowVector::Zero(b.beta.cols()));
    }
    return s;
  }
};

namespace detail {
template <typename Tensor>
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                 const AdamState& s, double bc1, double bc2) {
  m = s.beta1 * m + (1.0 - s.beta1) * grad;
  v = (s.beta2 * v.array() + (1.0 - s.beta2) * grad.array().square()).matrix();
  param.array() -=
      s.alpha * (m.array() / bc1) / ((v.array() / bc2).sqrt() + s.epsilon);
}
}  // namespace detail

// One Adam step with bias correction over all parameter tensors.
inline void adam_step(ModelParams& params, const Gradients& g, AdamState& s) {
  s.t += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t l = 0; l < params.dense.size(); ++l) {
    detail::adam_update(params.dense[l].weights, g.dense_w[l], s.m_w[l],
                        s.v_w[l], s, bc1, bc2);
    detail::adam_update(params.dense[l].bias, g.dense_b[l], s.m_b[l], s.v_b[l],
                        s, bc1, bc2);
  }
  for (std::size_t l = 0; l < params.bn.size(); ++l) {
    detail::adam_update(params.bn[l].gamma, g.bn_gamma[l], s.m_gamma[l],
                        s.v_gamma[l], s, bc1, bc2);
    detail::adam_update(params.bn[l].beta, g.bn_beta[l], s.m_beta[l],
                        s.v_beta[l], s, bc1, bc2);
  }
}

}  // namespace kpldf::nn
