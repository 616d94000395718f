#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace casa {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// A learnable tensor with its accumulated gradient.
struct Tensor {
  Mat value;
  Mat grad;

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  void zero_grad() { grad.setZero(); }
};

enum class Init { Zeros, Xavier, Normal };

/// Named parameter storage. Node-based map, so `Tensor*` handles stay valid
/// for the lifetime of the set.
class ParameterSet {
public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Tensor* add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init, Rng& rng,
              double scale = 0.1) {
    if (tensors_.count(name)) throw std::logic_error("duplicate parameter: " + name);
    Tensor t;
    t.value = Mat::Zero(rows, cols);
    t.grad = Mat::Zero(rows, cols);
    switch (init) {
      case Init::Zeros:
        break;
      case Init::Xavier: {
        double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (Eigen::Index c = 0; c < cols; ++c)
          for (Eigen::Index r = 0; r < rows; ++r) t.value(r, c) = dist(rng);
        break;
      }
      case Init::Normal: {
        std::normal_distribution<double> dist(0.0, scale);
        for (Eigen::Index c = 0; c < cols; ++c)
          for (Eigen::Index r = 0; r < rows; ++r) t.value(r, c) = dist(rng);
        break;
      }
    }
    return &tensors_.emplace(name, std::move(t)).first->second;
  }

  Tensor& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }

  std::map<std::string, Tensor>& tensors() { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  void zero_grad() {
    for (auto& [_, t] : tensors_) t.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  std::map<std::string, Mat> snapshot() const {
    std::map<std::string, Mat> out;
    for (const auto& [name, t] : tensors_) out.emplace(name, t.value);
    return out;
  }

  void restore(const std::map<std::string, Mat>& values) {
    for (auto& [name, t] : tensors_) {
      auto it = values.find(name);
      if (it == values.end()) throw std::runtime_error("missing tensor in snapshot: " + name);
      if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
        throw std::runtime_error("shape mismatch for tensor: " + name);
      t.value = it->second;
    }
  }

  bool all_finite() const {
    for (const auto& [_, t] : tensors_)
      if (!t.value.allFinite()) return false;
    return true;
  }

private:
  std::map<std::string, Tensor> tensors_;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Mat sigmoid(const Mat& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

inline Mat tanh(const Mat& x) { return x.array().tanh().matrix(); }

/// Numerically stable log-softmax of a vector.
inline Vec log_softmax(const Vec& logits) {
  double m = logits.maxCoeff();
  double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

inline Vec softmax(const Vec& logits) { return log_softmax(logits).array().exp().matrix(); }

/// Softmax along each row of `scores`, restricted to the columns in
/// [begin, begin + count). Writes into the same block of `out`.
inline void row_softmax_block(const Mat& scores, Eigen::Index begin, Eigen::Index count, Mat& out) {
  auto block = scores.middleCols(begin, count);
  Vec row_max = block.rowwise().maxCoeff();
  Mat e = (block.colwise() - row_max).array().exp().matrix();
  Vec denom = e.rowwise().sum();
  out.middleCols(begin, count) = e.array().colwise() / denom.array();
}

/// Backward of `row_softmax_block`: d_scores = w * (d_w - rowsum(w * d_w)).
inline void row_softmax_block_backward(const Mat& weights, const Mat& d_weights, Eigen::Index begin,
                                       Eigen::Index count, Mat& d_scores) {
  auto w = weights.middleCols(begin, count).array();
  auto dw = d_weights.middleCols(begin, count).array();
  Vec dot = (w * dw).matrix().rowwise().sum();
  d_scores.middleCols(begin, count) = (w * (dw.colwise() - dot.array())).matrix();
}

/// Adam with bias correction.
class Adam {
public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params) {
    ++t_;
    double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params.tensors()) {
      auto [it, inserted] = moments_.try_emplace(name);
      if (inserted) {
        it->second.first = Mat::Zero(p.rows(), p.cols());
        it->second.second = Mat::Zero(p.rows(), p.cols());
      }
      Mat& m = it->second.first;
      Mat& v = it->second.second;
      m = beta1_ * m + (1.0 - beta1_) * p.grad;
      v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseAbs2();
      p.value.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }

  std::int64_t steps() const { return t_; }

private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments_;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, t] : params.tensors()) sq += t.grad.squaredNorm();
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto& [_, t] : params.tensors()) t.grad *= s;
  }
  return norm;
}

/// Inverted dropout mask (entries 0 or 1/(1-p)).
inline Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat mask(rows, cols);
  if (p <= 0.0) {
    mask.setOnes();
    return mask;
  }
  std::bernoulli_distribution keep(1.0 - p);
  double s = 1.0 / (1.0 - p);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) mask(r, c) = keep(rng) ? s : 0.0;
  return mask;
}

}  // namespace casa
