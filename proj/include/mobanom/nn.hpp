#pragma once

// Minimal reverse-mode layer engine: affine, ReLU, sigmoid and first-order
// graph convolution layers, softmax cross-entropy and binary cross-entropy
// losses, Adam with decoupled weight decay, and a finite-difference checker.
//
// Activations are batch-major: one sample per row. Graph convolution inputs
// are node-major within a row, (node_0 features, node_1 features, ...).

#include "mobanom/core.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <functional>
#include <memory>
#include <random>

namespace mobanom::nn {

/// Portable uniform draw in [0, 1) from the raw 64-bit engine output.
inline double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
};

enum class Init { He, Xavier };

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Matrix forward(const Matrix& x) = 0;
  /// Takes dLoss/dOutput of the last forward call, accumulates parameter
  /// gradients and returns dLoss/dInput.
  virtual Matrix backward(const Matrix& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
  virtual std::string tag() const = 0;
  virtual nlohmann::json to_json() const { return {{"type", tag()}}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Affine final : public Layer {
 public:
  Affine(Eigen::Index in, Eigen::Index out)
      : w_{"W", Matrix::Zero(in, out), Matrix::Zero(in, out)},
        b_{"b", Matrix::Zero(1, out), Matrix::Zero(1, out)} {}

  void init(Init kind, std::mt19937_64& rng) {
    const double fan_in = double(w_.value.rows()), fan_out = double(w_.value.cols());
    const double limit =
        kind == Init::He ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index i = 0; i < w_.value.size(); ++i)
      w_.value.data()[i] = uniform(rng, -limit, limit);
    b_.value.setZero();
  }

  Matrix forward(const Matrix& x) override {
    if (x.cols() != w_.value.rows())
      throw DataError("affine: expected width " + std::to_string(w_.value.rows()) + ", got " +
                      std::to_string(x.cols()));
    input_ = x;
    return (x * w_.value).rowwise() + b_.value.row(0);
  }

  Matrix backward(const Matrix& g) override {
    w_.grad += input_.transpose() * g;
    b_.grad += g.colwise().sum();
    return g * w_.value.transpose();
  }

  std::vector<Param*> params() override { return {&w_, &b_}; }
  std::string tag() const override { return "affine"; }
  nlohmann::json to_json() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Affine>(*this); }

  Eigen::Index in_width() const { return w_.value.rows(); }
  Eigen::Index out_width() const { return w_.value.cols(); }
  Matrix& weight() { return w_.value; }
  Matrix& bias() { return b_.value; }
  const Matrix& weight() const { return w_.value; }
  const Matrix& bias() const { return b_.value; }

 private:
  Param w_, b_;
  Matrix input_;
};

class ReLU final : public Layer {
 public:
  Matrix forward(const Matrix& x) override {
    mask_ = (x.array() > 0.0).cast<double>();
    return x.cwiseMax(0.0);
  }
  Matrix backward(const Matrix& g) override { return g.cwiseProduct(mask_); }
  std::string tag() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  Matrix mask_;
};

class Sigmoid final : public Layer {
 public:
  Matrix forward(const Matrix& x) override {
    out_ = x.unaryExpr([](double v) {
      return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    return out_;
  }
  Matrix backward(const Matrix& g) override {
    return g.cwiseProduct((out_.array() * (1.0 - out_.array())).matrix());
  }
  std::string tag() const override { return "sigmoid"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }

 private:
  Matrix out_;
};

/// H' = A H W per sample, A a fixed N x N propagation operator.
class GraphConv final : public Layer {
 public:
  GraphConv(Matrix adjacency, Eigen::Index in_features, Eigen::Index out_features)
      : adj_(std::move(adjacency)),
        w_{"W", Matrix::Zero(in_features, out_features), Matrix::Zero(in_features, out_features)} {}

  void init(std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / double(w_.value.rows()));
    for (Eigen::Index i = 0; i < w_.value.size(); ++i)
      w_.value.data()[i] = uniform(rng, -limit, limit);
  }

  Matrix forward(const Matrix& x) override {
    const auto n = adj_.rows(), fin = w_.value.rows();
    if (x.cols() != n * fin)
      throw DataError("graph_conv: expected width " + std::to_string(n * fin) + ", got " +
                      std::to_string(x.cols()));
    batch_ = x.rows();
    propagated_.resize(batch_ * n, fin);
    for (Eigen::Index s = 0; s < batch_; ++s) {
      Eigen::Map<const Matrix> h(x.row(s).data(), n, fin);
      propagated_.middleRows(s * n, n).noalias() = adj_ * h;
    }
    Matrix y = propagated_ * w_.value;
    return Eigen::Map<Matrix>(y.data(), batch_, n * w_.value.cols());
  }

  Matrix backward(const Matrix& g) override {
    const auto n = adj_.rows(), fin = w_.value.rows(), fout = w_.value.cols();
    Eigen::Map<const Matrix> gs(g.data(), batch_ * n, fout);
    w_.grad += propagated_.transpose() * gs;
    Matrix dp = gs * w_.value.transpose();
    Matrix dx(batch_, n * fin);
    for (Eigen::Index s = 0; s < batch_; ++s) {
      Matrix block = adj_.transpose() * dp.middleRows(s * n, n);
      dx.row(s) = Eigen::Map<const RowVector>(block.data(), n * fin);
    }
    return dx;
  }

  std::vector<Param*> params() override { return {&w_}; }
  std::string tag() const override { return "graph_conv"; }
  nlohmann::json to_json() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GraphConv>(*this); }

  const Matrix& adjacency() const { return adj_; }
  Matrix& weight() { return w_.value; }
  const Matrix& weight() const { return w_.value; }
  Eigen::Index nodes() const { return adj_.rows(); }
  Eigen::Index in_features() const { return w_.value.rows(); }
  Eigen::Index out_features() const { return w_.value.cols(); }

 private:
  Matrix adj_;
  Param w_;
  Eigen::Index batch_ = 0;
  Matrix propagated_;
};

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return nlohmann::json{{"rows", m.rows()},
                        {"cols", m.cols()},
                        {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  auto data = j.at("data").get<std::vector<double>>();
  if (Eigen::Index(data.size()) != rows * cols) throw DataError("model: matrix size mismatch");
  return Eigen::Map<Matrix>(data.data(), rows, cols);
}

inline nlohmann::json Affine::to_json() const {
  return {{"type", tag()}, {"W", matrix_to_json(w_.value)}, {"b", matrix_to_json(b_.value)}};
}

inline nlohmann::json GraphConv::to_json() const {
  // The adjacency is stored once at model level.
  return {{"type", tag()}, {"W", matrix_to_json(w_.value)}};
}

/// Ordered stack of layers.
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& o) {
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& o) {
    if (this != &o) {
      Sequential tmp(o);
      layers_.swap(tmp.layers_);
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    auto& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  /// Runs layers [0, upto); upto < 0 runs everything.
  Matrix forward(const Matrix& x, int upto = -1) {
    const auto stop = upto < 0 ? layers_.size() : std::size_t(upto);
    Matrix h = x;
    for (std::size_t i = 0; i < stop; ++i) h = layers_[i]->forward(h);
    return h;
  }

  Matrix backward(const Matrix& grad) {
    Matrix g = grad;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->grad.setZero();
  }

  std::size_t size() const { return layers_.size(); }
  Layer& operator[](std::size_t i) { return *layers_[i]; }
  const Layer& operator[](std::size_t i) const { return *layers_[i]; }

  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& l : layers_) arr.push_back(l->to_json());
    return arr;
  }

  /// `adjacency` is required when the stack contains graph_conv layers.
  static Sequential from_json(const nlohmann::json& arr, const Matrix* adjacency = nullptr) {
    Sequential s;
    for (const auto& j : arr) {
      const auto type = j.at("type").get<std::string>();
      if (type == "affine") {
        Matrix w = matrix_from_json(j.at("W")), b = matrix_from_json(j.at("b"));
        auto& l = s.add<Affine>(w.rows(), w.cols());
        l.weight() = std::move(w);
        l.bias() = std::move(b);
      } else if (type == "relu") {
        s.add<ReLU>();
      } else if (type == "sigmoid") {
        s.add<Sigmoid>();
      } else if (type == "graph_conv") {
        if (!adjacency) throw DataError("model: graph_conv layer without adjacency");
        Matrix w = matrix_from_json(j.at("W"));
        auto& l = s.add<GraphConv>(*adjacency, w.rows(), w.cols());
        l.weight() = std::move(w);
      } else {
        throw DataError("model: unknown layer type '" + type + "'");
      }
    }
    return s;
  }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // dLoss/dInput
};

/// Mean softmax cross-entropy over the batch; labels are class indices.
inline LossResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  if (Eigen::Index(labels.size()) != logits.rows())
    throw DataError("softmax_ce: label count does not match batch");
  const double inv = 1.0 / double(logits.rows());
  LossResult r{0.0, Matrix(logits.rows(), logits.cols())};
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    RowVector e = (logits.row(i).array() - mx).exp();
    const double z = e.sum();
    const int y = labels[std::size_t(i)];
    if (y < 0 || y >= logits.cols()) throw DataError("softmax_ce: label out of range");
    r.loss -= (logits(i, y) - mx - std::log(z)) * inv;
    r.grad.row(i) = e / z * inv;
    r.grad(i, y) -= inv;
  }
  return r;
}

/// Mean elementwise binary cross-entropy between probabilities and targets.
inline LossResult binary_cross_entropy(const Matrix& probs, const Matrix& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
    throw DataError("bce: shape mismatch");
  constexpr double kClamp = 1e-12;
  const double inv = 1.0 / double(probs.size());
  LossResult r{0.0, Matrix(probs.rows(), probs.cols())};
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs.data()[i], kClamp, 1.0 - kClamp);
    const double t = targets.data()[i];
    r.loss -= (t * std::log(p) + (1.0 - t) * std::log(1.0 - p)) * inv;
    r.grad.data()[i] = (p - t) / (p * (1.0 - p)) * inv;
  }
  return r;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// Adam; weight decay is decoupled shrinkage applied after the Adam update.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<Param*>& params) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * p.grad;
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= cfg_.learning_rate * (m_[k].array() / c1) /
                         ((v_[k].array() / c2).sqrt() + cfg_.epsilon);
      if (cfg_.weight_decay > 0.0) p.value *= 1.0 - cfg_.learning_rate * cfg_.weight_decay;
    }
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

using LossFn = std::function<LossResult(const Matrix& output)>;

/// Maximum over parameters (and inputs) of |g_a - g_n| / max(1, |g_a| + |g_n|),
/// with g_n from central differences.
inline double grad_check(Sequential& net, const LossFn& loss, const Matrix& probe,
                         double epsilon = 1e-5) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
    throw ConfigError("grad_check: epsilon must lie in [1e-7, 1e-3]");
  auto eval = [&](const Matrix& x) {
    double l = loss(net.forward(x)).loss;
    if (!std::isfinite(l)) throw NumericError("grad_check: non-finite loss");
    return l;
  };
  net.zero_grad();
  auto r = loss(net.forward(probe));
  if (!std::isfinite(r.loss)) throw NumericError("grad_check: non-finite loss");
  Matrix input_grad = net.backward(r.grad);

  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1.0, std::abs(a) + std::abs(n)); };
  double worst = 0.0;
  for (auto* p : net.params()) {
    Matrix analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& v = p->value.data()[i];
      const double saved = v;
      v = saved + epsilon;
      const double up = eval(probe);
      v = saved - epsilon;
      const double down = eval(probe);
      v = saved;
      worst = std::max(worst, rel(analytic.data()[i], (up - down) / (2.0 * epsilon)));
    }
  }
  Matrix x = probe;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + epsilon;
    const double up = eval(x);
    x.data()[i] = saved - epsilon;
    const double down = eval(x);
    x.data()[i] = saved;
    worst = std::max(worst, rel(input_grad.data()[i], (up - down) / (2.0 * epsilon)));
  }
  return worst;
}

}  // namespace mobanom::nn
