#pragma once

// Latent feature learners: PCA, autoencoder, and the discriminative
// weekday/weekend classifiers (MLP and graph-convolutional) whose
// third-layer activations serve as the latent space.

#include "mobanom/graph.hpp"
#include "mobanom/nn.hpp"

#include <numeric>

namespace mobanom {

// ---------------------------------------------------------------------------
// Flattening

/// Row d is the row-major flattening of day d's matrix.
inline FeatureMatrix flatten_edges(const ODTensor& t) {
  const auto n = Eigen::Index(t.nodes());
  FeatureMatrix fm{t.dates, Matrix(Eigen::Index(t.days()), n * n)};
  for (std::size_t d = 0; d < t.days(); ++d)
    fm.values.row(Eigen::Index(d)) = Eigen::Map<const RowVector>(t.flows[d].data(), n * n);
  return fm;
}

inline ODTensor unflatten_edges(const FeatureMatrix& fm, std::vector<std::string> node_ids) {
  const auto n = Eigen::Index(node_ids.size());
  if (fm.cols() != n * n) throw DataError("unflatten: width is not N^2");
  ODTensor t{fm.dates, std::move(node_ids), {}};
  for (Eigen::Index d = 0; d < fm.rows(); ++d)
    t.flows.push_back(Eigen::Map<const Matrix>(fm.values.row(d).data(), n, n));
  return t;
}

inline void require_latent_width(const FeatureMatrix& z, const std::string& method) {
  if (z.cols() != kLatentDim)
    throw NumericError(method + ": latent width " + std::to_string(z.cols()) + " != " +
                       std::to_string(kLatentDim));
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  RowVector mean;
  Matrix components;  // k x F, orthonormal rows
  Vector explained_variance;
};

/// Top-k principal axes of the mean-centred data. Each axis is signed so
/// that its largest-magnitude entry is positive.
inline PcaModel pca_fit(const FeatureMatrix& x, int k = kLatentDim) {
  const auto d = x.rows(), f = x.cols();
  if (d < 2) throw DataError("pca: need at least 2 rows");
  if (k < 1 || k > std::min<Eigen::Index>(d - 1, f))
    throw ConfigError("pca: k=" + std::to_string(k) + " exceeds min(D-1, F)=" +
                      std::to_string(std::min<Eigen::Index>(d - 1, f)));
  if (!x.values.allFinite()) throw DataError("pca: non-finite input");
  PcaModel m;
  m.mean = x.values.colwise().mean();
  Eigen::MatrixXd centred = x.values.rowwise() - m.mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  m.components = svd.matrixV().leftCols(k).transpose();
  m.explained_variance = svd.singularValues().head(k).array().square() / double(d - 1);
  for (Eigen::Index r = 0; r < k; ++r) {
    Eigen::Index arg = 0;
    m.components.row(r).cwiseAbs().maxCoeff(&arg);
    if (m.components(r, arg) < 0) m.components.row(r) *= -1.0;
  }
  return m;
}

inline FeatureMatrix pca_transform(const PcaModel& m, const FeatureMatrix& x) {
  if (x.cols() != m.mean.size())
    throw DataError("pca_transform: expected width " + std::to_string(m.mean.size()) + ", got " +
                    std::to_string(x.cols()));
  return {x.dates, (x.values.rowwise() - m.mean) * m.components.transpose()};
}

inline Matrix pca_inverse(const PcaModel& m, const Matrix& z) {
  return (z * m.components).rowwise() + m.mean;
}

// ---------------------------------------------------------------------------
// Training configuration and shared machinery

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 1e-3;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// 0 means full batch.
  int batch_size = 0;
  std::uint64_t seed = 1234;
  /// Hidden widths ahead of the 20-wide latent layer.
  std::vector<int> hidden = {128, 64};
  /// Z-score inputs per column before the network (classifiers only).
  bool standardize = true;
  /// Graph convolution node width.
  int gcn_width = 8;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (batch_size < 0) throw ConfigError("train: batch_size must be >= 0");
    if (hidden.empty()) throw ConfigError("train: need at least one hidden width");
    for (int h : hidden)
      if (h < 1) throw ConfigError("train: hidden widths must be >= 1");
    if (gcn_width < 1) throw ConfigError("train: gcn_width must be >= 1");
  }

  nn::AdamConfig adam() const {
    return {learning_rate, beta1, beta2, epsilon, weight_decay};
  }

  static TrainConfig classifier_defaults() { return {}; }
  static TrainConfig autoencoder_defaults() {
    TrainConfig c;
    c.learning_rate = 1e-2;
    c.standardize = false;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},        {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay}, {"beta1", c.beta1},
       {"beta2", c.beta2},          {"epsilon", c.epsilon},
       {"batch_size", c.batch_size}, {"seed", c.seed},
       {"hidden", c.hidden},        {"standardize", c.standardize},
       {"gcn_width", c.gcn_width}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known = {
      "epochs", "learning_rate", "weight_decay", "beta1",       "beta2",    "epsilon",
      "batch_size", "seed",      "hidden",       "standardize", "gcn_width"};
  if (!j.is_object()) throw ConfigError("train: expected an object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("train: unknown key '" + key + "'");
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.hidden = j.value("hidden", c.hidden);
  c.standardize = j.value("standardize", c.standardize);
  c.gcn_width = j.value("gcn_width", c.gcn_width);
}

struct TrainLog {
  std::vector<double> loss;      // mean loss per epoch
  std::vector<double> accuracy;  // classifiers only
};

/// Per-column standardization. Constant columns keep unit scale.
struct Scaler {
  RowVector mean;
  RowVector scale;

  static Scaler identity(Eigen::Index f) { return {RowVector::Zero(f), RowVector::Ones(f)}; }

  static Scaler fit(const Matrix& x) {
    Scaler s;
    s.mean = x.colwise().mean();
    Matrix c = x.rowwise() - s.mean;
    s.scale = (c.colwise().squaredNorm() / double(std::max<Eigen::Index>(1, x.rows() - 1)))
                  .cwiseSqrt();
    for (auto& v : s.scale)
      if (!(v > 1e-12)) v = 1.0;
    return s;
  }

  Matrix apply(const Matrix& x) const {
    return (x.rowwise() - mean).array().rowwise() / scale.array();
  }
};

inline nlohmann::json scaler_to_json(const Scaler& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"scale", std::vector<double>(s.scale.data(), s.scale.data() + s.scale.size())}};
}

inline Scaler scaler_from_json(const nlohmann::json& j) {
  auto m = j.at("mean").get<std::vector<double>>();
  auto s = j.at("scale").get<std::vector<double>>();
  if (m.size() != s.size()) throw DataError("model: scaler size mismatch");
  Scaler out;
  out.mean = Eigen::Map<RowVector>(m.data(), Eigen::Index(m.size()));
  out.scale = Eigen::Map<RowVector>(s.data(), Eigen::Index(s.size()));
  return out;
}

namespace detail {

inline Matrix gather_rows(const Matrix& x, const std::vector<Eigen::Index>& idx) {
  Matrix out(Eigen::Index(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(Eigen::Index(i)) = x.row(idx[i]);
  return out;
}

/// Epoch batch schedule: natural order for full batch, seeded shuffle otherwise.
inline std::vector<std::vector<Eigen::Index>> batches(Eigen::Index rows, int batch_size,
                                                      std::mt19937_64& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  if (batch_size <= 0 || batch_size >= rows) return {order};
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    auto j = std::size_t(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<std::vector<Eigen::Index>> out;
  for (std::size_t s = 0; s < order.size(); s += std::size_t(batch_size))
    out.emplace_back(order.begin() + std::ptrdiff_t(s),
                     order.begin() + std::ptrdiff_t(std::min(order.size(), s + std::size_t(batch_size))));
  return out;
}

inline void check_loss(double loss, const std::string& what) {
  if (!std::isfinite(loss)) throw NumericError(what + ": non-finite training loss");
}

/// Softmax cross-entropy training; returns per-epoch mean loss and accuracy.
inline TrainLog fit_classifier(nn::Sequential& net, const Matrix& x, const std::vector<int>& labels,
                               const TrainConfig& cfg, const std::string& what) {
  nn::Adam adam(cfg.adam());
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  TrainLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    Eigen::Index correct = 0;
    for (const auto& idx : batches(x.rows(), cfg.batch_size, rng)) {
      Matrix xb = idx.size() == std::size_t(x.rows()) ? x : gather_rows(x, idx);
      std::vector<int> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = labels[std::size_t(idx[i])];
      net.zero_grad();
      Matrix logits = net.forward(xb);
      auto r = nn::softmax_cross_entropy(logits, yb);
      check_loss(r.loss, what);
      net.backward(r.grad);
      adam.step(net.params());
      loss_sum += r.loss * double(idx.size());
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        correct += arg == yb[std::size_t(i)];
      }
    }
    log.loss.push_back(loss_sum / double(x.rows()));
    log.accuracy.push_back(double(correct) / double(x.rows()));
  }
  return log;
}

inline void check_labels(const Matrix& x, const std::vector<int>& labels, const std::string& what) {
  if (Eigen::Index(labels.size()) != x.rows())
    throw DataError(what + ": " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(x.rows()) + " rows");
  for (int l : labels)
    if (l != 0 && l != 1) throw DataError(what + ": labels must be binary");
}

/// Appends affine+ReLU layers for the given widths, He-initialized.
inline Eigen::Index add_relu_stack(nn::Sequential& net, Eigen::Index in,
                                   const std::vector<int>& widths, std::mt19937_64& rng) {
  for (int w : widths) {
    net.add<nn::Affine>(in, w).init(nn::Init::He, rng);
    net.add<nn::ReLU>();
    in = w;
  }
  return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Discriminative MLP

struct MlpModel {
  nn::Sequential net;
  Scaler scaler;
  TrainConfig config;
  TrainLog log;

  /// Layers up to and including the third ReLU.
  int latent_end() const { return int(2 * (config.hidden.size() + 1)); }
};

/// F -> hidden... -> 20 -> 2, ReLU hidden activations, softmax output.
inline MlpModel mlp_init(Eigen::Index input_width, const TrainConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  MlpModel m{{}, Scaler::identity(input_width), cfg, {}};
  std::vector<int> widths = cfg.hidden;
  widths.push_back(kLatentDim);
  auto in = detail::add_relu_stack(m.net, input_width, widths, rng);
  m.net.add<nn::Affine>(in, 2).init(nn::Init::Xavier, rng);
  return m;
}

inline MlpModel mlp_train(const FeatureMatrix& x, const std::vector<int>& weekday_labels,
                          const TrainConfig& cfg) {
  detail::check_labels(x.values, weekday_labels, "mlp_train");
  auto m = mlp_init(x.cols(), cfg);
  m.scaler = cfg.standardize ? Scaler::fit(x.values) : Scaler::identity(x.cols());
  m.log = detail::fit_classifier(m.net, m.scaler.apply(x.values), weekday_labels, cfg, "mlp");
  return m;
}

inline FeatureMatrix mlp_latent(MlpModel& m, const FeatureMatrix& x) {
  if (x.cols() != m.scaler.mean.size())
    throw DataError("mlp_latent: expected width " + std::to_string(m.scaler.mean.size()) +
                    ", got " + std::to_string(x.cols()));
  FeatureMatrix z{x.dates, m.net.forward(m.scaler.apply(x.values), m.latent_end())};
  require_latent_width(z, "mlp");
  return z;
}

inline Matrix mlp_predict_logits(MlpModel& m, const FeatureMatrix& x) {
  return m.net.forward(m.scaler.apply(x.values));
}

// ---------------------------------------------------------------------------
// Autoencoder

struct AeModel {
  nn::Sequential encoder;
  nn::Sequential decoder;
  TrainConfig config;
  TrainLog log;
};

/// Encoder F -> hidden... -> 20 (ReLU), mirrored decoder with sigmoid output.
inline AeModel ae_init(Eigen::Index input_width, const TrainConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  AeModel m;
  m.config = cfg;
  std::vector<int> widths = cfg.hidden;
  widths.push_back(kLatentDim);
  detail::add_relu_stack(m.encoder, input_width, widths, rng);
  std::vector<int> back(cfg.hidden.rbegin(), cfg.hidden.rend());
  auto in = detail::add_relu_stack(m.decoder, kLatentDim, back, rng);
  m.decoder.add<nn::Affine>(in, input_width).init(nn::Init::Xavier, rng);
  m.decoder.add<nn::Sigmoid>();
  return m;
}

inline AeModel ae_train(const FeatureMatrix& x, const TrainConfig& cfg) {
  if (!x.values.allFinite() || x.values.minCoeff() < 0.0 || x.values.maxCoeff() > 1.0)
    throw DataError("ae_train: inputs must lie in [0, 1] for binary cross-entropy");
  auto m = ae_init(x.cols(), cfg);
  nn::Adam adam(cfg.adam());
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& idx : detail::batches(x.rows(), cfg.batch_size, rng)) {
      Matrix xb = idx.size() == std::size_t(x.rows()) ? x.values : detail::gather_rows(x.values, idx);
      m.encoder.zero_grad();
      m.decoder.zero_grad();
      Matrix recon = m.decoder.forward(m.encoder.forward(xb));
      auto r = nn::binary_cross_entropy(recon, xb);
      detail::check_loss(r.loss, "ae");
      m.encoder.backward(m.decoder.backward(r.grad));
      auto params = m.encoder.params();
      for (auto* p : m.decoder.params()) params.push_back(p);
      adam.step(params);
      loss_sum += r.loss * double(idx.size());
    }
    m.log.loss.push_back(loss_sum / double(x.rows()));
  }
  return m;
}

inline FeatureMatrix ae_encode(AeModel& m, const FeatureMatrix& x) {
  auto& first = dynamic_cast<const nn::Affine&>(m.encoder[0]);
  if (x.cols() != first.in_width())
    throw DataError("ae_encode: expected width " + std::to_string(first.in_width()) + ", got " +
                    std::to_string(x.cols()));
  FeatureMatrix z{x.dates, m.encoder.forward(x.values)};
  require_latent_width(z, "ae");
  return z;
}

// ---------------------------------------------------------------------------
// Discriminative GCN

struct GcnModel {
  NormalizedAdjacency adjacency;
  int k_layers = 1;
  nn::Sequential net;
  Scaler scaler;
  TrainConfig config;
  TrainLog log;

  int latent_end() const { return 2 * k_layers + 2 * int(config.hidden.size()); }
};

/// k graph layers (2 -> g -> ... -> g, ReLU), flatten to N*g, then
/// N*g -> hidden[1:]... -> 20 -> 2. The head keeps the 20-wide third layer.
inline GcnModel gcn_init(const NormalizedAdjacency& adj, int k_layers, const TrainConfig& cfg,
                         Eigen::Index node_features = 2) {
  cfg.validate();
  if (k_layers < 1) throw ConfigError("gcn: k_layers must be >= 1");
  std::mt19937_64 rng(cfg.seed);
  GcnModel m;
  m.adjacency = adj;
  m.k_layers = k_layers;
  m.config = cfg;
  const auto n = adj.size();
  m.scaler = Scaler::identity(n * node_features);
  Eigen::Index in = node_features;
  for (int l = 0; l < k_layers; ++l) {
    m.net.add<nn::GraphConv>(adj.matrix, in, cfg.gcn_width).init(rng);
    m.net.add<nn::ReLU>();
    in = cfg.gcn_width;
  }
  std::vector<int> widths(cfg.hidden.begin() + 1, cfg.hidden.end());
  widths.push_back(kLatentDim);
  auto out = detail::add_relu_stack(m.net, n * in, widths, rng);
  m.net.add<nn::Affine>(out, 2).init(nn::Init::Xavier, rng);
  return m;
}

/// Trains an initialized model in place.
inline void gcn_fit(GcnModel& m, const FeatureMatrix& node_x, const std::vector<int>& labels) {
  detail::check_labels(node_x.values, labels, "gcn_train");
  if (node_x.cols() != m.scaler.mean.size())
    throw DataError("gcn_train: node features have width " + std::to_string(node_x.cols()) +
                    ", adjacency implies " + std::to_string(m.scaler.mean.size()));
  m.scaler = m.config.standardize ? Scaler::fit(node_x.values) : Scaler::identity(node_x.cols());
  m.log = detail::fit_classifier(m.net, m.scaler.apply(node_x.values), labels, m.config, "gcn");
}

/// node_x is the node-major D x (N*2) flattening of the node tensor.
inline GcnModel gcn_train(const FeatureMatrix& node_x, const NormalizedAdjacency& adj,
                          const std::vector<int>& weekday_labels, const TrainConfig& cfg,
                          int k_layers) {
  if (adj.size() == 0 || node_x.cols() % adj.size() != 0)
    throw DataError("gcn_train: adjacency size does not match node count");
  auto m = gcn_init(adj, k_layers, cfg, node_x.cols() / adj.size());
  gcn_fit(m, node_x, weekday_labels);
  return m;
}

inline FeatureMatrix gcn_latent(GcnModel& m, const FeatureMatrix& node_x) {
  if (node_x.cols() != m.scaler.mean.size())
    throw DataError("gcn_latent: expected width " + std::to_string(m.scaler.mean.size()) +
                    ", got " + std::to_string(node_x.cols()));
  FeatureMatrix z{node_x.dates, m.net.forward(m.scaler.apply(node_x.values), m.latent_end())};
  require_latent_width(z, "gcn");
  return z;
}

// ---------------------------------------------------------------------------
// Persistence. Structured JSON: layer stack with activation tags, row-major
// parameter arrays, training config (including seed), and the training log.

inline nlohmann::json log_to_json(const TrainLog& log) {
  return {{"loss", log.loss}, {"accuracy", log.accuracy}};
}

inline TrainLog log_from_json(const nlohmann::json& j) {
  return {j.at("loss").get<std::vector<double>>(), j.at("accuracy").get<std::vector<double>>()};
}

inline nlohmann::json model_to_json(const PcaModel& m) {
  return {{"kind", "pca"},
          {"mean", std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())},
          {"components", nn::matrix_to_json(m.components)},
          {"explained_variance",
           std::vector<double>(m.explained_variance.data(),
                               m.explained_variance.data() + m.explained_variance.size())}};
}

inline nlohmann::json model_to_json(const MlpModel& m) {
  return {{"kind", "mlp"},         {"layers", m.net.to_json()}, {"scaler", scaler_to_json(m.scaler)},
          {"config", m.config},    {"seed", m.config.seed},     {"log", log_to_json(m.log)}};
}

inline nlohmann::json model_to_json(const AeModel& m) {
  return {{"kind", "ae"},
          {"encoder", m.encoder.to_json()},
          {"decoder", m.decoder.to_json()},
          {"config", m.config},
          {"seed", m.config.seed},
          {"log", log_to_json(m.log)}};
}

inline nlohmann::json model_to_json(const GcnModel& m) {
  return {{"kind", "gcn"},
          {"k_layers", m.k_layers},
          {"adjacency", nn::matrix_to_json(m.adjacency.matrix)},
          {"layers", m.net.to_json()},
          {"scaler", scaler_to_json(m.scaler)},
          {"config", m.config},
          {"seed", m.config.seed},
          {"log", log_to_json(m.log)}};
}

inline void expect_kind(const nlohmann::json& j, const std::string& kind) {
  if (j.value("kind", std::string{}) != kind)
    throw DataError("model: expected kind '" + kind + "'");
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
  expect_kind(j, "pca");
  auto mean = j.at("mean").get<std::vector<double>>();
  auto ev = j.at("explained_variance").get<std::vector<double>>();
  PcaModel m;
  m.mean = Eigen::Map<RowVector>(mean.data(), Eigen::Index(mean.size()));
  m.components = nn::matrix_from_json(j.at("components"));
  m.explained_variance = Eigen::Map<Vector>(ev.data(), Eigen::Index(ev.size()));
  return m;
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
  expect_kind(j, "mlp");
  return {nn::Sequential::from_json(j.at("layers")), scaler_from_json(j.at("scaler")),
          j.at("config").get<TrainConfig>(), log_from_json(j.at("log"))};
}

inline AeModel ae_from_json(const nlohmann::json& j) {
  expect_kind(j, "ae");
  return {nn::Sequential::from_json(j.at("encoder")), nn::Sequential::from_json(j.at("decoder")),
          j.at("config").get<TrainConfig>(), log_from_json(j.at("log"))};
}

inline GcnModel gcn_from_json(const nlohmann::json& j) {
  expect_kind(j, "gcn");
  GcnModel m;
  m.adjacency.matrix = nn::matrix_from_json(j.at("adjacency"));
  m.k_layers = j.at("k_layers").get<int>();
  m.net = nn::Sequential::from_json(j.at("layers"), &m.adjacency.matrix);
  m.scaler = scaler_from_json(j.at("scaler"));
  m.config = j.at("config").get<TrainConfig>();
  m.log = log_from_json(j.at("log"));
  return m;
}

// Latent CSV: date,z0,...,z19 with %.17g values.
inline std::string features_to_csv(const FeatureMatrix& fm, const std::string& prefix = "z") {
  std::string s = "date";
  for (Eigen::Index c = 0; c < fm.cols(); ++c) s += ',' + prefix + std::to_string(c);
  s += '\n';
  for (Eigen::Index r = 0; r < fm.rows(); ++r) {
    s += fm.dates[std::size_t(r)].iso();
    for (Eigen::Index c = 0; c < fm.cols(); ++c) s += ',' + fmt17(fm.values(r, c));
    s += '\n';
  }
  return s;
}

inline FeatureMatrix read_features_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("feature csv: empty input");
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "date") throw DataError("feature csv: first column must be date");
  const auto cols = Eigen::Index(header.size() - 1);
  std::vector<Date> dates;
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (Eigen::Index(f.size()) != cols + 1)
      throw DataError("feature csv line " + std::to_string(lineno) + ": wrong field count");
    dates.push_back(Date::parse(f[0]));
    for (std::size_t c = 1; c < f.size(); ++c) values.push_back(parse_double(f[c], "feature value"));
  }
  FeatureMatrix fm{std::move(dates), Matrix(Eigen::Index(0), cols)};
  if (!fm.dates.empty())
    fm.values = Eigen::Map<Matrix>(values.data(), Eigen::Index(fm.dates.size()), cols);
  return fm;
}

}  // namespace mobanom
