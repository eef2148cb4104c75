#pragma once

// Gaussian mixture density estimation over latent spaces and per-component
// chi-square p-value scoring.

#include "mobanom/core.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <random>

namespace mobanom {

namespace detail {

// Series for the lower regularized gamma P(a, x); converges fast for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double term = 1.0 / a, sum = term;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Lentz continued fraction for the upper regularized gamma Q(a, x), x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Upper regularized incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
  if (!(a > 0.0)) throw DataError("gamma_q: a must be > 0");
  if (x < 0.0 || std::isnan(x)) throw DataError("gamma_q: x must be >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_fraction(a, x);
}

/// Upper-tail probability of a chi-square variable with `dof` degrees of freedom.
inline double chi_square_sf(double x, double dof) {
  if (x < 0.0 || std::isnan(x)) throw DataError("chi_square_sf: x must be >= 0");
  if (!(dof >= 1.0)) throw DataError("chi_square_sf: dof must be >= 1");
  return gamma_q(0.5 * dof, 0.5 * x);
}

struct GmmModel {
  Vector weights;            // K, on the simplex
  Matrix means;              // K x dim
  std::vector<Matrix> covs;  // K of dim x dim
  std::vector<double> log_likelihood;  // per EM iteration, total over rows
  bool converged = false;
  std::uint64_t seed = 0;
  double reg = 1e-6;

  int components() const { return int(weights.size()); }
  Eigen::Index dim() const { return means.cols(); }
  double final_log_likelihood() const {
    return log_likelihood.empty() ? -std::numeric_limits<double>::infinity()
                                  : log_likelihood.back();
  }
};

struct GmmOptions {
  int max_iter = 200;
  double tol = 1e-6;
  double reg = 1e-6;
};

namespace detail {

struct Factorized {
  std::vector<Eigen::LLT<Eigen::MatrixXd>> chol;
  std::vector<double> log_norm;  // log pi_k - dim/2 log 2pi - 1/2 log|Sigma_k|
};

inline Factorized factorize(const GmmModel& m) {
  Factorized f;
  const double dim = double(m.dim());
  for (int k = 0; k < m.components(); ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(Eigen::MatrixXd(m.covs[std::size_t(k)]));
    if (llt.info() != Eigen::Success)
      throw NumericError("gmm: covariance of component " + std::to_string(k) +
                         " is not positive definite");
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    f.log_norm.push_back(std::log(m.weights(k)) - 0.5 * dim * std::log(2.0 * M_PI) -
                         0.5 * logdet);
    f.chol.push_back(std::move(llt));
  }
  return f;
}

inline double mahalanobis_sq(const Eigen::LLT<Eigen::MatrixXd>& chol, const Eigen::VectorXd& diff) {
  Eigen::VectorXd y = chol.matrixL().solve(diff);
  return y.squaredNorm();
}

/// Per-row, per-component log(pi_k N(x | mu_k, Sigma_k)).
inline Matrix weighted_log_densities(const GmmModel& m, const Factorized& f, const Matrix& z) {
  Matrix out(z.rows(), m.components());
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (int k = 0; k < m.components(); ++k) {
      Eigen::VectorXd diff = (z.row(i) - m.means.row(k)).transpose();
      out(i, k) = f.log_norm[std::size_t(k)] - 0.5 * mahalanobis_sq(f.chol[std::size_t(k)], diff);
    }
  return out;
}

inline double log_sum_exp(const RowVector& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

/// k-means++ seeding followed by Lloyd iterations; returns hard labels.
inline std::vector<int> kmeans_labels(const Matrix& z, int k, std::mt19937_64& rng) {
  const auto n = z.rows();
  auto draw = [&] { return double(rng() >> 11) * 0x1.0p-53; };
  Matrix centers(k, z.cols());
  centers.row(0) = z.row(Eigen::Index(rng() % std::uint64_t(n)));
  Vector d2 = (z.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = draw() * total, acc = 0.0;
      for (pick = 0; pick < n - 1; ++pick) {
        acc += d2(pick);
        if (acc > target) break;
      }
    } else {
      pick = Eigen::Index(rng() % std::uint64_t(n));
    }
    centers.row(c) = z.row(pick);
    d2 = d2.cwiseMin((z.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  std::vector<int> labels(std::size_t(n), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (centers.rowwise() - z.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (labels[std::size_t(i)] != int(best)) {
        labels[std::size_t(i)] = int(best);
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums = Matrix::Zero(k, z.cols());
    Vector counts = Vector::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[std::size_t(i)]) += z.row(i);
      counts(labels[std::size_t(i)]) += 1.0;
    }
    for (int c = 0; c < k; ++c)
      if (counts(c) > 0) centers.row(c) = sums.row(c) / counts(c);
  }
  return labels;
}

/// M-step from responsibilities.
inline void m_step(GmmModel& m, const Matrix& z, const Matrix& resp, double reg) {
  const int k = int(resp.cols());
  const double eps = 10.0 * std::numeric_limits<double>::epsilon();
  Vector nk = resp.colwise().sum().transpose().array() + eps;
  m.weights = nk / nk.sum();
  m.means = (resp.transpose() * z).array().colwise() / nk.array();
  m.covs.assign(std::size_t(k), Matrix());
  for (int c = 0; c < k; ++c) {
    Matrix centred = z.rowwise() - m.means.row(c);
    Matrix weighted = centred.array().colwise() * resp.col(c).array();
    Matrix cov = (weighted.transpose() * centred) / nk(c);
    cov = 0.5 * (cov + cov.transpose());
    cov.diagonal().array() += reg;
    m.covs[std::size_t(c)] = std::move(cov);
  }
}

}  // namespace detail

/// Responsibilities; each row sums to one.
inline Matrix gmm_responsibilities(const GmmModel& m, const Matrix& z) {
  auto f = detail::factorize(m);
  Matrix logp = detail::weighted_log_densities(m, f, z);
  for (Eigen::Index i = 0; i < logp.rows(); ++i) {
    const double lse = detail::log_sum_exp(logp.row(i));
    logp.row(i) = (logp.row(i).array() - lse).exp();
  }
  return logp;
}

inline double gmm_log_likelihood(const GmmModel& m, const Matrix& z) {
  auto f = detail::factorize(m);
  Matrix logp = detail::weighted_log_densities(m, f, z);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < logp.rows(); ++i) ll += detail::log_sum_exp(logp.row(i));
  return ll;
}

/// EM from a k-means++ start. Stops when the per-row log-likelihood gain
/// drops below tol or after max_iter iterations.
inline GmmModel gmm_fit(const FeatureMatrix& z, int k, std::uint64_t seed,
                        const GmmOptions& opt = {}) {
  const auto n = z.rows();
  if (k < 1) throw ConfigError("gmm: K must be >= 1");
  if (k > n) throw DataError("gmm: K=" + std::to_string(k) + " exceeds row count " + std::to_string(n));
  if (!z.values.allFinite()) throw DataError("gmm: non-finite latent values");
  if (opt.max_iter < 1) throw ConfigError("gmm: max_iter must be >= 1");

  std::mt19937_64 rng(seed);
  GmmModel m;
  m.seed = seed;
  m.reg = opt.reg;
  auto labels = detail::kmeans_labels(z.values, k, rng);
  Matrix resp = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) resp(i, labels[std::size_t(i)]) = 1.0;
  detail::m_step(m, z.values, resp, opt.reg);

  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    auto f = detail::factorize(m);
    Matrix logp = detail::weighted_log_densities(m, f, z.values);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lse = detail::log_sum_exp(logp.row(i));
      ll += lse;
      resp.row(i) = (logp.row(i).array() - lse).exp();
    }
    if (!std::isfinite(ll)) throw NumericError("gmm: non-finite log-likelihood");
    m.log_likelihood.push_back(ll);
    if ((ll - prev) / double(n) < opt.tol) {
      m.converged = true;
      break;
    }
    prev = ll;
    detail::m_step(m, z.values, resp, opt.reg);
  }
  return m;
}

inline int gmm_parameter_count(int k, Eigen::Index dim) {
  return (k - 1) + k * int(dim) + k * int(dim * (dim + 1) / 2);
}

inline double gmm_bic(const GmmModel& m, Eigen::Index rows) {
  return -2.0 * m.final_log_likelihood() +
         gmm_parameter_count(m.components(), m.dim()) * std::log(double(rows));
}

/// Fits K = 1..max_k and keeps the lowest BIC; ties go to the smaller K.
inline GmmModel gmm_select_bic(const FeatureMatrix& z, int max_k, std::uint64_t seed,
                               const GmmOptions& opt = {}) {
  std::optional<GmmModel> best;
  double best_bic = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= std::min<int>(max_k, int(z.rows())); ++k) {
    auto m = gmm_fit(z, k, seed, opt);
    const double bic = gmm_bic(m, z.rows());
    if (bic < best_bic) {
      best_bic = bic;
      best = std::move(m);
    }
  }
  if (!best) throw DataError("gmm: no rows to fit");
  return *best;
}

struct AnomalyScore {
  Date date;
  double p_value = 1.0;
  int component = 0;
  double mahalanobis_sq = 0.0;
};

/// Hard-assigns each row to its most responsible component (ties to the
/// lower index) and takes the chi-square upper tail of its squared
/// Mahalanobis distance with dof = latent width.
inline std::vector<AnomalyScore> score_days(const GmmModel& m, const FeatureMatrix& z) {
  if (z.cols() != m.dim())
    throw DataError("score_days: expected width " + std::to_string(m.dim()) + ", got " +
                    std::to_string(z.cols()));
  auto f = detail::factorize(m);
  Matrix logp = detail::weighted_log_densities(m, f, z.values);
  std::vector<AnomalyScore> out;
  out.reserve(std::size_t(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    int best = 0;
    for (int k = 1; k < m.components(); ++k)
      if (logp(i, k) > logp(i, best)) best = k;
    Eigen::VectorXd diff = (z.values.row(i) - m.means.row(best)).transpose();
    const double d2 = detail::mahalanobis_sq(f.chol[std::size_t(best)], diff);
    out.push_back({z.dates[std::size_t(i)], chi_square_sf(d2, double(m.dim())), best, d2});
  }
  return out;
}

/// Dates with p_value < threshold; threshold 1 flags every date.
inline std::vector<Date> flag_anomalies(const std::vector<AnomalyScore>& scores, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw ConfigError("flag_anomalies: threshold must lie in (0, 1]");
  std::vector<Date> out;
  for (const auto& s : scores)
    if (s.p_value < threshold || threshold >= 1.0) out.push_back(s.date);
  return out;
}

inline std::string scores_to_csv(const std::vector<AnomalyScore>& scores) {
  std::string s = "date,p_value,component,mahalanobis_sq\n";
  for (const auto& r : scores)
    s += r.date.iso() + ',' + fmt17(r.p_value) + ',' + std::to_string(r.component) + ',' +
         fmt17(r.mahalanobis_sq) + '\n';
  return s;
}

inline std::vector<AnomalyScore> read_scores(std::istream& in) {
  expect_header(in, {"date", "p_value", "component", "mahalanobis_sq"}, "scores csv");
  std::vector<AnomalyScore> out;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 4)
      throw DataError("scores csv line " + std::to_string(lineno) + ": expected 4 fields");
    AnomalyScore s;
    s.date = Date::parse(f[0]);
    s.p_value = parse_double(f[1], "p_value");
    s.component = int(parse_double(f[2], "component"));
    s.mahalanobis_sq = parse_double(f[3], "mahalanobis_sq");
    if (!(s.p_value >= 0.0 && s.p_value <= 1.0))
      throw DataError("scores csv line " + std::to_string(lineno) + ": p_value outside [0, 1]");
    if (!out.empty() && !(out.back().date < s.date))
      throw DataError("scores csv line " + std::to_string(lineno) + ": dates not increasing");
    out.push_back(s);
  }
  if (out.empty()) throw DataError("scores csv: no rows");
  return out;
}

inline nlohmann::json gmm_to_json(const GmmModel& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (int k = 0; k < m.components(); ++k) {
    const auto& c = m.covs[std::size_t(k)];
    comps.push_back({{"weight", m.weights(k)},
                     {"mean", std::vector<double>(m.means.row(k).data(),
                                                  m.means.row(k).data() + m.dim())},
                     {"covariance", std::vector<double>(c.data(), c.data() + c.size())}});
  }
  return {{"kind", "gmm"},           {"dim", m.dim()},
          {"components", comps},     {"log_likelihood", m.log_likelihood},
          {"converged", m.converged}, {"seed", m.seed},
          {"reg", m.reg}};
}

inline GmmModel gmm_from_json(const nlohmann::json& j) {
  if (j.value("kind", std::string{}) != "gmm") throw DataError("model: expected kind 'gmm'");
  GmmModel m;
  const auto dim = j.at("dim").get<Eigen::Index>();
  const auto& comps = j.at("components");
  const auto k = Eigen::Index(comps.size());
  m.weights.resize(k);
  m.means.resize(k, dim);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto& cj = comps[std::size_t(c)];
    m.weights(c) = cj.at("weight").get<double>();
    auto mean = cj.at("mean").get<std::vector<double>>();
    auto cov = cj.at("covariance").get<std::vector<double>>();
    if (Eigen::Index(mean.size()) != dim || Eigen::Index(cov.size()) != dim * dim)
      throw DataError("model: gmm component size mismatch");
    m.means.row(c) = Eigen::Map<RowVector>(mean.data(), dim);
    m.covs.push_back(Eigen::Map<Matrix>(cov.data(), dim, dim));
  }
  m.log_likelihood = j.at("log_likelihood").get<std::vector<double>>();
  m.converged = j.at("converged").get<bool>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.reg = j.at("reg").get<double>();
  return m;
}

}  // namespace mobanom
