#pragma once

// Trip-record ingestion, calendars, and the synthetic mobility generator.

#include "mobanom/core.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <unordered_map>
#include <utility>

namespace mobanom {

struct TripRecord {
  Date date;
  std::string origin_id;
  std::string dest_id;
  double count = 0.0;
};

/// Ordered node identifiers with reverse lookup.
class NodeRegistry {
 public:
  NodeRegistry() = default;
  explicit NodeRegistry(std::vector<std::string> ids) {
    for (auto& id : ids) add(std::move(id));
  }

  void add(std::string id, std::string name = {}) {
    if (id.empty()) throw DataError("empty node id");
    if (index_.count(id)) throw DataError("duplicate node id '" + id + "'");
    index_.emplace(id, ids_.size());
    ids_.push_back(std::move(id));
    names_.push_back(std::move(name));
  }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return ids_.size(); }

 private:
  std::vector<std::string> ids_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Stack of daily origin-destination matrices. flows[d](i, j) is the flow
/// from node i to node j on dates[d].
struct ODTensor {
  std::vector<Date> dates;
  std::vector<std::string> node_ids;
  std::vector<Matrix> flows;

  std::size_t days() const { return dates.size(); }
  std::size_t nodes() const { return node_ids.size(); }

  void validate() const {
    if (flows.size() != dates.size()) throw DataError("tensor: day count mismatch");
    for (std::size_t d = 0; d < dates.size(); ++d) {
      if (d > 0 && !(dates[d - 1] < dates[d]))
        throw DataError("tensor: dates not strictly increasing at " + dates[d].iso());
      const auto n = static_cast<Eigen::Index>(node_ids.size());
      if (flows[d].rows() != n || flows[d].cols() != n)
        throw DataError("tensor: day " + dates[d].iso() + " has wrong shape");
      if (!flows[d].allFinite()) throw DataError("tensor: non-finite flow on " + dates[d].iso());
    }
  }
};

struct DayCalendar {
  std::vector<Date> dates;
  std::vector<int> weekday_class;  // 0 weekday, 1 weekend
  std::vector<bool> is_holiday;

  std::size_t holiday_count() const {
    return static_cast<std::size_t>(std::count(is_holiday.begin(), is_holiday.end(), true));
  }
};

struct Holiday {
  Date date;
  std::string label;
};

inline NodeRegistry read_node_registry(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("node registry: empty input");
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "node_id" || header.size() > 2 ||
      (header.size() == 2 && header[1] != "name"))
    throw DataError("node registry: expected header 'node_id,name', got '" + line + "'");
  NodeRegistry reg;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() > header.size())
      throw DataError("node registry line " + std::to_string(lineno) + ": too many fields");
    reg.add(f[0], f.size() > 1 ? f[1] : std::string{});
  }
  if (reg.size() == 0) throw DataError("node registry: no nodes");
  return reg;
}

inline std::vector<Holiday> read_holidays(std::istream& in) {
  expect_header(in, {"date", "label"}, "holiday csv");
  std::vector<Holiday> out;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 2)
      throw DataError("holiday csv line " + std::to_string(lineno) + ": expected 2 fields");
    out.push_back({Date::parse(f[0]), f[1]});
  }
  return out;
}

/// Streams `date,origin,destination,count` rows into daily matrices. Every
/// date between the first and last (or the declared range) gets a matrix,
/// zero-filled when no trips were recorded. Record numbers in errors count
/// data rows from 1.
inline ODTensor parse_trip_records(std::istream& in, const NodeRegistry& registry,
                                   std::optional<std::pair<Date, Date>> range = std::nullopt) {
  expect_header(in, {"date", "origin", "destination", "count"}, "trip csv");
  const auto n = static_cast<Eigen::Index>(registry.size());
  std::map<Date, Matrix> days;
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++record;
    auto where = [&] { return "trip csv record " + std::to_string(record) + ": "; };
    auto f = split_csv_line(line);
    if (f.size() != 4) throw DataError(where() + "expected 4 fields");
    Date date;
    double count = 0.0;
    try {
      date = Date::parse(f[0]);
      count = parse_double(f[3], "count");
    } catch (const DataError& e) {
      throw DataError(where() + e.what());
    }
    if (!std::isfinite(count) || count < 0.0)
      throw DataError(where() + "count must be a nonnegative number, got '" + f[3] + "'");
    auto o = registry.find(f[1]);
    if (!o) throw DataError(where() + "unknown origin node '" + f[1] + "'");
    auto t = registry.find(f[2]);
    if (!t) throw DataError(where() + "unknown destination node '" + f[2] + "'");
    if (range && (date < range->first || range->second < date))
      throw DataError(where() + "date " + date.iso() + " outside declared range");
    auto [it, inserted] = days.try_emplace(date);
    if (inserted) it->second = Matrix::Zero(n, n);
    it->second(Eigen::Index(*o), Eigen::Index(*t)) += count;
  }
  if (days.empty() && !range) throw DataError("trip csv: no records");

  Date first = range ? range->first : days.begin()->first;
  Date last = range ? range->second : days.rbegin()->first;
  ODTensor out;
  out.node_ids = registry.ids();
  for (Date d = first; !(last < d); d = d + 1) {
    out.dates.push_back(d);
    auto it = days.find(d);
    out.flows.push_back(it != days.end() ? std::move(it->second) : Matrix::Zero(n, n));
  }
  return out;
}

inline std::string trips_to_csv(const ODTensor& t) {
  std::string s = "date,origin,destination,count\n";
  for (std::size_t d = 0; d < t.days(); ++d) {
    const auto iso = t.dates[d].iso();
    for (Eigen::Index i = 0; i < t.flows[d].rows(); ++i)
      for (Eigen::Index j = 0; j < t.flows[d].cols(); ++j) {
        double v = t.flows[d](i, j);
        if (v == 0.0) continue;
        s += iso + ',' + t.node_ids[i] + ',' + t.node_ids[j] + ',' + fmt17(v) + '\n';
      }
  }
  return s;
}

/// Divides each day's matrix by its total so that it sums to one.
inline ODTensor normalize_spatial(const ODTensor& t) {
  ODTensor out = t;
  for (std::size_t d = 0; d < t.days(); ++d) {
    const double total = t.flows[d].sum();
    if (!(total > 0.0)) throw DataError("zero-flow day " + t.dates[d].iso());
    out.flows[d] /= total;
  }
  return out;
}

/// Per-day node features: column 0 outgoing (row sums), column 1 incoming
/// (column sums). Rows follow node order.
struct NodeTensor {
  std::vector<Date> dates;
  std::vector<std::string> node_ids;
  std::vector<Matrix> features;  // N x 2 per day

  std::size_t days() const { return dates.size(); }
  std::size_t nodes() const { return node_ids.size(); }
};

inline NodeTensor node_features(const ODTensor& t) {
  NodeTensor out{t.dates, t.node_ids, {}};
  out.features.reserve(t.days());
  for (const auto& a : t.flows) {
    Matrix f(a.rows(), 2);
    f.col(0) = a.rowwise().sum();
    f.col(1) = a.colwise().sum().transpose();
    out.features.push_back(std::move(f));
  }
  return out;
}

/// Sum-normalizes each day's 2N node-feature vector.
inline NodeTensor normalize_node_features(const NodeTensor& t) {
  NodeTensor out = t;
  for (std::size_t d = 0; d < t.days(); ++d) {
    const double total = t.features[d].sum();
    if (!(total > 0.0)) throw DataError("zero-flow day " + t.dates[d].iso());
    out.features[d] /= total;
  }
  return out;
}

/// D x 2N matrix, node-major: (out_0, in_0, out_1, in_1, ...).
inline FeatureMatrix flatten_nodes(const NodeTensor& t) {
  FeatureMatrix fm{t.dates, Matrix(Eigen::Index(t.days()), Eigen::Index(2 * t.nodes()))};
  for (std::size_t d = 0; d < t.days(); ++d)
    fm.values.row(Eigen::Index(d)) =
        Eigen::Map<const RowVector>(t.features[d].data(), t.features[d].size());
  return fm;
}

/// weekend_days uses 0 = Sunday ... 6 = Saturday.
inline DayCalendar build_calendar(const std::vector<Date>& dates,
                                  const std::vector<Date>& holidays,
                                  const std::set<unsigned>& weekend_days = {0, 6}) {
  DayCalendar cal;
  cal.dates = dates;
  cal.weekday_class.reserve(dates.size());
  cal.is_holiday.assign(dates.size(), false);
  for (const auto& d : dates) cal.weekday_class.push_back(weekend_days.count(d.weekday()) ? 1 : 0);
  for (const auto& h : holidays) {
    auto it = std::lower_bound(dates.begin(), dates.end(), h);
    if (it == dates.end() || *it != h)
      throw DataError("holiday " + h.iso() + " outside the date range");
    cal.is_holiday[std::size_t(it - dates.begin())] = true;
  }
  return cal;
}

inline std::set<unsigned> parse_weekend_days(const std::vector<std::string>& names) {
  static const char* kNames[] = {"sun", "mon", "tue", "wed", "thu", "fri", "sat"};
  std::set<unsigned> out;
  for (auto name : names) {
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    name = name.substr(0, 3);
    auto it = std::find(std::begin(kNames), std::end(kNames), name);
    if (it == std::end(kNames)) throw ConfigError("unknown weekday '" + name + "'");
    out.insert(unsigned(it - std::begin(kNames)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
  int n_nodes = 20;
  int n_days = 600;
  Date start_date{2017, 1, 2};
  std::uint64_t seed = 42;
  double weekday_base_flow = 100.0;
  double weekend_scale = 0.6;
  /// Per-cell multiplicative lognormal noise (sigma of the log).
  double noise_scale = 0.1;
  /// Per-node daily activity noise, smoothed along the physical graph.
  double node_noise_scale = 0.0;
  /// Planted anomalies. When empty, n_anomalies dates are drawn at random.
  std::vector<Date> anomaly_dates;
  int n_anomalies = 30;
  /// Fraction of the way an anomaly day moves toward the opposite regime.
  double anomaly_strength = 0.4;
  /// Extra random physical links on top of the path 0-1-...-(N-1).
  int n_chords = 2;
  /// Hop length scale of the gravity-style decay applied to both regimes.
  double distance_decay = 0.5;
  /// Day-level structured variation unrelated to the weekly regime: each
  /// factor is a fixed random log-field over OD pairs, switched on each day
  /// with a N(0, nuisance_scale^2) amplitude.
  int nuisance_factors = 0;
  double nuisance_scale = 0.0;

  void validate() const {
    if (n_nodes < 2) throw ConfigError("synthetic: n_nodes must be >= 2");
    if (n_days < 14) throw ConfigError("synthetic: n_days must be >= 14");
    if (!(weekday_base_flow > 0.0)) throw ConfigError("synthetic: weekday_base_flow must be > 0");
    if (!(weekend_scale > 0.0 && weekend_scale < 1.0))
      throw ConfigError("synthetic: weekend_scale must be in (0, 1)");
    if (!(noise_scale >= 0.0) || !(node_noise_scale >= 0.0))
      throw ConfigError("synthetic: noise scales must be >= 0");
    if (!(anomaly_strength >= 0.0 && anomaly_strength <= 1.0))
      throw ConfigError("synthetic: anomaly_strength must be in [0, 1]");
    if (anomaly_dates.empty() && (n_anomalies < 0 || n_anomalies > n_days))
      throw ConfigError("synthetic: n_anomalies out of range");
    if (n_chords < 0) throw ConfigError("synthetic: n_chords must be >= 0");
    if (!(distance_decay > 0.0)) throw ConfigError("synthetic: distance_decay must be > 0");
    if (nuisance_factors < 0 || !(nuisance_scale >= 0.0))
      throw ConfigError("synthetic: nuisance settings must be >= 0");
    const Date last = start_date + (n_days - 1);
    for (const auto& d : anomaly_dates)
      if (d < start_date || last < d)
        throw ConfigError("synthetic: anomaly date " + d.iso() + " outside generated range");
  }
};

struct SyntheticDataset {
  ODTensor tensor;
  DayCalendar calendar;
  std::vector<std::pair<std::string, std::string>> physical_edges;
};

namespace detail {

inline std::vector<std::vector<int>> hop_distances(int n,
                                                   const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (auto [a, b] : edges) {
    adj[std::size_t(a)].push_back(b);
    adj[std::size_t(b)].push_back(a);
  }
  std::vector<std::vector<int>> dist(std::size_t(n), std::vector<int>(std::size_t(n), -1));
  for (int s = 0; s < n; ++s) {
    auto& ds = dist[std::size_t(s)];
    std::deque<int> q{s};
    ds[std::size_t(s)] = 0;
    while (!q.empty()) {
      int u = q.front();
      q.pop_front();
      for (int v : adj[std::size_t(u)])
        if (ds[std::size_t(v)] < 0) {
          ds[std::size_t(v)] = ds[std::size_t(u)] + 1;
          q.push_back(v);
        }
    }
  }
  return dist;
}

}  // namespace detail

/// Two-regime mobility generator. Weekdays follow a commute pattern
/// (residential to business nodes and back); weekends follow a leisure
/// pattern concentrated on nearby nodes, with total volume scaled by
/// weekend_scale. Anomaly days are mixed toward the opposite regime.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = cfg.n_nodes;
  const auto ni = Eigen::Index(n);

  SyntheticDataset out;
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "N%03d", i);
    out.tensor.node_ids.emplace_back(buf);
  }

  // Physical topology: a line plus seeded chords.
  std::vector<std::pair<int, int>> edges;
  std::set<std::pair<int, int>> seen;
  for (int i = 0; i + 1 < n; ++i) {
    edges.emplace_back(i, i + 1);
    seen.emplace(i, i + 1);
  }
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int c = 0, tries = 0; c < cfg.n_chords && tries < 100 * (cfg.n_chords + 1); ++tries) {
    int a = pick(rng), b = pick(rng);
    if (a > b) std::swap(a, b);
    if (b - a < 2 || seen.count({a, b})) continue;
    seen.emplace(a, b);
    edges.emplace_back(a, b);
    ++c;
  }
  for (auto [a, b] : edges)
    out.physical_edges.emplace_back(out.tensor.node_ids[std::size_t(a)],
                                    out.tensor.node_ids[std::size_t(b)]);
  const auto hops = detail::hop_distances(n, edges);

  Vector residential(ni), business(ni), leisure(ni);
  for (int i = 0; i < n; ++i) {
    residential(i) = std::exp(0.5 * normal(rng));
    business(i) = std::exp(1.0 * normal(rng));
    leisure(i) = std::exp(0.5 * normal(rng));
  }
  Matrix weekday(ni, ni), weekend(ni, ni);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int h = hops[std::size_t(i)][std::size_t(j)];
      const double decay = std::exp(-double(h < 0 ? n : h) / cfg.distance_decay);
      weekday(i, j) = (residential(i) * business(j) + business(i) * residential(j)) * decay + 0.01;
      weekend(i, j) = leisure(i) * leisure(j) * decay * decay + 0.01;
    }
  weekday *= cfg.weekday_base_flow * double(n * n) / weekday.sum();
  weekend *= cfg.weekend_scale * weekday.sum() / weekend.sum();

  // Row-normalized adjacency with self loops, for spatially smooth node noise.
  Matrix smooth = Matrix::Identity(ni, ni);
  for (auto [a, b] : edges) {
    smooth(a, b) = 1.0;
    smooth(b, a) = 1.0;
  }
  for (Eigen::Index i = 0; i < ni; ++i) smooth.row(i) /= smooth.row(i).sum();

  std::vector<Date> dates;
  for (int d = 0; d < cfg.n_days; ++d) dates.push_back(cfg.start_date + d);
  auto calendar = build_calendar(dates, {});

  std::vector<Date> anomalies = cfg.anomaly_dates;
  if (anomalies.empty() && cfg.n_anomalies > 0) {
    std::vector<int> idx(static_cast<std::size_t>(cfg.n_days));
    for (int d = 0; d < cfg.n_days; ++d) idx[std::size_t(d)] = d;
    for (int k = 0; k < cfg.n_anomalies; ++k) {
      std::uniform_int_distribution<int> u(k, cfg.n_days - 1);
      std::swap(idx[std::size_t(k)], idx[std::size_t(u(rng))]);
      anomalies.push_back(dates[std::size_t(idx[std::size_t(k)])]);
    }
  }
  std::sort(anomalies.begin(), anomalies.end());
  anomalies.erase(std::unique(anomalies.begin(), anomalies.end()), anomalies.end());
  calendar = build_calendar(dates, anomalies);

  std::vector<Matrix> nuisance;
  for (int f = 0; f < cfg.nuisance_factors; ++f) {
    Matrix field(ni, ni);
    for (Eigen::Index k = 0; k < field.size(); ++k) field.data()[k] = normal(rng);
    nuisance.push_back(std::move(field));
  }

  const double s = cfg.anomaly_strength;
  const double cell_sigma = cfg.noise_scale;
  const double node_sigma = cfg.node_noise_scale;
  out.tensor.dates = dates;
  out.tensor.flows.reserve(dates.size());
  for (std::size_t d = 0; d < dates.size(); ++d) {
    const bool weekend_day = calendar.weekday_class[d] == 1;
    const Matrix& own = weekend_day ? weekend : weekday;
    const Matrix& other = weekend_day ? weekday : weekend;
    Matrix day = calendar.is_holiday[d] ? Matrix((1.0 - s) * own + s * other) : own;

    if (!nuisance.empty() && cfg.nuisance_scale > 0.0) {
      Matrix log_shift = Matrix::Zero(ni, ni);
      for (const auto& field : nuisance) log_shift += cfg.nuisance_scale * normal(rng) * field;
      day.array() *= log_shift.array().exp();
    }
    if (node_sigma > 0.0) {
      Vector g(ni);
      for (auto& v : g) v = normal(rng);
      Vector act = (node_sigma * (smooth * g)).array().exp();
      day = act.asDiagonal() * day * act.asDiagonal();
    }
    if (cell_sigma > 0.0) {
      for (Eigen::Index i = 0; i < ni; ++i)
        for (Eigen::Index j = 0; j < ni; ++j)
          day(i, j) *= std::exp(cell_sigma * normal(rng) - 0.5 * cell_sigma * cell_sigma);
    }
    out.tensor.flows.push_back(std::move(day));
  }
  out.calendar = std::move(calendar);
  return out;
}

}  // namespace mobanom
