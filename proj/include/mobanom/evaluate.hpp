#pragma once

// Precision / recall / F1 against the event calendar and the best-F1
// threshold sweep.

#include "mobanom/density.hpp"
#include "mobanom/ingest.hpp"

#include <iomanip>
#include <numeric>

namespace mobanom {

struct Confusion {
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Confusion counts;
};

/// Harmonic mean with the 0 convention when P + R = 0.
inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline Metrics metrics_from(const Confusion& c) {
  Metrics m;
  m.counts = c;
  m.precision = c.tp + c.fp > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0;
  m.recall = c.tp + c.fn > 0 ? double(c.tp) / double(c.tp + c.fn) : 0.0;
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

inline Metrics confusion_metrics(const std::vector<Date>& flags, const DayCalendar& calendar) {
  if (calendar.dates.empty()) throw DataError("confusion_metrics: empty calendar");
  std::vector<bool> flagged(calendar.dates.size(), false);
  for (const auto& f : flags) {
    auto it = std::lower_bound(calendar.dates.begin(), calendar.dates.end(), f);
    if (it == calendar.dates.end() || *it != f)
      throw DataError("confusion_metrics: flagged date " + f.iso() + " not in calendar");
    flagged[std::size_t(it - calendar.dates.begin())] = true;
  }
  Confusion c;
  for (std::size_t i = 0; i < flagged.size(); ++i) {
    const bool h = calendar.is_holiday[i];
    if (flagged[i]) (h ? c.tp : c.fp)++;
    else (h ? c.fn : c.tn)++;
  }
  return metrics_from(c);
}

struct ReportRow {
  Date date;
  double p_value = 1.0;
  bool flagged = false;
  bool is_holiday = false;
};

struct DetectionReport {
  std::string method;
  double best_threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long holidays_identified = 0;
  long holiday_count = 0;
  Confusion counts;
  std::vector<ReportRow> rows;
  int gmm_components = 0;
  std::uint64_t seed = 0;
};

/// Sweeps thresholds {0, midpoints of consecutive distinct p-values, 1},
/// flagging p < threshold (threshold 1 flags everything), and keeps the
/// F1-maximizing one. Ties go to the smaller threshold.
inline DetectionReport best_f1_sweep(const std::vector<AnomalyScore>& scores,
                                     const DayCalendar& calendar, std::string method = {}) {
  if (scores.empty()) throw DataError("best_f1_sweep: no scores");
  std::vector<bool> holiday(scores.size());
  long holidays = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto it = std::lower_bound(calendar.dates.begin(), calendar.dates.end(), scores[i].date);
    if (it == calendar.dates.end() || *it != scores[i].date)
      throw DataError("best_f1_sweep: scored date " + scores[i].date.iso() + " not in calendar");
    holiday[i] = calendar.is_holiday[std::size_t(it - calendar.dates.begin())];
    holidays += holiday[i];
  }
  if (holidays == 0) throw DataError("best_f1_sweep: no holidays among the scored dates");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].p_value < scores[b].p_value;
  });

  const long total = long(scores.size());
  Confusion c{0, 0, holidays, total - holidays};
  Metrics best = metrics_from(c);
  double best_t = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const double v = scores[order[k]].p_value;
    while (k < order.size() && scores[order[k]].p_value == v) {
      if (holiday[order[k]]) ++c.tp, --c.fn;
      else ++c.fp, --c.tn;
      ++k;
    }
    const double t = k < order.size() ? 0.5 * (v + scores[order[k]].p_value) : 1.0;
    auto m = metrics_from(c);
    if (m.f1 > best.f1) {
      best = m;
      best_t = t;
    }
  }

  DetectionReport r;
  r.method = std::move(method);
  r.best_threshold = best_t;
  r.precision = best.precision;
  r.recall = best.recall;
  r.f1 = best.f1;
  r.holidays_identified = best.counts.tp;
  r.holiday_count = holidays;
  r.counts = best.counts;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = best_t >= 1.0 || scores[i].p_value < best_t;
    r.rows.push_back({scores[i].date, scores[i].p_value, flagged, bool(holiday[i])});
  }
  return r;
}

struct RenderedReport {
  std::string csv;
  std::string text;
};

inline RenderedReport render_report(const std::vector<DetectionReport>& reports) {
  if (reports.empty()) throw DataError("render_report: no reports");
  RenderedReport out;
  out.csv = "method,f1,precision,recall,holidays_identified,best_threshold,k,seed\n";
  std::size_t name_w = 6;
  for (const auto& r : reports) {
    if (r.method.empty()) throw DataError("render_report: empty method name");
    name_w = std::max(name_w, r.method.size());
    out.csv += r.method + ',' + fmt17(r.f1) + ',' + fmt17(r.precision) + ',' + fmt17(r.recall) +
               ',' + std::to_string(r.holidays_identified) + ',' + fmt17(r.best_threshold) + ',' +
               std::to_string(r.gmm_components) + ',' + std::to_string(r.seed) + '\n';
  }
  std::ostringstream t;
  t << std::left << std::setw(int(name_w)) << "Method" << "  " << std::right << std::setw(8)
    << "F1" << std::setw(11) << "Precision" << std::setw(8) << "Recall" << std::setw(21)
    << "Holidays Identified" << std::setw(16) << "Best Threshold" << std::setw(4) << "K"
    << std::setw(8) << "Seed" << '\n';
  t << std::fixed << std::setprecision(3);
  for (const auto& r : reports) {
    t << std::left << std::setw(int(name_w)) << r.method << "  " << std::right << std::setw(8)
      << r.f1 << std::setw(11) << r.precision << std::setw(8) << r.recall << std::setw(21)
      << r.holidays_identified << std::setprecision(6) << std::setw(16) << r.best_threshold
      << std::setprecision(3) << std::setw(4) << r.gmm_components << std::setw(8) << r.seed
      << '\n';
  }
  out.text = t.str();
  return out;
}

inline std::string report_rows_to_csv(const DetectionReport& r) {
  std::string s = "date,p_value,flagged,is_holiday\n";
  for (const auto& row : r.rows)
    s += row.date.iso() + ',' + fmt17(row.p_value) + ',' + (row.flagged ? "1" : "0") + ',' +
         (row.is_holiday ? "1" : "0") + '\n';
  return s;
}

}  // namespace mobanom
