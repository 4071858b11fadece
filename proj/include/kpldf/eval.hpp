#pragma once

// Metrics and reporting for knapsack predictors: approximation ratio, the
// mu-loss used for model selection, violation and objective statistics, and
// the capacity-quintile report table. All aggregation uses compensated
// summation so results are stable to within 1e-12 regardless of traversal
// order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "kpldf/instance.hpp"
#include "kpldf/nn.hpp"

namespace kpldf::eval {

struct KahanSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double x) {
    const double y = x - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  double value() const { return sum; }
};

// max(f*/f, f/f*), with the conventions: both objectives zero -> 1,
// exactly one zero -> 2.
inline double approximation_ratio(double predicted_obj, double optimal_obj) {
  if (!(predicted_obj >= 0.0) || !(optimal_obj >= 0.0) ||
      !std::isfinite(predicted_obj) || !std::isfinite(optimal_obj)) {
    throw std::invalid_argument("approximation_ratio: objectives must be finite and non-negative");
  }
  const bool pz = predicted_obj == 0.0;
  const bool oz = optimal_obj == 0.0;
  if (pz && oz) return 1.0;
  if (pz || oz) return 2.0;
  return std::max(predicted_obj / optimal_obj, optimal_obj / predicted_obj);
}

// One evaluated instance: its capacity ratio, violation, and objectives.
struct PredRecord {
  double alpha = 0.0;
  bool capacity_zero = false;
  bool violated = false;
  double violation_pct = 0.0;  // 100 * overweight / W; valid only when W > 0
  double f_pred = 0.0;
  double f_opt = 0.0;
  double ar = 1.0;
};

// Per-row metrics. Percentages are over the row's instances; the averages
// are over the subset they describe and are absent when that subset is
// empty (rendered as "N/A").
struct QuintileRow {
  std::size_t count = 0;
  std::optional<double> pct_violated;
  std::optional<double> mean_violation_pct;
  std::optional<double> pct_under;
  std::optional<double> pct_over;
  std::optional<double> avg_overshoot_pct;
  std::optional<double> avg_undershoot_pct;
  std::optional<double> ar;
};

struct EvalReport {
  // alpha in [0,0.2), [0.2,0.4), [0.4,0.6), [0.6,0.8), [0.8,1.0], then all.
  std::array<QuintileRow, 5> quintiles;
  QuintileRow all;
  std::size_t n_capacity_zero = 0;  // excluded from violation percentages
  std::size_t n_zero_optimal = 0;   // excluded from over/undershoot averages
};

inline std::size_t quintile_index(double alpha) {
  const auto idx = static_cast<long>(std::floor(alpha * 5.0));
  return static_cast<std::size_t>(std::clamp(idx, 0L, 4L));
}

inline PredRecord make_record(const LabeledInstance& li,
                              const std::vector<std::uint8_t>& prediction) {
  const KnapsackInstance& inst = li.instance;
  if (prediction.size() != inst.size()) {
    throw std::invalid_argument("prediction length mismatch for instance " +
                                std::to_string(inst.id));
  }
  PredRecord r;
  const double total_w = inst.total_weight();
  r.alpha = total_w > 0.0 ? inst.capacity / total_w : 0.0;
  r.f_pred = selection_value(prediction, inst);
  r.f_opt = li.optimal_value;
  r.ar = approximation_ratio(r.f_pred, r.f_opt);
  const double chosen_w = selection_weight(prediction, inst);
  if (inst.capacity > 0.0) {
    const double over = chosen_w - inst.capacity;
    if (over > 0.0) {
      r.violated = true;
      r.violation_pct = 100.0 * over / inst.capacity;
    }
  } else {
    r.capacity_zero = true;
    r.violated = std::any_of(prediction.begin(), prediction.end(),
                             [](std::uint8_t b) { return b != 0; });
  }
  return r;
}

inline std::vector<std::uint8_t> rounded_row(const nn::Matrix& rounded,
                                             Eigen::Index row) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(rounded.cols()));
  for (Eigen::Index j = 0; j < rounded.cols(); ++j) {
    out[static_cast<std::size_t>(j)] = rounded(row, j) >= 0.5 ? 1 : 0;
  }
  return out;
}

namespace detail {

// Mean violation percentage over violated instances with W > 0, after one
// pass of outlier removal: drop entries more than six population standard
// deviations above the mean, then re-average once.
inline std::optional<double> filtered_mean_violation(
    const std::vector<double>& violation_pcts) {
  if (violation_pcts.empty()) return std::nullopt;
  KahanSum s;
  for (double v : violation_pcts) s.add(v);
  const double mean = s.value() / static_cast<double>(violation_pcts.size());
  KahanSum sq;
  for (double v : violation_pcts) sq.add((v - mean) * (v - mean));
  const double sigma =
      std::sqrt(sq.value() / static_cast<double>(violation_pcts.size()));
  const double cutoff = mean + 6.0 * sigma;
  KahanSum kept;
  std::size_t n_kept = 0;
  for (double v : violation_pcts) {
    if (v <= cutoff) {
      kept.add(v);
      ++n_kept;
    }
  }
  if (n_kept == 0) return mean;  // unreachable: the max is within 6 sigma for n>=1
  return kept.value() / static_cast<double>(n_kept);
}

inline QuintileRow aggregate(const std::vector<const PredRecord*>& recs) {
  QuintileRow row;
  row.count = recs.size();
  if (recs.empty()) return row;

  std::size_t n_violated = 0;
  std::vector<double> violation_pcts;
  std::size_t n_under = 0, n_over = 0;
  KahanSum under_sum, over_sum, ar_sum;
  std::size_t n_under_pct = 0, n_over_pct = 0;
  for (const PredRecord* r : recs) {
    if (r->violated) ++n_violated;
    if (r->violated && !r->capacity_zero) violation_pcts.push_back(r->violation_pct);
    ar_sum.add(r->ar);
    if (r->f_pred < r->f_opt) {
      ++n_under;
      if (r->f_opt > 0.0) {
        under_sum.add(100.0 * (r->f_opt - r->f_pred) / r->f_opt);
        ++n_under_pct;
      }
    } else if (r->f_pred > r->f_opt) {
      ++n_over;
      if (r->f_opt > 0.0) {
        over_sum.add(100.0 * (r->f_pred - r->f_opt) / r->f_opt);
        ++n_over_pct;
      }
    }
  }
  const double n = static_cast<double>(recs.size());
  row.pct_violated = 100.0 * static_cast<double>(n_violated) / n;
  row.mean_violation_pct = filtered_mean_violation(violation_pcts);
  row.pct_under = 100.0 * static_cast<double>(n_under) / n;
  row.pct_over = 100.0 * static_cast<double>(n_over) / n;
  if (n_under_pct > 0) {
    row.avg_undershoot_pct = under_sum.value() / static_cast<double>(n_under_pct);
  }
  if (n_over_pct > 0) {
    row.avg_overshoot_pct = over_sum.value() / static_cast<double>(n_over_pct);
  }
  row.ar = ar_sum.value() / n;
  return row;
}

}  // namespace detail

// (pct_violated, mean_violation_pct) over one prediction set.
inline std::pair<double, std::optional<double>> violation_stats(
    const std::vector<PredRecord>& records) {
  if (records.empty()) throw std::invalid_argument("violation_stats: no records");
  std::vector<const PredRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  QuintileRow row = detail::aggregate(ptrs);
  return {*row.pct_violated, row.mean_violation_pct};
}

struct ObjectiveStats {
  double pct_under = 0.0;
  double pct_over = 0.0;
  std::optional<double> avg_undershoot_pct;
  std::optional<double> avg_overshoot_pct;
};

inline ObjectiveStats objective_stats(const std::vector<PredRecord>& records) {
  if (records.empty()) throw std::invalid_argument("objective_stats: no records");
  std::vector<const PredRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  QuintileRow row = detail::aggregate(ptrs);
  return {*row.pct_under, *row.pct_over, row.avg_undershoot_pct,
          row.avg_overshoot_pct};
}

inline std::vector<PredRecord> build_records(
    const std::vector<const LabeledInstance*>& instances,
    const nn::Matrix& rounded) {
  if (rounded.rows() != static_cast<Eigen::Index>(instances.size())) {
    throw std::invalid_argument("build_records: row count mismatch");
  }
  std::vector<PredRecord> records;
  records.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    records.push_back(make_record(*instances[i],
                                  rounded_row(rounded, static_cast<Eigen::Index>(i))));
  }
  return records;
}

inline std::pair<double, std::optional<double>> violation_stats(
    const std::vector<const LabeledInstance*>& instances,
    const nn::Matrix& rounded) {
  return violation_stats(build_records(instances, rounded));
}

inline ObjectiveStats objective_stats(
    const std::vector<const LabeledInstance*>& instances,
    const nn::Matrix& rounded) {
  return objective_stats(build_records(instances, rounded));
}

inline EvalReport build_report(const std::vector<PredRecord>& records) {
  EvalReport rep;
  std::array<std::vector<const PredRecord*>, 5> buckets;
  std::vector<const PredRecord*> everything;
  for (const auto& r : records) {
    buckets[quintile_index(r.alpha)].push_back(&r);
    everything.push_back(&r);
    if (r.capacity_zero) ++rep.n_capacity_zero;
    if (r.f_opt == 0.0) ++rep.n_zero_optimal;
  }
  for (std::size_t q = 0; q < 5; ++q) {
    rep.quintiles[q] = detail::aggregate(buckets[q]);
  }
  rep.all = detail::aggregate(everything);
  return rep;
}

// Report over explicit predictions (one rounded row per instance).
inline EvalReport evaluate_predictions(
    const std::vector<const LabeledInstance*>& instances,
    const nn::Matrix& rounded) {
  return build_report(build_records(instances, rounded));
}

constexpr std::size_t kEvalChunk = 512;

// Forward a split in eval mode, in chunks, returning one report.
inline EvalReport evaluate(const nn::ModelParams& params, const Dataset& ds,
                           const std::vector<std::uint64_t>& indices) {
  std::vector<PredRecord> records;
  records.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(indices.size(), start + kEvalChunk);
    std::vector<const LabeledInstance*> chunk;
    chunk.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) chunk.push_back(&ds.items.at(indices[i]));
    const nn::Matrix X = nn::make_input_matrix(chunk);
    const nn::ForwardTrace t = nn::forward_eval(params, X);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      records.push_back(make_record(
          *chunk[i], rounded_row(t.rounded, static_cast<Eigen::Index>(i))));
    }
  }
  return build_report(records);
}

// BCE plus mu times the mean capacity overshoot of the rounded selections —
// the model-selection loss with a fixed multiplier stand-in.
inline double mu_loss(const nn::Matrix& logits, const nn::Matrix& rounded,
                      const nn::Matrix& labels,
                      const std::vector<const LabeledInstance*>& instances,
                      double mu) {
  if (!(mu >= 0.0)) throw std::invalid_argument("mu must be >= 0");
  if (rounded.rows() != static_cast<Eigen::Index>(instances.size())) {
    throw std::invalid_argument("mu_loss: row count mismatch");
  }
  const double bce = nn::bce_loss(logits, labels).loss;
  KahanSum viol;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const KnapsackInstance& inst = instances[i]->instance;
    const auto pred = rounded_row(rounded, static_cast<Eigen::Index>(i));
    viol.add(std::max(0.0, selection_weight(pred, inst) - inst.capacity));
  }
  return bce + mu * (viol.value() / static_cast<double>(instances.size()));
}

// Scalar validation metrics used during training: mean per-instance AR,
// mu-loss (mean BCE plus mu times mean violation in raw weight units),
// the fraction of instances violating their capacity, and the violation sum.
struct SplitMetrics {
  double ar = 0.0;
  double bce = 0.0;
  double mu_loss = 0.0;
  double violation_rate = 0.0;  // fraction in [0,1]
  double total_violation = 0.0;
};

inline SplitMetrics evaluate_split_metrics(const nn::ModelParams& params,
                                           const Dataset& ds,
                                           const std::vector<std::uint64_t>& indices,
                                           double mu) {
  if (indices.empty()) {
    throw std::invalid_argument("evaluate_split_metrics: empty split");
  }
  KahanSum ar_sum, bce_sum, viol_sum;
  std::size_t n_violated = 0;
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(indices.size(), start + kEvalChunk);
    std::vector<const LabeledInstance*> chunk;
    chunk.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) chunk.push_back(&ds.items.at(indices[i]));
    const nn::Matrix X = nn::make_input_matrix(chunk);
    const nn::Matrix Y = nn::make_label_matrix(chunk);
    const nn::ForwardTrace t = nn::forward_eval(params, X);
    bce_sum.add(nn::bce_loss(t.logits, Y).loss * static_cast<double>(chunk.size()));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto pred = rounded_row(t.rounded, static_cast<Eigen::Index>(i));
      const KnapsackInstance& inst = chunk[i]->instance;
      const double over = selection_weight(pred, inst) - inst.capacity;
      if (over > 0.0) {
        viol_sum.add(over);
        ++n_violated;
      }
      ar_sum.add(approximation_ratio(selection_value(pred, inst),
                                     chunk[i]->optimal_value));
    }
  }
  const double n = static_cast<double>(indices.size());
  SplitMetrics m;
  m.ar = ar_sum.value() / n;
  m.bce = bce_sum.value() / n;
  m.total_violation = viol_sum.value();
  m.mu_loss = m.bce + mu * (m.total_violation / n);
  m.violation_rate = static_cast<double>(n_violated) / n;
  return m;
}

// Earliest index of the minimum value. Rejects empty or non-finite series.
inline std::size_t select_model(const std::vector<double>& metric_series) {
  if (metric_series.empty()) {
    throw std::invalid_argument("select_model: empty metric series");
  }
  std::size_t best = 0;
  for (std::size_t i = 0; i < metric_series.size(); ++i) {
    if (!std::isfinite(metric_series[i])) {
      throw std::invalid_argument("select_model: non-finite metric at index " +
                                  std::to_string(i));
    }
    if (metric_series[i] < metric_series[best]) best = i;
  }
  return best;
}

namespace detail {

inline std::string fmt_cell(const std::optional<double>& v, int prec) {
  if (!v) return "N/A";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << *v;
  return os.str();
}

}  // namespace detail

// Aligned text table, one row per capacity quintile plus an overall row.
inline std::string render_table(const EvalReport& rep) {
  static const char* kAlphaLabels[] = {"[0.0,0.2)", "[0.2,0.4)", "[0.4,0.6)",
                                       "[0.6,0.8)", "[0.8,1.0]", "All"};
  const std::vector<std::string> header = {
      "alpha",  "Count", "%Violated", "MeanViol%", "%Under",
      "%Over",  "Avg-O%", "Avg-U%",   "AR"};

  std::vector<std::vector<std::string>> rows;
  auto push_row = [&rows](const char* label, const QuintileRow& r) {
    rows.push_back({label, std::to_string(r.count),
                    detail::fmt_cell(r.pct_violated, 2),
                    detail::fmt_cell(r.mean_violation_pct, 2),
                    detail::fmt_cell(r.pct_under, 2),
                    detail::fmt_cell(r.pct_over, 2),
                    detail::fmt_cell(r.avg_overshoot_pct, 2),
                    detail::fmt_cell(r.avg_undershoot_pct, 2),
                    detail::fmt_cell(r.ar, 4)});
  };
  for (std::size_t q = 0; q < 5; ++q) push_row(kAlphaLabels[q], rep.quintiles[q]);
  push_row(kAlphaLabels[5], rep.all);

  std::vector<std::size_t> widths(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) widths[c] = header[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      widths[c] = std::max(widths[c], row[c].size());
    }
  }
  std::ostringstream os;
  auto emit = [&os, &widths](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) os << "  ";
      os << (c == 0 ? std::left : std::right)
         << std::setw(static_cast<int>(widths[c])) << row[c];
    }
    os << std::right << "\n";
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  return os.str();
}

inline nlohmann::ordered_json row_to_json(const QuintileRow& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["count"] = r.count;
  j["pct_violated"] = opt(r.pct_violated);
  j["mean_violation_pct"] = opt(r.mean_violation_pct);
  j["pct_under"] = opt(r.pct_under);
  j["pct_over"] = opt(r.pct_over);
  j["avg_overshoot_pct"] = opt(r.avg_overshoot_pct);
  j["avg_undershoot_pct"] = opt(r.avg_undershoot_pct);
  j["ar"] = opt(r.ar);
  return j;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& rep) {
  static const char* kKeys[] = {"0.0-0.2", "0.2-0.4", "0.4-0.6", "0.6-0.8",
                                "0.8-1.0"};
  nlohmann::ordered_json j;
  nlohmann::ordered_json quintiles;
  for (std::size_t q = 0; q < 5; ++q) {
    quintiles[kKeys[q]] = row_to_json(rep.quintiles[q]);
  }
  j["quintiles"] = quintiles;
  j["all"] = row_to_json(rep.all);
  j["excluded"] = {{"capacity_zero", rep.n_capacity_zero},
                   {"zero_optimal", rep.n_zero_optimal}};
  return j;
}

}  // namespace kpldf::eval
