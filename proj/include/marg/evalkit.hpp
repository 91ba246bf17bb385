#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "marg/corpus.hpp"
#include "marg/errors.hpp"
#include "marg/gateway.hpp"

namespace marg {

// ---------------------------------------------------------------------------
// Correlation and error metrics
// ---------------------------------------------------------------------------

struct MetricSet {
  double pearson = 0.0;
  double spearman = 0.0;
  double mse = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
};

namespace eval_detail {

inline void require_paired(const std::vector<double>& x, const std::vector<double>& y,
                           std::size_t min_len) {
  if (x.size() != y.size())
    throw LengthMismatch("vectors have lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
  if (x.size() < min_len)
    throw LengthMismatch("need at least " + std::to_string(min_len) + " points, got " +
                         std::to_string(x.size()));
}

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample variance, n-1 denominator.
inline double variance(const std::vector<double>& v) {
  double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size() - 1);
}

}  // namespace eval_detail

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  eval_detail::require_paired(x, y, 2);
  double mx = eval_detail::mean(x);
  double my = eval_detail::mean(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx;
    double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ConstantInput("constant vector has no correlation");
  return sxy / std::sqrt(sxx * syy);
}

/// Average fractional ranks, 1-based; ties share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  eval_detail::require_paired(x, y, 2);
  return pearson(average_ranks(x), average_ranks(y));
}

struct ErrorMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
};

inline ErrorMetrics error_metrics(const std::vector<double>& pred,
                                  const std::vector<double>& gold) {
  eval_detail::require_paired(pred, gold, 1);
  ErrorMetrics out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - gold[i];
    out.mse += d * d;
    out.mae += std::abs(d);
  }
  out.mse /= static_cast<double>(pred.size());
  out.mae /= static_cast<double>(pred.size());
  out.rmse = std::sqrt(out.mse);
  return out;
}

inline MetricSet metric_set(const std::vector<double>& pred,
                            const std::vector<double>& gold) {
  MetricSet out;
  out.pearson = pearson(pred, gold);
  out.spearman = spearman(pred, gold);
  ErrorMetrics e = error_metrics(pred, gold);
  out.mse = e.mse;
  out.mae = e.mae;
  out.rmse = e.rmse;
  out.n = pred.size();
  return out;
}

// ---------------------------------------------------------------------------
// Inter-annotator agreement
// ---------------------------------------------------------------------------

/// Fleiss' kappa over an items-by-categories count matrix. Every item must
/// carry the same number of ratings.
inline double fleiss_kappa(const std::vector<std::vector<int>>& counts) {
  if (counts.empty()) throw UnequalRaterCounts("no items");
  std::size_t categories = counts[0].size();
  long long raters = 0;
  for (const auto& row : counts) {
    if (row.size() != categories)
      throw LengthMismatch("count rows must share one category set");
    long long total = 0;
    for (int c : row) {
      if (c < 0) throw UnequalRaterCounts("negative rating count");
      total += c;
    }
    if (&row == &counts[0]) raters = total;
    if (total != raters) throw UnequalRaterCounts("items have differing rater counts");
  }
  if (raters < 2) throw UnequalRaterCounts("need at least 2 raters per item");

  double items = static_cast<double>(counts.size());
  double n = static_cast<double>(raters);
  double p_bar = 0.0;
  std::vector<double> category_share(categories, 0.0);
  for (const auto& row : counts) {
    double agree = 0.0;
    for (std::size_t c = 0; c < categories; ++c) {
      double v = static_cast<double>(row[c]);
      agree += v * (v - 1.0);
      category_share[c] += v;
    }
    p_bar += agree / (n * (n - 1.0));
  }
  p_bar /= items;
  double p_expected = 0.0;
  for (double share : category_share) {
    double p = share / (items * n);
    p_expected += p * p;
  }

  // Perfect agreement is 1 by definition even when a single category soaks up
  // all ratings and the chance-correction denominator vanishes.
  if (p_bar == 1.0) return 1.0;
  if (p_expected == 1.0) throw DegenerateAgreement("chance agreement is 1");
  return (p_bar - p_expected) / (1.0 - p_expected);
}

/// Cronbach's alpha with annotators as instruments: rows are raters, columns
/// are items, variances use the n-1 denominator.
inline double cronbach_alpha(const std::vector<std::vector<double>>& raters) {
  if (raters.size() < 2) throw LengthMismatch("need at least 2 raters");
  std::size_t items = raters[0].size();
  if (items < 2) throw LengthMismatch("need at least 2 items");
  for (const auto& row : raters)
    if (row.size() != items) throw LengthMismatch("rater rows must share one item set");

  double sum_rater_variance = 0.0;
  for (const auto& row : raters) sum_rater_variance += eval_detail::variance(row);

  std::vector<double> totals(items, 0.0);
  for (const auto& row : raters)
    for (std::size_t i = 0; i < items; ++i) totals[i] += row[i];
  double total_variance = eval_detail::variance(totals);
  if (total_variance == 0.0) throw ZeroTotalVariance();

  double k = static_cast<double>(raters.size());
  return k / (k - 1.0) * (1.0 - sum_rater_variance / total_variance);
}

struct AgreementReport {
  double fleiss_kappa = 0.0;
  double cronbach_alpha = 0.0;
  std::size_t n_items = 0;
  std::size_t n_raters = 0;
};

/// Agreement over annotated pairs. Rater identity is positional: ratings[r]
/// must belong to the same annotator on every pair.
inline AgreementReport agreement_from_pairs(const std::vector<AnnotatedPair>& pairs) {
  if (pairs.empty()) throw UnequalRaterCounts("no annotated pairs");
  std::size_t raters = pairs[0].ratings.size();
  for (const auto& p : pairs)
    if (p.ratings.size() != raters)
      throw UnequalRaterCounts("pair '" + p.pair.pair_id + "' has " +
                               std::to_string(p.ratings.size()) + " ratings, expected " +
                               std::to_string(raters));
  if (raters < 2) throw UnequalRaterCounts("need at least 2 raters per pair");

  std::vector<std::vector<int>> counts(pairs.size(), std::vector<int>(5, 0));
  std::vector<std::vector<double>> matrix(raters, std::vector<double>(pairs.size(), 0.0));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (std::size_t r = 0; r < raters; ++r) {
      int rating = pairs[i].ratings[r];
      if (rating < 1 || rating > 5) throw OutOfRangeRating(rating);
      ++counts[i][static_cast<std::size_t>(rating - 1)];
      matrix[r][i] = static_cast<double>(rating);
    }
  }

  AgreementReport report;
  report.fleiss_kappa = fleiss_kappa(counts);
  report.cronbach_alpha = cronbach_alpha(matrix);
  report.n_items = pairs.size();
  report.n_raters = raters;
  return report;
}

// ---------------------------------------------------------------------------
// Residual analysis
// ---------------------------------------------------------------------------

/// One scored pair with everything the reports and exports need.
struct ScoredPair {
  std::string pair_id;
  double predicted = 0.0;
  double gold = 0.0;
  char ipc_section = '?';  // section letter of patent a's first IPC code
  double s_t = 0.0, s_d = 0.0, s_c = 0.0;
  double w_t = 0.0, w_d = 0.0, w_c = 0.0;
};

struct ResidualRecord {
  std::string pair_id;
  double predicted = 0.0;
  double gold = 0.0;
  double residual = 0.0;  // predicted - gold
  char ipc_section = '?';
};

struct SectionStats {
  double mae = 0.0;
  double mean_residual = 0.0;
  std::size_t n = 0;
};

struct ResidualAnalysis {
  double mean_residual = 0.0;
  std::vector<ResidualRecord> records;  // |residual| descending
  std::map<char, SectionStats> per_section;
};

namespace eval_detail {

inline bool worse_error(const ResidualRecord& a, const ResidualRecord& b) {
  double ea = std::abs(a.residual);
  double eb = std::abs(b.residual);
  if (ea != eb) return ea > eb;
  return a.pair_id < b.pair_id;  // deterministic order for equal errors
}

}  // namespace eval_detail

inline ResidualAnalysis residual_analysis(const std::vector<ScoredPair>& results) {
  ResidualAnalysis out;
  if (results.empty()) return out;

  std::map<char, std::pair<double, double>> section_sums;  // |residual|, residual
  for (const auto& row : results) {
    ResidualRecord rec;
    rec.pair_id = row.pair_id;
    rec.predicted = row.predicted;
    rec.gold = row.gold;
    rec.residual = row.predicted - row.gold;
    rec.ipc_section = row.ipc_section;
    out.records.push_back(rec);

    out.mean_residual += rec.residual;
    auto& sums = section_sums[row.ipc_section];
    sums.first += std::abs(rec.residual);
    sums.second += rec.residual;
    ++out.per_section[row.ipc_section].n;
  }
  out.mean_residual /= static_cast<double>(results.size());
  for (auto& [section, stats] : out.per_section) {
    stats.mae = section_sums[section].first / static_cast<double>(stats.n);
    stats.mean_residual = section_sums[section].second / static_cast<double>(stats.n);
  }
  std::sort(out.records.begin(), out.records.end(), eval_detail::worse_error);
  return out;
}

inline std::vector<ResidualRecord> top_k_errors(std::vector<ResidualRecord> records,
                                                std::size_t k) {
  std::sort(records.begin(), records.end(), eval_detail::worse_error);
  if (records.size() > k) records.resize(k);
  return records;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Correlation and error figures the published evaluation reports for the
/// full pipeline; carried in reports for orientation, never asserted against
/// local runs.
struct ReferenceFigures {
  double pearson = 0.938;
  double spearman = 0.923;
  double mse = 0.113;
  double mae = 0.092;
};

enum class ReportFormat { Json, Csv };

struct ReportInputs {
  std::vector<ScoredPair> results;
  std::optional<AgreementReport> agreement;
  UsageRecord usage;
  std::vector<std::string> warnings;
  PriceTable prices;
  std::size_t top_k = 10;
};

inline nlohmann::ordered_json build_report(const ReportInputs& in) {
  nlohmann::ordered_json j;
  j["n"] = in.results.size();

  if (!in.results.empty()) {
    std::vector<double> pred, gold;
    pred.reserve(in.results.size());
    for (const auto& r : in.results) {
      pred.push_back(r.predicted);
      gold.push_back(r.gold);
    }
    nlohmann::ordered_json metrics;
    if (pred.size() >= 2) {
      try {
        metrics["pearson"] = pearson(pred, gold);
        metrics["spearman"] = spearman(pred, gold);
      } catch (const ConstantInput&) {
        // Correlations are undefined for constant inputs; errors still apply.
      }
    }
    ErrorMetrics e = error_metrics(pred, gold);
    metrics["mse"] = e.mse;
    metrics["mae"] = e.mae;
    metrics["rmse"] = e.rmse;
    j["metrics"] = metrics;
  }

  if (in.agreement) {
    j["agreement"] = {{"fleiss_kappa", in.agreement->fleiss_kappa},
                      {"cronbach_alpha", in.agreement->cronbach_alpha},
                      {"n_items", in.agreement->n_items},
                      {"n_raters", in.agreement->n_raters}};
  }

  if (!in.results.empty()) {
    ResidualAnalysis analysis = residual_analysis(in.results);
    j["mean_residual"] = analysis.mean_residual;
    nlohmann::ordered_json per_section;
    for (const auto& [section, stats] : analysis.per_section) {
      per_section[std::string(1, section)] = {{"mae", stats.mae},
                                              {"mean_residual", stats.mean_residual},
                                              {"n", stats.n}};
    }
    j["per_section"] = per_section;
    auto record_json = [](const ResidualRecord& rec) {
      return nlohmann::ordered_json{{"pair_id", rec.pair_id},
                                    {"predicted", rec.predicted},
                                    {"gold", rec.gold},
                                    {"residual", rec.residual},
                                    {"ipc_section", std::string(1, rec.ipc_section)}};
    };
    nlohmann::ordered_json top = nlohmann::ordered_json::array();
    for (const auto& rec : top_k_errors(analysis.records, in.top_k))
      top.push_back(record_json(rec));
    j["top_errors"] = top;
    nlohmann::ordered_json residuals = nlohmann::ordered_json::array();
    for (const auto& rec : analysis.records) residuals.push_back(record_json(rec));
    j["residuals"] = residuals;
  }

  j["usage"] = {{"input_tokens", in.usage.input_tokens},
                {"output_tokens", in.usage.output_tokens},
                {"calls", in.usage.calls},
                {"wall_time_ms", in.usage.wall_time_ms}};
  j["cost_usd"] = estimate_cost(in.usage, in.prices);

  std::size_t clamped = 0, fallbacks = 0, reprompts = 0;
  for (const auto& w : in.warnings) {
    if (w.find("clamped") != std::string::npos) ++clamped;
    if (w.find("fallback") != std::string::npos) ++fallbacks;
    if (w.find("re-prompted") != std::string::npos) ++reprompts;
  }
  j["warning_counts"] = {{"clamped", clamped},
                         {"fallbacks", fallbacks},
                         {"re_prompts", reprompts}};
  j["warnings"] = in.warnings;

  ReferenceFigures ref;
  j["reference"] = {{"label", "published-reference"},
                    {"pearson", ref.pearson},
                    {"spearman", ref.spearman},
                    {"mse", ref.mse},
                    {"mae", ref.mae}};
  return j;
}

namespace eval_detail {

inline std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string quoted = "\"";
  for (char c : value) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

inline std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace eval_detail

/// One row per pair in input order; residual recomputed as predicted - gold.
inline std::string report_csv(const std::vector<ScoredPair>& results) {
  std::string out =
      "pair_id,predicted,gold,residual,ipc_section,s_t,s_d,s_c,w_t,w_d,w_c\n";
  for (const auto& r : results) {
    out += eval_detail::csv_field(r.pair_id);
    out += ',';
    out += eval_detail::csv_number(r.predicted);
    out += ',';
    out += eval_detail::csv_number(r.gold);
    out += ',';
    out += eval_detail::csv_number(r.predicted - r.gold);
    out += ',';
    out += r.ipc_section;
    out += ',';
    out += eval_detail::csv_number(r.s_t);
    out += ',';
    out += eval_detail::csv_number(r.s_d);
    out += ',';
    out += eval_detail::csv_number(r.s_c);
    out += ',';
    out += eval_detail::csv_number(r.w_t);
    out += ',';
    out += eval_detail::csv_number(r.w_d);
    out += ',';
    out += eval_detail::csv_number(r.w_c);
    out += '\n';
  }
  return out;
}

inline void emit_report(const ReportInputs& in, const std::string& path,
                        ReportFormat format = ReportFormat::Json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open report file for writing: " + path);
  if (format == ReportFormat::Json)
    out << build_report(in).dump(2) << "\n";
  else
    out << report_csv(in.results);
  if (!out) throw IoError("failed while writing report file: " + path);
}

}  // namespace marg
