#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "marg/engine.hpp"
#include "marg/errors.hpp"
#include "marg/gateway.hpp"
#include "marg/prompt_kit.hpp"

namespace marg {

// ---------------------------------------------------------------------------
// Weighting strategies
// ---------------------------------------------------------------------------

enum class StrategyKind { DynamicMarg, Equal, SubsetOnly, FixedWeights };

struct WeightingStrategy {
  StrategyKind kind = StrategyKind::DynamicMarg;
  // SubsetOnly mask; excluded dimensions get zero weight.
  bool use_technical = true;
  bool use_application = true;
  bool use_claim = true;
  // FixedWeights raw components, normalized before use.
  double fixed_t = 0.0, fixed_d = 0.0, fixed_c = 0.0;

  static WeightingStrategy dynamic_marg() { return {}; }
  static WeightingStrategy equal() {
    WeightingStrategy s;
    s.kind = StrategyKind::Equal;
    return s;
  }
  static WeightingStrategy subset(bool technical, bool application, bool claim) {
    if (!technical && !application && !claim)
      throw DegenerateWeights("subset strategy selects no dimensions");
    WeightingStrategy s;
    s.kind = StrategyKind::SubsetOnly;
    s.use_technical = technical;
    s.use_application = application;
    s.use_claim = claim;
    return s;
  }
  static WeightingStrategy fixed_weights(double w_t, double w_d, double w_c) {
    WeightingStrategy s;
    s.kind = StrategyKind::FixedWeights;
    s.fixed_t = w_t;
    s.fixed_d = w_d;
    s.fixed_c = w_c;
    return s;
  }
};

/// The weights a strategy resolves to. DynamicMarg needs the reasoned weights
/// of an engine run; the other kinds ignore them.
inline WeightVector strategy_weights(const WeightingStrategy& strategy,
                                     const WeightVector* dynamic = nullptr) {
  switch (strategy.kind) {
    case StrategyKind::DynamicMarg:
      if (!dynamic)
        throw DegenerateWeights("dynamic strategy needs reasoned weights");
      return normalize_weights(dynamic->w_t, dynamic->w_d, dynamic->w_c);
    case StrategyKind::Equal:
      return normalize_weights(1.0, 1.0, 1.0);
    case StrategyKind::SubsetOnly:
      return normalize_weights(strategy.use_technical ? 1.0 : 0.0,
                               strategy.use_application ? 1.0 : 0.0,
                               strategy.use_claim ? 1.0 : 0.0);
    case StrategyKind::FixedWeights:
      return normalize_weights(strategy.fixed_t, strategy.fixed_d, strategy.fixed_c);
  }
  throw DegenerateWeights("unknown strategy kind");
}

inline double score_with_strategy(const DimensionScores& scores,
                                  const WeightingStrategy& strategy,
                                  const WeightVector* dynamic = nullptr) {
  return combine(scores, strategy_weights(strategy, dynamic));
}

/// Mean absolute correlation drop of a variant against the full pipeline,
/// in percent, averaged over Pearson and Spearman.
inline double avg_drop(double full_pearson, double full_spearman,
                       double variant_pearson, double variant_spearman) {
  return 100.0 * 0.5 * (std::abs(full_pearson - variant_pearson) +
                        std::abs(full_spearman - variant_spearman));
}

// ---------------------------------------------------------------------------
// Regression over dimension scores
// ---------------------------------------------------------------------------

enum class RegressionMethod { Ols, Ridge, Lasso };

inline const char* to_string(RegressionMethod m) {
  switch (m) {
    case RegressionMethod::Ols: return "ols";
    case RegressionMethod::Ridge: return "ridge";
    case RegressionMethod::Lasso: return "lasso";
  }
  return "ols";
}

inline RegressionMethod regression_method_from_string(const std::string& name) {
  if (name == "ols") return RegressionMethod::Ols;
  if (name == "ridge") return RegressionMethod::Ridge;
  if (name == "lasso") return RegressionMethod::Lasso;
  throw SchemaError(0, "unknown regression method '" + name + "'");
}

struct RegressionRow {
  double s_t = 0.0, s_d = 0.0, s_c = 0.0;
  double gold = 0.0;
};

struct RegressionFit {
  RegressionMethod method = RegressionMethod::Ols;
  double lambda = 0.0;
  std::array<double, 3> coefficients{};  // technical, application, claim
  double intercept = 0.0;
  std::size_t cv_folds = 0;
  double cv_mse = 0.0;
  double cv_mae = 0.0;
  std::vector<std::string> warnings;

  double predict(double s_t, double s_d, double s_c) const {
    return intercept + coefficients[0] * s_t + coefficients[1] * s_d +
           coefficients[2] * s_c;
  }
  double predict(const RegressionRow& row) const {
    return predict(row.s_t, row.s_d, row.s_c);
  }
};

struct FitOptions {
  RegressionMethod method = RegressionMethod::Ols;
  double lambda = 0.1;    // ignored by OLS
  std::size_t folds = 5;  // cross-validation folds
};

namespace fit_detail {

struct Centered {
  std::array<std::vector<double>, 3> x;  // centered columns
  std::vector<double> y;                 // centered gold
  std::array<double, 3> x_mean{};
  double y_mean = 0.0;
};

inline Centered center(const std::vector<RegressionRow>& rows) {
  Centered c;
  double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    c.x_mean[0] += r.s_t;
    c.x_mean[1] += r.s_d;
    c.x_mean[2] += r.s_c;
    c.y_mean += r.gold;
  }
  for (double& m : c.x_mean) m /= n;
  c.y_mean /= n;
  for (const auto& r : rows) {
    c.x[0].push_back(r.s_t - c.x_mean[0]);
    c.x[1].push_back(r.s_d - c.x_mean[1]);
    c.x[2].push_back(r.s_c - c.x_mean[2]);
    c.y.push_back(r.gold - c.y_mean);
  }
  return c;
}

/// Solves the 3x3 symmetric positive-definite system A b = rhs by Cholesky.
inline std::array<double, 3> solve_spd(std::array<std::array<double, 3>, 3> a,
                                       std::array<double, 3> rhs) {
  double max_diag = 0.0;
  for (int i = 0; i < 3; ++i) max_diag = std::max(max_diag, std::abs(a[i][i]));
  if (max_diag == 0.0) throw SingularDesign("design matrix is all zero");

  std::array<std::array<double, 3>, 3> l{};
  for (int j = 0; j < 3; ++j) {
    double diag = a[j][j];
    for (int k = 0; k < j; ++k) diag -= l[j][k] * l[j][k];
    if (diag <= 1e-12 * max_diag)
      throw SingularDesign("design matrix is rank deficient");
    l[j][j] = std::sqrt(diag);
    for (int i = j + 1; i < 3; ++i) {
      double v = a[i][j];
      for (int k = 0; k < j; ++k) v -= l[i][k] * l[j][k];
      l[i][j] = v / l[j][j];
    }
  }
  // Forward then back substitution.
  std::array<double, 3> z{};
  for (int i = 0; i < 3; ++i) {
    double v = rhs[i];
    for (int k = 0; k < i; ++k) v -= l[i][k] * z[k];
    z[i] = v / l[i][i];
  }
  std::array<double, 3> b{};
  for (int i = 2; i >= 0; --i) {
    double v = z[i];
    for (int k = i + 1; k < 3; ++k) v -= l[k][i] * b[k];
    b[i] = v / l[i][i];
  }
  return b;
}

inline std::array<double, 3> linear_coefficients(const Centered& c, double lambda) {
  std::array<std::array<double, 3>, 3> gram{};
  std::array<double, 3> rhs{};
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < c.y.size(); ++k) dot += c.x[i][k] * c.x[j][k];
      gram[i][j] = gram[j][i] = dot;
    }
    for (std::size_t k = 0; k < c.y.size(); ++k) rhs[i] += c.x[i][k] * c.y[k];
    gram[i][i] += lambda;
  }
  return solve_spd(gram, rhs);
}

/// Cyclic coordinate descent for (1/2n)||y - Xb||^2 + lambda*||b||_1 on the
/// centered system.
inline std::array<double, 3> lasso_coefficients(const Centered& c, double lambda,
                                                std::vector<std::string>* warnings) {
  double n = static_cast<double>(c.y.size());
  std::array<double, 3> col_sq{};
  for (int j = 0; j < 3; ++j) {
    for (double v : c.x[j]) col_sq[j] += v * v;
    col_sq[j] /= n;
  }
  std::array<double, 3> b{};
  std::vector<double> residual = c.y;
  const int kMaxSweeps = 10000;
  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    double max_delta = 0.0;
    for (int j = 0; j < 3; ++j) {
      if (col_sq[j] == 0.0) continue;  // constant column stays out of the model
      double rho = 0.0;
      for (std::size_t k = 0; k < residual.size(); ++k)
        rho += c.x[j][k] * (residual[k] + c.x[j][k] * b[j]);
      rho /= n;
      double updated = 0.0;
      if (rho > lambda) updated = (rho - lambda) / col_sq[j];
      else if (rho < -lambda) updated = (rho + lambda) / col_sq[j];
      double delta = updated - b[j];
      if (delta != 0.0) {
        for (std::size_t k = 0; k < residual.size(); ++k)
          residual[k] -= c.x[j][k] * delta;
        b[j] = updated;
      }
      max_delta = std::max(max_delta, std::abs(delta));
    }
    if (max_delta < 1e-10) break;
  }
  if (sweep == kMaxSweeps && warnings)
    warnings->push_back("lasso stopped after 10000 sweeps without converging");
  return b;
}

inline std::array<double, 3> coefficients_for(const std::vector<RegressionRow>& rows,
                                              RegressionMethod method, double lambda,
                                              std::vector<std::string>* warnings) {
  Centered c = center(rows);
  switch (method) {
    case RegressionMethod::Ols: return linear_coefficients(c, 0.0);
    case RegressionMethod::Ridge: return linear_coefficients(c, lambda);
    case RegressionMethod::Lasso: return lasso_coefficients(c, lambda, warnings);
  }
  return {};
}

inline double intercept_for(const std::vector<RegressionRow>& rows,
                            const std::array<double, 3>& b) {
  Centered c = center(rows);
  return c.y_mean - b[0] * c.x_mean[0] - b[1] * c.x_mean[1] - b[2] * c.x_mean[2];
}

}  // namespace fit_detail

inline RegressionFit fit_regression(const std::vector<RegressionRow>& rows,
                                    FitOptions opts = {}) {
  if (rows.size() < 4)
    throw LengthMismatch("regression needs at least 4 rows, got " +
                         std::to_string(rows.size()));

  RegressionFit fit;
  fit.method = opts.method;
  fit.lambda = opts.method == RegressionMethod::Ols ? 0.0 : opts.lambda;
  if (fit.lambda < 0.0) throw SingularDesign("penalty must be non-negative");

  fit.coefficients =
      fit_detail::coefficients_for(rows, fit.method, fit.lambda, &fit.warnings);
  fit.intercept = fit_detail::intercept_for(rows, fit.coefficients);

  // Round-robin fold assignment keeps cross-validation deterministic.
  std::size_t k = opts.folds;
  if (k <= 1) {
    k = 1;
    fit.warnings.push_back("single fold, cross-validation scores are in-sample");
  }
  if (k > rows.size()) {
    fit.warnings.push_back("folds clamped to " + std::to_string(rows.size()));
    k = rows.size();
  }
  fit.cv_folds = k;

  double mse_sum = 0.0, mae_sum = 0.0;
  for (std::size_t fold = 0; fold < k; ++fold) {
    std::vector<RegressionRow> train, test;
    for (std::size_t i = 0; i < rows.size(); ++i)
      (k == 1 || i % k != fold ? train : test).push_back(rows[i]);
    if (k == 1) test = rows;

    std::array<double, 3> b =
        fit_detail::coefficients_for(train, fit.method, fit.lambda, nullptr);
    double intercept = fit_detail::intercept_for(train, b);
    double fold_mse = 0.0, fold_mae = 0.0;
    for (const auto& row : test) {
      double err = intercept + b[0] * row.s_t + b[1] * row.s_d + b[2] * row.s_c -
                   row.gold;
      fold_mse += err * err;
      fold_mae += std::abs(err);
    }
    mse_sum += fold_mse / static_cast<double>(test.size());
    mae_sum += fold_mae / static_cast<double>(test.size());
  }
  fit.cv_mse = mse_sum / static_cast<double>(k);
  fit.cv_mae = mae_sum / static_cast<double>(k);
  return fit;
}

inline nlohmann::ordered_json fit_to_json(const RegressionFit& fit) {
  return {{"method", to_string(fit.method)},
          {"lambda", fit.lambda},
          {"coefficients",
           {{"technical", fit.coefficients[0]},
            {"application", fit.coefficients[1]},
            {"claim", fit.coefficients[2]}}},
          {"intercept", fit.intercept},
          {"cv", {{"folds", fit.cv_folds}, {"mse", fit.cv_mse}, {"mae", fit.cv_mae}}},
          {"warnings", fit.warnings}};
}

inline RegressionFit fit_from_json(const nlohmann::json& j) {
  try {
    RegressionFit fit;
    fit.method = regression_method_from_string(j.at("method").get<std::string>());
    fit.lambda = j.at("lambda").get<double>();
    const auto& coef = j.at("coefficients");
    fit.coefficients = {coef.at("technical").get<double>(),
                        coef.at("application").get<double>(),
                        coef.at("claim").get<double>()};
    fit.intercept = j.at("intercept").get<double>();
    const auto& cv = j.at("cv");
    fit.cv_folds = cv.at("folds").get<std::size_t>();
    fit.cv_mse = cv.at("mse").get<double>();
    fit.cv_mae = cv.at("mae").get<double>();
    if (j.contains("warnings"))
      fit.warnings = j.at("warnings").get<std::vector<std::string>>();
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(0, std::string("bad fit file: ") + e.what());
  }
}

inline void save_fit(const RegressionFit& fit, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open fit file for writing: " + path);
  out << fit_to_json(fit).dump(2) << "\n";
  if (!out) throw IoError("failed while writing fit file: " + path);
}

inline RegressionFit load_fit(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open fit file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(0, std::string("bad fit file: ") + e.what());
  }
  return fit_from_json(j);
}

// ---------------------------------------------------------------------------
// Prompting baselines
// ---------------------------------------------------------------------------

struct BaselineResult {
  double score = 0.0;
  UsageRecord usage;
  std::vector<std::string> warnings;
};

/// One-shot similarity prompt without the reasoning graph. The reply must
/// carry a Score marker; one corrective re-prompt is allowed.
inline BaselineResult run_prompt_baseline(const PatentPair& pair, StageId kind,
                                          Gateway& gateway,
                                          const FewshotExemplars& exemplars,
                                          const std::string& model = "default") {
  if (kind != StageId::BaselineIO && kind != StageId::BaselineCoT &&
      kind != StageId::BaselineFewShot)
    throw StageError(std::string(to_string(kind)), "not a prompting baseline");

  PromptContext context =
      kind == StageId::BaselineFewShot
          ? fewshot_context(pair, exemplars)
          : PromptContext{{"a_content", patent_block(pair.a)},
                          {"b_content", patent_block(pair.b)}};
  ChatRequest request;
  request.stage = std::string(to_string(kind));
  request.prompt = render(kind, context);
  request.model = model;

  BaselineResult out;
  ChatResponse response = gateway.complete(request);
  out.usage = response.usage;
  try {
    out.score = round3(parse_baseline_score(response.text, &out.warnings));
  } catch (const ParseFailure& first) {
    ChatRequest retry = request;
    retry.prompt = request.prompt + "\n\n" + format_reminder(kind);
    ChatResponse second = gateway.complete(retry);
    out.usage = merge_usage(out.usage, second.usage);
    out.warnings.push_back(std::string("re-prompted after: ") + first.what());
    try {
      out.score = round3(parse_baseline_score(second.text, &out.warnings));
    } catch (const ParseFailure& again) {
      throw StageError(std::string(to_string(kind)), again.what());
    }
  }
  return out;
}

}  // namespace marg
