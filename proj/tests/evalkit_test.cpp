#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "marg/errors.hpp"
#include "marg/evalkit.hpp"

using Catch::Approx;

namespace {

// Oracle via the sum-of-products identity rather than centered sums.
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

std::vector<marg::ScoredPair> load_hard_cases() {
  std::ifstream in(std::string(MARG_FIXTURES_DIR) + "/high_error_cases.json");
  REQUIRE(in.good());
  nlohmann::json rows = nlohmann::json::parse(in);
  std::vector<marg::ScoredPair> out;
  for (const auto& row : rows) {
    marg::ScoredPair p;
    p.pair_id = row.at("pair_id").get<std::string>();
    p.predicted = row.at("predicted").get<double>();
    p.gold = row.at("gold").get<double>();
    p.ipc_section = row.at("a_ipc").get<std::string>()[0];
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("pearson matches an independent computation") {
  std::vector<double> x{0.1, 0.4, 0.35, 0.8, 0.95};
  std::vector<double> y{0.2, 0.45, 0.3, 0.7, 0.99};
  CHECK(marg::pearson(x, y) == Approx(pearson_oracle(x, y)).margin(1e-12));

  CHECK(marg::pearson({1, 2, 3}, {2, 4, 6}) == 1.0);
  CHECK(marg::pearson({1, 2, 3}, {3, 2, 1}) == -1.0);

  CHECK_THROWS_AS(marg::pearson({1, 2, 3}, {1, 1, 1}), marg::ConstantInput);
  CHECK_THROWS_AS(marg::pearson({1, 1}, {1, 2}), marg::ConstantInput);
  CHECK_THROWS_AS(marg::pearson({1, 2}, {1, 2, 3}), marg::LengthMismatch);
  CHECK_THROWS_AS(marg::pearson({1}, {2}), marg::LengthMismatch);
}

TEST_CASE("pearson is invariant under positive affine maps") {
  std::vector<double> x{0.12, 0.5, 0.31, 0.77, 0.64, 0.05};
  std::vector<double> y{0.3, 0.62, 0.28, 0.81, 0.55, 0.2};
  std::vector<double> y_affine;
  for (double v : y) y_affine.push_back(2.0 * v + 3.0);
  CHECK(marg::pearson(x, y_affine) == Approx(marg::pearson(x, y)).margin(1e-12));

  std::vector<double> y_flipped;
  for (double v : y) y_flipped.push_back(-v);
  CHECK(marg::pearson(x, y_flipped) == Approx(-marg::pearson(x, y)).margin(1e-12));
}

TEST_CASE("average ranks give tied values the mean of their positions") {
  CHECK(marg::average_ranks({3, 1, 4, 1, 5}) ==
        std::vector<double>{3.0, 1.5, 4.0, 1.5, 5.0});
  CHECK(marg::average_ranks({2, 2, 2}) == std::vector<double>{2.0, 2.0, 2.0});
  CHECK(marg::average_ranks({0.1, 0.2, 0.3}) == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("spearman ranks before correlating") {
  // Any monotone map leaves spearman untouched even when pearson moves.
  std::vector<double> x{0.1, 0.4, 0.35, 0.8, 0.95};
  std::vector<double> cubed;
  for (double v : x) cubed.push_back(v * v * v);
  CHECK(marg::spearman(x, cubed) == 1.0);
  CHECK(marg::spearman({1, 2, 3}, {1, 4, 9}) == 1.0);
  CHECK(marg::spearman({1, 2, 3}, {9, 4, 1}) == -1.0);

  // Tied x collapses to average ranks {1, 2.5, 2.5, 4}.
  CHECK(marg::spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == 0.9486832980505138);
}

TEST_CASE("error metrics") {
  std::vector<double> same{0.2, 0.5, 0.9};
  marg::ErrorMetrics zero = marg::error_metrics(same, same);
  CHECK(zero.mse == 0.0);
  CHECK(zero.mae == 0.0);
  CHECK(zero.rmse == 0.0);

  marg::ErrorMetrics one = marg::error_metrics({0.5}, {0.0});
  CHECK(one.mse == 0.25);
  CHECK(one.mae == 0.5);
  CHECK(one.rmse == 0.5);

  std::vector<double> pred{0.13, 0.72, 0.41, 0.95, 0.27, 0.6};
  std::vector<double> gold{0.2, 0.65, 0.5, 0.8, 0.3, 0.55};
  marg::ErrorMetrics e = marg::error_metrics(pred, gold);
  CHECK(e.rmse * e.rmse == Approx(e.mse).margin(1e-12));
  CHECK(e.rmse >= e.mae);

  CHECK_THROWS_AS(marg::error_metrics({}, {}), marg::LengthMismatch);
  CHECK_THROWS_AS(marg::error_metrics({0.1}, {0.1, 0.2}), marg::LengthMismatch);
}

TEST_CASE("metric_set bundles all five figures") {
  std::vector<double> pred{0.1, 0.45, 0.4, 0.85, 0.9};
  std::vector<double> gold{0.2, 0.4, 0.35, 0.75, 0.95};
  marg::MetricSet m = marg::metric_set(pred, gold);
  CHECK(m.pearson == marg::pearson(pred, gold));
  CHECK(m.spearman == marg::spearman(pred, gold));
  marg::ErrorMetrics e = marg::error_metrics(pred, gold);
  CHECK(m.mse == e.mse);
  CHECK(m.mae == e.mae);
  CHECK(m.rmse == e.rmse);
  CHECK(m.n == 5);
}

TEST_CASE("fleiss kappa boundary cases") {
  // Full agreement across distinct categories.
  CHECK(marg::fleiss_kappa({{2, 0}, {0, 2}}) == 1.0);
  // Maximal disagreement for two raters on two items.
  CHECK(marg::fleiss_kappa({{1, 1}, {1, 1}}) == -1.0);
  // Everyone picks the same category everywhere: chance agreement hits 1 too,
  // and the perfect-agreement answer must win over the degenerate divisor.
  CHECK(marg::fleiss_kappa({{3, 0, 0}, {3, 0, 0}}) == 1.0);

  // Hand-computed: P_bar = 4/9, P_e = 35/81, kappa = 1/46.
  CHECK(marg::fleiss_kappa({{2, 1, 0}, {0, 3, 0}, {1, 1, 1}}) ==
        Approx(1.0 / 46.0).margin(1e-12));

  CHECK_THROWS_AS(marg::fleiss_kappa({{2, 0}, {1, 0}}), marg::UnequalRaterCounts);
  CHECK_THROWS_AS(marg::fleiss_kappa({{1, 0}, {0, 1}}), marg::UnequalRaterCounts);
  CHECK_THROWS_AS(marg::fleiss_kappa({}), marg::UnequalRaterCounts);
  CHECK_THROWS_AS(marg::fleiss_kappa({{2, 0}, {0, 2, 0}}), marg::LengthMismatch);
  CHECK_THROWS_AS(marg::fleiss_kappa({{3, -1}, {1, 1}}), marg::UnequalRaterCounts);
}

TEST_CASE("cronbach alpha with raters as instruments") {
  // Rater variances 2 and 8, total-score variance 18: alpha = 2 * (1 - 10/18).
  CHECK(marg::cronbach_alpha({{1, 3}, {1, 5}}) ==
        Approx(0.8888888888888888).margin(1e-15));

  // Identical non-constant raters agree perfectly.
  CHECK(marg::cronbach_alpha({{1, 2}, {1, 2}}) == 1.0);
  CHECK(marg::cronbach_alpha({{4, 2, 5, 3}, {4, 2, 5, 3}, {4, 2, 5, 3}}) ==
        Approx(1.0).margin(1e-12));

  // Totals {3, 3} have zero variance.
  CHECK_THROWS_AS(marg::cronbach_alpha({{1, 2}, {2, 1}}), marg::ZeroTotalVariance);

  CHECK_THROWS_AS(marg::cronbach_alpha({{1, 2}}), marg::LengthMismatch);
  CHECK_THROWS_AS(marg::cronbach_alpha({{1}, {2}}), marg::LengthMismatch);
  CHECK_THROWS_AS(marg::cronbach_alpha({{1, 2}, {1, 2, 3}}), marg::LengthMismatch);
}

TEST_CASE("agreement over annotated pairs") {
  auto annotated = [](const std::string& id, std::vector<int> ratings) {
    marg::AnnotatedPair ap;
    ap.pair.pair_id = id;
    ap.ratings = std::move(ratings);
    return ap;
  };
  std::vector<marg::AnnotatedPair> pairs{
      annotated("ap-1", {4, 4, 5}),
      annotated("ap-2", {4, 4, 4}),
      annotated("ap-3", {2, 3, 3}),
      annotated("ap-4", {5, 5, 4}),
  };
  marg::AgreementReport report = marg::agreement_from_pairs(pairs);
  CHECK(report.n_items == 4);
  CHECK(report.n_raters == 3);

  std::vector<std::vector<int>> counts{
      {0, 0, 0, 2, 1}, {0, 0, 0, 3, 0}, {0, 1, 2, 0, 0}, {0, 0, 0, 1, 2}};
  CHECK(report.fleiss_kappa == marg::fleiss_kappa(counts));
  std::vector<std::vector<double>> raters{
      {4, 4, 2, 5}, {4, 4, 3, 5}, {5, 4, 3, 4}};
  CHECK(report.cronbach_alpha == marg::cronbach_alpha(raters));

  pairs.push_back(annotated("ap-5", {4, 4}));
  CHECK_THROWS_MATCHES(marg::agreement_from_pairs(pairs), marg::UnequalRaterCounts,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("ap-5")));
  pairs.pop_back();

  pairs.push_back(annotated("ap-6", {4, 6, 4}));
  CHECK_THROWS_AS(marg::agreement_from_pairs(pairs), marg::OutOfRangeRating);
  pairs.pop_back();

  std::vector<marg::AnnotatedPair> solo{annotated("ap-7", {3})};
  CHECK_THROWS_AS(marg::agreement_from_pairs(solo), marg::UnequalRaterCounts);
  CHECK_THROWS_AS(marg::agreement_from_pairs({}), marg::UnequalRaterCounts);
}

TEST_CASE("residual analysis") {
  marg::ScoredPair lone;
  lone.pair_id = "solo";
  lone.predicted = 0.53;
  lone.gold = 0.833;
  lone.ipc_section = 'C';
  marg::ResidualAnalysis one = marg::residual_analysis({lone});
  CHECK(one.mean_residual == Approx(-0.303).margin(1e-12));
  CHECK(one.records.size() == 1);
  CHECK(one.records[0].residual == 0.53 - 0.833);
  CHECK(one.per_section.at('C').n == 1);

  auto scored = [](const std::string& id, double pred, double gold, char sec) {
    marg::ScoredPair p;
    p.pair_id = id;
    p.predicted = pred;
    p.gold = gold;
    p.ipc_section = sec;
    return p;
  };
  // p-a and p-b carry the same error magnitude; the tie falls back to the id.
  std::vector<marg::ScoredPair> rows{
      scored("p-b", 0.4, 0.5, 'C'),
      scored("p-c", 0.9, 0.7, 'G'),
      scored("p-a", 0.6, 0.5, 'C'),
  };
  marg::ResidualAnalysis three = marg::residual_analysis(rows);
  REQUIRE(three.records.size() == 3);
  CHECK(three.records[0].pair_id == "p-c");
  CHECK(three.records[1].pair_id == "p-a");
  CHECK(three.records[2].pair_id == "p-b");
  CHECK(three.mean_residual == Approx(0.2 / 3.0).margin(1e-12));

  CHECK(three.per_section.at('C').n == 2);
  CHECK(three.per_section.at('C').mae == Approx(0.1).margin(1e-12));
  CHECK(three.per_section.at('C').mean_residual == Approx(0.0).margin(1e-15));
  CHECK(three.per_section.at('G').n == 1);
  CHECK(three.per_section.at('G').mae == Approx(0.2).margin(1e-12));
  CHECK(three.per_section.at('G').mean_residual == Approx(0.2).margin(1e-12));

  marg::ResidualAnalysis empty = marg::residual_analysis({});
  CHECK(empty.records.empty());
  CHECK(empty.mean_residual == 0.0);
  CHECK(empty.per_section.empty());
}

TEST_CASE("top-k errors on the hard-case fixture") {
  std::vector<marg::ScoredPair> cases = load_hard_cases();
  REQUIRE(cases.size() == 5);
  std::vector<marg::ResidualRecord> records = marg::residual_analysis(cases).records;

  std::vector<marg::ResidualRecord> top1 = marg::top_k_errors(records, 1);
  REQUIRE(top1.size() == 1);
  CHECK(top1[0].pair_id == "hard-001");
  CHECK(top1[0].ipc_section == 'C');
  CHECK(std::abs(top1[0].residual) == Approx(0.303).margin(1e-12));

  CHECK(marg::top_k_errors(records, 0).empty());
  CHECK(marg::top_k_errors(records, 99).size() == 5);

  std::vector<marg::ResidualRecord> top3 = marg::top_k_errors(records, 3);
  std::vector<std::string> order;
  for (const auto& rec : marg::top_k_errors(records, 5)) order.push_back(rec.pair_id);
  CHECK(order == std::vector<std::string>{"hard-001", "hard-004", "hard-003",
                                          "hard-005", "hard-002"});
  for (std::size_t i = 0; i < top3.size(); ++i) CHECK(top3[i].pair_id == order[i]);
}

TEST_CASE("report carries sections in a fixed order") {
  marg::ReportInputs inputs;
  inputs.usage = {13225, 832, 7, 0.0};
  inputs.prices = {0.15, 0.60};

  nlohmann::ordered_json empty = marg::build_report(inputs);
  CHECK(empty["n"] == 0);
  CHECK_FALSE(empty.contains("metrics"));
  CHECK_FALSE(empty.contains("agreement"));
  CHECK_FALSE(empty.contains("mean_residual"));
  CHECK(empty["cost_usd"] == Approx(0.00248295).margin(1e-12));
  CHECK(empty["reference"]["label"] == "published-reference");
  CHECK(empty["reference"]["pearson"] == 0.938);
  CHECK(empty["reference"]["spearman"] == 0.923);
  CHECK(empty["reference"]["mse"] == 0.113);
  CHECK(empty["reference"]["mae"] == 0.092);

  inputs.results = load_hard_cases();
  marg::AgreementReport agreement;
  agreement.fleiss_kappa = 0.588;
  agreement.cronbach_alpha = 0.967;
  agreement.n_items = 5;
  agreement.n_raters = 3;
  inputs.agreement = agreement;
  inputs.warnings = {"sim_t: value 1.2 clamped to 1",
                     "integrate: equal weighting fallback after: bad reply",
                     "sim_d: re-prompted after: bad reply"};
  inputs.top_k = 2;

  nlohmann::ordered_json full = marg::build_report(inputs);
  CHECK(full["n"] == 5);
  CHECK(full["metrics"].contains("pearson"));
  CHECK(full["metrics"]["mse"].get<double>() > 0.0);
  CHECK(full["agreement"]["fleiss_kappa"] == 0.588);
  CHECK(full["top_errors"].size() == 2);
  CHECK(full["top_errors"][0]["pair_id"] == "hard-001");
  CHECK(full["residuals"].size() == 5);
  CHECK(full["per_section"].contains("C"));
  CHECK(full["per_section"].contains("G"));
  CHECK(full["per_section"].contains("F"));
  CHECK(full["warning_counts"]["clamped"] == 1);
  CHECK(full["warning_counts"]["fallbacks"] == 1);
  CHECK(full["warning_counts"]["re_prompts"] == 1);

  std::string dumped = full.dump();
  std::size_t last = 0;
  for (const char* key : {"\"n\"", "\"metrics\"", "\"agreement\"", "\"mean_residual\"",
                          "\"per_section\"", "\"top_errors\"", "\"residuals\"",
                          "\"usage\"", "\"cost_usd\"", "\"warning_counts\"",
                          "\"warnings\"", "\"reference\""}) {
    std::size_t pos = dumped.find(key, last);
    INFO("key " << key);
    REQUIRE(pos != std::string::npos);
    last = pos;
  }

  // Constant golds drop the correlations but keep the error figures.
  for (auto& row : inputs.results) row.gold = 0.5;
  nlohmann::ordered_json flat = marg::build_report(inputs);
  CHECK_FALSE(flat["metrics"].contains("pearson"));
  CHECK_FALSE(flat["metrics"].contains("spearman"));
  CHECK(flat["metrics"].contains("mse"));
}

TEST_CASE("csv export") {
  auto scored = [](const std::string& id, double pred, double gold, char sec) {
    marg::ScoredPair p;
    p.pair_id = id;
    p.predicted = pred;
    p.gold = gold;
    p.ipc_section = sec;
    p.s_t = 0.8;
    p.s_d = 0.6;
    p.s_c = 0.4;
    p.w_t = 0.2;
    p.w_d = 0.5;
    p.w_c = 0.3;
    return p;
  };
  std::string csv = marg::report_csv({scored("plain-id", 0.53, 0.833, 'C'),
                                      scored("odd,id", 0.5, 0.8333333333333333, 'G')});
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < csv.size()) {
    std::size_t end = csv.find('\n', start);
    lines.push_back(csv.substr(start, end - start));
    start = end + 1;
  }
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "pair_id,predicted,gold,residual,ipc_section,s_t,s_d,s_c,w_t,w_d,w_c");
  CHECK(lines[1] == "plain-id,0.53,0.833,-0.303,C,0.8,0.6,0.4,0.2,0.5,0.3");
  CHECK(lines[2] == "\"odd,id\",0.5,0.833333,-0.333333,G,0.8,0.6,0.4,0.2,0.5,0.3");
}

TEST_CASE("emit_report writes json and csv files") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "marg-evalkit-test";
  fs::create_directories(dir);

  marg::ReportInputs inputs;
  inputs.results = load_hard_cases();
  inputs.usage = {100, 50, 2, 0.0};

  fs::path json_path = dir / "report.json";
  marg::emit_report(inputs, json_path.string(), marg::ReportFormat::Json);
  std::ifstream json_in(json_path);
  REQUIRE(json_in.good());
  nlohmann::json round_trip = nlohmann::json::parse(json_in);
  CHECK(round_trip == nlohmann::json(marg::build_report(inputs)));

  fs::path csv_path = dir / "report.csv";
  marg::emit_report(inputs, csv_path.string(), marg::ReportFormat::Csv);
  std::ifstream csv_in(csv_path, std::ios::binary);
  std::string csv((std::istreambuf_iterator<char>(csv_in)),
                  std::istreambuf_iterator<char>());
  CHECK(csv == marg::report_csv(inputs.results));

  CHECK_THROWS_AS(
      marg::emit_report(inputs, (dir / "missing" / "report.json").string()),
      marg::IoError);
  fs::remove_all(dir);
}
