#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "marg/baselines.hpp"
#include "marg/corpus.hpp"
#include "marg/engine.hpp"
#include "marg/errors.hpp"
#include "marg/evalkit.hpp"
#include "marg/gateway.hpp"
#include "marg/http_backend.hpp"
#include "marg/prompt_kit.hpp"

namespace {

// Exit codes: 0 success, 2 schema or configuration error, 3 stage failure,
// 4 partial batch failure.
constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kStageFailure = 3;
constexpr int kPartialFailure = 4;

struct RunConfig {
  std::string backend = "scripted";  // scripted | live
  std::string script;                // scripted backend reply file
  std::string model = "default";
  std::string plan = "compact";      // compact | expanded
  std::string final_mode = "local";  // local | llm-check
  std::string strategy = "dynamic";  // dynamic | equal | subset:<tdc> | fixed:<t,d,c>
  std::string cache_dir;
  double price_in = 0.0;   // USD per million input tokens
  double price_out = 0.0;  // USD per million output tokens
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out;
};

marg::PlanMode parse_plan(const std::string& name) {
  if (name == "compact") return marg::PlanMode::Compact;
  if (name == "expanded") return marg::PlanMode::Expanded;
  throw marg::Error("unknown plan '" + name + "' (expected compact or expanded)");
}

marg::FinalMode parse_final_mode(const std::string& name) {
  if (name == "local") return marg::FinalMode::Local;
  if (name == "llm-check") return marg::FinalMode::LlmCheck;
  throw marg::Error("unknown final mode '" + name +
                    "' (expected local or llm-check)");
}

marg::WeightingStrategy parse_strategy(const std::string& name) {
  if (name == "dynamic") return marg::WeightingStrategy::dynamic_marg();
  if (name == "equal") return marg::WeightingStrategy::equal();
  if (name.rfind("subset:", 0) == 0) {
    std::string dims = name.substr(7);
    if (dims.empty() || dims.find_first_not_of("tdc") != std::string::npos)
      throw marg::Error("subset strategy wants dimensions from {t,d,c}, got '" +
                        dims + "'");
    return marg::WeightingStrategy::subset(dims.find('t') != std::string::npos,
                                           dims.find('d') != std::string::npos,
                                           dims.find('c') != std::string::npos);
  }
  if (name.rfind("fixed:", 0) == 0) {
    double w[3];
    char trailing;
    if (std::sscanf(name.c_str() + 6, "%lf,%lf,%lf%c", &w[0], &w[1], &w[2],
                    &trailing) != 3)
      throw marg::Error("fixed strategy wants three comma-separated weights");
    return marg::WeightingStrategy::fixed_weights(w[0], w[1], w[2]);
  }
  throw marg::Error("unknown strategy '" + name +
                    "' (expected dynamic, equal, subset:<tdc>, or fixed:<t,d,c>)");
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw marg::IoError("cannot open config file: " + path);
  std::map<std::string, std::string> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    std::size_t eq = line.find('=', start);
    if (eq == std::string::npos)
      throw marg::SchemaError(line_no, "config lines must look like key=value");
    std::string key = line.substr(start, eq - start);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::size_t vstart = value.find_first_not_of(" \t");
    value = vstart == std::string::npos ? "" : value.substr(vstart);
    while (!value.empty() && (value.back() == ' ' || value.back() == '\t' ||
                              value.back() == '\r'))
      value.pop_back();
    entries[key] = value;
  }
  return entries;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw marg::Error("config key '" + key + "' wants a number, got '" + value + "'");
  }
}

/// Fills config-file values into fields whose flags were not passed on the
/// command line: flags win, then the file, then defaults.
void overlay_config(RunConfig& cfg, const std::map<std::string, std::string>& file,
                    const std::map<std::string, bool>& flag_given) {
  auto given = [&](const char* name) {
    auto it = flag_given.find(name);
    return it != flag_given.end() && it->second;
  };
  for (const auto& [key, value] : file) {
    if (key == "backend") {
      if (!given("backend")) cfg.backend = value;
    } else if (key == "script") {
      if (!given("script")) cfg.script = value;
    } else if (key == "model") {
      if (!given("model")) cfg.model = value;
    } else if (key == "plan") {
      if (!given("plan")) cfg.plan = value;
    } else if (key == "final_mode") {
      if (!given("final-mode")) cfg.final_mode = value;
    } else if (key == "strategy") {
      if (!given("strategy")) cfg.strategy = value;
    } else if (key == "cache_dir") {
      if (!given("cache-dir")) cfg.cache_dir = value;
    } else if (key == "price_in") {
      if (!given("price-in")) cfg.price_in = parse_double(key, value);
    } else if (key == "price_out") {
      if (!given("price-out")) cfg.price_out = parse_double(key, value);
    } else if (key == "seed") {
      if (!given("seed"))
        cfg.seed = static_cast<std::uint64_t>(parse_double(key, value));
    } else if (key == "jobs") {
      if (!given("jobs")) cfg.jobs = static_cast<int>(parse_double(key, value));
    } else if (key == "out") {
      if (!given("out")) cfg.out = value;
    } else {
      throw marg::Error("unknown config key '" + key + "'");
    }
  }
}

std::shared_ptr<marg::Gateway> make_gateway(const RunConfig& cfg) {
  std::shared_ptr<marg::Backend> backend;
  if (cfg.backend == "scripted") {
    if (cfg.script.empty())
      throw marg::BackendUnconfigured("scripted backend needs --script <file>");
    auto scripted = std::make_shared<marg::ScriptedBackend>();
    scripted->load_script(cfg.script);
    backend = scripted;
  } else if (cfg.backend == "live") {
    backend = marg::HttpBackend::from_env();
  } else {
    throw marg::Error("unknown backend '" + cfg.backend +
                      "' (expected scripted or live)");
  }
  marg::GatewayOptions options;
  options.cache_dir = cfg.cache_dir;
  options.pipeline_version = marg::kPipelineVersion;
  return std::make_shared<marg::Gateway>(backend, options);
}

marg::Engine make_engine(const RunConfig& cfg,
                         const std::shared_ptr<marg::Gateway>& gateway,
                         int node_parallelism) {
  marg::EngineOptions options;
  options.final_mode = parse_final_mode(cfg.final_mode);
  options.schedule_seed = cfg.seed;
  options.node_parallelism = node_parallelism;
  return marg::Engine(gateway, options);
}

char section_of(const marg::PatentPair& pair) {
  return pair.a.ipc_codes.empty() ? '?' : pair.a.ipc_codes[0].section;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw marg::IoError("cannot open output file: " + path);
  out << content;
  if (!out) throw marg::IoError("failed while writing: " + path);
}

// ---------------------------------------------------------------------------
// score-pair
// ---------------------------------------------------------------------------

int cmd_score_pair(const RunConfig& cfg, const std::string& a_path,
                   const std::string& b_path, std::string pair_id) {
  marg::PatentPair pair;
  pair.a = marg::load_patent(a_path);
  pair.b = marg::load_patent(b_path);
  pair.pair_id = pair_id.empty() ? pair.a.id + "-vs-" + pair.b.id
                                 : std::move(pair_id);

  auto gateway = make_gateway(cfg);
  marg::Engine engine = make_engine(cfg, gateway, std::max(1, cfg.jobs));
  marg::SimilarityResult result =
      engine.execute(pair, marg::build_plan(parse_plan(cfg.plan)), cfg.model);

  if (!cfg.out.empty())
    write_text(cfg.out, marg::result_to_json(result).dump(2) + "\n");
  std::printf("%s: final %.3f (w_T %.3f, w_D %.3f, w_C %.3f; %lld calls)\n",
              result.pair_id.c_str(), result.final_score, result.weights.w_t,
              result.weights.w_d, result.weights.w_c,
              static_cast<long long>(result.usage.calls));
  for (const auto& w : result.warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  return kOk;
}

// ---------------------------------------------------------------------------
// batch-eval and ablate share the per-pair scoring loop
// ---------------------------------------------------------------------------

struct PairOutcome {
  bool failed = false;
  std::string error;
  marg::ScoredPair scored;       // predicted filled per strategy
  bool has_gold = false;
  marg::DimensionScores scores;  // kept for ablation variants
  marg::UsageRecord usage;
  std::vector<std::string> warnings;
};

/// Scores every dataset pair, up to cfg.jobs concurrently. Failures are
/// captured per pair, never thrown.
std::vector<PairOutcome> score_dataset(const RunConfig& cfg,
                                       const std::vector<marg::AnnotatedPair>& dataset,
                                       const marg::WeightingStrategy& strategy) {
  auto gateway = make_gateway(cfg);
  marg::Engine engine = make_engine(cfg, gateway, 1);
  marg::PlanMode plan_mode = parse_plan(cfg.plan);
  marg::MargPlan plan = marg::build_plan(plan_mode);

  std::vector<PairOutcome> outcomes(dataset.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= dataset.size()) return;
      const marg::AnnotatedPair& record = dataset[i];
      PairOutcome& out = outcomes[i];
      out.scored.pair_id = record.pair.pair_id;
      out.scored.ipc_section = section_of(record.pair);
      out.has_gold = record.has_gold;
      out.scored.gold = record.gold_normalized;
      try {
        if (strategy.kind == marg::StrategyKind::DynamicMarg) {
          marg::SimilarityResult r = engine.execute(record.pair, plan, cfg.model);
          out.scores = r.scores;
          out.scored.predicted = r.final_score;
          out.scored.w_t = r.weights.w_t;
          out.scored.w_d = r.weights.w_d;
          out.scored.w_c = r.weights.w_c;
          out.usage = r.usage;
          out.warnings = r.warnings;
        } else {
          auto r = engine.execute_scores(record.pair, plan_mode, cfg.model);
          out.scores = r.scores;
          marg::WeightVector w = marg::strategy_weights(strategy);
          out.scored.predicted = marg::combine(r.scores, w);
          out.scored.w_t = w.w_t;
          out.scored.w_d = w.w_d;
          out.scored.w_c = w.w_c;
          out.usage = r.usage;
          out.warnings = r.warnings;
        }
        out.scored.s_t = out.scores.s_t.score;
        out.scored.s_d = out.scores.s_d.score;
        out.scored.s_c = out.scores.s_c.score;
      } catch (const marg::Error& e) {
        out.failed = true;
        out.error = e.what();
      }
    }
  };
  int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(dataset.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return outcomes;
}

int cmd_batch_eval(const RunConfig& cfg, const std::string& dataset_path,
                   const std::string& scores_path, const std::string& csv_path) {
  std::vector<marg::AnnotatedPair> dataset = marg::load_dataset(dataset_path);
  marg::WeightingStrategy strategy = parse_strategy(cfg.strategy);
  std::vector<PairOutcome> outcomes = score_dataset(cfg, dataset, strategy);

  std::string scores_lines;
  marg::ReportInputs report;
  report.prices = {cfg.price_in, cfg.price_out};
  std::size_t failed = 0;
  for (const auto& out : outcomes) {
    nlohmann::ordered_json line;
    line["pair_id"] = out.scored.pair_id;
    if (out.failed) {
      ++failed;
      line["failed"] = true;
      line["error"] = out.error;
      report.warnings.push_back(out.scored.pair_id + ": " + out.error);
    } else {
      line["score"] = out.scored.predicted;
      if (out.has_gold) line["gold"] = out.scored.gold;
      line["s_t"] = out.scored.s_t;
      line["s_d"] = out.scored.s_d;
      line["s_c"] = out.scored.s_c;
      line["w_t"] = out.scored.w_t;
      line["w_d"] = out.scored.w_d;
      line["w_c"] = out.scored.w_c;
      report.usage = marg::merge_usage(report.usage, out.usage);
      for (const auto& w : out.warnings)
        report.warnings.push_back(out.scored.pair_id + ": " + w);
      if (out.has_gold) report.results.push_back(out.scored);
    }
    scores_lines += line.dump() + "\n";
  }

  nlohmann::ordered_json report_json = marg::build_report(report);
  std::string report_path = cfg.out.empty() ? "report.json" : cfg.out;
  write_text(report_path, report_json.dump(2) + "\n");
  if (!scores_path.empty()) write_text(scores_path, scores_lines);
  if (!csv_path.empty()) write_text(csv_path, marg::report_csv(report.results));

  std::printf("scored %zu of %zu pairs (%zu failed, %zu with gold) -> %s\n",
              outcomes.size() - failed, outcomes.size(), failed,
              report.results.size(), report_path.c_str());
  if (report_json.contains("metrics") && report_json["metrics"].contains("pearson"))
    std::printf("pearson %.3f, spearman %.3f, mse %.4f, mae %.4f\n",
                report_json["metrics"]["pearson"].get<double>(),
                report_json["metrics"]["spearman"].get<double>(),
                report_json["metrics"]["mse"].get<double>(),
                report_json["metrics"]["mae"].get<double>());
  return failed == 0 ? kOk : kPartialFailure;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

int cmd_ablate(const RunConfig& cfg, const std::string& dataset_path) {
  std::vector<marg::AnnotatedPair> dataset = marg::load_dataset(dataset_path);
  std::vector<marg::AnnotatedPair> labeled;
  for (const auto& rec : dataset)
    if (rec.has_gold) labeled.push_back(rec);

  RunConfig dynamic_cfg = cfg;
  dynamic_cfg.strategy = "dynamic";
  std::vector<PairOutcome> outcomes =
      score_dataset(dynamic_cfg, labeled, marg::WeightingStrategy::dynamic_marg());

  std::vector<std::string> warnings;
  std::vector<double> gold;
  std::vector<const PairOutcome*> scored;
  std::size_t failed = 0;
  for (const auto& out : outcomes) {
    if (out.failed) {
      ++failed;
      warnings.push_back(out.scored.pair_id + ": " + out.error);
      continue;
    }
    scored.push_back(&out);
    gold.push_back(out.scored.gold);
  }
  if (dataset.size() != labeled.size())
    warnings.push_back(std::to_string(dataset.size() - labeled.size()) +
                       " pairs without gold skipped");
  if (scored.size() < 2)
    throw marg::Error("ablation needs at least 2 scored pairs with gold");

  struct Variant {
    const char* name;
    std::optional<marg::WeightingStrategy> strategy;  // nullopt = full pipeline
  };
  const Variant variants[] = {
      {"full", std::nullopt},
      {"equal", marg::WeightingStrategy::equal()},
      {"wo_claim", marg::WeightingStrategy::subset(true, true, false)},
      {"wo_technical", marg::WeightingStrategy::subset(false, true, true)},
      {"wo_application", marg::WeightingStrategy::subset(true, false, true)},
      {"claim_only", marg::WeightingStrategy::subset(false, false, true)},
      {"technical_only", marg::WeightingStrategy::subset(true, false, false)},
      {"application_only", marg::WeightingStrategy::subset(false, true, false)},
  };

  double full_pearson = 0.0, full_spearman = 0.0;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::printf("%-18s %9s %9s %9s\n", "variant", "pearson", "spearman", "drop%");
  for (const auto& variant : variants) {
    std::vector<double> pred;
    for (const PairOutcome* out : scored)
      pred.push_back(variant.strategy
                         ? marg::score_with_strategy(out->scores, *variant.strategy)
                         : out->scored.predicted);
    nlohmann::ordered_json row;
    row["variant"] = variant.name;
    bool correlated = false;
    double r = 0.0, rho = 0.0;
    try {
      r = marg::pearson(pred, gold);
      rho = marg::spearman(pred, gold);
      correlated = true;
    } catch (const marg::ConstantInput&) {
      warnings.push_back(std::string(variant.name) +
                         ": constant predictions, correlations undefined");
    }
    if (correlated) {
      row["pearson"] = r;
      row["spearman"] = rho;
    } else {
      row["pearson"] = nullptr;
      row["spearman"] = nullptr;
    }
    if (!variant.strategy) {
      full_pearson = r;
      full_spearman = rho;
      row["avg_drop"] = 0.0;
      if (correlated)
        std::printf("%-18s %9.3f %9.3f %9s\n", variant.name, r, rho, "-");
    } else if (correlated) {
      double drop = marg::avg_drop(full_pearson, full_spearman, r, rho);
      row["avg_drop"] = drop;
      std::printf("%-18s %9.3f %9.3f %9.2f\n", variant.name, r, rho, drop);
    } else {
      row["avg_drop"] = nullptr;
      std::printf("%-18s %9s %9s %9s\n", variant.name, "-", "-", "-");
    }
    rows.push_back(row);
  }

  nlohmann::ordered_json table;
  table["n"] = scored.size();
  table["rows"] = rows;
  table["warnings"] = warnings;
  if (!cfg.out.empty()) write_text(cfg.out, table.dump(2) + "\n");
  return failed == 0 ? kOk : kPartialFailure;
}

// ---------------------------------------------------------------------------
// agreement
// ---------------------------------------------------------------------------

int cmd_agreement(const std::string& dataset_path, const std::string& out_path) {
  std::vector<marg::AnnotatedPair> pairs = marg::load_dataset(dataset_path);
  marg::QcResult qc = marg::qc_filter(pairs);
  marg::AgreementReport report = marg::agreement_from_pairs(qc.kept);

  std::printf("kappa=%.3f alpha=%.3f items=%zu raters=%zu excluded=%zu\n",
              report.fleiss_kappa, report.cronbach_alpha, report.n_items,
              report.n_raters, qc.excluded.size());
  for (const auto& rec : qc.excluded)
    std::fprintf(stderr, "excluded %s: rating stddev %.3f above 2\n",
                 rec.pair.pair_id.c_str(), rec.rating_stddev);
  if (!out_path.empty()) {
    nlohmann::ordered_json j;
    j["fleiss_kappa"] = report.fleiss_kappa;
    j["cronbach_alpha"] = report.cronbach_alpha;
    j["n_items"] = report.n_items;
    j["n_raters"] = report.n_raters;
    j["excluded"] = qc.excluded.size();
    write_text(out_path, j.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// fit-weights
// ---------------------------------------------------------------------------

int cmd_fit_weights(const std::string& scores_path, const std::string& method,
                    double lambda, std::size_t folds, const std::string& out_path) {
  std::ifstream in(scores_path);
  if (!in) throw marg::IoError("cannot open scores file: " + scores_path);
  std::vector<marg::RegressionRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      marg::RegressionRow row;
      row.s_t = j.at("s_t").get<double>();
      row.s_d = j.at("s_d").get<double>();
      row.s_c = j.at("s_c").get<double>();
      row.gold = j.at("gold").get<double>();
      rows.push_back(row);
    } catch (const nlohmann::json::exception& e) {
      throw marg::SchemaError(line_no, e.what());
    }
  }

  marg::FitOptions options;
  options.method = marg::regression_method_from_string(method);
  options.lambda = lambda;
  options.folds = folds;
  marg::RegressionFit fit = marg::fit_regression(rows, options);

  std::string path = out_path.empty() ? "fit.json" : out_path;
  marg::save_fit(fit, path);
  std::printf("%s fit over %zu rows: technical %.6f, application %.6f, claim %.6f, "
              "intercept %.6f\n",
              marg::to_string(fit.method), rows.size(), fit.coefficients[0],
              fit.coefficients[1], fit.coefficients[2], fit.intercept);
  std::printf("%zu-fold cv: mse %.6f, mae %.6f -> %s\n", fit.cv_folds, fit.cv_mse,
              fit.cv_mae, path.c_str());
  for (const auto& w : fit.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patent-pair similarity scoring over a staged reasoning graph"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  app.add_option("--config", config_path, "key=value configuration file");
  auto* o_backend =
      app.add_option("--backend", cfg.backend, "backend: scripted or live");
  auto* o_script =
      app.add_option("--script", cfg.script, "scripted backend reply file");
  auto* o_model = app.add_option("--model", cfg.model, "model label");
  auto* o_plan = app.add_option("--plan", cfg.plan, "plan: compact or expanded");
  auto* o_final = app.add_option("--final-mode", cfg.final_mode,
                                 "final combination: local or llm-check");
  auto* o_strategy = app.add_option(
      "--strategy", cfg.strategy,
      "weighting: dynamic, equal, subset:<tdc>, or fixed:<t,d,c>");
  auto* o_cache = app.add_option("--cache-dir", cfg.cache_dir,
                                 "response cache directory (empty disables)");
  auto* o_price_in =
      app.add_option("--price-in", cfg.price_in, "USD per million input tokens");
  auto* o_price_out =
      app.add_option("--price-out", cfg.price_out, "USD per million output tokens");
  auto* o_seed = app.add_option("--seed", cfg.seed, "node scheduling seed");
  auto* o_jobs = app.add_option("--jobs", cfg.jobs, "concurrency limit");
  auto* o_out = app.add_option("--out", cfg.out, "primary output file");

  std::string a_path, b_path, pair_id;
  CLI::App* score = app.add_subcommand("score-pair", "Score one patent pair");
  score->fallthrough();
  score->add_option("a", a_path, "patent A json file")->required();
  score->add_option("b", b_path, "patent B json file")->required();
  score->add_option("--pair-id", pair_id, "pair identifier in the result");

  std::string dataset_path, scores_path = "scores.jsonl", csv_path;
  CLI::App* batch = app.add_subcommand("batch-eval", "Score a dataset and report");
  batch->fallthrough();
  batch->add_option("dataset", dataset_path, "annotated dataset jsonl")->required();
  batch->add_option("--scores", scores_path, "per-pair scores jsonl");
  batch->add_option("--csv", csv_path, "per-pair csv export");

  std::string ablate_dataset;
  CLI::App* ablate = app.add_subcommand("ablate", "Weighting-variant comparison");
  ablate->fallthrough();
  ablate->add_option("dataset", ablate_dataset, "annotated dataset jsonl")
      ->required();

  std::string ratings_path;
  CLI::App* agreement =
      app.add_subcommand("agreement", "Inter-annotator agreement statistics");
  agreement->fallthrough();
  agreement->add_option("ratings", ratings_path, "rated dataset jsonl")->required();

  std::string fit_scores, fit_method = "ols";
  double fit_lambda = 0.1;
  std::size_t fit_folds = 5;
  CLI::App* fit = app.add_subcommand("fit-weights", "Regress gold on dimension scores");
  fit->fallthrough();
  fit->add_option("scores", fit_scores, "jsonl rows with s_t, s_d, s_c, gold")
      ->required();
  fit->add_option("--method", fit_method, "ols, ridge, or lasso");
  fit->add_option("--lambda", fit_lambda, "ridge/lasso penalty");
  fit->add_option("--folds", fit_folds, "cross-validation folds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (!config_path.empty()) {
      std::map<std::string, bool> flag_given{
          {"backend", o_backend->count() > 0},
          {"script", o_script->count() > 0},
          {"model", o_model->count() > 0},
          {"plan", o_plan->count() > 0},
          {"final-mode", o_final->count() > 0},
          {"strategy", o_strategy->count() > 0},
          {"cache-dir", o_cache->count() > 0},
          {"price-in", o_price_in->count() > 0},
          {"price-out", o_price_out->count() > 0},
          {"seed", o_seed->count() > 0},
          {"jobs", o_jobs->count() > 0},
          {"out", o_out->count() > 0},
      };
      overlay_config(cfg, read_config_file(config_path), flag_given);
    }
    if (cfg.jobs < 1) throw marg::Error("--jobs must be at least 1");

    if (score->parsed()) return cmd_score_pair(cfg, a_path, b_path, pair_id);
    if (batch->parsed()) return cmd_batch_eval(cfg, dataset_path, scores_path, csv_path);
    if (ablate->parsed()) return cmd_ablate(cfg, ablate_dataset);
    if (agreement->parsed()) return cmd_agreement(ratings_path, cfg.out);
    if (fit->parsed())
      return cmd_fit_weights(fit_scores, fit_method, fit_lambda, fit_folds, cfg.out);
    return kConfigError;
  } catch (const marg::StageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kStageFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  }
}
