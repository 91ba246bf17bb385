#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "marg/corpus.hpp"
#include "marg/errors.hpp"
#include "marg/gateway.hpp"
#include "marg/parsers.hpp"
#include "marg/prompt_kit.hpp"
#include "marg/stage.hpp"

namespace marg {

// ---------------------------------------------------------------------------
// Arithmetic helpers
// ---------------------------------------------------------------------------

inline double round3(double x) { return std::round(x * 1000.0) / 1000.0; }

struct DimensionScores {
  ScoreWithReason s_t;
  ScoreWithReason s_d;
  ScoreWithReason s_c;
};

/// Componentwise division by the sum. Inputs must be non-negative with a
/// positive sum.
inline WeightVector normalize_weights(double w_t, double w_d, double w_c) {
  if (w_t < 0.0 || w_d < 0.0 || w_c < 0.0)
    throw DegenerateWeights("negative weight component");
  double sum = w_t + w_d + w_c;
  if (sum <= 0.0) throw DegenerateWeights("weights sum to zero");
  WeightVector out;
  out.w_t = w_t / sum;
  out.w_d = w_d / sum;
  out.w_c = w_c / sum;
  return out;
}

/// Weighted combination of the three dimension scores, rounded to three
/// decimal places.
inline double combine(const DimensionScores& scores, const WeightVector& weights) {
  return round3(weights.w_t * scores.s_t.score + weights.w_d * scores.s_d.score +
                weights.w_c * scores.s_c.score);
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

enum class PlanMode { Compact, Expanded };
enum class FinalMode { Local, LlmCheck };

constexpr const char* to_string(PlanMode m) {
  return m == PlanMode::Compact ? "compact" : "expanded";
}
constexpr const char* to_string(FinalMode m) {
  return m == FinalMode::Local ? "local" : "llm-check";
}

struct PlanNode {
  std::string id;
  StageId stage;
  std::vector<std::string> deps;
};

struct MargPlan {
  PlanMode mode = PlanMode::Compact;
  std::vector<PlanNode> nodes;  // stored in one valid topological order

  const PlanNode* find(const std::string& id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }
};

/// Full pipeline DAG. Compact mode merges the per-aspect extractions into one
/// call per patent and the four reasoning stages into one call, keeping the
/// call count at 8; Expanded mode keeps one prompt per stage, 15 calls.
inline MargPlan build_plan(PlanMode mode) {
  MargPlan plan;
  plan.mode = mode;
  auto add = [&](const char* id, StageId stage, std::vector<std::string> deps) {
    plan.nodes.push_back({id, stage, std::move(deps)});
  };
  if (mode == PlanMode::Expanded) {
    add("ext_t_a", StageId::ExtractTechnical, {});
    add("ext_d_a", StageId::ExtractDomain, {});
    add("ext_c_a", StageId::ExtractClaim, {});
    add("ext_t_b", StageId::ExtractTechnical, {});
    add("ext_d_b", StageId::ExtractDomain, {});
    add("ext_c_b", StageId::ExtractClaim, {});
    add("sim_t", StageId::SimTechnical, {"ext_t_a", "ext_t_b"});
    add("sim_d", StageId::SimDomain, {"ext_d_a", "ext_d_b"});
    add("sim_c", StageId::SimClaim, {"ext_c_a", "ext_c_b"});
    add("rel", StageId::DomainRel, {});  // needs only the static pair context
    add("dist", StageId::InfoDist, {"sim_t", "sim_d", "sim_c"});
    add("assess", StageId::DimRelevance, {"rel"});
    add("valid", StageId::CrossValid, {"assess", "dist"});
    add("integrate", StageId::WeightIntegrate, {"rel", "dist", "assess", "valid"});
    add("final", StageId::FinalCalc, {"integrate", "sim_t", "sim_d", "sim_c"});
  } else {
    add("ext_a", StageId::ExtractCombined, {});
    add("ext_b", StageId::ExtractCombined, {});
    add("sim_t", StageId::SimTechnical, {"ext_a", "ext_b"});
    add("sim_d", StageId::SimDomain, {"ext_a", "ext_b"});
    add("sim_c", StageId::SimClaim, {"ext_a", "ext_b"});
    add("reason", StageId::ReasonCombined, {"sim_t", "sim_d", "sim_c"});
    add("integrate", StageId::WeightIntegrate, {"reason"});
    add("final", StageId::FinalCalc, {"integrate", "sim_t", "sim_d", "sim_c"});
  }
  return plan;
}

/// Scores-only sub-plan: extractions plus the three dimension similarities.
/// Used by weighting strategies that do not need the reasoning stages.
inline MargPlan build_scores_plan(PlanMode mode) {
  MargPlan full = build_plan(mode);
  MargPlan plan;
  plan.mode = mode;
  for (const auto& n : full.nodes) {
    switch (n.stage) {
      case StageId::ExtractTechnical:
      case StageId::ExtractDomain:
      case StageId::ExtractClaim:
      case StageId::ExtractCombined:
      case StageId::SimTechnical:
      case StageId::SimDomain:
      case StageId::SimClaim:
        plan.nodes.push_back(n);
        break;
      default:
        break;
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct SimilarityResult {
  std::string pair_id;
  AspectProfile profile_a;
  AspectProfile profile_b;
  DimensionScores scores;
  DomainRelation relation;
  DistributionPattern pattern;
  RelevanceAssessment relevance;
  RobustnessScore robustness;
  WeightVector weights;
  double final_score = 0.0;
  UsageRecord usage;
  std::vector<std::string> warnings;
};

inline nlohmann::ordered_json usage_to_json(const UsageRecord& u) {
  nlohmann::ordered_json j;
  j["input_tokens"] = u.input_tokens;
  j["output_tokens"] = u.output_tokens;
  j["calls"] = u.calls;
  j["wall_time_ms"] = u.wall_time_ms;
  return j;
}

inline nlohmann::ordered_json result_to_json(const SimilarityResult& r) {
  nlohmann::ordered_json j;
  j["pair_id"] = r.pair_id;
  j["final_score"] = r.final_score;
  j["scores"] = {{"technical", {{"score", r.scores.s_t.score}, {"reason", r.scores.s_t.reason}}},
                 {"domain", {{"score", r.scores.s_d.score}, {"reason", r.scores.s_d.reason}}},
                 {"claim", {{"score", r.scores.s_c.score}, {"reason", r.scores.s_c.reason}}}};
  j["weights"] = {{"w_t", r.weights.w_t},
                  {"w_d", r.weights.w_d},
                  {"w_c", r.weights.w_c},
                  {"justification", r.weights.justification}};
  j["relation"] = {{"category", to_string(r.relation.category)},
                   {"explanation", r.relation.explanation}};
  j["pattern"] = {{"pattern", to_string(r.pattern.pattern)},
                  {"justification", r.pattern.justification}};
  j["relevance"] = {{"technical", r.relevance.technical},
                    {"domain", r.relevance.domain},
                    {"claim", r.relevance.claim},
                    {"explanation", r.relevance.explanation}};
  j["robustness"] = {{"value", r.robustness.value},
                     {"justification", r.robustness.justification}};
  j["profiles"] = {{"a",
                    {{"technical", r.profile_a.technical},
                     {"domain", r.profile_a.domain},
                     {"claim", r.profile_a.claim}}},
                   {"b",
                    {{"technical", r.profile_b.technical},
                     {"domain", r.profile_b.domain},
                     {"claim", r.profile_b.claim}}}};
  j["usage"] = usage_to_json(r.usage);
  j["warnings"] = r.warnings;
  return j;
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct EngineOptions {
  FinalMode final_mode = FinalMode::Local;
  std::uint64_t schedule_seed = 0;  // randomizes launch order of ready nodes
  int node_parallelism = 1;         // concurrent nodes per wave
  double check_tolerance = 5e-4;    // llm-check discrepancy threshold
};

/// Executes reasoning DAGs against a gateway. Stateless across calls; one
/// engine may serve many threads, each scoring different pairs.
class Engine {
 public:
  Engine(std::shared_ptr<Gateway> gateway, EngineOptions options = {})
      : gateway_(std::move(gateway)), options_(options) {
    if (!gateway_) throw BackendUnconfigured("engine needs a gateway");
  }

  const EngineOptions& options() const { return options_; }

  SimilarityResult execute(const PatentPair& pair, const MargPlan& plan,
                           const std::string& model = "default") const {
    State state;
    state.pair = &pair;
    state.pair_context = pair_context_block(pair);
    run_plan(plan, state, model);

    SimilarityResult result;
    result.pair_id = pair.pair_id;
    result.profile_a = state.profile_a;
    result.profile_b = state.profile_b;
    result.scores = state.scores;
    result.relation = state.relation;
    result.pattern = state.pattern;
    result.relevance = state.relevance;
    result.robustness = state.robustness;
    result.usage = state.usage;
    result.warnings = state.warnings;

    if (state.weights) {
      result.weights = *state.weights;
    } else {
      result.weights = normalize_weights(1.0, 1.0, 1.0);
      result.weights.justification = "equal weighting fallback";
    }
    result.final_score = combine(result.scores, result.weights);

    if (plan.find("final") && options_.final_mode == FinalMode::LlmCheck &&
        state.llm_final) {
      double gap = std::abs(*state.llm_final - result.final_score);
      if (gap > options_.check_tolerance) {
        result.warnings.push_back(
            "final: model arithmetic " + format_number(*state.llm_final) +
            " disagrees with computed " + format_number(result.final_score) +
            " by " + format_number(gap));
      }
    }
    return result;
  }

  /// Dimension scores only, for the fixed-weight strategies.
  struct ScoresOutcome {
    AspectProfile profile_a;
    AspectProfile profile_b;
    DimensionScores scores;
    UsageRecord usage;
    std::vector<std::string> warnings;
  };

  ScoresOutcome execute_scores(const PatentPair& pair, PlanMode mode,
                               const std::string& model = "default") const {
    State state;
    state.pair = &pair;
    state.pair_context = pair_context_block(pair);
    run_plan(build_scores_plan(mode), state, model);
    return {state.profile_a, state.profile_b, state.scores, state.usage,
            state.warnings};
  }

 private:
  struct State {
    const PatentPair* pair = nullptr;
    std::string pair_context;
    AspectProfile profile_a;
    AspectProfile profile_b;
    DimensionScores scores;
    DomainRelation relation;
    DistributionPattern pattern;
    RelevanceAssessment relevance;
    RobustnessScore robustness;
    std::optional<WeightVector> weights;
    std::optional<double> llm_final;
    UsageRecord usage;
    std::vector<std::string> warnings;
  };

  struct NodeOutcome {
    UsageRecord usage;
    std::vector<std::string> warnings;
    std::function<void(State&)> apply;
  };

  void run_plan(const MargPlan& plan, State& state, const std::string& model) const {
    const std::size_t n = plan.nodes.size();
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) index[plan.nodes[i].id] = i;

    std::vector<int> pending(n, 0);
    std::vector<std::vector<std::size_t>> dependents(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& dep : plan.nodes[i].deps) {
        auto it = index.find(dep);
        if (it == index.end())
          throw StageError(plan.nodes[i].id, "unknown dependency '" + dep + "'");
        dependents[it->second].push_back(i);
        ++pending[i];
      }
    }

    std::vector<std::size_t> ready;
    for (std::size_t i = 0; i < n; ++i)
      if (pending[i] == 0) ready.push_back(i);

    std::mt19937_64 rng(options_.schedule_seed);
    std::vector<NodeOutcome> outcomes(n);
    std::size_t done = 0;
    while (done < n) {
      if (ready.empty())
        throw StageError("plan", "dependency cycle detected");
      // Launch order is deliberately randomized; results may not depend on it.
      for (std::size_t i = ready.size(); i > 1; --i)
        std::swap(ready[i - 1], ready[rng() % i]);

      std::size_t wave = ready.size();
      if (options_.node_parallelism > 1)
        wave = std::min(wave, static_cast<std::size_t>(options_.node_parallelism));
      std::vector<std::size_t> launched(ready.begin(), ready.begin() + wave);
      ready.erase(ready.begin(), ready.begin() + wave);

      if (launched.size() > 1 && options_.node_parallelism > 1) {
        std::vector<std::future<NodeOutcome>> futures;
        futures.reserve(launched.size());
        for (std::size_t idx : launched)
          futures.push_back(std::async(std::launch::async, [&, idx] {
            return run_node(plan.nodes[idx], state, model);
          }));
        for (std::size_t k = 0; k < launched.size(); ++k)
          outcomes[launched[k]] = futures[k].get();
      } else {
        for (std::size_t idx : launched)
          outcomes[idx] = run_node(plan.nodes[idx], state, model);
      }

      for (std::size_t idx : launched) {
        // Independent nodes write disjoint slots, so apply order within a
        // wave cannot change the outcome.
        if (outcomes[idx].apply) outcomes[idx].apply(state);
        ++done;
        for (std::size_t dep_idx : dependents[idx])
          if (--pending[dep_idx] == 0) ready.push_back(dep_idx);
      }
    }

    // Accounting folds in plan order, independent of the schedule.
    for (std::size_t i = 0; i < n; ++i) {
      state.usage = merge_usage(state.usage, outcomes[i].usage);
      for (auto& w : outcomes[i].warnings)
        state.warnings.push_back(plan.nodes[i].id + ": " + w);
    }
  }

  NodeOutcome run_node(const PlanNode& node, const State& state,
                       const std::string& model) const {
    // The final node only reaches the model when cross-checking is on; the
    // default mode computes the weighted combination natively.
    if (node.stage == StageId::FinalCalc && options_.final_mode == FinalMode::Local)
      return {};

    NodeOutcome outcome;
    try {
      std::string prompt = render(node.stage, node_context(node, state));
      ChatRequest request;
      request.stage = to_string(node.stage);
      request.prompt = prompt;
      request.model = model;

      ChatResponse response = gateway_->complete(request);
      outcome.usage = merge_usage(outcome.usage, response.usage);
      try {
        outcome.apply = parse_reply(node, response.text, outcome.warnings);
      } catch (const ParseFailure& first) {
        // One corrective re-prompt with the format instruction appended.
        ChatRequest retry = request;
        retry.prompt = prompt + "\n\n" + format_reminder(node.stage);
        ChatResponse second = gateway_->complete(retry);
        outcome.usage = merge_usage(outcome.usage, second.usage);
        outcome.warnings.push_back(std::string("re-prompted after: ") + first.what());
        try {
          outcome.apply = parse_reply(node, second.text, outcome.warnings);
        } catch (const ParseFailure& again) {
          if (node.stage == StageId::WeightIntegrate) {
            // Unusable weights fall back to equal weighting.
            outcome.warnings.push_back(std::string("equal weighting fallback after: ") +
                                       again.what());
            outcome.apply = [](State& s) {
              WeightVector w = normalize_weights(1.0, 1.0, 1.0);
              w.justification = "equal weighting fallback";
              s.weights = w;
            };
          } else {
            throw;
          }
        }
      }
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(node.id, e.what());
    }
    return outcome;
  }

  PromptContext node_context(const PlanNode& node, const State& state) const {
    const PatentPair& pair = *state.pair;
    switch (node.stage) {
      case StageId::ExtractTechnical:
      case StageId::ExtractDomain:
      case StageId::ExtractClaim:
      case StageId::ExtractCombined:
        return extraction_context(node.id.back() == 'a' ? pair.a : pair.b);
      case StageId::SimTechnical:
        return {{"a_technical", state.profile_a.technical},
                {"b_technical", state.profile_b.technical}};
      case StageId::SimDomain:
        return {{"a_domain", state.profile_a.domain},
                {"b_domain", state.profile_b.domain}};
      case StageId::SimClaim:
        return {{"a_claim", state.profile_a.claim},
                {"b_claim", state.profile_b.claim}};
      case StageId::DomainRel:
        return {{"a_ipc", ipc_list(pair.a)},
                {"b_ipc", ipc_list(pair.b)},
                {"pair_context", state.pair_context}};
      case StageId::InfoDist:
        return {{"s_t", format_number(state.scores.s_t.score)},
                {"s_d", format_number(state.scores.s_d.score)},
                {"s_c", format_number(state.scores.s_c.score)}};
      case StageId::DimRelevance:
        return {{"pair_context", state.pair_context},
                {"relation", to_string(state.relation.category)}};
      case StageId::CrossValid:
        return {{"rel_technical", format_number(state.relevance.technical)},
                {"rel_domain", format_number(state.relevance.domain)},
                {"rel_claim", format_number(state.relevance.claim)},
                {"pattern", to_string(state.pattern.pattern)},
                {"s_t", format_number(state.scores.s_t.score)},
                {"s_d", format_number(state.scores.s_d.score)},
                {"s_c", format_number(state.scores.s_c.score)}};
      case StageId::ReasonCombined:
        return {{"a_ipc", ipc_list(pair.a)},
                {"b_ipc", ipc_list(pair.b)},
                {"s_t", format_number(state.scores.s_t.score)},
                {"s_d", format_number(state.scores.s_d.score)},
                {"s_c", format_number(state.scores.s_c.score)},
                {"pair_context", state.pair_context}};
      case StageId::WeightIntegrate:
        return {{"relation", to_string(state.relation.category)},
                {"relation_explanation", state.relation.explanation},
                {"pattern", to_string(state.pattern.pattern)},
                {"pattern_justification", state.pattern.justification},
                {"rel_technical", format_number(state.relevance.technical)},
                {"rel_domain", format_number(state.relevance.domain)},
                {"rel_claim", format_number(state.relevance.claim)},
                {"robustness", format_number(state.robustness.value)}};
      case StageId::FinalCalc: {
        WeightVector w =
            state.weights ? *state.weights : normalize_weights(1.0, 1.0, 1.0);
        return {{"s_t", format_number(state.scores.s_t.score)},
                {"s_d", format_number(state.scores.s_d.score)},
                {"s_c", format_number(state.scores.s_c.score)},
                {"w_t", format_number(w.w_t)},
                {"w_d", format_number(w.w_d)},
                {"w_c", format_number(w.w_c)}};
      }
      case StageId::BaselineIO:
      case StageId::BaselineCoT:
      case StageId::BaselineFewShot:
        break;  // baselines run outside DAG plans
    }
    throw StageError(node.id, "stage has no context builder");
  }

  std::function<void(State&)> parse_reply(const PlanNode& node, const std::string& text,
                                          std::vector<std::string>& warnings) const {
    bool is_a = node.id.back() == 'a';
    switch (node.stage) {
      case StageId::ExtractTechnical: {
        std::string value = parse_detail::tail_value(text, 0);
        if (value.empty()) throw ParseFailure("empty extraction reply");
        return [value, is_a](State& s) {
          (is_a ? s.profile_a : s.profile_b).technical = value;
        };
      }
      case StageId::ExtractDomain: {
        std::string value = parse_detail::tail_value(text, 0);
        if (value.empty()) throw ParseFailure("empty extraction reply");
        return [value, is_a](State& s) {
          (is_a ? s.profile_a : s.profile_b).domain = value;
        };
      }
      case StageId::ExtractClaim: {
        std::string value = parse_detail::tail_value(text, 0);
        if (value.empty()) throw ParseFailure("empty extraction reply");
        return [value, is_a](State& s) {
          (is_a ? s.profile_a : s.profile_b).claim = value;
        };
      }
      case StageId::ExtractCombined: {
        AspectProfile profile = parse_profile(text);
        return [profile, is_a](State& s) {
          (is_a ? s.profile_a : s.profile_b) = profile;
        };
      }
      case StageId::SimTechnical: {
        ScoreWithReason v = parse_score_reason(text, &warnings);
        return [v](State& s) { s.scores.s_t = v; };
      }
      case StageId::SimDomain: {
        ScoreWithReason v = parse_score_reason(text, &warnings);
        return [v](State& s) { s.scores.s_d = v; };
      }
      case StageId::SimClaim: {
        ScoreWithReason v = parse_score_reason(text, &warnings);
        return [v](State& s) { s.scores.s_c = v; };
      }
      case StageId::DomainRel: {
        DomainRelation v = parse_category(text);
        return [v](State& s) { s.relation = v; };
      }
      case StageId::InfoDist: {
        DistributionPattern v = parse_pattern(text);
        return [v](State& s) { s.pattern = v; };
      }
      case StageId::DimRelevance: {
        RelevanceAssessment v = parse_relevance(text);
        return [v](State& s) { s.relevance = v; };
      }
      case StageId::CrossValid: {
        RobustnessScore v = parse_robustness(text, &warnings);
        return [v](State& s) { s.robustness = v; };
      }
      case StageId::ReasonCombined: {
        DomainRelation rel = parse_category(text);
        DistributionPattern pat = parse_pattern(text);
        RelevanceAssessment rv = parse_relevance(text);
        RobustnessScore rob = parse_robustness(text, &warnings);
        return [rel, pat, rv, rob](State& s) {
          s.relation = rel;
          s.pattern = pat;
          s.relevance = rv;
          s.robustness = rob;
        };
      }
      case StageId::WeightIntegrate: {
        WeightVector parsed = parse_weights(text);
        WeightVector v = normalize_weights(parsed.w_t, parsed.w_d, parsed.w_c);
        v.justification = parsed.justification;
        return [v](State& s) { s.weights = v; };
      }
      case StageId::FinalCalc: {
        double v = parse_final(text, &warnings);
        return [v](State& s) { s.llm_final = v; };
      }
      case StageId::BaselineIO:
      case StageId::BaselineCoT:
      case StageId::BaselineFewShot:
        break;
    }
    throw StageError(node.id, "stage has no reply parser");
  }

  std::shared_ptr<Gateway> gateway_;
  EngineOptions options_;
};

}  // namespace marg
