#pragma once

#include <array>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <string_view>

#include <json.hpp>

#include "marg/corpus.hpp"
#include "marg/errors.hpp"
#include "marg/stage.hpp"

namespace marg {

/// Stamped into every gateway cache key so edits to prompt templates or
/// parsing rules invalidate previously cached completions.
inline constexpr const char* kPipelineVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Typed stage outputs
// ---------------------------------------------------------------------------

struct ScoreWithReason {
  double score = 0.0;  // always within [0,1] after parsing
  std::string reason;
};

enum class PatternKind { UniformSimilarity, DimensionDominance, ComplementaryDimensions };

constexpr const char* to_string(PatternKind p) {
  switch (p) {
    case PatternKind::UniformSimilarity: return "uniform similarity";
    case PatternKind::DimensionDominance: return "dimension dominance";
    case PatternKind::ComplementaryDimensions: return "complementary dimensions";
  }
  return "unknown";
}

struct DistributionPattern {
  PatternKind pattern = PatternKind::UniformSimilarity;
  std::string justification;
};

struct RelevanceAssessment {
  double technical = 0.0;  // the triple sums to 1 after parsing
  double domain = 0.0;
  double claim = 0.0;
  std::string explanation;
};

struct RobustnessScore {
  double value = 0.0;  // within [0,1]
  std::string justification;
};

struct WeightVector {
  double w_t = 0.0;  // non-negative, sums to 1 after normalization
  double w_d = 0.0;
  double w_c = 0.0;
  std::string justification;
};

/// Per-patent aspect summaries produced by the extraction stages.
struct AspectProfile {
  std::string technical;
  std::string domain;
  std::string claim;
};

// ---------------------------------------------------------------------------
// Mandated output-format instructions
// ---------------------------------------------------------------------------

/// The exact format sentence each stage's reply must follow. Also appended to
/// the one-shot re-prompt after a malformed reply.
inline std::string format_instruction(StageId stage) {
  switch (stage) {
    case StageId::SimTechnical:
    case StageId::SimDomain:
    case StageId::SimClaim:
      return "Output the result in the following format: Score: [numerical "
             "score], Reason: [justification].";
    case StageId::DomainRel:
      return "Output the result in the following format: Category: "
             "[relationship], Explanation: [justification].";
    case StageId::InfoDist:
      return "Output the result in the following format: Pattern: [pattern], "
             "Justification: [explanation].";
    case StageId::DimRelevance:
      return "Output the result in the following format: Scores: [technical "
             "features: score, application domains: score, claim scope: "
             "score], Explanation: [justification].";
    case StageId::CrossValid:
      return "Output the result in the following format: Metric: [score], "
             "Justification: [explanation].";
    case StageId::WeightIntegrate:
      return "Output the result in the following format: Weights: [w_T: "
             "score, w_D: score, w_C: score], Justification: [explanation].";
    case StageId::FinalCalc:
      return "Output the result in the following format. "
             "Patent_Similarity_MAR :[score]";
    case StageId::ExtractCombined:
      return "Output the result in the following format: Technical Features: "
             "[summary], Application Domains: [summary], Claim Scope: "
             "[summary].";
    case StageId::ReasonCombined:
      return "Output the result in the following format, one line per item: "
             "Category: [relationship], Explanation: [justification]. "
             "Pattern: [pattern], Justification: [explanation]. "
             "Scores: [technical features: score, application domains: "
             "score, claim scope: score], Explanation: [justification]. "
             "Metric: [score], Justification: [explanation].";
    case StageId::BaselineIO:
      return "Output the result in the following format: Score: [numerical score]";
    case StageId::BaselineCoT:
      return "Output the result in the following format:\n"
             "Reasoning: [Your step-by-step analysis]\n"
             "Score: [numerical score]";
    case StageId::BaselineFewShot:
      return "Reply with the score only, in the format: Score: [numerical score]";
    case StageId::ExtractTechnical:
    case StageId::ExtractDomain:
    case StageId::ExtractClaim:
      return "";  // free-form summaries
  }
  return "";
}

/// One-shot corrective prefix used when a reply could not be parsed.
inline std::string format_reminder(StageId stage) {
  std::string out = "Your previous reply did not follow the required format. ";
  out += format_instruction(stage);
  return out;
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

namespace templates {

inline constexpr std::string_view kPatentBlock =
    "Title: {title}\n"
    "Abstract: {abstract}\n"
    "Claims:\n{claims}\n"
    "IPC codes: {ipc}";

inline constexpr std::string_view kExtractTechnical =
    "Summarize the technical features of the patent, focusing on "
    "methodologies, algorithms, and innovation points.\n"
    "\n"
    "Title: {title}\n"
    "Abstract: {abstract}\n"
    "Claims:\n{claims}\n";

inline constexpr std::string_view kExtractDomain =
    "Identify the application domains of the patent, including industries, "
    "problem areas, and potential applications.\n"
    "\n"
    "Title: {title}\n"
    "Abstract: {abstract}\n"
    "Claims:\n{claims}\n";

inline constexpr std::string_view kExtractClaim =
    "Determine the claim scope of the patent, summarizing the legal "
    "protection boundaries and key rights asserted in the claims.\n"
    "\n"
    "Title: {title}\n"
    "Abstract: {abstract}\n"
    "Claims:\n{claims}\n";

inline constexpr std::string_view kExtractCombined =
    "Analyze the patent below along three aspects.\n"
    "1. Summarize the technical features of the patent, focusing on "
    "methodologies, algorithms, and innovation points.\n"
    "2. Identify the application domains of the patent, including "
    "industries, problem areas, and potential applications.\n"
    "3. Determine the claim scope of the patent, summarizing the legal "
    "protection boundaries and key rights asserted in the claims.\n"
    "\n"
    "Title: {title}\n"
    "Abstract: {abstract}\n"
    "Claims:\n{claims}\n"
    "\n"
    "Output the result in the following format: Technical Features: "
    "[summary], Application Domains: [summary], Claim Scope: [summary].";

inline constexpr std::string_view kSimTechnical =
    "Given the technical feature summaries of Patent A and Patent B, assess "
    "the similarity of their technical contributions, focusing on "
    "methodologies, algorithms, and innovation points. Provide a similarity "
    "score between 0 and 1, where 0 indicates no overlap and 1 indicates "
    "identical technical features. Include a brief justification for your "
    "assessment. Output the result in the following format: Score: "
    "[numerical score], Reason: [justification].\n"
    "\n"
    "Patent A technical features: {a_technical}\n"
    "Patent B technical features: {b_technical}\n";

inline constexpr std::string_view kSimDomain =
    "Given the application domain summaries of Patent A and Patent B, "
    "evaluate the similarity of their practical contexts, including "
    "industries, problem areas, and potential applications. Provide a "
    "similarity score between 0 and 1, where 0 indicates completely distinct "
    "domains and 1 indicates fully shared domains. Include a brief "
    "justification for your assessment. Output the result in the following "
    "format: Score: [numerical score], Reason: [justification].\n"
    "\n"
    "Patent A application domains: {a_domain}\n"
    "Patent B application domains: {b_domain}\n";

inline constexpr std::string_view kSimClaim =
    "Given the claim scope summaries of Patent A and Patent B, analyze the "
    "similarity of their legal protection boundaries and key rights asserted "
    "in the claims. Provide a similarity score between 0 and 1, where 0 "
    "indicates no overlap in claim scope and 1 indicates identical claim "
    "scope. Include a brief justification for your assessment. Output the "
    "result in the following format: Score: [numerical score], Reason: "
    "[justification].\n"
    "\n"
    "Patent A claim scope: {a_claim}\n"
    "Patent B claim scope: {b_claim}\n";

inline constexpr std::string_view kDomainRel =
    "Given the IPC codes of Patent A and Patent B from the pair context "
    "below (titles, abstracts, claims, and IPC codes), assess the technical "
    "domain relationship between the two patents. Categorize the "
    "relationship as identical (same IPC subclass), hierarchical (one "
    "patent's domain subsumes the other), overlapping (shared IPC codes), or "
    "distinct (no common IPC codes). Output the result in the following "
    "format: Category: [relationship], Explanation: [justification].\n"
    "\n"
    "Patent A IPC codes: {a_ipc}\n"
    "Patent B IPC codes: {b_ipc}\n"
    "\n"
    "{pair_context}\n";

inline constexpr std::string_view kInfoDist =
    "Given the similarity scores S_T, S_D, and S_C for Patent A and Patent "
    "B, analyze the distribution pattern of these scores. Identify the "
    "pattern as uniform similarity (all scores are similar), dimension "
    "dominance (one score is significantly higher), or complementary "
    "dimensions (high similarity in one dimension offsets lower similarity "
    "in others). Output the result in the following format: Pattern: "
    "[pattern], Justification: [explanation].\n"
    "\n"
    "S_T: {s_t}\n"
    "S_D: {s_d}\n"
    "S_C: {s_c}\n";

inline constexpr std::string_view kDimRelevance =
    "Given the context of Patent A and Patent B below (titles, abstracts, "
    "claims, and IPC codes) and their domain relationship, assess the "
    "relative importance of technical features, application domains, and "
    "claim scope for evaluating their similarity. Assign relevance scores "
    "between 0 and 1 to each dimension, ensuring the sum equals 1. Output "
    "the result in the following format: Scores: [technical features: "
    "score, application domains: score, claim scope: score], Explanation: "
    "[justification].\n"
    "\n"
    "Domain relationship: {relation}\n"
    "\n"
    "{pair_context}\n";

inline constexpr std::string_view kCrossValid =
    "Given the dimension relevance scores and the actual similarity score "
    "distribution, assess how well these two align. If they strongly agree "
    "(i.e., the most important predicted dimension matches the dimension "
    "with the highest similarity), assign a robustness score close to 1. If "
    "they partially agree or conflict, assign a lower robustness score "
    "accordingly. Output the result in the following format: Metric: "
    "[score], Justification: [explanation].\n"
    "\n"
    "Relevance scores: technical features: {rel_technical}, application "
    "domains: {rel_domain}, claim scope: {rel_claim}\n"
    "Similarity distribution: pattern {pattern}; S_T: {s_t}, S_D: {s_d}, "
    "S_C: {s_c}\n";

inline constexpr std::string_view kReasonCombined =
    "Work through four reasoning steps for Patent A and Patent B.\n"
    "1. Given their IPC codes, assess the technical domain relationship "
    "between the two patents. Categorize the relationship as identical "
    "(same IPC subclass), hierarchical (one patent's domain subsumes the "
    "other), overlapping (shared IPC codes), or distinct (no common IPC "
    "codes).\n"
    "2. Given the similarity scores S_T, S_D, and S_C, analyze the "
    "distribution pattern of these scores. Identify the pattern as uniform "
    "similarity (all scores are similar), dimension dominance (one score is "
    "significantly higher), or complementary dimensions (high similarity in "
    "one dimension offsets lower similarity in others).\n"
    "3. Assess the relative importance of technical features, application "
    "domains, and claim scope for evaluating their similarity. Assign "
    "relevance scores between 0 and 1 to each dimension, ensuring the sum "
    "equals 1.\n"
    "4. Assess how well the relevance scores align with the actual "
    "similarity score distribution. If they strongly agree (i.e., the most "
    "important predicted dimension matches the dimension with the highest "
    "similarity), assign a robustness score close to 1. If they partially "
    "agree or conflict, assign a lower robustness score accordingly.\n"
    "\n"
    "Patent A IPC codes: {a_ipc}\n"
    "Patent B IPC codes: {b_ipc}\n"
    "S_T: {s_t}\n"
    "S_D: {s_d}\n"
    "S_C: {s_c}\n"
    "\n"
    "{pair_context}\n"
    "\n"
    "Output the result in the following format, one line per item: "
    "Category: [relationship], Explanation: [justification]. "
    "Pattern: [pattern], Justification: [explanation]. "
    "Scores: [technical features: score, application domains: score, claim "
    "scope: score], Explanation: [justification]. "
    "Metric: [score], Justification: [explanation].";

inline constexpr std::string_view kWeightIntegrate =
    "Given the domain relationship, similarity distribution pattern, "
    "relevance scores, and robustness metric for Patent A and Patent B, "
    "integrate these inputs to determine the final weights for technical "
    "features w_T, application domains w_D, and claim scope w_C, ensuring "
    "w_T + w_D + w_C = 1. Provide a textual justification. Output the "
    "result in the following format: Weights: [w_T: score, w_D: score, w_C: "
    "score], Justification: [explanation].\n"
    "\n"
    "Domain relationship: {relation} ({relation_explanation})\n"
    "Distribution pattern: {pattern} ({pattern_justification})\n"
    "Relevance scores: technical features: {rel_technical}, application "
    "domains: {rel_domain}, claim scope: {rel_claim}\n"
    "Robustness metric: {robustness}\n";

inline constexpr std::string_view kFinalCalc =
    "Calculate the final similarity score S_final using the formula S_final "
    "= w_T x S_T + w_D x S_D + w_C x S_C, where S_T, S_D, and S_C are the "
    "similarity scores for technical, application domains, and claim scope, "
    "respectively, and w_T, w_D, and w_C are their corresponding weights. "
    "Ensure that the result is a numerical value between 0 and 1, and "
    "return the value rounded to three decimal places. Output the result in "
    "the following format. Patent_Similarity_MAR :[score]\n"
    "\n"
    "S_T: {s_t}, S_D: {s_d}, S_C: {s_c}\n"
    "w_T: {w_t}, w_D: {w_d}, w_C: {w_c}\n";

inline constexpr std::string_view kBaselineIO =
    "You are an expert patent analyst. Evaluate the similarity between the "
    "two patent documents below. Provide a single similarity score between "
    "0.0 (completely different) and 1.0 (identical). Output the result in "
    "the following format: Score: [numerical score]\n"
    "\n"
    "Patent A:\n{a_content}\n"
    "\n"
    "Patent B:\n{b_content}\n";

inline constexpr std::string_view kBaselineCoT =
    "You are an expert patent analyst. Your task is to evaluate the "
    "similarity between two patent documents, Patent A and Patent B.\n"
    "Input:\n"
    "- Patent A: {a_content}\n"
    "- Patent B: {b_content}\n"
    "Instructions:\n"
    "1. Analyze the technical field, core innovation, and claim scope of "
    "both patents.\n"
    "2. Compare the similarities and differences step-by-step.\n"
    "3. Based on the reasoning, determine a similarity score between 0.0 "
    "(completely different) and 1.0 (identical).\n"
    "Output the result in the following format:\n"
    "Reasoning: [Your step-by-step analysis]\n"
    "Score: [numerical score]";

inline constexpr std::string_view kBaselineFewShot =
    "Evaluate the similarity between two patents on a scale of 0.0 to 1.0. "
    "Here are three examples:\n"
    "\n"
    "Example 1:\n"
    "Patent A: {ex1_a}\n"
    "Patent B: {ex1_b}\n"
    "Score: 0.2 (Low Similarity)\n"
    "\n"
    "Example 2:\n"
    "Patent A: {ex2_a}\n"
    "Patent B: {ex2_b}\n"
    "Score: 0.5 (Medium Similarity)\n"
    "\n"
    "Example 3:\n"
    "Patent A: {ex3_a}\n"
    "Patent B: {ex3_b}\n"
    "Score: 0.9 (High Similarity)\n"
    "\n"
    "Task:\n"
    "Patent A: {a_content}\n"
    "Patent B: {b_content}\n"
    "Score:";

}  // namespace templates

inline std::string_view stage_template(StageId stage) {
  switch (stage) {
    case StageId::ExtractTechnical: return templates::kExtractTechnical;
    case StageId::ExtractDomain: return templates::kExtractDomain;
    case StageId::ExtractClaim: return templates::kExtractClaim;
    case StageId::ExtractCombined: return templates::kExtractCombined;
    case StageId::SimTechnical: return templates::kSimTechnical;
    case StageId::SimDomain: return templates::kSimDomain;
    case StageId::SimClaim: return templates::kSimClaim;
    case StageId::DomainRel: return templates::kDomainRel;
    case StageId::InfoDist: return templates::kInfoDist;
    case StageId::DimRelevance: return templates::kDimRelevance;
    case StageId::CrossValid: return templates::kCrossValid;
    case StageId::ReasonCombined: return templates::kReasonCombined;
    case StageId::WeightIntegrate: return templates::kWeightIntegrate;
    case StageId::FinalCalc: return templates::kFinalCalc;
    case StageId::BaselineIO: return templates::kBaselineIO;
    case StageId::BaselineCoT: return templates::kBaselineCoT;
    case StageId::BaselineFewShot: return templates::kBaselineFewShot;
  }
  return "";
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

using PromptContext = std::map<std::string, std::string>;

/// Substitutes {name} placeholders from the context. Deterministic; a
/// placeholder with no context entry raises MissingContextField.
inline std::string render(StageId stage, const PromptContext& context) {
  std::string_view tpl = stage_template(stage);
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    char c = tpl[i];
    if (c != '{') {
      out += c;
      ++i;
      continue;
    }
    std::size_t close = tpl.find('}', i + 1);
    std::string name = close == std::string_view::npos
                           ? std::string()
                           : std::string(tpl.substr(i + 1, close - i - 1));
    bool is_placeholder = !name.empty();
    for (char nc : name) {
      if (!(std::islower(static_cast<unsigned char>(nc)) ||
            std::isdigit(static_cast<unsigned char>(nc)) || nc == '_'))
        is_placeholder = false;
    }
    if (!is_placeholder) {
      out += c;
      ++i;
      continue;
    }
    auto it = context.find(name);
    if (it == context.end()) throw MissingContextField(name);
    out += it->second;
    i = close + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Context builders
// ---------------------------------------------------------------------------

inline std::string format_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

inline std::string numbered_claims(const PatentDocument& doc) {
  std::string out;
  for (std::size_t i = 0; i < doc.claims.size(); ++i) {
    out += std::to_string(i + 1);
    out += ". ";
    out += doc.claims[i];
    if (i + 1 < doc.claims.size()) out += '\n';
  }
  return out;
}

inline std::string ipc_list(const PatentDocument& doc) {
  std::string out;
  for (std::size_t i = 0; i < doc.ipc_codes.size(); ++i) {
    if (i) out += ", ";
    out += doc.ipc_codes[i].render();
  }
  return out;
}

/// Context for the single-patent extraction stages.
inline PromptContext extraction_context(const PatentDocument& doc) {
  return {{"title", doc.title},
          {"abstract", doc.abstract},
          {"claims", numbered_claims(doc)},
          {"ipc", ipc_list(doc)}};
}

inline std::string patent_block(const PatentDocument& doc) {
  PromptContext ctx = extraction_context(doc);
  std::string_view tpl = templates::kPatentBlock;
  // Reuse render's substitution through a throwaway context walk.
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] != '{') {
      out += tpl[i++];
      continue;
    }
    std::size_t close = tpl.find('}', i + 1);
    std::string name(tpl.substr(i + 1, close - i - 1));
    out += ctx.at(name);
    i = close + 1;
  }
  return out;
}

/// Both patents rendered in full, for the pair-context reasoning stages and
/// the prompting baselines.
inline std::string pair_context_block(const PatentPair& pair) {
  return "Patent A:\n" + patent_block(pair.a) + "\n\nPatent B:\n" + patent_block(pair.b);
}

// ---------------------------------------------------------------------------
// Few-shot exemplars
// ---------------------------------------------------------------------------

struct FewshotExemplar {
  std::string a;
  std::string b;
};

using FewshotExemplars = std::array<FewshotExemplar, 3>;

/// Built-in synthetic exemplars covering the low / medium / high anchors.
inline FewshotExemplars default_fewshot_exemplars() {
  return {{{"Title: Photovoltaic cell anti-reflective coating\n"
            "Abstract: A sol-gel deposited multilayer coating that cuts surface "
            "reflection losses on silicon solar cells.\n"
            "Claims:\n1. A coating stack with alternating refractive indices "
            "deposited on a photovoltaic substrate.",
            "Title: Distributed ledger transaction ordering\n"
            "Abstract: A consensus protocol that orders transactions across "
            "untrusted nodes using verifiable delay functions.\n"
            "Claims:\n1. A method of sequencing ledger entries by evaluating a "
            "verifiable delay function."},
           {"Title: Lithium-ion electrode with silicon nanowires\n"
            "Abstract: An anode structure using silicon nanowires to raise "
            "energy density while tolerating expansion.\n"
            "Claims:\n1. An anode comprising silicon nanowires grown on a "
            "copper current collector.",
            "Title: Battery pack thermal regulation system\n"
            "Abstract: A liquid cooling loop and phase-change buffer that keep "
            "lithium-ion cells inside a safe temperature window.\n"
            "Claims:\n1. A battery enclosure with coolant channels thermally "
            "coupled to cell surfaces."},
           {"Title: Capacitive touch gesture recognition\n"
            "Abstract: A controller that classifies multi-finger gestures from "
            "capacitance grids using trained decision boundaries.\n"
            "Claims:\n1. A method of classifying touch gestures from a "
            "capacitive sensor matrix.",
            "Title: Touch input classification on capacitive panels\n"
            "Abstract: Classifying swipe and pinch gestures on a capacitive "
            "touchscreen with a lightweight statistical model.\n"
            "Claims:\n1. A gesture classifier operating on capacitive panel "
            "scan data."}}};
}

/// Loads exemplars from a JSON file holding an array of exactly three
/// {"a": text, "b": text} objects.
inline FewshotExemplars load_fewshot_exemplars(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open exemplar file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(1, e.what());
  }
  if (!j.is_array() || j.size() != 3)
    throw SchemaError(1, "exemplar file must hold exactly 3 entries");
  FewshotExemplars out;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& e = j[i];
    if (!e.is_object() || !e.contains("a") || !e["a"].is_string() ||
        !e.contains("b") || !e["b"].is_string())
      throw SchemaError(i + 1, "exemplar entries need string fields 'a' and 'b'");
    out[i] = {e["a"].get<std::string>(), e["b"].get<std::string>()};
    if (out[i].a.empty() || out[i].b.empty())
      throw SchemaError(i + 1, "exemplar text must be non-empty");
  }
  return out;
}

inline PromptContext fewshot_context(const PatentPair& pair, const FewshotExemplars& ex) {
  return {{"ex1_a", ex[0].a}, {"ex1_b", ex[0].b}, {"ex2_a", ex[1].a},
          {"ex2_b", ex[1].b}, {"ex3_a", ex[2].a}, {"ex3_b", ex[2].b},
          {"a_content", patent_block(pair.a)},
          {"b_content", patent_block(pair.b)}};
}

}  // namespace marg
