#pragma once

#include <optional>
#include <string_view>

namespace marg {

/// One value per pipeline prompt. ExtractCombined and ReasonCombined are the
/// merged calls used by the compact plan; the rest map one-to-one onto the
/// individual prompt templates.
enum class StageId {
  ExtractTechnical,
  ExtractDomain,
  ExtractClaim,
  ExtractCombined,
  SimTechnical,
  SimDomain,
  SimClaim,
  DomainRel,
  InfoDist,
  DimRelevance,
  CrossValid,
  ReasonCombined,
  WeightIntegrate,
  FinalCalc,
  BaselineIO,
  BaselineCoT,
  BaselineFewShot,
};

constexpr const char* to_string(StageId stage) {
  switch (stage) {
    case StageId::ExtractTechnical: return "extract_technical";
    case StageId::ExtractDomain: return "extract_domain";
    case StageId::ExtractClaim: return "extract_claim";
    case StageId::ExtractCombined: return "extract_combined";
    case StageId::SimTechnical: return "sim_technical";
    case StageId::SimDomain: return "sim_domain";
    case StageId::SimClaim: return "sim_claim";
    case StageId::DomainRel: return "domain_rel";
    case StageId::InfoDist: return "info_dist";
    case StageId::DimRelevance: return "dim_relevance";
    case StageId::CrossValid: return "cross_valid";
    case StageId::ReasonCombined: return "reason_combined";
    case StageId::WeightIntegrate: return "weight_integrate";
    case StageId::FinalCalc: return "final_calc";
    case StageId::BaselineIO: return "baseline_io";
    case StageId::BaselineCoT: return "baseline_cot";
    case StageId::BaselineFewShot: return "baseline_fewshot";
  }
  return "unknown";
}

inline std::optional<StageId> stage_from_string(std::string_view name) {
  static constexpr StageId all[] = {
      StageId::ExtractTechnical, StageId::ExtractDomain,  StageId::ExtractClaim,
      StageId::ExtractCombined,  StageId::SimTechnical,   StageId::SimDomain,
      StageId::SimClaim,         StageId::DomainRel,      StageId::InfoDist,
      StageId::DimRelevance,     StageId::CrossValid,     StageId::ReasonCombined,
      StageId::WeightIntegrate,  StageId::FinalCalc,      StageId::BaselineIO,
      StageId::BaselineCoT,      StageId::BaselineFewShot,
  };
  for (StageId s : all)
    if (name == to_string(s)) return s;
  return std::nullopt;
}

}  // namespace marg
