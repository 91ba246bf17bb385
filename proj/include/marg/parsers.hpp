#pragma once

#include <array>
#include <cctype>
#include <cstdlib>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "marg/corpus.hpp"
#include "marg/errors.hpp"
#include "marg/prompt_kit.hpp"

namespace marg {
namespace parse_detail {

inline std::string lower_copy(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Strips LaTeX-style escapes so "$w_T$" and "w\_T" scan like "w_T". Numbers
/// and the markers this module cares about never contain these characters.
inline std::string strip_escapes(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text)
    if (c != '\\' && c != '$') out += c;
  return out;
}

inline bool word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

/// First occurrence of the marker at a word boundary, at or after `from`.
/// Returns the position one past the marker, or npos.
inline std::size_t after_marker(const std::string& lower_text, std::string_view marker,
                                std::size_t from = 0) {
  for (std::size_t pos = lower_text.find(marker, from); pos != std::string::npos;
       pos = lower_text.find(marker, pos + 1)) {
    bool left_ok = pos == 0 || !word_char(lower_text[pos - 1]);
    std::size_t end = pos + marker.size();
    bool right_ok = end >= lower_text.size() || !word_char(lower_text[end]);
    // Spaced labels like "technical features" keep word boundaries per word;
    // the ends are what matter here.
    if (left_ok && right_ok) return end;
  }
  return std::string::npos;
}

/// Every marker position (one past), last to first.
inline std::vector<std::size_t> all_markers_desc(const std::string& lower_text,
                                                 std::string_view marker) {
  std::vector<std::size_t> out;
  for (std::size_t pos = lower_text.find(marker); pos != std::string::npos;
       pos = lower_text.find(marker, pos + 1)) {
    bool left_ok = pos == 0 || !word_char(lower_text[pos - 1]);
    std::size_t end = pos + marker.size();
    bool right_ok = end >= lower_text.size() || !word_char(lower_text[end]);
    if (left_ok && right_ok) out.push_back(end);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Characters that may sit between a marker and its number: plain separators
// and lightweight markup. Anything else (a word, say) means the number is
// absent, so "Metric: high" never grabs a digit from later prose.
inline bool gap_char(char c) {
  switch (c) {
    case ' ': case '\t': case '\r': case '\n':
    case ':': case '*': case '_': case '`': case '=': case '~':
    case '[': case ']': case '(': case ')': case '<': case '>':
    case '"': case '\'':
      return true;
    default:
      return false;
  }
}

struct NumberHit {
  double value;
  std::size_t end;  // index one past the parsed number
};

inline std::optional<NumberHit> number_after(const std::string& text, std::size_t pos,
                                             bool allow_comma = false) {
  std::size_t i = pos;
  while (i < text.size() && (gap_char(text[i]) || (allow_comma && text[i] == ',')))
    ++i;
  if (i >= text.size()) return std::nullopt;
  char c = text[i];
  bool starts_number = std::isdigit(static_cast<unsigned char>(c)) || c == '.' ||
                       ((c == '+' || c == '-') && i + 1 < text.size() &&
                        (std::isdigit(static_cast<unsigned char>(text[i + 1])) ||
                         text[i + 1] == '.'));
  if (!starts_number) return std::nullopt;
  const char* begin = text.c_str() + i;
  char* endp = nullptr;
  double value = std::strtod(begin, &endp);
  if (endp == begin) return std::nullopt;
  return NumberHit{value, static_cast<std::size_t>(endp - text.c_str())};
}

/// Free-text value after a marker: trimmed of separators and light markup on
/// both ends, running to the end of the text.
inline std::string tail_value(const std::string& text, std::size_t pos) {
  std::size_t b = pos;
  while (b < text.size() &&
         (gap_char(text[b]) || text[b] == ',' || text[b] == ';'))
    ++b;
  std::size_t e = text.size();
  while (e > b) {
    char c = text[e - 1];
    if (std::isspace(static_cast<unsigned char>(c)) || c == ']' || c == '`' ||
        c == '*' || c == ',' || c == ';')
      --e;
    else
      break;
  }
  return text.substr(b, e - b);
}

/// Value between two positions, trimmed like tail_value.
inline std::string span_value(const std::string& text, std::size_t begin, std::size_t end) {
  std::string slice = text.substr(begin, end - begin);
  return tail_value(slice, 0);
}

/// Single-line free-text value. The mandated formats keep each item on one
/// line, so reasons and justifications stop at the next line break; leading
/// separators may still cross one when the value starts on its own line.
inline std::string line_value(const std::string& text, std::size_t pos) {
  std::size_t b = pos;
  while (b < text.size() &&
         (gap_char(text[b]) || text[b] == ',' || text[b] == ';'))
    ++b;
  std::size_t e = text.find('\n', b);
  if (e == std::string::npos) e = text.size();
  while (e > b) {
    char c = text[e - 1];
    if (std::isspace(static_cast<unsigned char>(c)) || c == ']' || c == '`' ||
        c == '*' || c == ',' || c == ';')
      --e;
    else
      break;
  }
  return text.substr(b, e - b);
}

inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline double clamp01(double v, const char* what, std::vector<std::string>* warnings) {
  if (v < 0.0 || v > 1.0) {
    double clamped = v < 0.0 ? 0.0 : 1.0;
    if (warnings)
      warnings->push_back(std::string("clamped ") + what + " " + format_value(v) +
                          " to " + format_value(clamped));
    return clamped;
  }
  return v;
}

inline std::string letters_only(std::string_view text) {
  std::string out;
  for (char c : text)
    if (std::isalpha(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace parse_detail

// ---------------------------------------------------------------------------
// Stage parsers
// ---------------------------------------------------------------------------

/// "Score: [number], Reason: [text]". Out-of-range scores clamp with a
/// warning; a missing number is a ParseFailure.
inline ScoreWithReason parse_score_reason(const std::string& text,
                                          std::vector<std::string>* warnings = nullptr) {
  using namespace parse_detail;
  std::string lower = lower_copy(text);
  std::size_t pos = after_marker(lower, "score");
  if (pos == std::string::npos) throw ParseFailure("no 'Score' marker in reply");
  auto hit = number_after(text, pos);
  if (!hit) throw ParseFailure("no numeric score after 'Score' marker");
  ScoreWithReason out;
  out.score = clamp01(hit->value, "score", warnings);
  // Companion text is searched after its value so that combined replies keep
  // each item's free text with the right item.
  std::size_t rpos = after_marker(lower, "reason", pos);
  if (rpos != std::string::npos) out.reason = line_value(text, rpos);
  return out;
}

/// "Category: [label], Explanation: [text]" with the four relation labels.
inline DomainRelation parse_category(const std::string& text) {
  using namespace parse_detail;
  std::string lower = lower_copy(text);
  std::size_t pos = after_marker(lower, "category");
  if (pos == std::string::npos) throw ParseFailure("no 'Category' marker in reply");
  std::size_t i = pos;
  while (i < text.size() && gap_char(text[i])) ++i;
  std::size_t e = i;
  while (e < text.size() && std::isalpha(static_cast<unsigned char>(text[e]))) ++e;
  auto category = relation_from_string(lower.substr(i, e - i));
  if (!category)
    throw ParseFailure("unknown relationship label '" + text.substr(i, e - i) + "'");
  DomainRelation out;
  out.category = *category;
  std::size_t xpos = after_marker(lower, "explanation", pos);
  if (xpos != std::string::npos) out.explanation = line_value(text, xpos);
  return out;
}

/// "Pattern: [label], Justification: [text]" with the three pattern labels.
inline DistributionPattern parse_pattern(const std::string& text) {
  using namespace parse_detail;
  std::string lower = lower_copy(text);
  std::size_t pos = after_marker(lower, "pattern");
  if (pos == std::string::npos) throw ParseFailure("no 'Pattern' marker in reply");
  std::size_t i = pos;
  while (i < text.size() && gap_char(text[i])) ++i;
  std::size_t e = i;
  while (e < text.size() && text[e] != ',' && text[e] != '\n' && text[e] != ']' &&
         text[e] != '.')
    ++e;
  std::string label = letters_only(text.substr(i, e - i));
  DistributionPattern out;
  if (label == "uniformsimilarity")
    out.pattern = PatternKind::UniformSimilarity;
  else if (label == "dimensiondominance")
    out.pattern = PatternKind::DimensionDominance;
  else if (label == "complementarydimensions")
    out.pattern = PatternKind::ComplementaryDimensions;
  else
    throw ParseFailure("unknown pattern label '" + text.substr(i, e - i) + "'");
  std::size_t jpos = after_marker(lower, "justification", pos);
  if (jpos != std::string::npos) out.justification = line_value(text, jpos);
  return out;
}

namespace parse_detail {

/// Shared by relevance and weight parsing: three labeled values, with a
/// fall-back to the first three numbers after the lead marker. Values are
/// renormalized when the sum strays from 1 by at most 0.05.
inline std::array<double, 3> labeled_triple(const std::string& text,
                                            const std::string& lower,
                                            std::string_view lead_marker,
                                            const std::array<std::string_view, 3>& labels,
                                            const char* what) {
  std::size_t base = after_marker(lower, lead_marker);
  std::size_t search_from = base == std::string::npos ? 0 : base;

  std::array<double, 3> values{};
  bool labeled_ok = true;
  for (std::size_t k = 0; k < 3; ++k) {
    std::size_t lpos = after_marker(lower, labels[k], search_from);
    if (lpos == std::string::npos) {
      labeled_ok = false;
      break;
    }
    auto hit = number_after(text, lpos);
    if (!hit) {
      labeled_ok = false;
      break;
    }
    values[k] = hit->value;
  }

  if (!labeled_ok) {
    if (base == std::string::npos)
      throw ParseFailure(std::string("no '") + what + "' values found in reply");
    std::size_t cursor = base;
    for (std::size_t k = 0; k < 3; ++k) {
      auto hit = number_after(text, cursor, k > 0);
      if (!hit)
        throw ParseFailure(std::string("expected three numbers after '") + what +
                           "' marker");
      values[k] = hit->value;
      cursor = hit->end;
    }
  }

  for (double v : values)
    if (v < 0.0)
      throw ParseFailure(std::string("negative ") + what + " value " + format_value(v));
  double sum = values[0] + values[1] + values[2];
  if (sum < 0.95 || sum > 1.05)
    throw ParseFailure(std::string(what) + " values sum to " + format_value(sum) +
                       ", outside the renormalizable band");
  for (double& v : values) v /= sum;
  return values;
}

}  // namespace parse_detail

/// "Scores: [technical features: x, application domains: y, claim scope: z],
/// Explanation: [text]".
inline RelevanceAssessment parse_relevance(const std::string& text) {
  using namespace parse_detail;
  std::string lower = lower_copy(text);
  auto v = labeled_triple(text, lower, "scores",
                          {"technical features", "application domains", "claim scope"},
                          "relevance");
  RelevanceAssessment out;
  out.technical = v[0];
  out.domain = v[1];
  out.claim = v[2];
  std::size_t base = after_marker(lower, "scores");
  std::size_t xpos =
      after_marker(lower, "explanation", base == std::string::npos ? 0 : base);
  if (xpos != std::string::npos) out.explanation = line_value(text, xpos);
  return out;
}

/// "Weights: [w_T: x, w_D: y, w_C: z], Justification: [text]". Tolerates
/// math-mode decorations around the weight names.
inline WeightVector parse_weights(const std::string& text) {
  using namespace parse_detail;
  std::string cleaned = strip_escapes(text);
  std::string lower = lower_copy(cleaned);
  auto v = labeled_triple(cleaned, lower, "weights", {"w_t", "w_d", "w_c"}, "weight");
  WeightVector out;
  out.w_t = v[0];
  out.w_d = v[1];
  out.w_c = v[2];
  std::size_t base = after_marker(lower, "weights");
  std::size_t jpos =
      after_marker(lower, "justification", base == std::string::npos ? 0 : base);
  if (jpos != std::string::npos) out.justification = line_value(cleaned, jpos);
  return out;
}

/// "Metric: [number], Justification: [text]".
inline RobustnessScore parse_robustness(const std::string& text,
                                        std::vector<std::string>* warnings = nullptr) {
  using namespace parse_detail;
  std::string lower = lower_copy(text);
  std::size_t pos = after_marker(lower, "metric");
  if (pos == std::string::npos) throw ParseFailure("no 'Metric' marker in reply");
  auto hit = number_after(text, pos);
  if (!hit) throw ParseFailure("no numeric value after 'Metric' marker");
  RobustnessScore out;
  out.value = clamp01(hit->value, "robustness metric", warnings);
  std::size_t jpos = after_marker(lower, "justification", pos);
  if (jpos != std::string::npos) out.justification = line_value(text, jpos);
  return out;
}

/// "Patent_Similarity_MAR :[number]", tolerant of the stray space before the
/// colon and of escaped underscores.
inline double parse_final(const std::string& text,
                          std::vector<std::string>* warnings = nullptr) {
  using namespace parse_detail;
  std::string cleaned = strip_escapes(text);
  std::string lower = lower_copy(cleaned);
  std::size_t pos = after_marker(lower, "patent_similarity_mar");
  if (pos == std::string::npos)
    throw ParseFailure("no 'Patent_Similarity_MAR' marker in reply");
  auto hit = number_after(cleaned, pos);
  if (!hit) throw ParseFailure("no numeric value after 'Patent_Similarity_MAR'");
  return clamp01(hit->value, "final score", warnings);
}

/// Combined extraction reply: three labeled aspect summaries in one text.
inline AspectProfile parse_profile(const std::string& text) {
  using namespace parse_detail;
  std::string lower = lower_copy(text);
  std::array<std::string_view, 3> labels{"technical features", "application domains",
                                         "claim scope"};
  std::array<std::size_t, 3> starts{};
  for (std::size_t k = 0; k < 3; ++k) {
    starts[k] = after_marker(lower, labels[k]);
    if (starts[k] == std::string::npos)
      throw ParseFailure(std::string("missing '") + std::string(labels[k]) +
                         "' section in combined extraction reply");
  }
  auto section = [&](std::size_t k) {
    std::size_t end = text.size();
    for (std::size_t other = 0; other < 3; ++other) {
      if (other == k) continue;
      // Marker positions point one past the label; back up to its start.
      std::size_t label_begin = starts[other] - labels[other].size();
      if (label_begin > starts[k] && label_begin < end) end = label_begin;
    }
    return span_value(text, starts[k], end);
  };
  AspectProfile out{section(0), section(1), section(2)};
  if (out.technical.empty() || out.domain.empty() || out.claim.empty())
    throw ParseFailure("combined extraction reply has an empty aspect section");
  return out;
}

/// Prompting-baseline reply: the trailing "Score:" number. The last marker
/// that is actually followed by a number wins, so step-by-step reasoning that
/// mentions the word "score" cannot shadow the answer.
inline double parse_baseline_score(const std::string& text,
                                   std::vector<std::string>* warnings = nullptr) {
  using namespace parse_detail;
  std::string lower = lower_copy(text);
  for (std::size_t pos : all_markers_desc(lower, "score")) {
    if (auto hit = number_after(text, pos))
      return clamp01(hit->value, "baseline score", warnings);
  }
  throw ParseFailure("no parsable 'Score' marker in baseline reply");
}

}  // namespace marg
