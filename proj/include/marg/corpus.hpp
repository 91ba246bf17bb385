#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "marg/errors.hpp"

namespace marg {

// ---------------------------------------------------------------------------
// IPC codes
// ---------------------------------------------------------------------------

/// One classification code, e.g. "G06F 3/048". Subclass-only and group-only
/// codes are valid; a subgroup always comes with a main group.
struct IpcCode {
  char section = 0;   // 'A'..'H'
  int ipc_class = 0;  // two digits
  char subclass = 0;
  std::optional<int> main_group;
  std::optional<std::string> subgroup;  // digit string, leading zeros kept
  std::string raw;

  /// Canonical notation: "G06F 3/048", "C22B 3", "C22B".
  std::string render() const {
    char head[8];
    std::snprintf(head, sizeof(head), "%c%02d%c", section, ipc_class, subclass);
    std::string out = head;
    if (main_group) {
      out += ' ';
      out += std::to_string(*main_group);
      if (subgroup) {
        out += '/';
        out += *subgroup;
      }
    }
    return out;
  }

  bool same_subclass(const IpcCode& other) const {
    return section == other.section && ipc_class == other.ipc_class &&
           subclass == other.subclass;
  }
  bool same_class(const IpcCode& other) const {
    return section == other.section && ipc_class == other.ipc_class;
  }
  bool same_group(const IpcCode& other) const {
    return main_group == other.main_group && subgroup == other.subgroup;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c));
  });
}

}  // namespace detail

/// Accepts canonical ("G06F3/048", "G06F 3/048"), subclass-only ("C22B") and
/// compact ("C22B300") notation. Compact digit runs split as main group plus
/// a two- or three-digit subgroup, preferring the longest main group.
inline IpcCode parse_ipc(std::string_view raw_input) {
  std::string text = detail::trim(raw_input);
  if (text.empty()) throw MalformedIpc("empty IPC code");

  std::string up = text;
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });

  IpcCode code;
  code.raw = text;
  if (up.size() < 4) throw MalformedIpc("IPC code too short: '" + text + "'");
  if (up[0] < 'A' || up[0] > 'H')
    throw MalformedIpc("section must be A-H: '" + text + "'");
  code.section = up[0];
  if (!std::isdigit(static_cast<unsigned char>(up[1])) ||
      !std::isdigit(static_cast<unsigned char>(up[2])))
    throw MalformedIpc("class must be two digits: '" + text + "'");
  code.ipc_class = (up[1] - '0') * 10 + (up[2] - '0');
  if (!std::isalpha(static_cast<unsigned char>(up[3])))
    throw MalformedIpc("subclass letter missing: '" + text + "'");
  code.subclass = up[3];

  bool separated = up.size() > 4 && std::isspace(static_cast<unsigned char>(up[4]));
  std::string rest = detail::trim(std::string_view(up).substr(4));
  if (rest.empty()) return code;

  auto slash = rest.find('/');
  if (slash != std::string::npos) {
    std::string group = detail::trim(rest.substr(0, slash));
    std::string sub = detail::trim(rest.substr(slash + 1));
    if (!detail::all_digits(group) || group.size() > 4)
      throw MalformedIpc("bad main group: '" + text + "'");
    if (!detail::all_digits(sub) || sub.size() > 4)
      throw MalformedIpc("bad subgroup: '" + text + "'");
    code.main_group = std::stoi(group);
    code.subgroup = sub;
    return code;
  }

  if (!detail::all_digits(rest))
    throw MalformedIpc("trailing garbage after subclass: '" + text + "'");

  if (!separated) {
    // Compact split: longest main group leaving a 2..3 digit subgroup wins,
    // so try a 2-digit subgroup before a 3-digit one.
    for (std::size_t sub_len : {2u, 3u}) {
      if (rest.size() > sub_len && rest.size() - sub_len <= 4) {
        std::string group = rest.substr(0, rest.size() - sub_len);
        code.main_group = std::stoi(group);
        code.subgroup = rest.substr(rest.size() - sub_len);
        return code;
      }
    }
  }
  if (rest.size() <= 4) {  // bare main group
    code.main_group = std::stoi(rest);
    return code;
  }
  throw MalformedIpc("cannot split group digits: '" + text + "'");
}

// ---------------------------------------------------------------------------
// Documents and pairs
// ---------------------------------------------------------------------------

struct PatentDocument {
  std::string id;
  std::string title;
  std::string abstract;
  std::vector<std::string> claims;
  std::vector<IpcCode> ipc_codes;
};

struct PatentPair {
  PatentDocument a;
  PatentDocument b;
  std::string pair_id;
};

struct AnnotatedPair {
  PatentPair pair;
  std::vector<int> ratings;  // 1..5, one per annotator; may be empty
  bool has_gold = false;     // false when the record carried neither ratings nor gold
  double gold_normalized = 0.0;
  double rating_stddev = 0.0;
};

enum class RelationCategory { Identical, Hierarchical, Overlapping, Distinct };

constexpr const char* to_string(RelationCategory c) {
  switch (c) {
    case RelationCategory::Identical: return "identical";
    case RelationCategory::Hierarchical: return "hierarchical";
    case RelationCategory::Overlapping: return "overlapping";
    case RelationCategory::Distinct: return "distinct";
  }
  return "unknown";
}

inline std::optional<RelationCategory> relation_from_string(std::string_view name) {
  std::string low(name);
  std::transform(low.begin(), low.end(), low.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (low == "identical") return RelationCategory::Identical;
  if (low == "hierarchical") return RelationCategory::Hierarchical;
  if (low == "overlapping") return RelationCategory::Overlapping;
  if (low == "distinct") return RelationCategory::Distinct;
  return std::nullopt;
}

struct DomainRelation {
  RelationCategory category = RelationCategory::Distinct;
  std::string explanation;
};

// ---------------------------------------------------------------------------
// Relation classifier (deterministic reference for the reasoning stage)
// ---------------------------------------------------------------------------

namespace detail {

inline bool subgroup_is_main(const std::optional<std::string>& sub) {
  return sub && std::all_of(sub->begin(), sub->end(), [](char c) { return c == '0'; });
}

// Within one subclass: "3/00" covers every "3/xx", and a bare "3" covers both.
inline bool group_is_ancestor(const IpcCode& parent, const IpcCode& child) {
  if (!parent.same_subclass(child)) return false;
  if (parent.same_group(child)) return false;
  if (!parent.main_group) return child.main_group.has_value();
  if (!child.main_group || *parent.main_group != *child.main_group) return false;
  bool parent_is_main = !parent.subgroup || subgroup_is_main(parent.subgroup);
  bool child_is_main = !child.subgroup || subgroup_is_main(child.subgroup);
  return parent_is_main && !child_is_main;
}

}  // namespace detail

/// Precedence: Identical > Hierarchical > Overlapping > Distinct, evaluated
/// over every code combination of the two lists. Symmetric in its arguments.
inline DomainRelation classify_ipc_relation(const std::vector<IpcCode>& codes_a,
                                            const std::vector<IpcCode>& codes_b) {
  if (codes_a.empty() || codes_b.empty())
    throw MalformedIpc("classify_ipc_relation needs non-empty code lists");

  const IpcCode* hier_a = nullptr;
  const IpcCode* hier_b = nullptr;
  const IpcCode* over_a = nullptr;
  const IpcCode* over_b = nullptr;
  bool shared_subclass = false;

  for (const auto& a : codes_a) {
    for (const auto& b : codes_b) {
      if (a.same_subclass(b) && a.same_group(b)) {
        return {RelationCategory::Identical,
                a.render() + " and " + b.render() + " denote the same classification"};
      }
      if (!hier_a && (detail::group_is_ancestor(a, b) || detail::group_is_ancestor(b, a))) {
        hier_a = &a;
        hier_b = &b;
      }
      if (!over_a && (a.same_subclass(b) || a.same_class(b))) {
        over_a = &a;
        over_b = &b;
        shared_subclass = a.same_subclass(b);
      }
    }
  }
  if (hier_a) {
    const IpcCode& parent = detail::group_is_ancestor(*hier_a, *hier_b) ? *hier_a : *hier_b;
    const IpcCode& child = &parent == hier_a ? *hier_b : *hier_a;
    return {RelationCategory::Hierarchical,
            parent.render() + " is an ancestor of " + child.render()};
  }
  if (over_a) {
    return {RelationCategory::Overlapping,
            over_a->render() + " and " + over_b->render() +
                (shared_subclass ? " share a subclass" : " share a class")};
  }
  return {RelationCategory::Distinct, "no shared section and class"};
}

// ---------------------------------------------------------------------------
// Likert handling and quality control
// ---------------------------------------------------------------------------

/// Maps mean rating on the 1..5 scale onto [0,1]: (mean - 1) / 4.
inline double normalize_likert(const std::vector<int>& ratings) {
  if (ratings.empty()) throw EmptyRatings();
  double sum = 0.0;
  for (int r : ratings) {
    if (r < 1 || r > 5) throw OutOfRangeRating(r);
    sum += r;
  }
  return (sum / static_cast<double>(ratings.size()) - 1.0) / 4.0;
}

/// Sample (n-1) standard deviation. Needs at least two ratings.
inline double sample_stddev(const std::vector<int>& ratings) {
  if (ratings.size() < 2)
    throw TooFewRatings("sample stddev needs at least 2 ratings");
  double mean = 0.0;
  for (int r : ratings) mean += r;
  mean /= static_cast<double>(ratings.size());
  double ss = 0.0;
  for (int r : ratings) ss += (r - mean) * (r - mean);
  return std::sqrt(ss / static_cast<double>(ratings.size() - 1));
}

inline AnnotatedPair make_annotated(PatentPair pair, std::vector<int> ratings) {
  AnnotatedPair out;
  out.pair = std::move(pair);
  out.gold_normalized = normalize_likert(ratings);
  out.rating_stddev = ratings.size() >= 2 ? sample_stddev(ratings) : 0.0;
  out.ratings = std::move(ratings);
  return out;
}

struct QcResult {
  std::vector<AnnotatedPair> kept;
  std::vector<AnnotatedPair> excluded;
};

/// Drops pairs whose annotators disagree too much (sample stddev above 2.0).
/// Input order is preserved on both sides of the partition.
inline QcResult qc_filter(const std::vector<AnnotatedPair>& pairs) {
  QcResult result;
  for (const auto& p : pairs) {
    if (p.ratings.size() < 2)
      throw TooFewRatings("pair '" + p.pair.pair_id + "' has fewer than 2 ratings");
    if (sample_stddev(p.ratings) > 2.0)
      result.excluded.push_back(p);
    else
      result.kept.push_back(p);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Dataset ingestion
// ---------------------------------------------------------------------------

enum class DatasetFormat { Jsonl, JsonArray };

namespace detail {

inline PatentDocument document_from_json(const nlohmann::json& j, std::size_t line_no,
                                         const char* which) {
  auto fail = [&](const std::string& msg) -> SchemaError {
    return SchemaError(line_no, std::string(which) + ": " + msg);
  };
  if (!j.is_object()) throw fail("expected an object");
  PatentDocument doc;
  if (!j.contains("id") || !j["id"].is_string()) throw fail("missing string field 'id'");
  doc.id = j["id"].get<std::string>();
  if (!j.contains("title") || !j["title"].is_string() || j["title"].get<std::string>().empty())
    throw fail("missing non-empty field 'title'");
  doc.title = j["title"].get<std::string>();
  if (!j.contains("abstract") || !j["abstract"].is_string() ||
      j["abstract"].get<std::string>().empty())
    throw fail("missing non-empty field 'abstract'");
  doc.abstract = j["abstract"].get<std::string>();
  if (!j.contains("claims") || !j["claims"].is_array() || j["claims"].empty())
    throw fail("missing non-empty array 'claims'");
  for (const auto& c : j["claims"]) {
    if (!c.is_string() || c.get<std::string>().empty())
      throw fail("claims must be non-empty strings");
    doc.claims.push_back(c.get<std::string>());
  }
  if (!j.contains("ipc") || !j["ipc"].is_array() || j["ipc"].empty())
    throw fail("missing non-empty array 'ipc'");
  for (const auto& c : j["ipc"]) {
    if (!c.is_string()) throw fail("ipc entries must be strings");
    try {
      doc.ipc_codes.push_back(parse_ipc(c.get<std::string>()));
    } catch (const MalformedIpc& e) {
      throw fail(e.what());
    }
  }
  return doc;
}

inline AnnotatedPair record_from_json(const nlohmann::json& j, std::size_t line_no) {
  if (!j.is_object()) throw SchemaError(line_no, "expected an object");
  AnnotatedPair rec;
  if (!j.contains("pair_id") || !j["pair_id"].is_string())
    throw SchemaError(line_no, "missing string field 'pair_id'");
  rec.pair.pair_id = j["pair_id"].get<std::string>();
  if (!j.contains("a") || !j.contains("b"))
    throw SchemaError(line_no, "missing patent objects 'a' and 'b'");
  rec.pair.a = document_from_json(j["a"], line_no, "a");
  rec.pair.b = document_from_json(j["b"], line_no, "b");
  if (rec.pair.a.id == rec.pair.b.id)
    throw SchemaError(line_no, "patents in a pair must have distinct ids");

  if (j.contains("ratings")) {
    if (!j["ratings"].is_array() || j["ratings"].empty())
      throw SchemaError(line_no, "'ratings' must be a non-empty array");
    for (const auto& r : j["ratings"]) {
      if (!r.is_number_integer())
        throw SchemaError(line_no, "ratings must be integers");
      rec.ratings.push_back(r.get<int>());
    }
    try {
      rec.gold_normalized = normalize_likert(rec.ratings);
    } catch (const Error& e) {
      throw SchemaError(line_no, e.what());
    }
    rec.rating_stddev = rec.ratings.size() >= 2 ? sample_stddev(rec.ratings) : 0.0;
    rec.has_gold = true;
  } else if (j.contains("gold")) {
    if (!j["gold"].is_number())
      throw SchemaError(line_no, "'gold' must be a number");
    rec.gold_normalized = j["gold"].get<double>();
    if (rec.gold_normalized < 0.0 || rec.gold_normalized > 1.0)
      throw SchemaError(line_no, "'gold' must lie in [0,1]");
    rec.has_gold = true;
  }
  // Records with neither field are unlabeled: scoreable but excluded from
  // gold-dependent metrics.
  return rec;
}

}  // namespace detail

/// Reads annotated pairs from disk. Jsonl is one record per line; JsonArray is
/// a single top-level array. Gold scores are recomputed from ratings whenever
/// ratings are present.
inline std::vector<AnnotatedPair> load_dataset(const std::string& path,
                                               DatasetFormat format = DatasetFormat::Jsonl) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);

  std::vector<AnnotatedPair> out;
  if (format == DatasetFormat::JsonArray) {
    nlohmann::json root;
    try {
      in >> root;
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(1, e.what());
    }
    if (!root.is_array()) throw SchemaError(1, "top level must be an array");
    std::size_t index = 1;
    for (const auto& j : root) out.push_back(detail::record_from_json(j, index++));
    return out;
  }

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(trimmed);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(line_no, e.what());
    }
    out.push_back(detail::record_from_json(j, line_no));
  }
  return out;
}

inline PatentDocument load_patent(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open patent file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(1, e.what());
  }
  return detail::document_from_json(j, 1, path.c_str());
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Picks at most per_section pairs for each IPC section (keyed on patent a's
/// first code). Deterministic for a fixed seed; output keeps input order.
inline std::vector<AnnotatedPair> stratified_sample(const std::vector<AnnotatedPair>& pairs,
                                                    int per_section, std::uint64_t seed) {
  if (per_section <= 0) return {};
  std::map<char, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].pair.a.ipc_codes.empty()) continue;
    buckets[pairs[i].pair.a.ipc_codes.front().section].push_back(i);
  }
  std::vector<std::size_t> chosen;
  for (auto& [section, indices] : buckets) {
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(section)));
    for (std::size_t i = indices.size(); i > 1; --i) {  // Fisher-Yates, platform independent
      std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(indices[i - 1], indices[j]);
    }
    std::size_t take = std::min(indices.size(), static_cast<std::size_t>(per_section));
    chosen.insert(chosen.end(), indices.begin(), indices.begin() + static_cast<long>(take));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<AnnotatedPair> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(pairs[i]);
  return out;
}

// ---------------------------------------------------------------------------
// JSON helpers shared with the CLI
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json document_to_json(const PatentDocument& doc) {
  nlohmann::ordered_json j;
  j["id"] = doc.id;
  j["title"] = doc.title;
  j["abstract"] = doc.abstract;
  j["claims"] = doc.claims;
  auto codes = nlohmann::ordered_json::array();
  for (const auto& c : doc.ipc_codes) codes.push_back(c.render());
  j["ipc"] = codes;
  return j;
}

}  // namespace marg
