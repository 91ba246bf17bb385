// Random conforming and malformed reply texts for each stage grammar, shared
// by the parser tests and the acceptance checks.
#pragma once

#include <array>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

namespace gen {

struct Rng {
  std::mt19937_64 eng;
  explicit Rng(std::uint64_t seed) : eng(seed) {}

  std::size_t pick(std::size_t n) { return eng() % n; }

  // Three-decimal score in [0,1]; parses back to the identical double.
  double score3() { return static_cast<double>(eng() % 1001) / 1000.0; }

  std::string score_text(double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
  }

  std::string words(std::size_t n) {
    static const char* pool[] = {"shared",  "methodology", "overlap",  "partial",
                                 "coverage", "alignment",  "devices",  "protocol",
                                 "narrow",   "broad",      "signal",   "filtering"};
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) out += ' ';
      out += pool[pick(sizeof(pool) / sizeof(pool[0]))];
    }
    return out;
  }

  // Marker casing and markup decorations the parsers must tolerate.
  std::string marker(const std::string& word) {
    switch (pick(4)) {
      case 0: return word;
      case 1: {
        std::string cap = word;
        cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
        return cap;
      }
      case 2: {
        std::string up = word;
        for (char& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return up;
      }
      default: {
        std::string cap = word;
        cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
        return "**" + cap + "**";
      }
    }
  }

  std::string sep() {
    switch (pick(4)) {
      case 0: return ": ";
      case 1: return " : ";
      case 2: return ": [";
      default: return ":\n";
    }
  }
};

struct ScoreCase {
  std::string text;
  double score;
  std::string reason;
};

inline ScoreCase gen_score_reason(Rng& rng) {
  ScoreCase c;
  c.score = rng.score3();
  c.reason = rng.words(3 + rng.pick(4));
  c.text = rng.marker("score") + rng.sep() + rng.score_text(c.score);
  c.text += rng.pick(2) ? "], " : ", ";
  c.text += rng.marker("reason") + rng.sep() + c.reason;
  return c;
}

struct CategoryCase {
  std::string text;
  std::string label;  // lowercase canonical
};

inline CategoryCase gen_category(Rng& rng) {
  static const char* labels[] = {"identical", "hierarchical", "overlapping", "distinct"};
  CategoryCase c;
  c.label = labels[rng.pick(4)];
  std::string shown = c.label;
  if (rng.pick(2))
    shown[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(shown[0])));
  c.text = rng.marker("category") + rng.sep() + shown + ", " + rng.marker("explanation") +
           rng.sep() + rng.words(4);
  return c;
}

struct PatternCase {
  std::string text;
  int kind;  // 0 uniform, 1 dominance, 2 complementary
};

inline PatternCase gen_pattern(Rng& rng) {
  static const char* labels[] = {"uniform similarity", "dimension dominance",
                                 "complementary dimensions"};
  PatternCase c;
  c.kind = static_cast<int>(rng.pick(3));
  std::string shown = labels[c.kind];
  if (rng.pick(2))
    shown[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(shown[0])));
  c.text = rng.marker("pattern") + rng.sep() + shown + ", " + rng.marker("justification") +
           rng.sep() + rng.words(4);
  return c;
}

struct TripleCase {
  std::string text;
  double raw[3];
};

inline TripleCase gen_relevance(Rng& rng) {
  TripleCase c;
  // Integer thousandths that sum to 1000, so the raw sum is drift free.
  int a = static_cast<int>(rng.pick(800)) + 100;
  int b = static_cast<int>(rng.pick(static_cast<std::size_t>(1000 - a - 50))) + 25;
  int d = 1000 - a - b;
  c.raw[0] = a / 1000.0;
  c.raw[1] = b / 1000.0;
  c.raw[2] = d / 1000.0;
  c.text = rng.marker("scores") + rng.sep() + "technical features: " +
           rng.score_text(c.raw[0]) + ", application domains: " + rng.score_text(c.raw[1]) +
           ", claim scope: " + rng.score_text(c.raw[2]) + "], " +
           rng.marker("explanation") + rng.sep() + rng.words(5);
  return c;
}

inline TripleCase gen_weights(Rng& rng) {
  TripleCase c;
  int a = static_cast<int>(rng.pick(800)) + 100;
  int b = static_cast<int>(rng.pick(static_cast<std::size_t>(1000 - a - 50))) + 25;
  int d = 1000 - a - b;
  c.raw[0] = a / 1000.0;
  c.raw[1] = b / 1000.0;
  c.raw[2] = d / 1000.0;
  static const char* t_keys[] = {"w_T", "$w_T$", "w\\_T"};
  static const char* d_keys[] = {"w_D", "$w_D$", "w\\_D"};
  static const char* c_keys[] = {"w_C", "$w_C$", "w\\_C"};
  std::size_t style = rng.pick(3);
  c.text = rng.marker("weights") + rng.sep() + t_keys[style] + ": " +
           rng.score_text(c.raw[0]) + ", " + d_keys[style] + ": " +
           rng.score_text(c.raw[1]) + ", " + c_keys[style] + ": " +
           rng.score_text(c.raw[2]) + "], " + rng.marker("justification") + rng.sep() +
           rng.words(5);
  return c;
}

struct ValueCase {
  std::string text;
  double value;
};

inline ValueCase gen_robustness(Rng& rng) {
  ValueCase c;
  c.value = rng.score3();
  c.text = rng.marker("metric") + rng.sep() + rng.score_text(c.value) + ", " +
           rng.marker("justification") + rng.sep() + rng.words(4);
  return c;
}

inline ValueCase gen_final(Rng& rng) {
  ValueCase c;
  c.value = rng.score3();
  static const char* markers[] = {"Patent_Similarity_MAR", "Patent\\_Similarity\\_MAR"};
  static const char* seps[] = {" :", ": ", " : ", ":"};
  c.text = std::string(markers[rng.pick(2)]) + seps[rng.pick(4)] + rng.score_text(c.value);
  return c;
}

// Three malformed fixtures per grammar, indexed as the parsers_test names them.
inline const std::array<const char*, 3>& malformed_score() {
  static const std::array<const char*, 3> v = {
      "The patents are similar.", "Score: high, Reason: none", ""};
  return v;
}
inline const std::array<const char*, 3>& malformed_category() {
  static const std::array<const char*, 3> v = {
      "Category: related, Explanation: x", "the relationship is close 0.5", "Category:"};
  return v;
}
inline const std::array<const char*, 3>& malformed_pattern() {
  static const std::array<const char*, 3> v = {
      "Pattern: diagonal dominance", "Pattern:", "no marker 0.4"};
  return v;
}
inline const std::array<const char*, 3>& malformed_relevance() {
  static const std::array<const char*, 3> v = {
      "Scores: [0.9, 0.9, 0.9]",
      "Scores: [technical features: 0.5, application domains: 0.3]",
      "Scores: [technical features: -0.5, application domains: 0.8, claim scope: 0.7]"};
  return v;
}
inline const std::array<const char*, 3>& malformed_weights() {
  static const std::array<const char*, 3> v = {
      "Weights: [w_T: 0.9, w_D: 0.5, w_C: 0.2]",
      "Weights: [w_T: -0.1, w_D: 0.6, w_C: 0.5]", "no weights at all"};
  return v;
}
inline const std::array<const char*, 3>& malformed_robustness() {
  static const std::array<const char*, 3> v = {
      "Metric: high, Justification: the value 100 is big", "Metric:", "Justification: only"};
  return v;
}
inline const std::array<const char*, 3>& malformed_final() {
  static const std::array<const char*, 3> v = {
      "Similarity = 0.662", "Patent_Similarity_MAR : none", ""};
  return v;
}

}  // namespace gen
