#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>

#include "marg/corpus.hpp"
#include "marg/errors.hpp"
#include "marg/prompt_kit.hpp"

namespace {

marg::PatentDocument make_doc(const std::string& id, const std::string& title) {
  marg::PatentDocument doc;
  doc.id = id;
  doc.title = title;
  doc.abstract = "An apparatus for " + title + ".";
  doc.claims = {"A first claim about " + title + ".", "A dependent claim."};
  doc.ipc_codes = {marg::parse_ipc("G06F 16/332"), marg::parse_ipc("H04L 9/08")};
  return doc;
}

marg::PatentPair make_pair() {
  marg::PatentPair pair;
  pair.pair_id = "pk-pair-1";
  pair.a = make_doc("PK-A", "adaptive beam steering");
  pair.b = make_doc("PK-B", "phased array calibration");
  return pair;
}

/// Holds a value for every placeholder any template uses, so each stage can
/// render without caring which subset it needs.
marg::PromptContext universal_context() {
  return {
      {"title", "Widget"},
      {"abstract", "A widget."},
      {"claims", "1. A widget claim."},
      {"ipc", "G06F 16/332"},
      {"a_technical", "alpha technical"},
      {"b_technical", "beta technical"},
      {"a_domain", "alpha domain"},
      {"b_domain", "beta domain"},
      {"a_claim", "alpha claim"},
      {"b_claim", "beta claim"},
      {"a_ipc", "G06F 16/332"},
      {"b_ipc", "H04L 9/08"},
      {"pair_context", "Patent A:\n...\n\nPatent B:\n..."},
      {"s_t", "0.8"},
      {"s_d", "0.6"},
      {"s_c", "0.4"},
      {"relation", "overlapping"},
      {"relation_explanation", "shared class"},
      {"pattern", "dimension dominance"},
      {"pattern_justification", "one score leads"},
      {"rel_technical", "0.5"},
      {"rel_domain", "0.3"},
      {"rel_claim", "0.2"},
      {"robustness", "0.9"},
      {"w_t", "0.2"},
      {"w_d", "0.5"},
      {"w_c", "0.3"},
      {"a_content", "patent a text"},
      {"b_content", "patent b text"},
      {"ex1_a", "e1a"},
      {"ex1_b", "e1b"},
      {"ex2_a", "e2a"},
      {"ex2_b", "e2b"},
      {"ex3_a", "e3a"},
      {"ex3_b", "e3b"},
  };
}

struct ScratchFile {
  std::string path;
  explicit ScratchFile(const std::string& name, const std::string& content)
      : path("pk_scratch_" + name) {
    std::ofstream out(path, std::ios::binary);
    out << content;
  }
  ~ScratchFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("extraction prompts embed the document fields") {
  auto doc = make_doc("D1", "acoustic echo reduction");
  auto ctx = marg::extraction_context(doc);

  std::string claim_prompt = marg::render(marg::StageId::ExtractClaim, ctx);
  CHECK(claim_prompt.find("Determine the claim scope of the patent") != std::string::npos);
  CHECK(claim_prompt.find("acoustic echo reduction") != std::string::npos);
  CHECK(claim_prompt.find("1. A first claim") != std::string::npos);
  CHECK(claim_prompt.find("2. A dependent claim.") != std::string::npos);

  std::string tech_prompt = marg::render(marg::StageId::ExtractTechnical, ctx);
  CHECK(tech_prompt.find("technical features") != std::string::npos);
  std::string domain_prompt = marg::render(marg::StageId::ExtractDomain, ctx);
  CHECK(domain_prompt.find("application domains") != std::string::npos);
}

TEST_CASE("every stage render carries its mandated format instruction") {
  auto ctx = universal_context();
  using marg::StageId;
  const StageId stages[] = {
      StageId::ExtractCombined, StageId::SimTechnical,   StageId::SimDomain,
      StageId::SimClaim,        StageId::DomainRel,      StageId::InfoDist,
      StageId::DimRelevance,    StageId::CrossValid,     StageId::ReasonCombined,
      StageId::WeightIntegrate, StageId::FinalCalc,      StageId::BaselineIO,
      StageId::BaselineCoT,
  };
  for (StageId stage : stages) {
    INFO("stage " << marg::to_string(stage));
    std::string instruction = marg::format_instruction(stage);
    REQUIRE_FALSE(instruction.empty());
    std::string prompt = marg::render(stage, ctx);
    CHECK(prompt.find(instruction) != std::string::npos);
  }

  // The few-shot prompt mandates its format by ending on the answer cue.
  std::string fewshot = marg::render(StageId::BaselineFewShot, ctx);
  REQUIRE(fewshot.size() >= 6);
  CHECK(fewshot.substr(fewshot.size() - 6) == "Score:");
}

TEST_CASE("cross validation prompt keeps the agreement wording") {
  std::string prompt = marg::render(marg::StageId::CrossValid, universal_context());
  CHECK(prompt.find("assign a robustness score close to 1") != std::string::npos);
  CHECK(prompt.find("Metric: [score]") != std::string::npos);
}

TEST_CASE("final stage prompt spells out the weighted formula") {
  std::string prompt = marg::render(marg::StageId::FinalCalc, universal_context());
  CHECK(prompt.find("S_final = w_T x S_T + w_D x S_D + w_C x S_C") != std::string::npos);
  CHECK(prompt.find("Patent_Similarity_MAR :[score]") != std::string::npos);
  CHECK(prompt.find("rounded to three decimal places") != std::string::npos);
}

TEST_CASE("render is deterministic and fails on a missing field") {
  auto ctx = universal_context();
  std::string one = marg::render(marg::StageId::SimTechnical, ctx);
  std::string two = marg::render(marg::StageId::SimTechnical, ctx);
  CHECK(one == two);
  CHECK(one.find("alpha technical") != std::string::npos);
  CHECK(one.find("{a_technical}") == std::string::npos);

  try {
    marg::render(marg::StageId::SimTechnical, {});
    FAIL("expected MissingContextField");
  } catch (const marg::MissingContextField& e) {
    CHECK(std::string(e.what()).find("a_technical") != std::string::npos);
  }
}

TEST_CASE("format reminder restates the instruction after the complaint") {
  std::string reminder = marg::format_reminder(marg::StageId::WeightIntegrate);
  CHECK(reminder.find("did not follow the required format") != std::string::npos);
  CHECK(reminder.find(marg::format_instruction(marg::StageId::WeightIntegrate)) !=
        std::string::npos);
}

TEST_CASE("pair context block renders both patents") {
  auto pair = make_pair();
  std::string block = marg::pair_context_block(pair);
  CHECK(block.find("Patent A:\nTitle: adaptive beam steering") != std::string::npos);
  CHECK(block.find("Patent B:\nTitle: phased array calibration") != std::string::npos);
  CHECK(block.find("IPC codes: G06F 16/332, H04L 9/08") != std::string::npos);
}

TEST_CASE("few shot prompt lays out three anchored examples then the task") {
  auto pair = make_pair();
  std::string prompt = marg::render(marg::StageId::BaselineFewShot,
                                    marg::fewshot_context(pair, marg::default_fewshot_exemplars()));
  std::size_t e1 = prompt.find("Example 1:");
  std::size_t e2 = prompt.find("Example 2:");
  std::size_t e3 = prompt.find("Example 3:");
  std::size_t task = prompt.find("Task:");
  REQUIRE(e1 != std::string::npos);
  REQUIRE(e2 != std::string::npos);
  REQUIRE(e3 != std::string::npos);
  REQUIRE(task != std::string::npos);
  CHECK(e1 < e2);
  CHECK(e2 < e3);
  CHECK(e3 < task);
  CHECK(prompt.find("Score: 0.2 (Low Similarity)") != std::string::npos);
  CHECK(prompt.find("Score: 0.5 (Medium Similarity)") != std::string::npos);
  CHECK(prompt.find("Score: 0.9 (High Similarity)") != std::string::npos);
  CHECK(prompt.find("adaptive beam steering", task) != std::string::npos);
}

TEST_CASE("exemplars load from a json file") {
  std::string path = std::string(MARG_FIXTURES_DIR) + "/fewshot_exemplars.json";
  auto ex = marg::load_fewshot_exemplars(path);
  CHECK(ex[0].a.find("Rotary kiln") != std::string::npos);
  CHECK(ex[1].b.find("landing pad") != std::string::npos);
  CHECK(ex[2].a.find("Noise-cancelling") != std::string::npos);

  ScratchFile two_entries("two.json", R"([{"a":"x","b":"y"},{"a":"x","b":"y"}])");
  CHECK_THROWS_AS(marg::load_fewshot_exemplars(two_entries.path), marg::SchemaError);

  ScratchFile missing_field("missing.json", R"([{"a":"x"},{"a":"x","b":"y"},{"a":"x","b":"y"}])");
  CHECK_THROWS_AS(marg::load_fewshot_exemplars(missing_field.path), marg::SchemaError);

  ScratchFile empty_text("empty.json",
                         R"([{"a":"","b":"y"},{"a":"x","b":"y"},{"a":"x","b":"y"}])");
  CHECK_THROWS_AS(marg::load_fewshot_exemplars(empty_text.path), marg::SchemaError);

  CHECK_THROWS_AS(marg::load_fewshot_exemplars("no_such_exemplars.json"), marg::IoError);
}

TEST_CASE("number formatting trims trailing zeros") {
  CHECK(marg::format_number(0.5) == "0.5");
  CHECK(marg::format_number(1.0) == "1");
  CHECK(marg::format_number(1.0 / 3.0) == "0.333333");
  CHECK(marg::format_number(0.125) == "0.125");
}
