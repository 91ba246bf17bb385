// Replays the frozen reference run: fixed pair, scripted backend, and a
// byte-for-byte comparison of the resulting JSON for both plan modes.
#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "marg/corpus.hpp"
#include "marg/engine.hpp"
#include "marg/gateway.hpp"

namespace {

const std::string kGoldenDir = std::string(MARG_FIXTURES_DIR) + "/golden";

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

marg::PatentPair golden_pair() {
  marg::PatentPair pair;
  pair.pair_id = "golden-001";
  pair.a = marg::load_patent(kGoldenDir + "/pair_a.json");
  pair.b = marg::load_patent(kGoldenDir + "/pair_b.json");
  return pair;
}

marg::Engine golden_engine(marg::EngineOptions options) {
  auto backend = std::make_shared<marg::ScriptedBackend>();
  backend->load_script(kGoldenDir + "/script.jsonl");
  return marg::Engine(std::make_shared<marg::Gateway>(std::move(backend)), options);
}

}  // namespace

TEST_CASE("golden compact run reproduces the frozen result byte for byte") {
  marg::EngineOptions options;
  options.final_mode = marg::FinalMode::LlmCheck;
  auto result = golden_engine(options).execute(
      golden_pair(), marg::build_plan(marg::PlanMode::Compact));

  CHECK(result.usage.calls == 8);
  CHECK(result.final_score == 0.58);
  CHECK(marg::result_to_json(result).dump(2) + "\n" == slurp(kGoldenDir + "/result.json"));
}

TEST_CASE("golden expanded run reproduces its frozen result") {
  marg::EngineOptions options;
  options.final_mode = marg::FinalMode::LlmCheck;
  auto result = golden_engine(options).execute(
      golden_pair(), marg::build_plan(marg::PlanMode::Expanded));

  CHECK(result.usage.calls == 15);
  CHECK(marg::result_to_json(result).dump(2) + "\n" ==
        slurp(kGoldenDir + "/result_expanded.json"));
}

TEST_CASE("golden run is schedule independent") {
  std::string reference = slurp(kGoldenDir + "/result.json");
  auto pair = golden_pair();
  for (std::uint64_t seed : {7u, 99u, 20260822u}) {
    for (int jobs : {1, 3}) {
      marg::EngineOptions options;
      options.final_mode = marg::FinalMode::LlmCheck;
      options.schedule_seed = seed;
      options.node_parallelism = jobs;
      auto result = golden_engine(options).execute(
          pair, marg::build_plan(marg::PlanMode::Compact));
      CHECK(marg::result_to_json(result).dump(2) + "\n" == reference);
    }
  }
}
