#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smc/error.hpp"
#include "smc/experiments.hpp"
#include "smc/rng.hpp"

using namespace smc;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no smc::Error thrown");
  return ErrorCode::InvalidInput;
}

// Small enough to run in a unit test.
ExperimentSpec quick(const std::string& name) {
  ExperimentSpec s;
  s.name = name;
  s.seeds = {2, 1};
  s.overrides = {{"train_per_class", "12"}, {"test_per_class", "6"}, {"base_epochs", "2"}, {"smc_epochs", "2"},
                 {"memory_per_class", "4"}};
  if (name == "split_sweep") s.overrides["probe_per_class"] = "6";
  if (name == "snr_sweep") {
    s.overrides["snr_list"] = "0,inf";
    s.overrides["finetune_epochs"] = "1";
    s.overrides["local_per_class"] = "4";
  }
  return s;
}

}  // namespace

TEST_CASE("csv helpers") {
  CHECK(csv_number(0.5) == "0.500000");
  CHECK(csv_number(-0.0) == "0.000000");
  CHECK(csv_number(HUGE_VAL) == "inf");
  CHECK(csv_number(-HUGE_VAL) == "-inf");
  CHECK(csv_number(std::nan("")) == "nan");
  CsvTable t{{{"seed", "1"}}, "a,b", {"1,2", "3,4"}};
  CHECK(t.render() == "# seed=1\na,b\n1,2\n3,4\n");
  const auto rows = parse_csv_rows(t.render());
  REQUIRE(rows.size() == 2);
  CHECK(rows[1] == std::vector<std::string>{"3", "4"});
}

TEST_CASE("settings") {
  const Settings s({{"lr", "0.1"}, {"list", "1,2,3"}, {"snr", "0,inf"}, {"tasks", "a,b"}}, {{"lr", "0.2"}});
  CHECK(s.number("lr") == 0.2);
  CHECK(s.ints("list") == std::vector<int>{1, 2, 3});
  CHECK(std::isinf(s.numbers("snr")[1]));
  CHECK(s.words("tasks") == std::vector<std::string>{"a", "b"});
  CHECK(code_of([] { Settings({{"lr", "0.1"}}, {{"lrr", "0.2"}}); }) == ErrorCode::InvalidInput);
  CHECK(code_of([&] { s.number("list"); }) == ErrorCode::InvalidInput);
  CHECK(code_of([&] { s.text("missing"); }) == ErrorCode::InvalidInput);
}

TEST_CASE("experiment description text") {
  const ExperimentSpec s = parse_spec_text("# comment\nname=incremental\nseeds=3,1\nout=x.csv\nlambda=0.5\n");
  CHECK(s.name == "incremental");
  CHECK(s.seeds == std::vector<std::uint64_t>{3, 1});
  CHECK(s.output == "x.csv");
  CHECK(s.overrides.at("lambda") == "0.5");
  CHECK(code_of([] { parse_spec_text("no equals sign"); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { experiment_defaults("nope"); }) == ErrorCode::InvalidInput);
  ExperimentSpec bad = quick("incremental");
  bad.overrides["unknown_knob"] = "1";
  CHECK(code_of([&] { run_experiment(bad); }) == ErrorCode::InvalidInput);
  bad = quick("incremental");
  bad.seeds.clear();
  CHECK(code_of([&] { run_experiment(bad); }) == ErrorCode::InvalidInput);
}

TEST_CASE("purpose seeds") {
  CHECK(derive_seed(1, "train") != derive_seed(1, "test"));
  CHECK(derive_seed(1, "train") != derive_seed(2, "train"));
  CHECK(derive_seed(7, "noise") == (fnv1a64("noise") ^ (7 * 0x9E3779B97F4A7C15ULL)));
}

TEST_CASE("every experiment is reproducible") {
  for (const auto& name : experiment_names()) {
    CAPTURE(name);
    const std::string a = run_experiment(quick(name)).render();
    const std::string b = run_experiment(quick(name)).render();
    CHECK(a == b);
    CHECK(!parse_csv_rows(a).empty());
  }
}
