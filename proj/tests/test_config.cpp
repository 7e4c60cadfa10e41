#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "loraguard/config.hpp"
#include "loraguard/experiment.hpp"

using namespace loraguard;

TEST_CASE("presets resolve with defaults filled") {
  for (const std::string& name : preset_names()) {
    const ExperimentConfig cfg = preset_config(name);
    CHECK(cfg.preset == name);
    CHECK(cfg.seeds.size() == 5);
    CHECK(!cfg.world.pair.yang.positions.empty());
  }
  CHECK_THROWS_AS(preset_config("no-such-preset"), std::runtime_error);
}

TEST_CASE("minimal config parses and echoes canonically") {
  const ExperimentConfig cfg = parse_config(R"({"preset": "fig4-count-sweep"})", "inline");
  CHECK(cfg.preset == "fig4-count-sweep");
  CHECK(cfg.world.base.vocab == 64);
  CHECK(cfg.world.wm_train.epochs > 0);

  const std::string echo = config_json(cfg);
  CHECK(!echo.empty());
  // The echo is itself a valid strict config describing the same run.
  const ExperimentConfig back = parse_config(echo, "echo");
  CHECK(config_json(back) == echo);
  CHECK(config_hash(back) == config_hash(cfg));
}

TEST_CASE("unknown keys are rejected by name") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"foo": 1})", "inline"), doctest::Contains("'foo'"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"world": {"wm_train": {"bogus": 2}}})", "inline"),
                       doctest::Contains("'bogus'"), std::runtime_error);
}

TEST_CASE("out-of-range values are rejected by field") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"world": {"wm_train": {"dropout_p": 1.5}}})", "inline"),
                       doctest::Contains("dropout_p"), std::runtime_error);
  CHECK_THROWS_AS(parse_config(R"({"tau": 0.0})", "inline"), std::runtime_error);
  CHECK_THROWS_AS(parse_config(R"({"seeds": []})", "inline"), std::runtime_error);
  CHECK_THROWS_AS(parse_config(R"({"lambda_grid": [0.0]})", "inline"), std::runtime_error);
}

TEST_CASE("nested overrides land in the right fields") {
  const std::string text = R"({
    "preset": "table1-analog",
    "world": {
      "shadow_way": "way2",
      "shadow_count": 2,
      "wm_train": {"epochs": 12, "dropout_p": 0.25},
      "pair": {"yang_size": 900}
    },
    "seeds": [11, 12],
    "out_dir": "elsewhere",
    "jobs": 3
  })";
  const ExperimentConfig cfg = parse_config(text, "inline");
  CHECK(cfg.world.shadow_way == "way2");
  CHECK(cfg.world.shadow_count == 2);
  CHECK(cfg.world.wm_train.epochs == 12);
  CHECK(cfg.world.wm_train.dropout_p == doctest::Approx(0.25f));
  CHECK(cfg.world.pair.yang_size == 900);
  CHECK(cfg.seeds == std::vector<uint64_t>{11, 12});
  CHECK(cfg.out_dir == "elsewhere");
  CHECK(cfg.jobs == 3);
}

TEST_CASE("files load through the same strict path") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "lg_config_test.json";
  {
    std::ofstream out(path);
    out << R"({"preset": "prune-attack", "prune_grid": [0.0, 0.5, 0.9]})";
  }
  const ExperimentConfig cfg = load_config(path.string());
  CHECK(cfg.preset == "prune-attack");
  CHECK(cfg.prune_grid.size() == 3);
  fs::remove(path);
  CHECK_THROWS_AS(load_config(path.string()), std::runtime_error);
}

TEST_CASE("malformed json reports a parse error") {
  CHECK_THROWS_WITH_AS(parse_config("{not json", "inline"), doctest::Contains("parse error"),
                       std::runtime_error);
}

TEST_CASE("trigger digests are stable and hide the spec") {
  const WatermarkPair pair = default_pair(BaseConfig{});
  const std::string digest = trigger_digest(pair);
  CHECK(digest == trigger_digest(pair));
  CHECK(digest.rfind("0x", 0) == 0);
  WatermarkPair other = pair;
  other.yang.tokens[0] = 62;
  CHECK(trigger_digest(other) != digest);
  CHECK(trigger_plaintext(pair).find("target=") != std::string::npos);
}
