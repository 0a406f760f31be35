#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "dynkd/config.hpp"
#include "dynkd/error.hpp"
#include "support.hpp"

using namespace dynkd;

namespace {

constexpr const char* kBase = R"({
  "dataset": {"name": "synthetic", "synthetic": {"num_classes": 3, "samples_per_class": 20}},
  "schedule": {"beta_min": 0.2, "beta_max": 0.9, "growth_rate_b": 0.5, "time_shift_t0": 4},
  "trainer": {"mode": "hinton_kd", "epochs": 7, "optimizer": {"learning_rate": 0.1}},
  "sweep": {"seeds": [4, 5], "modes": ["gompertz_full", "hinton_kd"],
            "cells": [{"teacher": "tiny_teacher", "student": "tiny_student"}]}
})";

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(),
                     [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("parse fills fields and keeps defaults") {
  const ExperimentConfig c = parse_config(kBase);
  CHECK(c.dataset.synthetic.num_classes == 3);
  CHECK(c.dataset.synthetic.test_samples_per_class == 64);
  CHECK(c.schedule.beta_min == 0.2);
  CHECK(c.schedule.time_unit == TimeUnit::raw_epoch);
  CHECK(c.trainer.mode == Mode::hinton_kd);
  CHECK(c.trainer.epochs == 7);
  CHECK(c.trainer.optimizer.learning_rate == 0.1);
  CHECK(c.trainer.optimizer.momentum == 0.9);
  CHECK(c.sweep.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(c.sweep.modes.size() == 2);
  CHECK(validate(c).empty());
}

TEST_CASE("unknown keys and wrong types name the field") {
  CHECK(error_of(R"({"trainer": {"epochz": 3}})").find("trainer.epochz: unknown field") !=
        std::string::npos);
  CHECK(error_of(R"({"banana": 1})").find("banana: unknown field") != std::string::npos);
  CHECK(error_of(R"({"trainer": {"epochs": "many"}})").find("trainer.epochs: wrong type") !=
        std::string::npos);
  CHECK(error_of(R"({"trainer": {"mode": "magic"}})").find("trainer.mode") != std::string::npos);
  CHECK(error_of(R"({"losses": 3})").find("losses: expected an object") != std::string::npos);
}

TEST_CASE("syntax errors report line and column") {
  const std::string msg = error_of("{\n  \"trainer\": {\n    \"epochs\": 3,,\n  }\n}");
  CHECK(msg.find("cfg.json:3:") == 0);
}

TEST_CASE("raw epoch time requires an explicit growth rate") {
  CHECK(error_of(R"({"schedule": {"beta_min": 0.1}})").find("schedule.growth_rate_b: required") !=
        std::string::npos);
  const ExperimentConfig c =
      parse_config(R"({"schedule": {"time_unit": "normalized_fraction", "time_shift_t0": 0.5}})");
  CHECK(c.schedule.growth_rate_b == 5.0);
  CHECK(c.schedule.time_unit == TimeUnit::normalized_fraction);
}

TEST_CASE("validate names every violated constraint") {
  ExperimentConfig c = parse_config(kBase);
  c.schedule.beta_min = 2.0;
  c.losses.r = 1.5;
  c.trainer.epochs = 0;
  c.models.student = "resnet50";
  c.dataset.allow_download = true;
  const auto v = validate(c);
  CHECK(mentions(v, "beta_min < beta_max"));
  CHECK(mentions(v, "losses.r"));
  CHECK(mentions(v, "trainer.epochs"));
  CHECK(mentions(v, "allow_full_scale"));
  CHECK(mentions(v, "archive_sha256"));
  c.models.student = "nonexistent";
  CHECK(mentions(validate(c), "nonexistent"));
}

TEST_CASE("overrides: JSON values, strings and deepest key wins") {
  nlohmann::json doc = nlohmann::json::parse(kBase);
  apply_overrides(doc, {"trainer.optimizer.learning_rate=0.3", "trainer={\"epochs\": 2}",
                        "trainer.mode=fixed_full", "losses.tau=2"});
  const ExperimentConfig c = parse_config(doc.dump());
  CHECK(c.trainer.epochs == 2);
  CHECK(c.trainer.mode == Mode::fixed_full);
  CHECK(c.trainer.optimizer.learning_rate == 0.3);
  CHECK(c.losses.tau == 2.0);
  CHECK_THROWS_AS(apply_overrides(doc, {"novalue"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(doc, {"a..b=1"}), ConfigError);
}

TEST_CASE("load_config reads a file and applies overrides") {
  const auto dir = dynkd::testing::temp_dir("config");
  {
    std::ofstream out(dir / "c.json");
    out << kBase;
  }
  const ExperimentConfig c = load_config(dir / "c.json", {"trainer.seed=42"});
  CHECK(c.trainer.seed == 42);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("to_json round trips") {
  ExperimentConfig c = parse_config(kBase);
  c.dataset.subset_size = 100;
  c.losses.second_order_grad_match = true;
  c.schedule.time_unit = TimeUnit::normalized_fraction;
  const nlohmann::json j = to_json(c);
  const ExperimentConfig back = parse_config(j.dump());
  CHECK(to_json(back) == j);
  CHECK(back.dataset.subset_size == 100);
  CHECK(back.losses.second_order_grad_match);
}

TEST_CASE("modes parse and print") {
  for (Mode m : kAllModes) CHECK(parse_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_mode("distill"), ConfigError);
}

TEST_CASE("dataset spec derives a distinct test subset seed") {
  ExperimentConfig c = parse_config(kBase);
  c.dataset.subset_size = 10;
  c.dataset.test_subset_size = 5;
  c.dataset.subset_seed = 8;
  const DatasetSpec train = c.dataset.spec(Split::train);
  const DatasetSpec test = c.dataset.spec(Split::test);
  CHECK(train.subset_size == 10);
  CHECK(test.subset_size == 5);
  CHECK(test.subset_seed == 9);
}
