#include <filesystem>

#include "doctest.h"
#include "pvxl/config.hpp"
#include "pvxl/io.hpp"

using namespace pvxl;
using nlohmann::json;

namespace {

std::string temp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

std::string error_of(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

json minimal() { return {{"model", {{"height", 14}, {"width", 14}}}}; }

}  // namespace

TEST_CASE("minimal config takes the defaults") {
  const auto c = config_from_json(minimal());
  const TrainConfig d;
  CHECK(c.batch == d.batch);
  CHECK(c.epochs == d.epochs);
  CHECK(c.adam.lr == d.adam.lr);
  CHECK(c.adam.decay == d.adam.decay);
  CHECK(c.kl_anneal_epochs == 10);
  CHECK(c.ais.spacing == Spacing::geometric_tail);
  CHECK(c.model.prior == PriorKind::rbm);
  CHECK(c.model.filters == d.model.filters);
  CHECK(c.model.height == 14);
  CHECK(c.precision == "float");
  CHECK(c.data.source == "bars");
}

TEST_CASE("unknown keys are rejected by name") {
  auto j = minimal();
  j["epochz"] = 3;
  CHECK(error_of(j) == "unknown key 'epochz'");
  j = minimal();
  j["model"]["filterz"] = 3;
  CHECK(error_of(j) == "unknown key 'model.filterz'");
  j = minimal();
  j["ais"]["chain"] = 3;
  CHECK(error_of(j) == "unknown key 'ais.chain'");
  j = minimal();
  j["model"]["head"] = {{"kind", "bernoulli"}, {"mix", 2}};
  CHECK(error_of(j) == "unknown key 'model.head.mix'");
}

TEST_CASE("bad values are rejected") {
  auto j = minimal();
  j["batch"] = "many";
  CHECK(error_of(j) == "batch: wrong type");
  j = minimal();
  j["model"]["prior"] = "boltzmann";
  CHECK(error_of(j).find("model.prior: unknown value 'boltzmann'") == 0);
  j = minimal();
  j["precision"] = "half";
  CHECK(error_of(j).find("precision") != std::string::npos);
  j = minimal();
  j["tau"] = {{"tau", 2.0}};
  CHECK_FALSE(error_of(j).empty());
  j = minimal();
  j["data"] = {{"size", 10}};
  CHECK(error_of(j).find("data.size") != std::string::npos);
  j = minimal();
  j["model"]["head"] = {{"kind", "dlm"}, {"channels", 3}};
  CHECK_FALSE(error_of(j).empty());
  CHECK(error_of(json::array()).find("expected an object") != std::string::npos);
}

TEST_CASE("save and load round trip") {
  auto c = config_from_json(minimal());
  c.epochs = 7;
  c.seed = 99;
  c.adam.lr = 1.0 / 3.0;
  c.tau.schedule = TauSchedule::decreasing;
  c.tau.tau = 0.5;
  c.tau.tau_end = 0.2;
  c.tau.horizon = 100;
  c.model.z3 = true;
  c.model.z3_units = 5;
  c.ais.spacing = Spacing::linear;
  const auto path = temp_path("pvxl_cfg.json");
  config_save(path, c);
  const auto back = config_load(path);
  CHECK(config_to_json(back) == config_to_json(c));
  const auto first = read_file(path);
  config_save(path, back);
  CHECK(read_file(path) == first);
  CHECK(back.adam.lr == c.adam.lr);

  write_text(path, "{not json");
  CHECK_THROWS_AS(config_load(path), IoError);
  CHECK_THROWS_AS(config_load("/nonexistent/cfg.json"), IoError);
}

TEST_CASE("manifest round trip") {
  RunManifest m;
  m.config = config_from_json(minimal());
  m.seed = 5;
  m.version = "pvxl 0.1.0";
  m.dataset_fingerprint = "0x01234567";
  m.history.push_back({1, -50.25, -45.5, 4.75, 0.1, 0.25, 12.5, 100.0, 3.5, 51.0});
  m.checkpoints = {"final.pvxl"};
  const auto j = manifest_to_json(m);
  const auto back = manifest_from_json(j);
  CHECK(manifest_to_json(back) == j);
  CHECK(back.history.at(0).kl == 4.75);
  auto bad = j;
  bad["extra"] = 1;
  CHECK_THROWS_AS(manifest_from_json(bad), ConfigError);
}
