#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "diffdet/detector.hpp"
#include "diffdet/runconfig.hpp"

using namespace diffdet;
using diffdet::config::RunConfig;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  REQUIRE(is);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(DIFFDET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

/// Small-everything config so CLI runs finish in seconds.
std::string tiny_config_json() {
  return R"({
    "seed": 11,
    "dataset": {"n_scenes": 6, "n_val_scenes": 2, "labeled_ratio": 0.5,
                "points_per_scene": 96, "objects_min": 2, "objects_max": 3},
    "model": {"feat_dim": 16, "n_queries": 8, "agent_grid": [2,2,1],
              "decoder_layers": 1, "n_heads": 2, "ffn_hidden": 24,
              "box_mlp_hidden": 8, "rpe_hidden": 6, "pos_hidden": 8,
              "backbone_levels": [
                {"centroids": 24, "radius": 0.9, "max_neighbors": 6, "widths": [8, 16]},
                {"centroids": 12, "radius": 1.8, "max_neighbors": 6, "widths": [16, 16]}]},
    "diffusion": {"max_t": 50},
    "ssl": {"warmup_frac": 0.25, "ema_decay": 0.9},
    "train": {"epochs": 2, "eval_every": 0}
  })";
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("diffdet_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("run config: canonical round-trip and stable hashing") {
  RunConfig def;
  RunConfig back = RunConfig::from_json_text(def.to_json_text());
  CHECK(back.to_json_text() == def.to_json_text());
  CHECK(back.hash() == def.hash());

  RunConfig other = def;
  other.seed = 999;
  CHECK(other.hash() != def.hash());
  CHECK(def.hash().size() == 16);
}

TEST_CASE("run config rejects unknown keys at any level") {
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"sneaky": 1})"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"dataset": {"n_scene": 5}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"ssl": {"lambda": 0.5}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      RunConfig::from_json_text(R"({"model": {"backbone_levels": [{"radius": 1, "rad": 2}]}})"),
      std::invalid_argument);
}

TEST_CASE("run config converts into validated module configs") {
  RunConfig cfg = RunConfig::from_json_text(tiny_config_json());
  CHECK(cfg.detector_config().n_queries == 8);
  cfg.detector_config().validate();
  cfg.ssl_config().validate();
  CHECK(cfg.scene_spec().n_classes() == 6);
  CHECK(cfg.ssl_config().max_t == 50);
}

TEST_CASE("checkpoints round-trip both parameter stores") {
  TempDir tmp("ckpt");
  detector::DetectorConfig det;
  det.backbone.levels = {{8, 1.0, 4, {8}}, {4, 2.0, 4, {8}}};
  det.backbone.feat_dim = 8;
  det.agents.resolution = {2, 2, 1};
  det.agents.feat_dim = 8;
  det.agents.pos_hidden = 4;
  det.decoder.n_layers = 1;
  det.decoder.n_heads = 2;
  det.decoder.feat_dim = 8;
  det.n_queries = 4;

  detector::Checkpoint ck;
  ck.config_hash = "deadbeefdeadbeef";
  ck.iteration = 42;
  ck.teacher = detector::make_param_store(det, 1);
  ck.student = detector::make_param_store(det, 2);
  std::string path = (tmp.path / "x.ckpt").string();
  detector::save_checkpoint(path, ck);
  detector::Checkpoint rd = detector::load_checkpoint(path);
  CHECK(rd.config_hash == ck.config_hash);
  CHECK(rd.iteration == 42);
  REQUIRE(rd.teacher.same_structure(ck.teacher));
  REQUIRE(rd.student.same_structure(ck.student));
  for (std::size_t i = 0; i < ck.teacher.size(); ++i)
    CHECK((rd.teacher[i].value - ck.teacher[i].value).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS(detector::load_checkpoint((tmp.path / "missing.ckpt").string()));
}

TEST_CASE("cli gen-data: deterministic manifest with the configured split") {
  TempDir tmp("gendata");
  fs::path cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << tiny_config_json();

  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + (tmp.path / "d1").string()) ==
          0);
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + (tmp.path / "d2").string()) ==
          0);
  std::string m1 = slurp(tmp.path / "d1" / "manifest.json");
  std::string m2 = slurp(tmp.path / "d2" / "manifest.json");
  CHECK(m1 == m2);

  nlohmann::json m = nlohmann::json::parse(m1);
  CHECK(m.at("labeled").size() == 3);
  CHECK(m.at("unlabeled").size() == 3);
  CHECK(m.at("val").size() == 2);
  CHECK(m.at("config_hash").get<std::string>().size() == 16);
  // every listed scene file exists
  for (const char* key : {"labeled", "unlabeled", "val"})
    for (const auto& name : m.at(key))
      CHECK(fs::exists(tmp.path / "d1" / name.get<std::string>()));
  // scene files themselves are byte-identical across reruns
  CHECK(slurp(tmp.path / "d1" / "scene_00000.txt") == slurp(tmp.path / "d2" / "scene_00000.txt"));
}

TEST_CASE("cli train/eval/plot pipeline with deterministic replays") {
  TempDir tmp("pipeline");
  fs::path cfg = tmp.path / "cfg.json";
  std::ofstream(cfg) << tiny_config_json();
  std::string data = (tmp.path / "data").string();
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + data) == 0);

  std::string r1 = (tmp.path / "run1").string(), r2 = (tmp.path / "run2").string();
  REQUIRE(run_cli("train --config " + cfg.string() + " --data " + data + " --out " + r1) == 0);
  REQUIRE(run_cli("train --config " + cfg.string() + " --data " + data + " --out " + r2) == 0);
  CHECK(slurp(fs::path(r1) / "metrics.jsonl") == slurp(fs::path(r2) / "metrics.jsonl"));

  // metrics log: header record carries the config hash, rows carry the schema
  {
    std::ifstream is(fs::path(r1) / "metrics.jsonl");
    std::string line;
    REQUIRE(std::getline(is, line));
    nlohmann::json header = nlohmann::json::parse(line);
    CHECK(header.at("type") == "header");
    CHECK(header.at("config_hash").get<std::string>().size() == 16);
    int rows = 0;
    while (std::getline(is, line)) {
      nlohmann::json rec = nlohmann::json::parse(line);
      for (const char* k :
           {"iter", "loss_l", "loss_u", "n_pseudo", "pseudo_precision", "map25", "map50"})
        CHECK(rec.contains(k));
      ++rows;
    }
    CHECK(rows == 6);  // 2 epochs x 3 labeled scenes
  }

  // supervised-only flag is pure sugar for lambda_u = 0
  std::string rs1 = (tmp.path / "sup_flag").string(), rs2 = (tmp.path / "sup_cfg").string();
  REQUIRE(run_cli("train --config " + cfg.string() + " --data " + data + " --out " + rs1 +
                  " --supervised-only") == 0);
  fs::path cfg0 = tmp.path / "cfg_lambda0.json";
  {
    nlohmann::json j = nlohmann::json::parse(tiny_config_json());
    j["ssl"]["lambda_u"] = 0.0;
    std::ofstream(cfg0) << j.dump();
  }
  REQUIRE(run_cli("train --config " + cfg0.string() + " --data " + data + " --out " + rs2) == 0);
  auto strip_header = [](const std::string& s) { return s.substr(s.find('\n') + 1); };
  CHECK(strip_header(slurp(fs::path(rs1) / "metrics.jsonl")) ==
        strip_header(slurp(fs::path(rs2) / "metrics.jsonl")));

  // eval: one row per DDIM step count, schema fields present
  std::string ev = (tmp.path / "eval").string();
  REQUIRE(run_cli("eval --config " + cfg.string() + " --checkpoint " + r1 +
                  "/checkpoint.ckpt --data " + data + " --out " + ev +
                  " --ddim-steps-sweep 1 --ddim-steps-sweep 2 --plot") == 0);
  {
    std::ifstream is(fs::path(ev) / "eval.jsonl");
    std::string line;
    int rows = 0;
    while (std::getline(is, line)) {
      nlohmann::json rec = nlohmann::json::parse(line);
      CHECK(rec.contains("map25"));
      CHECK(rec.contains("map50"));
      CHECK(rec.contains("ddim_steps"));
      CHECK(rec.contains("config_hash"));
      if (!rec.at("map25").is_null() && !rec.at("map50").is_null())
        CHECK(rec.at("map50").get<double>() <= rec.at("map25").get<double>() + 1e-12);
      ++rows;
    }
    CHECK(rows == 2);
    CHECK(fs::exists(fs::path(ev) / "pr_curves_ddim1.svg"));
  }

  REQUIRE(run_cli("plot --metrics " + r1 + "/metrics.jsonl --out " + (tmp.path / "plots").string()) ==
          0);
  CHECK(fs::exists(tmp.path / "plots" / "training_losses.svg"));
  CHECK(fs::exists(tmp.path / "plots" / "detection_map.svg"));
  CHECK(fs::exists(tmp.path / "plots" / "pseudo_quality.svg"));

  // bad config: nonzero exit
  fs::path bad = tmp.path / "bad.json";
  std::ofstream(bad) << R"({"nope": true})";
  CHECK(run_cli("gen-data --config " + bad.string() + " --out " + (tmp.path / "x").string()) !=
        0);
  // missing dataset: nonzero exit
  CHECK(run_cli("train --config " + cfg.string() + " --data " + (tmp.path / "absent").string() +
                " --out " + (tmp.path / "y").string()) != 0);
}
