// diffdet: synthetic-scene diffusion detector, end to end.
//   gen-data  write a deterministic dataset + split manifest
//   train     supervised or mean-teacher SSL training
//   eval      run inference from a checkpoint, report mAP
//   plot      render SVG charts from a metrics log

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "diffdet/detector.hpp"
#include "diffdet/evalkit.hpp"
#include "diffdet/runconfig.hpp"
#include "diffdet/ssl.hpp"
#include "diffdet/svgplot.hpp"
#include "diffdet/synthdata.hpp"

namespace fs = std::filesystem;
using diffdet::config::RunConfig;
using nlohmann::json;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> labeled_ratio;
  std::optional<int> ddim_steps;
  std::optional<int> decoder_layers;
  std::optional<std::string> grid_res;
  bool supervised_only = false;
};

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.labeled_ratio) cfg.labeled_ratio = *o.labeled_ratio;
  if (o.ddim_steps) cfg.ddim_steps = *o.ddim_steps;
  if (o.decoder_layers) cfg.decoder_layers = *o.decoder_layers;
  if (o.grid_res) {
    int l = 0, w = 0, h = 0;
    char x1 = 0, x2 = 0;
    std::istringstream ss(*o.grid_res);
    ss >> l >> x1 >> w >> x2 >> h;
    if (!ss || (x1 != 'x' && x1 != 'X') || (x2 != 'x' && x2 != 'X') || l < 1 || w < 1 || h < 1)
      throw std::invalid_argument("--grid-res expects LxWxH, e.g. 16x16x4");
    cfg.agent_grid = {l, w, h};
  }
  if (o.supervised_only) cfg.lambda_u = 0.0;  // sugar for a lambda=0 run
}

std::string scene_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05d.txt", index);
  return buf;
}

struct Dataset {
  diffdet::ssl::DatasetSplits splits;
  std::string config_hash;
};

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw std::runtime_error("no manifest.json under " + dir);
  json m = json::parse(is);
  Dataset d;
  d.config_hash = m.at("config_hash").get<std::string>();
  auto load_list = [&](const char* key, std::vector<diffdet::synth::Scene>& out) {
    for (const auto& name : m.at(key)) {
      out.push_back(diffdet::synth::load_scene((fs::path(dir) / name.get<std::string>()).string()));
    }
  };
  load_list("labeled", d.splits.labeled);
  load_list("unlabeled", d.splits.unlabeled);
  load_list("val", d.splits.val);
  return d;
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  diffdet::synth::SceneSpec spec = cfg.scene_spec();
  diffdet::synth::SplitResult split =
      diffdet::synth::split(cfg.n_scenes, cfg.labeled_ratio, cfg.seed);

  json manifest;
  manifest["config_hash"] = cfg.hash();
  manifest["n_scenes"] = cfg.n_scenes;
  manifest["n_val_scenes"] = cfg.n_val_scenes;
  json labeled = json::array(), unlabeled = json::array(), val = json::array();
  for (int i = 0; i < cfg.n_scenes; ++i) {
    diffdet::synth::Scene sc =
        diffdet::synth::generate_scene(spec, diffdet::derive_seed(cfg.seed, "train_scene", i));
    std::string name = scene_filename(i);
    diffdet::synth::save_scene((fs::path(out_dir) / name).string(), sc);
    bool is_labeled = std::find(split.labeled.begin(), split.labeled.end(), i) !=
                      split.labeled.end();
    (is_labeled ? labeled : unlabeled).push_back(name);
  }
  for (int i = 0; i < cfg.n_val_scenes; ++i) {
    diffdet::synth::Scene sc = diffdet::synth::generate_scene(
        spec, diffdet::derive_seed(cfg.seed, "val_scene", i));
    std::string name = scene_filename(cfg.n_scenes + i);
    diffdet::synth::save_scene((fs::path(out_dir) / name).string(), sc);
    val.push_back(name);
  }
  manifest["labeled"] = labeled;
  manifest["unlabeled"] = unlabeled;
  manifest["val"] = val;
  std::ofstream os(fs::path(out_dir) / "manifest.json");
  os << manifest.dump(2) << "\n";
  std::cout << "wrote " << cfg.n_scenes + cfg.n_val_scenes << " scenes to " << out_dir << " ("
            << labeled.size() << " labeled / " << unlabeled.size() << " unlabeled / "
            << val.size() << " val)\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  Dataset data = load_dataset(data_dir);
  fs::create_directories(out_dir);

  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");
  json header;
  header["type"] = "header";
  header["config_hash"] = cfg.hash();
  metrics << header.dump() << "\n";

  auto det_cfg = cfg.detector_config();
  auto ssl_cfg = cfg.ssl_config();
  auto train_cfg = cfg.train_config();
  diffdet::ssl::TrainResult result = diffdet::ssl::train(
      data.splits, det_cfg, ssl_cfg, train_cfg, [&](const diffdet::ssl::MetricsRecord& r) {
        metrics << r.to_json() << "\n";
        metrics.flush();
      });

  diffdet::detector::Checkpoint ckpt;
  ckpt.config_hash = cfg.hash();
  ckpt.iteration = static_cast<long long>(result.log.size());
  ckpt.teacher = result.teacher.clone();
  ckpt.student = result.student.clone();
  diffdet::detector::save_checkpoint((fs::path(out_dir) / "checkpoint.ckpt").string(), ckpt);

  std::ofstream cfg_out(fs::path(out_dir) / "config.json");
  cfg_out << cfg.to_json_text() << "\n";
  if (!result.log.empty() && result.log.back().map25)
    std::cout << "final map25=" << *result.log.back().map25
              << " map50=" << result.log.back().map50.value_or(0.0) << "\n";
  std::cout << "wrote " << out_dir << "/checkpoint.ckpt and metrics.jsonl\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg_base, const std::string& ckpt_path,
             const std::string& data_dir, std::vector<int> ddim_sweep,
             const std::string& out_dir, bool use_student, bool plots) {
  Dataset data = load_dataset(data_dir);
  diffdet::detector::Checkpoint ckpt = diffdet::detector::load_checkpoint(ckpt_path);
  RunConfig cfg = cfg_base;
  if (ckpt.config_hash != cfg.hash())
    std::cerr << "warning: checkpoint config hash " << ckpt.config_hash
              << " differs from current config " << cfg.hash() << "; proceeding\n";
  fs::create_directories(out_dir);

  auto det_cfg = cfg.detector_config();
  auto ssl_cfg = cfg.ssl_config();
  auto sched = diffdet::diffusion::make_schedule(ssl_cfg.max_t, ssl_cfg.schedule);
  diffdet::ad::ParamStore& params = use_student ? ckpt.student : ckpt.teacher;

  if (ddim_sweep.empty()) ddim_sweep.push_back(ssl_cfg.ddim_steps);
  std::ofstream os(fs::path(out_dir) / "eval.jsonl");
  for (int steps : ddim_sweep) {
    auto sets = diffdet::ssl::evaluate_scenes(data.splits.val, params, "det", det_cfg, ssl_cfg,
                                              sched, cfg.seed, steps);
    diffdet::evalkit::EvalResult er = diffdet::evalkit::mean_ap(sets, ssl_cfg.n_classes);

    // Pseudo-label quality on the same scenes: filtered teacher predictions.
    std::vector<diffdet::evalkit::DetectionSet> pseudo_sets;
    for (std::size_t i = 0; i < data.splits.val.size(); ++i) {
      diffdet::Rng rng(diffdet::derive_seed(cfg.seed, "eval_pseudo", i));
      auto ti = diffdet::ssl::teacher_infer(data.splits.val[i].cloud.points, params, "det",
                                            det_cfg, ssl_cfg, sched, rng, steps);
      pseudo_sets.push_back({ti.pls.boxes, data.splits.val[i].gts});
    }
    auto [pp, pr] = diffdet::evalkit::pseudo_label_precision_recall(pseudo_sets);
    er.pseudo_precision = pp;
    er.pseudo_recall = pr;

    json row = json::parse(er.to_json(cfg.hash()));
    row["ddim_steps"] = steps;
    os << row.dump() << "\n";
    std::cout << "ddim_steps=" << steps << " map25=" << er.map25.value_or(0.0)
              << " map50=" << er.map50.value_or(0.0) << "\n";

    if (plots) {
      std::vector<diffdet::svgplot::Series> series;
      static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c",
                                     "#d62728", "#9467bd", "#8c564b"};
      for (int c = 0; c < ssl_cfg.n_classes; ++c) {
        // one PR point set per class at IoU 0.25 using score-threshold sweep
        diffdet::svgplot::Series s;
        s.label = "class " + std::to_string(c);
        s.color = colors[c % 6];
        for (double thr = 0.0; thr <= 1.0001; thr += 0.02) {
          int tp = 0, fp = 0, n_gt = 0;
          for (const auto& ds : sets) {
            std::vector<bool> used(ds.gts.size(), false);
            for (const auto& g : ds.gts)
              if (g.label == c) ++n_gt;
            for (const auto& p : ds.preds) {
              if (p.box.label != c || p.score < thr) continue;
              int best = -1;
              double best_iou = 0.25;
              for (int g = 0; g < static_cast<int>(ds.gts.size()); ++g) {
                if (used[g] || ds.gts[g].label != c) continue;
                double iou = diffdet::pointops::aabb_iou(p.box, ds.gts[g]);
                if (iou >= best_iou) {
                  best_iou = iou;
                  best = g;
                }
              }
              if (best >= 0) {
                used[best] = true;
                ++tp;
              } else {
                ++fp;
              }
            }
          }
          if (tp + fp == 0 || n_gt == 0) continue;
          s.x.push_back(static_cast<double>(tp) / n_gt);
          s.y.push_back(static_cast<double>(tp) / (tp + fp));
        }
        series.push_back(std::move(s));
      }
      diffdet::svgplot::write_line_chart(
          (fs::path(out_dir) / ("pr_curves_ddim" + std::to_string(steps) + ".svg")).string(),
          "precision-recall @ IoU 0.25", "recall", "precision", series,
          "config_hash " + cfg.hash());
    }
  }
  std::cout << "wrote " << out_dir << "/eval.jsonl\n";
  return 0;
}

int cmd_plot(const std::string& metrics_path, const std::string& out_dir) {
  std::ifstream is(metrics_path);
  if (!is) throw std::runtime_error("cannot open metrics log: " + metrics_path);
  fs::create_directories(out_dir);
  std::string line, hash = "unknown";
  diffdet::svgplot::Series loss_l{"loss_l", "#1f77b4", {}, {}}, loss_u{"loss_u", "#ff7f0e", {}, {}};
  diffdet::svgplot::Series map25{"map25", "#2ca02c", {}, {}}, map50{"map50", "#d62728", {}, {}};
  diffdet::svgplot::Series npseudo{"n_pseudo", "#9467bd", {}, {}},
      pprec{"pseudo_precision", "#8c564b", {}, {}};
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.contains("type") && j["type"] == "header") {
      hash = j.value("config_hash", "unknown");
      continue;
    }
    double it = j.at("iter").get<double>();
    loss_l.x.push_back(it);
    loss_l.y.push_back(j.at("loss_l").get<double>());
    loss_u.x.push_back(it);
    loss_u.y.push_back(j.at("loss_u").get<double>());
    npseudo.x.push_back(it);
    npseudo.y.push_back(j.at("n_pseudo").get<double>());
    pprec.x.push_back(it);
    pprec.y.push_back(j.at("pseudo_precision").get<double>());
    if (!j.at("map25").is_null()) {
      map25.x.push_back(it);
      map25.y.push_back(j.at("map25").get<double>());
      map50.x.push_back(it);
      map50.y.push_back(j.at("map50").get<double>());
    }
  }
  diffdet::svgplot::write_line_chart((fs::path(out_dir) / "training_losses.svg").string(),
                                     "training losses", "iteration", "loss", {loss_l, loss_u},
                                     "config_hash " + hash);
  diffdet::svgplot::write_line_chart((fs::path(out_dir) / "detection_map.svg").string(),
                                     "held-out detection quality", "iteration", "mAP",
                                     {map25, map50}, "config_hash " + hash);
  diffdet::svgplot::write_line_chart((fs::path(out_dir) / "pseudo_quality.svg").string(),
                                     "pseudo-label quality", "iteration", "value",
                                     {npseudo, pprec}, "config_hash " + hash);
  std::cout << "wrote 3 charts to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion-based 3D detector on synthetic scenes"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", data_dir = "data", ckpt_path, metrics_path;
  Overrides ov;
  std::vector<int> ddim_sweep;
  bool use_student = false, plots = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", ov.seed, "override config seed");
    sub->add_option("--labeled-ratio", ov.labeled_ratio, "override labeled data fraction");
    sub->add_option("--ddim-steps", ov.ddim_steps, "override DDIM step count");
    sub->add_option("--decoder-layers", ov.decoder_layers, "override decoder block count");
    sub->add_option("--grid-res", ov.grid_res, "agent grid as LxWxH");
    sub->add_flag("--supervised-only", ov.supervised_only, "force lambda_u = 0");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a dataset + split manifest");
  add_common(gen);
  gen->add_option("--out", out_dir, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "train (SSL or supervised-only)");
  add_common(train);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "output directory")->required();
  eval->add_option("--ddim-steps-sweep", ddim_sweep, "evaluate at several DDIM step counts");
  eval->add_flag("--student", use_student, "evaluate the student weights (default: teacher)");
  eval->add_flag("--plot", plots, "emit precision-recall SVG charts");

  CLI::App* plot = app.add_subcommand("plot", "charts from a metrics log");
  plot->add_option("--metrics", metrics_path, "metrics.jsonl from train")->required();
  plot->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
    apply_overrides(cfg, ov);
    if (ov.ddim_steps) cfg.ddim_steps = *ov.ddim_steps;
    if (gen->parsed()) return cmd_gen_data(cfg, out_dir);
    if (train->parsed()) return cmd_train(cfg, data_dir, out_dir);
    if (eval->parsed())
      return cmd_eval(cfg, ckpt_path, data_dir, ddim_sweep, out_dir, use_student, plots);
    if (plot->parsed()) return cmd_plot(metrics_path, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
