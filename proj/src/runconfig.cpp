#include "diffdet/runconfig.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace diffdet::config {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void get_arr3d(const json& j, const char* key, std::array<double, 3>& out) {
  if (!j.contains(key)) return;
  auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 3) throw std::invalid_argument(std::string("config: ") + key + " needs 3 values");
  out = {v[0], v[1], v[2]};
}

void get_arr3i(const json& j, const char* key, std::array<int, 3>& out) {
  if (!j.contains(key)) return;
  auto v = j.at(key).get<std::vector<int>>();
  if (v.size() != 3) throw std::invalid_argument(std::string("config: ") + key + " needs 3 values");
  out = {v[0], v[1], v[2]};
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  reject_unknown(j, {"seed", "dataset", "model", "diffusion", "ssl", "train"}, "root");
  RunConfig c;
  get(j, "seed", c.seed);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown(d,
                   {"n_scenes", "n_val_scenes", "labeled_ratio", "room", "objects_min",
                    "objects_max", "points_per_scene", "clutter_fraction", "floor_fraction",
                    "noise_std", "n_classes"},
                   "dataset");
    get(d, "n_scenes", c.n_scenes);
    get(d, "n_val_scenes", c.n_val_scenes);
    get(d, "labeled_ratio", c.labeled_ratio);
    get_arr3d(d, "room", c.room);
    get(d, "objects_min", c.objects_min);
    get(d, "objects_max", c.objects_max);
    get(d, "points_per_scene", c.points_per_scene);
    get(d, "clutter_fraction", c.clutter_fraction);
    get(d, "floor_fraction", c.floor_fraction);
    get(d, "noise_std", c.noise_std);
    get(d, "n_classes", c.n_classes);
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m,
                   {"feat_dim", "n_queries", "agent_grid", "decoder_layers", "n_heads",
                    "ffn_hidden", "box_mlp_hidden", "rpe_hidden", "pos_hidden",
                    "agent_init_std", "center_offset_frac", "size_head_scale",
                    "backbone_levels", "fps_seed", "center_fps_seed"},
                   "model");
    get(m, "feat_dim", c.feat_dim);
    get(m, "n_queries", c.n_queries);
    get_arr3i(m, "agent_grid", c.agent_grid);
    get(m, "decoder_layers", c.decoder_layers);
    get(m, "n_heads", c.n_heads);
    get(m, "ffn_hidden", c.ffn_hidden);
    get(m, "box_mlp_hidden", c.box_mlp_hidden);
    get(m, "rpe_hidden", c.rpe_hidden);
    get(m, "pos_hidden", c.pos_hidden);
    get(m, "agent_init_std", c.agent_init_std);
    get(m, "center_offset_frac", c.center_offset_frac);
    get(m, "size_head_scale", c.size_head_scale);
    get(m, "fps_seed", c.fps_seed);
    get(m, "center_fps_seed", c.center_fps_seed);
    if (m.contains("backbone_levels")) {
      c.backbone_levels.clear();
      for (const json& lv : m.at("backbone_levels")) {
        reject_unknown(lv, {"centroids", "radius", "max_neighbors", "widths"},
                       "model.backbone_levels[]");
        Level l;
        get(lv, "centroids", l.centroids);
        get(lv, "radius", l.radius);
        get(lv, "max_neighbors", l.max_neighbors);
        get(lv, "widths", l.widths);
        c.backbone_levels.push_back(l);
      }
    }
  }

  if (j.contains("diffusion")) {
    const json& d = j.at("diffusion");
    reject_unknown(d, {"max_t", "schedule", "size_scale", "label_scale"}, "diffusion");
    get(d, "max_t", c.max_t);
    get(d, "schedule", c.schedule);
    get(d, "size_scale", c.size_scale);
    get(d, "label_scale", c.label_scale);
  }

  if (j.contains("ssl")) {
    const json& s = j.at("ssl");
    reject_unknown(s,
                   {"lambda_u", "ema_decay", "ddim_steps", "ddim_eta", "size_noise_mean",
                    "objectness_min", "class_conf_min", "iou_est_min", "renewal_threshold",
                    "warmup_frac", "ramp_frac", "nms_iou"},
                   "ssl");
    get(s, "lambda_u", c.lambda_u);
    get(s, "ema_decay", c.ema_decay);
    get(s, "ddim_steps", c.ddim_steps);
    get(s, "ddim_eta", c.ddim_eta);
    get(s, "size_noise_mean", c.size_noise_mean);
    get(s, "objectness_min", c.objectness_min);
    get(s, "class_conf_min", c.class_conf_min);
    get(s, "iou_est_min", c.iou_est_min);
    get(s, "renewal_threshold", c.renewal_threshold);
    get(s, "warmup_frac", c.warmup_frac);
    get(s, "ramp_frac", c.ramp_frac);
    get(s, "nms_iou", c.nms_iou);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, {"epochs", "lr", "grad_clip", "eval_every"}, "train");
    get(t, "epochs", c.epochs);
    get(t, "lr", c.lr);
    get(t, "grad_clip", c.grad_clip);
    get(t, "eval_every", c.eval_every);
  }
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["dataset"] = {{"n_scenes", n_scenes},
                  {"n_val_scenes", n_val_scenes},
                  {"labeled_ratio", labeled_ratio},
                  {"room", {room[0], room[1], room[2]}},
                  {"objects_min", objects_min},
                  {"objects_max", objects_max},
                  {"points_per_scene", points_per_scene},
                  {"clutter_fraction", clutter_fraction},
                  {"floor_fraction", floor_fraction},
                  {"noise_std", noise_std},
                  {"n_classes", n_classes}};
  json levels = json::array();
  for (const Level& l : backbone_levels)
    levels.push_back({{"centroids", l.centroids},
                      {"radius", l.radius},
                      {"max_neighbors", l.max_neighbors},
                      {"widths", l.widths}});
  j["model"] = {{"feat_dim", feat_dim},
                {"n_queries", n_queries},
                {"agent_grid", {agent_grid[0], agent_grid[1], agent_grid[2]}},
                {"decoder_layers", decoder_layers},
                {"n_heads", n_heads},
                {"ffn_hidden", ffn_hidden},
                {"box_mlp_hidden", box_mlp_hidden},
                {"rpe_hidden", rpe_hidden},
                {"pos_hidden", pos_hidden},
                {"agent_init_std", agent_init_std},
                {"center_offset_frac", center_offset_frac},
                {"size_head_scale", size_head_scale},
                {"backbone_levels", levels},
                {"fps_seed", fps_seed},
                {"center_fps_seed", center_fps_seed}};
  j["diffusion"] = {{"max_t", max_t},
                    {"schedule", schedule},
                    {"size_scale", size_scale},
                    {"label_scale", label_scale}};
  j["ssl"] = {{"lambda_u", lambda_u},
              {"ema_decay", ema_decay},
              {"ddim_steps", ddim_steps},
              {"ddim_eta", ddim_eta},
              {"size_noise_mean", size_noise_mean},
              {"objectness_min", objectness_min},
              {"class_conf_min", class_conf_min},
              {"iou_est_min", iou_est_min},
              {"renewal_threshold", renewal_threshold},
              {"warmup_frac", warmup_frac},
              {"ramp_frac", ramp_frac},
              {"nms_iou", nms_iou}};
  j["train"] = {{"epochs", epochs}, {"lr", lr}, {"grad_clip", grad_clip},
                {"eval_every", eval_every}};
  return j.dump(2);
}

std::string RunConfig::hash() const {
  std::uint64_t h = fnv1a64(to_json_text());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

synth::SceneSpec RunConfig::scene_spec() const {
  synth::SceneSpec s;
  s.room = {room[0], room[1], room[2]};
  s.objects_min = objects_min;
  s.objects_max = objects_max;
  s.points_per_scene = points_per_scene;
  s.clutter_fraction = clutter_fraction;
  s.floor_fraction = floor_fraction;
  s.noise_std = noise_std;
  auto all = synth::default_classes();
  if (n_classes < 1 || n_classes > static_cast<int>(all.size()))
    throw std::invalid_argument("config: n_classes must be in [1, " +
                                std::to_string(all.size()) + "]");
  s.classes.assign(all.begin(), all.begin() + n_classes);
  return s;
}

detector::DetectorConfig RunConfig::detector_config() const {
  detector::DetectorConfig d;
  d.backbone.levels.clear();
  for (const Level& l : backbone_levels)
    d.backbone.levels.push_back({l.centroids, l.radius, l.max_neighbors, l.widths});
  d.backbone.feat_dim = feat_dim;
  d.backbone.fps_seed = fps_seed;
  d.agents.resolution = agent_grid;
  d.agents.feat_dim = feat_dim;
  d.agents.pos_hidden = pos_hidden;
  d.agents.init_std = agent_init_std;
  d.decoder.n_layers = decoder_layers;
  d.decoder.n_heads = n_heads;
  d.decoder.feat_dim = feat_dim;
  d.decoder.ffn_hidden = ffn_hidden;
  d.decoder.box_mlp_hidden = box_mlp_hidden;
  d.decoder.rpe_hidden = rpe_hidden;
  d.decoder.n_classes = n_classes;
  d.decoder.center_offset_frac = center_offset_frac;
  d.decoder.size_head_scale = size_head_scale;
  d.n_queries = n_queries;
  d.center_fps_seed = center_fps_seed;
  return d;
}

ssl::SSLConfig RunConfig::ssl_config() const {
  ssl::SSLConfig s;
  s.lambda_u = lambda_u;
  s.ema_decay = ema_decay;
  s.ddim_steps = ddim_steps;
  s.ddim_eta = ddim_eta;
  s.size_noise_mean = size_noise_mean;
  s.objectness_min = objectness_min;
  s.class_conf_min = class_conf_min;
  s.iou_est_min = iou_est_min;
  s.renewal_threshold = renewal_threshold;
  s.size_scale = size_scale;
  s.label_scale = label_scale;
  s.n_classes = n_classes;
  s.max_t = max_t;
  s.schedule = diffusion::schedule_kind_from_string(schedule);
  s.warmup_frac = warmup_frac;
  s.ramp_frac = ramp_frac;
  s.nms_iou = nms_iou;
  return s;
}

ssl::TrainConfig RunConfig::train_config() const {
  ssl::TrainConfig t;
  t.epochs = epochs;
  t.adam.lr = lr;
  t.adam.clip_norm = grad_clip;
  t.eval_every = eval_every;
  t.seed = seed;
  return t;
}

}  // namespace diffdet::config
