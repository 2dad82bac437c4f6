#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "diffdet/detector.hpp"
#include "diffdet/ssl.hpp"
#include "diffdet/synthdata.hpp"

namespace diffdet::config {

/// Whole-run configuration; serialized as a strict JSON document (unknown
/// keys are rejected) whose canonical dump is hashed into every output file.
struct RunConfig {
  std::uint64_t seed = 1;

  // dataset
  int n_scenes = 100;
  int n_val_scenes = 20;
  double labeled_ratio = 1.0;
  std::array<double, 3> room{6.0, 6.0, 3.0};
  int objects_min = 3;
  int objects_max = 8;
  int points_per_scene = 2048;
  double clutter_fraction = 0.05;
  double floor_fraction = 0.20;
  double noise_std = 0.01;
  int n_classes = 6;

  // model
  int feat_dim = 128;
  int n_queries = 128;
  std::array<int, 3> agent_grid{16, 16, 4};
  int decoder_layers = 3;
  int n_heads = 4;
  int ffn_hidden = 256;
  int box_mlp_hidden = 64;
  int rpe_hidden = 16;
  int pos_hidden = 128;
  double agent_init_std = 0.02;
  double center_offset_frac = 0.3;
  double size_head_scale = 1.0;
  struct Level {
    int centroids = 512;
    double radius = 0.8;
    int max_neighbors = 32;
    std::vector<int> widths = {64, 128};
  };
  std::vector<Level> backbone_levels = {{512, 0.8, 32, {64, 128}},
                                        {256, 1.6, 32, {128, 128}}};
  std::uint64_t fps_seed = 1;
  std::uint64_t center_fps_seed = 99;

  // diffusion
  int max_t = 1000;
  std::string schedule = "cosine";
  double size_scale = 2.0;
  double label_scale = 2.0;

  // ssl
  double lambda_u = 1.0;
  double ema_decay = 0.999;
  int ddim_steps = 2;
  double ddim_eta = 0.0;
  double size_noise_mean = 0.25;
  double objectness_min = 0.9;
  double class_conf_min = 0.9;
  double iou_est_min = 0.25;
  double renewal_threshold = 0.5;
  double warmup_frac = 0.2;
  double ramp_frac = 0.1;
  double nms_iou = 0.25;

  // train
  int epochs = 20;
  double lr = 1e-3;
  double grad_clip = 5.0;
  int eval_every = 0;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string to_json_text() const;  // canonical (sorted keys, 2-space indent)
  std::string hash() const;          // 16 hex chars over the canonical dump

  synth::SceneSpec scene_spec() const;
  detector::DetectorConfig detector_config() const;
  ssl::SSLConfig ssl_config() const;
  ssl::TrainConfig train_config() const;
};

}  // namespace diffdet::config
