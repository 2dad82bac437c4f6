#include "diffdet/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

#include "json.hpp"

namespace diffdet::ssl {

void SSLConfig::validate() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(objectness_min) || !in01(class_conf_min) || !in01(iou_est_min))
    throw std::invalid_argument("ssl: filter thresholds must lie in [0,1]");
  if (ddim_steps < 1) throw std::invalid_argument("ssl: ddim_steps must be >= 1");
  if (ema_decay < 0.0 || ema_decay > 1.0)
    throw std::invalid_argument("ssl: ema_decay must lie in [0,1]");
  if (size_scale <= 0.0 || label_scale <= 0.0)
    throw std::invalid_argument("ssl: signal scales must be positive");
  if (n_classes < 1 || max_t < 1) throw std::invalid_argument("ssl: bad n_classes/max_t");
}

diffusion::DiffusionState sample_noise_prior(int n_queries, int n_classes, double size_mean,
                                             Rng& rng, double size_scale, double label_scale) {
  diffusion::NoisePrior prior{size_mean, 1.0 / n_classes, size_scale, label_scale};
  diffusion::DiffusionState st = diffusion::sample_noise_prior_state(n_queries, n_classes,
                                                                     prior, rng);
  st.timestep = -1;  // caller stamps the schedule step
  return st;
}

Targets prepare_targets(const std::vector<BoundingBox3D>& gts, int n_queries,
                        const agent_queries::SceneBounds& bounds, int n_classes, Rng& rng,
                        const diffusion::NoisePrior& prior) {
  Targets t;
  t.sizes01 = Mat::Zero(n_queries, 3);
  t.labels01 = Mat::Zero(n_queries, n_classes);
  t.assignment.assign(n_queries, -1);

  if (gts.empty()) {
    diffusion::DiffusionState st =
        diffusion::sample_noise_prior_state(n_queries, n_classes, prior, rng);
    t.sizes01 = diffusion::signal_unscale(st.sizes_t, prior.size_scale);
    t.labels01 = diffusion::signal_unscale(st.labels_t, prior.label_scale);
    return t;
  }

  Eigen::Vector3d ext = (bounds.hi - bounds.lo).cwiseMax(1e-9);
  auto norm_size = [&](const BoundingBox3D& b) {
    Eigen::RowVector3d s;
    for (int k = 0; k < 3; ++k) s(k) = std::clamp(b.size(k) / ext(k), 0.0, 1.0);
    return s;
  };

  int k = static_cast<int>(gts.size());
  for (int slot = 0; slot < n_queries; ++slot) {
    int g;
    bool jitter;
    if (slot < k) {
      g = slot;  // identity prefix; extra GTs beyond N_Q are dropped
      jitter = false;
    } else {
      g = static_cast<int>(rng.integer(k));
      jitter = true;
    }
    Eigen::RowVector3d s = norm_size(gts[g]);
    if (jitter)
      for (int a = 0; a < 3; ++a)
        s(a) = std::clamp(s(a) * (1.0 + rng.uniform(-0.05, 0.05)), 0.0, 1.0);
    t.sizes01.row(slot) = s;
    t.labels01(slot, gts[g].label) = 1.0;
    t.assignment[slot] = g;
  }
  return t;
}

std::vector<int> match_noisy_to_queries(const Mat& centers, const Targets& targets,
                                        const std::vector<BoundingBox3D>& gts, MatchMode mode,
                                        Rng& rng) {
  int n = static_cast<int>(centers.rows());
  if (static_cast<int>(targets.assignment.size()) != n)
    throw std::invalid_argument("match: slot count must equal center count");

  std::vector<int> center_of_slot(n, -1);
  if (mode == MatchMode::kTeacher) {
    std::vector<int> perm = rng.permutation(n);
    for (int s = 0; s < n; ++s) center_of_slot[s] = perm[s];
    return center_of_slot;
  }

  // Student: globally greedy by ascending GT-to-center distance.
  std::vector<std::tuple<double, int, int>> cand;  // (dist, slot, center)
  for (int s = 0; s < n; ++s) {
    int g = targets.assignment[s];
    if (g < 0) continue;
    for (int c = 0; c < n; ++c) {
      double d = (gts[g].center.transpose() - centers.row(c)).norm();
      cand.emplace_back(d, s, c);
    }
  }
  std::sort(cand.begin(), cand.end());
  std::vector<bool> center_used(n, false);
  for (const auto& [d, s, c] : cand) {
    (void)d;
    if (center_of_slot[s] >= 0 || center_used[c]) continue;
    center_of_slot[s] = c;
    center_used[c] = true;
  }
  // Unassigned slots draw randomly from the remaining centers.
  std::vector<int> remaining;
  for (int c = 0; c < n; ++c)
    if (!center_used[c]) remaining.push_back(c);
  std::vector<int> order = rng.permutation(static_cast<int>(remaining.size()));
  int next = 0;
  for (int s = 0; s < n; ++s)
    if (center_of_slot[s] < 0) center_of_slot[s] = remaining[order[next++]];
  return center_of_slot;
}

std::vector<bool> filter_keep_mask(const std::vector<ScoredBox>& preds, const SSLConfig& cfg) {
  std::vector<bool> keep(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    keep[i] = preds[i].objectness >= cfg.objectness_min &&
              preds[i].class_conf >= cfg.class_conf_min && preds[i].iou_est >= cfg.iou_est_min;
  return keep;
}

namespace {

std::vector<ScoredBox> nms_classwise(const std::vector<ScoredBox>& preds, double iou_thresh) {
  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < static_cast<int>(preds.size()); ++i)
    by_class[preds[i].box.label].push_back(i);
  std::vector<int> kept_all;
  for (auto& [cls, idxs] : by_class) {
    std::vector<BoundingBox3D> boxes;
    Eigen::VectorXd scores(idxs.size());
    for (std::size_t j = 0; j < idxs.size(); ++j) {
      boxes.push_back(preds[idxs[j]].box);
      scores(static_cast<Eigen::Index>(j)) = preds[idxs[j]].score;
    }
    for (int j : pointops::nms(boxes, scores, iou_thresh)) kept_all.push_back(idxs[j]);
  }
  std::sort(kept_all.begin(), kept_all.end());
  std::vector<ScoredBox> out;
  out.reserve(kept_all.size());
  for (int i : kept_all) out.push_back(preds[i]);
  return out;
}

}  // namespace

PseudoLabelSet filter_pseudo_labels(const std::vector<ScoredBox>& preds, const SSLConfig& cfg) {
  std::vector<bool> keep = filter_keep_mask(preds, cfg);
  std::vector<ScoredBox> passed;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (keep[i]) passed.push_back(preds[i]);
  PseudoLabelSet pls;
  pls.boxes = nms_classwise(passed, cfg.nms_iou);
  return pls;
}

void ema_update(ad::ParamStore& teacher, const ad::ParamStore& student, double decay) {
  if (!teacher.same_structure(student))
    throw std::invalid_argument("ema_update: parameter structures differ");
  for (std::size_t i = 0; i < teacher.size(); ++i)
    teacher[i].value = student[i].value + decay * (teacher[i].value - student[i].value);
}

TeacherInferResult teacher_infer(const Mat& points, ad::ParamStore& teacher,
                                 const std::string& prefix, const DetectorConfig& det_cfg,
                                 const SSLConfig& cfg, const diffusion::DiffusionSchedule& sched,
                                 Rng& rng, int ddim_steps_override) {
  cfg.validate();
  const int nq = det_cfg.n_queries;
  const diffusion::NoisePrior prior = cfg.noise_prior();
  int steps = ddim_steps_override > 0 ? ddim_steps_override : cfg.ddim_steps;

  ad::Tape tape(/*grad_enabled=*/false);
  detector::SceneForward sf = detector::scene_forward(tape, teacher, prefix, det_cfg, points);

  diffusion::DiffusionState state =
      diffusion::sample_noise_prior_state(nq, cfg.n_classes, prior, rng);
  auto pairs = diffusion::ddim_time_pairs(steps, cfg.max_t);
  state.timestep = pairs.front().first;

  decoder::DetectorOutput last{};
  int decode_passes = 0;
  for (const auto& [t_cur, t_next] : pairs) {
    // Random (re-)match of diffusion rows onto (query, center) slots.
    std::vector<int> center_of_slot = rng.permutation(nq);
    diffusion::DiffusionState state_q = state;
    for (int s = 0; s < nq; ++s) {
      state_q.sizes_t.row(center_of_slot[s]) = state.sizes_t.row(s);
      state_q.labels_t.row(center_of_slot[s]) = state.labels_t.row(s);
    }
    decoder::NoisyBoxes noisy = detector::decode_noisy_boxes(
        state_q, sf.centers, sf.bounds, cfg.size_scale, cfg.label_scale);
    decoder::DetectorOutputVars outv = decoder::decode_forward(
        tape, teacher, prefix + ".dec", det_cfg.decoder, sf.queries, sf.enc.final_feats,
        sf.enc.final_coords, noisy, t_cur, cfg.max_t, sf.bounds);
    last = decoder::snapshot(outv);
    ++decode_passes;

    diffusion::DiffusionState z0_q = detector::encode_prediction(
        last, t_cur, sf.bounds, cfg.size_scale, cfg.label_scale);
    Mat z0_sizes(nq, 3), z0_labels(nq, cfg.n_classes);
    Eigen::VectorXd obj_slot(nq);
    for (int s = 0; s < nq; ++s) {
      z0_sizes.row(s) = z0_q.sizes_t.row(center_of_slot[s]);
      z0_labels.row(s) = z0_q.labels_t.row(center_of_slot[s]);
      obj_slot(s) = last.objectness(center_of_slot[s]);
    }
    state.sizes_t = diffusion::ddim_step(state.sizes_t, z0_sizes, t_cur, t_next, sched,
                                         cfg.ddim_eta, cfg.size_scale, &rng);
    state.labels_t = diffusion::ddim_step(state.labels_t, z0_labels, t_cur, t_next, sched,
                                          cfg.ddim_eta, cfg.label_scale, &rng);
    state.timestep = std::max(t_next, 0);
    state = diffusion::box_renewal(state, obj_slot, cfg.renewal_threshold, prior, rng);
  }

  TeacherInferResult res;
  res.raw = detector::to_scored_boxes(last);
  res.pls = filter_pseudo_labels(res.raw, cfg);
  res.decode_passes = decode_passes;
  return res;
}

namespace {

// Detection loss term weights (relative scale of meters / nats / logits).
constexpr double kWCenter = 1.0;
constexpr double kWSize = 1.0;
constexpr double kWCls = 1.0;
constexpr double kWObj = 1.0;
constexpr double kWIou = 0.5;
constexpr double kHuberDelta = 1.0;
constexpr double kIouMatchThresh = 0.25;

/// Differentiable axis-aligned IoU of each predicted box against a constant
/// target box per row.
ad::Var iou_rows(ad::Tape& tape, ad::Var center, ad::Var size, const Mat& gt_lo,
                 const Mat& gt_hi, const Mat& gt_vol) {
  ad::Var half = ad::scale(size, 0.5);
  ad::Var lo = ad::sub(center, half);
  ad::Var hi = ad::add(center, half);
  ad::Var ilo = ad::cwise_max_const(lo, gt_lo);
  ad::Var ihi = ad::cwise_min_const(hi, gt_hi);
  ad::Var w = ad::relu(ad::sub(ihi, ilo));
  ad::Var inter = ad::cwise_mul(ad::cwise_mul(ad::slice_cols(w, 0, 1), ad::slice_cols(w, 1, 1)),
                                ad::slice_cols(w, 2, 1));
  ad::Var vol = ad::cwise_mul(
      ad::cwise_mul(ad::slice_cols(size, 0, 1), ad::slice_cols(size, 1, 1)),
      ad::slice_cols(size, 2, 1));
  ad::Var uni = ad::sub(ad::add(vol, ad::constant(tape, gt_vol)), inter);
  return ad::cwise_div(inter, uni);
}

}  // namespace

SceneLossResult student_scene_loss(ad::Tape& tape, ad::ParamStore& student,
                                   const std::string& prefix, const DetectorConfig& det_cfg,
                                   const SSLConfig& cfg,
                                   const diffusion::DiffusionSchedule& sched,
                                   const TrainScene& scene, Rng& rng) {
  const int nq = det_cfg.n_queries;
  const int ncls = cfg.n_classes;
  const diffusion::NoisePrior prior = cfg.noise_prior();

  detector::SceneForward sf =
      detector::scene_forward(tape, student, prefix, det_cfg, scene.points);

  Targets targets = prepare_targets(scene.boxes, nq, sf.bounds, ncls, rng, prior);
  Mat sizes_scaled = diffusion::signal_scale(targets.sizes01, cfg.size_scale);
  Mat labels_scaled = diffusion::signal_scale(targets.labels01, cfg.label_scale);

  int t = static_cast<int>(rng.integer(cfg.max_t));
  Mat eps_s(nq, 3), eps_l(nq, ncls);
  for (Eigen::Index i = 0; i < eps_s.rows(); ++i)
    for (Eigen::Index j = 0; j < eps_s.cols(); ++j) eps_s(i, j) = rng.normal();
  for (Eigen::Index i = 0; i < eps_l.rows(); ++i)
    for (Eigen::Index j = 0; j < eps_l.cols(); ++j) eps_l(i, j) = rng.normal();
  Mat sizes_crpt = diffusion::corrupt(sizes_scaled, t, eps_s, sched, cfg.size_scale);
  Mat labels_crpt = diffusion::corrupt(labels_scaled, t, eps_l, sched, cfg.label_scale);

  std::vector<int> center_of_slot =
      match_noisy_to_queries(sf.centers, targets, scene.boxes, MatchMode::kStudent, rng);
  std::vector<int> slot_of_center(nq);
  for (int s = 0; s < nq; ++s) slot_of_center[center_of_slot[s]] = s;

  diffusion::DiffusionState state_q;
  state_q.timestep = t;
  state_q.sizes_t.resize(nq, 3);
  state_q.labels_t.resize(nq, ncls);
  for (int q = 0; q < nq; ++q) {
    state_q.sizes_t.row(q) = sizes_crpt.row(slot_of_center[q]);
    state_q.labels_t.row(q) = labels_crpt.row(slot_of_center[q]);
  }
  decoder::NoisyBoxes noisy = detector::decode_noisy_boxes(state_q, sf.centers, sf.bounds,
                                                           cfg.size_scale, cfg.label_scale);
  decoder::DetectorOutputVars out = decoder::decode_forward(
      tape, student, prefix + ".dec", det_cfg.decoder, sf.queries, sf.enc.final_feats,
      sf.enc.final_coords, noisy, t, cfg.max_t, sf.bounds);

  // Per-query supervision pulled from the slot landing on that query.
  // Regression and classification are restricted to slots whose GT lies
  // within the bounded center-offset reach of their noisy center; queries
  // matched to a GT they cannot reach would otherwise drag every head
  // toward the dataset marginal.
  const double max_reach = det_cfg.decoder.center_offset_frac * sf.bounds.diagonal();
  Mat ctr_target = Mat::Zero(nq, 3), size_target = Mat::Zero(nq, 3);
  Mat cls_onehot = Mat::Zero(nq, ncls);
  Mat gt_lo = Mat::Zero(nq, 3), gt_hi = Mat::Zero(nq, 3), gt_vol = Mat::Zero(nq, 1);
  Eigen::VectorXd assigned_w = Eigen::VectorXd::Zero(nq);
  int n_assigned = 0;
  for (int q = 0; q < nq; ++q) {
    int g = targets.assignment[slot_of_center[q]];
    if (g < 0) continue;
    const BoundingBox3D& box = scene.boxes[g];
    double reach = std::min(0.5 * box.size.norm() + 0.5, max_reach);
    if ((box.center.transpose() - sf.centers.row(q)).norm() > reach) continue;
    ctr_target.row(q) = box.center.transpose();
    size_target.row(q) = box.size.transpose();
    cls_onehot(q, box.label) = 1.0;
    gt_lo.row(q) = (box.center - box.size / 2.0).transpose();
    gt_hi.row(q) = (box.center + box.size / 2.0).transpose();
    gt_vol(q, 0) = box.size.prod();
    assigned_w(q) = 1.0;
    ++n_assigned;
  }
  double inv_n = n_assigned > 0 ? 1.0 / n_assigned : 0.0;
  assigned_w *= inv_n;
  Mat w3 = assigned_w.replicate(1, 3);
  ad::Var l_center = ad::huber_sum(out.center, ctr_target, kHuberDelta, w3);
  ad::Var l_size = ad::huber_sum(out.size, size_target, kHuberDelta, w3);
  ad::Var l_cls = ad::softmax_xent_sum(out.cls_logits, cls_onehot, assigned_w);

  // Objectness targets: assigned and currently overlapping (IoU >= 0.25).
  decoder::DetectorOutput snap = decoder::snapshot(out);
  Mat obj_target = Mat::Zero(nq, 1);
  for (int q = 0; q < nq; ++q) {
    int g = targets.assignment[slot_of_center[q]];
    if (g < 0 || assigned_w(q) == 0.0) continue;
    BoundingBox3D pred;
    pred.center = snap.center.row(q).transpose();
    pred.size = snap.size.row(q).transpose();
    if (pointops::aabb_iou(pred, scene.boxes[g]) >= kIouMatchThresh) obj_target(q, 0) = 1.0;
  }
  Mat obj_w = Mat::Constant(nq, 1, 1.0 / nq);
  ad::Var l_obj = ad::bce_logits_sum(out.obj_logit, obj_target, obj_w);

  Mat w1 = assigned_w;
  ad::Var iou_actual = iou_rows(tape, out.center, out.size, gt_lo, gt_hi, gt_vol);
  ad::Var iou_diff = ad::sub(out.iou_est, iou_actual);
  ad::Var l_iou = ad::huber_sum(iou_diff, Mat::Zero(nq, 1), kHuberDelta, w1);

  ad::Var total = ad::add(
      ad::add(ad::add(ad::scale(l_center, kWCenter), ad::scale(l_size, kWSize)),
              ad::add(ad::scale(l_cls, kWCls), ad::scale(l_obj, kWObj))),
      ad::scale(l_iou, kWIou));

  SceneLossResult res;
  res.loss = total;
  res.parts.center = ad::scalar(l_center);
  res.parts.size = ad::scalar(l_size);
  res.parts.cls = ad::scalar(l_cls);
  res.parts.objectness = ad::scalar(l_obj);
  res.parts.iou = ad::scalar(l_iou);
  res.parts.total = ad::scalar(total);
  return res;
}

StepResult student_step(const std::vector<TrainScene>& labeled,
                        const std::vector<TrainScene>& unlabeled, double lambda_eff,
                        ad::ParamStore& student, const std::string& prefix,
                        const DetectorConfig& det_cfg, const SSLConfig& cfg,
                        const diffusion::DiffusionSchedule& sched, const ad::AdamConfig& adam,
                        long long adam_step_index, Rng& rng) {
  if (labeled.empty()) throw std::invalid_argument("student_step: labeled batch is empty");
  StepResult r;
  const double wl = 1.0 / static_cast<double>(labeled.size());
  for (const TrainScene& sc : labeled) {
    ad::Tape tape;
    SceneLossResult slr = student_scene_loss(tape, student, prefix, det_cfg, cfg, sched, sc, rng);
    tape.backward(slr.loss.node(), wl);
    r.loss_l += wl * slr.parts.total;
  }
  if (!unlabeled.empty()) {
    const double wu = 1.0 / static_cast<double>(unlabeled.size());
    for (const TrainScene& sc : unlabeled) {
      ad::Tape tape;
      SceneLossResult slr =
          student_scene_loss(tape, student, prefix, det_cfg, cfg, sched, sc, rng);
      if (lambda_eff != 0.0) tape.backward(slr.loss.node(), lambda_eff * wu);
      r.loss_u += wu * slr.parts.total;
    }
  }
  r.loss = r.loss_l + lambda_eff * r.loss_u;
  ad::adam_step(student, adam, adam_step_index);
  return r;
}

std::vector<evalkit::DetectionSet> evaluate_scenes(const std::vector<synth::Scene>& scenes,
                                                   ad::ParamStore& params,
                                                   const std::string& prefix,
                                                   const DetectorConfig& det_cfg,
                                                   const SSLConfig& cfg,
                                                   const diffusion::DiffusionSchedule& sched,
                                                   std::uint64_t seed, int ddim_steps) {
  std::vector<evalkit::DetectionSet> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    Rng rng(derive_seed(seed, "eval_scene", i));
    TeacherInferResult ti = teacher_infer(scenes[i].cloud.points, params, prefix, det_cfg, cfg,
                                          sched, rng, ddim_steps);
    evalkit::DetectionSet ds;
    ds.preds = nms_classwise(ti.raw, cfg.nms_iou);
    ds.gts = scenes[i].gts;
    out.push_back(std::move(ds));
  }
  return out;
}

std::string MetricsRecord::to_json() const {
  nlohmann::json j;
  j["iter"] = iter;
  j["loss_l"] = loss_l;
  j["loss_u"] = loss_u;
  j["n_pseudo"] = n_pseudo;
  j["pseudo_precision"] = pseudo_precision;
  j["map25"] = map25 ? nlohmann::json(*map25) : nlohmann::json(nullptr);
  j["map50"] = map50 ? nlohmann::json(*map50) : nlohmann::json(nullptr);
  return j.dump();
}

TrainResult train(const DatasetSplits& data, const DetectorConfig& det_cfg, const SSLConfig& cfg,
                  const TrainConfig& tcfg,
                  const std::function<void(const MetricsRecord&)>& on_record) {
  cfg.validate();
  det_cfg.validate();
  if (data.labeled.empty()) throw std::invalid_argument("train: labeled split is empty");

  diffusion::DiffusionSchedule sched = diffusion::make_schedule(cfg.max_t, cfg.schedule);
  TrainResult res;
  res.student = detector::make_param_store(det_cfg, derive_seed(tcfg.seed, "init", 0));
  res.teacher = res.student.clone();

  const int n_l = static_cast<int>(data.labeled.size());
  const int n_u = static_cast<int>(data.unlabeled.size());
  const long long iters = static_cast<long long>(tcfg.epochs) * n_l;
  const bool ssl_active = cfg.lambda_u > 0.0 && n_u > 0;
  const long long warmup_end = ssl_active ? static_cast<long long>(cfg.warmup_frac * iters) : iters;
  const long long ramp_len = std::max<long long>(1, static_cast<long long>(cfg.ramp_frac * iters));

  std::vector<int> order;
  for (long long it = 0; it < iters; ++it) {
    long long epoch = it / n_l;
    if (it % n_l == 0)
      order = Rng(derive_seed(tcfg.seed, "order", static_cast<std::uint64_t>(epoch)))
                  .permutation(n_l);
    const synth::Scene& lsc = data.labeled[order[it % n_l]];

    double lambda_eff = 0.0;
    if (ssl_active && it >= warmup_end) {
      double ramp = std::min(1.0, static_cast<double>(it - warmup_end + 1) / ramp_len);
      lambda_eff = cfg.lambda_u * ramp;
    }

    std::vector<TrainScene> labeled_batch, unlabeled_batch;
    {
      synth::Scene aug = synth::augment(lsc, synth::AugmentStrength::kStrong,
                                        derive_seed(tcfg.seed, "aug_l", it));
      labeled_batch.push_back({aug.cloud.points, aug.gts});
    }

    MetricsRecord rec;
    rec.iter = it;
    if (lambda_eff > 0.0) {
      int ui = static_cast<int>(Rng(derive_seed(tcfg.seed, "u_pick", it)).integer(n_u));
      const synth::Scene& usc = data.unlabeled[ui];
      Rng wrng(derive_seed(tcfg.seed, "aug_w", it));
      synth::SceneTransform weak = synth::sample_transform(synth::AugmentStrength::kWeak, wrng);
      synth::Scene weak_scene = synth::apply_transform(usc, weak);

      Rng trng(derive_seed(tcfg.seed, "teacher", it));
      TeacherInferResult ti = teacher_infer(weak_scene.cloud.points, res.teacher, "det",
                                            det_cfg, cfg, sched, trng);
      rec.n_pseudo = static_cast<int>(ti.pls.boxes.size());
      {
        evalkit::DetectionSet ds;
        ds.preds = ti.pls.boxes;
        ds.gts = weak_scene.gts;
        rec.pseudo_precision = evalkit::pseudo_label_precision_recall({ds}).first;
      }
      if (!ti.pls.boxes.empty()) {
        Rng srng(derive_seed(tcfg.seed, "aug_u", it));
        synth::SceneTransform strong =
            synth::sample_transform(synth::AugmentStrength::kStrong, srng);
        synth::Scene strong_scene = synth::apply_transform(weak_scene, strong);
        std::vector<BoundingBox3D> pls_boxes;
        pls_boxes.reserve(ti.pls.boxes.size());
        for (const ScoredBox& sb : ti.pls.boxes) pls_boxes.push_back(strong.apply(sb.box));
        unlabeled_batch.push_back({strong_scene.cloud.points, std::move(pls_boxes)});
      }
    }

    Rng step_rng(derive_seed(tcfg.seed, "step", it));
    StepResult sr = student_step(labeled_batch, unlabeled_batch, lambda_eff, res.student, "det",
                                 det_cfg, cfg, sched, tcfg.adam, it + 1, step_rng);
    ema_update(res.teacher, res.student, cfg.ema_decay);

    rec.loss_l = sr.loss_l;
    rec.loss_u = sr.loss_u;
    bool eval_now = (tcfg.eval_every > 0 && (it + 1) % tcfg.eval_every == 0) || it + 1 == iters;
    if (eval_now && !data.val.empty()) {
      auto sets = evaluate_scenes(data.val, res.teacher, "det", det_cfg, cfg, sched,
                                  derive_seed(tcfg.seed, "eval", it));
      evalkit::EvalResult er = evalkit::mean_ap(sets, cfg.n_classes);
      rec.map25 = er.map25;
      rec.map50 = er.map50;
    }
    res.log.push_back(rec);
    if (on_record) on_record(rec);
  }
  return res;
}

}  // namespace diffdet::ssl
