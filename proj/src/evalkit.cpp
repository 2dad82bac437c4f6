#include "diffdet/evalkit.hpp"

#include <algorithm>
#include <sstream>

#include "json.hpp"

namespace diffdet::evalkit {

std::optional<double> average_precision(const std::vector<DetectionSet>& scenes, int class_id,
                                        double iou_thresh) {
  struct Entry {
    double score;
    int scene;
    int idx;
  };
  std::vector<Entry> entries;
  int n_gt = 0;
  for (int s = 0; s < static_cast<int>(scenes.size()); ++s) {
    for (int i = 0; i < static_cast<int>(scenes[s].preds.size()); ++i)
      if (scenes[s].preds[i].box.label == class_id)
        entries.push_back({scenes[s].preds[i].score, s, i});
    for (const auto& g : scenes[s].gts)
      if (g.label == class_id) ++n_gt;
  }
  if (n_gt == 0) return std::nullopt;

  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.scene != b.scene) return a.scene < b.scene;
    return a.idx < b.idx;
  });

  std::vector<std::vector<bool>> gt_used(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s)
    gt_used[s].assign(scenes[s].gts.size(), false);

  std::vector<int> tp_flags;
  tp_flags.reserve(entries.size());
  for (const Entry& e : entries) {
    const auto& gts = scenes[e.scene].gts;
    int best = -1;
    double best_iou = iou_thresh;
    for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
      if (gts[g].label != class_id || gt_used[e.scene][g]) continue;
      double iou = pointops::aabb_iou(scenes[e.scene].preds[e.idx].box, gts[g]);
      if (iou >= best_iou && (best == -1 || iou > best_iou)) {
        best_iou = iou;
        best = g;
      }
    }
    if (best >= 0) {
      gt_used[e.scene][best] = true;
      tp_flags.push_back(1);
    } else {
      tp_flags.push_back(0);
    }
  }

  // All-point interpolation: area under the right-enveloped PR curve.
  int tp = 0;
  std::vector<double> precision(tp_flags.size()), recall(tp_flags.size());
  for (std::size_t i = 0; i < tp_flags.size(); ++i) {
    tp += tp_flags[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / n_gt;
  }
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return ap;
}

EvalResult mean_ap(const std::vector<DetectionSet>& scenes, int n_classes) {
  EvalResult r;
  r.ap25.resize(n_classes);
  r.ap50.resize(n_classes);
  double s25 = 0.0, s50 = 0.0;
  int n = 0;
  for (int c = 0; c < n_classes; ++c) {
    r.ap25[c] = average_precision(scenes, c, 0.25);
    r.ap50[c] = average_precision(scenes, c, 0.50);
    if (r.ap25[c]) {
      s25 += *r.ap25[c];
      s50 += r.ap50[c].value_or(0.0);
      ++n;
    }
  }
  if (n > 0) {
    r.map25 = s25 / n;
    r.map50 = s50 / n;
  }
  return r;
}

std::pair<double, double> pseudo_label_precision_recall(const std::vector<DetectionSet>& scenes,
                                                        double iou_thresh) {
  int n_pred = 0, n_gt = 0, matched = 0;
  for (const auto& sc : scenes) {
    n_pred += static_cast<int>(sc.preds.size());
    n_gt += static_cast<int>(sc.gts.size());
    std::vector<bool> used(sc.gts.size(), false);
    // Highest-score pseudo boxes claim GTs first.
    std::vector<int> order(sc.preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return sc.preds[a].score > sc.preds[b].score;
    });
    for (int i : order) {
      int best = -1;
      double best_iou = iou_thresh;
      for (int g = 0; g < static_cast<int>(sc.gts.size()); ++g) {
        if (used[g] || sc.gts[g].label != sc.preds[i].box.label) continue;
        double iou = pointops::aabb_iou(sc.preds[i].box, sc.gts[g]);
        if (iou >= best_iou && (best == -1 || iou > best_iou)) {
          best_iou = iou;
          best = g;
        }
      }
      if (best >= 0) {
        used[best] = true;
        ++matched;
      }
    }
  }
  double precision = n_pred == 0 ? 1.0 : static_cast<double>(matched) / n_pred;
  double recall = n_gt == 0 ? 1.0 : static_cast<double>(matched) / n_gt;
  return {precision, recall};
}

std::string EvalResult::to_json(const std::string& config_hash) const {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  auto put = [](nlohmann::json& out, const std::optional<double>& v) {
    if (v)
      out = *v;
    else
      out = nullptr;
  };
  nlohmann::json a25 = nlohmann::json::array(), a50 = nlohmann::json::array();
  for (const auto& v : ap25) {
    nlohmann::json x;
    put(x, v);
    a25.push_back(x);
  }
  for (const auto& v : ap50) {
    nlohmann::json x;
    put(x, v);
    a50.push_back(x);
  }
  j["ap25"] = a25;
  j["ap50"] = a50;
  put(j["map25"], map25);
  put(j["map50"], map50);
  put(j["pseudo_precision"], pseudo_precision);
  put(j["pseudo_recall"], pseudo_recall);
  return j.dump();
}

}  // namespace diffdet::evalkit
