#include "trackcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace trackcast {

namespace {

struct Candidate {
  double dist;
  int row;  // track index within the frame
  int gt;   // gt index within the frame
};

std::map<int, const SceneFrame*> frame_index(const std::vector<SceneFrame>& gt) {
  std::map<int, const SceneFrame*> out;
  for (const auto& f : gt) out[f.frame_index] = &f;
  return out;
}

}  // namespace

std::vector<FrameMatchResult> match_frames(const std::vector<FrameTracks>& tracks,
                                           const std::vector<SceneFrame>& gt, double threshold,
                                           double score_cutoff) {
  auto gt_by_frame = frame_index(gt);
  std::vector<FrameMatchResult> out;
  std::map<int, int> last_track_of_gt;  // gt agent -> last matched track id
  for (const auto& ft : tracks) {
    FrameMatchResult res;
    res.frame = ft.frame;
    auto it = gt_by_frame.find(ft.frame);
    const std::vector<GtPose> empty;
    const auto& gts = it != gt_by_frame.end() ? it->second->gt : empty;
    res.gt_count = static_cast<int>(gts.size());

    std::vector<const TrackRow*> rows;
    for (const auto& r : ft.rows)
      if (score_cutoff < 0.0 || r.score >= score_cutoff) rows.push_back(&r);

    std::vector<Candidate> cands;
    for (int i = 0; i < static_cast<int>(rows.size()); ++i)
      for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
        const double d = std::hypot(rows[static_cast<std::size_t>(i)]->x - gts[static_cast<std::size_t>(g)].x,
                                    rows[static_cast<std::size_t>(i)]->y - gts[static_cast<std::size_t>(g)].y);
        if (d <= threshold) cands.push_back({d, i, g});
      }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.dist != b.dist) return a.dist < b.dist;
      if (a.row != b.row) return a.row < b.row;
      return a.gt < b.gt;
    });
    std::vector<bool> row_used(rows.size(), false), gt_used(gts.size(), false);
    for (const auto& c : cands) {
      if (row_used[static_cast<std::size_t>(c.row)] || gt_used[static_cast<std::size_t>(c.gt)]) continue;
      row_used[static_cast<std::size_t>(c.row)] = true;
      gt_used[static_cast<std::size_t>(c.gt)] = true;
      const int track_id = rows[static_cast<std::size_t>(c.row)]->id;
      const int gt_id = gts[static_cast<std::size_t>(c.gt)].agent_id;
      res.matched.push_back({track_id, gt_id, c.dist});
      auto prev = last_track_of_gt.find(gt_id);
      if (prev != last_track_of_gt.end() && prev->second != track_id) ++res.id_switches;
      last_track_of_gt[gt_id] = track_id;
    }
    res.false_positives = static_cast<int>(rows.size()) - static_cast<int>(res.matched.size());
    res.misses = res.gt_count - static_cast<int>(res.matched.size());
    out.push_back(std::move(res));
  }
  return out;
}

double mota(const std::vector<FrameMatchResult>& results) {
  long long fp = 0, fn = 0, ids = 0, gt_total = 0;
  for (const auto& r : results) {
    fp += r.false_positives;
    fn += r.misses;
    ids += r.id_switches;
    gt_total += r.gt_count;
  }
  if (gt_total == 0) return 0.0;
  return 1.0 - static_cast<double>(fp + fn + ids) / static_cast<double>(gt_total);
}

SweepResult amota_amotp(const std::vector<const SceneEvalInput*>& scenes, int n_recalls) {
  SweepResult out;
  std::vector<double> scores;
  long long gt_total = 0;
  for (const auto* s : scenes) {
    for (const auto& ft : s->tracks)
      for (const auto& r : ft.rows) scores.push_back(r.score);
    for (const auto& f : s->gt) gt_total += static_cast<long long>(f.gt.size());
  }
  out.gt_total = static_cast<int>(gt_total);
  if (gt_total == 0 || scores.empty()) return out;
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  // Candidate cutoffs: evenly spaced quantiles of the observed scores, plus
  // keep-everything.
  std::vector<double> cutoffs = {0.0};
  const int max_cands = 64;
  for (int i = 0; i < max_cands; ++i) {
    const std::size_t idx = scores.size() * static_cast<std::size_t>(i) / max_cands;
    cutoffs.push_back(scores[std::min(idx, scores.size() - 1)]);
  }
  std::sort(cutoffs.begin(), cutoffs.end());
  cutoffs.erase(std::unique(cutoffs.begin(), cutoffs.end()), cutoffs.end());

  struct Point {
    double recall, mota, mean_dist;
    long long fp, ids, matched;
  };
  std::vector<Point> points;
  for (double cutoff : cutoffs) {
    long long fp = 0, ids = 0, matched = 0;
    double dist_sum = 0.0;
    std::vector<FrameMatchResult> all;
    for (const auto* s : scenes) {
      auto res = match_frames(s->tracks, s->gt, 2.0, cutoff);
      for (const auto& r : res) {
        fp += r.false_positives;
        ids += r.id_switches;
        matched += static_cast<long long>(r.matched.size());
        for (const auto& m : r.matched) dist_sum += m.dist;
        all.push_back(r);
      }
    }
    Point p;
    p.recall = static_cast<double>(matched) / static_cast<double>(gt_total);
    p.mota = mota(all);
    p.mean_dist = matched > 0 ? dist_sum / static_cast<double>(matched) : 0.0;
    p.fp = fp;
    p.ids = ids;
    p.matched = matched;
    points.push_back(p);
    if (p.mota > out.best_mota) {
      out.best_mota = p.mota;
      out.best_ids = static_cast<int>(ids);
      out.best_threshold = cutoff;
    }
  }

  double amota_sum = 0.0, amotp_sum = 0.0;
  int amotp_n = 0;
  for (int k = 0; k < n_recalls; ++k) {
    const double target = 0.1 + 0.9 * k / (n_recalls - 1);
    // Tightest operating point that still achieves the target recall.
    const Point* chosen = nullptr;
    for (const auto& p : points)
      if (p.recall >= target && (!chosen || p.recall < chosen->recall)) chosen = &p;
    if (!chosen) continue;  // unachieved recall contributes 0 to AMOTA
    const double r = chosen->recall;
    const double motar =
        std::max(0.0, 1.0 - static_cast<double>(chosen->fp + chosen->ids) / (r * gt_total));
    amota_sum += motar;
    amotp_sum += chosen->mean_dist;
    ++amotp_n;
  }
  out.amota = amota_sum / n_recalls;
  out.amotp = amotp_n > 0 ? amotp_sum / amotp_n : 0.0;
  return out;
}

PredictionMetrics min_ade_fde_mr(const std::vector<FramePrediction>& preds,
                                 const std::vector<FrameTracks>& tracks,
                                 const std::vector<SceneFrame>& gt, double match_threshold,
                                 double miss_threshold) {
  PredictionMetrics out;
  auto gt_by_frame = frame_index(gt);
  // agent -> frame -> position
  std::map<int, std::map<int, Vec2>> agent_pos;
  for (const auto& f : gt)
    for (const auto& g : f.gt) agent_pos[g.agent_id][f.frame_index] = {g.x, g.y};

  // Per frame: match current track positions to gt agents, then score
  // that frame's forecasts against the matched agent's future.
  auto matches = match_frames(tracks, gt, match_threshold);
  std::map<int, std::map<int, int>> agent_of_track;  // frame -> track id -> agent
  for (const auto& m : matches)
    for (const auto& p : m.matched) agent_of_track[m.frame][p.track_id] = p.gt_id;

  double ade_sum = 0.0, fde_sum = 0.0;
  int miss_count = 0;
  for (const auto& pred : preds) {
    auto fit = agent_of_track.find(pred.frame);
    if (fit == agent_of_track.end()) continue;
    auto ait = fit->second.find(pred.id);
    if (ait == fit->second.end()) continue;
    const auto& future = agent_pos[ait->second];
    const int horizon = pred.modes.empty() ? 0 : static_cast<int>(pred.modes[0].xy.size());
    double best_ade = 1e300, best_fde = 1e300;
    int last_valid = -1;
    for (int s = horizon - 1; s >= 0; --s)
      if (future.count(pred.frame + 1 + s)) {
        last_valid = s;
        break;
      }
    if (last_valid < 0) continue;  // no valid future ground truth
    for (const auto& mode : pred.modes) {
      double sum = 0.0;
      int n = 0;
      for (int s = 0; s <= last_valid; ++s) {
        auto g = future.find(pred.frame + 1 + s);
        if (g == future.end()) continue;
        sum += std::hypot(mode.xy[static_cast<std::size_t>(s)].x - g->second.x,
                          mode.xy[static_cast<std::size_t>(s)].y - g->second.y);
        ++n;
      }
      if (n == 0) continue;
      const auto& gend = future.at(pred.frame + 1 + last_valid);
      const double fde = std::hypot(mode.xy[static_cast<std::size_t>(last_valid)].x - gend.x,
                                    mode.xy[static_cast<std::size_t>(last_valid)].y - gend.y);
      best_ade = std::min(best_ade, sum / n);
      best_fde = std::min(best_fde, fde);
    }
    if (best_ade >= 1e300) continue;
    const bool missed = best_fde > miss_threshold;
    out.per_sample.push_back({pred.frame, pred.id, best_ade, best_fde, missed});
    ade_sum += best_ade;
    fde_sum += best_fde;
    if (missed) ++miss_count;
    ++out.samples;
  }
  if (out.samples > 0) {
    out.min_ade = ade_sum / out.samples;
    out.min_fde = fde_sum / out.samples;
    out.miss_rate = static_cast<double>(miss_count) / out.samples;
  }
  return out;
}

double temporal_consistency(const std::vector<FramePrediction>& preds, int* pairs_out,
                            bool step_aligned_overlap) {
  std::map<int, std::map<int, const FramePrediction*>> by_id;
  for (const auto& p : preds) by_id[p.id][p.frame] = &p;
  double sum = 0.0;
  int pairs = 0;
  for (const auto& [id, frames] : by_id) {
    for (const auto& [frame, cur] : frames) {
      auto next = frames.find(frame + 1);
      if (next == frames.end()) continue;
      auto top_mode = [](const FramePrediction& p) -> const PredMode* {
        const PredMode* best = nullptr;
        for (const auto& m : p.modes)
          if (!best || m.p > best->p) best = &m;
        return best;
      };
      const PredMode* a = top_mode(*cur);
      const PredMode* b = top_mode(*next->second);
      if (!a || !b) continue;
      const int t_f = static_cast<int>(a->xy.size());
      if (static_cast<int>(b->xy.size()) != t_f || t_f < 2) continue;
      double d = 0.0;
      int n = 0;
      if (step_aligned_overlap) {
        for (int s = 0; s < t_f; ++s) {
          d += std::hypot(a->xy[static_cast<std::size_t>(s)].x - b->xy[static_cast<std::size_t>(s)].x,
                          a->xy[static_cast<std::size_t>(s)].y - b->xy[static_cast<std::size_t>(s)].y);
          ++n;
        }
      } else {
        // Forecast at frame covers frame+1..frame+t_f; overlap in absolute
        // time is t_f - 1 steps.
        for (int s = 1; s < t_f; ++s) {
          d += std::hypot(a->xy[static_cast<std::size_t>(s)].x - b->xy[static_cast<std::size_t>(s - 1)].x,
                          a->xy[static_cast<std::size_t>(s)].y - b->xy[static_cast<std::size_t>(s - 1)].y);
          ++n;
        }
      }
      if (n == 0) continue;
      sum += d / n;
      ++pairs;
    }
  }
  if (pairs_out) *pairs_out = pairs;
  return pairs > 0 ? sum / pairs : 0.0;
}

std::vector<FramePrediction> constant_velocity_baseline(const std::vector<FrameTracks>& tracks,
                                                        int t_f, double dt) {
  (void)dt;  // velocity is per-frame displacement; dt cancels out
  std::map<int, std::map<int, Vec2>> pos_of;  // id -> frame -> position
  for (const auto& ft : tracks)
    for (const auto& r : ft.rows) pos_of[r.id][ft.frame] = {r.x, r.y};
  std::vector<FramePrediction> out;
  for (const auto& ft : tracks) {
    for (const auto& r : ft.rows) {
      const auto& hist = pos_of[r.id];
      auto prev = hist.find(ft.frame - 1);
      double vx = 0.0, vy = 0.0;
      if (prev != hist.end()) {
        vx = r.x - prev->second.x;
        vy = r.y - prev->second.y;
      }
      FramePrediction p;
      p.frame = ft.frame;
      p.id = r.id;
      PredMode mode;
      mode.p = 1.0;
      for (int s = 1; s <= t_f; ++s) mode.xy.push_back({r.x + vx * s, r.y + vy * s});
      p.modes.push_back(std::move(mode));
      out.push_back(std::move(p));
    }
  }
  return out;
}

namespace {

nlohmann::json metrics_block(const std::vector<const SceneEvalInput*>& scenes, int t_f,
                             double dt) {
  SweepResult sweep = amota_amotp(scenes);
  std::vector<FrameMatchResult> raw;
  PredictionMetrics pm, pm_cv;
  double tc_sum = 0.0;
  int tc_pairs = 0;
  for (const auto* s : scenes) {
    auto res = match_frames(s->tracks, s->gt);
    raw.insert(raw.end(), res.begin(), res.end());
    auto m = min_ade_fde_mr(s->preds, s->tracks, s->gt);
    auto cv = min_ade_fde_mr(constant_velocity_baseline(s->tracks, t_f, dt), s->tracks, s->gt);
    const double w = static_cast<double>(m.samples);
    pm.min_ade = pm.min_ade + m.min_ade * w;
    pm.min_fde += m.min_fde * w;
    pm.miss_rate += m.miss_rate * w;
    pm.samples += m.samples;
    const double wc = static_cast<double>(cv.samples);
    pm_cv.min_ade += cv.min_ade * wc;
    pm_cv.min_fde += cv.min_fde * wc;
    pm_cv.miss_rate += cv.miss_rate * wc;
    pm_cv.samples += cv.samples;
    int pairs = 0;
    const double tc = temporal_consistency(s->preds, &pairs);
    tc_sum += tc * pairs;
    tc_pairs += pairs;
  }
  auto fin = [](PredictionMetrics& m) {
    if (m.samples > 0) {
      m.min_ade /= m.samples;
      m.min_fde /= m.samples;
      m.miss_rate /= m.samples;
    }
  };
  fin(pm);
  fin(pm_cv);
  long long fp = 0, fn = 0, ids = 0, gt_total = 0;
  for (const auto& r : raw) {
    fp += r.false_positives;
    fn += r.misses;
    ids += r.id_switches;
    gt_total += r.gt_count;
  }
  return {{"amota", sweep.amota},
          {"amotp", sweep.amotp},
          {"mota", sweep.best_mota},
          {"ids", sweep.best_ids},
          {"mota_all_scores", mota(raw)},
          {"fp_all_scores", fp},
          {"fn_all_scores", fn},
          {"ids_all_scores", ids},
          {"gt_total", gt_total},
          {"minade", pm.min_ade},
          {"minfde", pm.min_fde},
          {"mr", pm.miss_rate},
          {"pred_samples", pm.samples},
          {"minade_cv", pm_cv.min_ade},
          {"minfde_cv", pm_cv.min_fde},
          {"mr_cv", pm_cv.miss_rate},
          {"tc", tc_pairs > 0 ? tc_sum / tc_pairs : 0.0},
          {"tc_pairs", tc_pairs}};
}

}  // namespace

nlohmann::json evaluate_scenes(const std::vector<SceneEvalInput>& scenes, int t_f, double dt) {
  std::vector<const SceneEvalInput*> all;
  for (const auto& s : scenes) all.push_back(&s);
  nlohmann::json report;
  report["format_version"] = 1;
  report["aggregate"] = metrics_block(all, t_f, dt);
  nlohmann::json per_scene = nlohmann::json::object();
  nlohmann::json frame_rows = nlohmann::json::array();
  for (const auto& s : scenes) {
    per_scene[s.name] = metrics_block({&s}, t_f, dt);
    auto res = match_frames(s.tracks, s.gt);
    auto pm = min_ade_fde_mr(s.preds, s.tracks, s.gt);
    std::map<int, std::pair<double, int>> ade_by_frame;
    for (const auto& smp : pm.per_sample) {
      ade_by_frame[smp.frame].first += smp.ade;
      ade_by_frame[smp.frame].second += 1;
    }
    for (const auto& r : res) {
      auto push = [&](const char* metric, double value) {
        frame_rows.push_back(
            {{"scene", s.name}, {"frame", r.frame}, {"metric", metric}, {"value", value}});
      };
      push("fp", r.false_positives);
      push("fn", r.misses);
      push("ids", r.id_switches);
      double dist_sum = 0.0;
      for (const auto& m : r.matched) dist_sum += m.dist;
      if (!r.matched.empty()) push("mean_match_dist", dist_sum / r.matched.size());
      auto it = ade_by_frame.find(r.frame);
      if (it != ade_by_frame.end()) push("minade", it->second.first / it->second.second);
    }
  }
  report["per_scene"] = std::move(per_scene);
  report["frames"] = std::move(frame_rows);
  return report;
}

}  // namespace trackcast
