#pragma once

#include "trackcast/model.hpp"

namespace trackcast {

struct FrameMatchResult {
  int frame = 0;
  struct Pair {
    int track_id = 0;
    int gt_id = 0;
    double dist = 0.0;
  };
  std::vector<Pair> matched;
  int gt_count = 0;
  int false_positives = 0;
  int misses = 0;
  int id_switches = 0;
};

// Greedy nearest-center matching under the distance threshold, one frame at
// a time; an ID switch is counted when a ground-truth agent's matched track
// id changes between its consecutive matched frames. score_cutoff < 0 keeps
// every row.
std::vector<FrameMatchResult> match_frames(const std::vector<FrameTracks>& tracks,
                                           const std::vector<SceneFrame>& gt,
                                           double threshold = 2.0, double score_cutoff = -1.0);

// 1 - (FP + FN + IDS) / GT over the given results; GT comes from the
// results themselves. Returns 0 when there is no ground truth.
double mota(const std::vector<FrameMatchResult>& results);

struct SweepResult {
  double amota = 0.0;
  double amotp = 0.0;
  double best_mota = 0.0;  // MOTA at the best score cutoff
  int best_ids = 0;
  double best_threshold = 0.0;
  int gt_total = 0;
};
struct SceneEvalInput {
  std::string name;
  std::vector<FrameTracks> tracks;
  std::vector<FramePrediction> preds;
  std::vector<SceneFrame> gt;
};
// Recall-swept AMOTA/AMOTP over 40 recall targets (score-cutoff sweep),
// pooled across scenes.
SweepResult amota_amotp(const std::vector<const SceneEvalInput*>& scenes,
                        int n_recalls = 40);

struct PredictionSample {
  int frame = 0;
  int track_id = 0;
  double ade = 0.0;  // best-mode mean displacement over valid steps
  double fde = 0.0;  // best-mode displacement at the last valid step
  bool missed = false;
};
struct PredictionMetrics {
  double min_ade = 0.0, min_fde = 0.0, miss_rate = 0.0;
  int samples = 0;
  std::vector<PredictionSample> per_sample;
};
// Predicted agents are matched to ground truth by the 2 m current-frame
// rule using the track positions; agents without any valid future ground
// truth are excluded.
PredictionMetrics min_ade_fde_mr(const std::vector<FramePrediction>& preds,
                                 const std::vector<FrameTracks>& tracks,
                                 const std::vector<SceneFrame>& gt, double match_threshold = 2.0,
                                 double miss_threshold = 2.0);

// Mean displacement between consecutive frames' top-probability forecasts
// over their overlapping absolute timestamps (T_f - 1 steps). The
// step-aligned variant compares equal step indices over all T_f steps.
double temporal_consistency(const std::vector<FramePrediction>& preds, int* pairs_out = nullptr,
                            bool step_aligned_overlap = false);

// Single-mode extrapolation of each track's last displacement.
std::vector<FramePrediction> constant_velocity_baseline(const std::vector<FrameTracks>& tracks,
                                                        int t_f, double dt);

// Full report over a scene set: aggregate metrics, per-scene metrics, and
// plot-ready per-frame rows.
nlohmann::json evaluate_scenes(const std::vector<SceneEvalInput>& scenes, int t_f, double dt);

}  // namespace trackcast
