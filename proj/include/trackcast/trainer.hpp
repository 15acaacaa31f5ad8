#pragma once

#include "trackcast/model.hpp"

namespace trackcast {

struct TrainConfig {
  int slice_length = 5;  // k, frames per training slice
  int slice_stride = 0;  // 0 -> non-overlapping (= slice_length)
  int epochs = 40;
  double lr = 1e-3;
  double lr_decay_factor = 1.0;  // multiplies lr once, at lr_decay_epoch
  int lr_decay_epoch = -1;
  double beta1 = 0.9, beta2 = 0.999;
  double lambda = 1.0;        // tracking-loss weight
  double ss_midpoint = 7.0;   // scheduled-sampling sigmoid midpoint (epochs)
  double ss_steepness = 2.0;
  int val_every = 1;
  std::uint64_t seed = 0;
  ModelConfig model;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

// Sigmoid ramp of the per-track memory-read gate probability.
double scheduled_sampling_rate(int epoch, double midpoint, double steepness);

// lambda * L_track + L_pred; rejects non-finite components.
Tensor total_loss(const Tensor& l_track, const Tensor& l_pred, double lambda);

// Teacher-forced tracklet construction: identities follow the ground-truth
// association chain while poses keep the detector noise.
class TeacherState {
 public:
  explicit TeacherState(const ModelConfig& cfg) : cfg_(cfg) {}
  // Absorb a frame: sourced detections extend (or create) their agent's
  // track; missing agents get an invalid history row and, when coast poses
  // are given (model forecasts, as in streaming inference), advance along
  // them.
  void advance(const SceneFrame& frame,
               const std::vector<std::optional<Pose>>* coast_poses = nullptr);
  const std::vector<TrackletState>& tracklets() const { return tracks_; }
  std::vector<int> agent_ids() const;

 private:
  ModelConfig cfg_;
  std::vector<TrackletState> tracks_;
  std::map<int, std::size_t> index_of_;
};

// Ground-truth pose lookup for building agent-frame future targets.
struct SceneIndex {
  std::map<int, std::map<int, Pose>> agent_poses;  // agent -> frame -> pose
  static SceneIndex build(const std::vector<SceneFrame>& frames);
};

// Targets for `steps` frames starting at start_frame, expressed in each
// agent's reference pose; invalid where the agent is absent or id < 0.
TrajectoryTargets future_targets(const SceneIndex& index, const std::vector<int>& agent_ids,
                                 const std::vector<Pose>& ref_poses, int start_frame, int steps);

class Trainer {
 public:
  Trainer(JointModel& model, const TrainConfig& cfg);

  struct SliceResult {
    double total = 0.0, track = 0.0, pred = 0.0;
    bool skipped = false;
  };
  // One optimizer step over frames [start, start + slice_length) of a scene.
  SliceResult train_slice(const std::vector<SceneFrame>& frames, int start, int epoch);

  struct EpochRow {
    int epoch = 0;
    double track = 0.0, pred = 0.0;
    double val_minade = 0.0;
    bool has_val = false;
  };
  // Full loop: anchors, epochs over shuffled slices, periodic validation,
  // best/last checkpoints and a CSV log under out_dir.
  std::vector<EpochRow> run(const std::vector<std::vector<SceneFrame>>& train_scenes,
                            const std::vector<std::vector<SceneFrame>>& val_scenes,
                            const std::string& out_dir);

  const TrainConfig& config() const { return cfg_; }

 private:
  JointModel& model_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
};

}  // namespace trackcast
