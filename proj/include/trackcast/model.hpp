#pragma once

#include <memory>

#include "trackcast/predictor.hpp"

namespace trackcast {

// Inference-time ablation switches; training always runs the full path.
struct RuntimeFlags {
  bool use_memory = true;
  bool use_stpe = true;
  bool use_dual_stream = true;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// The full joint tracking + prediction model: parameters, anchors, and the
// three stages.
class JointModel {
 public:
  JointModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Encoder& encoder() { return encoder_; }
  MotHead& mot() { return mot_; }
  Predictor& predictor() { return predictor_; }
  AnchorSet& anchors() { return anchors_; }
  const AnchorSet& anchors() const { return anchors_; }

  void save_checkpoint(const std::string& path) const;
  static std::unique_ptr<JointModel> load_checkpoint(const std::string& path);

  struct FrameForward {
    ContextFeatures ctx;
    TransportPlan plan;
    Tensor uncertainty;
    Association assoc;        // decoded from the plan
    GMMPrediction trk_pred;   // horizon T_f+1, tracklet frames
    GMMPrediction prop_pred;  // horizon T_f, detection frames
    std::vector<Pose> trk_poses, prop_poses;
  };

  // One frame of the pipeline. aux_assoc overrides the association used for
  // the dual-stream mapping (teacher forcing); memory_gates applies
  // scheduled sampling per tracklet.
  FrameForward forward_frame(const std::vector<TrackletState>& tracks,
                             const std::vector<Detection>& detections, const Pose& ego,
                             const MemoryBank& bank, const RuntimeFlags& flags,
                             const std::vector<std::uint8_t>* memory_gates = nullptr,
                             const Association* aux_assoc = nullptr) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
  Encoder encoder_;
  MotHead mot_;
  Predictor predictor_;
  AnchorSet anchors_;
};

// ---- Streaming inference ----

struct StreamState {
  std::vector<TrackletState> tracks;
  MemoryBank bank;
  std::int64_t next_track_id = 0;
};

struct TrackRow {
  int id = 0;
  double x = 0.0, y = 0.0, heading = 0.0, score = 0.0;
  bool coasted = false;
};
struct FrameTracks {
  int frame = 0;
  std::vector<TrackRow> rows;
};

struct PredMode {
  double p = 0.0;
  std::vector<Vec2> xy;  // T_f global positions
};
struct FramePrediction {
  int frame = 0;
  int id = 0;
  std::vector<PredMode> modes;
};

struct StepOutputs {
  FrameTracks tracks;
  std::vector<FramePrediction> predictions;
};

// Strictly-in-order streaming step: forward, decode, lifecycle, memory write.
StepOutputs stream_step(JointModel& model, StreamState& state, const SceneFrame& frame,
                        const RuntimeFlags& flags);

// Whole-scene streaming inference.
struct SceneRun {
  std::vector<FrameTracks> tracks;
  std::vector<FramePrediction> predictions;
};
SceneRun run_stream(JointModel& model, const std::vector<SceneFrame>& frames,
                    const RuntimeFlags& flags);

void write_tracks(const std::vector<FrameTracks>& tracks, const std::string& path);
std::vector<FrameTracks> read_tracks(const std::string& path);
void write_predictions(const std::vector<FramePrediction>& preds, const std::string& path);
std::vector<FramePrediction> read_predictions(const std::string& path);

}  // namespace trackcast
