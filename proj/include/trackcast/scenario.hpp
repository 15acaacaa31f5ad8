#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "trackcast/common.hpp"

namespace trackcast {

// Planar pose; yaw normalized to (-pi, pi].
struct Pose {
  double x = 0.0, y = 0.0, yaw = 0.0;
  bool operator==(const Pose&) const = default;
};

struct Vec2 {
  double x = 0.0, y = 0.0;
};

// Express a global point in the reference pose's frame.
inline Vec2 to_frame(const Pose& ref, double gx, double gy) {
  const double dx = gx - ref.x, dy = gy - ref.y;
  const double c = std::cos(ref.yaw), s = std::sin(ref.yaw);
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline Vec2 from_frame(const Pose& ref, double lx, double ly) {
  const double c = std::cos(ref.yaw), s = std::sin(ref.yaw);
  return {ref.x + c * lx - s * ly, ref.y + s * lx + c * ly};
}

enum class Presence : std::uint8_t { Present, Despawned };

struct AgentStep {
  double x = 0.0, y = 0.0, heading = 0.0;
};

struct AgentTrack {
  int agent_id = 0;
  int class_id = 0;
  double length = 4.5, width = 2.0, height = 1.6;
  std::vector<AgentStep> poses;      // one per frame
  std::vector<Presence> presence;    // one per frame
  bool present(int frame) const {
    return frame >= 0 && frame < static_cast<int>(presence.size()) &&
           presence[static_cast<std::size_t>(frame)] == Presence::Present;
  }
};

struct Detection {
  std::array<double, 3> pos{};   // z carried through I/O, 0 in synthesis
  std::array<double, 3> size{};  // l, w, h
  double heading = 0.0;
  int class_id = 0;
  double score = 0.0;
  std::optional<int> source_agent;
  bool operator==(const Detection&) const = default;
};

struct GtPose {
  int agent_id = 0;
  double x = 0.0, y = 0.0, heading = 0.0;
  bool operator==(const GtPose&) const = default;
};

struct SceneFrame {
  int frame_index = 0;
  double timestamp = 0.0;
  Pose ego;
  std::vector<Detection> detections;
  std::vector<GtPose> gt;
  bool operator==(const SceneFrame&) const = default;
};

struct OcclusionWindow {
  int agent_id = 0;
  int start = 0, end = 0;  // inclusive frame range
};

struct NoiseModel {
  double sigma_pos = 0.3;
  double sigma_heading = 0.05;
  double p_miss = 0.1;
  double fp_rate = 0.5;  // expected clutter detections per frame
  std::vector<OcclusionWindow> occlusions;
};

struct Scene {
  double dt = 0.5;
  std::vector<Pose> ego;  // one per frame
  std::vector<AgentTrack> agents;
  int n_frames() const { return static_cast<int>(ego.size()); }
};

struct ScenarioConfig {
  int n_scenes = 1;
  int frames = 40;
  double dt = 0.5;
  int agents_min = 3, agents_max = 6;
  // Motion-model mix; weights normalized internally.
  double w_cv = 0.4, w_ct = 0.4, w_lane = 0.2;
  double speed_min = 2.0, speed_max = 12.0;
  double turn_rate_min = 0.1, turn_rate_max = 0.4;
  double v_max = 20.0;     // displacement bound, m/s
  double omega_max = 0.5;  // heading-rate bound, rad/s
  double arena_half = 50.0;
  double p_partial = 0.4;       // probability of a mid-scene birth/death
  int min_alive_frames = 20;
  double min_separation = 0.0;  // rejection-sample when > 0
  double ego_speed = 8.0;
  double ego_turn_rate = 0.0;
  int n_classes = 3;
  NoiseModel noise;
  double p_occlusion = 0.0;  // per-agent chance of one occlusion window
  int occlusion_len_min = 2, occlusion_len_max = 4;
  std::uint64_t seed = 0;
};

ScenarioConfig scenario_config_from_json(const nlohmann::json& j);
ScenarioConfig load_scenario_config(const std::string& path);

Scene generate_scene(const ScenarioConfig& config, std::uint64_t seed);

// Occlusion windows sampled per config; part of scene synthesis.
NoiseModel sample_noise_model(const ScenarioConfig& config, const Scene& scene,
                              std::uint64_t seed);

std::vector<SceneFrame> render_detections(const Scene& scene, const NoiseModel& noise,
                                          std::uint64_t seed);

// Dustbin-augmented binary association target. Rows are tracklets, columns
// the current frame's detections; the last row collects newborn detections
// and the last column unmatched tracklets.
struct GtAssociation {
  int n_t = 0, n_p = 0;
  std::vector<std::uint8_t> a;  // (n_t+1) x (n_p+1), row-major
  int n_m = 0;                  // total assignments, dustbins included
  bool at(int i, int j) const { return a[static_cast<std::size_t>(i) * (n_p + 1) + j] != 0; }
};

GtAssociation gt_association(const SceneFrame& prev, const SceneFrame& cur);
// Rows given directly as source-agent ids (the trainer's teacher-forced
// tracklet list). Entries < 0 never match.
GtAssociation gt_association_for(const std::vector<int>& tracklet_agents, const SceneFrame& cur);

void write_scene(const std::vector<SceneFrame>& frames, const std::string& path);
std::vector<SceneFrame> read_scene(const std::string& path);

nlohmann::json frame_to_json(const SceneFrame& f);
SceneFrame frame_from_json(const nlohmann::json& j, int line_no);

}  // namespace trackcast
