#include "trackcast/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace trackcast {

namespace {

void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("unknown field '" + it.key() + "' in " + where);
  }
}

double beta_sample(std::mt19937_64& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng), y = gb(rng);
  return x / (x + y);
}

struct ClassSpec {
  double l, w, h;
  double speed_factor;
};

const ClassSpec kClassSpecs[] = {
    {4.5, 2.0, 1.6, 1.0},   // car-like
    {0.8, 0.8, 1.8, 0.15},  // pedestrian-like
    {1.8, 0.8, 1.6, 0.5},   // cyclist-like
};

ClassSpec class_spec(int class_id) {
  return kClassSpecs[class_id % 3];
}

}  // namespace

ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  reject_unknown_keys(j, {"n_scenes", "frames", "dt", "agents", "motion_mix", "speed",
                          "turn_rate", "v_max", "omega_max", "arena_half", "spawn",
                          "min_separation", "ego", "n_classes", "noise", "occlusion", "seed"},
                      "scenario config");
  c.n_scenes = j.value("n_scenes", c.n_scenes);
  c.frames = j.value("frames", c.frames);
  c.dt = j.value("dt", c.dt);
  if (j.contains("agents")) {
    const auto& a = j.at("agents");
    reject_unknown_keys(a, {"min", "max"}, "scenario config: agents");
    c.agents_min = a.value("min", c.agents_min);
    c.agents_max = a.value("max", c.agents_max);
  }
  if (j.contains("motion_mix")) {
    const auto& m = j.at("motion_mix");
    reject_unknown_keys(m, {"cv", "ct", "lane_change"}, "scenario config: motion_mix");
    c.w_cv = m.value("cv", c.w_cv);
    c.w_ct = m.value("ct", c.w_ct);
    c.w_lane = m.value("lane_change", c.w_lane);
  }
  if (j.contains("speed")) {
    c.speed_min = j.at("speed").value("min", c.speed_min);
    c.speed_max = j.at("speed").value("max", c.speed_max);
  }
  if (j.contains("turn_rate")) {
    c.turn_rate_min = j.at("turn_rate").value("min", c.turn_rate_min);
    c.turn_rate_max = j.at("turn_rate").value("max", c.turn_rate_max);
  }
  c.v_max = j.value("v_max", c.v_max);
  c.omega_max = j.value("omega_max", c.omega_max);
  c.arena_half = j.value("arena_half", c.arena_half);
  if (j.contains("spawn")) {
    const auto& s = j.at("spawn");
    reject_unknown_keys(s, {"p_partial", "min_alive_frames"}, "scenario config: spawn");
    c.p_partial = s.value("p_partial", c.p_partial);
    c.min_alive_frames = s.value("min_alive_frames", c.min_alive_frames);
  }
  c.min_separation = j.value("min_separation", c.min_separation);
  if (j.contains("ego")) {
    const auto& e = j.at("ego");
    reject_unknown_keys(e, {"speed", "turn_rate"}, "scenario config: ego");
    c.ego_speed = e.value("speed", c.ego_speed);
    c.ego_turn_rate = e.value("turn_rate", c.ego_turn_rate);
  }
  c.n_classes = j.value("n_classes", c.n_classes);
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    reject_unknown_keys(n, {"sigma_pos", "sigma_heading", "p_miss", "fp_rate"},
                        "scenario config: noise");
    c.noise.sigma_pos = n.value("sigma_pos", c.noise.sigma_pos);
    c.noise.sigma_heading = n.value("sigma_heading", c.noise.sigma_heading);
    c.noise.p_miss = n.value("p_miss", c.noise.p_miss);
    c.noise.fp_rate = n.value("fp_rate", c.noise.fp_rate);
  }
  if (j.contains("occlusion")) {
    const auto& o = j.at("occlusion");
    reject_unknown_keys(o, {"p_agent", "len_min", "len_max"}, "scenario config: occlusion");
    c.p_occlusion = o.value("p_agent", c.p_occlusion);
    c.occlusion_len_min = o.value("len_min", c.occlusion_len_min);
    c.occlusion_len_max = o.value("len_max", c.occlusion_len_max);
  }
  c.seed = j.value("seed", c.seed);

  if (c.frames <= 0) throw ConfigError("scenario config: frames must be positive");
  if (c.agents_min < 1 || c.agents_max < c.agents_min)
    throw ConfigError("scenario config: invalid agent count range");
  if (c.noise.p_miss < 0.0 || c.noise.p_miss >= 1.0)
    throw ConfigError("scenario config: p_miss must be in [0, 1)");
  if (c.noise.sigma_pos < 0.0 || c.noise.sigma_heading < 0.0)
    throw ConfigError("scenario config: noise sigmas must be non-negative");
  if (c.noise.fp_rate < 0.0) throw ConfigError("scenario config: fp_rate must be non-negative");
  if (c.speed_max > c.v_max) throw ConfigError("scenario config: speed_max exceeds v_max");
  if (c.turn_rate_max > c.omega_max)
    throw ConfigError("scenario config: turn_rate_max exceeds omega_max");
  if (c.n_classes < 1 || c.n_classes > 3)
    throw ConfigError("scenario config: n_classes must be 1..3");
  return c;
}

ScenarioConfig load_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return scenario_config_from_json(j);
}

namespace {

// One candidate trajectory over every frame; presence applied afterwards.
std::vector<AgentStep> sample_trajectory(const ScenarioConfig& c, std::mt19937_64& rng,
                                         int frames) {
  std::uniform_real_distribution<double> upos(-c.arena_half, c.arena_half);
  std::uniform_real_distribution<double> uang(-kPi, kPi);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  const double x0 = upos(rng), y0 = upos(rng);
  double h0 = uang(rng);
  if (h0 <= -kPi) h0 = kPi;

  const double wsum = c.w_cv + c.w_ct + c.w_lane;
  const double pick = u01(rng) * (wsum > 0 ? wsum : 1.0);
  std::uniform_real_distribution<double> uspeed(c.speed_min, c.speed_max);
  const double speed = std::max(0.3, uspeed(rng));
  const double dt = c.dt;

  std::vector<AgentStep> poses(static_cast<std::size_t>(frames));
  if (pick < c.w_cv) {  // constant velocity
    for (int f = 0; f < frames; ++f) {
      poses[static_cast<std::size_t>(f)] = {x0 + speed * std::cos(h0) * f * dt,
                                            y0 + speed * std::sin(h0) * f * dt, h0};
    }
  } else if (pick < c.w_cv + c.w_ct) {  // constant turn rate
    std::uniform_real_distribution<double> uturn(c.turn_rate_min, c.turn_rate_max);
    const double omega = (u01(rng) < 0.5 ? -1.0 : 1.0) * uturn(rng);
    const double r = speed / omega;
    for (int f = 0; f < frames; ++f) {
      const double h = h0 + omega * f * dt;
      poses[static_cast<std::size_t>(f)] = {x0 + r * (std::sin(h) - std::sin(h0)),
                                            y0 - r * (std::cos(h) - std::cos(h0)), wrap_angle(h)};
    }
  } else {  // smooth lane change: constant velocity plus a smoothstep lateral offset
    std::uniform_real_distribution<double> ushift(1.5, 3.0);
    const double shift = (u01(rng) < 0.5 ? -1.0 : 1.0) * ushift(rng);
    const int window = std::max(8, frames / 4);
    const int start = frames > window + 2
                          ? std::uniform_int_distribution<int>(0, frames - window - 1)(rng)
                          : 0;
    const double cs = std::cos(h0), sn = std::sin(h0);
    for (int f = 0; f < frames; ++f) {
      const double along = speed * f * dt;
      double tau = (static_cast<double>(f) - start) / window;
      tau = std::clamp(tau, 0.0, 1.0);
      const double lat = shift * tau * tau * (3.0 - 2.0 * tau);
      const double dlat = shift * 6.0 * tau * (1.0 - tau) / (window * dt);  // d lat / d time
      poses[static_cast<std::size_t>(f)] = {x0 + along * cs - lat * sn, y0 + along * sn + lat * cs,
                                            wrap_angle(h0 + std::atan2(dlat, speed))};
    }
  }
  return poses;
}

bool feasible(const std::vector<AgentStep>& poses, const ScenarioConfig& c) {
  for (std::size_t f = 1; f < poses.size(); ++f) {
    const double dx = poses[f].x - poses[f - 1].x, dy = poses[f].y - poses[f - 1].y;
    if (std::hypot(dx, dy) > c.v_max * c.dt + 1e-9) return false;
    if (std::abs(wrap_angle(poses[f].heading - poses[f - 1].heading)) > c.omega_max * c.dt + 1e-9)
      return false;
  }
  return true;
}

}  // namespace

Scene generate_scene(const ScenarioConfig& config, std::uint64_t seed) {
  if (config.frames <= 0) throw ConfigError("generate_scene: zero-duration scene");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  Scene scene;
  scene.dt = config.dt;
  scene.ego.resize(static_cast<std::size_t>(config.frames));
  for (int f = 0; f < config.frames; ++f) {
    const double h = config.ego_turn_rate * f * config.dt;
    if (std::abs(config.ego_turn_rate) > 1e-12) {
      const double r = config.ego_speed / config.ego_turn_rate;
      scene.ego[static_cast<std::size_t>(f)] = {r * std::sin(h), -r * (std::cos(h) - 1.0),
                                                wrap_angle(h)};
    } else {
      scene.ego[static_cast<std::size_t>(f)] = {config.ego_speed * f * config.dt, 0.0, 0.0};
    }
  }

  const int n_agents =
      std::uniform_int_distribution<int>(config.agents_min, config.agents_max)(rng);
  for (int i = 0; i < n_agents; ++i) {
    AgentTrack track;
    track.agent_id = i;
    track.class_id = std::uniform_int_distribution<int>(0, config.n_classes - 1)(rng);
    const ClassSpec spec = class_spec(track.class_id);
    std::normal_distribution<double> jitter(0.0, 0.05);
    track.length = spec.l * (1.0 + jitter(rng));
    track.width = spec.w * (1.0 + jitter(rng));
    track.height = spec.h * (1.0 + jitter(rng));

    // Speed range shrinks for small classes.
    ScenarioConfig local = config;
    local.speed_min = std::max(0.3, config.speed_min * spec.speed_factor);
    local.speed_max = std::max(local.speed_min, config.speed_max * spec.speed_factor);

    bool accepted = false;
    for (int attempt = 0; attempt < 200 && !accepted; ++attempt) {
      auto poses = sample_trajectory(local, rng, config.frames);
      if (!feasible(poses, config)) continue;
      if (config.min_separation > 0.0) {
        bool clash = false;
        for (const auto& other : scene.agents) {
          for (int f = 0; f < config.frames && !clash; ++f) {
            if (!other.present(f)) continue;
            const auto& a = poses[static_cast<std::size_t>(f)];
            const auto& b = other.poses[static_cast<std::size_t>(f)];
            if (std::hypot(a.x - b.x, a.y - b.y) < config.min_separation) clash = true;
          }
          if (clash) break;
        }
        if (clash) continue;
      }
      track.poses = std::move(poses);
      accepted = true;
    }
    if (!accepted)
      throw ConfigError("generate_scene: could not sample a feasible agent trajectory; "
                        "relax min_separation or bounds");

    // Spawn window: full-scene by default, sometimes a mid-scene birth/death.
    int spawn = 0, despawn = config.frames;
    if (u01(rng) < config.p_partial && config.frames > config.min_alive_frames + 2) {
      const int alive = std::uniform_int_distribution<int>(config.min_alive_frames,
                                                           config.frames - 1)(rng);
      spawn = std::uniform_int_distribution<int>(0, config.frames - alive)(rng);
      despawn = spawn + alive;
    }
    track.presence.assign(static_cast<std::size_t>(config.frames), Presence::Despawned);
    for (int f = spawn; f < despawn; ++f)
      track.presence[static_cast<std::size_t>(f)] = Presence::Present;
    scene.agents.push_back(std::move(track));
  }
  return scene;
}

NoiseModel sample_noise_model(const ScenarioConfig& config, const Scene& scene,
                              std::uint64_t seed) {
  NoiseModel noise = config.noise;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (config.p_occlusion <= 0.0) return noise;
  for (const auto& agent : scene.agents) {
    if (u01(rng) >= config.p_occlusion) continue;
    const int len = std::uniform_int_distribution<int>(config.occlusion_len_min,
                                                       config.occlusion_len_max)(rng);
    if (scene.n_frames() <= len + 2) continue;
    const int start = std::uniform_int_distribution<int>(1, scene.n_frames() - len - 1)(rng);
    noise.occlusions.push_back({agent.agent_id, start, start + len - 1});
  }
  return noise;
}

std::vector<SceneFrame> render_detections(const Scene& scene, const NoiseModel& noise,
                                          std::uint64_t seed) {
  if (scene.n_frames() == 0) throw ConfigError("render_detections: empty scene");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // Clutter bounding box from the ground truth, with margin.
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const auto& a : scene.agents)
    for (int f = 0; f < scene.n_frames(); ++f)
      if (a.present(f)) {
        lo_x = std::min(lo_x, a.poses[static_cast<std::size_t>(f)].x);
        hi_x = std::max(hi_x, a.poses[static_cast<std::size_t>(f)].x);
        lo_y = std::min(lo_y, a.poses[static_cast<std::size_t>(f)].y);
        hi_y = std::max(hi_y, a.poses[static_cast<std::size_t>(f)].y);
      }
  if (lo_x > hi_x) {  // no agents ever present
    lo_x = lo_y = -10.0;
    hi_x = hi_y = 10.0;
  }
  lo_x -= 10.0; hi_x += 10.0; lo_y -= 10.0; hi_y += 10.0;

  auto occluded = [&](int agent_id, int frame) {
    for (const auto& w : noise.occlusions)
      if (w.agent_id == agent_id && frame >= w.start && frame <= w.end) return true;
    return false;
  };

  std::vector<SceneFrame> frames(static_cast<std::size_t>(scene.n_frames()));
  for (int f = 0; f < scene.n_frames(); ++f) {
    SceneFrame& out = frames[static_cast<std::size_t>(f)];
    out.frame_index = f;
    out.timestamp = f * scene.dt;
    out.ego = scene.ego[static_cast<std::size_t>(f)];
    for (const auto& a : scene.agents) {
      if (!a.present(f)) continue;
      const auto& p = a.poses[static_cast<std::size_t>(f)];
      out.gt.push_back({a.agent_id, p.x, p.y, p.heading});
      if (occluded(a.agent_id, f)) continue;
      if (u01(rng) < noise.p_miss) continue;
      Detection d;
      d.pos = {p.x + noise.sigma_pos * gauss(rng), p.y + noise.sigma_pos * gauss(rng), 0.0};
      d.heading = wrap_angle(p.heading + noise.sigma_heading * gauss(rng));
      d.size = {a.length, a.width, a.height};
      d.class_id = a.class_id;
      d.score = beta_sample(rng, 8.0, 2.0);
      d.source_agent = a.agent_id;
      out.detections.push_back(d);
    }
    std::poisson_distribution<int> pois(noise.fp_rate);
    const int n_fp = noise.fp_rate > 0.0 ? pois(rng) : 0;
    for (int i = 0; i < n_fp; ++i) {
      Detection d;
      d.pos = {lo_x + (hi_x - lo_x) * u01(rng), lo_y + (hi_y - lo_y) * u01(rng), 0.0};
      d.heading = wrap_angle(-kPi + 2.0 * kPi * u01(rng));
      d.class_id = std::uniform_int_distribution<int>(0, 2)(rng);
      const ClassSpec spec = class_spec(d.class_id);
      d.size = {spec.l, spec.w, spec.h};
      d.score = beta_sample(rng, 2.0, 5.0);
      d.source_agent = std::nullopt;
      out.detections.push_back(d);
    }
    std::shuffle(out.detections.begin(), out.detections.end(), rng);
  }
  return frames;
}

GtAssociation gt_association_for(const std::vector<int>& tracklet_agents, const SceneFrame& cur) {
  std::map<int, int> src_to_col;
  for (int j = 0; j < static_cast<int>(cur.detections.size()); ++j) {
    const auto& src = cur.detections[static_cast<std::size_t>(j)].source_agent;
    if (!src) continue;
    if (src_to_col.count(*src))
      throw DataError("duplicate source_agent " + std::to_string(*src) +
                      " among detections in frame " + std::to_string(cur.frame_index));
    src_to_col[*src] = j;
  }
  GtAssociation g;
  g.n_t = static_cast<int>(tracklet_agents.size());
  g.n_p = static_cast<int>(cur.detections.size());
  g.a.assign(static_cast<std::size_t>(g.n_t + 1) * (g.n_p + 1), 0);
  auto set = [&](int i, int j) { g.a[static_cast<std::size_t>(i) * (g.n_p + 1) + j] = 1; };
  std::vector<bool> col_taken(static_cast<std::size_t>(g.n_p), false);
  for (int i = 0; i < g.n_t; ++i) {
    const int agent = tracklet_agents[static_cast<std::size_t>(i)];
    auto it = agent >= 0 ? src_to_col.find(agent) : src_to_col.end();
    if (it != src_to_col.end()) {
      set(i, it->second);
      col_taken[static_cast<std::size_t>(it->second)] = true;
    } else {
      set(i, g.n_p);  // unmatched tracklet -> dustbin column
    }
  }
  for (int j = 0; j < g.n_p; ++j)
    if (!col_taken[static_cast<std::size_t>(j)]) set(g.n_t, j);  // newborn -> dustbin row
  g.n_m = 0;
  for (auto v : g.a) g.n_m += v;
  return g;
}

GtAssociation gt_association(const SceneFrame& prev, const SceneFrame& cur) {
  std::set<int> seen;
  std::vector<int> rows;
  for (const auto& d : prev.detections) {
    if (!d.source_agent) continue;
    if (!seen.insert(*d.source_agent).second)
      throw DataError("duplicate source_agent " + std::to_string(*d.source_agent) +
                      " among detections in frame " + std::to_string(prev.frame_index));
    rows.push_back(*d.source_agent);
  }
  return gt_association_for(rows, cur);
}

nlohmann::json frame_to_json(const SceneFrame& f) {
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : f.detections) {
    nlohmann::json jd = {{"pos", d.pos},       {"size", d.size}, {"heading", d.heading},
                         {"class", d.class_id}, {"score", d.score}};
    jd["src"] = d.source_agent ? nlohmann::json(*d.source_agent) : nlohmann::json(nullptr);
    dets.push_back(std::move(jd));
  }
  nlohmann::json gts = nlohmann::json::array();
  for (const auto& g : f.gt)
    gts.push_back({{"id", g.agent_id}, {"x", g.x}, {"y", g.y}, {"heading", g.heading}});
  return {{"frame", f.frame_index},
          {"t", f.timestamp},
          {"ego", {{"x", f.ego.x}, {"y", f.ego.y}, {"yaw", f.ego.yaw}}},
          {"detections", dets},
          {"gt", gts}};
}

namespace {

const nlohmann::json& require_field(const nlohmann::json& j, const char* name, int line_no) {
  if (!j.contains(name))
    throw DataError("missing required field '" + std::string(name) + "' at line " +
                    std::to_string(line_no));
  return j.at(name);
}

}  // namespace

SceneFrame frame_from_json(const nlohmann::json& j, int line_no) {
  try {
    SceneFrame f;
    f.frame_index = require_field(j, "frame", line_no).get<int>();
    f.timestamp = require_field(j, "t", line_no).get<double>();
    const auto& ego = require_field(j, "ego", line_no);
    f.ego.x = require_field(ego, "x", line_no).get<double>();
    f.ego.y = require_field(ego, "y", line_no).get<double>();
    f.ego.yaw = require_field(ego, "yaw", line_no).get<double>();
    for (const auto& jd : require_field(j, "detections", line_no)) {
      Detection d;
      d.pos = require_field(jd, "pos", line_no).get<std::array<double, 3>>();
      d.size = require_field(jd, "size", line_no).get<std::array<double, 3>>();
      d.heading = require_field(jd, "heading", line_no).get<double>();
      d.class_id = require_field(jd, "class", line_no).get<int>();
      d.score = require_field(jd, "score", line_no).get<double>();
      const auto& src = require_field(jd, "src", line_no);
      if (!src.is_null()) d.source_agent = src.get<int>();
      f.detections.push_back(std::move(d));
    }
    for (const auto& jg : require_field(j, "gt", line_no)) {
      GtPose g;
      g.agent_id = require_field(jg, "id", line_no).get<int>();
      g.x = require_field(jg, "x", line_no).get<double>();
      g.y = require_field(jg, "y", line_no).get<double>();
      g.heading = require_field(jg, "heading", line_no).get<double>();
      f.gt.push_back(g);
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed frame at line " + std::to_string(line_no) + ": " + e.what());
  }
}

void write_scene(const std::vector<SceneFrame>& frames, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  for (const auto& f : frames) out << frame_to_json(f).dump() << "\n";
  if (!out) throw ConfigError("write failed: " + path);
}

std::vector<SceneFrame> read_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scene file: " + path);
  std::vector<SceneFrame> frames;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("parse error at line " + std::to_string(line_no) + ": " + e.what());
    }
    SceneFrame f = frame_from_json(j, line_no);
    if (!frames.empty() && f.frame_index != frames.back().frame_index + 1)
      throw DataError("non-consecutive frame index at line " + std::to_string(line_no));
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace trackcast
