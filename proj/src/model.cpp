#include "trackcast/model.hpp"

#include <cmath>
#include <fstream>

namespace trackcast {

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"hidden", c.hidden},
          {"heads", c.heads},
          {"l_int", c.l_int},
          {"l_dec", c.l_dec},
          {"k_modes", c.k_modes},
          {"t_h", c.t_h},
          {"t_f", c.t_f},
          {"n_classes", c.n_classes},
          {"sigma_min", c.sigma_min},
          {"dt", c.dt},
          {"stpe_literal", c.stpe_literal},
          {"full_mixture_nll", c.full_mixture_nll},
          {"sinkhorn_iters", c.sinkhorn_iters},
          {"sinkhorn_tol", c.sinkhorn_tol},
          {"accept_threshold", c.accept_threshold},
          {"max_age", c.max_age},
          {"memory_frames", c.memory_frames},
          {"memory_per_slot", c.memory_per_slot},
          {"neighbor_radius", c.neighbor_radius},
          {"stpe_range", c.stpe_range},
          {"coast_score_decay", c.coast_score_decay}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.value("d", c.d);
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.l_int = j.value("l_int", c.l_int);
  c.l_dec = j.value("l_dec", c.l_dec);
  c.k_modes = j.value("k_modes", c.k_modes);
  c.t_h = j.value("t_h", c.t_h);
  c.t_f = j.value("t_f", c.t_f);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.sigma_min = j.value("sigma_min", c.sigma_min);
  c.dt = j.value("dt", c.dt);
  c.stpe_literal = j.value("stpe_literal", c.stpe_literal);
  c.full_mixture_nll = j.value("full_mixture_nll", c.full_mixture_nll);
  c.sinkhorn_iters = j.value("sinkhorn_iters", c.sinkhorn_iters);
  c.sinkhorn_tol = j.value("sinkhorn_tol", c.sinkhorn_tol);
  c.accept_threshold = j.value("accept_threshold", c.accept_threshold);
  c.max_age = j.value("max_age", c.max_age);
  c.memory_frames = j.value("memory_frames", c.memory_frames);
  c.memory_per_slot = j.value("memory_per_slot", c.memory_per_slot);
  c.neighbor_radius = j.value("neighbor_radius", c.neighbor_radius);
  c.stpe_range = j.value("stpe_range", c.stpe_range);
  c.coast_score_decay = j.value("coast_score_decay", c.coast_score_decay);
  if (c.d <= 0 || c.d % c.heads != 0)
    throw ConfigError("model config: d must be positive and divisible by heads");
  if (c.t_f < 1 || c.t_h < 1 || c.k_modes < 1)
    throw ConfigError("model config: t_f, t_h and k_modes must be positive");
  return c;
}

JointModel::JointModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      params_(seed),
      encoder_(params_, cfg_),
      mot_(params_, cfg_),
      predictor_(params_, cfg_) {
  // Default anchors: a forward fan, replaced by fit_anchors before training.
  for (int cls = 0; cls < cfg_.n_classes; ++cls) {
    std::vector<Vec2> pts;
    for (int m = 0; m < cfg_.k_modes; ++m) {
      const double angle = (m - (cfg_.k_modes - 1) / 2.0) * 0.3;
      const double reach = 5.0 * (cls == 0 ? 2.0 : 1.0);
      pts.push_back({reach * std::cos(angle), reach * std::sin(angle)});
    }
    anchors_.per_class[cls] = std::move(pts);
  }
  anchors_.k = cfg_.k_modes;
}

void JointModel::save_checkpoint(const std::string& path) const {
  nlohmann::json out;
  out["format_version"] = 1;
  out["model_config"] = model_config_to_json(cfg_);
  out["anchors"] = anchors_.to_json();
  out["params"] = params_.save_values();
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open checkpoint for writing: " + path);
  f << out.dump() << "\n";
}

std::unique_ptr<JointModel> JointModel::load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid checkpoint JSON in " + path + ": " + e.what());
  }
  const int version = j.value("format_version", -1);
  if (version != 1)
    throw ConfigError("unsupported checkpoint format version " + std::to_string(version) +
                      " in " + path);
  ModelConfig cfg = model_config_from_json(j.at("model_config"));
  auto model = std::make_unique<JointModel>(cfg, /*seed=*/0);
  model->params_.load_values(j.at("params"));
  model->anchors_ = AnchorSet::from_json(j.at("anchors"));
  return model;
}

JointModel::FrameForward JointModel::forward_frame(const std::vector<TrackletState>& tracks,
                                                   const std::vector<Detection>& detections,
                                                   const Pose& ego, const MemoryBank& bank,
                                                   const RuntimeFlags& flags,
                                                   const std::vector<std::uint8_t>* memory_gates,
                                                   const Association* aux_assoc) const {
  FrameForward out;

  out.prop_poses.reserve(detections.size());
  for (const auto& d : detections) out.prop_poses.push_back({d.pos[0], d.pos[1], d.heading});
  out.trk_poses.reserve(tracks.size());
  for (const auto& t : tracks) out.trk_poses.push_back(t.last_pose);

  // Spatio-temporal encoding.
  Tensor f_d = encoder_.detection_features(detections);
  Encoder::TrackletFeatures tf = encoder_.tracklet_features(tracks);
  Tensor f_t = flags.use_memory ? encoder_.fuse_memory(tf.base, tracks, bank, ego, memory_gates)
                                : tf.base;
  out.ctx = encoder_.interact(f_d, f_t, out.prop_poses, out.trk_poses, flags.use_stpe);

  // Association.
  Tensor aff = mot_.affinity(out.ctx);
  out.plan = mot_.sinkhorn_log(aff, cfg_.sinkhorn_iters, cfg_.sinkhorn_tol);
  out.uncertainty = mot_.uncertainty(out.ctx);
  out.assoc = mot_.decode_association(out.plan, cfg_.accept_threshold);

  // Dual-stream prediction: tracklet branch first, then its overlap guides
  // the proposal branch.
  Predictor::BranchInput trk_in;
  trk_in.ctx = out.ctx.tracklets;
  trk_in.extra_keys = tf.hist_rows;
  for (const auto& t : tracks) trk_in.class_ids.push_back(t.class_id);
  out.trk_pred = predictor_.predict_branch(trk_in, anchors_, cfg_.t_f + 1, nullptr,
                                           /*tracklet_branch=*/true);

  Predictor::BranchInput prop_in;
  prop_in.ctx = out.ctx.proposals;
  for (const auto& d : detections) prop_in.class_ids.push_back(d.class_id);
  std::vector<std::vector<Tensor>> aux;
  const bool use_aux = flags.use_dual_stream && !detections.empty();
  if (use_aux) {
    const Association& assoc = aux_assoc ? *aux_assoc : out.assoc;
    aux = predictor_.aux_features(out.trk_pred, assoc, out.trk_poses, out.prop_poses);
  }
  out.prop_pred = predictor_.predict_branch(prop_in, anchors_, cfg_.t_f,
                                            use_aux ? &aux : nullptr,
                                            /*tracklet_branch=*/false);
  return out;
}

namespace {

std::vector<Vec2> mode_to_global(const GMMPrediction& pred, int i, int mode, int first_step,
                                 int steps, const Pose& frame_pose) {
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    const double lx = pred.mu_at(i, mode, first_step + s, 0);
    const double ly = pred.mu_at(i, mode, first_step + s, 1);
    out.push_back(from_frame(frame_pose, lx, ly));
  }
  return out;
}

}  // namespace

StepOutputs stream_step(JointModel& model, StreamState& state, const SceneFrame& frame,
                        const RuntimeFlags& flags) {
  const ModelConfig& cfg = model.config();
  auto fwd = model.forward_frame(state.tracks, frame.detections, frame.ego, state.bank, flags);

  // Coast targets for unmatched tracklets: top-probability mode, first step.
  std::vector<std::optional<Pose>> coast(state.tracks.size());
  for (std::size_t i = 0; i < state.tracks.size(); ++i) {
    if (fwd.trk_pred.n == 0) break;
    const int mode = fwd.trk_pred.top_mode(static_cast<int>(i));
    const Vec2 g = from_frame(fwd.trk_poses[i], fwd.trk_pred.mu_at(static_cast<int>(i), mode, 0, 0),
                              fwd.trk_pred.mu_at(static_cast<int>(i), mode, 0, 1));
    coast[i] = Pose{g.x, g.y, state.tracks[i].last_pose.yaw};
  }

  // Memory write for matched tracklets before the lifecycle rebuilds state.
  if (flags.use_memory) {
    std::vector<int> matched_rows;
    std::vector<double> scores;
    for (const auto& m : fwd.assoc.matches) {
      matched_rows.push_back(m.tracklet);
      scores.push_back(frame.detections[static_cast<std::size_t>(m.proposal)].score);
    }
    model.encoder().memory_update(state.bank, fwd.ctx.tracklets, state.tracks, matched_rows,
                                  scores, frame.ego);
  }

  TrackUpdateConfig ucfg{cfg.t_h, cfg.max_age, cfg.dt, cfg.coast_score_decay};
  std::vector<TrackletState> updated =
      update_track_ids(fwd.assoc, state.tracks, frame.detections, coast, ucfg,
                       &state.next_track_id);

  // Attach fresh latents: matched tracklets keep their context row, births
  // take the proposal row.
  std::vector<int> proposal_of_track(state.tracks.size(), -1);
  for (const auto& m : fwd.assoc.matches)
    proposal_of_track[static_cast<std::size_t>(m.tracklet)] = m.proposal;

  StepOutputs out;
  out.tracks.frame = frame.frame_index;

  std::size_t cursor = 0;  // walks `updated` in lockstep with survivors
  for (std::size_t i = 0; i < state.tracks.size(); ++i) {
    const bool matched = proposal_of_track[i] >= 0;
    if (!matched && state.tracks[i].lost_for + 1 > cfg.max_age) continue;  // retired
    TrackletState& t = updated[cursor++];
    if (matched) {
      t.latent = reshape(slice_rows(fwd.ctx.tracklets, static_cast<int>(i),
                                    static_cast<int>(i) + 1),
                         {cfg.d})
                     .detach();
    }
    out.tracks.rows.push_back({t.track_id, t.last_pose.x, t.last_pose.y, t.last_pose.yaw, t.score,
                               t.lost_for > 0});
    // Forecast line: matched tracks use the proposal branch, coasted tracks
    // keep the tracklet branch's overlapping steps.
    FramePrediction fp;
    fp.frame = frame.frame_index;
    fp.id = t.track_id;
    if (matched) {
      const int j = proposal_of_track[i];
      for (int m = 0; m < fwd.prop_pred.k; ++m)
        fp.modes.push_back({fwd.prop_pred.mode_prob(j, m),
                            mode_to_global(fwd.prop_pred, j, m, 0, cfg.t_f, fwd.prop_poses[static_cast<std::size_t>(j)])});
    } else {
      for (int m = 0; m < fwd.trk_pred.k; ++m)
        fp.modes.push_back({fwd.trk_pred.mode_prob(static_cast<int>(i), m),
                            mode_to_global(fwd.trk_pred, static_cast<int>(i), m, 1, cfg.t_f,
                                           fwd.trk_poses[i])});
    }
    out.predictions.push_back(std::move(fp));
  }
  // Births, in proposal order after the survivors.
  for (int j : fwd.assoc.unmatched_proposals) {
    TrackletState& t = updated[cursor++];
    t.latent = reshape(slice_rows(fwd.ctx.proposals, j, j + 1), {cfg.d}).detach();
    out.tracks.rows.push_back({t.track_id, t.last_pose.x, t.last_pose.y, t.last_pose.yaw, t.score,
                               false});
    FramePrediction fp;
    fp.frame = frame.frame_index;
    fp.id = t.track_id;
    for (int m = 0; m < fwd.prop_pred.k; ++m)
      fp.modes.push_back({fwd.prop_pred.mode_prob(j, m),
                          mode_to_global(fwd.prop_pred, j, m, 0, cfg.t_f,
                                         fwd.prop_poses[static_cast<std::size_t>(j)])});
    out.predictions.push_back(std::move(fp));
  }
  state.tracks = std::move(updated);
  return out;
}

SceneRun run_stream(JointModel& model, const std::vector<SceneFrame>& frames,
                    const RuntimeFlags& flags) {
  StreamState state;
  state.bank = MemoryBank(model.config().memory_frames, model.config().memory_per_slot);
  SceneRun run;
  for (const auto& frame : frames) {
    StepOutputs step = stream_step(model, state, frame, flags);
    run.tracks.push_back(std::move(step.tracks));
    for (auto& p : step.predictions) run.predictions.push_back(std::move(p));
  }
  return run;
}

void write_tracks(const std::vector<FrameTracks>& tracks, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  for (const auto& f : tracks) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : f.rows)
      rows.push_back({{"id", r.id},
                      {"x", r.x},
                      {"y", r.y},
                      {"heading", r.heading},
                      {"score", r.score},
                      {"coasted", r.coasted}});
    out << nlohmann::json{{"frame", f.frame}, {"tracks", rows}}.dump() << "\n";
  }
}

std::vector<FrameTracks> read_tracks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open tracks file: " + path);
  std::vector<FrameTracks> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      FrameTracks f;
      f.frame = j.at("frame").get<int>();
      for (const auto& r : j.at("tracks")) {
        f.rows.push_back({r.at("id").get<int>(), r.at("x").get<double>(), r.at("y").get<double>(),
                          r.at("heading").get<double>(), r.at("score").get<double>(),
                          r.at("coasted").get<bool>()});
      }
      out.push_back(std::move(f));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed tracks line " + std::to_string(line_no) + " in " + path + ": " +
                      e.what());
    }
  }
  return out;
}

void write_predictions(const std::vector<FramePrediction>& preds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  for (const auto& p : preds) {
    nlohmann::json modes = nlohmann::json::array();
    for (const auto& m : p.modes) {
      nlohmann::json xy = nlohmann::json::array();
      for (const auto& v : m.xy) xy.push_back({v.x, v.y});
      modes.push_back({{"p", m.p}, {"xy", xy}});
    }
    out << nlohmann::json{{"frame", p.frame}, {"id", p.id}, {"modes", modes}}.dump() << "\n";
  }
}

std::vector<FramePrediction> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open predictions file: " + path);
  std::vector<FramePrediction> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      FramePrediction p;
      p.frame = j.at("frame").get<int>();
      p.id = j.at("id").get<int>();
      for (const auto& m : j.at("modes")) {
        PredMode mode;
        mode.p = m.at("p").get<double>();
        for (const auto& v : m.at("xy"))
          mode.xy.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
        p.modes.push_back(std::move(mode));
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed predictions line " + std::to_string(line_no) + " in " + path +
                      ": " + e.what());
    }
  }
  return out;
}

}  // namespace trackcast
