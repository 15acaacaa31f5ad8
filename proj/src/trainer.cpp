#include "trackcast/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "trackcast/metrics.hpp"

namespace trackcast {

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k != "slice_length" && k != "slice_stride" && k != "epochs" && k != "lr" &&
        k != "lr_decay_factor" && k != "lr_decay_epoch" &&
        k != "beta1" && k != "beta2" && k != "lambda" && k != "ss_midpoint" &&
        k != "ss_steepness" && k != "val_every" && k != "seed" && k != "model")
      throw ConfigError("unknown field '" + k + "' in train config");
  }
  c.slice_length = j.value("slice_length", c.slice_length);
  c.slice_stride = j.value("slice_stride", c.slice_stride);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.lr_decay_epoch = j.value("lr_decay_epoch", c.lr_decay_epoch);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.lambda = j.value("lambda", c.lambda);
  c.ss_midpoint = j.value("ss_midpoint", c.ss_midpoint);
  c.ss_steepness = j.value("ss_steepness", c.ss_steepness);
  c.val_every = j.value("val_every", c.val_every);
  c.seed = j.value("seed", c.seed);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (c.slice_length < 2) throw ConfigError("train config: slice_length must be >= 2");
  if (c.lambda <= 0.0) throw ConfigError("train config: lambda must be positive");
  if (c.epochs < 0) throw ConfigError("train config: epochs must be non-negative");
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open train config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return train_config_from_json(j);
}

double scheduled_sampling_rate(int epoch, double midpoint, double steepness) {
  if (epoch < 0) throw ConfigError("scheduled_sampling_rate: epoch must be >= 0");
  return 1.0 / (1.0 + std::exp(-(epoch - midpoint) / steepness));
}

Tensor total_loss(const Tensor& l_track, const Tensor& l_pred, double lambda) {
  if (!std::isfinite(l_track.value()) || !std::isfinite(l_pred.value()))
    throw NumericError("total_loss: non-finite loss component");
  return add(mul_scalar(l_track, lambda), l_pred);
}

void TeacherState::advance(const SceneFrame& frame,
                           const std::vector<std::optional<Pose>>* coast_poses) {
  std::map<int, const Detection*> det_of;
  for (const auto& d : frame.detections)
    if (d.source_agent) det_of[*d.source_agent] = &d;

  for (std::size_t idx = 0; idx < tracks_.size(); ++idx) {
    TrackletState& t = tracks_[idx];
    ++t.age;
    auto it = det_of.find(t.agent_id);
    if (it == det_of.end()) {
      ++t.lost_for;
      if (coast_poses && idx < coast_poses->size() && (*coast_poses)[idx])
        t.last_pose = *(*coast_poses)[idx];
      push_history(t, {false, 0, 0, 0, 0, 0, 0, 0}, cfg_.t_h);
      continue;
    }
    const Detection& d = *it->second;
    t.last_pose = {d.pos[0], d.pos[1], d.heading};
    t.length = d.size[0];
    t.width = d.size[1];
    t.height = d.size[2];
    t.class_id = d.class_id;
    t.score = d.score;
    t.lost_for = 0;
    push_history(t, {true, d.pos[0], d.pos[1], d.heading, d.size[0], d.size[1], d.size[2], d.score},
                 cfg_.t_h);
    det_of.erase(it);
  }
  // Remaining sourced detections spawn teacher tracks (in detection order).
  for (const auto& d : frame.detections) {
    if (!d.source_agent || !det_of.count(*d.source_agent)) continue;
    TrackletState t;
    t.track_id = *d.source_agent;  // teacher identity = agent id
    t.agent_id = *d.source_agent;
    t.class_id = d.class_id;
    t.length = d.size[0];
    t.width = d.size[1];
    t.height = d.size[2];
    t.last_pose = {d.pos[0], d.pos[1], d.heading};
    t.score = d.score;
    push_history(t, {true, d.pos[0], d.pos[1], d.heading, d.size[0], d.size[1], d.size[2], d.score},
                 cfg_.t_h);
    index_of_[t.agent_id] = tracks_.size();
    tracks_.push_back(std::move(t));
  }
}

std::vector<int> TeacherState::agent_ids() const {
  std::vector<int> out;
  out.reserve(tracks_.size());
  for (const auto& t : tracks_) out.push_back(t.agent_id);
  return out;
}

SceneIndex SceneIndex::build(const std::vector<SceneFrame>& frames) {
  SceneIndex idx;
  for (const auto& f : frames)
    for (const auto& g : f.gt) idx.agent_poses[g.agent_id][f.frame_index] = {g.x, g.y, g.heading};
  return idx;
}

TrajectoryTargets future_targets(const SceneIndex& index, const std::vector<int>& agent_ids,
                                 const std::vector<Pose>& ref_poses, int start_frame, int steps) {
  TrajectoryTargets out;
  out.n = static_cast<int>(agent_ids.size());
  out.t = steps;
  out.xy.assign(static_cast<std::size_t>(out.n) * steps * 2, 0.0);
  out.valid.assign(static_cast<std::size_t>(out.n) * steps, 0);
  for (int i = 0; i < out.n; ++i) {
    const int agent = agent_ids[static_cast<std::size_t>(i)];
    if (agent < 0) continue;
    auto it = index.agent_poses.find(agent);
    if (it == index.agent_poses.end()) continue;
    for (int s = 0; s < steps; ++s) {
      auto pit = it->second.find(start_frame + s);
      if (pit == it->second.end()) continue;
      const Vec2 rel = to_frame(ref_poses[static_cast<std::size_t>(i)], pit->second.x, pit->second.y);
      out.xy[static_cast<std::size_t>((i * steps + s) * 2)] = rel.x;
      out.xy[static_cast<std::size_t>((i * steps + s) * 2 + 1)] = rel.y;
      out.valid[static_cast<std::size_t>(i * steps + s)] = 1;
    }
  }
  return out;
}

namespace {

Association association_from_gt(const GtAssociation& g) {
  Association a;
  for (int i = 0; i < g.n_t; ++i) {
    bool found = false;
    for (int j = 0; j < g.n_p; ++j)
      if (g.at(i, j)) {
        a.matches.push_back({i, j, 1.0});
        found = true;
        break;
      }
    if (!found) a.unmatched_tracklets.push_back(i);
  }
  std::vector<bool> taken(static_cast<std::size_t>(g.n_p), false);
  for (const auto& m : a.matches) taken[static_cast<std::size_t>(m.proposal)] = true;
  for (int j = 0; j < g.n_p; ++j)
    if (!taken[static_cast<std::size_t>(j)]) a.unmatched_proposals.push_back(j);
  return a;
}

}  // namespace

Trainer::Trainer(JointModel& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), rng_(cfg.seed ^ 0xd1b54a32d192ed03ULL) {}

Trainer::SliceResult Trainer::train_slice(const std::vector<SceneFrame>& frames, int start,
                                          int epoch) {
  const int k = cfg_.slice_length;
  if (start < 0 || start + k > static_cast<int>(frames.size()))
    throw ConfigError("train_slice: slice outside the scene");

  SceneIndex index = SceneIndex::build(frames);
  const double p_gate = scheduled_sampling_rate(epoch, cfg_.ss_midpoint, cfg_.ss_steepness);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  RuntimeFlags flags;  // full path during training

  SliceResult res;
  Tape tape;
  MemoryBank bank(cfg_.model.memory_frames, cfg_.model.memory_per_slot);
  TeacherState teacher(cfg_.model);
  teacher.advance(frames[static_cast<std::size_t>(start)]);

  try {
    Tape::Scope scope(tape);
    Tensor total = Tensor::scalar(0.0);
    for (int f = 1; f < k; ++f) {
      const SceneFrame& frame = frames[static_cast<std::size_t>(start + f)];
      const auto& tracks = teacher.tracklets();
      GtAssociation ga = gt_association_for(teacher.agent_ids(), frame);
      Association teach = association_from_gt(ga);

      std::vector<std::uint8_t> gates(tracks.size());
      for (auto& g : gates) g = u01(rng_) < p_gate ? 1 : 0;

      auto fwd = model_.forward_frame(tracks, frame.detections, frame.ego, bank, flags, &gates,
                                      &teach);

      bool empty_gt = false;
      Tensor l_track = model_.mot().tracking_loss(fwd.plan, fwd.uncertainty, ga, &empty_gt);

      std::vector<int> prop_agents;
      for (const auto& d : frame.detections)
        prop_agents.push_back(d.source_agent ? *d.source_agent : -1);
      TrajectoryTargets gt_p = future_targets(index, prop_agents, fwd.prop_poses,
                                              frame.frame_index + 1, cfg_.model.t_f);
      TrajectoryTargets gt_t = future_targets(index, teacher.agent_ids(), fwd.trk_poses,
                                              frame.frame_index, cfg_.model.t_f + 1);
      Tensor l_pred = model_.predictor().prediction_loss(fwd.prop_pred, fwd.trk_pred, gt_p, gt_t);

      total = add(total, total_loss(l_track, l_pred, cfg_.lambda));
      res.track += l_track.value();
      res.pred += l_pred.value();

      // Latent features of teacher-matched tracklets enter the bank and stay
      // on the tape, so later frames backpropagate into this one.
      std::vector<int> matched_rows;
      std::vector<double> matched_scores;
      for (const auto& m : teach.matches) {
        matched_rows.push_back(m.tracklet);
        matched_scores.push_back(frame.detections[static_cast<std::size_t>(m.proposal)].score);
      }
      model_.encoder().memory_update(bank, fwd.ctx.tracklets, tracks, matched_rows,
                                     matched_scores, frame.ego);

      // Coast missed agents along the model's own forecast, as in streaming
      // inference.
      std::vector<std::optional<Pose>> coast(tracks.size());
      for (std::size_t i = 0; i < tracks.size(); ++i) {
        if (fwd.trk_pred.n == 0) break;
        const int mode = fwd.trk_pred.top_mode(static_cast<int>(i));
        const Vec2 g = from_frame(fwd.trk_poses[i],
                                  fwd.trk_pred.mu_at(static_cast<int>(i), mode, 0, 0),
                                  fwd.trk_pred.mu_at(static_cast<int>(i), mode, 0, 1));
        coast[i] = Pose{g.x, g.y, tracks[i].last_pose.yaw};
      }
      teacher.advance(frame, &coast);
    }
    res.total = total.value();
    model_.params().zero_grad();
    tape.backward(total);
    double lr = cfg_.lr;
    if (cfg_.lr_decay_epoch >= 0 && epoch >= cfg_.lr_decay_epoch) lr *= cfg_.lr_decay_factor;
    model_.params().adam_step(lr, cfg_.beta1, cfg_.beta2);
  } catch (const NumericError&) {
    model_.params().zero_grad();
    res = SliceResult{};
    res.skipped = true;
  }
  return res;
}

std::vector<Trainer::EpochRow> Trainer::run(const std::vector<std::vector<SceneFrame>>& train_scenes,
                                            const std::vector<std::vector<SceneFrame>>& val_scenes,
                                            const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  // Anchors from the training corpus before any gradient step.
  auto endpoints = collect_anchor_endpoints(train_scenes, cfg_.model.t_f, cfg_.model.n_classes);
  model_.anchors() = fit_anchors(endpoints, cfg_.model.k_modes, cfg_.seed);

  struct Slice {
    int scene, start;
  };
  std::vector<Slice> slices;
  const int stride = cfg_.slice_stride > 0 ? cfg_.slice_stride : cfg_.slice_length;
  for (std::size_t s = 0; s < train_scenes.size(); ++s) {
    const int n = static_cast<int>(train_scenes[s].size());
    for (int start = 0; start + cfg_.slice_length <= n; start += stride)
      slices.push_back({static_cast<int>(s), start});
  }
  if (slices.empty() && cfg_.epochs > 0)
    throw ConfigError("training corpus has no scene long enough for slice_length " +
                      std::to_string(cfg_.slice_length));

  auto validate = [&]() {
    RuntimeFlags flags;
    double ade_sum = 0.0;
    int samples = 0;
    for (const auto& scene : val_scenes) {
      SceneRun run = run_stream(model_, scene, flags);
      auto m = min_ade_fde_mr(run.predictions, run.tracks, scene);
      ade_sum += m.min_ade * m.samples;
      samples += m.samples;
    }
    return samples > 0 ? ade_sum / samples : 1e300;
  };

  std::vector<EpochRow> log;
  double best_val = 1e300;
  const std::string best_path = out_dir + "/best.json";
  model_.save_checkpoint(best_path);  // epoch-0 fallback: initialization

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::shuffle(slices.begin(), slices.end(), rng_);
    double track_sum = 0.0, pred_sum = 0.0;
    int counted = 0;
    for (const auto& sl : slices) {
      SliceResult r = train_slice(train_scenes[static_cast<std::size_t>(sl.scene)], sl.start, epoch);
      if (r.skipped) continue;
      track_sum += r.track;
      pred_sum += r.pred;
      ++counted;
    }
    EpochRow row;
    row.epoch = epoch;
    row.track = counted > 0 ? track_sum / counted : 0.0;
    row.pred = counted > 0 ? pred_sum / counted : 0.0;
    const bool do_val = !val_scenes.empty() &&
                        (epoch % cfg_.val_every == 0 || epoch == cfg_.epochs - 1);
    if (do_val) {
      row.val_minade = validate();
      row.has_val = true;
      if (row.val_minade < best_val) {
        best_val = row.val_minade;
        model_.save_checkpoint(best_path);
      }
    }
    log.push_back(row);
  }
  if (val_scenes.empty() && cfg_.epochs > 0) model_.save_checkpoint(best_path);
  model_.save_checkpoint(out_dir + "/last.json");

  std::ofstream csv(out_dir + "/train_log.csv");
  if (!csv) throw ConfigError("cannot open training log for writing: " + out_dir + "/train_log.csv");
  csv << "epoch,track_loss,pred_loss,val_minade\n";
  for (const auto& row : log) {
    csv << row.epoch << "," << row.track << "," << row.pred << ",";
    if (row.has_val) csv << row.val_minade;
    csv << "\n";
  }
  return log;
}

}  // namespace trackcast
