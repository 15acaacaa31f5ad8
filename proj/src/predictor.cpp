#include "trackcast/predictor.hpp"

#include <algorithm>
#include <cmath>

namespace trackcast {

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)
}

const std::vector<Vec2>& AnchorSet::anchors_for(int class_id) const {
  auto it = per_class.find(class_id);
  if (it != per_class.end()) return it->second;
  it = per_class.begin();
  if (it == per_class.end()) throw ConfigError("anchor set is empty");
  return it->second;
}

nlohmann::json AnchorSet::to_json() const {
  nlohmann::json out = nlohmann::json::object();
  out["k"] = k;
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [cls, pts] : per_class) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : pts) arr.push_back({p.x, p.y});
    classes[std::to_string(cls)] = std::move(arr);
  }
  out["classes"] = std::move(classes);
  return out;
}

AnchorSet AnchorSet::from_json(const nlohmann::json& j) {
  AnchorSet a;
  a.k = j.at("k").get<int>();
  for (auto it = j.at("classes").begin(); it != j.at("classes").end(); ++it) {
    std::vector<Vec2> pts;
    for (const auto& p : it.value()) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    a.per_class[std::stoi(it.key())] = std::move(pts);
  }
  return a;
}

AnchorSet fit_anchors(const std::map<int, std::vector<Vec2>>& endpoints_per_class, int k,
                      std::uint64_t seed) {
  if (k < 1) throw ConfigError("fit_anchors: k must be positive");
  AnchorSet out;
  out.k = k;
  std::mt19937_64 rng(seed);
  for (const auto& [cls, pts] : endpoints_per_class) {
    if (static_cast<int>(pts.size()) < k)
      throw ConfigError("fit_anchors: class " + std::to_string(cls) + " has " +
                        std::to_string(pts.size()) + " endpoints, fewer than k=" +
                        std::to_string(k));
    std::vector<Vec2> centroids(static_cast<std::size_t>(k));
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    for (auto& c : centroids) c = pts[pick(rng)];
    std::vector<int> assign(pts.size(), 0);
    for (int iter = 0; iter < 50; ++iter) {
      for (std::size_t i = 0; i < pts.size(); ++i) {
        double best = 1e300;
        for (int c = 0; c < k; ++c) {
          const double d = std::hypot(pts[i].x - centroids[static_cast<std::size_t>(c)].x,
                                      pts[i].y - centroids[static_cast<std::size_t>(c)].y);
          if (d < best) {
            best = d;
            assign[i] = c;
          }
        }
      }
      for (int c = 0; c < k; ++c) {
        double sx = 0.0, sy = 0.0;
        int cnt = 0;
        for (std::size_t i = 0; i < pts.size(); ++i)
          if (assign[i] == c) {
            sx += pts[i].x;
            sy += pts[i].y;
            ++cnt;
          }
        if (cnt > 0) centroids[static_cast<std::size_t>(c)] = {sx / cnt, sy / cnt};
      }
    }
    out.per_class[cls] = std::move(centroids);
  }
  return out;
}

std::map<int, std::vector<Vec2>> collect_anchor_endpoints(
    const std::vector<std::vector<SceneFrame>>& scenes, int horizon, int n_classes) {
  std::map<int, std::vector<Vec2>> out;
  for (const auto& frames : scenes) {
    // Recover class ids and per-frame ground truth poses by agent.
    std::map<int, int> class_of;
    std::map<int, std::map<int, Pose>> pose_at;  // agent -> frame -> pose
    for (const auto& f : frames) {
      for (const auto& d : f.detections)
        if (d.source_agent && !class_of.count(*d.source_agent))
          class_of[*d.source_agent] = d.class_id;
      for (const auto& g : f.gt)
        pose_at[g.agent_id][f.frame_index] = {g.x, g.y, g.heading};
    }
    for (const auto& [agent, poses] : pose_at) {
      const int cls = std::clamp(class_of.count(agent) ? class_of[agent] : 0, 0, n_classes - 1);
      for (const auto& [frame, pose] : poses) {
        auto fut = poses.find(frame + horizon);
        if (fut == poses.end()) continue;
        const Vec2 rel = to_frame(pose, fut->second.x, fut->second.y);
        out[cls].push_back(rel);
      }
    }
  }
  return out;
}

int GMMPrediction::top_mode(int i) const {
  int best = 0;
  for (int m = 1; m < k; ++m)
    if (mode_logp.data()[static_cast<std::size_t>(i) * k + m] >
        mode_logp.data()[static_cast<std::size_t>(i) * k + best])
      best = m;
  return best;
}

Predictor::Predictor(ParamStore& ps, const ModelConfig& cfg) : cfg_(cfg) {
  base_query_p_ = ps.create("predictor.base_query_p", {cfg.k_modes, cfg.d}, Init::XavierUniform);
  base_query_t_ = ps.create("predictor.base_query_t", {cfg.k_modes, cfg.d}, Init::XavierUniform);
  phi_mlp_ = make_mlp(ps, "predictor.phi_mlp", {cfg.d, cfg.hidden, cfg.d});
  aux_mlp_ = make_mlp(ps, "predictor.aux_mlp", {cfg.d, cfg.hidden, cfg.d});
  null_token_ = ps.create("predictor.null_token", {cfg.d}, Init::XavierUniform);
  for (int l = 0; l < cfg.l_dec; ++l) {
    const std::string prefix = "predictor.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.ctx_attn = make_mha(ps, prefix + ".ctx_attn", cfg.d, cfg.heads);
    layer.mode_attn = make_mha(ps, prefix + ".mode_attn", cfg.d, cfg.heads);
    layer.social_attn = make_mha(ps, prefix + ".social_attn", cfg.d, cfg.heads);
    // Zero value projection: the dual-stream stage starts as an exact no-op.
    layer.aux_attn = make_mha(ps, prefix + ".aux_attn", cfg.d, cfg.heads,
                              /*value_zero_init=*/true);
    layer.ln_ctx = make_layer_norm(ps, prefix + ".ln_ctx", cfg.d);
    layer.ln_mode = make_layer_norm(ps, prefix + ".ln_mode", cfg.d);
    layer.ln_social = make_layer_norm(ps, prefix + ".ln_social", cfg.d);
    layers_.push_back(std::move(layer));
  }
  const int steps = cfg.t_f + 1;  // shared heads cover the longer branch
  mu_head_ = make_mlp(ps, "predictor.mu_head", {cfg.d, cfg.hidden, steps * 2}, /*final_zero=*/true);
  sigma_head_ = make_mlp(ps, "predictor.sigma_head", {cfg.d, cfg.hidden, steps * 2},
                         /*final_zero=*/true);
  // Start wide (about 1.7 m) so early residuals do not blow up the NLL.
  for (auto& b : sigma_head_.layers.back().b.data()) b = 1.5;
  mode_head_ = make_mlp(ps, "predictor.mode_head", {cfg.d, cfg.hidden, 1}, /*final_zero=*/true);
}

Tensor Predictor::phi(const Tensor& points) const {
  return phi_mlp_.apply(sinusoidal_pe(points, cfg_.d));
}

Tensor Predictor::build_queries(const std::vector<Vec2>& anchors, const Tensor* prev_endpoints,
                                bool tracklet_branch) const {
  const int k = cfg_.k_modes;
  if (static_cast<int>(anchors.size()) != k)
    throw ConfigError("build_queries: anchor count " + std::to_string(anchors.size()) +
                      " does not match k_modes " + std::to_string(k));
  std::vector<double> pts;
  pts.reserve(static_cast<std::size_t>(k) * 2);
  for (const auto& a : anchors) {
    pts.push_back(a.x);
    pts.push_back(a.y);
  }
  Tensor anchor_pts = Tensor::from(std::move(pts), {k, 2});
  Tensor q = add(tracklet_branch ? base_query_t_ : base_query_p_, phi(anchor_pts));
  // The first decoder layer has no previous endpoints; the anchor stands in.
  return add(q, phi(prev_endpoints ? *prev_endpoints : anchor_pts));
}

Tensor Predictor::dual_stream_fuse(int layer, const Tensor& queries,
                                   const std::vector<Tensor>& keys_per_mode) const {
  const int k = cfg_.k_modes;
  if (queries.rows() != k || static_cast<int>(keys_per_mode.size()) != k)
    throw ShapeError("dual_stream_fuse: expected one query row and key set per mode");
  const DecoderLayer& dl = layers_[static_cast<std::size_t>(layer)];
  std::vector<Tensor> fused;
  fused.reserve(static_cast<std::size_t>(k));
  for (int m = 0; m < k; ++m) {
    Tensor qm = slice_rows(queries, m, m + 1);
    const Tensor& keys = keys_per_mode[static_cast<std::size_t>(m)];
    fused.push_back(add(qm, dl.aux_attn.apply(qm, keys, keys)));
  }
  return concat_rows(fused);
}

Tensor Predictor::head_mu(const Tensor& q, int horizon) const {
  const int k = cfg_.k_modes;
  const int steps = cfg_.t_f + 1;
  Tensor offsets = mu_head_.apply(q);  // [K, steps*2]
  // Cumulative sum over time via a constant lower-triangular matrix.
  std::vector<double> tri(static_cast<std::size_t>(steps) * steps, 0.0);
  for (int r = 0; r < steps; ++r)
    for (int c = 0; c <= r; ++c) tri[static_cast<std::size_t>(r) * steps + c] = 1.0;
  Tensor ltri = Tensor::from(std::move(tri), {steps, steps});
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(k));
  for (int m = 0; m < k; ++m) {
    Tensor per_step = reshape(slice_rows(offsets, m, m + 1), {steps, 2});
    Tensor cum = matmul(ltri, per_step);              // [steps, 2]
    rows.push_back(reshape(slice_rows(cum, 0, horizon), {1, horizon * 2}));
  }
  return concat_rows(rows);  // [K, horizon*2]
}

Tensor Predictor::head_sigma(const Tensor& q, int horizon) const {
  Tensor raw = sigma_head_.apply(q);  // [K, steps*2]
  Tensor sliced = slice_last(raw, 0, horizon * 2);
  return add_scalar(softplus(sliced), cfg_.sigma_min);
}

std::vector<std::vector<Tensor>> Predictor::aux_features(const GMMPrediction& trk_pred,
                                                         const Association& assoc,
                                                         const std::vector<Pose>& trk_poses,
                                                         const std::vector<Pose>& prop_poses) const {
  const int np = static_cast<int>(prop_poses.size());
  const int k = cfg_.k_modes;
  const int tf = cfg_.t_f;
  if (trk_pred.n > 0 && trk_pred.t != tf + 1)
    throw ShapeError("aux_features: tracklet horizon must be T_f + 1");

  std::vector<int> matched_track(static_cast<std::size_t>(np), -1);
  for (const auto& m : assoc.matches) matched_track[static_cast<std::size_t>(m.proposal)] = m.tracklet;

  Tensor null_keys = matmul(Tensor::full({tf, 1}, 1.0), reshape(null_token_, {1, cfg_.d}));

  std::vector<std::vector<Tensor>> out(static_cast<std::size_t>(np));
  for (int i = 0; i < np; ++i) {
    auto& per_mode = out[static_cast<std::size_t>(i)];
    per_mode.reserve(static_cast<std::size_t>(k));
    const int it = matched_track[static_cast<std::size_t>(i)];
    if (it < 0) {
      for (int m = 0; m < k; ++m) per_mode.push_back(null_keys);
      continue;
    }
    // Tracklet frame -> global -> proposal frame, as one affine map.
    const Pose& tp = trk_poses[static_cast<std::size_t>(it)];
    const Pose& pp = prop_poses[static_cast<std::size_t>(i)];
    const double a = tp.yaw - pp.yaw;
    const Vec2 off = to_frame(pp, tp.x, tp.y);
    Tensor rot = Tensor::from({std::cos(a), std::sin(a), -std::sin(a), std::cos(a)}, {2, 2});
    Tensor shift = Tensor::from({off.x, off.y}, {2});
    for (int m = 0; m < k; ++m) {
      // Steps 2..T_f+1 of the tracklet forecast overlap the proposal horizon.
      Tensor mu_row = slice_last(slice_rows(trk_pred.mu, it, it + 1),
                                 (m * trk_pred.t + 1) * 2, tf * 2);
      Tensor pts = reshape(mu_row, {tf, 2});
      Tensor in_prop = add_rowvec(matmul(pts, rot), shift);
      per_mode.push_back(aux_mlp_.apply(sinusoidal_pe(in_prop, cfg_.d)));
    }
  }
  return out;
}

GMMPrediction Predictor::predict_branch(const BranchInput& in, const AnchorSet& anchors,
                                        int horizon, const std::vector<std::vector<Tensor>>* aux,
                                        bool tracklet_branch) const {
  const int n = in.ctx.rows();
  const int k = cfg_.k_modes;
  GMMPrediction pred;
  pred.n = n;
  pred.k = k;
  pred.t = horizon;
  if (n == 0) {
    pred.mu = Tensor::zeros({0, k * horizon * 2});
    pred.sigma = Tensor::zeros({0, k * horizon * 2});
    pred.mode_logp = Tensor::zeros({0, k});
    return pred;
  }
  if (static_cast<int>(in.class_ids.size()) != n)
    throw ShapeError("predict_branch: class id count mismatch");
  if (aux && static_cast<int>(aux->size()) != n)
    throw ShapeError("predict_branch: aux feature count mismatch");

  std::vector<Tensor> endpoints(static_cast<std::size_t>(n));  // [K, 2] per agent, agent frame
  std::vector<Tensor> queries(static_cast<std::size_t>(n));
  std::vector<Tensor> mu_rows(static_cast<std::size_t>(n)), sigma_rows(static_cast<std::size_t>(n));
  std::vector<Tensor> mode_rows(static_cast<std::size_t>(n));

  for (int l = 0; l < cfg_.l_dec; ++l) {
    // Eq-8-style query rebuild from anchors and the previous layer's endpoints.
    for (int i = 0; i < n; ++i) {
      const auto& cls_anchors = anchors.anchors_for(in.class_ids[static_cast<std::size_t>(i)]);
      queries[static_cast<std::size_t>(i)] = build_queries(
          cls_anchors, l == 0 ? nullptr : &endpoints[static_cast<std::size_t>(i)], tracklet_branch);
    }
    const DecoderLayer& layer = layers_[static_cast<std::size_t>(l)];
    // (1) cross attention into the agent's context and temporal keys.
    for (int i = 0; i < n; ++i) {
      Tensor keys = slice_rows(in.ctx, i, i + 1);
      if (i < static_cast<int>(in.extra_keys.size()) &&
          in.extra_keys[static_cast<std::size_t>(i)].defined() &&
          in.extra_keys[static_cast<std::size_t>(i)].rows() > 0) {
        keys = concat_rows({keys, in.extra_keys[static_cast<std::size_t>(i)]});
      }
      Tensor& q = queries[static_cast<std::size_t>(i)];
      q = layer.ln_ctx.apply(add(q, layer.ctx_attn.apply(q, keys, keys)));
    }
    // (2) dual-stream fusion: queries attend to the auxiliary forecast keys.
    if (aux) {
      for (int i = 0; i < n; ++i)
        queries[static_cast<std::size_t>(i)] =
            dual_stream_fuse(l, queries[static_cast<std::size_t>(i)], (*aux)[static_cast<std::size_t>(i)]);
    }
    // (3) self attention across the K modes of each agent.
    for (int i = 0; i < n; ++i) {
      Tensor& q = queries[static_cast<std::size_t>(i)];
      q = layer.ln_mode.apply(add(q, layer.mode_attn.apply(q, q, q)));
    }
    // (4) social self attention across agents, per mode.
    if (n > 1) {
      std::vector<Tensor> per_mode_rows(static_cast<std::size_t>(k));
      for (int m = 0; m < k; ++m) {
        std::vector<Tensor> rows;
        rows.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
          rows.push_back(slice_rows(queries[static_cast<std::size_t>(i)], m, m + 1));
        Tensor social = concat_rows(rows);
        per_mode_rows[static_cast<std::size_t>(m)] =
            layer.ln_social.apply(add(social, layer.social_attn.apply(social, social, social)));
      }
      for (int i = 0; i < n; ++i) {
        std::vector<Tensor> rows;
        rows.reserve(static_cast<std::size_t>(k));
        for (int m = 0; m < k; ++m)
          rows.push_back(slice_rows(per_mode_rows[static_cast<std::size_t>(m)], i, i + 1));
        queries[static_cast<std::size_t>(i)] = concat_rows(rows);
      }
    }
    // Heads; the endpoints feed the next layer's query rebuild.
    for (int i = 0; i < n; ++i) {
      const Tensor& q = queries[static_cast<std::size_t>(i)];
      Tensor mu = head_mu(q, horizon);  // [K, horizon*2]
      endpoints[static_cast<std::size_t>(i)] =
          reshape(slice_last(mu, (horizon - 1) * 2, 2), {k, 2});
      if (l == cfg_.l_dec - 1) {
        mu_rows[static_cast<std::size_t>(i)] = reshape(mu, {1, k * horizon * 2});
        sigma_rows[static_cast<std::size_t>(i)] =
            reshape(head_sigma(q, horizon), {1, k * horizon * 2});
        mode_rows[static_cast<std::size_t>(i)] =
            log_softmax(reshape(mode_head_.apply(q), {1, k}));
      }
    }
  }
  pred.mu = concat_rows(mu_rows);
  pred.sigma = concat_rows(sigma_rows);
  pred.mode_logp = concat_rows(mode_rows);
  return pred;
}

Tensor Predictor::gmm_nll(const GMMPrediction& pred, const TrajectoryTargets& gt,
                          bool full_mixture) const {
  if (gt.n != pred.n || (pred.n > 0 && gt.t != pred.t))
    throw ShapeError("gmm_nll: target shape mismatch");
  Tensor acc = Tensor::scalar(0.0);
  int counted = 0;
  for (int i = 0; i < pred.n; ++i) {
    // Last valid step; agents without any valid future are excluded.
    int last_valid = -1;
    int n_valid = 0;
    for (int s = 0; s < gt.t; ++s)
      if (gt.valid[static_cast<std::size_t>(i * gt.t + s)]) {
        last_valid = s;
        ++n_valid;
      }
    if (last_valid < 0) continue;
    ++counted;

    std::vector<double> mask(static_cast<std::size_t>(gt.t) * 2, 0.0);
    std::vector<double> target(static_cast<std::size_t>(gt.t) * 2, 0.0);
    for (int s = 0; s < gt.t; ++s)
      if (gt.valid[static_cast<std::size_t>(i * gt.t + s)]) {
        mask[static_cast<std::size_t>(s) * 2] = 1.0;
        mask[static_cast<std::size_t>(s) * 2 + 1] = 1.0;
        target[static_cast<std::size_t>(s) * 2] = gt.xy[static_cast<std::size_t>((i * gt.t + s) * 2)];
        target[static_cast<std::size_t>(s) * 2 + 1] =
            gt.xy[static_cast<std::size_t>((i * gt.t + s) * 2 + 1)];
      }
    Tensor mask_t = Tensor::from(mask, {gt.t, 2});
    Tensor target_t = Tensor::from(target, {gt.t, 2});

    auto mode_nll = [&](int m) {
      Tensor mu_m = reshape(slice_last(slice_rows(pred.mu, i, i + 1), m * pred.t * 2, pred.t * 2),
                            {pred.t, 2});
      Tensor sg_m = reshape(
          slice_last(slice_rows(pred.sigma, i, i + 1), m * pred.t * 2, pred.t * 2), {pred.t, 2});
      Tensor r = div(sub(target_t, mu_m), sg_m);
      Tensor per_elem = add(add(mul_scalar(mul(r, r), 0.5), log(sg_m)),
                            Tensor::full({pred.t, 2}, kHalfLog2Pi));
      return sum(mul(per_elem, mask_t));
    };

    if (full_mixture) {
      std::vector<Tensor> lls;
      lls.reserve(static_cast<std::size_t>(pred.k));
      for (int m = 0; m < pred.k; ++m) {
        Tensor logp_m = reshape(slice_last(slice_rows(pred.mode_logp, i, i + 1), m, 1), {1, 1});
        lls.push_back(add(neg(reshape(mode_nll(m), {1, 1})), logp_m));
      }
      Tensor stacked = reshape(concat_rows(lls), {1, pred.k});
      acc = add(acc, neg(reshape(logsumexp_rows(stacked), {})));
      continue;
    }

    // Winner mode by displacement at the final valid step (hard selection,
    // no gradient through the argmin).
    int best = 0;
    double best_d = 1e300;
    const double gx = gt.xy[static_cast<std::size_t>((i * gt.t + last_valid) * 2)];
    const double gy = gt.xy[static_cast<std::size_t>((i * gt.t + last_valid) * 2 + 1)];
    for (int m = 0; m < pred.k; ++m) {
      const double d = std::hypot(pred.mu_at(i, m, last_valid, 0) - gx,
                                  pred.mu_at(i, m, last_valid, 1) - gy);
      if (d < best_d) {
        best_d = d;
        best = m;
      }
    }
    Tensor logp_best = reshape(slice_last(slice_rows(pred.mode_logp, i, i + 1), best, 1), {});
    acc = add(acc, sub(reshape(mode_nll(best), {}), logp_best));
  }
  if (counted == 0) return Tensor::scalar(0.0);
  return mul_scalar(acc, 1.0 / static_cast<double>(counted));
}

Tensor Predictor::prediction_loss(const GMMPrediction& prop_pred, const GMMPrediction& trk_pred,
                                  const TrajectoryTargets& gt_p,
                                  const TrajectoryTargets& gt_t) const {
  return add(gmm_nll(prop_pred, gt_p, cfg_.full_mixture_nll),
             gmm_nll(trk_pred, gt_t, cfg_.full_mixture_nll));
}

}  // namespace trackcast
