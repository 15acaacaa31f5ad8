#include "trackcast/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace trackcast {

void MemoryBank::push(MemorySlot slot) {
  if (capacity_ <= 0) return;
  slots_.push_back(std::move(slot));
  while (static_cast<int>(slots_.size()) > capacity_) slots_.pop_front();
}

Encoder::Encoder(ParamStore& ps, const ModelConfig& cfg) : cfg_(cfg) {
  const int c = cfg.attr_dim();
  det_mlp_ = make_mlp(ps, "encoder.det_mlp", {c, cfg.hidden, cfg.d});
  trk_mlp_ = make_mlp(ps, "encoder.trk_mlp", {cfg.trk_attr_dim(), cfg.hidden, cfg.d});
  hist_mlp_ = make_mlp(ps, "encoder.hist_mlp", {cfg.hist_attr_dim(), cfg.hidden, cfg.d});
  ego_mlp_ = make_mlp(ps, "encoder.ego_mlp", {3, cfg.hidden, 2 * cfg.d});
  stpe_mlp_ = make_mlp(ps, "encoder.stpe_mlp", {3, cfg.hidden, cfg.d});
  hist_attn_ = make_mha(ps, "encoder.hist_attn", cfg.d, cfg.heads);
  mem_attn_ = make_mha(ps, "encoder.mem_attn", cfg.d, cfg.heads);
  for (int b = 0; b < cfg.l_int; ++b) {
    const std::string prefix = "encoder.interact.block" + std::to_string(b);
    InteractBlock blk;
    blk.prop_cross = make_mha(ps, prefix + ".prop_cross", cfg.d, cfg.heads);
    blk.prop_self = make_mha(ps, prefix + ".prop_self", cfg.d, cfg.heads);
    blk.trk_cross = make_mha(ps, prefix + ".trk_cross", cfg.d, cfg.heads);
    blk.trk_self = make_mha(ps, prefix + ".trk_self", cfg.d, cfg.heads);
    blk.ln_pc = make_layer_norm(ps, prefix + ".ln_pc", cfg.d);
    blk.ln_ps = make_layer_norm(ps, prefix + ".ln_ps", cfg.d);
    blk.ln_tc = make_layer_norm(ps, prefix + ".ln_tc", cfg.d);
    blk.ln_ts = make_layer_norm(ps, prefix + ".ln_ts", cfg.d);
    blocks_.push_back(std::move(blk));
  }
}

std::vector<double> Encoder::det_attributes(const Detection& det) const {
  std::vector<double> a(static_cast<std::size_t>(cfg_.attr_dim()), 0.0);
  a[0] = det.size[0];
  a[1] = det.size[1];
  a[2] = det.size[2];
  const int cls = std::clamp(det.class_id, 0, cfg_.n_classes - 1);
  a[static_cast<std::size_t>(3 + cls)] = 1.0;
  a[static_cast<std::size_t>(3 + cfg_.n_classes)] = det.score;
  // Motion-delta slots stay zero: a raw detection carries no motion.
  return a;
}

std::vector<double> Encoder::trk_attributes(const TrackletState& t) const {
  std::vector<double> a(static_cast<std::size_t>(cfg_.trk_attr_dim()), 0.0);
  a[0] = t.length;
  a[1] = t.width;
  a[2] = t.height;
  const int cls = std::clamp(t.class_id, 0, cfg_.n_classes - 1);
  a[static_cast<std::size_t>(3 + cls)] = 1.0;
  a[static_cast<std::size_t>(3 + cfg_.n_classes)] = t.score;
  // Last-step motion in the track's own frame; the newest valid history
  // entry is the current pose, the one before it gives the delta.
  const int len = static_cast<int>(t.history.size());
  int cur_i = -1, prev_i = -1;
  for (int s = len - 1; s >= 0; --s) {
    if (!t.history[static_cast<std::size_t>(s)].valid) continue;
    if (cur_i < 0) {
      cur_i = s;
    } else {
      prev_i = s;
      break;
    }
  }
  if (prev_i >= 0) {
    const HistStep& prev = t.history[static_cast<std::size_t>(prev_i)];
    const double gap = (cur_i - prev_i) * cfg_.dt;
    const Vec2 rel = to_frame(t.last_pose, prev.x, prev.y);
    const std::size_t base = static_cast<std::size_t>(4 + cfg_.n_classes);
    a[base] = -rel.x / gap;
    a[base + 1] = -rel.y / gap;
    a[base + 2] = wrap_angle(t.last_pose.yaw - prev.heading) / gap;
  }
  // Freshness cues: how long the track has coasted and how much of its
  // history window is observed.
  int valid_steps = 0;
  for (const auto& h : t.history) valid_steps += h.valid ? 1 : 0;
  const std::size_t tail = static_cast<std::size_t>(cfg_.attr_dim());
  a[tail] = std::min(t.lost_for, 4) / 4.0;
  a[tail + 1] = t.history.empty() ? 0.0 : static_cast<double>(valid_steps) / cfg_.t_h;
  return a;
}

Tensor Encoder::detection_features(const std::vector<Detection>& dets) const {
  const int n = static_cast<int>(dets.size());
  if (n == 0) return Tensor::zeros({0, cfg_.d});
  std::vector<double> attrs;
  attrs.reserve(static_cast<std::size_t>(n) * cfg_.attr_dim());
  for (const auto& d : dets) {
    auto a = det_attributes(d);
    attrs.insert(attrs.end(), a.begin(), a.end());
  }
  return det_mlp_.apply(Tensor::from(std::move(attrs), {n, cfg_.attr_dim()}));
}

Encoder::TrackletFeatures Encoder::tracklet_features(const std::vector<TrackletState>& tracks) const {
  TrackletFeatures out;
  const int n = static_cast<int>(tracks.size());
  if (n == 0) {
    out.base = Tensor::zeros({0, cfg_.d});
    return out;
  }
  std::vector<double> attrs;
  attrs.reserve(static_cast<std::size_t>(n) * cfg_.trk_attr_dim());
  for (const auto& t : tracks) {
    auto a = trk_attributes(t);
    attrs.insert(attrs.end(), a.begin(), a.end());
  }
  Tensor base = trk_mlp_.apply(Tensor::from(std::move(attrs), {n, cfg_.trk_attr_dim()}));

  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(n));
  out.hist_rows.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& t = tracks[static_cast<std::size_t>(i)];
    std::vector<double> hattrs;
    int n_valid = 0;
    const int len = static_cast<int>(t.history.size());
    for (int s = 0; s < len; ++s) {
      const HistStep& step = t.history[static_cast<std::size_t>(s)];
      if (!step.valid) continue;
      const Vec2 rel = to_frame(t.last_pose, step.x, step.y);
      hattrs.insert(hattrs.end(),
                    {rel.x, rel.y, wrap_angle(step.heading - t.last_pose.yaw), step.l, step.w,
                     step.h, step.score, (s - (len - 1)) * cfg_.dt});
      ++n_valid;
    }
    Tensor q = slice_rows(base, i, i + 1);
    if (n_valid == 0) {
      out.hist_rows.push_back(Tensor::zeros({0, cfg_.d}));
      rows.push_back(q);
      continue;
    }
    Tensor hfeat = hist_mlp_.apply(Tensor::from(std::move(hattrs), {n_valid, cfg_.hist_attr_dim()}));
    out.hist_rows.push_back(hfeat);
    rows.push_back(add(q, hist_attn_.apply(q, hfeat, hfeat)));
  }
  out.base = concat_rows(rows);
  return out;
}

Tensor Encoder::align_entry(const Tensor& feature, const Pose& slot_ego, const Pose& now_ego) const {
  const Vec2 rel = to_frame(now_ego, slot_ego.x, slot_ego.y);
  Tensor delta = Tensor::from({rel.x, rel.y, wrap_angle(slot_ego.yaw - now_ego.yaw)}, {1, 3});
  Tensor raw = ego_mlp_.apply(delta);  // [1, 2D]
  Tensor alpha = add_scalar(slice_last(raw, 0, cfg_.d), 1.0);
  Tensor beta = slice_last(raw, cfg_.d, cfg_.d);
  Tensor normed = layer_norm(reshape(feature, {1, cfg_.d}), Tensor::full({cfg_.d}, 1.0),
                             Tensor::zeros({cfg_.d}));
  return add(mul(alpha, normed), beta);  // [1, D]
}

Tensor Encoder::fuse_memory(const Tensor& base, const std::vector<TrackletState>& tracks,
                            const MemoryBank& bank, const Pose& now_ego,
                            const std::vector<std::uint8_t>* gates) const {
  const int n = static_cast<int>(tracks.size());
  if (n == 0) return base;
  if (bank.empty()) return base;
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Tensor q = slice_rows(base, i, i + 1);
    if (gates && !(*gates)[static_cast<std::size_t>(i)]) {
      rows.push_back(q);
      continue;
    }
    std::vector<Tensor> mem;
    for (int s = 0; s < bank.size(); ++s) {
      for (const auto& [track_id, feat] : bank.slot(s).entries) {
        if (track_id != tracks[static_cast<std::size_t>(i)].track_id) continue;
        mem.push_back(align_entry(feat, bank.slot(s).ego, now_ego));
      }
    }
    if (mem.empty()) {
      rows.push_back(q);
      continue;
    }
    Tensor kv = concat_rows(mem);
    rows.push_back(add(q, mem_attn_.apply(q, kv, kv)));
  }
  return concat_rows(rows);
}

Tensor Encoder::stpe(const Pose& query, const Pose& key) const {
  double dx, dy;
  if (cfg_.stpe_literal) {
    dx = key.x - query.x;
    dy = key.y - query.y;
  } else {
    const Vec2 rel = to_frame(query, key.x, key.y);
    dx = rel.x;
    dy = rel.y;
    // Saturating radial compression keeps far-away pairs inside the MLP's
    // trained input range while preserving direction and near-field detail.
    if (cfg_.stpe_range > 0.0) {
      const double r = std::hypot(dx, dy);
      const double s = 1.0 / (1.0 + r / cfg_.stpe_range);
      dx *= s;
      dy *= s;
    }
  }
  return stpe_mlp_.apply(Tensor::from({dx, dy, wrap_angle(key.yaw - query.yaw)}, {1, 3}));
}

Tensor Encoder::attended_rows(const Mha& attn, const Tensor& queries, const Tensor& feats,
                              const std::vector<Pose>& q_poses, const std::vector<Pose>& k_poses,
                              bool use_stpe) const {
  const int nq = queries.rows();
  const int nk = feats.rows();
  if (nq == 0) return Tensor::zeros({0, cfg_.d});
  if (nk == 0) return Tensor::zeros({nq, cfg_.d});
  const double radius = cfg_.neighbor_radius;
  Tensor zero_delta;
  std::vector<Tensor> out_rows;
  out_rows.reserve(static_cast<std::size_t>(nq));
  for (int i = 0; i < nq; ++i) {
    const Pose& qp = q_poses[static_cast<std::size_t>(i)];
    // Attention neighborhood: keys beyond the radius are masked out, which
    // also keeps the relative-pose encoder inside its trained input range.
    AttnMask mask;
    mask.nq = 1;
    mask.nk = nk;
    mask.allow.assign(static_cast<std::size_t>(nk), 1);
    if (radius > 0.0) {
      for (int j = 0; j < nk; ++j) {
        const Pose& kp = k_poses[static_cast<std::size_t>(j)];
        if (std::hypot(kp.x - qp.x, kp.y - qp.y) > radius)
          mask.allow[static_cast<std::size_t>(j)] = 0;
      }
    }
    Tensor kv = feats;
    if (use_stpe) {
      std::vector<Tensor> deltas;
      deltas.reserve(static_cast<std::size_t>(nk));
      for (int j = 0; j < nk; ++j) {
        if (!mask.allow[static_cast<std::size_t>(j)]) {
          if (!zero_delta.defined()) zero_delta = Tensor::zeros({1, cfg_.d});
          deltas.push_back(zero_delta);
          continue;
        }
        deltas.push_back(stpe(qp, k_poses[static_cast<std::size_t>(j)]));
      }
      kv = add(feats, concat_rows(deltas));
    }
    Tensor q = slice_rows(queries, i, i + 1);
    out_rows.push_back(attn.apply(q, kv, kv, &mask));
  }
  return concat_rows(out_rows);
}

ContextFeatures Encoder::interact(const Tensor& fp, const Tensor& ft,
                                  const std::vector<Pose>& prop_poses,
                                  const std::vector<Pose>& trk_poses, bool use_stpe) const {
  Tensor p = fp, t = ft;
  for (const auto& blk : blocks_) {
    // Both branches read the same block-input features.
    Tensor p_cross = attended_rows(blk.prop_cross, p, t, prop_poses, trk_poses, use_stpe);
    Tensor t_cross = attended_rows(blk.trk_cross, t, p, trk_poses, prop_poses, use_stpe);
    Tensor p1 = p.rows() > 0 ? blk.ln_pc.apply(add(p, p_cross)) : p;
    Tensor t1 = t.rows() > 0 ? blk.ln_tc.apply(add(t, t_cross)) : t;
    Tensor p_self = attended_rows(blk.prop_self, p1, p1, prop_poses, prop_poses, use_stpe);
    Tensor t_self = attended_rows(blk.trk_self, t1, t1, trk_poses, trk_poses, use_stpe);
    p = p1.rows() > 0 ? blk.ln_ps.apply(add(p1, p_self)) : p1;
    t = t1.rows() > 0 ? blk.ln_ts.apply(add(t1, t_self)) : t1;
  }
  return {p, t};
}

void Encoder::memory_update(MemoryBank& bank, const Tensor& trk_ctx,
                            const std::vector<TrackletState>& tracks,
                            const std::vector<int>& matched_rows,
                            const std::vector<double>& match_scores, const Pose& now_ego) const {
  MemorySlot slot;
  slot.ego = now_ego;
  std::vector<std::size_t> order(matched_rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return match_scores[a] > match_scores[b];
  });
  const std::size_t keep = bank.per_slot() > 0
                               ? std::min<std::size_t>(order.size(), static_cast<std::size_t>(bank.per_slot()))
                               : order.size();
  order.resize(keep);
  std::sort(order.begin(), order.end());  // keep slot entries in tracklet order
  for (std::size_t idx : order) {
    const int row = matched_rows[idx];
    slot.entries.emplace_back(tracks[static_cast<std::size_t>(row)].track_id,
                              reshape(slice_rows(trk_ctx, row, row + 1), {cfg_.d}));
  }
  bank.push(std::move(slot));
}

}  // namespace trackcast
