#include "trackcast/mot_head.hpp"

#include <algorithm>
#include <cmath>

namespace trackcast {

MotHead::MotHead(ParamStore& ps, const ModelConfig& cfg) : cfg_(cfg) {
  z_ = ps.create("mot.dustbin_z", {}, Init::Zero);
  // Zero-initialized last layer: uncertainty starts at softplus(0) = ln 2.
  u_mlp_ = make_mlp(ps, "mot.u_mlp", {2 * cfg.d, cfg.hidden, 1}, /*final_zero=*/true);
  u_row_raw_ = ps.create("mot.u_dustbin_row", {}, Init::Zero);
  u_col_raw_ = ps.create("mot.u_dustbin_col", {}, Init::Zero);
}

Tensor MotHead::affinity(const ContextFeatures& ctx) const {
  return mul_scalar(matmul(ctx.tracklets, transpose(ctx.proposals)),
                    1.0 / std::sqrt(static_cast<double>(cfg_.d)));
}

TransportPlan MotHead::sinkhorn_log(const Tensor& aff, int iters, double tol) const {
  if (iters < 1) throw ConfigError("sinkhorn_log: iters must be >= 1");
  for (double v : aff.data())
    if (!std::isfinite(v)) throw NumericError("sinkhorn_log: non-finite affinity input");
  if (!std::isfinite(z_.value())) throw NumericError("sinkhorn_log: non-finite dustbin score");

  TransportPlan plan;
  plan.n_t = aff.rows();
  plan.n_p = aff.cols();
  const int nt = plan.n_t, np = plan.n_p;

  if (nt == 0 || np == 0) {
    // Degenerate sides: all mass sits in the dustbins; nothing to learn.
    std::vector<double> lp(static_cast<std::size_t>(nt + 1) * (np + 1), 0.0);
    lp.back() = -30.0;  // empty corner, numerically zero mass
    plan.log_plan = Tensor::from(std::move(lp), {nt + 1, np + 1});
    plan.marginal_violation = 0.0;
    return plan;
  }

  Tensor k = pad_with_scalar(aff, z_);
  std::vector<double> lr(static_cast<std::size_t>(nt) + 1, 0.0);
  lr.back() = std::log(static_cast<double>(np));
  std::vector<double> lc(static_cast<std::size_t>(np) + 1, 0.0);
  lc.back() = std::log(static_cast<double>(nt));
  Tensor log_r = Tensor::from(std::move(lr), {nt + 1});
  Tensor log_c = Tensor::from(std::move(lc), {np + 1});

  Tensor u = Tensor::zeros({nt + 1});
  Tensor v = Tensor::zeros({np + 1});

  // Column violation from raw values; keeps the convergence check off the tape.
  auto col_violation = [&]() {
    double worst = 0.0;
    for (int j = 0; j <= np; ++j) {
      double s = 0.0;
      for (int i = 0; i <= nt; ++i)
        s += std::exp(k.data()[static_cast<std::size_t>(i) * (np + 1) + j] +
                      u.data()[static_cast<std::size_t>(i)] + v.data()[static_cast<std::size_t>(j)]);
      worst = std::max(worst, std::abs(s - std::exp(log_c.data()[static_cast<std::size_t>(j)])));
    }
    return worst;
  };

  int it = 0;
  double viol = 1e300;
  while (it < iters) {
    ++it;
    v = sub(log_c, logsumexp_cols(add_colvec(k, u)));
    u = sub(log_r, logsumexp_rows(add_rowvec(k, v)));
    viol = col_violation();
    if (viol < tol) break;
  }
  plan.log_plan = add_colvec(add_rowvec(k, v), u);
  plan.iterations = it;
  plan.marginal_violation = viol;
  return plan;
}

Tensor MotHead::uncertainty(const ContextFeatures& ctx) const {
  const int nt = ctx.tracklets.rows();
  const int np = ctx.proposals.rows();
  const int d = cfg_.d;

  Tensor real;
  if (nt > 0 && np > 0) {
    std::vector<Tensor> pair_rows;
    pair_rows.reserve(static_cast<std::size_t>(nt));
    for (int i = 0; i < nt; ++i) {
      // [F_t_i broadcast over proposals ; F_p]
      Tensor ti = slice_rows(ctx.tracklets, i, i + 1);
      Tensor ti_rep = matmul(Tensor::full({np, 1}, 1.0), ti);  // [np, d]
      pair_rows.push_back(concat_last({ti_rep, ctx.proposals}));
    }
    Tensor pairs = concat_rows(pair_rows);                      // [nt*np, 2d]
    real = reshape(softplus(u_mlp_.apply(pairs)), {nt, np});
  } else {
    real = Tensor::zeros({nt, np});
  }

  Tensor col = matmul(Tensor::full({nt, 1}, 1.0), reshape(softplus(u_col_raw_), {1, 1}));
  Tensor top = nt > 0 ? concat_last({real, col}) : Tensor::zeros({0, np + 1});
  Tensor bottom = matmul(reshape(softplus(u_row_raw_), {1, 1}), Tensor::full({1, np + 1}, 1.0));
  (void)d;
  return concat_rows({top, bottom});
}

Tensor MotHead::tracking_loss(const TransportPlan& plan, const Tensor& u, const GtAssociation& gt,
                              bool* empty_warning) const {
  if (plan.log_plan.shape() != Shape{gt.n_t + 1, gt.n_p + 1} ||
      u.shape() != plan.log_plan.shape()) {
    throw ShapeError("tracking_loss: plan " + shape_str(plan.log_plan.shape()) + ", U " +
                     shape_str(u.shape()) + " vs GT [" + std::to_string(gt.n_t + 1) + ", " +
                     std::to_string(gt.n_p + 1) + "]");
  }
  if (empty_warning) *empty_warning = false;
  if (gt.n_m == 0) {
    if (empty_warning) *empty_warning = true;
    return Tensor::scalar(0.0);
  }
  std::vector<double> mask(gt.a.begin(), gt.a.end());
  Tensor m = Tensor::from(std::move(mask), plan.log_plan.shape());
  Tensor per_entry = add(mul(neg(plan.log_plan), exp(neg(u))), u);
  return mul_scalar(sum(mul(m, per_entry)), 1.0 / static_cast<double>(gt.n_m));
}

Association MotHead::decode_association(const TransportPlan& plan, double accept_threshold) const {
  Association out;
  const int nt = plan.n_t, np = plan.n_p;
  const auto& lp = plan.log_plan.data();
  auto prob = [&](int i, int j) { return std::exp(lp[static_cast<std::size_t>(i) * (np + 1) + j]); };

  std::vector<int> row_best(static_cast<std::size_t>(nt), -1);
  std::vector<int> col_best(static_cast<std::size_t>(np), -1);
  for (int i = 0; i < nt; ++i) {
    double best = -1.0;
    for (int j = 0; j < np; ++j)
      if (prob(i, j) > best) {
        best = prob(i, j);
        row_best[static_cast<std::size_t>(i)] = j;
      }
  }
  for (int j = 0; j < np; ++j) {
    double best = -1.0;
    for (int i = 0; i < nt; ++i)
      if (prob(i, j) > best) {
        best = prob(i, j);
        col_best[static_cast<std::size_t>(j)] = i;
      }
  }
  std::vector<bool> prop_matched(static_cast<std::size_t>(np), false);
  for (int i = 0; i < nt; ++i) {
    const int j = row_best[static_cast<std::size_t>(i)];
    if (j >= 0 && col_best[static_cast<std::size_t>(j)] == i && prob(i, j) >= accept_threshold) {
      out.matches.push_back({i, j, prob(i, j)});
      prop_matched[static_cast<std::size_t>(j)] = true;
    } else {
      out.unmatched_tracklets.push_back(i);
    }
  }
  for (int j = 0; j < np; ++j)
    if (!prop_matched[static_cast<std::size_t>(j)]) out.unmatched_proposals.push_back(j);
  return out;
}

void push_history(TrackletState& t, const HistStep& step, int t_h) {
  t.history.push_back(step);
  while (static_cast<int>(t.history.size()) > t_h) t.history.pop_front();
}

std::vector<TrackletState> update_track_ids(const Association& assoc,
                                            const std::vector<TrackletState>& tracks,
                                            const std::vector<Detection>& detections,
                                            const std::vector<std::optional<Pose>>& coast_poses,
                                            const TrackUpdateConfig& cfg,
                                            std::int64_t* next_track_id) {
  std::vector<TrackletState> out;
  out.reserve(tracks.size() + assoc.unmatched_proposals.size());

  std::vector<int> match_of(tracks.size(), -1);
  for (const auto& m : assoc.matches) match_of[static_cast<std::size_t>(m.tracklet)] = m.proposal;

  for (std::size_t i = 0; i < tracks.size(); ++i) {
    TrackletState t = tracks[i];
    ++t.age;
    if (match_of[i] >= 0) {
      const Detection& d = detections[static_cast<std::size_t>(match_of[i])];
      t.last_pose = {d.pos[0], d.pos[1], d.heading};
      t.length = d.size[0];
      t.width = d.size[1];
      t.height = d.size[2];
      t.class_id = d.class_id;
      t.score = d.score;
      t.lost_for = 0;
      push_history(t, {true, d.pos[0], d.pos[1], d.heading, d.size[0], d.size[1], d.size[2],
                       d.score},
                   cfg.t_h);
      out.push_back(std::move(t));
    } else {
      ++t.lost_for;
      if (t.lost_for > cfg.max_age) continue;  // retired
      if (coast_poses.size() == tracks.size() && coast_poses[i]) t.last_pose = *coast_poses[i];
      t.score *= cfg.coast_score_decay;
      push_history(t, {false, 0, 0, 0, 0, 0, 0, 0}, cfg.t_h);
      out.push_back(std::move(t));
    }
  }

  for (int j : assoc.unmatched_proposals) {
    const Detection& d = detections[static_cast<std::size_t>(j)];
    TrackletState t;
    t.track_id = static_cast<int>((*next_track_id)++);
    t.agent_id = -1;
    t.class_id = d.class_id;
    t.length = d.size[0];
    t.width = d.size[1];
    t.height = d.size[2];
    t.last_pose = {d.pos[0], d.pos[1], d.heading};
    t.score = d.score;
    t.age = 0;
    t.lost_for = 0;
    push_history(t, {true, d.pos[0], d.pos[1], d.heading, d.size[0], d.size[1], d.size[2], d.score},
                 cfg.t_h);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace trackcast
