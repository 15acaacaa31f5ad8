#pragma once

#include <optional>

#include "trackcast/encoder.hpp"

namespace trackcast {

// Dustbin-augmented log-domain transport plan.
struct TransportPlan {
  Tensor log_plan;  // [(N_t+1) x (N_p+1)]
  int n_t = 0, n_p = 0;
  int iterations = 0;
  double marginal_violation = 0.0;
};

struct Association {
  struct Match {
    int tracklet = 0;
    int proposal = 0;
    double confidence = 0.0;
  };
  std::vector<Match> matches;
  std::vector<int> unmatched_tracklets;
  std::vector<int> unmatched_proposals;
};

class MotHead {
 public:
  MotHead(ParamStore& ps, const ModelConfig& cfg);

  // Scaled dot-product similarity between tracklet and proposal context rows.
  Tensor affinity(const ContextFeatures& ctx) const;  // [N_t, N_p]

  // Alternating log-domain normalization toward marginals (1 for real
  // rows/columns, N_p and N_t for the dustbins). Differentiable through
  // every iteration; stops early once the worst marginal violation is
  // below tol.
  TransportPlan sinkhorn_log(const Tensor& affinity, int iters = 100, double tol = 1e-6) const;

  // Pairwise softplus-MLP uncertainty; dustbin entries come from learned
  // per-side scalars.
  Tensor uncertainty(const ContextFeatures& ctx) const;  // [(N_t+1) x (N_p+1)]

  // Uncertainty-attenuated matching loss over the ground-truth pairs:
  // mean of (-log_plan) * exp(-U) + U. At U == 0 this is the plain
  // matching NLL.
  Tensor tracking_loss(const TransportPlan& plan, const Tensor& u, const GtAssociation& gt,
                       bool* empty_warning = nullptr) const;

  // Mutual argmax over the real block with a probability threshold.
  Association decode_association(const TransportPlan& plan, double accept_threshold = 0.2) const;

  Tensor dustbin_score() const { return z_; }

 private:
  ModelConfig cfg_;
  Tensor z_;                      // learnable dustbin score
  Mlp u_mlp_;                     // [F_t ; F_p] -> raw uncertainty
  Tensor u_row_raw_, u_col_raw_;  // dustbin-side raw scalars
};

struct TrackUpdateConfig {
  int t_h = 4;
  int max_age = 3;
  double dt = 0.5;
  double coast_score_decay = 0.6;
};

// Lifecycle step: matched tracklets adopt the detection pose, unmatched
// tracklets coast along their predicted next pose (when given) and age out,
// unmatched proposals become new tracks with fresh monotonic ids.
std::vector<TrackletState> update_track_ids(
    const Association& assoc, const std::vector<TrackletState>& tracks,
    const std::vector<Detection>& detections,
    const std::vector<std::optional<Pose>>& coast_poses,  // indexed like tracks
    const TrackUpdateConfig& cfg, std::int64_t* next_track_id);

// History helper shared by lifecycle and the trainer's teacher forcing.
void push_history(TrackletState& t, const HistStep& step, int t_h);

}  // namespace trackcast
