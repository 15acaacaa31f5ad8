#pragma once

#include <map>

#include "trackcast/mot_head.hpp"

namespace trackcast {

// Per-class endpoint anchors in the agent frame.
struct AnchorSet {
  int k = 0;
  std::map<int, std::vector<Vec2>> per_class;

  const std::vector<Vec2>& anchors_for(int class_id) const;
  nlohmann::json to_json() const;
  static AnchorSet from_json(const nlohmann::json& j);
};

// Seeded k-means (50 Lloyd iterations) over ground-truth trajectory
// endpoints expressed in each agent's frame at prediction time.
AnchorSet fit_anchors(const std::map<int, std::vector<Vec2>>& endpoints_per_class, int k,
                      std::uint64_t seed);
// Endpoint gathering from rendered scenes (classes recovered from sourced
// detections).
std::map<int, std::vector<Vec2>> collect_anchor_endpoints(
    const std::vector<std::vector<SceneFrame>>& scenes, int horizon, int n_classes);

struct GMMPrediction {
  int n = 0, k = 0, t = 0;
  Tensor mu;         // [n, k*t*2], agent frame
  Tensor sigma;      // [n, k*t*2], >= sigma_min
  Tensor mode_logp;  // [n, k]

  double mu_at(int i, int mode, int step, int dim) const {
    return mu.data()[static_cast<std::size_t>(i) * (k * t * 2) + (mode * t + step) * 2 + dim];
  }
  double sigma_at(int i, int mode, int step, int dim) const {
    return sigma.data()[static_cast<std::size_t>(i) * (k * t * 2) + (mode * t + step) * 2 + dim];
  }
  double mode_prob(int i, int mode) const {
    return std::exp(mode_logp.data()[static_cast<std::size_t>(i) * k + mode]);
  }
  int top_mode(int i) const;
};

// Agent-frame ground-truth futures with validity.
struct TrajectoryTargets {
  int n = 0, t = 0;
  std::vector<double> xy;           // [n*t*2]
  std::vector<std::uint8_t> valid;  // [n*t]
};

class Predictor {
 public:
  Predictor(ParamStore& ps, const ModelConfig& cfg);

  struct BranchInput {
    Tensor ctx;                      // [N, D]
    std::vector<Tensor> extra_keys;  // per agent, [m_i, D] temporal keys (may be empty)
    std::vector<int> class_ids;      // per agent
  };

  // Auxiliary features: the matched tracklet's overlapping predicted steps,
  // re-expressed in the proposal's frame, sinusoid-encoded and projected.
  // aux[i][mode] is [T_f, D]; unmatched proposals get the learned null token.
  std::vector<std::vector<Tensor>> aux_features(const GMMPrediction& trk_pred,
                                                const Association& assoc,
                                                const std::vector<Pose>& trk_poses,
                                                const std::vector<Pose>& prop_poses) const;

  // Full decoder stack. horizon = T_f for the proposal branch, T_f + 1 for
  // the tracklet branch; aux enables the dual-stream fusion stage.
  GMMPrediction predict_branch(const BranchInput& in, const AnchorSet& anchors, int horizon,
                               const std::vector<std::vector<Tensor>>* aux,
                               bool tracklet_branch) const;

  // Winner-take-all surrogate of the mixture NLL (closest-endpoint mode,
  // diagonal Gaussians, mode classification term). The full mixture
  // log-sum-exp is available behind the flag.
  Tensor gmm_nll(const GMMPrediction& pred, const TrajectoryTargets& gt,
                 bool full_mixture = false) const;

  Tensor prediction_loss(const GMMPrediction& prop_pred, const GMMPrediction& trk_pred,
                         const TrajectoryTargets& gt_p, const TrajectoryTargets& gt_t) const;

  // Exposed for tests.
  Tensor phi(const Tensor& points) const;  // [R, 2] -> [R, D]
  Tensor build_queries(const std::vector<Vec2>& anchors, const Tensor* prev_endpoints,
                       bool tracklet_branch) const;  // [K, D]
  // One agent's queries attend to their per-mode forecast keys, residual
  // only (an exact no-op while the value projection is zero).
  Tensor dual_stream_fuse(int layer, const Tensor& queries,
                          const std::vector<Tensor>& keys_per_mode) const;  // [K, D]
  Tensor null_token() const { return null_token_; }

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Tensor base_query_p_, base_query_t_;  // [K, D]
  Mlp phi_mlp_, aux_mlp_;
  Tensor null_token_;  // [D]
  struct DecoderLayer {
    Mha ctx_attn, mode_attn, social_attn, aux_attn;
    LayerNormParams ln_ctx, ln_mode, ln_social;
  };
  std::vector<DecoderLayer> layers_;
  Mlp mu_head_, sigma_head_, mode_head_;

  Tensor head_mu(const Tensor& q, int horizon) const;     // [K, horizon*2], cumulative
  Tensor head_sigma(const Tensor& q, int horizon) const;  // [K, horizon*2]
};

}  // namespace trackcast
