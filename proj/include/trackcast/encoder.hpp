#pragma once

#include <deque>
#include <utility>
#include <vector>

#include "trackcast/nn.hpp"
#include "trackcast/scenario.hpp"

namespace trackcast {

struct ModelConfig {
  int d = 64;        // latent feature width
  int hidden = 64;   // MLP hidden width
  int heads = 4;
  int l_int = 2;     // interaction blocks
  int l_dec = 2;     // decoder layers
  int k_modes = 6;
  int t_h = 4;       // history frames
  int t_f = 6;       // prediction horizon (frames)
  int n_classes = 3;
  double sigma_min = 0.01;
  double dt = 0.5;
  bool stpe_literal = false;      // raw displacement instead of query-frame rotation
  bool full_mixture_nll = false;  // log-sum-exp mixture NLL instead of winner-take-all
  int sinkhorn_iters = 100;
  double sinkhorn_tol = 1e-6;
  double accept_threshold = 0.2;  // association decode probability cutoff
  int max_age = 3;                // coasting frames before retirement
  int memory_frames = 2;          // F: memory bank length
  int memory_per_slot = 16;       // N: stored features per slot
  double neighbor_radius = 0.0;   // attention neighborhood; <= 0 attends all
  double stpe_range = 20.0;       // radial compression scale for pair displacements
  double coast_score_decay = 0.6; // confidence multiplier per coasted frame

  int attr_dim() const { return 7 + n_classes; }      // l,w,h, one-hot, score, dx,dy,dyaw
  int trk_attr_dim() const { return attr_dim() + 2; }  // + staleness, history coverage
  int hist_attr_dim() const { return 8; }              // rel x,y,yaw, l,w,h, score, t offset
};

struct HistStep {
  bool valid = false;
  double x = 0.0, y = 0.0, heading = 0.0;  // global
  double l = 0.0, w = 0.0, h = 0.0, score = 0.0;
};

struct TrackletState {
  int track_id = 0;
  int agent_id = -1;  // source agent under teacher forcing, -1 otherwise
  int class_id = 0;
  double length = 0.0, width = 0.0, height = 0.0;
  Tensor latent;                 // [D]; last context feature
  std::deque<HistStep> history;  // oldest -> newest, newest is the current pose
  int age = 0;
  int lost_for = 0;
  Pose last_pose;
  double score = 0.0;  // last matched detection score
};

struct MemorySlot {
  Pose ego;  // pose the stored features were computed under
  std::vector<std::pair<int, Tensor>> entries;  // (track_id, feature [D])
};

// FIFO ring of per-frame feature slots.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(int capacity, int per_slot) : capacity_(capacity), per_slot_(per_slot) {}

  void push(MemorySlot slot);
  int size() const { return static_cast<int>(slots_.size()); }
  const MemorySlot& slot(int i) const { return slots_[static_cast<std::size_t>(i)]; }
  int capacity() const { return capacity_; }
  int per_slot() const { return per_slot_; }
  void clear() { slots_.clear(); }
  bool empty() const { return slots_.empty(); }

 private:
  std::deque<MemorySlot> slots_;
  int capacity_ = 0;
  int per_slot_ = 0;
};

struct ContextFeatures {
  Tensor proposals;  // [N_p, D]
  Tensor tracklets;  // [N_t, D]
};

class Encoder {
 public:
  Encoder(ParamStore& ps, const ModelConfig& cfg);

  // Semantic MLP encoding of the current detections.
  Tensor detection_features(const std::vector<Detection>& dets) const;  // [N_p, D]

  struct TrackletFeatures {
    Tensor base;                    // [N_t, D]
    std::vector<Tensor> hist_rows;  // per tracklet, [n_valid, D] history features
  };
  // MLP(tau) plus cross attention over the valid history rows.
  TrackletFeatures tracklet_features(const std::vector<TrackletState>& tracks) const;

  // Ego-difference affine re-alignment of one stored feature (alpha/beta
  // from an MLP of the pose delta; identity at zero by construction).
  Tensor align_entry(const Tensor& feature, const Pose& slot_ego, const Pose& now_ego) const;

  // base + per-track cross attention over that track's aligned memory.
  // gates[i] == 0 skips memory for tracklet i (scheduled sampling).
  Tensor fuse_memory(const Tensor& base, const std::vector<TrackletState>& tracks,
                     const MemoryBank& bank, const Pose& now_ego,
                     const std::vector<std::uint8_t>* gates = nullptr) const;

  // Pairwise relative pose embedding; key pose expressed in the query
  // object's frame unless stpe_literal is set.
  Tensor stpe(const Pose& query, const Pose& key) const;  // [1, D]

  // Iterated cross/self attention with STPE-offset keys and values.
  ContextFeatures interact(const Tensor& fp, const Tensor& ft,
                           const std::vector<Pose>& prop_poses,
                           const std::vector<Pose>& trk_poses, bool use_stpe = true) const;

  // Append one slot holding the matched tracklets' context rows, capped at
  // the bank's per-slot limit by detection score.
  void memory_update(MemoryBank& bank, const Tensor& trk_ctx,
                     const std::vector<TrackletState>& tracks,
                     const std::vector<int>& matched_rows, const std::vector<double>& match_scores,
                     const Pose& now_ego) const;

  const ModelConfig& config() const { return cfg_; }

  // Attribute vectors (exposed for tests).
  std::vector<double> det_attributes(const Detection& det) const;
  std::vector<double> trk_attributes(const TrackletState& t) const;

 private:
  ModelConfig cfg_;
  Mlp det_mlp_, trk_mlp_, hist_mlp_, ego_mlp_, stpe_mlp_;
  Mha hist_attn_, mem_attn_;
  struct InteractBlock {
    Mha prop_cross, prop_self, trk_cross, trk_self;
    LayerNormParams ln_pc, ln_ps, ln_tc, ln_ts;
  };
  std::vector<InteractBlock> blocks_;

  Tensor attended_rows(const Mha& attn, const Tensor& queries, const Tensor& feats,
                       const std::vector<Pose>& q_poses, const std::vector<Pose>& k_poses,
                       bool use_stpe) const;
};

}  // namespace trackcast
