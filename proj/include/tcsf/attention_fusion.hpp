#pragma once

#include <utility>
#include <vector>

#include "tcsf/param_store.hpp"
#include "tcsf/tensor.hpp"

namespace tcsf {

enum class Branch { Appearance = 0, Motion = 1, Residual = 2 };

struct FusionConfig {
  int channels = 32;   // C
  int model_dim = 64;  // d
  int window = 7;      // K consecutive frames per temporal window
  int sa_mid = 6;      // spatial-attention conv width
  int qe_hidden = 16;  // query-enhancement projection width
  int beta_hidden = 16;
  bool sliding_windows = false;  // default: non-overlapping tiling
};

// Three-branch spatial attention, windowed temporal attention, query-guided
// enhancement and residual-guided adaptive fusion. The *_batch entry points
// operate on a whole timeline [T,C,H',W'] at once; the single-frame forms
// below are the same computation on a batch of one.
class AttentionFusion {
 public:
  AttentionFusion(const FusionConfig& cfg, ParamStore& store, Rng& rng);

  const FusionConfig& config() const { return cfg_; }

  // --- batched over the frame axis ---
  Tensor spatial_attention_batch(const Tensor& planes, const Tensor& noun_feat, Branch branch,
                                 bool use_noun = true) const;
  Tensor spatial_attention_map_batch(const Tensor& planes, const Tensor& noun_feat, Branch branch,
                                     bool use_noun = true) const;  // [T,1,H,W]
  // Windows tile [0,T) consecutively (or slide when configured); returns the
  // reweighted planes; per-window gate vectors go to *weights_out.
  Tensor temporal_attention_batch(const Tensor& planes, Branch branch,
                                  std::vector<Tensor>* weights_out = nullptr) const;
  // (pooled features [T,d], spatial attention [T,P]); uniform=true bypasses
  // the word conditioning with the uniform map.
  std::pair<Tensor, Tensor> query_guided_enhance_batch(const Tensor& planes,
                                                       const Tensor& word_feats, Branch branch,
                                                       bool uniform = false) const;
  Tensor residual_balance_batch(const Tensor& planes) const;  // [T], each in (0,1)
  // f_v = beta * W3 f_a + (1 - beta) * W4 f_m, row-wise
  Tensor fuse_batch(const Tensor& f_a, const Tensor& f_m, const Tensor& beta) const;
  Tensor multimodal_batch(const Tensor& f_v, const Tensor& text_term) const;  // [T,d]

  // --- single-frame forms ---
  Tensor spatial_attention(const Tensor& plane, const Tensor& noun_feat, Branch branch,
                           bool use_noun = true) const;
  Tensor spatial_attention_map(const Tensor& plane, const Tensor& noun_feat, Branch branch,
                               bool use_noun = true) const;
  // The window may be shorter than K (padded internally by repeating the last
  // plane); returns weighted planes and the gate vector [K].
  std::pair<std::vector<Tensor>, Tensor> temporal_attention(const std::vector<Tensor>& window,
                                                            Branch branch) const;
  std::pair<Tensor, Tensor> query_guided_enhance(const Tensor& plane, const Tensor& word_feats,
                                                 Branch branch, bool uniform = false) const;
  Tensor residual_balance(const Tensor& f_r) const;  // [1]
  Tensor fuse_motion_appearance(const Tensor& f_a, const Tensor& f_m, const Tensor& beta) const;
  Tensor multimodal_fuse(const Tensor& f_v, const Tensor& word_mean, const Tensor& q_global) const;
  Tensor multimodal_text_term(const Tensor& word_mean, const Tensor& q_global) const;
  Tensor multimodal_fuse_with_text_term(const Tensor& f_v, const Tensor& text_term) const;

 private:
  struct SpatialParams {
    Tensor noun_w, noun_b;  // [d,C], [C]
    Tensor k1, b1, k2, b2, k3, b3;
  };
  struct TemporalParams {
    Tensor w_inner, b_inner;  // FC2 in the gate stack
    Tensor w_outer, b_outer;  // FC1
  };
  struct EnhanceParams {
    Tensor w1;            // [C, qe]
    Tensor w2;            // [d, qe]
    Tensor b0;            // [qe]
    Tensor w_row;         // [qe, 1]
    Tensor w_out, b_out;  // [C, d], [d]
  };

  Tensor window_gate(const Tensor& padded_stats, Branch branch) const;  // [K] -> [K]

  FusionConfig cfg_;
  SpatialParams sp_[3];
  TemporalParams tp_[3];
  EnhanceParams ep_[2];
  Tensor beta_w1_, beta_b1_, beta_w2_, beta_b2_;
  Tensor w3_, w4_;       // [d, d]
  Tensor w5_, w6_, w7_;  // [d, d]
};

}  // namespace tcsf
