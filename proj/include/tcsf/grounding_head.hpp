#pragma once

#include <utility>
#include <vector>

#include "tcsf/param_store.hpp"
#include "tcsf/tensor.hpp"

namespace tcsf {

struct HeadConfig {
  int model_dim = 64;
  int hidden = 32;
  bool soft_labels = false;  // triangular boundary labels instead of one-hot
};

struct MomentScores {
  Tensor gamma;    // [T], softmax-normalized
  Tensor p_start;  // [T], each in (0,1)
  Tensor p_end;    // [T]
};

struct Candidate {
  int s, e;
  double score;
};

// gamma = softmax_t(MLP1(o_t)); (p_s, p_e) = sigmoid(MLP_reg(gamma_t * o_t)).
class GroundingHead {
 public:
  GroundingHead(const HeadConfig& cfg, ParamStore& store, Rng& rng);

  const HeadConfig& config() const { return cfg_; }

  MomentScores score(const Tensor& o_mat) const;  // o: [T, d]
  MomentScores score(const std::vector<Tensor>& o_seq) const;

 private:
  HeadConfig cfg_;
  Tensor g_w1_, g_b1_, g_w2_, g_b2_;  // MLP1: d -> hidden -> 1
  Tensor r_w1_, r_b1_, r_w2_, r_b2_;  // MLP_reg: d -> hidden -> 2
};

// Boundary labels for frame index `gt` over T frames. Hard one-hot by
// default; soft mode uses a width-2 triangle around the boundary.
std::vector<double> boundary_labels(int t_total, int gt, bool soft);

// Mean binary cross entropy over both boundary heads, probabilities clamped
// to [1e-7, 1 - 1e-7].
Tensor reg_loss(const Tensor& p_start, const Tensor& p_end, int gt_start, int gt_end,
                bool soft_labels = false);

// -sum(mask * log gamma) / sum(mask); throws on an all-zero mask.
Tensor guide_loss(const Tensor& gamma, const std::vector<uint8_t>& in_span_mask);

Tensor total_loss(const Tensor& reg, const Tensor& guide, double alpha);

std::vector<uint8_t> span_mask(int t_total, int gt_start, int gt_end);

// IoU of inclusive integer intervals.
double temporal_iou(int s1, int e1, int s2, int e2);

// score(s,e) = p_s[s] * p_e[e] * mean(gamma[s..e]); greedy NMS suppressing
// IoU >= nms_threshold; at most top_n survivors, best first.
std::vector<Candidate> generate_candidates(const std::vector<double>& p_start,
                                           const std::vector<double>& p_end,
                                           const std::vector<double>& gamma, int top_n,
                                           double nms_threshold);

// Fraction of samples whose first n candidates contain one with IoU > m.
double recall_at_n(const std::vector<std::vector<Candidate>>& per_sample_candidates,
                   const std::vector<std::pair<int, int>>& ground_truths, int n, double m);

}  // namespace tcsf
