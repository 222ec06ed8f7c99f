#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "tcsf/attention_fusion.hpp"
#include "tcsf/grounding_head.hpp"
#include "tcsf/param_store.hpp"
#include "tcsf/text_encoder.hpp"
#include "tcsf/visual_frontend.hpp"

namespace tcsf {

struct AblationFlags {
  bool no_pseudo = false;
  bool no_spatial_attn = false;
  bool no_temporal_attn = false;
  bool no_query_enhance = false;
  bool no_noun = false;
  double fixed_beta = -1.0;  // < 0: learned balance

  bool beta_fixed() const { return fixed_beta >= 0.0; }
};

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 300;
  int gru_hidden = 512;
  int attn_heads = 8;
  int attn_dim = 128;
  int model_dim = 64;  // d
  int channels = 32;   // C
  int sigma = 4;
  int pseudo_n = 2;
  int window_k = 7;
  int sa_mid = 6;
  int qe_hidden = 16;
  int beta_hidden = 16;
  int head_hidden = 32;
  int iframe_mid = 16;
  int pframe_mid = 8;
  bool sliding_windows = false;
  bool soft_labels = false;
  AblationFlags ablate;
};

struct SampleInput {
  const std::vector<FrameRecord>* records = nullptr;
  int h = 0, w = 0, block = 0, radius = 0;
  const std::vector<int>* token_ids = nullptr;
  const std::vector<uint8_t>* noun_mask = nullptr;
};

// Optional diagnostics captured during a forward pass.
struct ForwardAux {
  FeatureTimeline timeline;
  Tensor spatial_maps[3];                   // per branch, [T,1,H',W']
  std::vector<Tensor> temporal_weights[3];  // per window, [K]
  std::vector<double> betas;                // per frame
  Tensor enhance_maps[2];                   // appearance/motion, [T, H'*W']
};

struct ForwardResult {
  MomentScores scores;
  Tensor reg, guide, total;  // defined only when ground truth was supplied
};

class TcsfModel {
 public:
  TcsfModel(const ModelConfig& cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  const TextEncoder& text() const { return *text_; }
  const VisualFrontend& visual() const { return *visual_; }
  const AttentionFusion& fusion() const { return *fusion_; }
  const GroundingHead& head() const { return *head_; }

  // gt: (start, end) frame indices, enables loss computation.
  ForwardResult forward(const SampleInput& in, const std::pair<int, int>* gt, double alpha,
                        ForwardAux* aux = nullptr) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
  std::unique_ptr<TextEncoder> text_;
  std::unique_ptr<VisualFrontend> visual_;
  std::unique_ptr<AttentionFusion> fusion_;
  std::unique_ptr<GroundingHead> head_;
};

}  // namespace tcsf
