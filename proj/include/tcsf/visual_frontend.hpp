#pragma once

#include <utility>
#include <vector>

#include "tcsf/gop_codec.hpp"
#include "tcsf/param_store.hpp"
#include "tcsf/tensor.hpp"

namespace tcsf {

enum class PlaneProvenance { Encoded, Pseudo, ZeroResidual, Zeroed };

const char* provenance_name(PlaneProvenance p);

struct FeatureTriple {
  Tensor a, m, r;  // each [C, H', W']
  PlaneProvenance prov_a, prov_m, prov_r;
};

struct FeatureTimeline {
  std::vector<FeatureTriple> triples;  // one per stored frame
  int sigma = 0;                       // pixels per feature cell
  int feat_h = 0, feat_w = 0;
};

struct VisualConfig {
  int channels = 32;     // C
  int sigma = 4;         // total encoder stride; 1, 2 or 4
  int pseudo_window = 2; // n consecutive appearance maps fed to pseudo motion
  int iframe_mid = 16;   // first-stage width of the appearance encoder
  int pframe_mid = 8;    // first-stage width of the MV/residual encoders
};

// Turns partially decoded records into a fully populated feature timeline:
// encoded appearance at I-frames, warped pseudo appearance at P-frames,
// encoded motion/residual at P-frames, pseudo motion at I-frames.
class VisualFrontend {
 public:
  VisualFrontend(const VisualConfig& cfg, ParamStore& store, Rng& rng);

  const VisualConfig& config() const { return cfg_; }

  Tensor encode_iframe(const uint8_t* pixels, int h, int w) const;
  Tensor encode_motion(const MotionField& mv, int h, int w, int block, int radius) const;
  Tensor encode_residual(const int16_t* residual, int h, int w) const;
  // Returns (motion feature, residual feature).
  std::pair<Tensor, Tensor> encode_pframe(const MotionField& mv, const int16_t* residual, int h,
                                          int w, int block, int radius) const;

  // Batched variants: one graph node per stage for any number of frames.
  Tensor encode_iframes_batch(const std::vector<const uint8_t*>& frames, int h, int w) const;
  Tensor encode_motions_batch(const std::vector<const MotionField*>& mvs, int h, int w, int block,
                              int radius) const;
  Tensor encode_residuals_batch(const std::vector<const int16_t*>& residuals, int h, int w) const;

  // Warps a feature map by a pixel-resolution displacement field (2 x ph x pw);
  // displacements are converted to feature cells with round-half-away-from-zero
  // and looked up with nearest-neighbor, edge-clamped indexing.
  static Tensor pseudo_appearance(const Tensor& a_prev, const std::vector<double>& disp_pixels,
                                  int ph, int pw, int sigma);

  // Channel concat of the window, 1x1 convolution back to C channels, ReLU.
  Tensor pseudo_motion(const std::vector<Tensor>& window) const;

  FeatureTimeline build_feature_timeline(const std::vector<FrameRecord>& records, int h, int w,
                                         int block, int radius, bool zero_pseudo) const;

  // Per-pixel 2-channel displacement plane with each block value broadcast to
  // its pixels.
  static std::vector<double> mv_pixel_field(const MotionField& mv, int h, int w, int block);

 private:
  Tensor encode_stack(const Tensor& input, const std::vector<Tensor>& kernels,
                      const std::vector<Tensor>& biases, const std::vector<int>& strides) const;

  VisualConfig cfg_;
  std::vector<int> if_strides_, pf_strides_;
  std::vector<Tensor> if_k_, if_b_;    // appearance encoder stages
  std::vector<Tensor> mv_k_, mv_b_;    // motion-vector encoder stages
  std::vector<Tensor> res_k_, res_b_;  // residual encoder stages
  Tensor pm_k_, pm_b_;                 // pseudo-motion 1x1 conv
};

}  // namespace tcsf
