#include "tcsf/visual_frontend.hpp"

#include <cmath>

namespace tcsf {

const char* provenance_name(PlaneProvenance p) {
  switch (p) {
    case PlaneProvenance::Encoded: return "encoded";
    case PlaneProvenance::Pseudo: return "pseudo";
    case PlaneProvenance::ZeroResidual: return "zero-residual";
    case PlaneProvenance::Zeroed: return "zeroed";
  }
  return "?";
}

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Per-stage strides multiplying to sigma. Stride-2 stages use 4x4 kernels
// (pad 1) so even sizes halve exactly; stride-1 stages use 3x3 (pad 1).
std::vector<int> stage_strides(int sigma, int stages) {
  std::vector<int> out;
  int remaining = sigma;
  for (int i = 0; i < stages; ++i) {
    if (remaining >= 2) {
      out.push_back(2);
      remaining /= 2;
    } else {
      out.push_back(1);
    }
  }
  if (remaining > 2 || (remaining == 2 && out.back() != 2)) {
    throw ConfigError("sigma " + std::to_string(sigma) + " not reachable with " +
                      std::to_string(stages) + " stages");
  }
  return out;
}

}  // namespace

VisualFrontend::VisualFrontend(const VisualConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
  if (cfg.channels < 1) throw ConfigError("channels must be positive");
  if (cfg.sigma != 1 && cfg.sigma != 2 && cfg.sigma != 4) {
    throw ConfigError("sigma must be 1, 2 or 4");
  }
  if (cfg.pseudo_window < 2) throw ConfigError("pseudo window must be >= 2");

  if_strides_ = stage_strides(cfg.sigma, 3);
  pf_strides_ = stage_strides(cfg.sigma, 2);

  auto add_stage = [&](const std::string& name, int cin, int cout, int stride,
                       std::vector<Tensor>& ks, std::vector<Tensor>& bs) {
    const int k = stride == 2 ? 4 : 3;
    const int64_t n = static_cast<int64_t>(cout) * cin * k * k;
    ks.push_back(store.add(name + ".w", {cout, cin, k, k},
                           he_uniform(rng, n, static_cast<int64_t>(cin) * k * k)));
    bs.push_back(store.add(name + ".b", {cout}, std::vector<double>(cout, 0.0)));
  };

  const int c = cfg.channels;
  add_stage("visual.iframe.conv1", 3, cfg.iframe_mid, if_strides_[0], if_k_, if_b_);
  add_stage("visual.iframe.conv2", cfg.iframe_mid, c, if_strides_[1], if_k_, if_b_);
  // final 1x1 mixing stage
  if_k_.push_back(store.add("visual.iframe.conv3.w", {c, c, 1, 1},
                            he_uniform(rng, static_cast<int64_t>(c) * c, c)));
  if_b_.push_back(store.add("visual.iframe.conv3.b", {c}, std::vector<double>(c, 0.0)));

  add_stage("visual.mv.conv1", 2, cfg.pframe_mid, pf_strides_[0], mv_k_, mv_b_);
  add_stage("visual.mv.conv2", cfg.pframe_mid, c, pf_strides_[1], mv_k_, mv_b_);
  add_stage("visual.residual.conv1", 3, cfg.pframe_mid, pf_strides_[0], res_k_, res_b_);
  add_stage("visual.residual.conv2", cfg.pframe_mid, c, pf_strides_[1], res_k_, res_b_);

  const int cn = c * cfg.pseudo_window;
  pm_k_ = store.add("visual.pseudo_motion.w", {c, cn, 1, 1},
                    he_uniform(rng, static_cast<int64_t>(c) * cn, cn));
  pm_b_ = store.add("visual.pseudo_motion.b", {c}, std::vector<double>(c, 0.0));
}

Tensor VisualFrontend::encode_stack(const Tensor& input, const std::vector<Tensor>& kernels,
                                    const std::vector<Tensor>& biases,
                                    const std::vector<int>& strides) const {
  Tensor x = input;
  for (size_t i = 0; i < kernels.size(); ++i) {
    const int kside = kernels[i].dim(2);
    const int stride = i < strides.size() ? strides[i] : 1;
    const int pad = kside == 1 ? 0 : 1;
    x = relu(conv2d(x, kernels[i], biases[i], stride, pad));
  }
  return x;
}

namespace {

// interleaved uint8 HWC -> planar CHW doubles in [0,1]
void pixels_to_planar(const uint8_t* pixels, int h, int w, double* dst) {
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int64_t p = 0; p < hw; ++p) {
    for (int c = 0; c < 3; ++c) dst[c * hw + p] = pixels[p * 3 + c] / 255.0;
  }
}

void residual_to_planar(const int16_t* residual, int h, int w, double* dst) {
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int64_t p = 0; p < hw; ++p) {
    for (int c = 0; c < 3; ++c) dst[c * hw + p] = residual[p * 3 + c] / 255.0;
  }
}

}  // namespace

Tensor VisualFrontend::encode_iframes_batch(const std::vector<const uint8_t*>& frames, int h,
                                            int w) const {
  if (frames.empty()) throw ShapeError("encode_iframes_batch: no frames");
  const int nb = static_cast<int>(frames.size());
  const int64_t frame_n = static_cast<int64_t>(3) * h * w;
  std::vector<double> vals(static_cast<size_t>(nb) * frame_n);
  for (int i = 0; i < nb; ++i) {
    pixels_to_planar(frames[static_cast<size_t>(i)], h, w, vals.data() + i * frame_n);
  }
  return encode_stack(Tensor::from({nb, 3, h, w}, std::move(vals)), if_k_, if_b_, if_strides_);
}

Tensor VisualFrontend::encode_motions_batch(const std::vector<const MotionField*>& mvs, int h,
                                            int w, int block, int radius) const {
  if (mvs.empty()) throw ShapeError("encode_motions_batch: no fields");
  const int nb = static_cast<int>(mvs.size());
  const int64_t frame_n = static_cast<int64_t>(2) * h * w;
  const double mv_scale = 1.0 / std::max(1, radius);
  std::vector<double> vals(static_cast<size_t>(nb) * frame_n);
  for (int i = 0; i < nb; ++i) {
    std::vector<double> field = mv_pixel_field(*mvs[static_cast<size_t>(i)], h, w, block);
    double* dst = vals.data() + i * frame_n;
    for (int64_t j = 0; j < frame_n; ++j) dst[j] = field[static_cast<size_t>(j)] * mv_scale;
  }
  return encode_stack(Tensor::from({nb, 2, h, w}, std::move(vals)), mv_k_, mv_b_, pf_strides_);
}

Tensor VisualFrontend::encode_residuals_batch(const std::vector<const int16_t*>& residuals, int h,
                                              int w) const {
  if (residuals.empty()) throw ShapeError("encode_residuals_batch: no residuals");
  const int nb = static_cast<int>(residuals.size());
  const int64_t frame_n = static_cast<int64_t>(3) * h * w;
  std::vector<double> vals(static_cast<size_t>(nb) * frame_n);
  for (int i = 0; i < nb; ++i) {
    residual_to_planar(residuals[static_cast<size_t>(i)], h, w, vals.data() + i * frame_n);
  }
  return encode_stack(Tensor::from({nb, 3, h, w}, std::move(vals)), res_k_, res_b_, pf_strides_);
}

Tensor VisualFrontend::encode_iframe(const uint8_t* pixels, int h, int w) const {
  std::vector<double> vals(static_cast<size_t>(3) * h * w);
  pixels_to_planar(pixels, h, w, vals.data());
  return encode_stack(Tensor::from({3, h, w}, std::move(vals)), if_k_, if_b_, if_strides_);
}

Tensor VisualFrontend::encode_motion(const MotionField& mv, int h, int w, int block,
                                     int radius) const {
  std::vector<double> field = mv_pixel_field(mv, h, w, block);
  const double mv_scale = 1.0 / std::max(1, radius);
  for (double& v : field) v *= mv_scale;
  return encode_stack(Tensor::from({2, h, w}, std::move(field)), mv_k_, mv_b_, pf_strides_);
}

Tensor VisualFrontend::encode_residual(const int16_t* residual, int h, int w) const {
  std::vector<double> rv(static_cast<size_t>(3) * h * w);
  residual_to_planar(residual, h, w, rv.data());
  return encode_stack(Tensor::from({3, h, w}, std::move(rv)), res_k_, res_b_, pf_strides_);
}

std::pair<Tensor, Tensor> VisualFrontend::encode_pframe(const MotionField& mv,
                                                        const int16_t* residual, int h, int w,
                                                        int block, int radius) const {
  return {encode_motion(mv, h, w, block, radius), encode_residual(residual, h, w)};
}

std::vector<double> VisualFrontend::mv_pixel_field(const MotionField& mv, int h, int w,
                                                   int block) {
  if (mv.blocks_y != h / block || mv.blocks_x != w / block) {
    throw ShapeError("mv_pixel_field: motion field does not match geometry");
  }
  std::vector<double> out(static_cast<size_t>(2) * h * w);
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int by = y / block, bx = x / block;
      out[static_cast<size_t>(y) * w + x] = mv.dy(by, bx);
      out[static_cast<size_t>(hw + y * w + x)] = mv.dx(by, bx);
    }
  }
  return out;
}

Tensor VisualFrontend::pseudo_appearance(const Tensor& a_prev, const std::vector<double>& disp,
                                         int ph, int pw, int sigma) {
  if (a_prev.rank() != 3) throw ShapeError("pseudo_appearance: feature map must be [C,H',W']");
  if (static_cast<int64_t>(disp.size()) != static_cast<int64_t>(2) * ph * pw) {
    throw ShapeError("pseudo_appearance: displacement field size mismatch");
  }
  const int fh = a_prev.dim(1), fw = a_prev.dim(2);
  const int64_t phw = static_cast<int64_t>(ph) * pw;
  std::vector<int> src(static_cast<size_t>(fh) * fw);
  for (int y = 0; y < fh; ++y) {
    for (int x = 0; x < fw; ++x) {
      const int py = clampi(y * sigma, 0, ph - 1);
      const int px = clampi(x * sigma, 0, pw - 1);
      const double dy = disp[static_cast<size_t>(py) * pw + px];
      const double dx = disp[static_cast<size_t>(phw + py * pw + px)];
      const int fy = static_cast<int>(std::llround(dy / sigma));
      const int fx = static_cast<int>(std::llround(dx / sigma));
      const int sy = clampi(y + fy, 0, fh - 1);
      const int sx = clampi(x + fx, 0, fw - 1);
      src[static_cast<size_t>(y) * fw + x] = sy * fw + sx;
    }
  }
  return gather_cells(a_prev, src);
}

Tensor VisualFrontend::pseudo_motion(const std::vector<Tensor>& window) const {
  if (window.empty()) throw ShapeError("pseudo_motion: empty window");
  std::vector<Tensor> padded(window.begin(), window.end());
  while (static_cast<int>(padded.size()) < cfg_.pseudo_window) padded.push_back(padded.back());
  if (static_cast<int>(padded.size()) > cfg_.pseudo_window) {
    padded.resize(static_cast<size_t>(cfg_.pseudo_window));
  }
  return relu(conv2d(concat(padded, 0), pm_k_, pm_b_, 1, 0));
}

FeatureTimeline VisualFrontend::build_feature_timeline(const std::vector<FrameRecord>& records,
                                                       int h, int w, int block, int radius,
                                                       bool zero_pseudo) const {
  if (records.empty()) throw ShapeError("build_feature_timeline: no records");
  const int t_total = static_cast<int>(records.size());
  FeatureTimeline tl;
  tl.sigma = cfg_.sigma;
  tl.feat_h = h / cfg_.sigma;
  tl.feat_w = w / cfg_.sigma;
  tl.triples.resize(static_cast<size_t>(t_total));
  const Shape plane_shape{cfg_.channels, tl.feat_h, tl.feat_w};

  std::vector<int> i_at, p_at;
  for (int t = 0; t < t_total; ++t) {
    (records[static_cast<size_t>(t)].kind == FrameRecord::Kind::I ? i_at : p_at).push_back(t);
  }

  // encoded planes, one batched stack per encoder family
  std::vector<const uint8_t*> i_pixels;
  for (int t : i_at) i_pixels.push_back(records[static_cast<size_t>(t)].i_pixels);
  Tensor a_i = encode_iframes_batch(i_pixels, h, w);
  for (size_t i = 0; i < i_at.size(); ++i) {
    auto& tri = tl.triples[static_cast<size_t>(i_at[i])];
    tri.a = reshape(slice(a_i, 0, static_cast<int>(i), 1), plane_shape);
    tri.prov_a = PlaneProvenance::Encoded;
  }
  if (!p_at.empty()) {
    std::vector<const MotionField*> mvs;
    std::vector<const int16_t*> residuals;
    for (int t : p_at) {
      mvs.push_back(records[static_cast<size_t>(t)].mv);
      residuals.push_back(records[static_cast<size_t>(t)].residual);
    }
    Tensor m_p = encode_motions_batch(mvs, h, w, block, radius);
    Tensor r_p = encode_residuals_batch(residuals, h, w);
    for (size_t i = 0; i < p_at.size(); ++i) {
      auto& tri = tl.triples[static_cast<size_t>(p_at[i])];
      tri.m = reshape(slice(m_p, 0, static_cast<int>(i), 1), plane_shape);
      tri.r = reshape(slice(r_p, 0, static_cast<int>(i), 1), plane_shape);
      tri.prov_m = PlaneProvenance::Encoded;
      tri.prov_r = PlaneProvenance::Encoded;
    }
  }

  // appearance at P-frames: chained warp from the GOP's I-frame (or zeroed)
  Tensor zero_plane;
  for (int t : p_at) {
    auto& tri = tl.triples[static_cast<size_t>(t)];
    if (zero_pseudo) {
      if (!zero_plane.defined()) zero_plane = Tensor::zeros(plane_shape);
      tri.a = zero_plane;
      tri.prov_a = PlaneProvenance::Zeroed;
    } else {
      const FrameRecord& rec = records[static_cast<size_t>(t)];
      std::vector<double> disp = mv_pixel_field(*rec.mv, h, w, block);
      tri.a = pseudo_appearance(tl.triples[static_cast<size_t>(t) - 1].a, disp, h, w, cfg_.sigma);
      tri.prov_a = PlaneProvenance::Pseudo;
    }
  }

  // I-frames: pseudo motion over the following appearance maps, residual
  // feature from an all-zero residual plane.
  Tensor zero_residual_feat;
  if (!i_at.empty()) {
    std::vector<int16_t> zero_res(static_cast<size_t>(h) * w * 3, 0);
    zero_residual_feat = encode_residual(zero_res.data(), h, w);
  }
  std::vector<Tensor> windows_cat;
  if (!zero_pseudo) {
    for (int t : i_at) {
      std::vector<Tensor> window;
      for (int k = 0; k < cfg_.pseudo_window; ++k) {
        window.push_back(tl.triples[static_cast<size_t>(std::min(t + k, t_total - 1))].a);
      }
      windows_cat.push_back(concat(window, 0));  // [C*n, H', W']
    }
  }
  Tensor m_i;
  if (!windows_cat.empty()) {
    m_i = relu(conv2d(stack_rows(windows_cat), pm_k_, pm_b_, 1, 0));  // [Ni, C, H', W']
  }
  for (size_t i = 0; i < i_at.size(); ++i) {
    auto& tri = tl.triples[static_cast<size_t>(i_at[i])];
    if (zero_pseudo) {
      if (!zero_plane.defined()) zero_plane = Tensor::zeros(plane_shape);
      tri.m = zero_plane;
      tri.prov_m = PlaneProvenance::Zeroed;
    } else {
      tri.m = reshape(slice(m_i, 0, static_cast<int>(i), 1), plane_shape);
      tri.prov_m = PlaneProvenance::Pseudo;
    }
    tri.r = zero_residual_feat;
    tri.prov_r = PlaneProvenance::ZeroResidual;
  }
  return tl;
}

}  // namespace tcsf
