#include "tcsf/attention_fusion.hpp"

#include <cmath>

namespace tcsf {

namespace {

Tensor as_batch(const Tensor& plane) {
  if (plane.rank() != 3) throw ShapeError("expected a [C,H,W] plane");
  return reshape(plane, {1, plane.dim(0), plane.dim(1), plane.dim(2)});
}

Tensor un_batch(const Tensor& planes) {
  return reshape(planes, {planes.dim(1), planes.dim(2), planes.dim(3)});
}

}  // namespace

AttentionFusion::AttentionFusion(const FusionConfig& cfg, ParamStore& store, Rng& rng)
    : cfg_(cfg) {
  if (cfg.window < 1) throw ConfigError("temporal window must be >= 1");
  const int c = cfg.channels, d = cfg.model_dim, mid = cfg.sa_mid, k = cfg.window;
  const int qe = cfg.qe_hidden, bh = cfg.beta_hidden;

  static const char* kBranch[3] = {"a", "m", "r"};
  for (int b = 0; b < 3; ++b) {
    const std::string p = std::string("fusion.spatial.") + kBranch[b];
    sp_[b].noun_w = store.add(p + ".noun_w", {d, c}, xavier_uniform(rng, static_cast<int64_t>(d) * c, d, c));
    sp_[b].noun_b = store.add(p + ".noun_b", {c}, std::vector<double>(c, 0.0));
    sp_[b].k1 = store.add(p + ".conv1.w", {mid, c, 3, 3},
                          he_uniform(rng, static_cast<int64_t>(mid) * c * 9, static_cast<int64_t>(c) * 9));
    sp_[b].b1 = store.add(p + ".conv1.b", {mid}, std::vector<double>(mid, 0.0));
    sp_[b].k2 = store.add(p + ".conv2.w", {mid, mid, 3, 3},
                          he_uniform(rng, static_cast<int64_t>(mid) * mid * 9, static_cast<int64_t>(mid) * 9));
    sp_[b].b2 = store.add(p + ".conv2.b", {mid}, std::vector<double>(mid, 0.0));
    sp_[b].k3 = store.add(p + ".conv3.w", {1, mid, 1, 1}, he_uniform(rng, mid, mid));
    sp_[b].b3 = store.add(p + ".conv3.b", {1}, std::vector<double>(1, 0.0));

    const std::string tq = std::string("fusion.temporal.") + kBranch[b];
    tp_[b].w_inner = store.add(tq + ".fc2.w", {k, k}, xavier_uniform(rng, static_cast<int64_t>(k) * k, k, k));
    tp_[b].b_inner = store.add(tq + ".fc2.b", {k}, std::vector<double>(k, 0.0));
    tp_[b].w_outer = store.add(tq + ".fc1.w", {k, k}, xavier_uniform(rng, static_cast<int64_t>(k) * k, k, k));
    tp_[b].b_outer = store.add(tq + ".fc1.b", {k}, std::vector<double>(k, 0.0));
  }

  static const char* kEnh[2] = {"a", "m"};
  for (int b = 0; b < 2; ++b) {
    const std::string p = std::string("fusion.enhance.") + kEnh[b];
    ep_[b].w1 = store.add(p + ".w1", {c, qe}, xavier_uniform(rng, static_cast<int64_t>(c) * qe, c, qe));
    ep_[b].w2 = store.add(p + ".w2", {d, qe}, xavier_uniform(rng, static_cast<int64_t>(d) * qe, d, qe));
    ep_[b].b0 = store.add(p + ".b0", {qe}, std::vector<double>(qe, 0.0));
    ep_[b].w_row = store.add(p + ".w_row", {qe, 1}, xavier_uniform(rng, qe, qe, 1));
    ep_[b].w_out = store.add(p + ".w_out", {c, d}, xavier_uniform(rng, static_cast<int64_t>(c) * d, c, d));
    ep_[b].b_out = store.add(p + ".b_out", {d}, std::vector<double>(d, 0.0));
  }

  beta_w1_ = store.add("fusion.beta.fc1.w", {c, bh}, xavier_uniform(rng, static_cast<int64_t>(c) * bh, c, bh));
  beta_b1_ = store.add("fusion.beta.fc1.b", {bh}, std::vector<double>(bh, 0.0));
  beta_w2_ = store.add("fusion.beta.fc2.w", {bh, 1}, xavier_uniform(rng, bh, bh, 1));
  beta_b2_ = store.add("fusion.beta.fc2.b", {1}, std::vector<double>(1, 0.0));

  auto square = [&](const std::string& name) {
    return store.add(name, {d, d}, xavier_uniform(rng, static_cast<int64_t>(d) * d, d, d));
  };
  w3_ = square("fusion.w3");
  w4_ = square("fusion.w4");
  w5_ = square("fusion.w5");
  w6_ = square("fusion.w6");
  w7_ = square("fusion.w7");
}

// ---------------------------------------------------------------------------
// Spatial attention
// ---------------------------------------------------------------------------

Tensor AttentionFusion::spatial_attention_map_batch(const Tensor& planes, const Tensor& noun_feat,
                                                    Branch branch, bool use_noun) const {
  if (planes.rank() != 4) throw ShapeError("spatial_attention: expected [T,C,H,W]");
  const auto& p = sp_[static_cast<int>(branch)];
  Tensor x = planes;
  if (use_noun) {
    Tensor g = linear(noun_feat, p.noun_w, p.noun_b);  // [C]
    x = add_channel_bias(planes, g);
  }
  Tensor h = relu(conv2d(x, p.k1, p.b1, 1, 1));
  h = relu(conv2d(h, p.k2, p.b2, 1, 1));
  return sigmoid(conv2d(h, p.k3, p.b3, 1, 0));  // [T,1,H,W]
}

Tensor AttentionFusion::spatial_attention_batch(const Tensor& planes, const Tensor& noun_feat,
                                                Branch branch, bool use_noun) const {
  Tensor gate = spatial_attention_map_batch(planes, noun_feat, branch, use_noun);
  const int t = planes.dim(0), fh = planes.dim(2), fw = planes.dim(3);
  return mul_spatial_map(planes, reshape(gate, {t, fh * fw}));
}

Tensor AttentionFusion::spatial_attention_map(const Tensor& plane, const Tensor& noun_feat,
                                              Branch branch, bool use_noun) const {
  return un_batch(spatial_attention_map_batch(as_batch(plane), noun_feat, branch, use_noun));
}

Tensor AttentionFusion::spatial_attention(const Tensor& plane, const Tensor& noun_feat,
                                          Branch branch, bool use_noun) const {
  return un_batch(spatial_attention_batch(as_batch(plane), noun_feat, branch, use_noun));
}

// ---------------------------------------------------------------------------
// Temporal attention
// ---------------------------------------------------------------------------

Tensor AttentionFusion::window_gate(const Tensor& padded_stats, Branch branch) const {
  const auto& p = tp_[static_cast<int>(branch)];
  Tensor h = relu(linear(padded_stats, p.w_inner, p.b_inner));
  return sigmoid(linear(h, p.w_outer, p.b_outer));  // [K]
}

std::pair<std::vector<Tensor>, Tensor> AttentionFusion::temporal_attention(
    const std::vector<Tensor>& window, Branch branch) const {
  if (window.empty()) throw ShapeError("temporal_attention: empty window");
  if (static_cast<int>(window.size()) > cfg_.window) {
    throw ShapeError("temporal_attention: window longer than K");
  }
  const int real = static_cast<int>(window.size());
  std::vector<Tensor> stats;
  stats.reserve(static_cast<size_t>(cfg_.window));
  for (const auto& plane : window) stats.push_back(mean_all(plane));
  while (static_cast<int>(stats.size()) < cfg_.window) stats.push_back(stats.back());
  Tensor w = window_gate(concat(stats, 0), branch);

  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(real));
  for (int i = 0; i < real; ++i) {
    out.push_back(mul_scalar_tensor(window[static_cast<size_t>(i)], slice(w, 0, i, 1)));
  }
  return {out, w};
}

Tensor AttentionFusion::temporal_attention_batch(const Tensor& planes, Branch branch,
                                                 std::vector<Tensor>* weights_out) const {
  if (planes.rank() != 4) throw ShapeError("temporal_attention: expected [T,C,H,W]");
  const int t_total = planes.dim(0);
  Tensor stats = reduce_mean(planes, {1, 2, 3});  // [T]

  std::vector<Tensor> frame_w;
  auto window_at = [&](int start) {
    const int len = std::min(cfg_.window, t_total - start);
    Tensor s = slice(stats, 0, start, len);
    if (len < cfg_.window) {
      std::vector<Tensor> parts{s};
      Tensor last = slice(stats, 0, start + len - 1, 1);
      for (int i = len; i < cfg_.window; ++i) parts.push_back(last);
      s = concat(parts, 0);
    }
    Tensor w = window_gate(s, branch);
    if (weights_out) weights_out->push_back(w);
    return std::pair<Tensor, int>{w, len};
  };

  if (!cfg_.sliding_windows) {
    for (int start = 0; start < t_total; start += cfg_.window) {
      auto [w, len] = window_at(start);
      frame_w.push_back(slice(w, 0, 0, len));
    }
  } else {
    for (int start = 0; start < t_total; ++start) {
      auto [w, len] = window_at(start);
      (void)len;
      frame_w.push_back(slice(w, 0, 0, 1));
    }
  }
  Tensor wvec = frame_w.size() == 1 ? frame_w[0] : concat(frame_w, 0);  // [T]
  return scale_rows(planes, wvec);
}

// ---------------------------------------------------------------------------
// Query-guided enhancement
// ---------------------------------------------------------------------------

std::pair<Tensor, Tensor> AttentionFusion::query_guided_enhance_batch(const Tensor& planes,
                                                                      const Tensor& word_feats,
                                                                      Branch branch,
                                                                      bool uniform) const {
  if (branch == Branch::Residual) {
    throw ShapeError("query_guided_enhance: appearance and motion branches only");
  }
  if (planes.rank() != 4) throw ShapeError("query_guided_enhance: expected [T,C,H,W]");
  const auto& p = ep_[static_cast<int>(branch)];
  const int t_total = planes.dim(0), c = planes.dim(1);
  const int positions = planes.dim(2) * planes.dim(3);

  Tensor attn;  // [T, P]
  if (uniform) {
    attn = Tensor::full({t_total, positions}, 1.0 / positions);
  } else {
    // rows (t, position) with channel features
    std::vector<int> idx(static_cast<size_t>(t_total) * positions * c);
    size_t w_i = 0;
    for (int t = 0; t < t_total; ++t) {
      for (int s = 0; s < positions; ++s) {
        for (int ci = 0; ci < c; ++ci) {
          idx[w_i++] = (t * c + ci) * positions + s;
        }
      }
    }
    Tensor cells = gather_flat(planes, {t_total * positions, c}, std::move(idx));
    Tensor u = matmul(cells, p.w1);        // [T*P, qe]
    Tensor v = matmul(word_feats, p.w2);   // [M, qe]
    Tensor w_vec = reshape(p.w_row, {p.w_row.dim(0)});
    Tensor logits = additive_attention_logits(u, v, p.b0, w_vec);  // [T*P]
    attn = softmax(reshape(logits, {t_total, positions}), 1);
  }
  Tensor enhanced = mul_spatial_map(planes, attn);
  Tensor pooled = reduce_mean(enhanced, {2, 3});  // [T, C]
  Tensor f = linear(pooled, p.w_out, p.b_out);    // [T, d]
  return {f, attn};
}

std::pair<Tensor, Tensor> AttentionFusion::query_guided_enhance(const Tensor& plane,
                                                                const Tensor& word_feats,
                                                                Branch branch,
                                                                bool uniform) const {
  auto [f, attn] = query_guided_enhance_batch(as_batch(plane), word_feats, branch, uniform);
  return {reshape(f, {f.dim(1)}), reshape(attn, {attn.dim(1)})};
}

// ---------------------------------------------------------------------------
// Residual-guided adaptive fusion
// ---------------------------------------------------------------------------

Tensor AttentionFusion::residual_balance_batch(const Tensor& planes) const {
  if (planes.rank() != 4) throw ShapeError("residual_balance: expected [T,C,H,W]");
  Tensor g = reduce_mean(planes, {2, 3});       // [T, C]
  Tensor h = relu(linear(g, beta_w1_, beta_b1_));
  Tensor logit = linear(h, beta_w2_, beta_b2_);  // [T, 1]
  return reshape(sigmoid(logit), {planes.dim(0)});
}

Tensor AttentionFusion::residual_balance(const Tensor& f_r) const {
  return residual_balance_batch(as_batch(f_r));  // [1]
}

Tensor AttentionFusion::fuse_batch(const Tensor& f_a, const Tensor& f_m,
                                   const Tensor& beta) const {
  if (f_a.rank() != 2 || f_m.rank() != 2 || f_a.shape() != f_m.shape()) {
    throw ShapeError("fuse: expected matching [T,d] features");
  }
  if (beta.rank() != 1 || beta.dim(0) != f_a.dim(0)) throw ShapeError("fuse: beta must be [T]");
  for (double b : beta.values()) {
    if (b < 0.0 || b > 1.0) throw ShapeError("fuse: beta outside [0,1]");
  }
  Tensor pa = matmul(f_a, w3_);
  Tensor pm = matmul(f_m, w4_);
  return add(scale_rows(pa, beta), scale_rows(pm, rsub_const(1.0, beta)));
}

Tensor AttentionFusion::fuse_motion_appearance(const Tensor& f_a, const Tensor& f_m,
                                               const Tensor& beta) const {
  if (beta.numel() != 1) throw ShapeError("fuse: beta must be scalar");
  Tensor fused = fuse_batch(reshape(f_a, {1, f_a.dim(0)}), reshape(f_m, {1, f_m.dim(0)}),
                            reshape(beta, {1}));
  return reshape(fused, {fused.dim(1)});
}

// ---------------------------------------------------------------------------
// Multi-modal fusion
// ---------------------------------------------------------------------------

Tensor AttentionFusion::multimodal_text_term(const Tensor& word_mean,
                                             const Tensor& q_global) const {
  Tensor zero = Tensor::zeros({w6_.dim(1)});
  return add(linear(word_mean, w6_, zero), linear(q_global, w7_, zero));
}

Tensor AttentionFusion::multimodal_batch(const Tensor& f_v, const Tensor& text_term) const {
  if (f_v.rank() != 2) throw ShapeError("multimodal_fuse: expected [T,d]");
  return add_row_vector(matmul(f_v, w5_), text_term);
}

Tensor AttentionFusion::multimodal_fuse_with_text_term(const Tensor& f_v,
                                                       const Tensor& text_term) const {
  Tensor o = multimodal_batch(reshape(f_v, {1, f_v.dim(0)}), text_term);
  return reshape(o, {o.dim(1)});
}

Tensor AttentionFusion::multimodal_fuse(const Tensor& f_v, const Tensor& word_mean,
                                        const Tensor& q_global) const {
  return multimodal_fuse_with_text_term(f_v, multimodal_text_term(word_mean, q_global));
}

}  // namespace tcsf
