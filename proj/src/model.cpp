#include "tcsf/model.hpp"

namespace tcsf {

TcsfModel::TcsfModel(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  Rng rng(init_seed ^ 0x7c5f0000ULL);
  TextEncoderConfig tc;
  tc.vocab_size = cfg.vocab_size;
  tc.embed_dim = cfg.embed_dim;
  tc.gru_hidden = cfg.gru_hidden;
  tc.attn_heads = cfg.attn_heads;
  tc.attn_dim = cfg.attn_dim;
  tc.model_dim = cfg.model_dim;
  text_ = std::make_unique<TextEncoder>(tc, params_, rng);

  VisualConfig vc;
  vc.channels = cfg.channels;
  vc.sigma = cfg.sigma;
  vc.pseudo_window = cfg.pseudo_n;
  vc.iframe_mid = cfg.iframe_mid;
  vc.pframe_mid = cfg.pframe_mid;
  visual_ = std::make_unique<VisualFrontend>(vc, params_, rng);

  FusionConfig fc;
  fc.channels = cfg.channels;
  fc.model_dim = cfg.model_dim;
  fc.window = cfg.window_k;
  fc.sa_mid = cfg.sa_mid;
  fc.qe_hidden = cfg.qe_hidden;
  fc.beta_hidden = cfg.beta_hidden;
  fc.sliding_windows = cfg.sliding_windows;
  fusion_ = std::make_unique<AttentionFusion>(fc, params_, rng);

  HeadConfig hc;
  hc.model_dim = cfg.model_dim;
  hc.hidden = cfg.head_hidden;
  hc.soft_labels = cfg.soft_labels;
  head_ = std::make_unique<GroundingHead>(hc, params_, rng);
}

ForwardResult TcsfModel::forward(const SampleInput& in, const std::pair<int, int>* gt,
                                 double alpha, ForwardAux* aux) const {
  if (!in.records || !in.token_ids || !in.noun_mask) {
    throw ShapeError("forward: incomplete sample input");
  }
  const auto& flags = cfg_.ablate;

  // --- query ---
  QueryEncoding enc = text_->encode(*in.token_ids);
  Tensor noun_feat = TextEncoder::noun_pool(enc, *in.noun_mask);
  std::vector<uint8_t> all_words(in.token_ids->size(), 1);
  Tensor word_mean = masked_mean_rows(enc.word_feats, all_words);
  Tensor text_term = fusion_->multimodal_text_term(word_mean, enc.q_global);

  // --- visual timeline, stacked per branch as [T,C,H',W'] ---
  FeatureTimeline tl = visual_->build_feature_timeline(*in.records, in.h, in.w, in.block,
                                                       in.radius, flags.no_pseudo);
  const int t_total = static_cast<int>(tl.triples.size());
  std::vector<Tensor> a_list, m_list, r_list;
  a_list.reserve(tl.triples.size());
  m_list.reserve(tl.triples.size());
  r_list.reserve(tl.triples.size());
  for (const auto& tri : tl.triples) {
    a_list.push_back(tri.a);
    m_list.push_back(tri.m);
    r_list.push_back(tri.r);
  }
  Tensor a_planes = stack_rows(a_list);
  Tensor m_planes = stack_rows(m_list);
  Tensor r_planes = stack_rows(r_list);

  // --- spatial attention ---
  if (!flags.no_spatial_attn) {
    const bool use_noun = !flags.no_noun;
    if (aux) {
      aux->spatial_maps[0] =
          fusion_->spatial_attention_map_batch(a_planes, noun_feat, Branch::Appearance, use_noun);
      aux->spatial_maps[1] =
          fusion_->spatial_attention_map_batch(m_planes, noun_feat, Branch::Motion, use_noun);
      aux->spatial_maps[2] =
          fusion_->spatial_attention_map_batch(r_planes, noun_feat, Branch::Residual, use_noun);
    }
    a_planes = fusion_->spatial_attention_batch(a_planes, noun_feat, Branch::Appearance, use_noun);
    m_planes = fusion_->spatial_attention_batch(m_planes, noun_feat, Branch::Motion, use_noun);
    r_planes = fusion_->spatial_attention_batch(r_planes, noun_feat, Branch::Residual, use_noun);
  }

  // --- temporal attention ---
  if (!flags.no_temporal_attn) {
    a_planes = fusion_->temporal_attention_batch(a_planes, Branch::Appearance,
                                                 aux ? &aux->temporal_weights[0] : nullptr);
    m_planes = fusion_->temporal_attention_batch(m_planes, Branch::Motion,
                                                 aux ? &aux->temporal_weights[1] : nullptr);
    r_planes = fusion_->temporal_attention_batch(r_planes, Branch::Residual,
                                                 aux ? &aux->temporal_weights[2] : nullptr);
  }

  // --- query-guided enhancement, adaptive fusion and grounding features ---
  auto [f_a, map_a] = fusion_->query_guided_enhance_batch(a_planes, enc.word_feats,
                                                          Branch::Appearance,
                                                          flags.no_query_enhance);
  auto [f_m, map_m] = fusion_->query_guided_enhance_batch(m_planes, enc.word_feats,
                                                          Branch::Motion, flags.no_query_enhance);
  Tensor beta = flags.beta_fixed() ? Tensor::full({t_total}, flags.fixed_beta)
                                   : fusion_->residual_balance_batch(r_planes);
  Tensor f_v = fusion_->fuse_batch(f_a, f_m, beta);
  Tensor o_mat = fusion_->multimodal_batch(f_v, text_term);  // [T, d]
  if (aux) {
    aux->timeline = tl;
    aux->betas = beta.values();
    aux->enhance_maps[0] = map_a;
    aux->enhance_maps[1] = map_m;
  }

  ForwardResult out;
  out.scores = head_->score(o_mat);

  if (gt) {
    if (gt->first < 0 || gt->second >= t_total || gt->first > gt->second) {
      throw ShapeError("forward: ground truth span outside timeline");
    }
    out.reg = reg_loss(out.scores.p_start, out.scores.p_end, gt->first, gt->second,
                       cfg_.soft_labels);
    out.guide = guide_loss(out.scores.gamma, span_mask(t_total, gt->first, gt->second));
    out.total = total_loss(out.reg, out.guide, alpha);
  }
  return out;
}

}  // namespace tcsf
