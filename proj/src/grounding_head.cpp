#include "tcsf/grounding_head.hpp"

#include <algorithm>
#include <cmath>

namespace tcsf {

namespace {

Tensor matvec(const Tensor& x, const Tensor& w) {
  return reshape(matmul(reshape(x, {1, x.dim(0)}), w), {w.dim(1)});
}

}  // namespace

GroundingHead::GroundingHead(const HeadConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
  const int d = cfg.model_dim, h = cfg.hidden;
  g_w1_ = store.add("head.gamma.w1", {d, h}, xavier_uniform(rng, static_cast<int64_t>(d) * h, d, h));
  g_b1_ = store.add("head.gamma.b1", {h}, std::vector<double>(h, 0.0));
  g_w2_ = store.add("head.gamma.w2", {h, 1}, xavier_uniform(rng, h, h, 1));
  g_b2_ = store.add("head.gamma.b2", {1}, std::vector<double>(1, 0.0));
  r_w1_ = store.add("head.reg.w1", {d, h}, xavier_uniform(rng, static_cast<int64_t>(d) * h, d, h));
  r_b1_ = store.add("head.reg.b1", {h}, std::vector<double>(h, 0.0));
  r_w2_ = store.add("head.reg.w2", {h, 2}, xavier_uniform(rng, static_cast<int64_t>(h) * 2, h, 2));
  r_b2_ = store.add("head.reg.b2", {2}, std::vector<double>(2, 0.0));
}

MomentScores GroundingHead::score(const Tensor& o_mat) const {
  if (o_mat.rank() != 2 || o_mat.dim(0) < 1) throw ShapeError("score_head: expected [T,d]");
  const int t_total = o_mat.dim(0);

  MomentScores out;
  Tensor h = relu(linear(o_mat, g_w1_, g_b1_));  // [T, hidden]
  Tensor logits = linear(h, g_w2_, g_b2_);       // [T, 1]
  out.gamma = softmax(reshape(logits, {t_total}), 0);

  Tensor x = scale_rows(o_mat, out.gamma);       // gamma_t * o_t
  Tensor hr = relu(linear(x, r_w1_, r_b1_));
  Tensor p = sigmoid(linear(hr, r_w2_, r_b2_));  // [T, 2]
  out.p_start = reshape(slice(p, 1, 0, 1), {t_total});
  out.p_end = reshape(slice(p, 1, 1, 1), {t_total});
  return out;
}

MomentScores GroundingHead::score(const std::vector<Tensor>& o_seq) const {
  if (o_seq.empty()) throw ShapeError("score_head: empty sequence");
  return score(stack_rows(o_seq));
}

std::vector<double> boundary_labels(int t_total, int gt, bool soft) {
  if (gt < 0 || gt >= t_total) throw std::invalid_argument("boundary label outside [0,T)");
  std::vector<double> y(static_cast<size_t>(t_total), 0.0);
  if (!soft) {
    y[static_cast<size_t>(gt)] = 1.0;
    return y;
  }
  for (int t = std::max(0, gt - 1); t <= std::min(t_total - 1, gt + 1); ++t) {
    y[static_cast<size_t>(t)] = 1.0 - std::abs(t - gt) / 2.0;
  }
  return y;
}

namespace {

Tensor bce_sum(const Tensor& p, const std::vector<double>& labels) {
  const int t_total = p.dim(0);
  Tensor y = Tensor::from({t_total}, labels);
  Tensor pc = clamp_t(p, 1e-7, 1.0 - 1e-7);
  Tensor pos = mul(y, log_t(pc));
  Tensor neg = mul(rsub_const(1.0, y), log_t(rsub_const(1.0, pc)));
  return scale(sum_all(add(pos, neg)), -1.0);
}

}  // namespace

Tensor reg_loss(const Tensor& p_start, const Tensor& p_end, int gt_start, int gt_end,
                bool soft_labels) {
  if (p_start.rank() != 1 || p_end.rank() != 1 || p_start.dim(0) != p_end.dim(0)) {
    throw ShapeError("reg_loss: boundary probability shapes disagree");
  }
  const int t_total = p_start.dim(0);
  if (gt_start > gt_end) throw std::invalid_argument("reg_loss: start must be <= end");
  Tensor ls = bce_sum(p_start, boundary_labels(t_total, gt_start, soft_labels));
  Tensor le = bce_sum(p_end, boundary_labels(t_total, gt_end, soft_labels));
  return scale(add(ls, le), 1.0 / (2.0 * t_total));
}

std::vector<uint8_t> span_mask(int t_total, int gt_start, int gt_end) {
  if (gt_start > gt_end || gt_start < 0 || gt_end >= t_total) {
    throw std::invalid_argument("span_mask: invalid interval");
  }
  std::vector<uint8_t> m(static_cast<size_t>(t_total), 0);
  for (int t = gt_start; t <= gt_end; ++t) m[static_cast<size_t>(t)] = 1;
  return m;
}

Tensor guide_loss(const Tensor& gamma, const std::vector<uint8_t>& in_span_mask) {
  if (gamma.rank() != 1 || gamma.dim(0) != static_cast<int>(in_span_mask.size())) {
    throw ShapeError("guide_loss: mask length does not match gamma");
  }
  double count = 0;
  std::vector<double> mask_d(in_span_mask.size());
  for (size_t i = 0; i < in_span_mask.size(); ++i) {
    mask_d[i] = in_span_mask[i] ? 1.0 : 0.0;
    count += mask_d[i];
  }
  if (count == 0) throw std::invalid_argument("guide_loss: mask has no positive entries");
  Tensor m = Tensor::from({gamma.dim(0)}, std::move(mask_d));
  // upper clamp never binds; it only keeps the op's range argument valid
  Tensor lg = log_t(clamp_t(gamma, 1e-12, 2.0));
  return scale(sum_all(mul(m, lg)), -1.0 / count);
}

Tensor total_loss(const Tensor& reg, const Tensor& guide, double alpha) {
  if (alpha < 0) throw std::invalid_argument("total_loss: alpha must be >= 0");
  return add(reg, scale(guide, alpha));
}

double temporal_iou(int s1, int e1, int s2, int e2) {
  if (s1 > e1 || s2 > e2) throw std::invalid_argument("temporal_iou: invalid interval");
  const int inter = std::max(0, std::min(e1, e2) - std::max(s1, s2) + 1);
  const int uni = (e1 - s1 + 1) + (e2 - s2 + 1) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Candidate> generate_candidates(const std::vector<double>& p_start,
                                           const std::vector<double>& p_end,
                                           const std::vector<double>& gamma, int top_n,
                                           double nms_threshold) {
  const int t_total = static_cast<int>(p_start.size());
  if (t_total < 1 || p_end.size() != p_start.size() || gamma.size() != p_start.size()) {
    throw ShapeError("generate_candidates: input length mismatch");
  }
  if (top_n < 1) return {};

  std::vector<double> prefix(static_cast<size_t>(t_total) + 1, 0.0);
  for (int i = 0; i < t_total; ++i) {
    prefix[static_cast<size_t>(i) + 1] = prefix[static_cast<size_t>(i)] + gamma[static_cast<size_t>(i)];
  }
  std::vector<Candidate> pool;
  pool.reserve(static_cast<size_t>(t_total) * (t_total + 1) / 2);
  for (int s = 0; s < t_total; ++s) {
    for (int e = s; e < t_total; ++e) {
      const double mean_g =
          (prefix[static_cast<size_t>(e) + 1] - prefix[static_cast<size_t>(s)]) / (e - s + 1);
      pool.push_back({s, e, p_start[static_cast<size_t>(s)] * p_end[static_cast<size_t>(e)] * mean_g});
    }
  }
  std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.s != b.s) return a.s < b.s;
    return a.e < b.e;
  });

  std::vector<Candidate> kept;
  for (const auto& c : pool) {
    if (static_cast<int>(kept.size()) >= top_n) break;
    bool suppressed = false;
    for (const auto& k : kept) {
      if (temporal_iou(c.s, c.e, k.s, k.e) >= nms_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

double recall_at_n(const std::vector<std::vector<Candidate>>& per_sample_candidates,
                   const std::vector<std::pair<int, int>>& ground_truths, int n, double m) {
  if (per_sample_candidates.size() != ground_truths.size() || ground_truths.empty()) {
    throw ShapeError("recall_at_n: prediction/ground-truth count mismatch");
  }
  int hits = 0;
  for (size_t i = 0; i < ground_truths.size(); ++i) {
    const auto& cands = per_sample_candidates[i];
    const int take = std::min(n, static_cast<int>(cands.size()));
    for (int j = 0; j < take; ++j) {
      if (temporal_iou(cands[static_cast<size_t>(j)].s, cands[static_cast<size_t>(j)].e,
                       ground_truths[i].first, ground_truths[i].second) > m) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(ground_truths.size());
}

}  // namespace tcsf
