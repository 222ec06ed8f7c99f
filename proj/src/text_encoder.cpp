#include "tcsf/text_encoder.hpp"

#include <cmath>
#include <fstream>

namespace tcsf {

int Vocabulary::id(const std::string& token) const {
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == token) return static_cast<int>(i);
  }
  throw VocabError("unknown token: '" + token + "'");
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw VocabError("token id out of range");
  return tokens[static_cast<size_t>(id)];
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open vocabulary: " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.tokens.push_back(line);
  }
  if (v.tokens.empty()) throw VocabError("empty vocabulary file: " + path);
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write vocabulary: " + path);
  for (const auto& t : tokens) f << t << "\n";
}

TextEncoder::TextEncoder(const TextEncoderConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
  if (cfg.vocab_size < 1) throw ConfigError("text encoder needs a vocabulary");
  if (cfg.attn_dim % cfg.attn_heads != 0) {
    throw ConfigError("attention dim must divide evenly over heads");
  }
  const int e = cfg.embed_dim, h = cfg.gru_hidden, h2 = 2 * h;
  const int ad = cfg.attn_dim, d = cfg.model_dim;

  embed_table_ = store.add("text.embed", {cfg.vocab_size, e},
                           uniform_init(rng, static_cast<int64_t>(cfg.vocab_size) * e, 0.08));
  auto gru_dir = [&](const std::string& dir, Tensor& wx, Tensor& wh, Tensor& bx, Tensor& bh) {
    wx = store.add("text.gru." + dir + ".wx", {e, 3 * h},
                   xavier_uniform(rng, static_cast<int64_t>(e) * 3 * h, e, h));
    wh = store.add("text.gru." + dir + ".wh", {h, 3 * h},
                   xavier_uniform(rng, static_cast<int64_t>(h) * 3 * h, h, h));
    bx = store.add("text.gru." + dir + ".bx", {3 * h}, std::vector<double>(3 * h, 0.0));
    bh = store.add("text.gru." + dir + ".bh", {3 * h}, std::vector<double>(3 * h, 0.0));
  };
  gru_dir("fwd", wx_fwd_, wh_fwd_, bx_fwd_, bh_fwd_);
  gru_dir("bwd", wx_bwd_, wh_bwd_, bx_bwd_, bh_bwd_);

  wq_ = store.add("text.attn.wq", {h2, ad}, xavier_uniform(rng, static_cast<int64_t>(h2) * ad, h2, ad));
  wk_ = store.add("text.attn.wk", {h2, ad}, xavier_uniform(rng, static_cast<int64_t>(h2) * ad, h2, ad));
  wv_ = store.add("text.attn.wv", {h2, ad}, xavier_uniform(rng, static_cast<int64_t>(h2) * ad, h2, ad));
  wo_ = store.add("text.attn.wo", {ad, ad}, xavier_uniform(rng, static_cast<int64_t>(ad) * ad, ad, ad));
  bo_ = store.add("text.attn.bo", {ad}, std::vector<double>(ad, 0.0));
  wp_ = store.add("text.proj.w", {ad, d}, xavier_uniform(rng, static_cast<int64_t>(ad) * d, ad, d));
  bp_ = store.add("text.proj.b", {d}, std::vector<double>(d, 0.0));
  wg_ = store.add("text.global.w", {h2, d}, xavier_uniform(rng, static_cast<int64_t>(h2) * d, h2, d));
  bg_ = store.add("text.global.b", {d}, std::vector<double>(d, 0.0));
}

Tensor TextEncoder::embed(const std::vector<int>& token_ids) const {
  if (token_ids.empty()) throw ShapeError("embed: empty query");
  return embedding_rows(embed_table_, token_ids);
}

// Runs one GRU direction; returns final hidden state and appends the per-step
// hidden states (in original token order) to *states.
Tensor TextEncoder::gru_direction(const Tensor& embedded, bool backward_dir,
                                  std::vector<Tensor>* states) const {
  const int m = embedded.dim(0);
  const int h = cfg_.gru_hidden;
  const Tensor& wx = backward_dir ? wx_bwd_ : wx_fwd_;
  const Tensor& wh = backward_dir ? wh_bwd_ : wh_fwd_;
  const Tensor& bx = backward_dir ? bx_bwd_ : bx_fwd_;
  const Tensor& bh = backward_dir ? bh_bwd_ : bh_fwd_;

  Tensor gates_x = linear(embedded, wx, bx);  // [M, 3H]
  Tensor state = Tensor::zeros({h});
  states->assign(static_cast<size_t>(m), Tensor());
  for (int step = 0; step < m; ++step) {
    const int t = backward_dir ? m - 1 - step : step;
    Tensor gx = reshape(slice(gates_x, 0, t, 1), {3 * h});
    Tensor gh = linear(state, wh, bh);  // [3H]
    Tensor r = sigmoid(add(slice(gx, 0, 0, h), slice(gh, 0, 0, h)));
    Tensor z = sigmoid(add(slice(gx, 0, h, h), slice(gh, 0, h, h)));
    Tensor cand = tanh_t(add(slice(gx, 0, 2 * h, h), mul(r, slice(gh, 0, 2 * h, h))));
    state = add(mul(rsub_const(1.0, z), cand), mul(z, state));
    (*states)[static_cast<size_t>(t)] = state;
  }
  return state;
}

QueryEncoding TextEncoder::encode(const std::vector<int>& token_ids) const {
  if (token_ids.empty()) throw ShapeError("encode_query: empty query");
  const int m = static_cast<int>(token_ids.size());
  const int h = cfg_.gru_hidden;
  const int ad = cfg_.attn_dim;
  const int heads = cfg_.attn_heads;
  const int hd = ad / heads;

  Tensor embedded = embed(token_ids);  // [M, e]
  std::vector<Tensor> fwd_states, bwd_states;
  Tensor h_fwd_last = gru_direction(embedded, false, &fwd_states);
  Tensor h_bwd_last = gru_direction(embedded, true, &bwd_states);

  // [M, 2H]: forward and backward state at each position
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(m));
  for (int t = 0; t < m; ++t) {
    rows.push_back(reshape(concat({fwd_states[static_cast<size_t>(t)],
                                   bwd_states[static_cast<size_t>(t)]}, 0),
                           {1, 2 * h}));
  }
  Tensor hcat = concat(rows, 0);

  Tensor q = matmul(hcat, wq_);  // [M, ad]
  Tensor k = matmul(hcat, wk_);
  Tensor v = matmul(hcat, wv_);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  for (int hi = 0; hi < heads; ++hi) {
    Tensor qh = slice(q, 1, hi * hd, hd);
    Tensor kh = slice(k, 1, hi * hd, hd);
    Tensor vh = slice(v, 1, hi * hd, hd);
    Tensor scores = scale(matmul(qh, kh, false, true), inv_sqrt);  // [M, M]
    Tensor attn = softmax(scores, 1);
    head_outs.push_back(matmul(attn, vh));  // [M, hd]
  }
  Tensor mhsa = linear(concat(head_outs, 1), wo_, bo_);  // [M, ad]

  QueryEncoding out;
  out.word_feats = linear(mhsa, wp_, bp_);  // [M, d]
  Tensor hg = concat({h_fwd_last, h_bwd_last}, 0);  // [2H]
  out.q_global = linear(hg, wg_, bg_);  // [d]
  return out;
}

Tensor TextEncoder::noun_pool(const QueryEncoding& enc, const std::vector<uint8_t>& noun_mask) {
  if (static_cast<int>(noun_mask.size()) != enc.word_feats.dim(0)) {
    throw ShapeError("noun_pool: mask length does not match word count");
  }
  int count = 0;
  for (uint8_t b : noun_mask) count += b ? 1 : 0;
  if (count == 0) return enc.q_global;
  return masked_mean_rows(enc.word_feats, noun_mask);
}

}  // namespace tcsf
