#pragma once

#include <string>
#include <vector>

#include "tcsf/param_store.hpp"
#include "tcsf/tensor.hpp"

namespace tcsf {

// Token list, one per line; line index is the id.
struct Vocabulary {
  std::vector<std::string> tokens;

  int size() const { return static_cast<int>(tokens.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;
};

struct TextEncoderConfig {
  int vocab_size = 0;
  int embed_dim = 300;
  int gru_hidden = 512;  // per direction
  int attn_heads = 8;
  int attn_dim = 128;  // total across heads
  int model_dim = 64;  // d
};

struct QueryEncoding {
  Tensor word_feats;  // [M, d]
  Tensor q_global;    // [d]
};

// Embedding table -> Bi-GRU -> multi-head self-attention -> projection to d.
class TextEncoder {
 public:
  TextEncoder(const TextEncoderConfig& cfg, ParamStore& store, Rng& rng);

  const TextEncoderConfig& config() const { return cfg_; }

  // Row lookup in the trainable table; [M, embed_dim].
  Tensor embed(const std::vector<int>& token_ids) const;

  QueryEncoding encode(const std::vector<int>& token_ids) const;

  // Mean of word features flagged as nouns; falls back to q_global when the
  // mask is empty.
  static Tensor noun_pool(const QueryEncoding& enc, const std::vector<uint8_t>& noun_mask);

 private:
  Tensor gru_direction(const Tensor& embedded, bool backward_dir, std::vector<Tensor>* states) const;

  TextEncoderConfig cfg_;
  Tensor embed_table_;                      // [V, embed_dim]
  Tensor wx_fwd_, wh_fwd_, bx_fwd_, bh_fwd_;  // [in,3H],[H,3H],[3H],[3H]
  Tensor wx_bwd_, wh_bwd_, bx_bwd_, bh_bwd_;
  Tensor wq_, wk_, wv_;  // [2H, attn_dim]
  Tensor wo_, bo_;       // [attn_dim, attn_dim], [attn_dim]
  Tensor wp_, bp_;       // [attn_dim, d], [d]
  Tensor wg_, bg_;       // [2H, d], [d]
};

}  // namespace tcsf
