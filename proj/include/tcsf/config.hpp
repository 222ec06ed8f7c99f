#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tcsf/model.hpp"

namespace tcsf {

struct TrainConfig {
  double lr = 4e-4;
  int batch_size = 16;
  int max_epochs = 30;  // desk preset; the full schedule uses 100
  bool paper_schedule = false;
  double lr_decay = 0.1;    // multiplier applied every lr_decay_every epochs
  int lr_decay_every = 40;
  double alpha = 0.8;
  int window_k = 7;   // K
  int pseudo_n = 2;   // n
  int channels = 32;  // C
  int sigma = 4;
  int model_dim = 64;  // d
  uint64_t seed = 0;

  int embed_dim = 300;
  int gru_hidden = 512;
  int attn_heads = 8;
  int attn_dim = 128;
  int sa_mid = 6;
  int qe_hidden = 16;
  int beta_hidden = 16;
  int head_hidden = 32;
  int iframe_mid = 16;
  int pframe_mid = 8;
  bool sliding_windows = false;
  bool soft_labels = false;

  int eval_every = 1;  // epochs between validation passes
  int threads = 0;     // 0 = library default

  AblationFlags ablate;

  int effective_epochs() const { return paper_schedule ? 100 : max_epochs; }
  void validate() const;
  ModelConfig model_config(int vocab_size) const;

  // ordered key/value view, also used as the checkpoint config snapshot
  std::vector<std::pair<std::string, double>> to_kv() const;
  void set_kv(const std::string& key, double value);
};

// Plain-text `key = value` lines; '#' starts a comment; unknown keys rejected.
TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::string& path);
void save_config_file(const std::string& path, const TrainConfig& cfg);

// Applies a named ablation flag ("no_pseudo", "no_spatial_attn",
// "no_temporal_attn", "no_query_enhance", "no_noun", "fixed_beta=<v>").
void apply_ablation(TrainConfig& cfg, const std::string& flag);

}  // namespace tcsf
