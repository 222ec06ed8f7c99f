#pragma once

#include <istream>
#include <memory>
#include <ostream>
#include <string>

#include "tcsf/config.hpp"
#include "tcsf/model.hpp"

namespace tcsf {

// Model parameters + Adam state + epoch + config snapshot, stored as named
// tensors: magic "TCSF", version u32, entry count u32, then per entry
// {name_len u32, name bytes, rank u32, dims u32 x rank, f64 payload LE}.
struct Checkpoint {
  TrainConfig config;
  int vocab_size = 0;
  int epoch = 0;
  std::unique_ptr<TcsfModel> model;
  AdamOptimizer optimizer{4e-4};

  static Checkpoint fresh(const TrainConfig& cfg, int vocab_size);
};

void save_checkpoint(std::ostream& os, const Checkpoint& ck);
Checkpoint load_checkpoint(std::istream& is);
void save_checkpoint_file(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint_file(const std::string& path);

}  // namespace tcsf
