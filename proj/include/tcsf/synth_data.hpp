#pragma once

#include <string>
#include <vector>

#include "tcsf/gop_codec.hpp"
#include "tcsf/text_encoder.hpp"

namespace tcsf {

enum class Behavior { Static = 0, Move = 1, Flash = 2 };

struct ObjectSpec {
  int color = 0;  // index into the color lexicon
  int shape = 0;  // index into the shape lexicon
  int home_y = 0, home_x = 0;
  Behavior behavior = Behavior::Static;
  int ev_start = 0, ev_end = -1;  // active frames, inclusive
  int dir = 0;                    // 0 left, 1 right, 2 up, 3 down (Move)
  int speed_px = 0;               // per-frame displacement (Move)
  int flash_half = 1;             // frames per brightness phase (Flash)
  bool fast = false;
};

struct GroundingSample {
  RawVideo video;
  std::vector<int> token_ids;
  std::vector<uint8_t> noun_mask;  // true exactly on color/shape tokens
  int gt_start = 0, gt_end = 0;
  ObjectSpec target;
  std::vector<ObjectSpec> distractors;
  uint64_t bg_seed = 0;
};

struct DatasetSpec {
  int sample_count = 600;
  int t = 64, h = 32, w = 32;
  int gop_p_frames = 3;  // L
  int block = 8;
  int radius = 3;
  uint64_t seed = 0;
  int min_len = 16, max_len = 32;
  int min_distractors = 1, max_distractors = 2;
  double distractor_event_prob = 0.75;
  double flash_prob = 0.4;  // target verb family mix
};

// Fixed lexicon shared by the generator and the query templates.
const std::vector<std::string>& synth_tokens();
Vocabulary synth_vocabulary();
bool synth_token_is_noun(int id);

std::vector<GroundingSample> generate_dataset(const DatasetSpec& spec);
GroundingSample generate_sample(const DatasetSpec& spec, int index);

// Renders the given objects over a seeded static background; used both by the
// generator and by label-validity checks.
RawVideo render_scene(const DatasetSpec& spec, const std::vector<ObjectSpec>& objects,
                      uint64_t bg_seed);

// Seeded shuffle + contiguous partition; sizes are floor(ratio*n) with the
// remainder assigned to the earliest splits.
std::vector<std::vector<int>> split_indices(int n, const std::vector<double>& ratios,
                                            uint64_t seed);

std::string query_text(const GroundingSample& sample);

// Dataset directory layout: vocab.txt, manifest.txt, samples/<id>.{gops,query,gt}.
void write_dataset(const std::string& dir, const DatasetSpec& spec,
                   const std::vector<GroundingSample>& samples);

// R@1 of a grounder that guesses a uniformly random valid (s, e) pair.
double random_guess_recall(const std::vector<std::pair<int, int>>& gts, int t_total, double iou_m,
                           uint64_t seed, int repeats = 32);

}  // namespace tcsf
