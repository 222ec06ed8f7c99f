#include "tcsf/synth_data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tcsf/tensor.hpp"

namespace tcsf {

namespace {

constexpr int kObjSize = 10;

// lexicon layout: [articles][colors][shapes][move verbs][flash verbs][dirs][speeds]
const std::vector<std::string> kArticles = {"the", "a"};
const std::vector<std::string> kColors = {"red",   "green",  "blue",   "yellow",
                                          "white", "purple", "orange", "cyan"};
const std::vector<std::string> kShapes = {"square", "circle", "cross", "bar", "ring", "dot"};
const std::vector<std::string> kMoveVerbs = {"moves", "slides"};
const std::vector<std::string> kFlashVerbs = {"flashes", "blinks"};
const std::vector<std::string> kDirs = {"left", "right", "up", "down"};
const std::vector<std::string> kSpeeds = {"fast", "slowly"};

const uint8_t kColorRgb[8][3] = {{220, 40, 40},  {40, 200, 40},  {40, 80, 220},  {230, 220, 40},
                                 {235, 235, 235}, {160, 40, 200}, {240, 140, 30}, {40, 210, 210}};

int tok_article(int i) { return i; }
int tok_color(int i) { return 2 + i; }
int tok_shape(int i) { return 2 + 8 + i; }
int tok_move_verb(int i) { return 2 + 8 + 6 + i; }
int tok_flash_verb(int i) { return 2 + 8 + 6 + 2 + i; }
int tok_dir(int i) { return 2 + 8 + 6 + 2 + 2 + i; }
int tok_speed(int i) { return 2 + 8 + 6 + 2 + 2 + 4 + i; }

bool shape_mask(int shape, int y, int x) {
  const double cy = (kObjSize - 1) / 2.0, cx = (kObjSize - 1) / 2.0;
  const double dy = y - cy, dx = x - cx;
  const double r2 = dy * dy + dx * dx;
  switch (shape) {
    case 0: return true;                                     // square
    case 1: return r2 <= 4.5 * 4.5;                          // circle
    case 2: return std::abs(dy) < 2.0 || std::abs(dx) < 2.0; // cross
    case 3: return y >= 3 && y <= 6;                         // bar
    case 4: return r2 <= 4.5 * 4.5 && r2 >= 2.4 * 2.4;       // ring
    case 5: return r2 <= 2.6 * 2.6;                          // dot
    default: return false;
  }
}

struct Placement {
  int y, x;          // top-left, possibly outside [0,H) before wrapping
  double brightness; // 1.0 unless flashing
};

Placement object_placement(const ObjectSpec& obj, int frame) {
  Placement p{obj.home_y, obj.home_x, 1.0};
  if (obj.behavior == Behavior::Move) {
    int steps = 0;
    if (frame >= obj.ev_start) steps = std::min(frame, obj.ev_end) - obj.ev_start + 1;
    if (steps > 0) {
      int vy = 0, vx = 0;
      switch (obj.dir) {
        case 0: vx = -obj.speed_px; break;
        case 1: vx = obj.speed_px; break;
        case 2: vy = -obj.speed_px; break;
        case 3: vy = obj.speed_px; break;
      }
      p.y += vy * steps;
      p.x += vx * steps;
    }
  } else if (obj.behavior == Behavior::Flash) {
    if (frame >= obj.ev_start && frame <= obj.ev_end) {
      const int phase = ((frame - obj.ev_start) / obj.flash_half) % 2;
      p.brightness = phase == 0 ? 1.55 : 0.55;
    }
  }
  return p;
}

void draw_object(uint8_t* frame, int h, int w, const ObjectSpec& obj, const Placement& pl) {
  const uint8_t* rgb = kColorRgb[obj.color];
  for (int oy = 0; oy < kObjSize; ++oy) {
    for (int ox = 0; ox < kObjSize; ++ox) {
      if (!shape_mask(obj.shape, oy, ox)) continue;
      const int y = ((pl.y + oy) % h + h) % h;  // toroidal wrap
      const int x = ((pl.x + ox) % w + w) % w;
      uint8_t* px = frame + (static_cast<int64_t>(y) * w + x) * 3;
      for (int c = 0; c < 3; ++c) {
        const double v = rgb[c] * pl.brightness;
        px[c] = static_cast<uint8_t>(std::min(255.0, std::max(0.0, v)));
      }
    }
  }
}

void validate_spec(const DatasetSpec& spec) {
  if (spec.sample_count < 1) throw ConfigError("dataset: sample_count must be >= 1");
  if (spec.h < kObjSize + 2 || spec.w < kObjSize + 2) {
    throw ConfigError("dataset: frames too small for objects");
  }
  if (spec.h % spec.block != 0 || spec.w % spec.block != 0) {
    throw ConfigError("dataset: geometry not divisible by block size");
  }
  if (spec.min_len < 2 || spec.min_len > spec.max_len) throw ConfigError("dataset: bad length range");
  if (spec.max_len > spec.t - 1) throw ConfigError("dataset: max_len must leave a pre-event frame");
  if (spec.min_distractors < 0 || spec.min_distractors > spec.max_distractors) {
    throw ConfigError("dataset: bad distractor range");
  }
  if (spec.gop_p_frames < 1) throw ConfigError("dataset: L must be >= 1");
}

}  // namespace

const std::vector<std::string>& synth_tokens() {
  static const std::vector<std::string> all = [] {
    std::vector<std::string> v;
    for (const auto& s : kArticles) v.push_back(s);
    for (const auto& s : kColors) v.push_back(s);
    for (const auto& s : kShapes) v.push_back(s);
    for (const auto& s : kMoveVerbs) v.push_back(s);
    for (const auto& s : kFlashVerbs) v.push_back(s);
    for (const auto& s : kDirs) v.push_back(s);
    for (const auto& s : kSpeeds) v.push_back(s);
    return v;
  }();
  return all;
}

Vocabulary synth_vocabulary() {
  Vocabulary v;
  v.tokens = synth_tokens();
  return v;
}

bool synth_token_is_noun(int id) { return id >= tok_color(0) && id <= tok_shape(5); }

RawVideo render_scene(const DatasetSpec& spec, const std::vector<ObjectSpec>& objects,
                      uint64_t bg_seed) {
  RawVideo video = RawVideo::create(spec.t, spec.h, spec.w);
  // static textured background, identical in every frame
  std::vector<uint8_t> bg(static_cast<size_t>(spec.h) * spec.w * 3);
  Rng brng(bg_seed);
  for (int64_t p = 0; p < static_cast<int64_t>(spec.h) * spec.w; ++p) {
    const uint8_t g = static_cast<uint8_t>(10 + brng.uniform_int(0, 22));
    bg[static_cast<size_t>(p) * 3] = g;
    bg[static_cast<size_t>(p) * 3 + 1] = g;
    bg[static_cast<size_t>(p) * 3 + 2] = g;
  }
  for (int t = 0; t < spec.t; ++t) {
    uint8_t* frame = video.frame(t);
    std::copy(bg.begin(), bg.end(), frame);
    for (const auto& obj : objects) {
      draw_object(frame, spec.h, spec.w, obj, object_placement(obj, t));
    }
  }
  return video;
}

GroundingSample generate_sample(const DatasetSpec& spec, int index) {
  validate_spec(spec);
  Rng rng = Rng(spec.seed).fork(static_cast<uint64_t>(index));

  GroundingSample sample;
  sample.bg_seed = rng.next_u64();

  auto sample_interval = [&](int* s, int* e) {
    const int len = rng.uniform_int(spec.min_len, spec.max_len);
    *s = rng.uniform_int(1, spec.t - len);
    *e = *s + len - 1;
  };
  auto sample_home = [&](std::vector<ObjectSpec>& placed, ObjectSpec& obj) {
    for (int attempt = 0; attempt < 24; ++attempt) {
      obj.home_y = rng.uniform_int(0, spec.h - kObjSize);
      obj.home_x = rng.uniform_int(0, spec.w - kObjSize);
      bool clash = false;
      for (const auto& other : placed) {
        if (std::abs(other.home_y - obj.home_y) < kObjSize &&
            std::abs(other.home_x - obj.home_x) < kObjSize) {
          clash = true;
          break;
        }
      }
      if (!clash) return;
    }
  };
  auto sample_behavior = [&](ObjectSpec& obj) {
    if (obj.behavior == Behavior::Move) {
      obj.dir = rng.uniform_int(0, 3);
      obj.fast = rng.coin(0.5);
      obj.speed_px = obj.fast ? 3 : 1;
    } else if (obj.behavior == Behavior::Flash) {
      obj.fast = rng.coin(0.5);
      obj.flash_half = obj.fast ? 1 : 3;
    }
  };

  ObjectSpec& target = sample.target;
  target.color = rng.uniform_int(0, static_cast<int>(kColors.size()) - 1);
  target.shape = rng.uniform_int(0, static_cast<int>(kShapes.size()) - 1);
  target.behavior = rng.coin(spec.flash_prob) ? Behavior::Flash : Behavior::Move;
  sample_interval(&target.ev_start, &target.ev_end);
  sample_behavior(target);
  sample.gt_start = target.ev_start;
  sample.gt_end = target.ev_end;

  const int n_distractors = rng.uniform_int(spec.min_distractors, spec.max_distractors);
  std::vector<ObjectSpec> placed;
  for (int i = 0; i < n_distractors; ++i) {
    ObjectSpec d;
    for (int attempt = 0; attempt < 64; ++attempt) {
      d.color = rng.uniform_int(0, static_cast<int>(kColors.size()) - 1);
      d.shape = rng.uniform_int(0, static_cast<int>(kShapes.size()) - 1);
      bool dup = d.color == target.color && d.shape == target.shape;
      for (const auto& other : sample.distractors) {
        dup = dup || (d.color == other.color && d.shape == other.shape);
      }
      if (!dup) break;
    }
    if (rng.coin(spec.distractor_event_prob)) {
      d.behavior = rng.coin(0.5) ? Behavior::Flash : Behavior::Move;
      sample_interval(&d.ev_start, &d.ev_end);
      sample_behavior(d);
    } else {
      d.behavior = Behavior::Static;
    }
    sample_home(placed, d);
    placed.push_back(d);
    sample.distractors.push_back(d);
  }
  sample_home(placed, target);
  placed.push_back(target);

  // distractors first, target last (drawn on top)
  std::vector<ObjectSpec> scene(sample.distractors);
  scene.push_back(target);
  sample.video = render_scene(spec, scene, sample.bg_seed);

  // query tokens; nouns are exactly the color and shape words
  const int article = rng.uniform_int(0, 1);
  sample.token_ids = {tok_article(article), tok_color(target.color), tok_shape(target.shape)};
  sample.noun_mask = {0, 1, 1};
  if (target.behavior == Behavior::Move) {
    sample.token_ids.push_back(tok_move_verb(rng.uniform_int(0, 1)));
    sample.token_ids.push_back(tok_dir(target.dir));
  } else {
    sample.token_ids.push_back(tok_flash_verb(rng.uniform_int(0, 1)));
  }
  sample.token_ids.push_back(tok_speed(target.fast ? 0 : 1));
  while (sample.noun_mask.size() < sample.token_ids.size()) sample.noun_mask.push_back(0);
  return sample;
}

std::vector<GroundingSample> generate_dataset(const DatasetSpec& spec) {
  validate_spec(spec);
  std::vector<GroundingSample> out(static_cast<size_t>(spec.sample_count));
  parallel_for(spec.sample_count,
               [&](int i) { out[static_cast<size_t>(i)] = generate_sample(spec, i); });
  return out;
}

std::vector<std::vector<int>> split_indices(int n, const std::vector<double>& ratios,
                                            uint64_t seed) {
  double sum = 0;
  for (double r : ratios) {
    if (r < 0) throw ConfigError("split: negative ratio");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: ratios must sum to 1");

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ 0x5eed5eedULL);
  for (int i = n - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }

  std::vector<int> sizes;
  int assigned = 0;
  for (double r : ratios) {
    const int s = static_cast<int>(r * n);
    sizes.push_back(s);
    assigned += s;
  }
  for (int i = 0; assigned < n; ++assigned, i = (i + 1) % static_cast<int>(sizes.size())) {
    ++sizes[static_cast<size_t>(i)];
  }

  std::vector<std::vector<int>> parts;
  int off = 0;
  for (int s : sizes) {
    parts.emplace_back(order.begin() + off, order.begin() + off + s);
    off += s;
  }
  return parts;
}

std::string query_text(const GroundingSample& sample) {
  const auto& toks = synth_tokens();
  std::ostringstream os;
  for (size_t i = 0; i < sample.token_ids.size(); ++i) {
    os << (i ? " " : "") << toks[static_cast<size_t>(sample.token_ids[i])];
  }
  return os.str();
}

void write_dataset(const std::string& dir, const DatasetSpec& spec,
                   const std::vector<GroundingSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "samples");
  synth_vocabulary().save((fs::path(dir) / "vocab.txt").string());

  // encode all videos (parallel), then write in index order
  std::vector<CompressedStream> streams(samples.size());
  parallel_for(static_cast<int>(samples.size()), [&](int i) {
    streams[static_cast<size_t>(i)] =
        encode_video(samples[static_cast<size_t>(i)].video, spec.gop_p_frames, spec.block,
                     spec.radius);
  });

  std::ofstream manifest((fs::path(dir) / "manifest.txt").string());
  if (!manifest) throw IoError("cannot write manifest in " + dir);
  for (size_t i = 0; i < samples.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "%05zu", i);
    const auto& s = samples[i];
    manifest << id << "\t" << s.gt_start << "\t" << s.gt_end << "\t" << query_text(s) << "\n";

    save_stream_file((fs::path(dir) / "samples" / (std::string(id) + ".gops")).string(),
                     streams[i]);

    const int m = static_cast<int>(s.token_ids.size());
    std::vector<double> q(static_cast<size_t>(2) * m);
    for (int j = 0; j < m; ++j) {
      q[static_cast<size_t>(j)] = s.token_ids[static_cast<size_t>(j)];
      q[static_cast<size_t>(m + j)] = s.noun_mask[static_cast<size_t>(j)] ? 1.0 : 0.0;
    }
    save_tensor_file((fs::path(dir) / "samples" / (std::string(id) + ".query")).string(),
                     Tensor::from({2, m}, std::move(q)));

    std::ofstream gt((fs::path(dir) / "samples" / (std::string(id) + ".gt")).string());
    gt << s.gt_start << " " << s.gt_end << "\n";
  }
}

double random_guess_recall(const std::vector<std::pair<int, int>>& gts, int t_total, double iou_m,
                           uint64_t seed, int repeats) {
  if (gts.empty() || t_total < 1) throw ConfigError("random_guess_recall: empty input");
  const int64_t pairs = static_cast<int64_t>(t_total) * (t_total + 1) / 2;
  Rng rng(seed ^ 0x9999ULL);
  auto nth_pair = [&](int64_t k) {
    int s = 0;
    int64_t remaining = k;
    while (remaining >= t_total - s) {
      remaining -= t_total - s;
      ++s;
    }
    return std::pair<int, int>{s, s + static_cast<int>(remaining)};
  };
  double total = 0;
  for (int rep = 0; rep < repeats; ++rep) {
    int hits = 0;
    for (const auto& gt : gts) {
      const int64_t k = static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(pairs));
      const auto [s, e] = nth_pair(k);
      const int inter = std::max(0, std::min(e, gt.second) - std::max(s, gt.first) + 1);
      const int uni = (e - s + 1) + (gt.second - gt.first + 1) - inter;
      if (static_cast<double>(inter) / uni > iou_m) ++hits;
    }
    total += static_cast<double>(hits) / static_cast<double>(gts.size());
  }
  return total / repeats;
}

}  // namespace tcsf
