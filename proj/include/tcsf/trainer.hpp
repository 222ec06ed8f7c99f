#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tcsf/checkpoint.hpp"
#include "tcsf/config.hpp"
#include "tcsf/synth_data.hpp"

namespace tcsf {

struct LoadedSample {
  CompressedStream stream;
  std::vector<int> token_ids;
  std::vector<uint8_t> noun_mask;
  int gt_start = 0, gt_end = 0;
};

struct Dataset {
  Vocabulary vocab;
  std::vector<LoadedSample> samples;
  int h = 0, w = 0, block = 0, radius = 0, frames = 0;
};

Dataset load_dataset(const std::string& dir);

SampleInput sample_input(const Dataset& ds, const LoadedSample& s,
                         const std::vector<FrameRecord>& records);

// Ordered key=value report, e.g. "R@1,IoU=0.5=0.7320".
struct EvalReport {
  std::vector<std::pair<std::string, double>> entries;

  std::string to_text() const;
  double get(const std::string& key) const;
};

EvalReport evaluate_model(const TcsfModel& model, const Dataset& ds,
                          const std::vector<int>& n_list, const std::vector<double>& m_list,
                          double nms_threshold = 0.5);

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  EvalReport val;
  bool has_val = false;
};

struct TrainOutcome {
  Checkpoint checkpoint;
  std::vector<EpochLog> epochs;
  std::string log_text;
};

// Minimizes the combined loss with Adam over the train split; logs per-epoch
// loss and validation recall. Deterministic for a fixed (config, dataset).
TrainOutcome train_model(const TrainConfig& cfg, const Dataset& train_ds, const Dataset* val_ds,
                         const std::function<void(const std::string&)>& log_line = {});

// Mean combined loss over the dataset (forward only).
double dataset_loss(const TcsfModel& model, const Dataset& ds, double alpha);

// --- efficiency measurement --------------------------------------------------

struct BenchOptions {
  int videos = 20;  // measured videos (one extra warm-up run is discarded)
  int t = 300;
  int h = 64, w = 64;
  int gop_p_frames = 3;
  int block = 8;
  int radius = 2;
  uint64_t seed = 7;
};

struct PathTiming {
  double t_dec = 0;
  double t_ext_iframe = 0, t_ext_mv = 0, t_ext_residual = 0, t_ext_other = 0;
  double t_exe = 0;
  double t_ext() const { return t_ext_iframe + t_ext_mv + t_ext_residual + t_ext_other; }
  double t_total() const { return t_dec + t_ext() + t_exe; }
};

struct BenchReport {
  PathTiming compressed;  // partial decode + I/MV/residual encoders + TCSF net
  PathTiming baseline;    // full decode + heavy per-frame encoder + net
  int videos = 0;

  double ratio() const { return compressed.t_total() / baseline.t_total(); }
  std::string to_text() const;
};

BenchReport run_bench(const BenchOptions& opts);

}  // namespace tcsf
