#include "tcsf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace tcsf {

namespace fs = std::filesystem;

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.vocab = Vocabulary::load((fs::path(dir) / "vocab.txt").string());

  std::ifstream manifest((fs::path(dir) / "manifest.txt").string());
  if (!manifest) throw IoError("cannot open manifest in " + dir);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    ids.push_back(tab == std::string::npos ? line : line.substr(0, tab));
  }
  if (ids.empty()) throw IoError("empty manifest in " + dir);

  ds.samples.resize(ids.size());
  parallel_for(static_cast<int>(ids.size()), [&](int i) {
    const std::string base = (fs::path(dir) / "samples" / ids[static_cast<size_t>(i)]).string();
    LoadedSample& s = ds.samples[static_cast<size_t>(i)];
    s.stream = load_stream_file(base + ".gops");

    Tensor q = load_tensor_file(base + ".query");
    if (q.rank() != 2 || q.dim(0) != 2) throw CorruptStreamError("bad query fixture: " + base);
    const int m = q.dim(1);
    for (int j = 0; j < m; ++j) {
      s.token_ids.push_back(static_cast<int>(q.values()[static_cast<size_t>(j)]));
      s.noun_mask.push_back(q.values()[static_cast<size_t>(m + j)] != 0.0 ? 1 : 0);
    }

    std::ifstream gt(base + ".gt");
    if (!(gt >> s.gt_start >> s.gt_end)) throw IoError("bad ground-truth file: " + base);
  });

  const auto& h0 = ds.samples[0].stream.header;
  ds.h = static_cast<int>(h0.h);
  ds.w = static_cast<int>(h0.w);
  ds.block = static_cast<int>(h0.block);
  ds.radius = static_cast<int>(h0.radius);
  ds.frames = static_cast<int>(h0.stored_frames());
  return ds;
}

SampleInput sample_input(const Dataset& ds, const LoadedSample& s,
                         const std::vector<FrameRecord>& records) {
  SampleInput in;
  in.records = &records;
  in.h = ds.h;
  in.w = ds.w;
  in.block = ds.block;
  in.radius = ds.radius;
  in.token_ids = &s.token_ids;
  in.noun_mask = &s.noun_mask;
  return in;
}

std::string EvalReport::to_text() const {
  std::string out;
  char buf[96];
  for (const auto& [k, v] : entries) {
    std::snprintf(buf, sizeof buf, "%s=%.4f\n", k.c_str(), v);
    out += buf;
  }
  return out;
}

double EvalReport::get(const std::string& key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return v;
  }
  throw std::logic_error("missing report entry: " + key);
}

EvalReport evaluate_model(const TcsfModel& model, const Dataset& ds,
                          const std::vector<int>& n_list, const std::vector<double>& m_list,
                          double nms_threshold) {
  const int n_samples = static_cast<int>(ds.samples.size());
  int top_n = 1;
  for (int n : n_list) top_n = std::max(top_n, n);

  std::vector<std::vector<Candidate>> cands(static_cast<size_t>(n_samples));
  std::vector<std::pair<int, int>> gts(static_cast<size_t>(n_samples));
  parallel_for(n_samples, [&](int i) {
    NoGradGuard ng;
    const LoadedSample& s = ds.samples[static_cast<size_t>(i)];
    auto records = partial_decode(s.stream);
    ForwardResult fr = model.forward(sample_input(ds, s, records), nullptr, 0.0);
    cands[static_cast<size_t>(i)] =
        generate_candidates(fr.scores.p_start.values(), fr.scores.p_end.values(),
                            fr.scores.gamma.values(), top_n, nms_threshold);
    gts[static_cast<size_t>(i)] = {s.gt_start, s.gt_end};
  });

  EvalReport report;
  char key[64];
  for (int n : n_list) {
    for (double m : m_list) {
      std::snprintf(key, sizeof key, "R@%d,IoU=%.1f", n, m);
      report.entries.emplace_back(key, recall_at_n(cands, gts, n, m));
    }
  }
  return report;
}

double dataset_loss(const TcsfModel& model, const Dataset& ds, double alpha) {
  const int n = static_cast<int>(ds.samples.size());
  std::vector<double> losses(static_cast<size_t>(n));
  parallel_for(n, [&](int i) {
    NoGradGuard ng;
    const LoadedSample& s = ds.samples[static_cast<size_t>(i)];
    auto records = partial_decode(s.stream);
    const std::pair<int, int> gt{s.gt_start, s.gt_end};
    losses[static_cast<size_t>(i)] =
        model.forward(sample_input(ds, s, records), &gt, alpha).total.item();
  });
  double sum = 0;
  for (double l : losses) sum += l;
  return sum / n;
}

namespace {

struct SampleGrads {
  double loss = 0;
  // aligned with ParamStore order; empty vector = no gradient contribution
  std::vector<std::vector<double>> per_param;
};

SampleGrads backprop_sample(const TcsfModel& model, const Dataset& ds, const LoadedSample& s,
                            double alpha, const std::vector<Tensor>& params) {
  SampleGrads out;
  auto records = partial_decode(s.stream);
  const std::pair<int, int> gt{s.gt_start, s.gt_end};
  ForwardResult fr = model.forward(sample_input(ds, s, records), &gt, alpha);
  out.loss = fr.total.item();
  GradMap gm;
  backward(fr.total, gm);
  out.per_param.resize(params.size());
  for (size_t p = 0; p < params.size(); ++p) {
    out.per_param[p] = gm.take(params[p].node().get());
  }
  return out;
}

}  // namespace

TrainOutcome train_model(const TrainConfig& cfg, const Dataset& train_ds, const Dataset* val_ds,
                         const std::function<void(const std::string&)>& log_line) {
  cfg.validate();
  if (train_ds.samples.empty()) throw ConfigError("train: empty dataset");
  if (cfg.threads > 0) set_default_thread_count(cfg.threads);

  TrainOutcome outcome;
  outcome.checkpoint = Checkpoint::fresh(cfg, train_ds.vocab.size());
  TcsfModel& model = *outcome.checkpoint.model;
  AdamOptimizer& opt = outcome.checkpoint.optimizer;
  std::vector<Tensor> params = model.params().tensors();

  const int n = static_cast<int>(train_ds.samples.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed ^ 0x0badc0deULL);

  auto emit = [&](const std::string& s) {
    outcome.log_text += s + "\n";
    if (log_line) log_line(s);
  };

  const int epochs = cfg.effective_epochs();
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(cfg.lr_decay, (epoch - 1) / cfg.lr_decay_every);
    opt.set_lr(lr);
    for (int i = n - 1; i > 0; --i) {
      const int j = shuffle_rng.uniform_int(0, i);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double epoch_loss = 0;
    int seen = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bn = std::min(cfg.batch_size, n - start);
      model.params().zero_grads();
      const double inv_bn = 1.0 / bn;
      const int lanes = std::max(1, default_thread_count());
      for (int base = 0; base < bn; base += lanes) {
        const int m = std::min(lanes, bn - base);
        std::vector<SampleGrads> results(static_cast<size_t>(m));
        parallel_for(m, [&](int i) {
          const LoadedSample& s =
              train_ds.samples[static_cast<size_t>(order[static_cast<size_t>(start + base + i)])];
          results[static_cast<size_t>(i)] = backprop_sample(model, train_ds, s, cfg.alpha, params);
        }, m);
        // merge in sample order; results are per-slot so the outcome does not
        // depend on thread scheduling
        for (int i = 0; i < m; ++i) {
          epoch_loss += results[static_cast<size_t>(i)].loss;
          ++seen;
          for (size_t p = 0; p < params.size(); ++p) {
            auto& src = results[static_cast<size_t>(i)].per_param[p];
            if (src.empty()) continue;
            auto& dst = params[p].grad();
            for (size_t k = 0; k < dst.size(); ++k) dst[k] += inv_bn * src[k];
          }
        }
      }
      opt.step(params);
    }
    epoch_loss /= std::max(1, seen);

    EpochLog el;
    el.epoch = epoch;
    el.lr = lr;
    el.train_loss = epoch_loss;
    std::ostringstream line;
    line << "epoch=" << epoch << " lr=" << lr << " loss=" << epoch_loss;
    if (val_ds && !val_ds->samples.empty() &&
        (epoch % cfg.eval_every == 0 || epoch == epochs)) {
      el.val = evaluate_model(model, *val_ds, {1, 5}, {0.3, 0.5, 0.7});
      el.has_val = true;
      line << " val_R@1,IoU=0.5=" << el.val.get("R@1,IoU=0.5");
    }
    emit(line.str());
    outcome.epochs.push_back(std::move(el));
  }
  outcome.checkpoint.epoch = epochs;
  return outcome;
}

// ---------------------------------------------------------------------------
// Efficiency measurement
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Stand-in for the heavy decoded-domain backbone (C3D/I3D class): a much
// wider stack applied to every decoded frame.
struct HeavyEncoder {
  std::vector<Tensor> k, b;

  explicit HeavyEncoder(Rng& rng, int out_channels) {
    auto stage = [&](int cin, int cout, int kside) {
      k.push_back(Tensor::from({cout, cin, kside, kside},
                               he_uniform(rng, static_cast<int64_t>(cout) * cin * kside * kside,
                                          static_cast<int64_t>(cin) * kside * kside)));
      b.push_back(Tensor::zeros({cout}));
    };
    stage(3, 32, 4);   // stride 2
    stage(32, 64, 4);  // stride 2
    stage(64, 64, 3);
    stage(64, out_channels, 3);
  }

  Tensor encode(const Tensor& frame) const {
    Tensor x = relu(conv2d(frame, k[0], b[0], 2, 1));
    x = relu(conv2d(x, k[1], b[1], 2, 1));
    x = relu(conv2d(x, k[2], b[2], 1, 1));
    return relu(conv2d(x, k[3], b[3], 1, 1));
  }
};

Tensor frame_to_tensor(const uint8_t* pixels, int h, int w) {
  std::vector<double> vals(static_cast<size_t>(3) * h * w);
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int64_t p = 0; p < hw; ++p) {
    for (int c = 0; c < 3; ++c) vals[static_cast<size_t>(c * hw + p)] = pixels[p * 3 + c] / 255.0;
  }
  return Tensor::from({3, h, w}, std::move(vals));
}

}  // namespace

BenchReport run_bench(const BenchOptions& opts) {
  NoGradGuard ng;

  // --- setup (untimed): render, encode, serialize -----------------------------
  DatasetSpec dspec;
  dspec.sample_count = opts.videos + 1;
  dspec.t = opts.t;
  dspec.h = opts.h;
  dspec.w = opts.w;
  dspec.gop_p_frames = opts.gop_p_frames;
  dspec.block = opts.block;
  dspec.radius = opts.radius;
  dspec.seed = opts.seed;
  dspec.min_len = std::max(2, opts.t / 8);
  dspec.max_len = std::max(dspec.min_len, opts.t / 3);
  auto samples = generate_dataset(dspec);

  std::vector<std::string> blobs(samples.size());
  parallel_for(static_cast<int>(samples.size()), [&](int i) {
    CompressedStream s = encode_video(samples[static_cast<size_t>(i)].video, opts.gop_p_frames,
                                      opts.block, opts.radius);
    std::ostringstream os(std::ios::binary);
    write_stream(os, s);
    blobs[static_cast<size_t>(i)] = os.str();
  });

  ModelConfig mc;
  mc.vocab_size = synth_vocabulary().size();
  // lean text settings: the query side is identical in both paths
  mc.embed_dim = 32;
  mc.gru_hidden = 32;
  mc.attn_heads = 4;
  mc.attn_dim = 32;
  TcsfModel model(mc, 11);
  Rng hrng(13);
  HeavyEncoder heavy(hrng, mc.channels);

  const std::vector<int> token_ids = samples[0].token_ids;
  const std::vector<uint8_t> noun_mask = samples[0].noun_mask;

  BenchReport report;
  report.videos = opts.videos;

  auto downstream = [&](const std::vector<Tensor>& a_list, const std::vector<Tensor>& m_list,
                        const std::vector<Tensor>& r_list, const QueryEncoding& enc,
                        const Tensor& noun_feat) {
    const auto& fusion = model.fusion();
    const bool has_motion = !m_list.empty();
    const int t_total = static_cast<int>(a_list.size());
    Tensor a = fusion.spatial_attention_batch(stack_rows(a_list), noun_feat, Branch::Appearance);
    a = fusion.temporal_attention_batch(a, Branch::Appearance);
    Tensor m, r;
    if (has_motion) {
      m = fusion.spatial_attention_batch(stack_rows(m_list), noun_feat, Branch::Motion);
      r = fusion.spatial_attention_batch(stack_rows(r_list), noun_feat, Branch::Residual);
      m = fusion.temporal_attention_batch(m, Branch::Motion);
      r = fusion.temporal_attention_batch(r, Branch::Residual);
    }
    std::vector<uint8_t> all_words(token_ids.size(), 1);
    Tensor word_mean = masked_mean_rows(enc.word_feats, all_words);
    Tensor text_term = fusion.multimodal_text_term(word_mean, enc.q_global);
    auto [f_a, ma] = fusion.query_guided_enhance_batch(a, enc.word_feats, Branch::Appearance);
    Tensor f_v;
    if (has_motion) {
      auto [f_m, mm] = fusion.query_guided_enhance_batch(m, enc.word_feats, Branch::Motion);
      Tensor beta = fusion.residual_balance_batch(r);
      f_v = fusion.fuse_batch(f_a, f_m, beta);
    } else {
      f_v = fusion.fuse_batch(f_a, f_a, Tensor::full({t_total}, 1.0));
    }
    return model.head().score(fusion.multimodal_batch(f_v, text_term));
  };

  for (int vi = 0; vi < static_cast<int>(blobs.size()); ++vi) {
    const bool warmup = vi == 0;
    PathTiming a, b;

    // ---------------- path A: compressed ----------------
    {
      auto t0 = Clock::now();
      std::istringstream is(blobs[static_cast<size_t>(vi)], std::ios::binary);
      CompressedStream stream = read_stream(is);
      auto records = partial_decode(stream);
      a.t_dec = seconds_since(t0);

      const int t_total = static_cast<int>(records.size());
      std::vector<Tensor> a_enc(static_cast<size_t>(t_total));
      std::vector<Tensor> m_enc(static_cast<size_t>(t_total)), r_enc(static_cast<size_t>(t_total));

      t0 = Clock::now();
      for (int t = 0; t < t_total; ++t) {
        const auto& rec = records[static_cast<size_t>(t)];
        if (rec.kind == FrameRecord::Kind::I) {
          a_enc[static_cast<size_t>(t)] = model.visual().encode_iframe(rec.i_pixels, opts.h, opts.w);
        }
      }
      a.t_ext_iframe = seconds_since(t0);

      t0 = Clock::now();
      for (int t = 0; t < t_total; ++t) {
        const auto& rec = records[static_cast<size_t>(t)];
        if (rec.kind == FrameRecord::Kind::P) {
          m_enc[static_cast<size_t>(t)] =
              model.visual().encode_motion(*rec.mv, opts.h, opts.w, opts.block, opts.radius);
        }
      }
      a.t_ext_mv = seconds_since(t0);

      t0 = Clock::now();
      for (int t = 0; t < t_total; ++t) {
        const auto& rec = records[static_cast<size_t>(t)];
        if (rec.kind == FrameRecord::Kind::P) {
          r_enc[static_cast<size_t>(t)] = model.visual().encode_residual(rec.residual, opts.h, opts.w);
        }
      }
      a.t_ext_residual = seconds_since(t0);

      // network execution: query encoding, pseudo features, attention, head
      t0 = Clock::now();
      QueryEncoding enc = model.text().encode(token_ids);
      Tensor noun_feat = TextEncoder::noun_pool(enc, noun_mask);
      std::vector<int16_t> zero_res(static_cast<size_t>(opts.h) * opts.w * 3, 0);
      Tensor zero_r_feat;
      for (int t = 0; t < t_total; ++t) {
        const auto& rec = records[static_cast<size_t>(t)];
        if (rec.kind == FrameRecord::Kind::P) {
          auto disp = VisualFrontend::mv_pixel_field(*rec.mv, opts.h, opts.w, opts.block);
          a_enc[static_cast<size_t>(t)] = VisualFrontend::pseudo_appearance(
              a_enc[static_cast<size_t>(t) - 1], disp, opts.h, opts.w, model.visual().config().sigma);
        }
      }
      for (int t = 0; t < t_total; ++t) {
        const auto& rec = records[static_cast<size_t>(t)];
        if (rec.kind == FrameRecord::Kind::I) {
          std::vector<Tensor> window;
          for (int k = 0; k < model.visual().config().pseudo_window && t + k < t_total; ++k) {
            window.push_back(a_enc[static_cast<size_t>(t + k)]);
          }
          m_enc[static_cast<size_t>(t)] = model.visual().pseudo_motion(window);
          if (!zero_r_feat.defined()) {
            zero_r_feat = model.visual().encode_residual(zero_res.data(), opts.h, opts.w);
          }
          r_enc[static_cast<size_t>(t)] = zero_r_feat;
        }
      }
      downstream(a_enc, m_enc, r_enc, enc, noun_feat);
      a.t_exe = seconds_since(t0);
    }

    // ---------------- path B: full decode + heavy encoder ----------------
    {
      auto t0 = Clock::now();
      std::istringstream is(blobs[static_cast<size_t>(vi)], std::ios::binary);
      CompressedStream stream = read_stream(is);
      RawVideo video = decode_full(stream);
      b.t_dec = seconds_since(t0);

      t0 = Clock::now();
      std::vector<Tensor> frames(static_cast<size_t>(video.t));
      for (int t = 0; t < video.t; ++t) {
        frames[static_cast<size_t>(t)] =
            heavy.encode(frame_to_tensor(video.frame(t), opts.h, opts.w));
      }
      b.t_ext_other = seconds_since(t0);

      t0 = Clock::now();
      QueryEncoding enc = model.text().encode(token_ids);
      Tensor noun_feat = TextEncoder::noun_pool(enc, noun_mask);
      downstream(frames, {}, {}, enc, noun_feat);
      b.t_exe = seconds_since(t0);
    }

    if (!warmup) {
      report.compressed.t_dec += a.t_dec;
      report.compressed.t_ext_iframe += a.t_ext_iframe;
      report.compressed.t_ext_mv += a.t_ext_mv;
      report.compressed.t_ext_residual += a.t_ext_residual;
      report.compressed.t_exe += a.t_exe;
      report.baseline.t_dec += b.t_dec;
      report.baseline.t_ext_other += b.t_ext_other;
      report.baseline.t_exe += b.t_exe;
    }
  }
  return report;
}

std::string BenchReport::to_text() const {
  char buf[512];
  std::string out;
  std::snprintf(buf, sizeof buf,
                "path=compressed videos=%d T_dec=%.4f T_ext_iframe=%.4f T_ext_mv=%.4f "
                "T_ext_residual=%.4f T_ext=%.4f T_exe=%.4f T_total=%.4f\n",
                videos, compressed.t_dec, compressed.t_ext_iframe, compressed.t_ext_mv,
                compressed.t_ext_residual, compressed.t_ext(), compressed.t_exe,
                compressed.t_total());
  out += buf;
  std::snprintf(buf, sizeof buf,
                "path=baseline videos=%d T_dec=%.4f T_ext_other=%.4f T_ext=%.4f T_exe=%.4f "
                "T_total=%.4f\n",
                videos, baseline.t_dec, baseline.t_ext_other, baseline.t_ext(), baseline.t_exe,
                baseline.t_total());
  out += buf;
  std::snprintf(buf, sizeof buf, "ratio_compressed_over_baseline=%.4f\n", ratio());
  out += buf;
  return out;
}

}  // namespace tcsf
