// Command-line harness: dataset generation, encoding, training, evaluation,
// efficiency measurement and single-sample grounding.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tcsf/checkpoint.hpp"
#include "tcsf/config.hpp"
#include "tcsf/synth_data.hpp"
#include "tcsf/trainer.hpp"

namespace fs = std::filesystem;
using namespace tcsf;

namespace {

TrainConfig build_config(const std::string& config_path, const std::vector<std::string>& ablate,
                         int seed, int epochs, int threads, bool paper_schedule) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config_file(config_path);
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  if (epochs > 0) cfg.max_epochs = epochs;
  if (threads > 0) cfg.threads = threads;
  if (paper_schedule) cfg.paper_schedule = true;
  for (const auto& flag : ablate) apply_ablation(cfg, flag);
  cfg.validate();
  return cfg;
}

std::vector<int> tokenize_query(const Vocabulary& vocab, const std::string& text) {
  std::vector<int> ids;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) ids.push_back(vocab.id(tok));
  return ids;
}

void dump_plane(const std::string& dir, const std::string& name, const Tensor& t) {
  save_tensor_file((fs::path(dir) / (name + ".tnsr")).string(), t);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compressed-domain temporal sentence grounding"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic grounding dataset");
  std::string gen_out = "data";
  int gen_train = 500, gen_val = 60, gen_test = 100;
  int gen_t = 64, gen_h = 32, gen_w = 32, gen_l = 3, gen_block = 8, gen_radius = 3;
  int gen_min_len = 16, gen_max_len = 32;
  int gen_seed = 0;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--train", gen_train, "training samples");
  gen->add_option("--val", gen_val, "validation samples");
  gen->add_option("--test", gen_test, "test samples");
  gen->add_option("--frames", gen_t, "frames per video");
  gen->add_option("--height", gen_h, "frame height");
  gen->add_option("--width", gen_w, "frame width");
  gen->add_option("--gop-len", gen_l, "P-frames per GOP");
  gen->add_option("--block", gen_block, "block size");
  gen->add_option("--radius", gen_radius, "motion search radius");
  gen->add_option("--min-len", gen_min_len, "minimum event length");
  gen->add_option("--max-len", gen_max_len, "maximum event length");
  gen->add_option("--seed", gen_seed, "dataset seed");

  // ---- encode ----
  auto* enc = app.add_subcommand("encode", "encode a raw video tensor into a GOP stream");
  std::string enc_input, enc_out = "stream.gops";
  int enc_l = 3, enc_block = 8, enc_radius = 3;
  enc->add_option("--input", enc_input, "T x H x W x 3 tensor file (values 0..255)")->required();
  enc->add_option("--gop-len", enc_l, "P-frames per GOP");
  enc->add_option("--block", enc_block, "block size");
  enc->add_option("--radius", enc_radius, "motion search radius");
  enc->add_option("--out", enc_out, "output stream path");

  // ---- inspect ----
  auto* insp = app.add_subcommand("inspect", "print stream header and per-frame kinds");
  std::string insp_path;
  insp->add_option("stream", insp_path, "stream file")->required();

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train a grounding model");
  std::string tr_data = "data", tr_out = "run", tr_config;
  std::vector<std::string> tr_ablate;
  int tr_seed = -1, tr_epochs = -1, tr_threads = 0;
  bool tr_paper = false;
  tr->add_option("--data", tr_data, "dataset root (train/ val/ test/)");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--config", tr_config, "config file (key = value lines)");
  tr->add_option("--ablate", tr_ablate, "ablation flag, repeatable");
  tr->add_option("--seed", tr_seed, "seed override");
  tr->add_option("--epochs", tr_epochs, "epoch override");
  tr->add_option("--threads", tr_threads, "worker threads");
  tr->add_flag("--paper-schedule", tr_paper, "100-epoch schedule");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  int ev_threads = 0;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset root")->required();
  ev->add_option("--split", ev_split, "split subdirectory");
  ev->add_option("--out", ev_out, "also write the report here");
  ev->add_option("--threads", ev_threads, "worker threads");

  // ---- bench ----
  auto* be = app.add_subcommand("bench", "compare compressed vs full-decode pipelines");
  BenchOptions bopts;
  std::string be_out;
  be->add_option("--videos", bopts.videos, "measured videos");
  be->add_option("--frames", bopts.t, "frames per video");
  be->add_option("--height", bopts.h, "frame height");
  be->add_option("--width", bopts.w, "frame width");
  be->add_option("--seed", bopts.seed, "generator seed");
  be->add_option("--out", be_out, "also write the report here");

  // ---- ground ----
  auto* gr = app.add_subcommand("ground", "ground a query in one compressed video");
  std::string gr_ckpt, gr_stream, gr_query, gr_vocab, gr_nouns, gr_dump_attn, gr_dump_feat;
  int gr_topn = 5;
  gr->add_option("--checkpoint", gr_ckpt, "checkpoint file")->required();
  gr->add_option("--stream", gr_stream, "compressed video (.gops)")->required();
  gr->add_option("--query", gr_query, "whitespace-separated query tokens")->required();
  gr->add_option("--vocab", gr_vocab, "vocabulary file")->required();
  gr->add_option("--nouns", gr_nouns, "comma-separated 0/1 noun mask (default: lexicon nouns)");
  gr->add_option("--top-n", gr_topn, "candidates to print");
  gr->add_option("--dump-attn", gr_dump_attn, "directory for attention dumps");
  gr->add_option("--dump-features", gr_dump_feat, "directory for feature dumps");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      DatasetSpec spec;
      spec.sample_count = gen_train + gen_val + gen_test;
      spec.t = gen_t;
      spec.h = gen_h;
      spec.w = gen_w;
      spec.gop_p_frames = gen_l;
      spec.block = gen_block;
      spec.radius = gen_radius;
      spec.min_len = gen_min_len;
      spec.max_len = gen_max_len;
      spec.seed = static_cast<uint64_t>(gen_seed);
      auto samples = generate_dataset(spec);
      const double n = spec.sample_count;
      auto parts = split_indices(spec.sample_count, {gen_train / n, gen_val / n, gen_test / n},
                                 spec.seed);
      const char* names[3] = {"train", "val", "test"};
      for (int p = 0; p < 3; ++p) {
        std::vector<GroundingSample> subset;
        for (int idx : parts[static_cast<size_t>(p)]) {
          subset.push_back(samples[static_cast<size_t>(idx)]);
        }
        write_dataset((fs::path(gen_out) / names[p]).string(), spec, subset);
        std::cout << names[p] << ": " << subset.size() << " samples\n";
      }
      std::cout << "wrote dataset to " << gen_out << "\n";
    } else if (*enc) {
      Tensor t = load_tensor_file(enc_input);
      if (t.rank() != 4 || t.dim(3) != 3) {
        throw ShapeError("encode: expected a T x H x W x 3 tensor");
      }
      RawVideo v = RawVideo::create(t.dim(0), t.dim(1), t.dim(2));
      for (size_t i = 0; i < v.pixels.size(); ++i) {
        const double x = t.values()[i];
        if (x < 0 || x > 255) throw ShapeError("encode: pixel values must lie in [0,255]");
        v.pixels[i] = static_cast<uint8_t>(x);
      }
      save_stream_file(enc_out, encode_video(v, enc_l, enc_block, enc_radius));
      std::cout << "wrote " << enc_out << "\n";
    } else if (*insp) {
      CompressedStream s = load_stream_file(insp_path);
      const auto& h = s.header;
      std::cout << "H=" << h.h << " W=" << h.w << " T_original=" << h.t_original
                << " N=" << h.n_gops << " L=" << h.l << " B=" << h.block
                << " radius=" << h.radius << "\n";
      auto records = partial_decode(s);
      std::cout << "frames:";
      for (const auto& r : records) std::cout << (r.kind == FrameRecord::Kind::I ? " I" : " P");
      std::cout << "\n";
    } else if (*tr) {
      TrainConfig cfg = build_config(tr_config, tr_ablate, tr_seed, tr_epochs, tr_threads, tr_paper);
      Dataset train_ds = load_dataset((fs::path(tr_data) / "train").string());
      Dataset val_ds;
      const bool has_val = fs::exists(fs::path(tr_data) / "val" / "manifest.txt");
      if (has_val) val_ds = load_dataset((fs::path(tr_data) / "val").string());
      fs::create_directories(tr_out);
      TrainOutcome out = train_model(cfg, train_ds, has_val ? &val_ds : nullptr,
                                     [](const std::string& s) { std::cout << s << "\n"; });
      save_checkpoint_file((fs::path(tr_out) / "checkpoint.tcsf").string(), out.checkpoint);
      save_config_file((fs::path(tr_out) / "config.txt").string(), cfg);
      std::ofstream log((fs::path(tr_out) / "train_log.txt").string());
      log << out.log_text;
      std::cout << "checkpoint written to " << tr_out << "/checkpoint.tcsf\n";
    } else if (*ev) {
      if (ev_threads > 0) set_default_thread_count(ev_threads);
      Checkpoint ck = load_checkpoint_file(ev_ckpt);
      Dataset ds = load_dataset((fs::path(ev_data) / ev_split).string());
      EvalReport report = evaluate_model(*ck.model, ds, {1, 5}, {0.3, 0.5, 0.7});
      std::cout << report.to_text();
      if (!ev_out.empty()) {
        std::ofstream f(ev_out);
        f << report.to_text();
      }
    } else if (*be) {
      BenchReport report = run_bench(bopts);
      std::cout << report.to_text();
      if (!be_out.empty()) {
        std::ofstream f(be_out);
        f << report.to_text();
      }
    } else if (*gr) {
      Checkpoint ck = load_checkpoint_file(gr_ckpt);
      Vocabulary vocab = Vocabulary::load(gr_vocab);
      if (vocab.size() != ck.vocab_size) {
        throw ConfigError("vocabulary size does not match checkpoint");
      }
      CompressedStream stream = load_stream_file(gr_stream);
      std::vector<int> ids = tokenize_query(vocab, gr_query);
      std::vector<uint8_t> mask;
      if (!gr_nouns.empty()) {
        std::istringstream is(gr_nouns);
        std::string part;
        while (std::getline(is, part, ',')) mask.push_back(part == "1" ? 1 : 0);
        if (mask.size() != ids.size()) throw ConfigError("--nouns length must match the query");
      } else {
        for (int id : ids) mask.push_back(synth_token_is_noun(id) ? 1 : 0);
      }

      NoGradGuard ng;
      auto records = partial_decode(stream);
      SampleInput in;
      in.records = &records;
      in.h = static_cast<int>(stream.header.h);
      in.w = static_cast<int>(stream.header.w);
      in.block = static_cast<int>(stream.header.block);
      in.radius = static_cast<int>(stream.header.radius);
      in.token_ids = &ids;
      in.noun_mask = &mask;
      ForwardAux aux;
      const bool want_aux = !gr_dump_attn.empty() || !gr_dump_feat.empty();
      ForwardResult fr = ck.model->forward(in, nullptr, 0.0, want_aux ? &aux : nullptr);
      auto cands = generate_candidates(fr.scores.p_start.values(), fr.scores.p_end.values(),
                                       fr.scores.gamma.values(), gr_topn, 0.5);
      for (size_t i = 0; i < cands.size(); ++i) {
        std::cout << "rank=" << i + 1 << " start=" << cands[i].s << " end=" << cands[i].e
                  << " score=" << cands[i].score << "\n";
      }

      if (!gr_dump_attn.empty()) {
        fs::create_directories(gr_dump_attn);
        static const char* branch_names[3] = {"appearance", "motion", "residual"};
        for (int b = 0; b < 3; ++b) {
          if (aux.spatial_maps[b].defined()) {
            dump_plane(gr_dump_attn, "spatial_" + std::string(branch_names[b]),
                       aux.spatial_maps[b]);
          }
          for (size_t wi = 0; wi < aux.temporal_weights[b].size(); ++wi) {
            dump_plane(gr_dump_attn,
                       "temporal_" + std::string(branch_names[b]) + "_" + std::to_string(wi),
                       aux.temporal_weights[b][wi]);
          }
        }
        for (int b = 0; b < 2; ++b) {
          if (aux.enhance_maps[b].defined()) {
            dump_plane(gr_dump_attn, "query_enhance_" + std::string(branch_names[b]),
                       aux.enhance_maps[b]);
          }
        }
        dump_plane(gr_dump_attn, "beta",
                   Tensor::from({static_cast<int>(aux.betas.size())}, aux.betas));
        std::cout << "attention dumps in " << gr_dump_attn << "\n";
      }
      if (!gr_dump_feat.empty()) {
        fs::create_directories(gr_dump_feat);
        std::ofstream sidecar((fs::path(gr_dump_feat) / "provenance.txt").string());
        for (size_t t = 0; t < aux.timeline.triples.size(); ++t) {
          const auto& tri = aux.timeline.triples[t];
          dump_plane(gr_dump_feat, "a_" + std::to_string(t), tri.a);
          dump_plane(gr_dump_feat, "m_" + std::to_string(t), tri.m);
          dump_plane(gr_dump_feat, "r_" + std::to_string(t), tri.r);
          sidecar << t << " a " << provenance_name(tri.prov_a) << "\n";
          sidecar << t << " m " << provenance_name(tri.prov_m) << "\n";
          sidecar << t << " r " << provenance_name(tri.prov_r) << "\n";
        }
        std::cout << "feature dumps in " << gr_dump_feat << "\n";
      }
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
