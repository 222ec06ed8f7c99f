#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "tcsf/common.hpp"

namespace tcsf {

// Raw video, T x H x W x 3 interleaved 8-bit pixels.
struct RawVideo {
  int t = 0, h = 0, w = 0;
  std::vector<uint8_t> pixels;

  static RawVideo create(int t, int h, int w) {
    RawVideo v;
    v.t = t;
    v.h = h;
    v.w = w;
    v.pixels.assign(static_cast<size_t>(t) * h * w * 3, 0);
    return v;
  }
  int64_t frame_bytes() const { return static_cast<int64_t>(h) * w * 3; }
  const uint8_t* frame(int i) const { return pixels.data() + i * frame_bytes(); }
  uint8_t* frame(int i) { return pixels.data() + i * frame_bytes(); }

  bool operator==(const RawVideo& o) const {
    return t == o.t && h == o.h && w == o.w && pixels == o.pixels;
  }
};

struct FrameView {
  const uint8_t* data;  // h*w*3
  int h;
  int w;
};

// Per-block displacements, (h/B) x (w/B) pairs of (dy, dx).
struct MotionField {
  int blocks_y = 0, blocks_x = 0;
  std::vector<int16_t> vals;  // 2 per block

  int16_t dy(int by, int bx) const { return vals[2 * (static_cast<size_t>(by) * blocks_x + bx)]; }
  int16_t dx(int by, int bx) const {
    return vals[2 * (static_cast<size_t>(by) * blocks_x + bx) + 1];
  }
};

struct PFrame {
  MotionField mv;
  std::vector<int16_t> residual;  // h*w*3
};

struct Gop {
  std::vector<uint8_t> i_frame;  // h*w*3
  std::vector<PFrame> p_frames;
};

struct StreamHeader {
  uint32_t h = 0, w = 0;
  uint32_t t_original = 0;  // frame count before last-GOP padding
  uint32_t n_gops = 0;
  uint32_t l = 0;  // P-frames per GOP
  uint32_t block = 0;
  uint32_t radius = 0;

  uint32_t stored_frames() const { return n_gops * (l + 1); }
};

struct CompressedStream {
  StreamHeader header;
  std::vector<Gop> gops;
};

struct FrameRecord {
  enum class Kind { I, P };
  Kind kind;
  int gop_index;
  int offset;                         // position within the GOP, 0 for the I-frame
  const uint8_t* i_pixels = nullptr;  // I only, h*w*3
  const MotionField* mv = nullptr;    // P only
  const int16_t* residual = nullptr;  // P only, h*w*3
};

// Exhaustive SAD search over [-radius, radius]^2 with edge-clamped sampling.
// Ties: smaller |dy|+|dx| first, then row-major (dy, dx) scan order.
MotionField block_match(FrameView ref, FrameView target, int block, int radius);

// Prediction of a frame from `ref` under `mv` (edge-clamped lookups).
std::vector<uint8_t> motion_compensate(FrameView ref, const MotionField& mv, int block);

// Lossless GOP encoding: each P-frame is matched against the previous
// reconstructed frame; residuals make the round trip bit-exact.
CompressedStream encode_video(const RawVideo& v, int gop_p_frames, int block, int radius);

RawVideo decode_full(const CompressedStream& s);

// Parses per-frame planes without reconstructing P-frame pixels. Records
// point into `s`; the stream must outlive them.
std::vector<FrameRecord> partial_decode(const CompressedStream& s);

void write_stream(std::ostream& os, const CompressedStream& s);
CompressedStream read_stream(std::istream& is);
void save_stream_file(const std::string& path, const CompressedStream& s);
CompressedStream load_stream_file(const std::string& path);

bool stream_equal(const CompressedStream& a, const CompressedStream& b);

}  // namespace tcsf
