#include "tcsf/gop_codec.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace tcsf {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

void check_geometry(int h, int w, int block) {
  if (h < 1 || w < 1) throw ShapeError("frame dimensions must be positive");
  if (block < 1) throw ShapeError("block size must be positive");
  if (h % block != 0 || w % block != 0) {
    throw ShapeError("frame " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by block " + std::to_string(block));
  }
}

int64_t block_sad(const uint8_t* ref, const uint8_t* target, int h, int w, int by, int bx,
                  int block, int dy, int dx) {
  int64_t sad = 0;
  for (int y = 0; y < block; ++y) {
    const int ty = by * block + y;
    const int sy = clampi(ty + dy, 0, h - 1);
    const uint8_t* trow = target + (static_cast<int64_t>(ty) * w) * 3;
    const uint8_t* srow = ref + (static_cast<int64_t>(sy) * w) * 3;
    for (int x = 0; x < block; ++x) {
      const int tx = bx * block + x;
      const int sx = clampi(tx + dx, 0, w - 1);
      const uint8_t* tp = trow + tx * 3;
      const uint8_t* sp = srow + sx * 3;
      sad += std::abs(int(tp[0]) - int(sp[0])) + std::abs(int(tp[1]) - int(sp[1])) +
             std::abs(int(tp[2]) - int(sp[2]));
    }
  }
  return sad;
}

}  // namespace

MotionField block_match(FrameView ref, FrameView target, int block, int radius) {
  if (ref.h != target.h || ref.w != target.w) {
    throw ShapeError("block_match: reference and target frame sizes differ");
  }
  check_geometry(target.h, target.w, block);
  if (radius < 0) throw ShapeError("block_match: radius must be >= 0");

  MotionField field;
  field.blocks_y = target.h / block;
  field.blocks_x = target.w / block;
  field.vals.resize(static_cast<size_t>(field.blocks_y) * field.blocks_x * 2);

  for (int by = 0; by < field.blocks_y; ++by) {
    for (int bx = 0; bx < field.blocks_x; ++bx) {
      int64_t best_sad = std::numeric_limits<int64_t>::max();
      int best_l1 = std::numeric_limits<int>::max();
      int best_dy = 0, best_dx = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int64_t sad =
              block_sad(ref.data, target.data, target.h, target.w, by, bx, block, dy, dx);
          const int l1 = std::abs(dy) + std::abs(dx);
          if (sad < best_sad || (sad == best_sad && l1 < best_l1)) {
            best_sad = sad;
            best_l1 = l1;
            best_dy = dy;
            best_dx = dx;
          }
        }
      }
      const size_t idx = 2 * (static_cast<size_t>(by) * field.blocks_x + bx);
      field.vals[idx] = static_cast<int16_t>(best_dy);
      field.vals[idx + 1] = static_cast<int16_t>(best_dx);
    }
  }
  return field;
}

std::vector<uint8_t> motion_compensate(FrameView ref, const MotionField& mv, int block) {
  check_geometry(ref.h, ref.w, block);
  if (mv.blocks_y != ref.h / block || mv.blocks_x != ref.w / block) {
    throw ShapeError("motion_compensate: motion field does not match geometry");
  }
  std::vector<uint8_t> out(static_cast<size_t>(ref.h) * ref.w * 3);
  for (int by = 0; by < mv.blocks_y; ++by) {
    for (int bx = 0; bx < mv.blocks_x; ++bx) {
      const int dy = mv.dy(by, bx);
      const int dx = mv.dx(by, bx);
      for (int y = 0; y < block; ++y) {
        const int ty = by * block + y;
        const int sy = clampi(ty + dy, 0, ref.h - 1);
        for (int x = 0; x < block; ++x) {
          const int tx = bx * block + x;
          const int sx = clampi(tx + dx, 0, ref.w - 1);
          std::memcpy(out.data() + (static_cast<int64_t>(ty) * ref.w + tx) * 3,
                      ref.data + (static_cast<int64_t>(sy) * ref.w + sx) * 3, 3);
        }
      }
    }
  }
  return out;
}

CompressedStream encode_video(const RawVideo& v, int gop_p_frames, int block, int radius) {
  if (v.t < 1) throw ShapeError("encode_video: need at least one frame");
  check_geometry(v.h, v.w, block);
  if (gop_p_frames < 1) throw ShapeError("encode_video: GOP must contain at least one P-frame");
  if (radius < 0) throw ShapeError("encode_video: radius must be >= 0");
  if (v.pixels.size() != static_cast<size_t>(v.t) * v.frame_bytes()) {
    throw ShapeError("encode_video: pixel buffer size mismatch");
  }

  const int fpg = gop_p_frames + 1;
  const int n_gops = (v.t + fpg - 1) / fpg;
  const int padded_t = n_gops * fpg;

  CompressedStream s;
  s.header.h = static_cast<uint32_t>(v.h);
  s.header.w = static_cast<uint32_t>(v.w);
  s.header.t_original = static_cast<uint32_t>(v.t);
  s.header.n_gops = static_cast<uint32_t>(n_gops);
  s.header.l = static_cast<uint32_t>(gop_p_frames);
  s.header.block = static_cast<uint32_t>(block);
  s.header.radius = static_cast<uint32_t>(radius);
  s.gops.resize(static_cast<size_t>(n_gops));

  const int64_t fb = v.frame_bytes();
  auto frame_at = [&](int t) -> const uint8_t* {
    return v.frame(std::min(t, v.t - 1));  // padding repeats the final frame
  };

  for (int g = 0; g < n_gops; ++g) {
    Gop& gop = s.gops[static_cast<size_t>(g)];
    const uint8_t* iframe = frame_at(g * fpg);
    gop.i_frame.assign(iframe, iframe + fb);
    // P-frames reference the previous reconstructed frame; residuals are exact
    // so the reconstruction equals the source frame.
    std::vector<uint8_t> prev(gop.i_frame);
    gop.p_frames.resize(static_cast<size_t>(gop_p_frames));
    for (int l = 1; l <= gop_p_frames; ++l) {
      const uint8_t* target = frame_at(g * fpg + l);
      PFrame& pf = gop.p_frames[static_cast<size_t>(l - 1)];
      pf.mv = block_match({prev.data(), v.h, v.w}, {target, v.h, v.w}, block, radius);
      std::vector<uint8_t> pred = motion_compensate({prev.data(), v.h, v.w}, pf.mv, block);
      pf.residual.resize(static_cast<size_t>(fb));
      for (int64_t i = 0; i < fb; ++i) {
        pf.residual[static_cast<size_t>(i)] =
            static_cast<int16_t>(int(target[i]) - int(pred[i]));
      }
      prev.assign(target, target + fb);
    }
  }
  (void)padded_t;
  return s;
}

namespace {

void validate_stream_shape(const CompressedStream& s) {
  const auto& h = s.header;
  if (h.n_gops < 1) throw CorruptStreamError("stream must contain at least one GOP");
  if (h.h < 1 || h.w < 1 || h.block < 1) throw CorruptStreamError("bad geometry in header");
  if (h.h % h.block != 0 || h.w % h.block != 0) {
    throw CorruptStreamError("frame size not divisible by block size");
  }
  const uint32_t stored = h.stored_frames();
  if (h.t_original > stored || h.t_original + h.l < stored) {
    throw CorruptStreamError("original frame count inconsistent with GOP layout");
  }
  if (s.gops.size() != h.n_gops) throw CorruptStreamError("GOP count mismatch");
  const size_t fb = static_cast<size_t>(h.h) * h.w * 3;
  const size_t mvn = (static_cast<size_t>(h.h) / h.block) * (h.w / h.block) * 2;
  for (const auto& gop : s.gops) {
    if (gop.i_frame.size() != fb) throw CorruptStreamError("I-frame size mismatch");
    if (gop.p_frames.size() != h.l) throw CorruptStreamError("P-frame count mismatch");
    for (const auto& pf : gop.p_frames) {
      if (pf.mv.vals.size() != mvn) throw CorruptStreamError("motion field size mismatch");
      if (pf.residual.size() != fb) throw CorruptStreamError("residual size mismatch");
      for (int16_t d : pf.mv.vals) {
        if (d < -static_cast<int>(h.radius) || d > static_cast<int>(h.radius)) {
          throw CorruptStreamError("motion vector outside search radius");
        }
      }
    }
  }
}

}  // namespace

RawVideo decode_full(const CompressedStream& s) {
  validate_stream_shape(s);
  const auto& h = s.header;
  const int fpg = static_cast<int>(h.l) + 1;
  RawVideo out = RawVideo::create(static_cast<int>(h.t_original), static_cast<int>(h.h),
                                  static_cast<int>(h.w));
  const int64_t fb = out.frame_bytes();
  int emitted = 0;
  for (uint32_t g = 0; g < h.n_gops && emitted < out.t; ++g) {
    const Gop& gop = s.gops[g];
    std::memcpy(out.frame(emitted), gop.i_frame.data(), static_cast<size_t>(fb));
    std::vector<uint8_t> prev(gop.i_frame);
    ++emitted;
    for (int l = 1; l < fpg && emitted < out.t; ++l) {
      const PFrame& pf = gop.p_frames[static_cast<size_t>(l - 1)];
      std::vector<uint8_t> pred = motion_compensate(
          {prev.data(), static_cast<int>(h.h), static_cast<int>(h.w)}, pf.mv,
          static_cast<int>(h.block));
      uint8_t* dst = out.frame(emitted);
      for (int64_t i = 0; i < fb; ++i) {
        dst[i] = static_cast<uint8_t>(clampi(int(pred[i]) + int(pf.residual[i]), 0, 255));
      }
      prev.assign(dst, dst + fb);
      ++emitted;
    }
  }
  return out;
}

std::vector<FrameRecord> partial_decode(const CompressedStream& s) {
  validate_stream_shape(s);
  const auto& h = s.header;
  std::vector<FrameRecord> records;
  records.reserve(h.stored_frames());
  for (uint32_t g = 0; g < h.n_gops; ++g) {
    const Gop& gop = s.gops[g];
    FrameRecord ir;
    ir.kind = FrameRecord::Kind::I;
    ir.gop_index = static_cast<int>(g);
    ir.offset = 0;
    ir.i_pixels = gop.i_frame.data();
    records.push_back(ir);
    for (uint32_t l = 0; l < h.l; ++l) {
      const PFrame& pf = gop.p_frames[l];
      FrameRecord pr;
      pr.kind = FrameRecord::Kind::P;
      pr.gop_index = static_cast<int>(g);
      pr.offset = static_cast<int>(l) + 1;
      pr.mv = &pf.mv;
      pr.residual = pf.residual.data();
      records.push_back(pr);
    }
  }
  return records;
}

void write_stream(std::ostream& os, const CompressedStream& s) {
  validate_stream_shape(s);
  const auto& h = s.header;
  os.write("GOPS", 4);
  write_u32(os, 1);  // format version
  write_u32(os, h.h);
  write_u32(os, h.w);
  write_u32(os, h.t_original);
  write_u32(os, h.n_gops);
  write_u32(os, h.l);
  write_u32(os, h.block);
  write_u32(os, h.radius);
  for (const auto& gop : s.gops) {
    os.write(reinterpret_cast<const char*>(gop.i_frame.data()),
             static_cast<std::streamsize>(gop.i_frame.size()));
    for (const auto& pf : gop.p_frames) {
      for (int16_t v : pf.mv.vals) write_i16(os, v);
      for (int16_t v : pf.residual) write_i16(os, v);
    }
  }
  if (!os) throw IoError("failed writing stream");
}

CompressedStream read_stream(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GOPS", 4) != 0) throw CorruptStreamError("bad stream magic");
  const uint32_t version = read_u32(is);
  if (version != 1) throw CorruptStreamError("unsupported stream version");

  CompressedStream s;
  auto& h = s.header;
  h.h = read_u32(is);
  h.w = read_u32(is);
  h.t_original = read_u32(is);
  h.n_gops = read_u32(is);
  h.l = read_u32(is);
  h.block = read_u32(is);
  h.radius = read_u32(is);
  if (h.h > (1u << 14) || h.w > (1u << 14) || h.n_gops > (1u << 20) || h.l > (1u << 20) ||
      h.block > (1u << 14) || h.radius > (1u << 14)) {
    throw CorruptStreamError("implausible header values");
  }
  if (h.h < 1 || h.w < 1 || h.block < 1 || h.n_gops < 1) {
    throw CorruptStreamError("bad geometry in header");
  }
  if (h.h % h.block != 0 || h.w % h.block != 0) {
    throw CorruptStreamError("frame size not divisible by block size");
  }

  const size_t fb = static_cast<size_t>(h.h) * h.w * 3;
  const size_t mvn = (static_cast<size_t>(h.h) / h.block) * (h.w / h.block) * 2;
  s.gops.resize(h.n_gops);
  for (auto& gop : s.gops) {
    gop.i_frame.resize(fb);
    is.read(reinterpret_cast<char*>(gop.i_frame.data()), static_cast<std::streamsize>(fb));
    if (!is) throw CorruptStreamError("truncated I-frame");
    gop.p_frames.resize(h.l);
    for (auto& pf : gop.p_frames) {
      pf.mv.blocks_y = static_cast<int>(h.h / h.block);
      pf.mv.blocks_x = static_cast<int>(h.w / h.block);
      pf.mv.vals.resize(mvn);
      for (auto& v : pf.mv.vals) v = read_i16(is);
      pf.residual.resize(fb);
      for (auto& v : pf.residual) v = read_i16(is);
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CorruptStreamError("trailing data after stream payload");
  }
  validate_stream_shape(s);
  return s;
}

void save_stream_file(const std::string& path, const CompressedStream& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  write_stream(f, s);
}

CompressedStream load_stream_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  return read_stream(f);
}

bool stream_equal(const CompressedStream& a, const CompressedStream& b) {
  const auto& ha = a.header;
  const auto& hb = b.header;
  if (ha.h != hb.h || ha.w != hb.w || ha.t_original != hb.t_original || ha.n_gops != hb.n_gops ||
      ha.l != hb.l || ha.block != hb.block || ha.radius != hb.radius) {
    return false;
  }
  if (a.gops.size() != b.gops.size()) return false;
  for (size_t g = 0; g < a.gops.size(); ++g) {
    if (a.gops[g].i_frame != b.gops[g].i_frame) return false;
    if (a.gops[g].p_frames.size() != b.gops[g].p_frames.size()) return false;
    for (size_t p = 0; p < a.gops[g].p_frames.size(); ++p) {
      if (a.gops[g].p_frames[p].mv.vals != b.gops[g].p_frames[p].mv.vals) return false;
      if (a.gops[g].p_frames[p].residual != b.gops[g].p_frames[p].residual) return false;
    }
  }
  return true;
}

}  // namespace tcsf
