#pragma once

// Independent reference implementations used only by tests. Deliberately
// written as plain nested loops, separate from the library code they check.

#include <cmath>
#include <cstdint>
#include <limits>
#include <tuple>
#include <vector>

namespace testsupport {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// --- exhaustive SAD block matching -----------------------------------------

struct OracleMv {
  int dy, dx;
  long long sad;
};

inline long long oracle_sad(const uint8_t* ref, const uint8_t* target, int h, int w, int by,
                            int bx, int block, int dy, int dx) {
  long long sad = 0;
  for (int y = 0; y < block; ++y) {
    for (int x = 0; x < block; ++x) {
      const int ty = by * block + y;
      const int tx = bx * block + x;
      const int sy = clampi(ty + dy, 0, h - 1);
      const int sx = clampi(tx + dx, 0, w - 1);
      for (int c = 0; c < 3; ++c) {
        const int tv = target[(ty * w + tx) * 3 + c];
        const int sv = ref[(sy * w + sx) * 3 + c];
        sad += std::abs(tv - sv);
      }
    }
  }
  return sad;
}

inline OracleMv oracle_block_match(const uint8_t* ref, const uint8_t* target, int h, int w,
                                   int by, int bx, int block, int radius) {
  OracleMv best{0, 0, std::numeric_limits<long long>::max()};
  int best_l1 = std::numeric_limits<int>::max();
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const long long sad = oracle_sad(ref, target, h, w, by, bx, block, dy, dx);
      const int l1 = std::abs(dy) + std::abs(dx);
      if (sad < best.sad || (sad == best.sad && l1 < best_l1)) {
        best = {dy, dx, sad};
        best_l1 = l1;
      }
    }
  }
  return best;
}

// --- per-cell warp ----------------------------------------------------------

// out[c][y][x] = src[c][cy][cx] where (cy,cx) = clamp((y,x) + round(d/sigma)).
// Displacements are read per cell from a pixel-resolution field at (y*s, x*s).
inline std::vector<double> oracle_warp(const std::vector<double>& src, int c, int h, int w,
                                       const std::vector<double>& disp_pixels, int ph, int pw,
                                       int sigma) {
  std::vector<double> out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int py = clampi(y * sigma, 0, ph - 1);
      const int px = clampi(x * sigma, 0, pw - 1);
      const double dy = disp_pixels[static_cast<size_t>(0 * ph * pw + py * pw + px)];
      const double dx = disp_pixels[static_cast<size_t>(1 * ph * pw + py * pw + px)];
      const int fy = static_cast<int>(std::llround(dy / sigma));
      const int fx = static_cast<int>(std::llround(dx / sigma));
      const int sy = clampi(y + fy, 0, h - 1);
      const int sx = clampi(x + fx, 0, w - 1);
      for (int ci = 0; ci < c; ++ci) {
        out[static_cast<size_t>(ci * h * w + y * w + x)] =
            src[static_cast<size_t>(ci * h * w + sy * w + sx)];
      }
    }
  }
  return out;
}

// --- brute-force candidate generation + greedy NMS ---------------------------

struct OracleCandidate {
  int s, e;
  double score;
};

inline double oracle_iou(int s1, int e1, int s2, int e2) {
  const int inter = std::max(0, std::min(e1, e2) - std::max(s1, s2) + 1);
  const int uni = (e1 - s1 + 1) + (e2 - s2 + 1) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Selection loop re-scans all remaining pairs for the maximum instead of
// sorting, so it exercises a different code path than the implementation.
inline std::vector<OracleCandidate> oracle_nms(const std::vector<double>& ps,
                                               const std::vector<double>& pe,
                                               const std::vector<double>& gamma, int top_n,
                                               double nms_threshold) {
  const int t = static_cast<int>(ps.size());
  std::vector<double> prefix(static_cast<size_t>(t) + 1, 0.0);
  for (int i = 0; i < t; ++i) prefix[static_cast<size_t>(i) + 1] = prefix[static_cast<size_t>(i)] + gamma[static_cast<size_t>(i)];
  std::vector<OracleCandidate> pool;
  for (int s = 0; s < t; ++s) {
    for (int e = s; e < t; ++e) {
      const double mean_g = (prefix[static_cast<size_t>(e) + 1] - prefix[static_cast<size_t>(s)]) /
                            static_cast<double>(e - s + 1);
      pool.push_back({s, e, ps[static_cast<size_t>(s)] * pe[static_cast<size_t>(e)] * mean_g});
    }
  }
  std::vector<bool> used(pool.size(), false);
  std::vector<OracleCandidate> kept;
  while (static_cast<int>(kept.size()) < top_n) {
    int best = -1;
    for (size_t i = 0; i < pool.size(); ++i) {
      if (used[i]) continue;
      if (best < 0 || pool[i].score > pool[static_cast<size_t>(best)].score ||
          (pool[i].score == pool[static_cast<size_t>(best)].score &&
           std::make_pair(pool[i].s, pool[i].e) < std::make_pair(pool[static_cast<size_t>(best)].s,
                                                                 pool[static_cast<size_t>(best)].e))) {
        best = static_cast<int>(i);
      }
    }
    if (best < 0) break;
    used[static_cast<size_t>(best)] = true;
    const auto& c = pool[static_cast<size_t>(best)];
    bool overlaps = false;
    for (const auto& k : kept) {
      if (oracle_iou(c.s, c.e, k.s, k.e) >= nms_threshold) {
        overlaps = true;
        break;
      }
    }
    if (!overlaps) kept.push_back(c);
  }
  return kept;
}

}  // namespace testsupport
