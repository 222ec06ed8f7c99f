#include "tcsf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace tcsf {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace {

std::atomic<bool> g_debug_checks{false};
thread_local bool g_grad_enabled = true;

NodePtr make_node(Shape shape, std::vector<double> values) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return n;
}

void attach(const NodePtr& n, std::vector<NodePtr> parents,
            std::function<void(const double*, GradMap&)> backprop) {
  if (!g_grad_enabled) return;
  bool any_live = false;
  for (const auto& p : parents) {
    if (p->live) {
      any_live = true;
      break;
    }
  }
  if (!any_live) return;
  n->live = true;
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
}

void debug_finite(const NodePtr& n, const char* op) {
  if (!g_debug_checks.load(std::memory_order_relaxed)) return;
  for (double v : n->values) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Register-blocked row-major kernel for C = opA(A) * B with B untransposed.
// The inner block stays in registers across the whole k loop.
template <bool TA>
void mm_rows_blocked(double* c, const double* a, const double* b, int m, int n, int k,
                     bool accumulate) {
  constexpr int JB = 32;
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<int64_t>(i) * n;
    int j0 = 0;
    for (; j0 + JB <= n; j0 += JB) {
      double acc[JB];
      if (accumulate) {
        for (int j = 0; j < JB; ++j) acc[j] = crow[j0 + j];
      } else {
        for (int j = 0; j < JB; ++j) acc[j] = 0.0;
      }
      for (int p = 0; p < k; ++p) {
        const double av = TA ? a[static_cast<int64_t>(p) * m + i] : a[static_cast<int64_t>(i) * k + p];
        const double* brow = b + static_cast<int64_t>(p) * n + j0;
        for (int j = 0; j < JB; ++j) acc[j] += av * brow[j];
      }
      for (int j = 0; j < JB; ++j) crow[j0 + j] = acc[j];
    }
    if (j0 < n) {
      const int jb = n - j0;
      double acc[JB];
      if (accumulate) {
        for (int j = 0; j < jb; ++j) acc[j] = crow[j0 + j];
      } else {
        for (int j = 0; j < jb; ++j) acc[j] = 0.0;
      }
      for (int p = 0; p < k; ++p) {
        const double av = TA ? a[static_cast<int64_t>(p) * m + i] : a[static_cast<int64_t>(i) * k + p];
        const double* brow = b + static_cast<int64_t>(p) * n + j0;
        for (int j = 0; j < jb; ++j) acc[j] += av * brow[j];
      }
      for (int j = 0; j < jb; ++j) crow[j0 + j] = acc[j];
    }
  }
}

// C[m,n] (+)= opA(A) * opB(B); A,B,C row-major physical buffers.
void mm_accum(double* c, const double* a, const double* b, int m, int n, int k, bool ta, bool tb,
              bool accumulate) {
  if (!tb) {
    if (ta) {
      mm_rows_blocked<true>(c, a, b, m, n, k, accumulate);
    } else {
      mm_rows_blocked<false>(c, a, b, m, n, k, accumulate);
    }
    return;
  }
  if (!accumulate) std::fill(c, c + static_cast<int64_t>(m) * n, 0.0);
  if (!ta) {
    // B physical [n,k]: rows of dot products over contiguous memory
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<int64_t>(i) * k;
      double* crow = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<int64_t>(j) * k;
        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
        int p = 0;
        for (; p + 4 <= k; p += 4) {
          a0 += arow[p] * brow[p];
          a1 += arow[p + 1] * brow[p + 1];
          a2 += arow[p + 2] * brow[p + 2];
          a3 += arow[p + 3] * brow[p + 3];
        }
        double acc = (a0 + a1) + (a2 + a3);
        for (; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] += acc;
      }
    }
  } else {
    // A physical [k,m], B physical [n,k]
    for (int i = 0; i < m; ++i) {
      double* crow = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<int64_t>(j) * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += a[static_cast<int64_t>(p) * m + i] * brow[p];
        crow[j] += acc;
      }
    }
  }
}

}  // namespace

void set_debug_checks(bool on) { g_debug_checks.store(on, std::memory_order_relaxed); }
bool debug_checks_enabled() { return g_debug_checks.load(std::memory_order_relaxed); }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

double* GradMap::buffer(TensorNode* n) {
  auto it = bufs_.find(n);
  if (it == bufs_.end()) {
    it = bufs_.emplace(n, std::vector<double>(static_cast<size_t>(n->numel()), 0.0)).first;
  }
  return it->second.data();
}

const std::vector<double>* GradMap::find(TensorNode* n) const {
  auto it = bufs_.find(n);
  return it == bufs_.end() ? nullptr : &it->second;
}

std::vector<double> GradMap::take(TensorNode* n) {
  auto it = bufs_.find(n);
  if (it == bufs_.end()) return {};
  std::vector<double> out = std::move(it->second);
  bufs_.erase(it);
  return out;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  int64_t n = shape_numel(shape);
  return wrap(make_node(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0)));
}

Tensor Tensor::full(Shape shape, double v) {
  int64_t n = shape_numel(shape);
  return wrap(make_node(std::move(shape), std::vector<double>(static_cast<size_t>(n), v)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("from: value count does not match shape " + shape_str(shape));
  }
  return wrap(make_node(std::move(shape), std::move(values)));
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node()->requires_grad = true;
  t.node()->live = true;
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " values");
  return node_->values[0];
}

std::vector<double>& Tensor::grad() {
  if (!node_->requires_grad) throw std::logic_error("grad: tensor does not require grad");
  if (node_->grad.size() != static_cast<size_t>(numel())) {
    node_->grad.assign(static_cast<size_t>(numel()), 0.0);
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(static_cast<size_t>(numel()), 0.0);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node(), pb = b.node();
  attach(n, {pa, pb}, [pa, pb](const double* g, GradMap& gm) {
    size_t sz = pa->values.size();
    if (pa->live) {
      double* da = gm.buffer(pa.get());
      for (size_t i = 0; i < sz; ++i) da[i] += g[i];
    }
    if (pb->live) {
      double* db = gm.buffer(pb.get());
      for (size_t i = 0; i < sz; ++i) db[i] += g[i];
    }
  });
  debug_finite(n, "add");
  return Tensor::wrap(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node(), pb = b.node();
  attach(n, {pa, pb}, [pa, pb](const double* g, GradMap& gm) {
    size_t sz = pa->values.size();
    if (pa->live) {
      double* da = gm.buffer(pa.get());
      for (size_t i = 0; i < sz; ++i) da[i] += g[i];
    }
    if (pb->live) {
      double* db = gm.buffer(pb.get());
      for (size_t i = 0; i < sz; ++i) db[i] -= g[i];
    }
  });
  debug_finite(n, "sub");
  return Tensor::wrap(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node(), pb = b.node();
  attach(n, {pa, pb}, [pa, pb](const double* g, GradMap& gm) {
    size_t sz = pa->values.size();
    if (pa->live) {
      double* da = gm.buffer(pa.get());
      for (size_t i = 0; i < sz; ++i) da[i] += g[i] * pb->values[i];
    }
    if (pb->live) {
      double* db = gm.buffer(pb.get());
      for (size_t i = 0; i < sz; ++i) db[i] += g[i] * pa->values[i];
    }
  });
  debug_finite(n, "mul");
  return Tensor::wrap(n);
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= c;
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node();
  attach(n, {pa}, [pa, c](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    for (size_t i = 0; i < pa->values.size(); ++i) da[i] += c * g[i];
  });
  debug_finite(n, "scale");
  return Tensor::wrap(n);
}

Tensor add_const(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (double& v : out) v += c;
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node();
  attach(n, {pa}, [pa](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    for (size_t i = 0; i < pa->values.size(); ++i) da[i] += g[i];
  });
  debug_finite(n, "add_const");
  return Tensor::wrap(n);
}

Tensor rsub_const(double c, const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = c - v;
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node();
  attach(n, {pa}, [pa](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    for (size_t i = 0; i < pa->values.size(); ++i) da[i] -= g[i];
  });
  debug_finite(n, "rsub_const");
  return Tensor::wrap(n);
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node();
  attach(n, {pa}, [pa](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    for (size_t i = 0; i < pa->values.size(); ++i) {
      if (pa->values[i] > 0.0) da[i] += g[i];
    }
  });
  debug_finite(n, "relu");
  return Tensor::wrap(n);
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node();
  TensorNode* self = n.get();  // alive while the graph is alive
  attach(n, {pa}, [pa, self](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    for (size_t i = 0; i < pa->values.size(); ++i) {
      double y = self->values[i];
      da[i] += g[i] * y * (1.0 - y);
    }
  });
  debug_finite(n, "sigmoid");
  return Tensor::wrap(n);
}

Tensor tanh_t(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = std::tanh(v);
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node();
  TensorNode* self = n.get();
  attach(n, {pa}, [pa, self](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    for (size_t i = 0; i < pa->values.size(); ++i) {
      double y = self->values[i];
      da[i] += g[i] * (1.0 - y * y);
    }
  });
  debug_finite(n, "tanh");
  return Tensor::wrap(n);
}

Tensor log_t(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = std::log(v);
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node();
  attach(n, {pa}, [pa](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    for (size_t i = 0; i < pa->values.size(); ++i) da[i] += g[i] / pa->values[i];
  });
  debug_finite(n, "log");
  return Tensor::wrap(n);
}

Tensor clamp_t(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  std::vector<double> out(a.values());
  for (double& v : out) v = std::min(std::max(v, lo), hi);
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node();
  attach(n, {pa, }, [pa, lo, hi](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    for (size_t i = 0; i < pa->values.size(); ++i) {
      double x = pa->values[i];
      if (x > lo && x < hi) da[i] += g[i];
    }
  });
  debug_finite(n, "clamp");
  return Tensor::wrap(n);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  int m = trans_a ? a.dim(1) : a.dim(0);
  int ka = trans_a ? a.dim(0) : a.dim(1);
  int kb = trans_b ? b.dim(1) : b.dim(0);
  int nn = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  std::vector<double> out(static_cast<size_t>(m) * nn);
  mm_accum(out.data(), a.values().data(), b.values().data(), m, nn, ka, trans_a, trans_b, false);
  auto n = make_node({m, nn}, std::move(out));
  auto pa = a.node(), pb = b.node();
  attach(n, {pa, pb}, [pa, pb, m, nn, ka, trans_a, trans_b](const double* g, GradMap& gm) {
    if (pa->live) {
      double* da = gm.buffer(pa.get());
      if (!trans_a) {
        // dA = dC * opB(B)^T
        mm_accum(da, g, pb->values.data(), m, ka, nn, false, !trans_b, true);
      } else {
        // dA_phys = opB(B) * dC^T
        mm_accum(da, pb->values.data(), g, ka, m, nn, trans_b, true, true);
      }
    }
    if (pb->live) {
      double* db = gm.buffer(pb.get());
      if (!trans_b) {
        // dB = opA(A)^T * dC
        mm_accum(db, pa->values.data(), g, ka, nn, m, !trans_a, false, true);
      } else {
        // dB_phys = dC^T * opA(A)
        mm_accum(db, g, pa->values.data(), nn, ka, m, true, trans_a, true);
      }
    }
  });
  debug_finite(n, "matmul");
  return Tensor::wrap(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be rank 2");
  if (x.rank() != 1 && x.rank() != 2) throw ShapeError("linear: input must be rank 1 or 2");
  int in = w.dim(0), out_dim = w.dim(1);
  int rows = x.rank() == 2 ? x.dim(0) : 1;
  int xin = x.rank() == 2 ? x.dim(1) : x.dim(0);
  if (xin != in) {
    throw ShapeError("linear: input features " + std::to_string(xin) + " vs weight rows " +
                     std::to_string(in));
  }
  if (b.rank() != 1 || b.dim(0) != out_dim) throw ShapeError("linear: bias shape mismatch");
  std::vector<double> out(static_cast<size_t>(rows) * out_dim);
  mm_accum(out.data(), x.values().data(), w.values().data(), rows, out_dim, in, false, false,
           false);
  for (int r = 0; r < rows; ++r) {
    double* row = out.data() + static_cast<int64_t>(r) * out_dim;
    for (int j = 0; j < out_dim; ++j) row[j] += b.values()[static_cast<size_t>(j)];
  }
  Shape oshape = x.rank() == 2 ? Shape{rows, out_dim} : Shape{out_dim};
  auto n = make_node(std::move(oshape), std::move(out));
  auto px = x.node(), pw = w.node(), pb = b.node();
  attach(n, {px, pw, pb}, [px, pw, pb, rows, in, out_dim](const double* g, GradMap& gm) {
    if (px->live) {
      double* dx = gm.buffer(px.get());
      mm_accum(dx, g, pw->values.data(), rows, in, out_dim, false, true, true);
    }
    if (pw->live) {
      double* dw = gm.buffer(pw.get());
      mm_accum(dw, px->values.data(), g, in, out_dim, rows, true, false, true);
    }
    if (pb->live) {
      double* db = gm.buffer(pb.get());
      for (int r = 0; r < rows; ++r) {
        const double* grow = g + static_cast<int64_t>(r) * out_dim;
        for (int j = 0; j < out_dim; ++j) db[j] += grow[j];
      }
    }
  });
  debug_finite(n, "linear");
  return Tensor::wrap(n);
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int padding) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError("conv2d: input must be [C,H,W] or [N,C,H,W]");
  }
  if (k.rank() != 4) throw ShapeError("conv2d: kernel must be [Cout,Cin,kh,kw]");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  const bool batched = x.rank() == 4;
  const int nb = batched ? x.dim(0) : 1;
  const int cin = x.dim(batched ? 1 : 0), h = x.dim(batched ? 2 : 1), w = x.dim(batched ? 3 : 2);
  const int cout = k.dim(0), kcin = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  if (kcin != cin) throw ShapeError("conv2d: channel mismatch");
  if (bias.rank() != 1 || bias.dim(0) != cout) throw ShapeError("conv2d: bias shape mismatch");
  const int ho_num = h + 2 * padding - kh;
  const int wo_num = w + 2 * padding - kw;
  if (ho_num < 0 || wo_num < 0 || ho_num % stride != 0 || wo_num % stride != 0) {
    throw ShapeError("conv2d: geometry (H=" + std::to_string(h) + ", kh=" + std::to_string(kh) +
                     ", pad=" + std::to_string(padding) + ", stride=" + std::to_string(stride) +
                     ") does not produce integral output size");
  }
  const int ho = ho_num / stride + 1;
  const int wo = wo_num / stride + 1;
  const int64_t hw = static_cast<int64_t>(h) * w;
  const int64_t ohw = static_cast<int64_t>(ho) * wo;
  const int kdim = cin * kh * kw;

  // im2col: cols[(ci*kh+ky)*kw+kx][oy*wo+ox] = x[ci][oy*s-p+ky][ox*s-p+kx]
  auto fill_cols = [=](const double* xv, double* cols) {
    for (int ci = 0; ci < cin; ++ci) {
      const double* xplane = xv + ci * hw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          double* row = cols + (static_cast<int64_t>(ci) * kh * kw + ky * kw + kx) * ohw;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - padding + ky;
            double* dst = row + static_cast<int64_t>(oy) * wo;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + wo, 0.0);
              continue;
            }
            const double* xrow = xplane + static_cast<int64_t>(iy) * w;
            if (stride == 1) {
              const int shift = kx - padding;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox + shift;
                dst[ox] = (ix < 0 || ix >= w) ? 0.0 : xrow[ix];
              }
            } else {
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride - padding + kx;
                dst[ox] = (ix < 0 || ix >= w) ? 0.0 : xrow[ix];
              }
            }
          }
        }
      }
    }
  };
  const bool is_1x1 = kh == 1 && kw == 1 && stride == 1 && padding == 0;
  const int64_t in_frame = static_cast<int64_t>(cin) * hw;
  const int64_t out_frame = static_cast<int64_t>(cout) * ohw;

  std::vector<double> out(static_cast<size_t>(nb) * out_frame);
  const double* xv = x.values().data();
  const double* kv = k.values().data();
  const double* bv = bias.values().data();
  {
    std::vector<double> cols;
    if (!is_1x1) cols.resize(static_cast<size_t>(kdim) * ohw);
    for (int bi = 0; bi < nb; ++bi) {
      const double* xframe = xv + bi * in_frame;
      double* oframe = out.data() + bi * out_frame;
      const double* colp = xframe;
      if (!is_1x1) {
        fill_cols(xframe, cols.data());
        colp = cols.data();
      }
      mm_accum(oframe, kv, colp, cout, static_cast<int>(ohw), kdim, false, false, false);
      for (int co = 0; co < cout; ++co) {
        double* oplane = oframe + co * ohw;
        const double b = bv[co];
        for (int64_t p = 0; p < ohw; ++p) oplane[p] += b;
      }
    }
  }

  Shape oshape = batched ? Shape{nb, cout, ho, wo} : Shape{cout, ho, wo};
  auto n = make_node(std::move(oshape), std::move(out));
  auto px = x.node(), pk = k.node(), pb = bias.node();
  attach(n, {px, pk, pb},
         [px, pk, pb, nb, cin, h, w, cout, kh, kw, ho, wo, stride, padding, hw, ohw, kdim, is_1x1,
          in_frame, out_frame, fill_cols](const double* g, GradMap& gm) {
           double* dx = px->live ? gm.buffer(px.get()) : nullptr;
           double* dk = pk->live ? gm.buffer(pk.get()) : nullptr;
           double* db = pb->live ? gm.buffer(pb.get()) : nullptr;
           const double* xv = px->values.data();
           const double* kv = pk->values.data();
           if (db) {
             for (int bi = 0; bi < nb; ++bi) {
               const double* gframe = g + bi * out_frame;
               for (int co = 0; co < cout; ++co) {
                 const double* gplane = gframe + co * ohw;
                 double acc = 0.0;
                 for (int64_t i = 0; i < ohw; ++i) acc += gplane[i];
                 db[co] += acc;
               }
             }
           }
           if (!dx && !dk) return;
           std::vector<double> cols, dcols;
           if (!is_1x1) {
             if (dk) cols.resize(static_cast<size_t>(kdim) * ohw);
             if (dx) dcols.resize(static_cast<size_t>(kdim) * ohw);
           }
           for (int bi = 0; bi < nb; ++bi) {
             const double* xframe = xv + bi * in_frame;
             const double* gframe = g + bi * out_frame;
             double* dxframe = dx ? dx + bi * in_frame : nullptr;
             if (is_1x1) {
               if (dxframe) {
                 mm_accum(dxframe, kv, gframe, cin, static_cast<int>(ohw), cout, true, false, true);
               }
               if (dk) {
                 mm_accum(dk, gframe, xframe, cout, cin, static_cast<int>(ohw), false, true, true);
               }
               continue;
             }
             if (dk) {
               fill_cols(xframe, cols.data());
               // dK += G * cols^T
               mm_accum(dk, gframe, cols.data(), cout, kdim, static_cast<int>(ohw), false, true,
                        true);
             }
             if (dxframe) {
               // dcols = K^T * G, then scatter back (col2im)
               mm_accum(dcols.data(), kv, gframe, kdim, static_cast<int>(ohw), cout, true, false,
                        false);
               for (int ci = 0; ci < cin; ++ci) {
                 double* dxplane = dxframe + ci * hw;
                 for (int ky = 0; ky < kh; ++ky) {
                   for (int kx = 0; kx < kw; ++kx) {
                     const double* row =
                         dcols.data() + (static_cast<int64_t>(ci) * kh * kw + ky * kw + kx) * ohw;
                     for (int oy = 0; oy < ho; ++oy) {
                       const int iy = oy * stride - padding + ky;
                       if (iy < 0 || iy >= h) continue;
                       double* dxrow = dxplane + static_cast<int64_t>(iy) * w;
                       const double* src = row + static_cast<int64_t>(oy) * wo;
                       if (stride == 1) {
                         const int shift = kx - padding;
                         const int lo = std::max(0, -shift);
                         const int hi = std::min(wo - 1, w - 1 - shift);
                         for (int ox = lo; ox <= hi; ++ox) dxrow[ox + shift] += src[ox];
                       } else {
                         for (int ox = 0; ox < wo; ++ox) {
                           const int ix = ox * stride - padding + kx;
                           if (ix >= 0 && ix < w) dxrow[ix] += src[ox];
                         }
                       }
                     }
                   }
                 }
               }
             }
           }
         });
  debug_finite(n, "conv2d");
  return Tensor::wrap(n);
}

// ---------------------------------------------------------------------------
// Shape & indexing
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto n = make_node(std::move(shape), a.values());
  auto pa = a.node();
  attach(n, {pa}, [pa](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    for (size_t i = 0; i < pa->values.size(); ++i) da[i] += g[i];
  });
  return Tensor::wrap(n);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) throw ShapeError("concat: bad axis");
  Shape oshape = parts[0].shape();
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != axis && p.dim(d) != oshape[static_cast<size_t>(d)]) {
        throw ShapeError("concat: shape mismatch on non-concat axis");
      }
    }
    axis_total += p.dim(axis);
  }
  oshape[static_cast<size_t>(axis)] = static_cast<int>(axis_total);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= oshape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= oshape[static_cast<size_t>(d)];

  std::vector<double> out(static_cast<size_t>(shape_numel(oshape)));
  const int64_t ostride = axis_total * inner;
  int64_t axis_off = 0;
  for (const auto& p : parts) {
    const int64_t pa_axis = p.dim(axis);
    const double* pv = p.values().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + o * ostride + axis_off * inner, pv + o * pa_axis * inner,
                  static_cast<size_t>(pa_axis * inner) * sizeof(double));
    }
    axis_off += pa_axis;
  }
  auto n = make_node(std::move(oshape), std::move(out));
  std::vector<NodePtr> pnodes;
  pnodes.reserve(parts.size());
  for (const auto& p : parts) pnodes.push_back(p.node());
  std::vector<int64_t> part_axis(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) part_axis[i] = parts[i].dim(axis);
  attach(n, pnodes, [pnodes, part_axis, outer, inner, ostride](const double* g, GradMap& gm) {
    int64_t axis_off = 0;
    for (size_t pi = 0; pi < pnodes.size(); ++pi) {
      const int64_t pa_axis = part_axis[pi];
      if (pnodes[pi]->live) {
        double* dp = gm.buffer(pnodes[pi].get());
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = g + o * ostride + axis_off * inner;
          double* dst = dp + o * pa_axis * inner;
          for (int64_t i = 0; i < pa_axis * inner; ++i) dst[i] += src[i];
        }
      }
      axis_off += pa_axis;
    }
  });
  debug_finite(n, "concat");
  return Tensor::wrap(n);
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  const int rank = a.rank();
  if (axis < 0 || axis >= rank) throw ShapeError("slice: bad axis");
  if (start < 0 || len < 1 || start + len > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of bounds for axis size " + std::to_string(a.dim(axis)));
  }
  Shape oshape = a.shape();
  oshape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.dim(d);
  for (int d = axis + 1; d < rank; ++d) inner *= a.dim(d);
  const int64_t in_axis = a.dim(axis);

  std::vector<double> out(static_cast<size_t>(shape_numel(oshape)));
  const double* av = a.values().data();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * len * inner, av + (o * in_axis + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(double));
  }
  auto n = make_node(std::move(oshape), std::move(out));
  auto pa = a.node();
  attach(n, {pa}, [pa, outer, inner, in_axis, start, len](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = g + o * len * inner;
      double* dst = da + (o * in_axis + start) * inner;
      for (int64_t i = 0; i < static_cast<int64_t>(len) * inner; ++i) dst[i] += src[i];
    }
  });
  return Tensor::wrap(n);
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_rows: table must be [V,d]");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw VocabError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(v));
    }
  }
  const int m = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<size_t>(m) * d);
  const double* tv = table.values().data();
  for (int i = 0; i < m; ++i) {
    std::memcpy(out.data() + static_cast<int64_t>(i) * d, tv + static_cast<int64_t>(ids[i]) * d,
                static_cast<size_t>(d) * sizeof(double));
  }
  auto n = make_node({m, d}, std::move(out));
  auto pt = table.node();
  attach(n, {pt}, [pt, ids, d, m](const double* g, GradMap& gm) {
    double* dt = gm.buffer(pt.get());
    for (int i = 0; i < m; ++i) {
      double* row = dt + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d;
      const double* grow = g + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) row[j] += grow[j];
    }
  });
  debug_finite(n, "embedding_rows");
  return Tensor::wrap(n);
}

Tensor gather_cells(const Tensor& plane, const std::vector<int>& src_index) {
  if (plane.rank() != 3) throw ShapeError("gather_cells: plane must be [C,H,W]");
  const int c = plane.dim(0);
  const int64_t hw = static_cast<int64_t>(plane.dim(1)) * plane.dim(2);
  if (static_cast<int64_t>(src_index.size()) != hw) {
    throw ShapeError("gather_cells: index map size mismatch");
  }
  for (int idx : src_index) {
    if (idx < 0 || idx >= hw) throw ShapeError("gather_cells: index out of range");
  }
  std::vector<double> out(static_cast<size_t>(c) * hw);
  const double* pv = plane.values().data();
  for (int ci = 0; ci < c; ++ci) {
    const double* src = pv + ci * hw;
    double* dst = out.data() + ci * hw;
    for (int64_t p = 0; p < hw; ++p) dst[p] = src[src_index[static_cast<size_t>(p)]];
  }
  auto n = make_node(plane.shape(), std::move(out));
  auto pp = plane.node();
  attach(n, {pp}, [pp, src_index, c, hw](const double* g, GradMap& gm) {
    double* dp = gm.buffer(pp.get());
    for (int ci = 0; ci < c; ++ci) {
      double* drow = dp + ci * hw;
      const double* grow = g + ci * hw;
      for (int64_t p = 0; p < hw; ++p) drow[src_index[static_cast<size_t>(p)]] += grow[p];
    }
  });
  debug_finite(n, "gather_cells");
  return Tensor::wrap(n);
}

Tensor masked_mean_rows(const Tensor& x, const std::vector<uint8_t>& mask) {
  if (x.rank() != 2) throw ShapeError("masked_mean_rows: input must be [M,d]");
  const int m = x.dim(0), d = x.dim(1);
  if (static_cast<int>(mask.size()) != m) throw ShapeError("masked_mean_rows: mask length");
  int count = 0;
  for (uint8_t b : mask) count += b ? 1 : 0;
  if (count == 0) throw std::invalid_argument("masked_mean_rows: empty mask");
  std::vector<double> out(static_cast<size_t>(d), 0.0);
  const double* xv = x.values().data();
  for (int i = 0; i < m; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const double* row = xv + static_cast<int64_t>(i) * d;
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += row[j];
  }
  const double inv = 1.0 / count;
  for (double& v : out) v *= inv;
  auto n = make_node({d}, std::move(out));
  auto px = x.node();
  attach(n, {px}, [px, mask, m, d, inv](const double* g, GradMap& gm) {
    double* dx = gm.buffer(px.get());
    for (int i = 0; i < m; ++i) {
      if (!mask[static_cast<size_t>(i)]) continue;
      double* row = dx + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) row[j] += inv * g[j];
    }
  });
  debug_finite(n, "masked_mean_rows");
  return Tensor::wrap(n);
}

Tensor additive_attention_logits(const Tensor& u, const Tensor& v, const Tensor& b,
                                 const Tensor& w) {
  if (u.rank() != 2 || v.rank() != 2) throw ShapeError("additive_attention_logits: rank-2 inputs");
  const int p_n = u.dim(0), q = u.dim(1), m = v.dim(0);
  if (v.dim(1) != q || b.rank() != 1 || b.dim(0) != q || w.rank() != 1 || w.dim(0) != q) {
    throw ShapeError("additive_attention_logits: shape mismatch");
  }
  const double* uv = u.values().data();
  const double* vv = v.values().data();
  const double* bv = b.values().data();
  const double* wv = w.values().data();

  auto tanhs = std::make_shared<std::vector<double>>(static_cast<size_t>(m) * p_n * q);
  std::vector<double> out(static_cast<size_t>(p_n), 0.0);
  const double inv_m = 1.0 / m;
  for (int j = 0; j < m; ++j) {
    const double* vrow = vv + static_cast<int64_t>(j) * q;
    double* tj = tanhs->data() + static_cast<int64_t>(j) * p_n * q;
    for (int s = 0; s < p_n; ++s) {
      const double* urow = uv + static_cast<int64_t>(s) * q;
      double* trow = tj + static_cast<int64_t>(s) * q;
      double acc = 0.0;
      for (int c = 0; c < q; ++c) {
        const double t = std::tanh(urow[c] + vrow[c] + bv[c]);
        trow[c] = t;
        acc += t * wv[c];
      }
      out[static_cast<size_t>(s)] += acc * inv_m;
    }
  }

  auto n = make_node({p_n}, std::move(out));
  auto pu = u.node(), pv = v.node(), pb = b.node(), pw = w.node();
  attach(n, {pu, pv, pb, pw}, [pu, pv, pb, pw, tanhs, p_n, q, m, inv_m](const double* g,
                                                                        GradMap& gm) {
    double* du = pu->live ? gm.buffer(pu.get()) : nullptr;
    double* dv = pv->live ? gm.buffer(pv.get()) : nullptr;
    double* db = pb->live ? gm.buffer(pb.get()) : nullptr;
    double* dw = pw->live ? gm.buffer(pw.get()) : nullptr;
    const double* wv = pw->values.data();
    for (int j = 0; j < m; ++j) {
      const double* tj = tanhs->data() + static_cast<int64_t>(j) * p_n * q;
      double* dvrow = dv ? dv + static_cast<int64_t>(j) * q : nullptr;
      for (int s = 0; s < p_n; ++s) {
        const double gs = g[s] * inv_m;
        if (gs == 0.0) continue;
        const double* trow = tj + static_cast<int64_t>(s) * q;
        double* durow = du ? du + static_cast<int64_t>(s) * q : nullptr;
        for (int c = 0; c < q; ++c) {
          const double t = trow[c];
          const double pre = gs * (1.0 - t * t) * wv[c];
          if (durow) durow[c] += pre;
          if (dvrow) dvrow[c] += pre;
          if (db) db[c] += pre;
          if (dw) dw[c] += gs * t;
        }
      }
    }
  });
  debug_finite(n, "additive_attention_logits");
  return Tensor::wrap(n);
}

// ---------------------------------------------------------------------------
// Broadcast helpers
// ---------------------------------------------------------------------------

Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("mul_scalar_tensor: scalar must have one element");
  const double sv = s.values()[0];
  std::vector<double> out(x.values());
  for (double& v : out) v *= sv;
  auto n = make_node(x.shape(), std::move(out));
  auto px = x.node(), ps = s.node();
  attach(n, {px, ps}, [px, ps](const double* g, GradMap& gm) {
    const double sv = ps->values[0];
    if (px->live) {
      double* dx = gm.buffer(px.get());
      for (size_t i = 0; i < px->values.size(); ++i) dx[i] += sv * g[i];
    }
    if (ps->live) {
      double acc = 0.0;
      for (size_t i = 0; i < px->values.size(); ++i) acc += g[i] * px->values[i];
      gm.buffer(ps.get())[0] += acc;
    }
  });
  debug_finite(n, "mul_scalar_tensor");
  return Tensor::wrap(n);
}

Tensor add_channel_bias(const Tensor& plane, const Tensor& v) {
  if (plane.rank() != 3 && plane.rank() != 4) {
    throw ShapeError("add_channel_bias: plane must be [C,H,W] or [N,C,H,W]");
  }
  const bool batched = plane.rank() == 4;
  const int nb = batched ? plane.dim(0) : 1;
  const int c = plane.dim(batched ? 1 : 0);
  const int64_t hw = static_cast<int64_t>(plane.dim(batched ? 2 : 1)) * plane.dim(batched ? 3 : 2);
  if (v.rank() != 1 || v.dim(0) != c) throw ShapeError("add_channel_bias: vector must be [C]");
  std::vector<double> out(plane.values());
  for (int bi = 0; bi < nb; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      const double b = v.values()[static_cast<size_t>(ci)];
      double* row = out.data() + (static_cast<int64_t>(bi) * c + ci) * hw;
      for (int64_t p = 0; p < hw; ++p) row[p] += b;
    }
  }
  auto n = make_node(plane.shape(), std::move(out));
  auto pp = plane.node(), pv = v.node();
  attach(n, {pp, pv}, [pp, pv, nb, c, hw](const double* g, GradMap& gm) {
    if (pp->live) {
      double* dp = gm.buffer(pp.get());
      for (int64_t i = 0; i < static_cast<int64_t>(nb) * c * hw; ++i) dp[i] += g[i];
    }
    if (pv->live) {
      double* dv = gm.buffer(pv.get());
      for (int bi = 0; bi < nb; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
          double acc = 0.0;
          const double* grow = g + (static_cast<int64_t>(bi) * c + ci) * hw;
          for (int64_t p = 0; p < hw; ++p) acc += grow[p];
          dv[ci] += acc;
        }
      }
    }
  });
  debug_finite(n, "add_channel_bias");
  return Tensor::wrap(n);
}

Tensor mul_spatial_map(const Tensor& plane, const Tensor& m) {
  if (plane.rank() != 3 && plane.rank() != 4) {
    throw ShapeError("mul_spatial_map: plane must be [C,H,W] or [N,C,H,W]");
  }
  const bool batched = plane.rank() == 4;
  const int nb = batched ? plane.dim(0) : 1;
  const int c = plane.dim(batched ? 1 : 0);
  const int64_t hw = static_cast<int64_t>(plane.dim(batched ? 2 : 1)) * plane.dim(batched ? 3 : 2);
  if (m.numel() != static_cast<int64_t>(nb) * hw) {
    throw ShapeError("mul_spatial_map: map size mismatch");
  }
  std::vector<double> out(plane.values());
  const double* mv = m.values().data();
  for (int bi = 0; bi < nb; ++bi) {
    const double* mrow = mv + bi * hw;
    for (int ci = 0; ci < c; ++ci) {
      double* row = out.data() + (static_cast<int64_t>(bi) * c + ci) * hw;
      for (int64_t p = 0; p < hw; ++p) row[p] *= mrow[p];
    }
  }
  auto n = make_node(plane.shape(), std::move(out));
  auto pp = plane.node(), pm = m.node();
  attach(n, {pp, pm}, [pp, pm, nb, c, hw](const double* g, GradMap& gm) {
    const double* mv = pm->values.data();
    if (pp->live) {
      double* dp = gm.buffer(pp.get());
      for (int bi = 0; bi < nb; ++bi) {
        const double* mrow = mv + bi * hw;
        for (int ci = 0; ci < c; ++ci) {
          const int64_t off = (static_cast<int64_t>(bi) * c + ci) * hw;
          double* drow = dp + off;
          const double* grow = g + off;
          for (int64_t p = 0; p < hw; ++p) drow[p] += grow[p] * mrow[p];
        }
      }
    }
    if (pm->live) {
      double* dm = gm.buffer(pm.get());
      const double* pvv = pp->values.data();
      for (int bi = 0; bi < nb; ++bi) {
        double* dmrow = dm + bi * hw;
        for (int ci = 0; ci < c; ++ci) {
          const int64_t off = (static_cast<int64_t>(bi) * c + ci) * hw;
          const double* prow = pvv + off;
          const double* grow = g + off;
          for (int64_t p = 0; p < hw; ++p) dmrow[p] += grow[p] * prow[p];
        }
      }
    }
  });
  debug_finite(n, "mul_spatial_map");
  return Tensor::wrap(n);
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  if (x.rank() < 1) throw ShapeError("scale_rows: input must have a leading axis");
  const int nb = x.dim(0);
  if (s.rank() != 1 || s.dim(0) != nb) throw ShapeError("scale_rows: scale must be [N]");
  const int64_t inner = x.numel() / nb;
  std::vector<double> out(x.values());
  const double* sv = s.values().data();
  for (int bi = 0; bi < nb; ++bi) {
    double* row = out.data() + bi * inner;
    const double f = sv[bi];
    for (int64_t i = 0; i < inner; ++i) row[i] *= f;
  }
  auto n = make_node(x.shape(), std::move(out));
  auto px = x.node(), ps = s.node();
  attach(n, {px, ps}, [px, ps, nb, inner](const double* g, GradMap& gm) {
    const double* sv = ps->values.data();
    if (px->live) {
      double* dx = gm.buffer(px.get());
      for (int bi = 0; bi < nb; ++bi) {
        const double f = sv[bi];
        double* drow = dx + bi * inner;
        const double* grow = g + bi * inner;
        for (int64_t i = 0; i < inner; ++i) drow[i] += f * grow[i];
      }
    }
    if (ps->live) {
      double* ds = gm.buffer(ps.get());
      const double* xv = px->values.data();
      for (int bi = 0; bi < nb; ++bi) {
        const double* xrow = xv + bi * inner;
        const double* grow = g + bi * inner;
        double acc = 0.0;
        for (int64_t i = 0; i < inner; ++i) acc += grow[i] * xrow[i];
        ds[bi] += acc;
      }
    }
  });
  debug_finite(n, "scale_rows");
  return Tensor::wrap(n);
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack_rows: no inputs");
  const Shape& base = parts[0].shape();
  const int64_t inner = parts[0].numel();
  for (const auto& p : parts) {
    if (p.shape() != base) throw ShapeError("stack_rows: shape mismatch");
  }
  const int nb = static_cast<int>(parts.size());
  Shape oshape;
  oshape.push_back(nb);
  oshape.insert(oshape.end(), base.begin(), base.end());
  std::vector<double> out(static_cast<size_t>(nb) * inner);
  for (int bi = 0; bi < nb; ++bi) {
    std::memcpy(out.data() + bi * inner, parts[static_cast<size_t>(bi)].values().data(),
                static_cast<size_t>(inner) * sizeof(double));
  }
  auto n = make_node(std::move(oshape), std::move(out));
  std::vector<NodePtr> pnodes;
  pnodes.reserve(parts.size());
  for (const auto& p : parts) pnodes.push_back(p.node());
  attach(n, pnodes, [pnodes, inner](const double* g, GradMap& gm) {
    for (size_t bi = 0; bi < pnodes.size(); ++bi) {
      if (!pnodes[bi]->live) continue;
      double* dp = gm.buffer(pnodes[bi].get());
      const double* grow = g + static_cast<int64_t>(bi) * inner;
      for (int64_t i = 0; i < inner; ++i) dp[i] += grow[i];
    }
  });
  debug_finite(n, "stack_rows");
  return Tensor::wrap(n);
}

Tensor gather_flat(const Tensor& x, Shape out_shape, std::vector<int> flat_index) {
  const int64_t out_n = shape_numel(out_shape);
  if (static_cast<int64_t>(flat_index.size()) != out_n) {
    throw ShapeError("gather_flat: index count does not match output shape");
  }
  const int64_t in_n = x.numel();
  for (int idx : flat_index) {
    if (idx < 0 || idx >= in_n) throw ShapeError("gather_flat: index out of range");
  }
  std::vector<double> out(static_cast<size_t>(out_n));
  const double* xv = x.values().data();
  for (int64_t i = 0; i < out_n; ++i) out[static_cast<size_t>(i)] = xv[flat_index[static_cast<size_t>(i)]];
  auto n = make_node(std::move(out_shape), std::move(out));
  auto px = x.node();
  auto idx = std::make_shared<std::vector<int>>(std::move(flat_index));
  attach(n, {px}, [px, idx, out_n](const double* g, GradMap& gm) {
    double* dx = gm.buffer(px.get());
    for (int64_t i = 0; i < out_n; ++i) dx[(*idx)[static_cast<size_t>(i)]] += g[i];
  });
  debug_finite(n, "gather_flat");
  return Tensor::wrap(n);
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2) throw ShapeError("add_row_vector: input must be [M,N]");
  const int m = x.dim(0), d = x.dim(1);
  if (v.rank() != 1 || v.dim(0) != d) throw ShapeError("add_row_vector: vector must be [N]");
  std::vector<double> out(x.values());
  const double* vv = v.values().data();
  for (int i = 0; i < m; ++i) {
    double* row = out.data() + static_cast<int64_t>(i) * d;
    for (int j = 0; j < d; ++j) row[j] += vv[j];
  }
  auto n = make_node(x.shape(), std::move(out));
  auto px = x.node(), pv = v.node();
  attach(n, {px, pv}, [px, pv, m, d](const double* g, GradMap& gm) {
    if (px->live) {
      double* dx = gm.buffer(px.get());
      for (int64_t i = 0; i < static_cast<int64_t>(m) * d; ++i) dx[i] += g[i];
    }
    if (pv->live) {
      double* dv = gm.buffer(pv.get());
      for (int i = 0; i < m; ++i) {
        const double* grow = g + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) dv[j] += grow[j];
      }
    }
  });
  debug_finite(n, "add_row_vector");
  return Tensor::wrap(n);
}

// ---------------------------------------------------------------------------
// Reductions & softmax
// ---------------------------------------------------------------------------

namespace {

// Sum over `axes`; also returns the number of reduced elements per output.
Tensor reduce_impl(const Tensor& a, const std::vector<int>& axes, bool mean) {
  const int rank = a.rank();
  std::vector<uint8_t> reduced(static_cast<size_t>(rank), 0);
  for (int ax : axes) {
    if (ax < 0 || ax >= rank) throw ShapeError("reduce: axis out of range");
    if (reduced[static_cast<size_t>(ax)]) throw ShapeError("reduce: duplicate axis");
    reduced[static_cast<size_t>(ax)] = 1;
  }
  if (axes.empty()) {
    // identity
    auto n = make_node(a.shape(), a.values());
    auto pa = a.node();
    attach(n, {pa}, [pa](const double* g, GradMap& gm) {
      double* da = gm.buffer(pa.get());
      for (size_t i = 0; i < pa->values.size(); ++i) da[i] += g[i];
    });
    return Tensor::wrap(n);
  }

  Shape oshape;
  int64_t reduce_count = 1;
  for (int d = 0; d < rank; ++d) {
    if (reduced[static_cast<size_t>(d)]) {
      reduce_count *= a.dim(d);
    } else {
      oshape.push_back(a.dim(d));
    }
  }
  if (oshape.empty()) oshape = {1};

  // fast path when the reduced axes form a suffix: blocked sums
  {
    int cut = rank;
    while (cut > 0 && reduced[static_cast<size_t>(cut) - 1]) --cut;
    bool suffix = true;
    for (int d = 0; d < cut; ++d) suffix = suffix && !reduced[static_cast<size_t>(d)];
    if (suffix) {
      int64_t outer = 1, inner = 1;
      for (int d = 0; d < cut; ++d) outer *= a.dim(d);
      for (int d = cut; d < rank; ++d) inner *= a.dim(d);
      std::vector<double> out(static_cast<size_t>(outer), 0.0);
      const double* av = a.values().data();
      for (int64_t o = 0; o < outer; ++o) {
        double acc = 0.0;
        const double* base = av + o * inner;
        for (int64_t i = 0; i < inner; ++i) acc += base[i];
        out[static_cast<size_t>(o)] = acc;
      }
      const double inv = mean ? 1.0 / static_cast<double>(inner) : 1.0;
      if (mean) {
        for (double& v : out) v *= inv;
      }
      auto n = make_node(std::move(oshape), std::move(out));
      auto pa = a.node();
      attach(n, {pa}, [pa, outer, inner, inv](const double* g, GradMap& gm) {
        double* da = gm.buffer(pa.get());
        for (int64_t o = 0; o < outer; ++o) {
          const double gv = g[o] * inv;
          double* base = da + o * inner;
          for (int64_t i = 0; i < inner; ++i) base[i] += gv;
        }
      });
      debug_finite(n, "reduce");
      return Tensor::wrap(n);
    }
  }

  // strides of input, and output stride per kept input axis
  std::vector<int64_t> istride(static_cast<size_t>(rank), 1);
  for (int d = rank - 2; d >= 0; --d) {
    istride[static_cast<size_t>(d)] = istride[static_cast<size_t>(d) + 1] * a.dim(d + 1);
  }
  std::vector<int64_t> out_stride_for_axis(static_cast<size_t>(rank), 0);
  int64_t running = 1;
  for (int d = rank - 1; d >= 0; --d) {
    if (!reduced[static_cast<size_t>(d)]) {
      out_stride_for_axis[static_cast<size_t>(d)] = running;
      running *= a.dim(d);
    }
  }

  const int64_t out_n = shape_numel(oshape);
  std::vector<double> out(static_cast<size_t>(out_n), 0.0);
  const double* av = a.values().data();
  const int64_t in_n = a.numel();
  // Map input flat index -> output flat index.
  auto out_index = [&](int64_t flat) {
    int64_t oi = 0;
    for (int d = 0; d < rank; ++d) {
      const int64_t coord = (flat / istride[static_cast<size_t>(d)]) % a.dim(d);
      oi += coord * out_stride_for_axis[static_cast<size_t>(d)];
    }
    return oi;
  };
  for (int64_t i = 0; i < in_n; ++i) out[static_cast<size_t>(out_index(i))] += av[i];
  const double inv = mean ? 1.0 / static_cast<double>(reduce_count) : 1.0;
  if (mean) {
    for (double& v : out) v *= inv;
  }

  auto n = make_node(std::move(oshape), std::move(out));
  auto pa = a.node();
  Shape ashape = a.shape();
  attach(n, {pa},
         [pa, istride, out_stride_for_axis, ashape, rank, inv, in_n](const double* g, GradMap& gm) {
           double* da = gm.buffer(pa.get());
           for (int64_t i = 0; i < in_n; ++i) {
             int64_t oi = 0;
             for (int d = 0; d < rank; ++d) {
               const int64_t coord =
                   (i / istride[static_cast<size_t>(d)]) % ashape[static_cast<size_t>(d)];
               oi += coord * out_stride_for_axis[static_cast<size_t>(d)];
             }
             da[i] += g[oi] * inv;
           }
         });
  debug_finite(n, "reduce");
  return Tensor::wrap(n);
}

}  // namespace

Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes) {
  return reduce_impl(a, axes, false);
}

Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes) {
  return reduce_impl(a, axes, true);
}

Tensor sum_all(const Tensor& a) {
  std::vector<int> axes(static_cast<size_t>(a.rank()));
  for (int d = 0; d < a.rank(); ++d) axes[static_cast<size_t>(d)] = d;
  return reduce_impl(a, axes, false);
}

Tensor mean_all(const Tensor& a) {
  std::vector<int> axes(static_cast<size_t>(a.rank()));
  for (int d = 0; d < a.rank(); ++d) axes[static_cast<size_t>(d)] = d;
  return reduce_impl(a, axes, true);
}

Tensor gap_spatial(const Tensor& plane) {
  if (plane.rank() != 3) throw ShapeError("gap_spatial: plane must be [C,H,W]");
  return reduce_mean(plane, {1, 2});
}

Tensor softmax(const Tensor& a, int axis) {
  const int rank = a.rank();
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: bad axis");
  const int64_t axis_n = a.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.dim(d);
  for (int d = axis + 1; d < rank; ++d) inner *= a.dim(d);

  std::vector<double> out(a.values());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      double* base = out.data() + o * axis_n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t t = 0; t < axis_n; ++t) mx = std::max(mx, base[t * inner]);
      double sum = 0.0;
      for (int64_t t = 0; t < axis_n; ++t) {
        const double e = std::exp(base[t * inner] - mx);
        base[t * inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (int64_t t = 0; t < axis_n; ++t) base[t * inner] *= inv;
    }
  }
  auto n = make_node(a.shape(), std::move(out));
  auto pa = a.node();
  TensorNode* self = n.get();
  attach(n, {pa}, [pa, self, outer, inner, axis_n](const double* g, GradMap& gm) {
    double* da = gm.buffer(pa.get());
    const double* y = self->values.data();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * axis_n * inner + in;
        double dot = 0.0;
        for (int64_t t = 0; t < axis_n; ++t) {
          const int64_t i = base + t * inner;
          dot += g[i] * y[i];
        }
        for (int64_t t = 0; t < axis_n; ++t) {
          const int64_t i = base + t * inner;
          da[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
  debug_finite(n, "softmax");
  return Tensor::wrap(n);
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace {

std::vector<TensorNode*> topo_from(const NodePtr& root) {
  std::vector<TensorNode*> order;
  if (!root->live) return order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* n;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      TensorNode* p = f.n->parents[f.next++].get();
      if (p->live && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  return order;
}

void run_backward(const Tensor& loss, GradMap& gm) {
  const auto root = loss.node();
  if (!root) throw std::invalid_argument("backward: undefined tensor");
  if (root->numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(root->shape));
  }
  auto order = topo_from(root);
  if (order.empty()) return;
  gm.buffer(root.get())[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (!n->backprop) continue;
    const auto* buf = gm.find(n);
    if (!buf) continue;
    n->backprop(buf->data(), gm);
  }
}

}  // namespace

void backward(const Tensor& loss, GradMap& leaf_grads) { run_backward(loss, leaf_grads); }

void backward(const Tensor& loss) {
  GradMap gm;
  run_backward(loss, gm);
  // accumulate into leaf .grad
  auto order = topo_from(loss.node());
  for (TensorNode* n : order) {
    if (!n->requires_grad) continue;
    const auto* buf = gm.find(n);
    if (!buf) continue;
    if (n->grad.size() != n->values.size()) n->grad.assign(n->values.size(), 0.0);
    for (size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += (*buf)[i];
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void adam_step(std::vector<double>& values, const std::vector<double>& grads,
               std::vector<double>& m, std::vector<double>& v, int64_t t, double lr, double beta1,
               double beta2, double eps) {
  if (values.size() != grads.size() || values.size() != m.size() || values.size() != v.size()) {
    throw ShapeError("adam_step: size mismatch");
  }
  if (t < 1) throw std::invalid_argument("adam_step: step index must be >= 1");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < values.size(); ++i) {
    const double g = grads[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void AdamOptimizer::step(std::vector<Tensor>& params) {
  if (slots_.size() < params.size()) slots_.resize(params.size());
  ++t_;
  static const std::vector<double> kEmpty;
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& slot = slots_[i];
    const size_t n = p.values().size();
    if (slot.m.size() != n) slot.m.assign(n, 0.0);
    if (slot.v.size() != n) slot.v.assign(n, 0.0);
    const std::vector<double>& g =
        p.node()->grad.size() == n ? p.node()->grad : kEmpty;
    if (g.empty()) continue;  // no gradient accumulated; leave parameters alone
    adam_step(p.mutable_values(), g, slot.m, slot.v, t_, lr_, beta1_, beta2_, eps_);
  }
}

// ---------------------------------------------------------------------------
// Init helpers
// ---------------------------------------------------------------------------

std::vector<double> uniform_init(Rng& rng, int64_t n, double bound) {
  std::vector<double> out(static_cast<size_t>(n));
  for (double& v : out) v = rng.uniform(-bound, bound);
  return out;
}

std::vector<double> he_uniform(Rng& rng, int64_t n, int64_t fan_in) {
  return uniform_init(rng, n, std::sqrt(6.0 / static_cast<double>(fan_in)));
}

std::vector<double> xavier_uniform(Rng& rng, int64_t n, int64_t fan_in, int64_t fan_out) {
  return uniform_init(rng, n, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

// ---------------------------------------------------------------------------
// Portable tensor file
// ---------------------------------------------------------------------------

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("TNSR", 4);
  write_u32(os, 1);
  write_u32(os, static_cast<uint32_t>(t.rank()));
  for (int d = 0; d < t.rank(); ++d) write_u32(os, static_cast<uint32_t>(t.dim(d)));
  for (double v : t.values()) write_f64(os, v);
  if (!os) throw IoError("failed writing tensor");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TNSR", 4) != 0) throw CorruptStreamError("bad tensor magic");
  const uint32_t version = read_u32(is);
  if (version != 1) throw CorruptStreamError("unsupported tensor version");
  const uint32_t rank = read_u32(is);
  if (rank > 8) throw CorruptStreamError("tensor rank too large");
  Shape shape;
  int64_t count = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint32_t d = read_u32(is);
    if (d == 0 || d > (1u << 24)) throw CorruptStreamError("bad tensor dimension");
    shape.push_back(static_cast<int>(d));
    count *= d;
  }
  if (count > (int64_t{1} << 28)) throw CorruptStreamError("tensor too large");
  std::vector<double> values(static_cast<size_t>(count));
  for (double& v : values) v = read_f64(is);
  return Tensor::from(std::move(shape), std::move(values));
}

void save_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  write_tensor(f, t);
}

Tensor load_tensor_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  return read_tensor(f);
}

}  // namespace tcsf
