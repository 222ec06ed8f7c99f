#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tcsf/common.hpp"

namespace tcsf {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Toggles per-op finite checks on forward outputs (used by tests; off by
// default because it doubles memory traffic).
void set_debug_checks(bool on);
bool debug_checks_enabled();

class GradMap;

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;  // leaf parameter flag
  std::vector<double> grad;    // leaf accumulator, lazily sized
  bool live = false;           // on a path from a requires_grad leaf
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Propagates this node's gradient into the parents' buffers.
  std::function<void(const double* self_grad, GradMap& sink)> backprop;

  int64_t numel() const { return shape_numel(shape); }
};

using NodePtr = std::shared_ptr<TensorNode>;

// Per-backward-pass gradient buffers keyed by node. Keeps shared parameter
// leaves race-free when several graphs run backward concurrently.
class GradMap {
 public:
  double* buffer(TensorNode* n);
  const std::vector<double>* find(TensorNode* n) const;
  std::vector<double> take(TensorNode* n);
  void clear() { bufs_.clear(); }

 private:
  std::unordered_map<TensorNode*, std::vector<double>> bufs_;
};

// Scoped disable of graph recording (inference mode).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v) { return from({1}, {v}); }
  // Trainable leaf.
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return node_->numel(); }

  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& mutable_values() { return node_->values; }
  double value_at(int64_t flat) const { return node_->values[static_cast<size_t>(flat)]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  std::vector<double>& grad();
  void zero_grad();

  NodePtr node() const { return node_; }
  static Tensor wrap(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  NodePtr node_;
};

// --- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor rsub_const(double c, const Tensor& a);  // c - a
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor clamp_t(const Tensor& a, double lo, double hi);

// --- linear algebra --------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// x: [*, in] (rank 1 or 2), w: [in, out], b: [out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// x: [Cin, H, W] or batched [N, Cin, H, W]; k: [Cout, Cin, kh, kw]; bias
// [Cout]; cross-correlation.
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int padding);

// --- shape & indexing ------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
// table: [V, d] -> [ids.size(), d]; throws VocabError on id out of range.
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
// plane: [C, H, W]; src_index: H*W entries, out[c][p] = plane[c][src_index[p]].
Tensor gather_cells(const Tensor& plane, const std::vector<int>& src_index);
// X: [M, d]; mean over rows with mask != 0 (mask must have >= 1 true).
Tensor masked_mean_rows(const Tensor& x, const std::vector<uint8_t>& mask);

// Additive-attention logits, fused: out[s] = mean_j tanh(u[s] + v[j] + b) . w
// u: [P, q], v: [M, q], b: [q], w: [q] -> [P].
Tensor additive_attention_logits(const Tensor& u, const Tensor& v, const Tensor& b,
                                 const Tensor& w);

// --- broadcast helpers -----------------------------------------------------
Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s);        // s: [1]
// plane [C,H,W] or [N,C,H,W] with v [C] broadcast over batch and positions
Tensor add_channel_bias(const Tensor& plane, const Tensor& v);
// plane [C,H,W] with m of H*W entries, or [N,C,H,W] with m of N*H*W entries;
// the map multiplies every channel.
Tensor mul_spatial_map(const Tensor& plane, const Tensor& m);
Tensor add_row_vector(const Tensor& x, const Tensor& v);           // x [M,N], v [N]
// x [N, ...], s [N]: slice n scaled by s[n]
Tensor scale_rows(const Tensor& x, const Tensor& s);
// parts (equal shapes) stacked along a new leading axis -> [N, ...]
Tensor stack_rows(const std::vector<Tensor>& parts);
// out[i] = x[flat_index[i]]; gradient scatter-adds back
Tensor gather_flat(const Tensor& x, Shape out_shape, std::vector<int> flat_index);

// --- reductions & normalization --------------------------------------------
Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes);
Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes);
Tensor sum_all(const Tensor& a);   // -> [1]
Tensor mean_all(const Tensor& a);  // -> [1]
Tensor gap_spatial(const Tensor& plane);  // [C,H,W] -> [C]
Tensor softmax(const Tensor& a, int axis);

// --- autodiff ---------------------------------------------------------------
// Accumulates into .grad of every reachable requires_grad leaf.
void backward(const Tensor& loss);
// Thread-safe variant: leaf gradients land in `leaf_grads` instead of .grad.
void backward(const Tensor& loss, GradMap& leaf_grads);

// --- optimizer ---------------------------------------------------------------
// One Adam update; m/v/t is caller-held state. values/grads/m/v same length.
void adam_step(std::vector<double>& values, const std::vector<double>& grads,
               std::vector<double>& m, std::vector<double>& v, int64_t t, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor>& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int64_t steps() const { return t_; }

  // checkpoint access
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<Slot>& slots() { return slots_; }
  void set_steps(int64_t t) { t_ = t; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Slot> slots_;
};

// --- init helpers ------------------------------------------------------------
std::vector<double> uniform_init(Rng& rng, int64_t n, double bound);
// bound = sqrt(6 / fan_in)
std::vector<double> he_uniform(Rng& rng, int64_t n, int64_t fan_in);
// bound = sqrt(6 / (fan_in + fan_out))
std::vector<double> xavier_uniform(Rng& rng, int64_t n, int64_t fan_in, int64_t fan_out);

// --- portable tensor file ("TNSR") -------------------------------------------
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

}  // namespace tcsf
