#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/error.h"

namespace nvs {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Thread-local switch: when off, ops produce plain tensors with no graph.
bool grad_enabled();
void set_grad_enabled(bool on);

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class S>
struct TensorImpl {
  Shape shape;
  std::vector<S> values;
  bool requires_grad = false;
  bool is_leaf = true;
  // Set once backward has consumed the graph this node belongs to;
  // building new ops on top is then a contract error.
  bool graph_consumed = false;
  std::vector<S> grad;
  std::vector<std::shared_ptr<TensorImpl<S>>> parents;
  std::function<void(TensorImpl<S>&)> backward_fn;
};

// Dense n-dimensional array participating in a reverse-mode autodiff graph.
// Value-semantic handle; the buffer is immutable once the tensor has been
// used as an op input. Leaf parameters may be mutated between graphs (the
// optimizer does).
template <class S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false);
  static TensorT full(Shape shape, S value);
  static TensorT from_data(Shape shape, std::vector<S> values,
                           bool requires_grad = false);
  static TensorT scalar(S value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const;
  int64_t size() const { return static_cast<int64_t>(impl_->values.size()); }

  const S* data() const { return impl_->values.data(); }
  S* data() { return impl_->values.data(); }
  const std::vector<S>& values() const { return impl_->values; }
  std::vector<S>& values() { return impl_->values; }

  S item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<S>& grad() const;
  std::vector<S>& grad_mutable();
  void clear_grad() { impl_->grad.clear(); }

  TensorT detach() const;

  std::shared_ptr<TensorImpl<S>> impl() const { return impl_; }
  static TensorT wrap(std::shared_ptr<TensorImpl<S>> impl);

 private:
  std::shared_ptr<TensorImpl<S>> impl_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// ---- elementwise, broadcasting with trailing-dimension alignment ----
// Shapes are right-aligned; each aligned pair of dims must match or one of
// them must be 1 (missing leading dims count as 1).
template <class S> TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> div(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> add_scalar(const TensorT<S>& a, S s);
template <class S> TensorT<S> mul_scalar(const TensorT<S>& a, S s);
template <class S> TensorT<S> neg(const TensorT<S>& a);
template <class S> TensorT<S> square(const TensorT<S>& a);

template <class S> TensorT<S> exp(const TensorT<S>& a);
template <class S> TensorT<S> log(const TensorT<S>& a);
template <class S> TensorT<S> relu(const TensorT<S>& a);
template <class S> TensorT<S> elu(const TensorT<S>& a);
template <class S> TensorT<S> sigmoid(const TensorT<S>& a);
template <class S> TensorT<S> softplus(const TensorT<S>& a);

// Density activation: softplus shifted so a zero pre-activation maps to a
// small density. Lives here so the gradient-check registry covers it.
template <class S> TensorT<S> density_activation(const TensorT<S>& a);

// where(mask, a, b): mask is a constant 0/1 tensor (no gradient flows to it).
template <class S>
TensorT<S> where(const TensorT<S>& mask, const TensorT<S>& a,
                 const TensorT<S>& b);

// Constant 0/1 mask from a comparison; never part of the graph.
template <class S> TensorT<S> cmp_gt(const TensorT<S>& a, S threshold);

// ---- linear algebra ----
template <class S> TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b);
// x: [..., in], w: [in, out], b: [out] -> [..., out]
template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w,
                  const TensorT<S>& b);
// a: [B, m, k]; b: [B, k, n] (or [B, n, k] when trans_b) -> [B, m, n]
template <class S>
TensorT<S> bmm(const TensorT<S>& a, const TensorT<S>& b, bool trans_b = false);

// ---- reductions ----
template <class S>
TensorT<S> sum(const TensorT<S>& x, int axis, bool keepdim = false);
template <class S>
TensorT<S> mean(const TensorT<S>& x, int axis, bool keepdim = false);
template <class S>
TensorT<S> reduce_min(const TensorT<S>& x, int axis, bool keepdim = false);
template <class S>
TensorT<S> reduce_max(const TensorT<S>& x, int axis, bool keepdim = false);
template <class S> TensorT<S> sum_all(const TensorT<S>& x);

// Biased weighted statistics along one axis; weights are normalized to sum
// to 1 along the axis before use.
template <class S>
TensorT<S> weighted_mean(const TensorT<S>& x, const TensorT<S>& w, int axis,
                         bool keepdim = false);
template <class S>
TensorT<S> weighted_var(const TensorT<S>& x, const TensorT<S>& w, int axis,
                        bool keepdim = false);
template <class S>
TensorT<S> variance(const TensorT<S>& x, int axis, bool keepdim = false);

// ---- shape ops ----
template <class S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape);
template <class S>
TensorT<S> permute(const TensorT<S>& x, const std::vector<int>& dims);
template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& xs, int axis);
template <class S>
TensorT<S> narrow(const TensorT<S>& x, int axis, int64_t start, int64_t len);

// ---- structured ops ----
template <class S> TensorT<S> softmax(const TensorT<S>& x, int axis);
template <class S> TensorT<S> cumsum_exclusive(const TensorT<S>& x, int axis);

// x: [H, W, C] -> [outH*outW, kh*kw*C], zero padded.
template <class S>
TensorT<S> im2col(const TensorT<S>& x, int kh, int kw, int stride, int pad);
// x: [H, W, C] -> [2H, 2W, C] nearest neighbor.
template <class S> TensorT<S> upsample2x(const TensorT<S>& x);

// Bilinear reads from fmap [H, W, C] at texel-space coords (texel (ix,iy)
// sits at coordinate (ix,iy)). Entries with valid=0, or whose 2x2 footprint
// leaves the map, produce zeros. Differentiable w.r.t. fmap.
template <class S>
TensorT<S> bilinear_gather(const TensorT<S>& fmap,
                           const std::vector<double>& u,
                           const std::vector<double>& v,
                           const std::vector<uint8_t>& valid);

// ---- autodiff driver ----
// Accumulates d(loss)/d(leaf) into every requires-grad leaf under loss.
// loss must be scalar. A second call on the same graph is a contract error;
// so is building new ops on tensors whose graph was already consumed.
template <class S> void backward(const TensorT<S>& loss);

// ---- initializers ----
class Rng;
template <class S>
TensorT<S> xavier_uniform(int64_t fan_in, int64_t fan_out, Rng& rng);

}  // namespace nvs
