#include "core/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "core/kernels.h"
#include "core/parallel.h"
#include "core/rng.h"

namespace nvs {

namespace {
constexpr int kMaxRank = 8;
}

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const int ra = static_cast<int>(a.size());
  const int rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  Shape out(r);
  for (int i = 0; i < r; ++i) {
    const int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    const int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("broadcast mismatch: " + shape_str(a) + " vs " +
                       shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

// ---------------------------------------------------------------- TensorT

template <class S>
TensorT<S> TensorT<S>::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl<S>>();
  impl->shape = std::move(shape);
  impl->values.assign(numel(impl->shape), S(0));
  impl->requires_grad = requires_grad;
  TensorT t;
  t.impl_ = std::move(impl);
  return t;
}

template <class S>
TensorT<S> TensorT<S>::full(Shape shape, S value) {
  auto t = zeros(std::move(shape));
  std::fill(t.impl_->values.begin(), t.impl_->values.end(), value);
  return t;
}

template <class S>
TensorT<S> TensorT<S>::from_data(Shape shape, std::vector<S> values,
                                 bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " needs " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl<S>>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  TensorT t;
  t.impl_ = std::move(impl);
  return t;
}

template <class S>
TensorT<S> TensorT<S>::scalar(S value) {
  return from_data({1}, {value});
}

template <class S>
int64_t TensorT<S>::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) {
    throw ShapeError("dim index " + std::to_string(i) + " out of range for " +
                     shape_str(shape()));
  }
  return impl_->shape[i];
}

template <class S>
S TensorT<S>::item() const {
  if (!impl_ || impl_->values.size() != 1) {
    throw ContractError("item() requires a single-element tensor, got " +
                        (impl_ ? shape_str(shape()) : std::string("undefined")));
  }
  return impl_->values[0];
}

template <class S>
const std::vector<S>& TensorT<S>::grad() const {
  if (!impl_ || impl_->grad.empty()) {
    throw ContractError("tensor has no accumulated gradient");
  }
  return impl_->grad;
}

template <class S>
std::vector<S>& TensorT<S>::grad_mutable() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), S(0));
  return impl_->grad;
}

template <class S>
TensorT<S> TensorT<S>::detach() const {
  return from_data(impl_->shape, impl_->values);
}

template <class S>
TensorT<S> TensorT<S>::wrap(std::shared_ptr<TensorImpl<S>> impl) {
  TensorT t;
  t.impl_ = std::move(impl);
  return t;
}

// ------------------------------------------------------------ op plumbing

namespace {

template <class S>
void ensure_grad(TensorImpl<S>& t) {
  if (t.grad.empty()) t.grad.assign(t.values.size(), S(0));
}

template <class S>
TensorT<S> make_result(Shape shape, std::vector<S> values,
                       std::vector<TensorT<S>> parents,
                       std::function<void(TensorImpl<S>&)> backward_fn) {
  auto t = TensorT<S>::from_data(std::move(shape), std::move(values));
  bool need = false;
  for (const auto& p : parents) {
    if (p.impl()->graph_consumed) {
      throw ContractError(
          "op input belongs to a graph already consumed by backward(); "
          "rebuild the forward graph before reusing its intermediates");
    }
    need = need || p.impl()->requires_grad;
  }
  if (!grad_enabled() || !need) return t;
  auto impl = t.impl();
  impl->requires_grad = true;
  impl->is_leaf = false;
  impl->parents.reserve(parents.size());
  for (const auto& p : parents) impl->parents.push_back(p.impl());
  impl->backward_fn = std::move(backward_fn);
  return t;
}

struct BcastStrides {
  int rank = 0;
  int64_t dims[kMaxRank];
  int64_t stride[kMaxRank];  // 0 where the input broadcasts
};

BcastStrides input_strides(const Shape& out, const Shape& in) {
  if (out.size() > kMaxRank) {
    throw ShapeError("rank " + std::to_string(out.size()) + " exceeds limit " +
                     std::to_string(kMaxRank));
  }
  BcastStrides bs;
  bs.rank = static_cast<int>(out.size());
  const int off = bs.rank - static_cast<int>(in.size());
  int64_t s = 1;
  int64_t nat[kMaxRank];
  for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
    nat[i] = s;
    s *= in[i];
  }
  for (int i = 0; i < bs.rank; ++i) {
    bs.dims[i] = out[i];
    if (i < off || in[i - off] == 1) {
      bs.stride[i] = 0;
    } else {
      bs.stride[i] = nat[i - off];
    }
  }
  return bs;
}

// out[i] = f(a[..], b[..]) over the broadcast iteration space.
template <class S, class F>
void bcast_apply2(const Shape& out_shape, const S* a, const Shape& ashape,
                  const S* b, const Shape& bshape, S* out, F&& f) {
  if (ashape == bshape) {
    const int64_t n = numel(out_shape);
    par::parallel_chunks(n, 1 << 16, [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) out[i] = f(a[i], b[i]);
    });
    return;
  }
  Shape os = out_shape.empty() ? Shape{1} : out_shape;
  BcastStrides sa = input_strides(os, ashape);
  BcastStrides sb = input_strides(os, bshape);
  const int r = sa.rank;
  const int64_t total = numel(os);
  const int64_t inner = sa.dims[r - 1];
  const int64_t la = sa.stride[r - 1];
  const int64_t lb = sb.stride[r - 1];
  int64_t counters[kMaxRank] = {0};
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < total; i += inner) {
    if (la == 1 && lb == 1) {
      for (int64_t j = 0; j < inner; ++j) out[i + j] = f(a[oa + j], b[ob + j]);
    } else {
      for (int64_t j = 0; j < inner; ++j) {
        out[i + j] = f(a[oa + j * la], b[ob + j * lb]);
      }
    }
    for (int d = r - 2; d >= 0; --d) {
      ++counters[d];
      oa += sa.stride[d];
      ob += sb.stride[d];
      if (counters[d] < sa.dims[d]) break;
      counters[d] = 0;
      oa -= sa.stride[d] * sa.dims[d];
      ob -= sb.stride[d] * sb.dims[d];
    }
  }
}

// grad (shaped gshape) summed into parent.grad (parent shape broadcasts to
// gshape); scale lets sub() reuse this with -1.
template <class S>
void add_grad_reduced(TensorImpl<S>& parent, const S* g, const Shape& gshape,
                      S scale = S(1)) {
  if (!parent.requires_grad) return;
  ensure_grad(parent);
  S* dst = parent.grad.data();
  if (parent.shape == gshape) {
    const int64_t n = numel(gshape);
    for (int64_t i = 0; i < n; ++i) dst[i] += scale * g[i];
    return;
  }
  Shape os = gshape.empty() ? Shape{1} : gshape;
  BcastStrides st = input_strides(os, parent.shape);
  const int r = st.rank;
  const int64_t total = numel(os);
  const int64_t inner = st.dims[r - 1];
  const int64_t lt = st.stride[r - 1];
  int64_t counters[kMaxRank] = {0};
  int64_t ot = 0;
  for (int64_t i = 0; i < total; i += inner) {
    for (int64_t j = 0; j < inner; ++j) dst[ot + j * lt] += scale * g[i + j];
    for (int d = r - 2; d >= 0; --d) {
      ++counters[d];
      ot += st.stride[d];
      if (counters[d] < st.dims[d]) break;
      counters[d] = 0;
      ot -= st.stride[d] * st.dims[d];
    }
  }
}

// Temp buffer = g * (other input broadcast to g's shape); shared by the
// mul/div backward paths.
template <class S, class F>
std::vector<S> bcast_combine_with_grad(const S* g, const Shape& gshape,
                                       const S* x, const Shape& xshape,
                                       F&& f) {
  std::vector<S> tmp(numel(gshape));
  bcast_apply2(gshape, g, gshape, x, xshape, tmp.data(), std::forward<F>(f));
  return tmp;
}

void split_axis(const Shape& s, int axis, int64_t& outer, int64_t& red,
                int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  red = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

int check_axis(const Shape& s, int axis) {
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return axis;
}

Shape reduced_shape(const Shape& s, int axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + axis);
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------ elementwise

template <class S>
static TensorT<S> binary_op(const TensorT<S>& a, const TensorT<S>& b, int kind) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  std::vector<S> out(numel(out_shape));
  switch (kind) {
    case 0:
      bcast_apply2(out_shape, a.data(), a.shape(), b.data(), b.shape(),
                   out.data(), [](S x, S y) { return x + y; });
      break;
    case 1:
      bcast_apply2(out_shape, a.data(), a.shape(), b.data(), b.shape(),
                   out.data(), [](S x, S y) { return x - y; });
      break;
    case 2:
      bcast_apply2(out_shape, a.data(), a.shape(), b.data(), b.shape(),
                   out.data(), [](S x, S y) { return x * y; });
      break;
    default:
      bcast_apply2(out_shape, a.data(), a.shape(), b.data(), b.shape(),
                   out.data(), [](S x, S y) { return x / y; });
      break;
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result<S>(
      out_shape, std::move(out), {a, b},
      [ai, bi, out_shape, kind](TensorImpl<S>& self) {
        const S* g = self.grad.data();
        switch (kind) {
          case 0:
            add_grad_reduced(*ai, g, out_shape);
            add_grad_reduced(*bi, g, out_shape);
            break;
          case 1:
            add_grad_reduced(*ai, g, out_shape);
            add_grad_reduced(*bi, g, out_shape, S(-1));
            break;
          case 2: {
            if (ai->requires_grad) {
              auto tmp = bcast_combine_with_grad(g, out_shape, bi->values.data(),
                                                 bi->shape,
                                                 [](S gv, S x) { return gv * x; });
              add_grad_reduced(*ai, tmp.data(), out_shape);
            }
            if (bi->requires_grad) {
              auto tmp = bcast_combine_with_grad(g, out_shape, ai->values.data(),
                                                 ai->shape,
                                                 [](S gv, S x) { return gv * x; });
              add_grad_reduced(*bi, tmp.data(), out_shape);
            }
            break;
          }
          default: {
            if (ai->requires_grad) {
              auto tmp = bcast_combine_with_grad(g, out_shape, bi->values.data(),
                                                 bi->shape,
                                                 [](S gv, S x) { return gv / x; });
              add_grad_reduced(*ai, tmp.data(), out_shape);
            }
            if (bi->requires_grad) {
              // d/db (a/b) = -a/b^2 = -out/b, and out = self.values
              std::vector<S> tmp(numel(out_shape));
              bcast_apply2(out_shape, self.values.data(), out_shape,
                           bi->values.data(), bi->shape, tmp.data(),
                           [](S o, S x) { return -o / x; });
              for (size_t i = 0; i < tmp.size(); ++i) tmp[i] *= g[i];
              add_grad_reduced(*bi, tmp.data(), out_shape);
            }
            break;
          }
        }
      });
}

template <class S> TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_op(a, b, 0);
}
template <class S> TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_op(a, b, 1);
}
template <class S> TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_op(a, b, 2);
}
template <class S> TensorT<S> div(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_op(a, b, 3);
}

template <class S, class Op>
static TensorT<S> pointwise_unary(const TensorT<S>& a) {
  const int64_t n = a.size();
  std::vector<S> out(n);
  const S* x = a.data();
  par::parallel_chunks(n, 1 << 16, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) out[i] = Op::fwd(x[i]);
  });
  auto ai = a.impl();
  return make_result<S>(a.shape(), std::move(out), {a},
                        [ai](TensorImpl<S>& self) {
                          if (!ai->requires_grad) return;
                          ensure_grad(*ai);
                          const S* g = self.grad.data();
                          const S* x = ai->values.data();
                          const S* y = self.values.data();
                          S* dst = ai->grad.data();
                          const int64_t n = static_cast<int64_t>(self.values.size());
                          for (int64_t i = 0; i < n; ++i) {
                            dst[i] += g[i] * Op::bwd(x[i], y[i]);
                          }
                        });
}

namespace {

template <class S>
S stable_sigmoid(S x) {
  if (x >= S(0)) {
    const S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <class S>
S stable_softplus(S x) {
  if (x > S(25)) return x;
  return std::log1p(std::exp(x));
}

template <class S> struct OpExp {
  static S fwd(S x) { return std::exp(x); }
  static S bwd(S, S y) { return y; }
};
template <class S> struct OpLog {
  static S fwd(S x) { return std::log(x); }
  static S bwd(S x, S) { return S(1) / x; }
};
template <class S> struct OpRelu {
  static S fwd(S x) { return x > S(0) ? x : S(0); }
  static S bwd(S x, S) { return x > S(0) ? S(1) : S(0); }
};
template <class S> struct OpElu {
  static S fwd(S x) { return x > S(0) ? x : std::expm1(x); }
  static S bwd(S x, S y) { return x > S(0) ? S(1) : y + S(1); }
};
template <class S> struct OpSigmoid {
  static S fwd(S x) { return stable_sigmoid(x); }
  static S bwd(S, S y) { return y * (S(1) - y); }
};
template <class S> struct OpSoftplus {
  static S fwd(S x) { return stable_softplus(x); }
  static S bwd(S x, S) { return stable_sigmoid(x); }
};
template <class S> struct OpNeg {
  static S fwd(S x) { return -x; }
  static S bwd(S, S) { return S(-1); }
};
template <class S> struct OpSquare {
  static S fwd(S x) { return x * x; }
  static S bwd(S x, S) { return S(2) * x; }
};
// softplus(x - 1): zero pre-activation maps to a small positive density.
template <class S> struct OpDensity {
  static S fwd(S x) { return stable_softplus(x - S(1)); }
  static S bwd(S x, S) { return stable_sigmoid(x - S(1)); }
};

}  // namespace

template <class S> TensorT<S> exp(const TensorT<S>& a) {
  return pointwise_unary<S, OpExp<S>>(a);
}
template <class S> TensorT<S> log(const TensorT<S>& a) {
  return pointwise_unary<S, OpLog<S>>(a);
}
template <class S> TensorT<S> relu(const TensorT<S>& a) {
  return pointwise_unary<S, OpRelu<S>>(a);
}
template <class S> TensorT<S> elu(const TensorT<S>& a) {
  return pointwise_unary<S, OpElu<S>>(a);
}
template <class S> TensorT<S> sigmoid(const TensorT<S>& a) {
  return pointwise_unary<S, OpSigmoid<S>>(a);
}
template <class S> TensorT<S> softplus(const TensorT<S>& a) {
  return pointwise_unary<S, OpSoftplus<S>>(a);
}
template <class S> TensorT<S> neg(const TensorT<S>& a) {
  return pointwise_unary<S, OpNeg<S>>(a);
}
template <class S> TensorT<S> square(const TensorT<S>& a) {
  return pointwise_unary<S, OpSquare<S>>(a);
}
template <class S> TensorT<S> density_activation(const TensorT<S>& a) {
  return pointwise_unary<S, OpDensity<S>>(a);
}

template <class S> TensorT<S> add_scalar(const TensorT<S>& a, S s) {
  const int64_t n = a.size();
  std::vector<S> out(n);
  const S* x = a.data();
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] + s;
  auto ai = a.impl();
  return make_result<S>(a.shape(), std::move(out), {a},
                        [ai](TensorImpl<S>& self) {
                          add_grad_reduced(*ai, self.grad.data(), self.shape);
                        });
}

template <class S> TensorT<S> mul_scalar(const TensorT<S>& a, S s) {
  const int64_t n = a.size();
  std::vector<S> out(n);
  const S* x = a.data();
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] * s;
  auto ai = a.impl();
  return make_result<S>(a.shape(), std::move(out), {a},
                        [ai, s](TensorImpl<S>& self) {
                          add_grad_reduced(*ai, self.grad.data(), self.shape, s);
                        });
}

template <class S>
TensorT<S> where(const TensorT<S>& mask, const TensorT<S>& a,
                 const TensorT<S>& b) {
  if (mask.requires_grad()) {
    throw ContractError("where(): mask must be a constant tensor");
  }
  Shape out_shape = broadcast_shapes(broadcast_shapes(a.shape(), b.shape()),
                                     mask.shape());
  // masked pick = m*a + (1-m)*b, kept as two broadcast passes
  std::vector<S> out(numel(out_shape));
  std::vector<S> tmp(out.size());
  bcast_apply2(out_shape, mask.data(), mask.shape(), a.data(), a.shape(),
               out.data(), [](S m, S x) { return m != S(0) ? x : S(0); });
  bcast_apply2(out_shape, mask.data(), mask.shape(), b.data(), b.shape(),
               tmp.data(), [](S m, S x) { return m != S(0) ? S(0) : x; });
  for (size_t i = 0; i < out.size(); ++i) out[i] += tmp[i];
  auto mi = mask.impl();
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result<S>(
      out_shape, std::move(out), {a, b},
      [mi, ai, bi, out_shape](TensorImpl<S>& self) {
        const S* g = self.grad.data();
        if (ai->requires_grad) {
          auto t = bcast_combine_with_grad(g, out_shape, mi->values.data(),
                                           mi->shape,
                                           [](S gv, S m) { return m != S(0) ? gv : S(0); });
          add_grad_reduced(*ai, t.data(), out_shape);
        }
        if (bi->requires_grad) {
          auto t = bcast_combine_with_grad(g, out_shape, mi->values.data(),
                                           mi->shape,
                                           [](S gv, S m) { return m != S(0) ? S(0) : gv; });
          add_grad_reduced(*bi, t.data(), out_shape);
        }
      });
}

template <class S> TensorT<S> cmp_gt(const TensorT<S>& a, S threshold) {
  const int64_t n = a.size();
  std::vector<S> out(n);
  const S* x = a.data();
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > threshold ? S(1) : S(0);
  return TensorT<S>::from_data(a.shape(), std::move(out));
}

// --------------------------------------------------------- linear algebra

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(m * n);
  kern::gemm_nn(m, n, k, a.data(), b.data(), out.data(), false);
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result<S>(
      {m, n}, std::move(out), {a, b}, [ai, bi, m, n, k](TensorImpl<S>& self) {
        const S* g = self.grad.data();
        if (ai->requires_grad) {
          ensure_grad(*ai);
          kern::gemm_nt(m, k, n, g, bi->values.data(), ai->grad.data(), true);
        }
        if (bi->requires_grad) {
          ensure_grad(*bi);
          kern::gemm_tn(m, n, k, ai->values.data(), g, bi->grad.data(), true);
        }
      });
}

template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w,
                  const TensorT<S>& b) {
  if (x.rank() < 1 || w.rank() != 2 || x.dim(-1) != w.dim(0) ||
      b.rank() != 1 || b.dim(0) != w.dim(1)) {
    throw ShapeError("linear: incompatible shapes x=" + shape_str(x.shape()) +
                     " w=" + shape_str(w.shape()) + " b=" +
                     shape_str(b.shape()));
  }
  const int64_t k = w.dim(0), n = w.dim(1);
  const int64_t m = x.size() / k;
  std::vector<S> out(m * n);
  kern::gemm_nn(m, n, k, x.data(), w.data(), out.data(), false);
  const S* bias = b.data();
  par::parallel_chunks(m, 256, [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      S* oi = out.data() + i * n;
#pragma omp simd
      for (int64_t j = 0; j < n; ++j) oi[j] += bias[j];
    }
  });
  Shape out_shape = x.shape();
  out_shape.back() = n;
  auto xi = x.impl();
  auto wi = w.impl();
  auto biasi = b.impl();
  return make_result<S>(
      std::move(out_shape), std::move(out), {x, w, b},
      [xi, wi, biasi, m, n, k](TensorImpl<S>& self) {
        const S* g = self.grad.data();
        if (xi->requires_grad) {
          ensure_grad(*xi);
          kern::gemm_nt(m, k, n, g, wi->values.data(), xi->grad.data(), true);
        }
        if (wi->requires_grad) {
          ensure_grad(*wi);
          kern::gemm_tn(m, n, k, xi->values.data(), g, wi->grad.data(), true);
        }
        if (biasi->requires_grad) {
          ensure_grad(*biasi);
          S* db = biasi->grad.data();
          for (int64_t i = 0; i < m; ++i) {
            const S* gi = g + i * n;
#pragma omp simd
            for (int64_t j = 0; j < n; ++j) db[j] += gi[j];
          }
        }
      });
}

template <class S>
TensorT<S> bmm(const TensorT<S>& a, const TensorT<S>& b, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const int64_t nb = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int64_t n = trans_b ? b.dim(1) : b.dim(2);
  const int64_t bk = trans_b ? b.dim(2) : b.dim(1);
  if (bk != k) {
    throw ShapeError("bmm: inner dims disagree: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()) +
                     (trans_b ? " (b transposed)" : ""));
  }
  std::vector<S> out(nb * m * n);
  par::parallel_chunks(nb, 1, [&](int64_t b0, int64_t b1) {
    for (int64_t i = b0; i < b1; ++i) {
      const S* ap = a.data() + i * m * k;
      const S* bp = b.data() + i * k * n;
      S* cp = out.data() + i * m * n;
      if (trans_b) {
        kern::gemm_nt_serial(m, n, k, ap, bp, cp, false);
      } else {
        kern::gemm_nn_serial(m, n, k, ap, bp, cp, false);
      }
    }
  });
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result<S>(
      {nb, m, n}, std::move(out), {a, b},
      [ai, bi, nb, m, n, k, trans_b](TensorImpl<S>& self) {
        const S* g = self.grad.data();
        if (ai->requires_grad) ensure_grad(*ai);
        if (bi->requires_grad) ensure_grad(*bi);
        for (int64_t i = 0; i < nb; ++i) {
          const S* gi = g + i * m * n;
          const S* av = ai->values.data() + i * m * k;
          const S* bv = bi->values.data() + i * k * n;
          if (ai->requires_grad) {
            S* da = ai->grad.data() + i * m * k;
            if (trans_b) {
              kern::gemm_nn_serial(m, k, n, gi, bv, da, true);
            } else {
              kern::gemm_nt_serial(m, k, n, gi, bv, da, true);
            }
          }
          if (bi->requires_grad) {
            S* db = bi->grad.data() + i * k * n;
            if (trans_b) {
              // db[n,k] = sum_m g[m,n] * a[m,k]
              kern::gemm_tn_serial(m, k, n, gi, av, db, true);
            } else {
              kern::gemm_tn_serial(m, n, k, av, gi, db, true);
            }
          }
        }
      });
}

// -------------------------------------------------------------- reductions

template <class S>
static TensorT<S> sum_impl(const TensorT<S>& x, int axis, bool keepdim,
                           bool take_mean) {
  axis = check_axis(x.shape(), axis);
  int64_t outer, red, inner;
  split_axis(x.shape(), axis, outer, red, inner);
  const S scale = take_mean ? S(1) / static_cast<S>(red) : S(1);
  std::vector<S> out(outer * inner, S(0));
  const S* xv = x.data();
  par::parallel_chunks(outer, 16, [&](int64_t o0, int64_t o1) {
    for (int64_t o = o0; o < o1; ++o) {
      S* op = out.data() + o * inner;
      for (int64_t r = 0; r < red; ++r) {
        const S* xp = xv + (o * red + r) * inner;
#pragma omp simd
        for (int64_t i = 0; i < inner; ++i) op[i] += xp[i];
      }
      if (take_mean) {
        for (int64_t i = 0; i < inner; ++i) op[i] *= scale;
      }
    }
  });
  auto xi = x.impl();
  return make_result<S>(
      reduced_shape(x.shape(), axis, keepdim), std::move(out), {x},
      [xi, outer, red, inner, scale](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        ensure_grad(*xi);
        const S* g = self.grad.data();
        S* dst = xi->grad.data();
        for (int64_t o = 0; o < outer; ++o) {
          const S* gp = g + o * inner;
          for (int64_t r = 0; r < red; ++r) {
            S* dp = dst + (o * red + r) * inner;
#pragma omp simd
            for (int64_t i = 0; i < inner; ++i) dp[i] += scale * gp[i];
          }
        }
      });
}

template <class S>
TensorT<S> sum(const TensorT<S>& x, int axis, bool keepdim) {
  return sum_impl(x, axis, keepdim, false);
}
template <class S>
TensorT<S> mean(const TensorT<S>& x, int axis, bool keepdim) {
  return sum_impl(x, axis, keepdim, true);
}

template <class S>
static TensorT<S> extremum_impl(const TensorT<S>& x, int axis, bool keepdim,
                                bool is_min) {
  axis = check_axis(x.shape(), axis);
  int64_t outer, red, inner;
  split_axis(x.shape(), axis, outer, red, inner);
  std::vector<S> out(outer * inner);
  auto args = std::make_shared<std::vector<int64_t>>(outer * inner);
  const S* xv = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      S best = xv[(o * red) * inner + i];
      int64_t arg = 0;
      for (int64_t r = 1; r < red; ++r) {
        const S v = xv[(o * red + r) * inner + i];
        // first extremum wins on ties
        if (is_min ? v < best : v > best) {
          best = v;
          arg = r;
        }
      }
      out[o * inner + i] = best;
      (*args)[o * inner + i] = arg;
    }
  }
  auto xi = x.impl();
  return make_result<S>(
      reduced_shape(x.shape(), axis, keepdim), std::move(out), {x},
      [xi, args, outer, red, inner](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        ensure_grad(*xi);
        const S* g = self.grad.data();
        S* dst = xi->grad.data();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t i = 0; i < inner; ++i) {
            const int64_t r = (*args)[o * inner + i];
            dst[(o * red + r) * inner + i] += g[o * inner + i];
          }
        }
      });
}

template <class S>
TensorT<S> reduce_min(const TensorT<S>& x, int axis, bool keepdim) {
  return extremum_impl(x, axis, keepdim, true);
}
template <class S>
TensorT<S> reduce_max(const TensorT<S>& x, int axis, bool keepdim) {
  return extremum_impl(x, axis, keepdim, false);
}

template <class S> TensorT<S> sum_all(const TensorT<S>& x) {
  const int64_t n = x.size();
  const S* xv = x.data();
  S acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += xv[i];
  auto xi = x.impl();
  return make_result<S>({1}, {acc}, {x}, [xi](TensorImpl<S>& self) {
    if (!xi->requires_grad) return;
    ensure_grad(*xi);
    const S g = self.grad[0];
    for (auto& d : xi->grad) d += g;
  });
}

template <class S>
TensorT<S> weighted_mean(const TensorT<S>& x, const TensorT<S>& w, int axis,
                         bool keepdim) {
  auto wn = div(w, sum(w, axis, true));
  return sum(mul(wn, x), axis, keepdim);
}

template <class S>
TensorT<S> weighted_var(const TensorT<S>& x, const TensorT<S>& w, int axis,
                        bool keepdim) {
  auto wn = div(w, sum(w, axis, true));
  auto mu = sum(mul(wn, x), axis, true);
  auto centered = sub(x, mu);
  return sum(mul(wn, square(centered)), axis, keepdim);
}

template <class S>
TensorT<S> variance(const TensorT<S>& x, int axis, bool keepdim) {
  auto mu = mean(x, axis, true);
  return mean(square(sub(x, mu)), axis, keepdim);
}

// --------------------------------------------------------------- shape ops

template <class S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<S> out(x.values());
  auto xi = x.impl();
  return make_result<S>(std::move(shape), std::move(out), {x},
                        [xi](TensorImpl<S>& self) {
                          if (!xi->requires_grad) return;
                          ensure_grad(*xi);
                          const S* g = self.grad.data();
                          S* dst = xi->grad.data();
                          const int64_t n = static_cast<int64_t>(self.values.size());
                          for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
                        });
}

namespace {

template <class S>
std::vector<S> permute_values(const std::vector<S>& v, const Shape& in_shape,
                              const std::vector<int>& dims, Shape& out_shape) {
  if (in_shape.size() > kMaxRank) {
    throw ShapeError("rank " + std::to_string(in_shape.size()) +
                     " exceeds limit " + std::to_string(kMaxRank));
  }
  const int r = static_cast<int>(in_shape.size());
  int64_t in_strides[kMaxRank];
  int64_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_strides[i] = s;
    s *= in_shape[i];
  }
  out_shape.resize(r);
  int64_t src_stride[kMaxRank];
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in_shape[dims[i]];
    src_stride[i] = in_strides[dims[i]];
  }
  std::vector<S> out(v.size());
  int64_t counters[kMaxRank] = {0};
  int64_t off = 0;
  const int64_t total = static_cast<int64_t>(v.size());
  const int64_t inner = out_shape[r - 1];
  const int64_t li = src_stride[r - 1];
  for (int64_t i = 0; i < total; i += inner) {
    for (int64_t j = 0; j < inner; ++j) out[i + j] = v[off + j * li];
    for (int d = r - 2; d >= 0; --d) {
      ++counters[d];
      off += src_stride[d];
      if (counters[d] < out_shape[d]) break;
      counters[d] = 0;
      off -= src_stride[d] * out_shape[d];
    }
  }
  return out;
}

}  // namespace

template <class S>
TensorT<S> permute(const TensorT<S>& x, const std::vector<int>& dims) {
  const int r = x.rank();
  if (static_cast<int>(dims.size()) != r) {
    throw ShapeError("permute: dims size " + std::to_string(dims.size()) +
                     " vs rank " + std::to_string(r));
  }
  std::vector<bool> seen(r, false);
  for (int d : dims) {
    if (d < 0 || d >= r || seen[d]) throw ShapeError("permute: bad dims");
    seen[d] = true;
  }
  Shape out_shape;
  auto out = permute_values(x.values(), x.shape(), dims, out_shape);
  std::vector<int> inv(r);
  for (int i = 0; i < r; ++i) inv[dims[i]] = i;
  auto xi = x.impl();
  return make_result<S>(std::move(out_shape), std::move(out), {x},
                        [xi, inv](TensorImpl<S>& self) {
                          if (!xi->requires_grad) return;
                          ensure_grad(*xi);
                          Shape back_shape;
                          auto gperm = permute_values(self.grad, self.shape,
                                                      inv, back_shape);
                          S* dst = xi->grad.data();
                          for (size_t i = 0; i < gperm.size(); ++i) {
                            dst[i] += gperm[i];
                          }
                        });
}

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& xs, int axis) {
  if (xs.empty()) throw ContractError("concat: empty input list");
  axis = check_axis(xs[0].shape(), axis);
  Shape out_shape = xs[0].shape();
  int64_t axis_total = 0;
  for (const auto& x : xs) {
    if (x.rank() != xs[0].rank()) {
      throw ShapeError("concat: rank mismatch");
    }
    for (int i = 0; i < x.rank(); ++i) {
      if (i != axis && x.dim(i) != out_shape[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(xs[0].shape()));
      }
    }
    axis_total += x.dim(axis);
  }
  out_shape[axis] = axis_total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
  std::vector<S> out(numel(out_shape));
  const int64_t out_row = axis_total * inner;
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t slab = x.dim(axis) * inner;
    const S* xv = x.data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + o * out_row + off, xv + o * slab,
                  sizeof(S) * slab);
    }
    off += slab;
  }
  std::vector<TensorT<S>> parents = xs;
  std::vector<std::shared_ptr<TensorImpl<S>>> pimpls;
  std::vector<int64_t> slabs;
  for (const auto& x : xs) {
    pimpls.push_back(x.impl());
    slabs.push_back(x.dim(axis) * inner);
  }
  return make_result<S>(
      std::move(out_shape), std::move(out), std::move(parents),
      [pimpls, slabs, outer, out_row](TensorImpl<S>& self) {
        const S* g = self.grad.data();
        int64_t off = 0;
        for (size_t p = 0; p < pimpls.size(); ++p) {
          auto& pi = *pimpls[p];
          const int64_t slab = slabs[p];
          if (pi.requires_grad) {
            ensure_grad(pi);
            S* dst = pi.grad.data();
            for (int64_t o = 0; o < outer; ++o) {
              const S* gp = g + o * out_row + off;
              S* dp = dst + o * slab;
              for (int64_t i = 0; i < slab; ++i) dp[i] += gp[i];
            }
          }
          off += slab;
        }
      });
}

template <class S>
TensorT<S> narrow(const TensorT<S>& x, int axis, int64_t start, int64_t len) {
  axis = check_axis(x.shape(), axis);
  if (start < 0 || len < 1 || start + len > x.dim(axis)) {
    throw ShapeError("narrow: window [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of range for " +
                     shape_str(x.shape()));
  }
  int64_t outer, red, inner;
  split_axis(x.shape(), axis, outer, red, inner);
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<S> out(outer * len * inner);
  const S* xv = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * len * inner,
                xv + (o * red + start) * inner, sizeof(S) * len * inner);
  }
  auto xi = x.impl();
  return make_result<S>(
      std::move(out_shape), std::move(out), {x},
      [xi, outer, red, inner, start, len](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        ensure_grad(*xi);
        const S* g = self.grad.data();
        S* dst = xi->grad.data();
        for (int64_t o = 0; o < outer; ++o) {
          const S* gp = g + o * len * inner;
          S* dp = dst + (o * red + start) * inner;
          for (int64_t i = 0; i < len * inner; ++i) dp[i] += gp[i];
        }
      });
}

// ----------------------------------------------------------- structured

template <class S>
TensorT<S> softmax(const TensorT<S>& x, int axis) {
  axis = check_axis(x.shape(), axis);
  int64_t outer, red, inner;
  split_axis(x.shape(), axis, outer, red, inner);
  std::vector<S> out(x.size());
  const S* xv = x.data();
  par::parallel_chunks(outer, 8, [&](int64_t o0, int64_t o1) {
    for (int64_t o = o0; o < o1; ++o) {
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * red * inner + i;
        S mx = xv[base];
        for (int64_t r = 1; r < red; ++r) {
          mx = std::max(mx, xv[base + r * inner]);
        }
        S denom = 0;
        for (int64_t r = 0; r < red; ++r) {
          const S e = std::exp(xv[base + r * inner] - mx);
          out[base + r * inner] = e;
          denom += e;
        }
        const S inv = S(1) / denom;
        for (int64_t r = 0; r < red; ++r) out[base + r * inner] *= inv;
      }
    }
  });
  auto xi = x.impl();
  return make_result<S>(
      x.shape(), std::move(out), {x},
      [xi, outer, red, inner](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        ensure_grad(*xi);
        const S* g = self.grad.data();
        const S* y = self.values.data();
        S* dst = xi->grad.data();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * red * inner + i;
            S dot = 0;
            for (int64_t r = 0; r < red; ++r) {
              dot += g[base + r * inner] * y[base + r * inner];
            }
            for (int64_t r = 0; r < red; ++r) {
              const int64_t idx = base + r * inner;
              dst[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      });
}

template <class S>
TensorT<S> cumsum_exclusive(const TensorT<S>& x, int axis) {
  axis = check_axis(x.shape(), axis);
  int64_t outer, red, inner;
  split_axis(x.shape(), axis, outer, red, inner);
  std::vector<S> out(x.size());
  const S* xv = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * red * inner + i;
      S run = 0;
      for (int64_t r = 0; r < red; ++r) {
        out[base + r * inner] = run;
        run += xv[base + r * inner];
      }
    }
  }
  auto xi = x.impl();
  return make_result<S>(
      x.shape(), std::move(out), {x},
      [xi, outer, red, inner](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        ensure_grad(*xi);
        const S* g = self.grad.data();
        S* dst = xi->grad.data();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * red * inner + i;
            S suffix = 0;
            for (int64_t r = red - 1; r >= 0; --r) {
              dst[base + r * inner] += suffix;
              suffix += g[base + r * inner];
            }
          }
        }
      });
}

// -------------------------------------------------------------- conv bits

template <class S>
TensorT<S> im2col(const TensorT<S>& x, int kh, int kw, int stride, int pad) {
  if (x.rank() != 3) {
    throw ShapeError("im2col: expected [H, W, C], got " + shape_str(x.shape()));
  }
  const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (w + 2 * pad - kw) / stride + 1;
  const int64_t patch = static_cast<int64_t>(kh) * kw * c;
  std::vector<S> out(oh * ow * patch, S(0));
  const S* xv = x.data();
  par::parallel_chunks(oh, 8, [&](int64_t y0, int64_t y1) {
    for (int64_t oy = y0; oy < y1; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        S* dst = out.data() + (oy * ow + ox) * patch;
        for (int ky = 0; ky < kh; ++ky) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            std::memcpy(dst + (ky * kw + kx) * c,
                        xv + (iy * w + ix) * c, sizeof(S) * c);
          }
        }
      }
    }
  });
  auto xi = x.impl();
  return make_result<S>(
      {oh * ow, patch}, std::move(out), {x},
      [xi, h, w, c, oh, ow, kh, kw, stride, pad](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        ensure_grad(*xi);
        const S* g = self.grad.data();
        S* dst = xi->grad.data();
        const int64_t patch = static_cast<int64_t>(kh) * kw * c;
        // gather form: race-free over input rows
        par::parallel_chunks(h, 4, [&](int64_t yy0, int64_t yy1) {
          for (int64_t iy = yy0; iy < yy1; ++iy) {
            for (int64_t ix = 0; ix < w; ++ix) {
              S* dp = dst + (iy * w + ix) * c;
              for (int ky = 0; ky < kh; ++ky) {
                const int64_t num_y = iy + pad - ky;
                if (num_y < 0 || num_y % stride) continue;
                const int64_t oy = num_y / stride;
                if (oy >= oh) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int64_t num_x = ix + pad - kx;
                  if (num_x < 0 || num_x % stride) continue;
                  const int64_t ox = num_x / stride;
                  if (ox >= ow) continue;
                  const S* gp =
                      g + (oy * ow + ox) * patch + (ky * kw + kx) * c;
                  for (int64_t ch = 0; ch < c; ++ch) dp[ch] += gp[ch];
                }
              }
            }
          }
        });
      });
}

template <class S>
TensorT<S> upsample2x(const TensorT<S>& x) {
  if (x.rank() != 3) {
    throw ShapeError("upsample2x: expected [H, W, C], got " +
                     shape_str(x.shape()));
  }
  const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  std::vector<S> out(4 * h * w * c);
  const S* xv = x.data();
  for (int64_t y = 0; y < 2 * h; ++y) {
    for (int64_t xq = 0; xq < 2 * w; ++xq) {
      std::memcpy(out.data() + (y * 2 * w + xq) * c,
                  xv + ((y / 2) * w + (xq / 2)) * c, sizeof(S) * c);
    }
  }
  auto xi = x.impl();
  return make_result<S>(
      {2 * h, 2 * w, c}, std::move(out), {x},
      [xi, h, w, c](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        ensure_grad(*xi);
        const S* g = self.grad.data();
        S* dst = xi->grad.data();
        for (int64_t y = 0; y < 2 * h; ++y) {
          for (int64_t xq = 0; xq < 2 * w; ++xq) {
            const S* gp = g + (y * 2 * w + xq) * c;
            S* dp = dst + ((y / 2) * w + (xq / 2)) * c;
            for (int64_t ch = 0; ch < c; ++ch) dp[ch] += gp[ch];
          }
        }
      });
}

template <class S>
TensorT<S> bilinear_gather(const TensorT<S>& fmap,
                           const std::vector<double>& u,
                           const std::vector<double>& v,
                           const std::vector<uint8_t>& valid) {
  if (fmap.rank() != 3) {
    throw ShapeError("bilinear_gather: expected [H, W, C], got " +
                     shape_str(fmap.shape()));
  }
  const int64_t p = static_cast<int64_t>(u.size());
  if (v.size() != u.size() || valid.size() != u.size()) {
    throw ShapeError("bilinear_gather: coordinate arrays disagree in length");
  }
  const int64_t h = fmap.dim(0), w = fmap.dim(1), c = fmap.dim(2);

  struct Plan {
    std::vector<int32_t> ix, iy;
    std::vector<S> fx, fy;
    std::vector<uint8_t> ok;
  };
  auto plan = std::make_shared<Plan>();
  plan->ix.resize(p);
  plan->iy.resize(p);
  plan->fx.resize(p);
  plan->fy.resize(p);
  plan->ok.resize(p);
  for (int64_t i = 0; i < p; ++i) {
    const double uu = u[i];
    const double vv = v[i];
    const bool inside = valid[i] && uu >= 0.0 && uu <= double(w - 1) &&
                        vv >= 0.0 && vv <= double(h - 1) && w >= 2 && h >= 2;
    plan->ok[i] = inside ? 1 : 0;
    if (!inside) {
      plan->ix[i] = 0;
      plan->iy[i] = 0;
      plan->fx[i] = 0;
      plan->fy[i] = 0;
      continue;
    }
    int64_t x0 = static_cast<int64_t>(std::floor(uu));
    int64_t y0 = static_cast<int64_t>(std::floor(vv));
    if (x0 > w - 2) x0 = w - 2;
    if (y0 > h - 2) y0 = h - 2;
    plan->ix[i] = static_cast<int32_t>(x0);
    plan->iy[i] = static_cast<int32_t>(y0);
    plan->fx[i] = static_cast<S>(uu - double(x0));
    plan->fy[i] = static_cast<S>(vv - double(y0));
  }

  std::vector<S> out(p * c, S(0));
  const S* fv = fmap.data();
  par::parallel_chunks(p, 1024, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      if (!plan->ok[i]) continue;
      const int64_t x0 = plan->ix[i], y0 = plan->iy[i];
      const S fx = plan->fx[i], fy = plan->fy[i];
      const S w00 = (S(1) - fx) * (S(1) - fy);
      const S w10 = fx * (S(1) - fy);
      const S w01 = (S(1) - fx) * fy;
      const S w11 = fx * fy;
      const S* p00 = fv + (y0 * w + x0) * c;
      const S* p10 = p00 + c;
      const S* p01 = p00 + w * c;
      const S* p11 = p01 + c;
      S* op = out.data() + i * c;
#pragma omp simd
      for (int64_t ch = 0; ch < c; ++ch) {
        op[ch] = w00 * p00[ch] + w10 * p10[ch] + w01 * p01[ch] + w11 * p11[ch];
      }
    }
  });
  auto fi = fmap.impl();
  return make_result<S>(
      {p, c}, std::move(out), {fmap}, [fi, plan, p, h, w, c](TensorImpl<S>& self) {
        if (!fi->requires_grad) return;
        ensure_grad(*fi);
        const S* g = self.grad.data();
        S* dst = fi->grad.data();
        for (int64_t i = 0; i < p; ++i) {
          if (!plan->ok[i]) continue;
          const int64_t x0 = plan->ix[i], y0 = plan->iy[i];
          const S fx = plan->fx[i], fy = plan->fy[i];
          const S w00 = (S(1) - fx) * (S(1) - fy);
          const S w10 = fx * (S(1) - fy);
          const S w01 = (S(1) - fx) * fy;
          const S w11 = fx * fy;
          const S* gp = g + i * c;
          S* p00 = dst + (y0 * w + x0) * c;
          S* p10 = p00 + c;
          S* p01 = p00 + w * c;
          S* p11 = p01 + c;
          for (int64_t ch = 0; ch < c; ++ch) {
            p00[ch] += w00 * gp[ch];
            p10[ch] += w10 * gp[ch];
            p01[ch] += w01 * gp[ch];
            p11[ch] += w11 * gp[ch];
          }
        }
      });
}

// ------------------------------------------------------------- backward

template <class S>
void backward(const TensorT<S>& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined tensor");
  auto root = loss.impl();
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " +
                        shape_str(loss.shape()));
  }
  if (!root->requires_grad) {
    throw ContractError("backward: loss does not require grad");
  }
  if (root->graph_consumed) {
    throw ContractError(
        "backward already ran on this graph; rebuild the forward graph "
        "before calling it again");
  }
  // Iterative postorder DFS over requires-grad ancestors.
  std::vector<std::shared_ptr<TensorImpl<S>>> topo;
  std::unordered_set<TensorImpl<S>*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl<S>>, size_t>> stack;
  stack.push_back({root, 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      auto p = top.first->parents[top.second];
      ++top.second;
      if (p->requires_grad && !visited.count(p.get())) {
        if (p->graph_consumed) {
          throw ContractError(
              "backward: graph shares nodes with one already consumed");
        }
        visited.insert(p.get());
        stack.push_back({std::move(p), 0});
      }
    } else {
      topo.push_back(top.first);
      stack.pop_back();
    }
  }
  root->grad.assign(1, S(1));
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl<S>* n = it->get();
    if (n->backward_fn) {
      n->backward_fn(*n);
      n->backward_fn = nullptr;
    }
    if (!n->is_leaf) {
      n->graph_consumed = true;
      n->grad.clear();
      n->grad.shrink_to_fit();
      // drop graph edges so retained handles don't pin their ancestors
      n->parents.clear();
    }
  }
}

template <class S>
TensorT<S> xavier_uniform(int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::vector<S> vals(fan_in * fan_out);
  for (auto& v : vals) v = static_cast<S>(rng.uniform(-limit, limit));
  return TensorT<S>::from_data({fan_in, fan_out}, std::move(vals), true);
}

// --------------------------------------------------- explicit instantiation

template class TensorT<float>;
template class TensorT<double>;

#define NVS_INSTANTIATE_OPS(S)                                                \
  template TensorT<S> add(const TensorT<S>&, const TensorT<S>&);              \
  template TensorT<S> sub(const TensorT<S>&, const TensorT<S>&);              \
  template TensorT<S> mul(const TensorT<S>&, const TensorT<S>&);              \
  template TensorT<S> div(const TensorT<S>&, const TensorT<S>&);              \
  template TensorT<S> add_scalar(const TensorT<S>&, S);                       \
  template TensorT<S> mul_scalar(const TensorT<S>&, S);                       \
  template TensorT<S> neg(const TensorT<S>&);                                 \
  template TensorT<S> square(const TensorT<S>&);                              \
  template TensorT<S> exp(const TensorT<S>&);                                 \
  template TensorT<S> log(const TensorT<S>&);                                 \
  template TensorT<S> relu(const TensorT<S>&);                                \
  template TensorT<S> elu(const TensorT<S>&);                                 \
  template TensorT<S> sigmoid(const TensorT<S>&);                             \
  template TensorT<S> softplus(const TensorT<S>&);                            \
  template TensorT<S> density_activation(const TensorT<S>&);                  \
  template TensorT<S> where(const TensorT<S>&, const TensorT<S>&,             \
                            const TensorT<S>&);                               \
  template TensorT<S> cmp_gt(const TensorT<S>&, S);                           \
  template TensorT<S> matmul(const TensorT<S>&, const TensorT<S>&);           \
  template TensorT<S> linear(const TensorT<S>&, const TensorT<S>&,            \
                             const TensorT<S>&);                              \
  template TensorT<S> bmm(const TensorT<S>&, const TensorT<S>&, bool);        \
  template TensorT<S> sum(const TensorT<S>&, int, bool);                      \
  template TensorT<S> mean(const TensorT<S>&, int, bool);                     \
  template TensorT<S> reduce_min(const TensorT<S>&, int, bool);               \
  template TensorT<S> reduce_max(const TensorT<S>&, int, bool);               \
  template TensorT<S> sum_all(const TensorT<S>&);                             \
  template TensorT<S> weighted_mean(const TensorT<S>&, const TensorT<S>&,     \
                                    int, bool);                               \
  template TensorT<S> weighted_var(const TensorT<S>&, const TensorT<S>&,      \
                                   int, bool);                                \
  template TensorT<S> variance(const TensorT<S>&, int, bool);                 \
  template TensorT<S> reshape(const TensorT<S>&, Shape);                      \
  template TensorT<S> permute(const TensorT<S>&, const std::vector<int>&);    \
  template TensorT<S> concat(const std::vector<TensorT<S>>&, int);            \
  template TensorT<S> narrow(const TensorT<S>&, int, int64_t, int64_t);       \
  template TensorT<S> softmax(const TensorT<S>&, int);                        \
  template TensorT<S> cumsum_exclusive(const TensorT<S>&, int);               \
  template TensorT<S> im2col(const TensorT<S>&, int, int, int, int);          \
  template TensorT<S> upsample2x(const TensorT<S>&);                          \
  template TensorT<S> bilinear_gather(const TensorT<S>&,                      \
                                      const std::vector<double>&,             \
                                      const std::vector<double>&,             \
                                      const std::vector<uint8_t>&);           \
  template void backward(const TensorT<S>&);                                  \
  template TensorT<S> xavier_uniform(int64_t, int64_t, Rng&);

NVS_INSTANTIATE_OPS(float)
NVS_INSTANTIATE_OPS(double)

#undef NVS_INSTANTIATE_OPS

}  // namespace nvs
