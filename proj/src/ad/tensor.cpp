#include "labr/ad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "labr/kern/kernels.hpp"

namespace labr::ad {

namespace {

[[noreturn]] void shape_fail(const std::string& op, const Shape& a,
                             const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a,
                             const std::string& detail) {
  throw ShapeError(op + ": bad shape " + shape_str(a) + " (" + detail + ")");
}

void check_same_tape(const char* op, Tensor a, Tensor b) {
  if (a.tape() != b.tape())
    throw ShapeError(std::string(op) + ": operands live on different tapes");
}

}  // namespace

int numel(const Shape& s) {
  int n = 1;
  for (int e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

const Shape& Tensor::shape() const { return tape_->shape_of(id_); }
int Tensor::size() const { return numel(shape()); }
bool Tensor::tracked() const { return tape_->tracked_of(id_); }

std::span<const double> Tensor::values() const {
  const auto& v = tape_->values_of(id_);
  return {v.data(), v.size()};
}

std::span<const double> Tensor::grad() const {
  auto& g = tape_->grad_of(id_);
  return {g.data(), g.size()};
}

double Tensor::scalar() const {
  if (size() != 1)
    throw ShapeError("scalar(): tensor has shape " + shape_str(shape()));
  return values()[0];
}

// ---- Tape -----------------------------------------------------------------

std::vector<double>& Tape::grad_of(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
  return n.grad;
}

Tensor Tape::input(Shape shape, std::span<const double> values, bool track) {
  if (static_cast<int>(values.size()) != numel(shape))
    throw ShapeError("input: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  for (int e : shape)
    if (e <= 0) throw ShapeError("input: non-positive extent in " + shape_str(shape));
  Node n;
  n.shape = std::move(shape);
  n.val.assign(values.begin(), values.end());
  n.tracked = track && grad_enabled_;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::constant(Shape shape, std::span<const double> values) {
  return input(std::move(shape), values, false);
}

Tensor Tape::constant_fill(Shape shape, double value) {
  std::vector<double> v(numel(shape), value);
  return input(std::move(shape), v, false);
}

Tensor Tape::make_node(Shape shape, std::vector<double> values,
                       std::span<const Tensor> parents,
                       std::function<void(Tape&, int)> backward) {
  if (static_cast<int>(values.size()) != numel(shape))
    throw ShapeError("make_node: value count mismatch for " + shape_str(shape));
  Node n;
  n.shape = std::move(shape);
  n.val = std::move(values);
  n.tracked = false;
  if (grad_enabled_) {
    for (const Tensor& p : parents)
      if (p.valid() && p.tracked()) n.tracked = true;
  }
  if (n.tracked) n.back = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::make_node(Shape shape, std::vector<double> values,
                       std::initializer_list<Tensor> parents,
                       std::function<void(Tape&, int)> backward) {
  return make_node(std::move(shape), std::move(values),
                   std::span<const Tensor>(parents.begin(), parents.size()),
                   std::move(backward));
}

void Tape::backward(Tensor loss) {
  if (!grad_enabled_)
    throw ShapeError("backward: tape was created with gradients disabled");
  if (backward_done_)
    throw ShapeError("backward: tape already consumed");
  if (!loss.valid() || loss.tape() != this)
    throw ShapeError("backward: loss is not on this tape");
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(loss.shape()));
  if (nodes_.empty()) throw ShapeError("backward: empty tape");
  grad_of(loss.id())[0] = 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.tracked || !n.back) continue;
    if (n.grad.empty()) continue;  // loss does not depend on this node
    n.back(*this, i);
  }
  backward_done_ = true;
}

void Tape::clear() {
  nodes_.clear();
  backward_done_ = false;
  flops_ = 0;
}

// ---- elementwise ----------------------------------------------------------

namespace {

Tensor ew_binary(const char* name, Tensor a, Tensor b,
                 void (*fwd)(const double*, const double*, double*,
                             std::size_t),
                 bool is_mul) {
  check_same_tape(name, a, b);
  if (a.shape() != b.shape()) shape_fail(name, a.shape(), b.shape());
  Tape& t = *a.tape();
  const std::size_t n = a.values().size();
  std::vector<double> out(n);
  fwd(a.values().data(), b.values().data(), out.data(), n);
  const int ia = a.id(), ib = b.id();
  const bool sub_op = std::string_view(name) == "sub";
  return t.make_node(a.shape(), std::move(out), {a, b},
                     [ia, ib, is_mul, sub_op](Tape& tp, int self) {
                       const auto& g = tp.grad_of(self);
                       const auto& k = kern::active();
                       if (is_mul) {
                         if (tp.tracked_of(ia)) {
                           auto& ga = tp.grad_of(ia);
                           const auto& vb = tp.values_of(ib);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             ga[i] += g[i] * vb[i];
                         }
                         if (tp.tracked_of(ib)) {
                           auto& gb = tp.grad_of(ib);
                           const auto& va = tp.values_of(ia);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gb[i] += g[i] * va[i];
                         }
                       } else {
                         if (tp.tracked_of(ia))
                           k.axpy(1.0, g.data(), tp.grad_of(ia).data(), g.size());
                         if (tp.tracked_of(ib))
                           k.axpy(sub_op ? -1.0 : 1.0, g.data(),
                                  tp.grad_of(ib).data(), g.size());
                       }
                     });
}

}  // namespace

Tensor add(Tensor a, Tensor b) {
  return ew_binary("add", a, b, kern::active().add, false);
}

Tensor sub(Tensor a, Tensor b) {
  return ew_binary("sub", a, b, kern::active().sub, false);
}

Tensor mul(Tensor a, Tensor b) {
  return ew_binary("mul", a, b, kern::active().mul, true);
}

Tensor scale(Tensor x, double s) {
  Tape& t = *x.tape();
  std::vector<double> out(x.size());
  kern::active().scale(x.values().data(), s, out.data(), out.size());
  const int ix = x.id();
  return t.make_node(x.shape(), std::move(out), {x},
                     [ix, s](Tape& tp, int self) {
                       const auto& g = tp.grad_of(self);
                       if (tp.tracked_of(ix))
                         kern::active().axpy(s, g.data(), tp.grad_of(ix).data(),
                                             g.size());
                     });
}

Tensor add_scalar(Tensor x, double c) {
  Tape& t = *x.tape();
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v += c;
  const int ix = x.id();
  return t.make_node(x.shape(), std::move(out), {x},
                     [ix](Tape& tp, int self) {
                       const auto& g = tp.grad_of(self);
                       if (tp.tracked_of(ix))
                         kern::active().axpy(1.0, g.data(),
                                             tp.grad_of(ix).data(), g.size());
                     });
}

// ---- matmul / linear ------------------------------------------------------

namespace {

// contribution C(MxN) (+)= A(MxK) * B(KxN) with optional logical transposes,
// used by the matmul backward.
void mm_at_b(const std::vector<double>& a, int m, int k,
             const std::vector<double>& g, int n, std::vector<double>& out) {
  // out(k x n) += A^T(k x m) * G(m x n): accumulate row-by-row.
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p)
      kern::active().axpy(a[i * k + p], g.data() + i * n, out.data() + p * n,
                          n);
}

void mm_a_bt(const std::vector<double>& g, int m, int n,
             const std::vector<double>& b, int k, std::vector<double>& out) {
  // out(m x k) += G(m x n) * B^T(n x k) where B is (k x n).
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p)
      out[i * k + p] +=
          kern::active().dot(g.data() + i * n, b.data() + p * n, n);
}

}  // namespace

Tensor matmul(Tensor a, Tensor b) {
  check_same_tape("matmul", a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    shape_fail("matmul", sa, sb);
  const int m = sa[0], k = sa[1], n = sb[1];
  Tape& t = *a.tape();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kern::active().matmul(a.values().data(), b.values().data(), out.data(), m, k,
                        n, false);
  t.add_flops(2ULL * m * k * n);
  const int ia = a.id(), ib = b.id();
  return t.make_node({m, n}, std::move(out), {a, b},
                     [ia, ib, m, k, n](Tape& tp, int self) {
                       const auto& g = tp.grad_of(self);
                       if (tp.tracked_of(ia))
                         mm_a_bt(g, m, n, tp.values_of(ib), k, tp.grad_of(ia));
                       if (tp.tracked_of(ib))
                         mm_at_b(tp.values_of(ia), m, k, g, n, tp.grad_of(ib));
                     });
}

Tensor add_rowvec(Tensor x, Tensor b) {
  check_same_tape("add_rowvec", x, b);
  const Shape& sx = x.shape();
  const Shape& sb = b.shape();
  if (sx.size() != 2 || sb.size() != 1 || sb[0] != sx[1])
    shape_fail("add_rowvec", sx, sb);
  const int m = sx[0], n = sx[1];
  Tape& t = *x.tape();
  std::vector<double> out(x.values().begin(), x.values().end());
  for (int i = 0; i < m; ++i)
    kern::active().axpy(1.0, b.values().data(), out.data() + i * n, n);
  const int ix = x.id(), ib = b.id();
  return t.make_node(sx, std::move(out), {x, b},
                     [ix, ib, m, n](Tape& tp, int self) {
                       const auto& g = tp.grad_of(self);
                       if (tp.tracked_of(ix))
                         kern::active().axpy(1.0, g.data(),
                                             tp.grad_of(ix).data(), g.size());
                       if (tp.tracked_of(ib)) {
                         auto& gb = tp.grad_of(ib);
                         for (int i = 0; i < m; ++i)
                           kern::active().axpy(1.0, g.data() + i * n,
                                               gb.data(), n);
                       }
                     });
}

Tensor add_colvec(Tensor x, Tensor b) {
  check_same_tape("add_colvec", x, b);
  const Shape& sx = x.shape();
  const Shape& sb = b.shape();
  if (sx.size() != 2 || sb.size() != 1 || sb[0] != sx[0])
    shape_fail("add_colvec", sx, sb);
  const int m = sx[0], n = sx[1];
  Tape& t = *x.tape();
  std::vector<double> out(x.values().begin(), x.values().end());
  for (int i = 0; i < m; ++i) {
    const double bi = b.values()[i];
    for (int j = 0; j < n; ++j) out[i * n + j] += bi;
  }
  const int ix = x.id(), ib = b.id();
  return t.make_node(sx, std::move(out), {x, b},
                     [ix, ib, m, n](Tape& tp, int self) {
                       const auto& g = tp.grad_of(self);
                       if (tp.tracked_of(ix))
                         kern::active().axpy(1.0, g.data(),
                                             tp.grad_of(ix).data(), g.size());
                       if (tp.tracked_of(ib)) {
                         auto& gb = tp.grad_of(ib);
                         for (int i = 0; i < m; ++i)
                           gb[i] += kern::active().sum(g.data() + i * n, n);
                       }
                     });
}

Tensor linear(Tensor x, Tensor w, Tensor b) {
  Tensor y = matmul(x, w);
  if (b.valid()) y = add_rowvec(y, b);
  return y;
}

// ---- activations ----------------------------------------------------------

Tensor relu(Tensor x) {
  Tape& t = *x.tape();
  std::vector<double> out(x.size());
  kern::active().relu(x.values().data(), out.data(), out.size());
  const int ix = x.id();
  return t.make_node(x.shape(), std::move(out), {x},
                     [ix](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const auto& g = tp.grad_of(self);
                       kern::active().relu_backward(tp.values_of(ix).data(),
                                                    g.data(),
                                                    tp.grad_of(ix).data(),
                                                    g.size());
                     });
}

Tensor sigmoid(Tensor x) {
  Tape& t = *x.tape();
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  const int ix = x.id();
  return t.make_node(x.shape(), std::move(out), {x},
                     [ix](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const auto& g = tp.grad_of(self);
                       const auto& s = tp.values_of(self);
                       auto& gx = tp.grad_of(ix);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         gx[i] += g[i] * s[i] * (1.0 - s[i]);
                     });
}

Tensor softmax(Tensor x, int axis) {
  const Shape& sx = x.shape();
  if (sx.size() == 1) {
    if (axis != 0) shape_fail("softmax", sx, "axis out of range");
  } else if (sx.size() == 2) {
    if (axis != 0 && axis != 1) shape_fail("softmax", sx, "axis out of range");
  } else {
    shape_fail("softmax", sx, "only 1-D/2-D supported");
  }
  // views: `rows` slices of length `len`, stride `stride`, offset step `off`.
  int rows, len, stride, off;
  if (sx.size() == 1) {
    rows = 1, len = sx[0], stride = 1, off = 0;
  } else if (axis == 1) {
    rows = sx[0], len = sx[1], stride = 1, off = sx[1];
  } else {
    rows = sx[1], len = sx[0], stride = sx[1], off = 1;
  }
  if (len == 0) throw ShapeError("softmax: zero-length axis");
  Tape& t = *x.tape();
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (int r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * off;
    double* dst = out.data() + r * off;
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < len; ++i) mx = std::max(mx, src[i * stride]);
    double denom = 0.0;
    for (int i = 0; i < len; ++i) {
      const double e = std::exp(src[i * stride] - mx);
      dst[i * stride] = e;
      denom += e;
    }
    for (int i = 0; i < len; ++i) dst[i * stride] /= denom;
  }
  const int ix = x.id();
  return t.make_node(sx, std::move(out), {x},
                     [ix, rows, len, stride, off](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const auto& g = tp.grad_of(self);
                       const auto& s = tp.values_of(self);
                       auto& gx = tp.grad_of(ix);
                       for (int r = 0; r < rows; ++r) {
                         double dotgs = 0.0;
                         for (int i = 0; i < len; ++i) {
                           const int idx = r * off + i * stride;
                           dotgs += g[idx] * s[idx];
                         }
                         for (int i = 0; i < len; ++i) {
                           const int idx = r * off + i * stride;
                           gx[idx] += (g[idx] - dotgs) * s[idx];
                         }
                       }
                     });
}

// ---- convolution ----------------------------------------------------------

namespace {

struct ConvDims {
  int cin, h, w, cout, kh, kw, stride, ph, pw, ho, wo;
};

void im2col(const double* x, const ConvDims& d, std::vector<double>& cols) {
  const int P = d.ho * d.wo;
  cols.assign(static_cast<std::size_t>(d.cin) * d.kh * d.kw * P, 0.0);
  for (int c = 0; c < d.cin; ++c) {
    for (int r = 0; r < d.kh; ++r) {
      for (int q = 0; q < d.kw; ++q) {
        double* dst = cols.data() +
                      (static_cast<std::size_t>(c) * d.kh * d.kw + r * d.kw + q) * P;
        for (int oi = 0; oi < d.ho; ++oi) {
          const int ii = oi * d.stride + r - d.ph;
          if (ii < 0 || ii >= d.h) continue;
          const double* src = x + (static_cast<std::size_t>(c) * d.h + ii) * d.w;
          for (int oj = 0; oj < d.wo; ++oj) {
            const int jj = oj * d.stride + q - d.pw;
            if (jj < 0 || jj >= d.w) continue;
            dst[oi * d.wo + oj] = src[jj];
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& cols, const ConvDims& d,
                double* dx) {
  const int P = d.ho * d.wo;
  for (int c = 0; c < d.cin; ++c) {
    for (int r = 0; r < d.kh; ++r) {
      for (int q = 0; q < d.kw; ++q) {
        const double* src = cols.data() +
                            (static_cast<std::size_t>(c) * d.kh * d.kw + r * d.kw + q) * P;
        for (int oi = 0; oi < d.ho; ++oi) {
          const int ii = oi * d.stride + r - d.ph;
          if (ii < 0 || ii >= d.h) continue;
          double* dst = dx + (static_cast<std::size_t>(c) * d.h + ii) * d.w;
          for (int oj = 0; oj < d.wo; ++oj) {
            const int jj = oj * d.stride + q - d.pw;
            if (jj < 0 || jj >= d.w) continue;
            dst[jj] += src[oi * d.wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Tensor x, Tensor w, Tensor bias, int stride, int pad_h,
              int pad_w) {
  check_same_tape("conv2d", x, w);
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 3 || sw.size() != 4 || sw[1] != sx[0])
    shape_fail("conv2d", sx, sw);
  if (stride < 1) shape_fail("conv2d", sx, "stride must be >= 1");
  ConvDims d;
  d.cin = sx[0], d.h = sx[1], d.w = sx[2];
  d.cout = sw[0], d.kh = sw[2], d.kw = sw[3];
  d.stride = stride, d.ph = pad_h, d.pw = pad_w;
  d.ho = (d.h + 2 * pad_h - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad_w - d.kw) / stride + 1;
  if (d.ho <= 0 || d.wo <= 0) shape_fail("conv2d", sx, "kernel larger than input");
  if (bias.valid() && (bias.shape().size() != 1 || bias.shape()[0] != d.cout))
    shape_fail("conv2d bias", bias.shape(), sw);

  Tape& t = *x.tape();
  const int K = d.cin * d.kh * d.kw;
  const int P = d.ho * d.wo;
  auto cols = std::make_shared<std::vector<double>>();
  im2col(x.values().data(), d, *cols);
  std::vector<double> out(static_cast<std::size_t>(d.cout) * P);
  kern::active().matmul(w.values().data(), cols->data(), out.data(), d.cout, K,
                        P, false);
  t.add_flops(2ULL * d.cout * K * P);
  if (bias.valid()) {
    for (int o = 0; o < d.cout; ++o) {
      const double bo = bias.values()[o];
      double* row = out.data() + static_cast<std::size_t>(o) * P;
      for (int p = 0; p < P; ++p) row[p] += bo;
    }
  }
  const int ix = x.id(), iw = w.id();
  const int ibias = bias.valid() ? bias.id() : -1;
  const bool keep_cols = t.grad_enabled() && (x.tracked() || w.tracked());
  if (!keep_cols) cols.reset();
  Tensor result = t.make_node(
      {d.cout, d.ho, d.wo}, std::move(out),
      bias.valid() ? std::initializer_list<Tensor>{x, w, bias}
                   : std::initializer_list<Tensor>{x, w},
      [ix, iw, ibias, d, K, P, cols](Tape& tp, int self) {
        const auto& g = tp.grad_of(self);
        if (ibias >= 0 && tp.tracked_of(ibias)) {
          auto& gb = tp.grad_of(ibias);
          for (int o = 0; o < d.cout; ++o)
            gb[o] += kern::active().sum(g.data() + static_cast<std::size_t>(o) * P, P);
        }
        if (tp.tracked_of(iw)) {
          // dW(cout x K) += G(cout x P) * cols^T(P x K)
          auto& gw = tp.grad_of(iw);
          for (int o = 0; o < d.cout; ++o)
            for (int kk = 0; kk < K; ++kk)
              gw[static_cast<std::size_t>(o) * K + kk] += kern::active().dot(
                  g.data() + static_cast<std::size_t>(o) * P,
                  cols->data() + static_cast<std::size_t>(kk) * P, P);
        }
        if (tp.tracked_of(ix)) {
          // dcols(K x P) = W^T(K x cout) * G(cout x P), then scatter.
          std::vector<double> dcols(static_cast<std::size_t>(K) * P, 0.0);
          const auto& wv = tp.values_of(iw);
          for (int o = 0; o < d.cout; ++o)
            for (int kk = 0; kk < K; ++kk)
              kern::active().axpy(wv[static_cast<std::size_t>(o) * K + kk],
                                  g.data() + static_cast<std::size_t>(o) * P,
                                  dcols.data() + static_cast<std::size_t>(kk) * P,
                                  P);
          col2im_add(dcols, d, tp.grad_of(ix).data());
        }
      });
  return result;
}

Tensor sobel_conv2d(Tensor x) {
  const Shape& sx = x.shape();
  if (sx.size() != 3) shape_fail("sobel_conv2d", sx, "expected (C,H,W)");
  const int c = sx[0];
  // Build the fixed (2C, C, 3, 3) weights: Gx for channel c -> out c,
  // Gy -> out C + c.
  static const double gx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  static const double gy[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  std::vector<double> w(static_cast<std::size_t>(2 * c) * c * 9, 0.0);
  for (int i = 0; i < c; ++i) {
    double* wx = w.data() + (static_cast<std::size_t>(i) * c + i) * 9;
    double* wy = w.data() + (static_cast<std::size_t>(c + i) * c + i) * 9;
    std::copy(gx, gx + 9, wx);
    std::copy(gy, gy + 9, wy);
  }
  Tensor wt = x.tape()->constant({2 * c, c, 3, 3}, w);
  return conv2d(x, wt, Tensor(), 1, 1, 1);
}

Tensor maxpool2d(Tensor x, int w) {
  const Shape& sx = x.shape();
  if (sx.size() != 3) shape_fail("maxpool2d", sx, "expected (C,H,W)");
  if (w < 1 || sx[1] < w || sx[2] < w)
    shape_fail("maxpool2d", sx, "window " + std::to_string(w));
  const int c = sx[0], h = sx[1], wd = sx[2];
  const int ho = h / w, wo = wd / w;
  Tape& t = *x.tape();
  std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
  auto arg = std::make_shared<std::vector<int>>(out.size());
  const auto xv = x.values();
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = xv.data() + static_cast<std::size_t>(ch) * h * wd;
    for (int oi = 0; oi < ho; ++oi) {
      for (int oj = 0; oj < wo; ++oj) {
        int best = (oi * w) * wd + oj * w;
        double bv = plane[best];
        for (int r = 0; r < w; ++r) {
          for (int q = 0; q < w; ++q) {
            const int idx = (oi * w + r) * wd + oj * w + q;
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          }
        }
        const std::size_t o =
            (static_cast<std::size_t>(ch) * ho + oi) * wo + oj;
        out[o] = bv;
        (*arg)[o] = best;
      }
    }
  }
  const int ix = x.id();
  return t.make_node({c, ho, wo}, std::move(out), {x},
                     [ix, arg, h, wd, ho, wo](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const auto& g = tp.grad_of(self);
                       auto& gx = tp.grad_of(ix);
                       const std::size_t plane_out =
                           static_cast<std::size_t>(ho) * wo;
                       const std::size_t plane_in =
                           static_cast<std::size_t>(h) * wd;
                       for (std::size_t o = 0; o < g.size(); ++o) {
                         const std::size_t ch = o / plane_out;
                         gx[ch * plane_in + (*arg)[o]] += g[o];
                       }
                     });
}

// ---- structure ops --------------------------------------------------------

Tensor concat(std::span<const Tensor> xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size()))
    shape_fail("concat", s0, "axis out of range");
  Shape out_shape = s0;
  int axis_total = 0;
  for (const Tensor& x : xs) {
    check_same_tape("concat", xs[0], x);
    const Shape& s = x.shape();
    if (s.size() != s0.size()) shape_fail("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != s0[i])
        shape_fail("concat", s0, s);
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;

  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

  Tape& t = *xs[0].tape();
  std::vector<double> out(numel(out_shape));
  std::vector<int> ids(xs.size());
  std::vector<int> lens(xs.size());
  {
    std::size_t col_off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      ids[k] = xs[k].id();
      lens[k] = xs[k].shape()[axis];
      const auto v = xs[k].values();
      const std::size_t block = static_cast<std::size_t>(lens[k]) * inner;
      for (int o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * static_cast<std::size_t>(axis_total) * inner +
                        col_off,
                    v.data() + o * block, block * sizeof(double));
      }
      col_off += block;
    }
  }
  return t.make_node(
      out_shape, std::move(out), xs,
      [ids, lens, outer, inner, axis_total](Tape& tp, int self) {
        const auto& g = tp.grad_of(self);
        std::size_t col_off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t block = static_cast<std::size_t>(lens[k]) * inner;
          if (tp.tracked_of(ids[k])) {
            auto& gk = tp.grad_of(ids[k]);
            for (int o = 0; o < outer; ++o)
              kern::active().axpy(
                  1.0,
                  g.data() +
                      o * static_cast<std::size_t>(axis_total) * inner +
                      col_off,
                  gk.data() + o * block, block);
          }
          col_off += block;
        }
      });
}

Tensor concat(std::initializer_list<Tensor> xs, int axis) {
  std::vector<Tensor> v(xs);
  return concat(std::span<const Tensor>(v.data(), v.size()), axis);
}

Tensor reshape(Tensor x, Shape shape) {
  if (numel(shape) != x.size()) shape_fail("reshape", x.shape(), shape);
  Tape& t = *x.tape();
  std::vector<double> out(x.values().begin(), x.values().end());
  const int ix = x.id();
  return t.make_node(std::move(shape), std::move(out), {x},
                     [ix](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const auto& g = tp.grad_of(self);
                       kern::active().axpy(1.0, g.data(),
                                           tp.grad_of(ix).data(), g.size());
                     });
}

Tensor slice(Tensor x, int axis, int start, int len) {
  const Shape& sx = x.shape();
  if (axis < 0 || axis >= static_cast<int>(sx.size()))
    shape_fail("slice", sx, "axis out of range");
  if (start < 0 || len <= 0 || start + len > sx[axis])
    shape_fail("slice", sx,
               "range [" + std::to_string(start) + "," +
                   std::to_string(start + len) + ") on axis " +
                   std::to_string(axis));
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sx[i];
  for (std::size_t i = axis + 1; i < sx.size(); ++i) inner *= sx[i];
  Shape out_shape = sx;
  out_shape[axis] = len;
  const int ax_in = sx[axis];
  Tape& t = *x.tape();
  std::vector<double> out(static_cast<std::size_t>(outer) * len * inner);
  const auto xv = x.values();
  for (int o = 0; o < outer; ++o)
    std::memcpy(out.data() + static_cast<std::size_t>(o) * len * inner,
                xv.data() + (static_cast<std::size_t>(o) * ax_in + start) * inner,
                static_cast<std::size_t>(len) * inner * sizeof(double));
  const int ix = x.id();
  return t.make_node(out_shape, std::move(out), {x},
                     [ix, outer, inner, len, ax_in, start](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const auto& g = tp.grad_of(self);
                       auto& gx = tp.grad_of(ix);
                       for (int o = 0; o < outer; ++o)
                         kern::active().axpy(
                             1.0, g.data() + static_cast<std::size_t>(o) * len * inner,
                             gx.data() +
                                 (static_cast<std::size_t>(o) * ax_in + start) * inner,
                             static_cast<std::size_t>(len) * inner);
                     });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(Tensor x) {
  Tape& t = *x.tape();
  std::vector<double> out{kern::active().sum(x.values().data(), x.size())};
  const int ix = x.id();
  return t.make_node({1}, std::move(out), {x},
                     [ix](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const double g = tp.grad_of(self)[0];
                       auto& gx = tp.grad_of(ix);
                       for (double& v : gx) v += g;
                     });
}

Tensor mean(Tensor x) { return scale(sum(x), 1.0 / x.size()); }

Tensor mean_axis(Tensor x, int axis) {
  const Shape& sx = x.shape();
  if (sx.size() != 2 || (axis != 0 && axis != 1))
    shape_fail("mean_axis", sx, "expected 2-D with axis 0/1");
  const int r = sx[0], c = sx[1];
  Tape& t = *x.tape();
  const auto xv = x.values();
  std::vector<double> out;
  if (axis == 1) {
    out.resize(r);
    for (int i = 0; i < r; ++i)
      out[i] = kern::active().sum(xv.data() + static_cast<std::size_t>(i) * c, c) / c;
  } else {
    out.assign(c, 0.0);
    for (int i = 0; i < r; ++i)
      kern::active().axpy(1.0, xv.data() + static_cast<std::size_t>(i) * c,
                          out.data(), c);
    for (double& v : out) v /= r;
  }
  const int ix = x.id();
  const Shape os = {axis == 1 ? r : c};
  return t.make_node(os, std::move(out), {x},
                     [ix, r, c, axis](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const auto& g = tp.grad_of(self);
                       auto& gx = tp.grad_of(ix);
                       if (axis == 1) {
                         for (int i = 0; i < r; ++i) {
                           const double gi = g[i] / c;
                           for (int j = 0; j < c; ++j) gx[i * c + j] += gi;
                         }
                       } else {
                         for (int i = 0; i < r; ++i)
                           for (int j = 0; j < c; ++j) gx[i * c + j] += g[j] / r;
                       }
                     });
}

// ---- pointwise nonlinear --------------------------------------------------

Tensor abs(Tensor x) {
  Tape& t = *x.tape();
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(xv[i]);
  const int ix = x.id();
  return t.make_node(x.shape(), std::move(out), {x},
                     [ix](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const auto& g = tp.grad_of(self);
                       const auto& v = tp.values_of(ix);
                       auto& gx = tp.grad_of(ix);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (v[i] > 0.0)
                           gx[i] += g[i];
                         else if (v[i] < 0.0)
                           gx[i] -= g[i];
                       }
                     });
}

Tensor log1p(Tensor x) {
  Tape& t = *x.tape();
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log1p(xv[i]);
  const int ix = x.id();
  return t.make_node(x.shape(), std::move(out), {x},
                     [ix](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const auto& g = tp.grad_of(self);
                       const auto& v = tp.values_of(ix);
                       auto& gx = tp.grad_of(ix);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         gx[i] += g[i] / (1.0 + v[i]);
                     });
}

Tensor l2norm_rows(Tensor x) {
  const Shape& sx = x.shape();
  if (sx.size() != 2) shape_fail("l2norm_rows", sx, "expected 2-D");
  const int r = sx[0], c = sx[1];
  Tape& t = *x.tape();
  std::vector<double> out(r);
  const auto xv = x.values();
  for (int i = 0; i < r; ++i) {
    const double* row = xv.data() + static_cast<std::size_t>(i) * c;
    out[i] = std::sqrt(kern::active().dot(row, row, c));
  }
  const int ix = x.id();
  return t.make_node({r}, std::move(out), {x},
                     [ix, r, c](Tape& tp, int self) {
                       if (!tp.tracked_of(ix)) return;
                       const auto& g = tp.grad_of(self);
                       const auto& nrm = tp.values_of(self);
                       const auto& v = tp.values_of(ix);
                       auto& gx = tp.grad_of(ix);
                       for (int i = 0; i < r; ++i) {
                         if (nrm[i] <= 0.0) continue;  // subgradient 0 at 0
                         const double s = g[i] / nrm[i];
                         for (int j = 0; j < c; ++j)
                           gx[i * c + j] += s * v[i * c + j];
                       }
                     });
}

Tensor bce(Tensor mu, double label) {
  if (mu.size() != 1)
    throw ShapeError("bce: probability must be scalar, got " +
                     shape_str(mu.shape()));
  constexpr double kEps = 1e-7;
  const double m = std::clamp(mu.values()[0], kEps, 1.0 - kEps);
  const double y = label;
  std::vector<double> out{-(y * std::log(m) + (1.0 - y) * std::log(1.0 - m))};
  const int imu = mu.id();
  Tape& t = *mu.tape();
  return t.make_node({1}, std::move(out), {mu},
                     [imu, m, y](Tape& tp, int self) {
                       if (!tp.tracked_of(imu)) return;
                       const double g = tp.grad_of(self)[0];
                       tp.grad_of(imu)[0] += g * (m - y) / (m * (1.0 - m));
                     });
}

}  // namespace labr::ad
