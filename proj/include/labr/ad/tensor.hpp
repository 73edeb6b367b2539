#pragma once

// Reverse-mode automatic differentiation over dense row-major f64 arrays.
// A Tape owns every node of one forward pass; Tensor is a cheap handle into
// it. Tapes are per-forward-pass: build the graph, call backward() once on a
// scalar, read gradients, drop the tape.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "labr/util/errors.hpp"

namespace labr::ad {

using Shape = std::vector<int>;

int numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  const Shape& shape() const;
  int size() const;
  bool tracked() const;
  std::span<const double> values() const;
  // Gradient after backward(); all zeros for tensors the loss does not reach.
  std::span<const double> grad() const;
  double scalar() const;  // value of a single-element tensor

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // grad_enabled=false records values only (inference / finite differences);
  // backward() is then unavailable and ops skip closure construction.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Tensor input(Shape shape, std::span<const double> values, bool track);
  Tensor constant(Shape shape, std::span<const double> values);
  Tensor constant_fill(Shape shape, double value);
  Tensor scalar_value(double value) { return constant_fill({1}, value); }

  // Low-level node factory used by every op (including external custom ops
  // such as field sampling). `backward` receives the tape and the node's own
  // id; it must add into the parents' gradient buffers.
  Tensor make_node(Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> parents,
                   std::function<void(Tape&, int)> backward);
  Tensor make_node(Shape shape, std::vector<double> values,
                   std::span<const Tensor> parents,
                   std::function<void(Tape&, int)> backward);

  // Seeds d(loss)/d(loss)=1 and walks the tape once in reverse creation
  // order (creation order is topological by construction). One backward per
  // tape.
  void backward(Tensor loss);
  bool backward_done() const { return backward_done_; }

  std::size_t num_nodes() const { return nodes_.size(); }
  void clear();

  // Multiply-accumulate counting (2 flops per MAC); matmul and conv
  // contribute, elementwise ops do not.
  std::uint64_t flops() const { return flops_; }
  void add_flops(std::uint64_t f) { flops_ += f; }
  void reset_flops() { flops_ = 0; }

  // Internal accessors (ops and gradient plumbing).
  const Shape& shape_of(int id) const { return nodes_[id].shape; }
  std::vector<double>& values_of(int id) { return nodes_[id].val; }
  const std::vector<double>& values_of(int id) const { return nodes_[id].val; }
  bool tracked_of(int id) const { return nodes_[id].tracked; }
  // Lazily allocated, zero-initialized gradient buffer.
  std::vector<double>& grad_of(int id);
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool tracked = false;
    std::function<void(Tape&, int)> back;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
  std::uint64_t flops_ = 0;
};

// ---- operators -----------------------------------------------------------

Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor scale(Tensor x, double s);
Tensor add_scalar(Tensor x, double c);

Tensor matmul(Tensor a, Tensor b);              // (M,K) @ (K,N)
Tensor add_rowvec(Tensor x, Tensor b);          // (M,N) + (N,) per row
Tensor add_colvec(Tensor x, Tensor b);          // (M,N) + (M,) per column
Tensor linear(Tensor x, Tensor w, Tensor b);    // (B,in) @ (in,out) + b

Tensor relu(Tensor x);
Tensor sigmoid(Tensor x);
Tensor softmax(Tensor x, int axis);             // 1-D or 2-D

// x (Cin,H,W), w (Cout,Cin,kh,kw), bias (Cout,) or invalid for none.
Tensor conv2d(Tensor x, Tensor w, Tensor bias, int stride, int pad_h,
              int pad_w);
// Fixed, non-trainable 3x3 edge kernels; (C,H,W) -> (2C,H,W) size-preserving;
// channels [0,C) are horizontal-gradient responses, [C,2C) vertical.
Tensor sobel_conv2d(Tensor x);
Tensor maxpool2d(Tensor x, int w);              // window=stride=w

Tensor concat(std::span<const Tensor> xs, int axis);
Tensor concat(std::initializer_list<Tensor> xs, int axis);
Tensor reshape(Tensor x, Shape shape);
Tensor slice(Tensor x, int axis, int start, int len);

Tensor sum(Tensor x);
Tensor mean(Tensor x);
Tensor mean_axis(Tensor x, int axis);           // 2-D, reduce one axis

Tensor abs(Tensor x);
Tensor log1p(Tensor x);
Tensor l2norm_rows(Tensor x);                   // (R,C) -> (R,)

// Binary cross entropy of a scalar probability against a {0,1} label; the
// probability is clamped to [1e-7, 1-1e-7] before the logs.
Tensor bce(Tensor mu, double label);

}  // namespace labr::ad
