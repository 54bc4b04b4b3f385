#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "iman/errors.hpp"

namespace iman {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {
struct TensorNode;
}

// Dense row-major tensor of 64-bit reals with reverse-mode autodiff.
// Values are immutable once returned from an operation; the recorded tape
// links each result to its parents so backward() can replay it in reverse
// creation order. mutable_data() exists only for leaf parameters updated
// between graph constructions (optimizer steps).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  // Leaf with requires_grad set; the usual constructor for parameters.
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  bool has_grad() const;
  const std::vector<double>& grad() const;
  // Zero-initialized gradient buffer, created on demand. Backward
  // implementations accumulate into it.
  std::vector<double>& grad_buffer() const;
  void zero_grad();

  double item() const;
  double at(std::size_t flat_index) const;
  double at(std::initializer_list<std::size_t> index) const;

  bool all_finite() const;

  // Reverse-mode sweep from a scalar. Seeds d(self)/d(self) = 1 and
  // accumulates into grad buffers of every reachable tensor that
  // requires grad.
  void backward() const;

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Thread-local gradient mode. Inside a NoGradGuard no tape is recorded;
// finite-difference oracles and inference run there.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {
// Builds an op-result node. `backward` receives the output tensor and
// accumulates into the parents' grad buffers; it is dropped when no parent
// requires grad or grad mode is off.
Tensor make_node(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                 std::function<void(const Tensor&)> backward);
}  // namespace detail

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor recip(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// ---- linear algebra (2-D) ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- normalization ----
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
// axis 0: column means -> [cols]; axis 1: row means -> [rows]. 2-D input.
Tensor mean_axis(const Tensor& a, std::size_t axis);

// ---- structure ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);

// ---- row/column affine (the only broadcasting offered) ----
Tensor scale_rows(const Tensor& x, const Tensor& s);   // x[m,n] * s[m]
Tensor shift_rows(const Tensor& x, const Tensor& b);   // x[m,n] + b[m]
Tensor add_rowvec(const Tensor& x, const Tensor& v);   // x[m,n] + v[n]

// ---- convolution ----
// x [C,H,W], w [O,C,kh,kw], b [O]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad);

}  // namespace iman
