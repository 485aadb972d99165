#pragma once

// Tape-free reverse-mode automatic differentiation over row-major double
// matrices. Every tensor is 2-D: rows index the batch, columns the features.
// Image tensors are flattened channel-major (C, H, W) into the columns and the
// convolution ops carry the spatial shape explicitly.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vid2act/seeding.hpp"

namespace vid2act::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  template <class Expr>
  void add_grad(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero matrix of value's shape when no gradient reached this node.
  Matrix grad() const;
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse accumulation from a 1x1 loss into every reachable leaf that
// requires a gradient.
void backward(const Var& loss);

// Builders.
Var constant(Matrix value);
Var zeros(Index rows, Index cols);
Var full(Index rows, Index cols, double v);
Matrix randn(Index rows, Index cols, Rng& rng);

// Arithmetic. Binary ops require equal shapes unless stated.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);   // row: 1 x cols, broadcast over rows
Var mul_col(const Var& a, const Var& col);   // col: rows x 1, broadcast over cols
Var matmul(const Var& a, const Var& b);
Var linear(const Var& x, const Var& weight, const Var& bias);  // x W + b

// Elementwise nonlinearities.
Var elu(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var clamp_min(const Var& a, double lo);  // zero gradient where clamped

// Reductions.
Var sum(const Var& a);       // 1x1
Var mean(const Var& a);      // 1x1
Var row_sum(const Var& a);   // rows x 1
Var softmax_rows(const Var& a);

// Shape.
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, Index start, Index count);
Var slice_rows(const Var& a, Index start, Index count);
Var detach(const Var& a);

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}
inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

struct ImageShape {
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  Index size() const { return channels * height * width; }
};

struct ConvSpec {
  Index kernel = 4;
  Index stride = 2;
  Index padding = 1;
};

ImageShape conv_output_shape(const ImageShape& in, Index out_channels, const ConvSpec& spec);
ImageShape conv_transpose_output_shape(const ImageShape& in, Index out_channels, const ConvSpec& spec);

// weight: out_channels x (in_channels * k * k); bias: 1 x out_channels.
Var conv2d(const Var& x, const ImageShape& in, const Var& weight, const Var& bias, const ConvSpec& spec);
// weight: in_channels x (out_channels * k * k); bias: 1 x out_channels.
// The adjoint of conv2d with the same spec.
Var conv_transpose2d(const Var& x, const ImageShape& in, const Var& weight, const Var& bias,
                     Index out_channels, const ConvSpec& spec);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }

// Throws NumericError naming the tensor if any entry is NaN or infinite.
void check_finite(const Var& v, const std::string& name);
bool all_finite(const Matrix& m);

}  // namespace vid2act::ad
