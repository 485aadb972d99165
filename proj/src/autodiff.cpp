#include "vid2act/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "vid2act/errors.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace vid2act::ad {

namespace {

#ifdef __GLIBC__
// Training allocates and frees the same large activation buffers every
// update. glibc's default hands blocks above 128 KiB straight back to the
// kernel, so each update would pay for fresh zeroed pages again.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

}  // namespace

namespace {

using BackwardFn = std::function<void(Node&)>;

Var make_result(Matrix value, std::initializer_list<const Var*> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var* in : inputs) needs = needs || in->requires_grad();
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Var* in : inputs) node->parents.push_back(in->node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

Var make_result_n(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || in.requires_grad();
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Var& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// 1 / (1 + exp(-x)); exp overflow to inf gives the correct limit 0.
Matrix logistic(const Matrix& m) { return (1.0 / (1.0 + (-m.array()).exp())).matrix(); }

inline bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x" << b.cols();
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw std::invalid_argument("Var::item: tensor is not 1x1");
  return node_->value(0, 0);
}

void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("backward: loss must be 1x1");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; graphs from long rollouts are too deep for recursion.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->add_grad(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Var constant(Matrix value) { return Var(std::move(value), false); }
Var zeros(Index rows, Index cols) { return constant(Matrix::Zero(rows, cols)); }
Var full(Index rows, Index cols, double v) { return constant(Matrix::Constant(rows, cols, v)); }

Matrix randn(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {&a, &b}, [](Node& s) {
    if (wants(s, 0)) s.parents[0]->add_grad(s.grad);
    if (wants(s, 1)) s.parents[1]->add_grad(s.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {&a, &b}, [](Node& s) {
    if (wants(s, 0)) s.parents[0]->add_grad(s.grad);
    if (wants(s, 1)) s.parents[1]->add_grad(-s.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {&a, &b}, [](Node& s) {
    if (wants(s, 0)) s.parents[0]->add_grad(s.grad.cwiseProduct(s.parents[1]->value));
    if (wants(s, 1)) s.parents[1]->add_grad(s.grad.cwiseProduct(s.parents[0]->value));
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  return make_result(a.value().cwiseQuotient(b.value()), {&a, &b}, [](Node& s) {
    const Matrix inv = s.parents[1]->value.cwiseInverse();
    if (wants(s, 0)) s.parents[0]->add_grad(s.grad.cwiseProduct(inv));
    if (wants(s, 1)) s.parents[1]->add_grad(-s.grad.cwiseProduct(s.value).cwiseProduct(inv));
  });
}

Var neg(const Var& a) {
  return make_result(-a.value(), {&a}, [](Node& s) { s.parents[0]->add_grad(-s.grad); });
}

Var scale(const Var& a, double k) {
  return make_result(a.value() * k, {&a}, [k](Node& s) { s.parents[0]->add_grad(s.grad * k); });
}

Var add_scalar(const Var& a, double k) {
  return make_result(a.value().array() + k, {&a}, [](Node& s) { s.parents[0]->add_grad(s.grad); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: row must be 1 x cols");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {&a, &row}, [](Node& s) {
    if (wants(s, 0)) s.parents[0]->add_grad(s.grad);
    if (wants(s, 1)) s.parents[1]->add_grad(s.grad.colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("mul_col: col must be rows x 1");
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return make_result(std::move(out), {&a, &col}, [](Node& s) {
    const Matrix& av = s.parents[0]->value;
    const Matrix& cv = s.parents[1]->value;
    if (wants(s, 0)) s.parents[0]->add_grad((s.grad.array().colwise() * cv.col(0).array()).matrix());
    if (wants(s, 1)) s.parents[1]->add_grad(s.grad.cwiseProduct(av).rowwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {&a, &b}, [](Node& s) {
    if (wants(s, 0)) s.parents[0]->add_grad(s.grad * s.parents[1]->value.transpose());
    if (wants(s, 1)) s.parents[1]->add_grad(s.parents[0]->value.transpose() * s.grad);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows()) {
    std::ostringstream os;
    os << "linear: input has " << x.cols() << " features, weight expects " << w.rows();
    throw std::invalid_argument(os.str());
  }
  if (b.rows() != 1 || b.cols() != w.cols()) throw std::invalid_argument("linear: bias shape");
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return make_result(std::move(out), {&x, &w, &b}, [](Node& s) {
    if (wants(s, 0)) s.parents[0]->add_grad(s.grad * s.parents[1]->value.transpose());
    if (wants(s, 1)) s.parents[1]->add_grad(s.parents[0]->value.transpose() * s.grad);
    if (wants(s, 2)) s.parents[2]->add_grad(s.grad.colwise().sum());
  });
}

Var elu(const Var& a) {
  // Branch-free so Eigen vectorizes it: the second term is exactly 0 for x > 0.
  const auto x = a.value().array();
  Matrix out = x.max(0.0) + (x.min(0.0).exp() - 1.0);
  return make_result(std::move(out), {&a}, [](Node& s) {
    s.parents[0]->add_grad((s.grad.array() * (s.value.array().min(0.0) + 1.0)).matrix());
  });
}

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return make_result(std::move(out), {&a}, [](Node& s) {
    const Matrix& x = s.parents[0]->value;
    s.parents[0]->add_grad(s.grad.binaryExpr(x, [](double g, double xi) { return xi > 0 ? g : 0.0; }));
  });
}

Var tanh(const Var& a) {
  // tanh saturates to +-1 in double well before |x| = 20.
  const Array e = (-2.0 * a.value().array().max(-20.0).min(20.0)).exp();
  Matrix out = (1.0 - e) / (1.0 + e);
  return make_result(std::move(out), {&a}, [](Node& s) {
    s.parents[0]->add_grad((s.grad.array() * (1.0 - s.value.array().square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  Matrix out = logistic(a.value());
  return make_result(std::move(out), {&a}, [](Node& s) {
    s.parents[0]->add_grad((s.grad.array() * s.value.array() * (1.0 - s.value.array())).matrix());
  });
}

Var softplus(const Var& a) {
  const auto x = a.value().array();
  Matrix out = x.max(0.0) + (1.0 + (-x.abs()).exp()).log();
  return make_result(std::move(out), {&a}, [](Node& s) {
    s.parents[0]->add_grad(s.grad.cwiseProduct(logistic(s.parents[0]->value)));
  });
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp();
  return make_result(std::move(out), {&a}, [](Node& s) { s.parents[0]->add_grad(s.grad.cwiseProduct(s.value)); });
}

Var log(const Var& a) {
  Matrix out = a.value().array().log();
  return make_result(std::move(out), {&a}, [](Node& s) {
    s.parents[0]->add_grad(s.grad.cwiseQuotient(s.parents[0]->value));
  });
}

Var square(const Var& a) {
  Matrix out = a.value().array().square();
  return make_result(std::move(out), {&a}, [](Node& s) {
    s.parents[0]->add_grad(2.0 * s.grad.cwiseProduct(s.parents[0]->value));
  });
}

Var clamp_min(const Var& a, double lo) {
  Matrix out = a.value().cwiseMax(lo);
  return make_result(std::move(out), {&a}, [lo](Node& s) {
    const Matrix& x = s.parents[0]->value;
    s.parents[0]->add_grad(s.grad.binaryExpr(x, [lo](double g, double xi) { return xi > lo ? g : 0.0; }));
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {&a}, [](Node& s) {
    const Matrix& x = s.parents[0]->value;
    s.parents[0]->add_grad(Matrix::Constant(x.rows(), x.cols(), s.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  return make_result(std::move(out), {&a}, [](Node& s) {
    const Index c = s.parents[0]->value.cols();
    s.parents[0]->add_grad(s.grad.replicate(1, c));
  });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return make_result(std::move(out), {&a}, [](Node& s) {
    const Matrix& y = s.value;
    Matrix dot = s.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = y.cwiseProduct(s.grad - dot.replicate(1, y.cols()));
    s.parents[0]->add_grad(g);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return make_result_n(std::move(out), parts, [](Node& s) {
    Index o = 0;
    for (auto& p : s.parents) {
      const Index c = p->value.cols();
      if (p->requires_grad) p->add_grad(s.grad.middleCols(o, c));
      o += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return make_result_n(std::move(out), parts, [](Node& s) {
    Index o = 0;
    for (auto& p : s.parents) {
      const Index r = p->value.rows();
      if (p->requires_grad) p->add_grad(s.grad.middleRows(o, r));
      o += r;
    }
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return make_result(std::move(out), {&a}, [start, count](Node& s) {
    Node& p = *s.parents[0];
    if (p.grad.size() == 0) p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    p.grad.middleCols(start, count) += s.grad;
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::invalid_argument("slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return make_result(std::move(out), {&a}, [start, count](Node& s) {
    Node& p = *s.parents[0];
    if (p.grad.size() == 0) p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    p.grad.middleRows(start, count) += s.grad;
  });
}

Var detach(const Var& a) { return constant(a.value()); }

// ---------------------------------------------------------------------------
// Convolutions

namespace {

using ColMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Patch matrix of a batch: (C*k*k) x (N*out_h*out_w), column n*out_hw + pixel.
ColMatrix im2col(const Matrix& imgs, const ImageShape& in, const ConvSpec& sp, Index out_h, Index out_w) {
  const Index k = sp.kernel;
  const Index out_hw = out_h * out_w;
  const Index n_imgs = imgs.rows();
  ColMatrix cols = ColMatrix::Zero(in.channels * k * k, n_imgs * out_hw);
  for (Index c = 0; c < in.channels; ++c) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        double* row = cols.row((c * k + ki) * k + kj).data();
        for (Index n = 0; n < n_imgs; ++n) {
          const double* plane = imgs.row(n).data() + c * in.height * in.width;
          double* dst = row + n * out_hw;
          for (Index oy = 0; oy < out_h; ++oy) {
            const Index iy = oy * sp.stride - sp.padding + ki;
            if (iy < 0 || iy >= in.height) continue;
            for (Index ox = 0; ox < out_w; ++ox) {
              const Index ix = ox * sp.stride - sp.padding + kj;
              if (ix < 0 || ix >= in.width) continue;
              dst[oy * out_w + ox] = plane[iy * in.width + ix];
            }
          }
        }
      }
    }
  }
  return cols;
}

// Adds a batched patch matrix back into images (adjoint of im2col).
void col2im_add(const ColMatrix& cols, const ImageShape& in, const ConvSpec& sp, Index out_h, Index out_w, Matrix& imgs) {
  const Index k = sp.kernel;
  const Index out_hw = out_h * out_w;
  for (Index c = 0; c < in.channels; ++c) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const double* row = cols.row((c * k + ki) * k + kj).data();
        for (Index n = 0; n < imgs.rows(); ++n) {
          double* plane = imgs.row(n).data() + c * in.height * in.width;
          const double* src = row + n * out_hw;
          for (Index oy = 0; oy < out_h; ++oy) {
            const Index iy = oy * sp.stride - sp.padding + ki;
            if (iy < 0 || iy >= in.height) continue;
            for (Index ox = 0; ox < out_w; ++ox) {
              const Index ix = ox * sp.stride - sp.padding + kj;
              if (ix < 0 || ix >= in.width) continue;
              plane[iy * in.width + ix] += src[oy * out_w + ox];
            }
          }
        }
      }
    }
  }
}

// N x (C*hw) images <-> C x (N*hw) channel-major layout used by the GEMMs.
ColMatrix to_channel_major(const Matrix& x, Index channels, Index hw) {
  ColMatrix out(channels, x.rows() * hw);
  for (Index n = 0; n < x.rows(); ++n) {
    for (Index c = 0; c < channels; ++c) {
      std::copy_n(x.row(n).data() + c * hw, hw, out.row(c).data() + n * hw);
    }
  }
  return out;
}

Matrix from_channel_major(const ColMatrix& x, Index n_imgs, Index hw) {
  Matrix out(n_imgs, x.rows() * hw);
  for (Index n = 0; n < n_imgs; ++n) {
    for (Index c = 0; c < x.rows(); ++c) {
      std::copy_n(x.row(c).data() + n * hw, hw, out.row(n).data() + c * hw);
    }
  }
  return out;
}

}  // namespace

ImageShape conv_output_shape(const ImageShape& in, Index out_channels, const ConvSpec& sp) {
  ImageShape out;
  out.channels = out_channels;
  out.height = (in.height + 2 * sp.padding - sp.kernel) / sp.stride + 1;
  out.width = (in.width + 2 * sp.padding - sp.kernel) / sp.stride + 1;
  if (out.height <= 0 || out.width <= 0) throw ConfigError("conv: input too small for kernel");
  return out;
}

ImageShape conv_transpose_output_shape(const ImageShape& in, Index out_channels, const ConvSpec& sp) {
  ImageShape out;
  out.channels = out_channels;
  out.height = (in.height - 1) * sp.stride - 2 * sp.padding + sp.kernel;
  out.width = (in.width - 1) * sp.stride - 2 * sp.padding + sp.kernel;
  if (out.height <= 0 || out.width <= 0) throw ConfigError("conv_transpose: degenerate output shape");
  return out;
}

Var conv2d(const Var& x, const ImageShape& in, const Var& w, const Var& b, const ConvSpec& sp) {
  if (x.cols() != in.size()) throw std::invalid_argument("conv2d: input columns do not match image shape");
  const Index kk = sp.kernel * sp.kernel;
  if (w.cols() != in.channels * kk) throw std::invalid_argument("conv2d: weight shape");
  const ImageShape out = conv_output_shape(in, w.rows(), sp);
  const Index hw = out.height * out.width;
  auto cols = std::make_shared<ColMatrix>(im2col(x.value(), in, sp, out.height, out.width));
  ColMatrix yc = w.value() * *cols;
  yc.colwise() += b.value().row(0).transpose();
  Matrix y = from_channel_major(yc, x.rows(), hw);
  if (!w.requires_grad()) cols.reset();
  return make_result(std::move(y), {&x, &w, &b}, [in, out, sp, hw, cols](Node& s) {
    Node& xn = *s.parents[0];
    Node& wn = *s.parents[1];
    Node& bn = *s.parents[2];
    const ColMatrix gc = to_channel_major(s.grad, out.channels, hw);
    if (wn.requires_grad) wn.add_grad(gc * cols->transpose());
    if (bn.requires_grad) bn.add_grad(gc.rowwise().sum().transpose());
    if (xn.requires_grad) {
      const ColMatrix dcols = wn.value.transpose() * gc;
      Matrix dx = Matrix::Zero(xn.value.rows(), xn.value.cols());
      col2im_add(dcols, in, sp, out.height, out.width, dx);
      xn.add_grad(dx);
    }
  });
}

Var conv_transpose2d(const Var& x, const ImageShape& in, const Var& w, const Var& b, Index out_channels,
                     const ConvSpec& sp) {
  if (x.cols() != in.size()) throw std::invalid_argument("conv_transpose2d: input columns do not match image shape");
  const Index kk = sp.kernel * sp.kernel;
  if (w.rows() != in.channels || w.cols() != out_channels * kk) throw std::invalid_argument("conv_transpose2d: weight shape");
  const ImageShape out = conv_transpose_output_shape(in, out_channels, sp);
  const Index in_hw = in.height * in.width;
  const Index out_hw = out.height * out.width;
  const ColMatrix xc = to_channel_major(x.value(), in.channels, in_hw);
  const ColMatrix cols = w.value().transpose() * xc;
  Matrix y = Matrix::Zero(x.rows(), out.size());
  col2im_add(cols, out, sp, in.height, in.width, y);
  for (Index n = 0; n < y.rows(); ++n) {
    Eigen::Map<ColMatrix> yn(y.row(n).data(), out.channels, out_hw);
    yn.colwise() += b.value().row(0).transpose();
  }
  return make_result(std::move(y), {&x, &w, &b}, [in, out, sp, in_hw, out_hw](Node& s) {
    Node& xn = *s.parents[0];
    Node& wn = *s.parents[1];
    Node& bn = *s.parents[2];
    if (bn.requires_grad) {
      Matrix db = Matrix::Zero(1, out.channels);
      for (Index n = 0; n < s.grad.rows(); ++n) {
        Eigen::Map<const ColMatrix> gn(s.grad.row(n).data(), out.channels, out_hw);
        db += gn.rowwise().sum().transpose();
      }
      bn.add_grad(db);
    }
    if (!xn.requires_grad && !wn.requires_grad) return;
    const ColMatrix gcols = im2col(s.grad, out, sp, in.height, in.width);
    if (xn.requires_grad) {
      const ColMatrix dxc = wn.value * gcols;
      xn.add_grad(from_channel_major(dxc, xn.value.rows(), in_hw));
    }
    if (wn.requires_grad) wn.add_grad(to_channel_major(xn.value, in.channels, in_hw) * gcols.transpose());
  });
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

void check_finite(const Var& v, const std::string& name) {
  if (!v.value().allFinite()) throw NumericError("non-finite values in tensor '" + name + "'");
}

}  // namespace vid2act::ad
