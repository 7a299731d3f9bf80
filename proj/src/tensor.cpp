#include "anim3d/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "anim3d/errors.hpp"

namespace anim3d::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

Eigen::Index numelOf(const std::vector<Eigen::Index>& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) n *= d;
  return n;
}

Tensor makeNode(std::vector<Eigen::Index> shape, Eigen::VectorXd value,
                std::vector<Tensor> inputs, std::function<void(Node&)> vjp, const char* op) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (numelOf(n->shape) != n->value.size())
    throw InternalError(std::string("op '") + op + "': value size does not match shape");
  if (!n->value.allFinite())
    throw InternalError(std::string("op '") + op + "' produced non-finite values");
  for (const Tensor& in : inputs)
    if (in->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->vjp = std::move(vjp);
  }
  return n;
}

void requireRank(const char* op, const Tensor& t, size_t rank) {
  if (t->shape.size() != rank)
    throw ArgumentError(std::string(op) + ": expected rank " + std::to_string(rank) +
                        ", got shape " + shapeStr(t->shape));
}

void requireSameShape(const char* op, const Tensor& a, const Tensor& b) {
  if (a->shape != b->shape)
    throw ArgumentError(std::string(op) + ": shapes " + shapeStr(a->shape) + " and " +
                        shapeStr(b->shape) + " differ");
}

CMapRM asMat(const Tensor& t) { return CMapRM(t->value.data(), t->rows(), t->cols()); }
MapRM gradMat(const Tensor& t) { return MapRM(t->grad.data(), t->rows(), t->cols()); }

}  // namespace

std::string shapeStr(const std::vector<Eigen::Index>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor param(std::vector<Eigen::Index> shape, Eigen::VectorXd value) {
  if (numelOf(shape) != value.size())
    throw ArgumentError("param: shape " + shapeStr(shape) + " does not match " +
                        std::to_string(value.size()) + " values");
  if (!value.allFinite()) throw ArgumentError("param: non-finite initial values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Tensor constant(std::vector<Eigen::Index> shape, Eigen::VectorXd value) {
  if (numelOf(shape) != value.size())
    throw ArgumentError("constant: shape " + shapeStr(shape) + " does not match " +
                        std::to_string(value.size()) + " values");
  if (!value.allFinite()) throw ArgumentError("constant: non-finite values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

Tensor customOp(std::vector<Eigen::Index> shape, Eigen::VectorXd value,
                std::vector<Tensor> inputs, std::function<void(Node&)> vjp,
                const std::string& name) {
  return makeNode(std::move(shape), std::move(value), std::move(inputs), std::move(vjp),
                  name.c_str());
}

Tensor constant(const Eigen::MatrixXd& m) {
  Eigen::VectorXd flat(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat(r * m.cols() + c) = m(r, c);
  return constant({m.rows(), m.cols()}, std::move(flat));
}

Tensor constantVector(const Eigen::VectorXd& v) { return constant({v.size()}, v); }

Eigen::MatrixXd toMatrix(const Tensor& t) {
  if (t->shape.size() == 1) return t->value;
  requireRank("toMatrix", t, 2);
  return asMat(t);
}

Eigen::MatrixXd gradMatrix(const Tensor& t) {
  if (t->grad.size() != t->numel()) throw InternalError("gradMatrix: backward has not run");
  if (t->shape.size() == 1) return t->grad;
  requireRank("gradMatrix", t, 2);
  return CMapRM(t->grad.data(), t->rows(), t->cols());
}

void backward(const Tensor& loss) {
  if (!loss) throw ArgumentError("backward: null tensor");
  if (loss->numel() != 1)
    throw ArgumentError("backward: loss must be scalar, got shape " + shapeStr(loss->shape));

  struct Frame {
    Node* node;
    size_t next;
  };
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Frame> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->inputs.size()) {
      Node* child = f.node->inputs[f.next++].get();
      if (seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad = Eigen::VectorXd::Zero(n->numel());
  loss->grad(0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->vjp && (*it)->requires_grad) (*it)->vjp(**it);
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  requireSameShape("add", a, b);
  return makeNode(
      a->shape, a->value + b->value, {a, b},
      [a, b](Node& self) {
        a->grad += self.grad;
        b->grad += self.grad;
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  requireSameShape("sub", a, b);
  return makeNode(
      a->shape, a->value - b->value, {a, b},
      [a, b](Node& self) {
        a->grad += self.grad;
        b->grad -= self.grad;
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  requireSameShape("mul", a, b);
  return makeNode(
      a->shape, a->value.cwiseProduct(b->value), {a, b},
      [a, b](Node& self) {
        a->grad.array() += self.grad.array() * b->value.array();
        b->grad.array() += self.grad.array() * a->value.array();
      },
      "mul");
}

Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw ArgumentError("scale: non-finite factor");
  return makeNode(
      a->shape, c * a->value, {a}, [a, c](Node& self) { a->grad += c * self.grad; }, "scale");
}

Tensor relu(const Tensor& a) {
  return makeNode(
      a->shape, a->value.cwiseMax(0.0), {a},
      [a](Node& self) {
        a->grad.array() += self.grad.array() * (a->value.array() > 0.0).cast<double>();
      },
      "relu");
}

Tensor leakyRelu(const Tensor& a, double slope) {
  Eigen::VectorXd v = a->value;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v(i) < 0) v(i) *= slope;
  return makeNode(
      a->shape, std::move(v), {a},
      [a, slope](Node& self) {
        for (Eigen::Index i = 0; i < self.grad.size(); ++i)
          a->grad(i) += self.grad(i) * (a->value(i) > 0 ? 1.0 : slope);
      },
      "leaky_relu");
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& a) {
  Eigen::VectorXd v(a->numel());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double x = a->value(i);
    v(i) = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return makeNode(
      a->shape, std::move(v), {a},
      [a](Node& self) {
        for (Eigen::Index i = 0; i < self.grad.size(); ++i) {
          const double x = a->value(i);
          const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
          a->grad(i) += self.grad(i) * (cdf + x * pdf);
        }
      },
      "gelu");
}

Tensor tanhOp(const Tensor& a) {
  return makeNode(
      a->shape, a->value.array().tanh().matrix(), {a},
      [a](Node& self) {
        a->grad.array() += self.grad.array() * (1.0 - self.value.array().square());
      },
      "tanh");
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  requireRank("matmul", a, 2);
  requireRank("matmul", b, 2);
  if (a->cols() != b->rows())
    throw ArgumentError("matmul: shapes " + shapeStr(a->shape) + " and " + shapeStr(b->shape) +
                        " are incompatible");
  const Eigen::Index m = a->rows(), n = b->cols();
  RowMat c = asMat(a) * asMat(b);
  return makeNode(
      {m, n}, Eigen::Map<Eigen::VectorXd>(c.data(), c.size()), {a, b},
      [a, b](Node& self) {
        CMapRM g(self.grad.data(), self.shape[0], self.shape[1]);
        gradMat(a).noalias() += g * asMat(b).transpose();
        gradMat(b).noalias() += asMat(a).transpose() * g;
      },
      "matmul");
}

Tensor transpose(const Tensor& a) {
  requireRank("transpose", a, 2);
  RowMat t = asMat(a).transpose();
  return makeNode(
      {a->cols(), a->rows()}, Eigen::Map<Eigen::VectorXd>(t.data(), t.size()), {a},
      [a](Node& self) {
        CMapRM g(self.grad.data(), self.shape[0], self.shape[1]);
        gradMat(a) += g.transpose();
      },
      "transpose");
}

Tensor broadcastRows(const Tensor& v, Eigen::Index rows) {
  requireRank("broadcast_rows", v, 1);
  if (rows < 1) throw ArgumentError("broadcast_rows: row count must be positive");
  const Eigen::Index n = v->numel();
  RowMat out(rows, n);
  out.rowwise() = v->value.transpose();
  return makeNode(
      {rows, n}, Eigen::Map<Eigen::VectorXd>(out.data(), out.size()), {v},
      [v](Node& self) {
        CMapRM g(self.grad.data(), self.shape[0], self.shape[1]);
        v->grad += g.colwise().sum().transpose();
      },
      "broadcast_rows");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  requireRank("linear", x, 2);
  return add(matmul(x, w), broadcastRows(b, x->rows()));
}

// ---- shape ----

Tensor reshape(const Tensor& a, std::vector<Eigen::Index> shape) {
  if (numelOf(shape) != a->numel())
    throw ArgumentError("reshape: cannot view " + shapeStr(a->shape) + " as " + shapeStr(shape));
  return makeNode(
      std::move(shape), a->value, {a}, [a](Node& self) { a->grad += self.grad; }, "reshape");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ArgumentError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ArgumentError("concat: axis must be 0 or 1");
  for (const Tensor& p : parts) requireRank("concat", p, 2);
  Eigen::Index rows = parts[0]->rows(), cols = parts[0]->cols();
  for (size_t i = 1; i < parts.size(); ++i) {
    const bool off_axis_ok =
        axis == 0 ? parts[i]->cols() == cols : parts[i]->rows() == rows;
    if (!off_axis_ok)
      throw ArgumentError("concat: shapes " + shapeStr(parts[0]->shape) + " and " +
                          shapeStr(parts[i]->shape) + " differ off-axis");
    if (axis == 0)
      rows += parts[i]->rows();
    else
      cols += parts[i]->cols();
  }
  RowMat out(rows, cols);
  Eigen::Index at = 0;
  for (const Tensor& p : parts) {
    if (axis == 0) {
      out.middleRows(at, p->rows()) = asMat(p);
      at += p->rows();
    } else {
      out.middleCols(at, p->cols()) = asMat(p);
      at += p->cols();
    }
  }
  auto parts_copy = parts;
  return makeNode(
      {rows, cols}, Eigen::Map<Eigen::VectorXd>(out.data(), out.size()), parts,
      [parts_copy, axis](Node& self) {
        CMapRM g(self.grad.data(), self.shape[0], self.shape[1]);
        Eigen::Index at = 0;
        for (const Tensor& p : parts_copy) {
          if (axis == 0) {
            gradMat(p) += g.middleRows(at, p->rows());
            at += p->rows();
          } else {
            gradMat(p) += g.middleCols(at, p->cols());
            at += p->cols();
          }
        }
      },
      "concat");
}

Tensor slice(const Tensor& a, int axis, Eigen::Index start, Eigen::Index len) {
  requireRank("slice", a, 2);
  if (axis != 0 && axis != 1) throw ArgumentError("slice: axis must be 0 or 1");
  const Eigen::Index extent = axis == 0 ? a->rows() : a->cols();
  if (start < 0 || len < 1 || start + len > extent)
    throw ArgumentError("slice: range [" + std::to_string(start) + ", " +
                        std::to_string(start + len) + ") outside axis of size " +
                        std::to_string(extent));
  RowMat out = axis == 0 ? asMat(a).middleRows(start, len).eval()
                         : asMat(a).middleCols(start, len).eval();
  return makeNode(
      {out.rows(), out.cols()}, Eigen::Map<Eigen::VectorXd>(out.data(), out.size()), {a},
      [a, axis, start, len](Node& self) {
        CMapRM g(self.grad.data(), self.shape[0], self.shape[1]);
        if (axis == 0)
          gradMat(a).middleRows(start, len) += g;
        else
          gradMat(a).middleCols(start, len) += g;
      },
      "slice");
}

// ---- normalization / lookup ----

Tensor softmax(const Tensor& a, int axis) {
  requireRank("softmax", a, 2);
  if (axis != 0 && axis != 1) throw ArgumentError("softmax: axis must be 0 or 1");
  RowMat y = asMat(a);
  if (axis == 1) {
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      y.row(r) = (y.row(r).array() - y.row(r).maxCoeff()).exp().matrix();
      y.row(r) /= y.row(r).sum();
    }
  } else {
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      y.col(c) = (y.col(c).array() - y.col(c).maxCoeff()).exp().matrix();
      y.col(c) /= y.col(c).sum();
    }
  }
  return makeNode(
      a->shape, Eigen::Map<Eigen::VectorXd>(y.data(), y.size()), {a},
      [a, axis](Node& self) {
        CMapRM g(self.grad.data(), self.shape[0], self.shape[1]);
        CMapRM y(self.value.data(), self.shape[0], self.shape[1]);
        MapRM da = gradMat(a);
        if (axis == 1) {
          for (Eigen::Index r = 0; r < y.rows(); ++r) {
            const double dot = g.row(r).cwiseProduct(y.row(r)).sum();
            da.row(r).array() += (g.row(r).array() - dot) * y.row(r).array();
          }
        } else {
          for (Eigen::Index c = 0; c < y.cols(); ++c) {
            const double dot = g.col(c).cwiseProduct(y.col(c)).sum();
            da.col(c).array() += (g.col(c).array() - dot) * y.col(c).array();
          }
        }
      },
      "softmax");
}

Tensor layerNorm(const Tensor& a, double eps) {
  requireRank("layer_norm", a, 2);
  if (eps <= 0) throw ArgumentError("layer_norm: eps must be positive");
  const Eigen::Index rows = a->rows(), cols = a->cols();
  RowMat y(rows, cols);
  Eigen::VectorXd inv_std(rows);
  CMapRM x = asMat(a);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = x.row(r).mean();
    y.row(r) = (x.row(r).array() - mu).matrix();
    const double var = y.row(r).squaredNorm() / static_cast<double>(cols);
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    y.row(r) *= inv_std(r);
  }
  return makeNode(
      a->shape, Eigen::Map<Eigen::VectorXd>(y.data(), y.size()), {a},
      [a, inv_std](Node& self) {
        CMapRM g(self.grad.data(), self.shape[0], self.shape[1]);
        CMapRM y(self.value.data(), self.shape[0], self.shape[1]);
        MapRM da = gradMat(a);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          const double g_mean = g.row(r).mean();
          const double gy_mean = g.row(r).cwiseProduct(y.row(r)).mean();
          da.row(r).array() +=
              inv_std(r) * (g.row(r).array() - g_mean - y.row(r).array() * gy_mean);
        }
      },
      "layer_norm");
}

Tensor embeddingLookup(const Tensor& table, Eigen::Index id) {
  requireRank("embedding_lookup", table, 2);
  if (id < 0 || id >= table->rows())
    throw ArgumentError("embedding_lookup: id " + std::to_string(id) + " outside [0, " +
                        std::to_string(table->rows()) + ")");
  const Eigen::Index d = table->cols();
  return makeNode(
      {d}, table->value.segment(id * d, d), {table},
      [table, id, d](Node& self) { table->grad.segment(id * d, d) += self.grad; },
      "embedding_lookup");
}

// ---- convolution ----

namespace {

struct ConvDims {
  Eigen::Index batch, in_h, in_w, in_c, k_h, k_w, out_c, out_h, out_w;
  int stride, pad_h, pad_w;
};

ConvDims conv2dDims(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
                    int pad_h, int pad_w) {
  requireRank("conv2d", input, 4);
  requireRank("conv2d", kernel, 4);
  requireRank("conv2d", bias, 1);
  ConvDims d;
  d.batch = input->shape[0];
  d.in_h = input->shape[1];
  d.in_w = input->shape[2];
  d.in_c = input->shape[3];
  d.k_h = kernel->shape[0];
  d.k_w = kernel->shape[1];
  d.out_c = kernel->shape[3];
  d.stride = stride;
  d.pad_h = pad_h;
  d.pad_w = pad_w;
  if (kernel->shape[2] != d.in_c)
    throw ArgumentError("conv2d: shapes " + shapeStr(input->shape) + " and " +
                        shapeStr(kernel->shape) + " disagree on channels");
  if (bias->numel() != d.out_c)
    throw ArgumentError("conv2d: bias length " + std::to_string(bias->numel()) +
                        " does not match " + std::to_string(d.out_c) + " output channels");
  if (stride < 1 || pad_h < 0 || pad_w < 0)
    throw ArgumentError("conv2d: stride must be >= 1 and pad >= 0");
  d.out_h = (d.in_h + 2 * pad_h - d.k_h) / stride + 1;
  d.out_w = (d.in_w + 2 * pad_w - d.k_w) / stride + 1;
  if (d.in_h + 2 * pad_h < d.k_h || d.in_w + 2 * pad_w < d.k_w)
    throw ArgumentError("conv2d: kernel larger than padded input");
  return d;
}

RowMat im2col(const Eigen::VectorXd& x, const ConvDims& d) {
  RowMat m = RowMat::Zero(d.batch * d.out_h * d.out_w, d.k_h * d.k_w * d.in_c);
  Eigen::Index row = 0;
  for (Eigen::Index b = 0; b < d.batch; ++b)
    for (Eigen::Index oh = 0; oh < d.out_h; ++oh)
      for (Eigen::Index ow = 0; ow < d.out_w; ++ow, ++row) {
        for (Eigen::Index i = 0; i < d.k_h; ++i) {
          const Eigen::Index h = oh * d.stride + i - d.pad_h;
          if (h < 0 || h >= d.in_h) continue;
          for (Eigen::Index j = 0; j < d.k_w; ++j) {
            const Eigen::Index w = ow * d.stride + j - d.pad_w;
            if (w < 0 || w >= d.in_w) continue;
            m.row(row).segment((i * d.k_w + j) * d.in_c, d.in_c) =
                x.segment(((b * d.in_h + h) * d.in_w + w) * d.in_c, d.in_c);
          }
        }
      }
  return m;
}

void col2im(const RowMat& cols, const ConvDims& d, Eigen::VectorXd& x_grad) {
  Eigen::Index row = 0;
  for (Eigen::Index b = 0; b < d.batch; ++b)
    for (Eigen::Index oh = 0; oh < d.out_h; ++oh)
      for (Eigen::Index ow = 0; ow < d.out_w; ++ow, ++row) {
        for (Eigen::Index i = 0; i < d.k_h; ++i) {
          const Eigen::Index h = oh * d.stride + i - d.pad_h;
          if (h < 0 || h >= d.in_h) continue;
          for (Eigen::Index j = 0; j < d.k_w; ++j) {
            const Eigen::Index w = ow * d.stride + j - d.pad_w;
            if (w < 0 || w >= d.in_w) continue;
            x_grad.segment(((b * d.in_h + h) * d.in_w + w) * d.in_c, d.in_c) +=
                cols.row(row).segment((i * d.k_w + j) * d.in_c, d.in_c);
          }
        }
      }
}

}  // namespace

namespace {

Tensor conv2dImpl(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
                  int pad_h, int pad_w) {
  const ConvDims d = conv2dDims(input, kernel, bias, stride, pad_h, pad_w);
  const RowMat cols = im2col(input->value, d);
  CMapRM k(kernel->value.data(), d.k_h * d.k_w * d.in_c, d.out_c);
  RowMat out = cols * k;
  out.rowwise() += bias->value.transpose();
  return makeNode(
      {d.batch, d.out_h, d.out_w, d.out_c}, Eigen::Map<Eigen::VectorXd>(out.data(), out.size()),
      {input, kernel, bias},
      [input, kernel, bias, d](Node& self) {
        CMapRM g(self.grad.data(), d.batch * d.out_h * d.out_w, d.out_c);
        bias->grad += g.colwise().sum().transpose();
        const RowMat cols = im2col(input->value, d);
        MapRM dk(kernel->grad.data(), d.k_h * d.k_w * d.in_c, d.out_c);
        dk.noalias() += cols.transpose() * g;
        CMapRM k(kernel->value.data(), d.k_h * d.k_w * d.in_c, d.out_c);
        const RowMat dcols = g * k.transpose();
        col2im(dcols, d, input->grad);
      },
      "conv2d");
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int pad) {
  return conv2dImpl(input, kernel, bias, stride, pad, pad);
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int pad) {
  requireRank("conv1d", input, 3);
  requireRank("conv1d", kernel, 3);
  // reuse the 2-D machinery with a height of one
  Tensor in4 = reshape(input, {input->shape[0], Eigen::Index(1), input->shape[1], input->shape[2]});
  Tensor k4 = reshape(kernel, {Eigen::Index(1), kernel->shape[0], kernel->shape[1], kernel->shape[2]});
  Tensor out4 = conv2dImpl(in4, k4, bias, stride, 0, pad);
  return reshape(out4, {out4->shape[0], out4->shape[2], out4->shape[3]});
}

Tensor spatialMean(const Tensor& input) {
  requireRank("spatial_mean", input, 4);
  const Eigen::Index b = input->shape[0], h = input->shape[1], w = input->shape[2],
                     c = input->shape[3];
  RowMat out = RowMat::Zero(b, c);
  CMapRM x(input->value.data(), b * h * w, c);
  for (Eigen::Index bi = 0; bi < b; ++bi)
    out.row(bi) = x.middleRows(bi * h * w, h * w).colwise().mean();
  return makeNode(
      {b, c}, Eigen::Map<Eigen::VectorXd>(out.data(), out.size()), {input},
      [input, b, h, w, c](Node& self) {
        CMapRM g(self.grad.data(), b, c);
        MapRM dx(input->grad.data(), b * h * w, c);
        const double inv = 1.0 / static_cast<double>(h * w);
        for (Eigen::Index bi = 0; bi < b; ++bi)
          dx.middleRows(bi * h * w, h * w).rowwise() += inv * g.row(bi);
      },
      "spatial_mean");
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  return makeNode(
      {1}, Eigen::VectorXd::Constant(1, a->value.sum()), {a},
      [a](Node& self) { a->grad.array() += self.grad(0); }, "sum");
}

Tensor mean(const Tensor& a) {
  return makeNode(
      {1}, Eigen::VectorXd::Constant(1, a->value.mean()), {a},
      [a](Node& self) { a->grad.array() += self.grad(0) / static_cast<double>(a->numel()); },
      "mean");
}

Tensor l1(const Tensor& a) {
  return makeNode(
      {1}, Eigen::VectorXd::Constant(1, a->value.cwiseAbs().sum()), {a},
      [a](Node& self) {
        a->grad.array() += self.grad(0) * a->value.array().sign();
      },
      "l1");
}

Tensor l2PerRow(const Tensor& a) {
  requireRank("l2_per_row", a, 2);
  const Eigen::Index rows = a->rows();
  Eigen::VectorXd norms(rows);
  CMapRM x = asMat(a);
  for (Eigen::Index r = 0; r < rows; ++r) norms(r) = x.row(r).norm();
  return makeNode(
      {rows}, norms, {a},
      [a](Node& self) {
        CMapRM x = asMat(a);
        MapRM da = gradMat(a);
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          const double n = std::max(self.value(r), 1e-12);
          da.row(r) += (self.grad(r) / n) * x.row(r);
        }
      },
      "l2_per_row");
}

}  // namespace anim3d::ad
