#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace anim3d::ad {

struct Node;

/// Handle to one value in the computation graph. Ops build new nodes that
/// reference their inputs, forming a DAG rooted at the loss.
using Tensor = std::shared_ptr<Node>;

struct Node {
  std::vector<Eigen::Index> shape;
  Eigen::VectorXd value;  // flat, row-major element order
  bool requires_grad = false;

  std::vector<Tensor> inputs;
  std::function<void(Node&)> vjp;  // reads this->grad, accumulates into inputs' grad
  Eigen::VectorXd grad;            // populated by backward()

  Eigen::Index numel() const { return value.size(); }
  Eigen::Index rows() const { return shape.at(0); }
  Eigen::Index cols() const { return shape.at(1); }
};

std::string shapeStr(const std::vector<Eigen::Index>& shape);

/// Learnable leaf; participates in backward().
Tensor param(std::vector<Eigen::Index> shape, Eigen::VectorXd value);
/// Non-learnable leaf.
Tensor constant(std::vector<Eigen::Index> shape, Eigen::VectorXd value);
Tensor constant(const Eigen::MatrixXd& m);
Tensor constantVector(const Eigen::VectorXd& v);

Eigen::MatrixXd toMatrix(const Tensor& t);
Eigen::MatrixXd gradMatrix(const Tensor& t);

/// Registers a hand-written op on the tape: `value` is its already-computed
/// output, `vjp` reads node.grad and accumulates into the inputs' grad. Used
/// by modules that carry analytic Jacobians instead of composing primitives.
Tensor customOp(std::vector<Eigen::Index> shape, Eigen::VectorXd value,
                std::vector<Tensor> inputs, std::function<void(Node&)> vjp,
                const std::string& name);

/// Reverse-mode sweep from a scalar loss; every node reachable from `loss`
/// gets its grad zeroed first, then gradients accumulate along the tape.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor leakyRelu(const Tensor& a, double slope = 0.2);
Tensor gelu(const Tensor& a);  // exact x * Phi(x), smooth everywhere
Tensor tanhOp(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);          // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                        // 2-D
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x w + rows of b
Tensor broadcastRows(const Tensor& v, Eigen::Index rows); // [n] -> [rows,n]

// ---- shape ----
Tensor reshape(const Tensor& a, std::vector<Eigen::Index> shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);             // 2-D
Tensor slice(const Tensor& a, int axis, Eigen::Index start, Eigen::Index len);  // 2-D

// ---- normalization / lookup ----
Tensor softmax(const Tensor& a, int axis);       // 2-D, per row (axis 1) or column (axis 0)
Tensor layerNorm(const Tensor& a, double eps = 1e-12);  // 2-D, per-row standardization
Tensor embeddingLookup(const Tensor& table, Eigen::Index id);  // [S,d] -> [d]

// ---- convolution (batch-last-channel layout) ----
/// input [B,H,W,C], kernel [kh,kw,Cin,Cout], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int pad);
/// input [B,L,C], kernel [k,Cin,Cout], bias [Cout].
Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int pad);
Tensor spatialMean(const Tensor& input);  // [B,H,W,C] -> [B,C]

// ---- reductions ----
Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]
Tensor l1(const Tensor& a);    // sum of |a_i| -> [1]
Tensor l2PerRow(const Tensor& a);  // 2-D -> [rows] of Euclidean row norms

}  // namespace anim3d::ad
