#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "decoyforge/tensor.hpp"

namespace decoyforge::ad {

class Node;
struct NodeData;

/// Given the node and the cotangent flowing into it, produce cotangents for
/// each parent (empty Node for parents that do not need one). Cotangents are
/// built out of ops, so gradients are themselves differentiable.
using VjpFn = std::function<std::vector<Node>(const NodeData& self, const Node& cot)>;

struct NodeData {
  Tensor val;
  bool requires_grad = false;
  std::int64_t id = 0;
  std::vector<Node> parents;
  VjpFn vjp;
};

class Node {
 public:
  Node() = default;
  explicit Node(std::shared_ptr<NodeData> d) : d_(std::move(d)) {}

  bool defined() const { return static_cast<bool>(d_); }
  const Tensor& val() const { return d_->val; }
  bool requires_grad() const { return d_ && d_->requires_grad; }
  NodeData* get() const { return d_.get(); }

 private:
  std::shared_ptr<NodeData> d_;
};

Node constant(Tensor t);
Node variable(Tensor t);

// Elementwise (same shape unless noted).
Node add(const Node& a, const Node& b);
Node sub(const Node& a, const Node& b);
Node mul(const Node& a, const Node& b);
Node div(const Node& a, const Node& b);
Node neg(const Node& a);
Node scale(const Node& a, double c);
Node add_scalar(const Node& a, double c);
Node leaky_relu(const Node& a, double slope);
inline Node relu(const Node& a) { return leaky_relu(a, 0.0); }
Node tanh_act(const Node& a);
Node sqrt_elem(const Node& a);

// Linear algebra. Shapes: nn (M,K)x(K,N); nt (M,K)x(N,K); tn (M,K)x(M,N).
Node matmul(const Node& a, const Node& b);
Node matmul_nt(const Node& a, const Node& b);
Node matmul_tn(const Node& a, const Node& b);

// Convolution triad on (B,C,H,W) tensors with (OC,IC,KH,KW) weights.
Node conv2d(const Node& x, const Node& w, int stride, int pad);
Node conv2d_igrad(const Node& gy, const Node& w, int stride, int pad, int h, int w_in);
Node conv2d_wgrad(const Node& x, const Node& gy, int stride, int pad, int kh, int kw);

// Shape and layout.
Node reshape(const Node& a, std::vector<int> shape);
Node upsample_nn2x(const Node& a);
Node downsample_sum2x(const Node& a);
Node concat_channels(const Node& a, const Node& b);
Node slice_channels(const Node& a, int c0, int c1);
Node pad_channels(const Node& a, int c0, int c_total);

// Reductions and broadcasts.
Node sum_all(const Node& a);                                   // -> {1}
Node mean_all(const Node& a);                                  // -> {1}
Node broadcast_scalar(const Node& s, std::vector<int> shape);  // {1} -> shape
Node sum_per_sample(const Node& a);                            // (B,...) -> {B}
Node broadcast_per_sample(const Node& s, std::vector<int> shape);
Node sum_rows(const Node& a);                 // (B,N) -> {N}
Node broadcast_rows(const Node& v, int rows); // {N} -> (rows,N)
Node sum_channel(const Node& a);              // (B,C,H,W) -> {C}
Node broadcast_channel(const Node& c, int b, int h, int w);

// Bias helpers.
Node add_bias_rowwise(const Node& x, const Node& b);  // (B,N) + {N}
Node add_bias_channel(const Node& x, const Node& b);  // (B,C,H,W) + {C}

/// Reverse-mode gradient of `root` with respect to each node in `wrt`.
/// The result nodes stay attached to the graph, so they can be differentiated
/// again. `cot` defaults to ones of root's shape.
std::vector<Node> grad(const Node& root, const std::vector<Node>& wrt, Node cot = Node());

} // namespace decoyforge::ad
