#ifndef IAT_GRAPH_HPP_
#define IAT_GRAPH_HPP_

#include <functional>
#include <optional>
#include <vector>

#include "iat/common.hpp"
#include "iat/tensor.hpp"

namespace iat {

// Reverse-mode autodiff over a single-use tape. Nodes are created in
// forward (topological) order; backward walks them in reverse. Graphs are
// built per training pair and discarded after the gradients are read out.
class Graph {
  public:
    using Var = int;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var scalar_const(double v) { return constant(Tensor::scalar(v)); }

    const Tensor& val(Var v) const { return nodes_[static_cast<size_t>(v)].value; }
    bool has_grad(Var v) const { return nodes_[static_cast<size_t>(v)].grad.defined(); }
    const Tensor& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v)].requires_grad; }

    // Seeds d(loss)/d(loss)=1 and propagates to every reachable node that
    // requires grad. `loss` must be scalar.
    void backward(Var loss);

    // --- used by op implementations ---
    Var add_node(Tensor value, bool requires_grad, std::function<void(Graph&)> backfn);
    Tensor& grad_buffer(Var v);  // lazily allocates a zero grad
    size_t num_nodes() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Graph&)> backfn;
    };
    std::vector<Node> nodes_;
};

using Var = Graph::Var;

// ---- elementwise / reduction ops ----
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var add_const(Graph& g, Var a, const Tensor& c);
Var exp(Graph& g, Var a);
Var relu(Graph& g, Var a);
Var sum(Graph& g, Var a);
Var mean(Graph& g, Var a);
Var sum_sq(Graph& g, Var a);
Var dot(Graph& g, Var a, Var b);
Var reshape(Graph& g, Var a, std::vector<int> shape);
Var pick(Graph& g, Var v, int index);                    // [n] -> scalar
Var concat_scalars(Graph& g, const std::vector<Var>& xs);  // n scalars -> [n]
Var logsumexp(Graph& g, Var v);                          // [n] -> scalar
Var log_softmax(Graph& g, Var v);                        // [n] -> [n]
Var l2_normalize(Graph& g, Var v, double eps = 1e-12);   // [d] -> [d]
Var matvec(Graph& g, const Tensor& m, Var v);            // const [n,d] x [d] -> [n]

// -(probs . log_softmax(logits)); probs is a constant distribution
Var cross_entropy_with_probs(Graph& g, Var logits, const Tensor& probs);

// ---- network ops ----
// x [Ci,H,W], w [Co,Ci,kh,kw], optional bias [Co]; zero padding.
Var conv2d(Graph& g, Var x, Var w, std::optional<Var> bias, int stride, int pad);
// x [din] vector, w [dout,din], optional bias [dout]
Var linear(Graph& g, Var x, Var w, std::optional<Var> bias);
Var global_avg_pool(Graph& g, Var x);  // [C,H,W] -> [C]
Var global_max_pool(Graph& g, Var x);  // [C,H,W] -> [C]

// Adaptive max pooling of an integer-clipped box region into FxF bins.
// `box` is in feature-cell coordinates. Gradient flows to x only.
Var roi_max_pool(Graph& g, Var x, const Box& box, int out_size);

// Bilinear ROI pooling on a box given as (cx, cy, log w, log h) normalized
// to [0,1] over the feature map extent. One sample per bin at the bin
// center. Differentiable in both the feature map and the box parameters.
Var roi_align(Graph& g, Var x, Var box_param, int out_size);

}  // namespace iat

#endif  // IAT_GRAPH_HPP_
