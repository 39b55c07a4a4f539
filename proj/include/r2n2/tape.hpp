#pragma once

#include <functional>
#include <vector>

#include "r2n2/tensor.hpp"

namespace r2n2::ad {

using NodeId = int;

// Define-by-run reverse-mode tape. Values are computed eagerly as nodes are
// recorded; backward() replays the tape in reverse and accumulates gradients
// into every node that transitively depends on a grad-requiring leaf.
//
// Domain modules add their own operations through custom(); the ops defined
// here are the generic building blocks (convolutions, activations,
// reductions, slicing) shared by the network and the objectives.
class Tape {
public:
    NodeId leaf(Tensor value, bool requires_grad);
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& val(NodeId id) const { return nodes_[(std::size_t)id].value; }
    double scalar_val(NodeId id) const { return nodes_[(std::size_t)id].value[0]; }
    bool needs_grad(NodeId id) const { return nodes_[(std::size_t)id].needs_grad; }

    // Gradient buffer, zero-allocated on first touch. Valid after backward()
    // for any node on a grad path; untouched nodes report an empty tensor.
    Tensor& grad_buf(NodeId id);
    const Tensor& grad(NodeId id) const { return nodes_[(std::size_t)id].grad; }

    // root must be a single-element node.
    void backward(NodeId root);

    // Generic node: `value` was computed by the caller from `parents`;
    // `back` reads grad(self) and accumulates into the parents' grad bufs.
    NodeId custom(Tensor value, std::vector<NodeId> parents,
                  std::function<void(Tape&, NodeId)> back);

    std::size_t node_count() const { return nodes_.size(); }

    // --- generic ops -------------------------------------------------------
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId affine(NodeId a, double k, double c);  // k*x + c, elementwise
    NodeId scale(NodeId a, double k) { return affine(a, k, 0.0); }
    NodeId mul_mask(NodeId a, Tensor mask);       // elementwise by a constant
    NodeId tanh(NodeId a);
    NodeId logistic(NodeId a);
    NodeId conv2d(NodeId x, NodeId w, NodeId bias, int stride, int pad);  // bias<0: none
    NodeId fc(NodeId x, NodeId w, NodeId bias);   // x:[n], w:[m,n], bias:[m]
    NodeId spatial_softmax(NodeId x);             // [C,H,W], softmax over H*W per channel
    NodeId spatial_sum(NodeId x);                 // [C,H,W] -> [C]
    NodeId sum(NodeId x);                         // -> [1]
    NodeId mean(NodeId x);                        // -> [1]
    NodeId channel_slice(NodeId x, int c0, int c1);
    NodeId channel_concat(const std::vector<NodeId>& xs);
    NodeId pick(NodeId x, int index);             // -> [1]
    NodeId stack(const std::vector<NodeId>& scalars);  // n x [1] -> [n]
    NodeId divide(NodeId a, NodeId b);            // [1]/[1]
    NodeId l1_distance(NodeId a, NodeId b);       // sum |a-b| -> [1]

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::vector<NodeId> parents;
        std::function<void(Tape&, NodeId)> back;
    };

    bool any_needs_grad(const std::vector<NodeId>& ids) const;

    std::vector<Node> nodes_;
};

}  // namespace r2n2::ad
