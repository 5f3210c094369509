#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cmtf/tensor/tensor.hpp"

namespace cmtf::tensor {

using NodeId = std::size_t;

enum class OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    AddRow,  // [r x c] + [c] broadcast over rows
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Softmax,
    LayerNorm,
    ConcatCols,
    ConcatRows,
    Slice,
    Sum,
    Mean,
    BceWithLogits,
    Mse,
};

const char* op_name(OpKind kind) noexcept;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
struct Var {
    Graph* graph = nullptr;
    NodeId id = 0;

    const Tensor& value() const;
    const Tensor& grad() const;
};

/// Tape of op records for reverse-mode differentiation.
///
/// Nodes are appended in construction order, which is a topological order
/// because an op can only reference nodes that already exist. A graph is
/// single-writer; build and backward must happen on the same thread.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every node that requires a
    /// gradient. Throws ContractError unless `loss` holds exactly one element.
    void backward(Var loss);

    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    const Tensor& grad(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
    OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        OpKind kind = OpKind::Leaf;
        std::vector<NodeId> inputs;
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        // Op-specific saved state: slice offsets, scale factor, layer-norm
        // normalised activations and inverse deviations.
        std::size_t offset_row = 0;
        std::size_t offset_col = 0;
        double scalar = 0.0;
        Tensor saved;
        std::vector<double> saved_inv;
    };

    Var push(Node node);
    Node& node(Var v);
    void accumulate(NodeId id, const Tensor& g);
    void backprop_node(Node& n);

    std::vector<Node> nodes_;

    friend Var matmul(Var, Var);
    friend Var transpose(Var);
    friend Var add(Var, Var);
    friend Var add_row(Var, Var);
    friend Var mul(Var, Var);
    friend Var scale(Var, double);
    friend Var relu(Var);
    friend Var sigmoid(Var);
    friend Var softmax_rows(Var);
    friend Var layer_norm(Var, Var, Var, double);
    friend Var concat_cols(std::span<const Var>);
    friend Var concat_rows(std::span<const Var>);
    friend Var slice(Var, std::size_t, std::size_t, std::size_t, std::size_t);
    friend Var sum(Var);
    friend Var mean(Var);
    friend Var bce_with_logits(Var, Var);
    friend Var mse(Var, Var);
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var add_row(Var m, Var bias);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Rectangular block [row0, row0+nrows) x [col0, col0+ncols).
Var slice(Var a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols);
Var sum(Var a);
Var mean(Var a);
/// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets, in the
/// log-sum-exp form max(z,0) - z*y + log(1 + exp(-|z|)).
Var bce_with_logits(Var logits, Var targets);
Var mse(Var pred, Var target);

}  // namespace cmtf::tensor
