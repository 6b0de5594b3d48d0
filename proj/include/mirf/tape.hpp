#pragma once

#include <map>
#include <string>
#include <vector>

#include "mirf/tensor.hpp"

namespace mirf {

// Reverse-mode autodiff over a define-by-run tape. Nodes are appended in
// execution order, so operands always precede consumers; backward walks the
// records once in reverse. Tapes are single-owner and rebuilt per batch.

enum class Op : uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale,        // value * c
    Neg,
    AddRowVec,    // [N,M] + [M] broadcast over rows
    AddColVec,    // [N,M] + [N] broadcast over cols
    MulColVec,    // [N,M] row i scaled by v[i]
    MatMul,       // [N,K]*[K,M]
    MatMulNT,     // [N,M]*[R,M]^T
    Sigmoid,
    Relu,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    SumAll,       // -> [1]
    MeanAll,      // -> [1]
    SumRows,      // [N,M] -> [N,1]
    Concat,       // [N,M1] ++ [N,M2] along axis 1
    CumsumExRows, // out[r,k] = sum_{j<k} in[r,j]
    SegWeightSum, // (w[R,K], x[R*K,C]) -> out[r,c] = sum_k w[r,k]*x[r*K+k,c]
    ColSlice,     // [N,M] -> [N,1], column k
    Reshape,
    LinearRelu,   // relu(x[N,K]*W[K,M] + b[M]), fused
    LinearNTBias, // x[N,M]*W[R,M]^T + b[R], fused
};

const char* op_name(Op op);

using NodeId = int32_t;

class Tape {
public:
    struct Node {
        Op op;
        NodeId a = -1, b = -1, c3 = -1;  // c3: bias operand of the fused ops
        double c = 0.0;   // Scale factor
        int64_t k = 0;    // ColSlice column / SegWeightSum K
        Tensor value;
        Tensor grad;      // allocated lazily in backward
        bool needs_grad = false;
    };

    NodeId leaf(Tensor v, bool needs_grad = false);
    NodeId constant(Tensor v) { return leaf(std::move(v), false); }

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId div(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId neg(NodeId a);
    NodeId add_rowvec(NodeId a, NodeId b);
    NodeId add_colvec(NodeId a, NodeId b);
    NodeId mul_colvec(NodeId a, NodeId b);
    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);
    NodeId sigmoid(NodeId a);
    NodeId relu(NodeId a);
    NodeId sin(NodeId a);
    NodeId cos(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId sqrt(NodeId a);
    NodeId abs(NodeId a);
    NodeId sum_all(NodeId a);
    NodeId mean_all(NodeId a);
    NodeId sum_rows(NodeId a);
    NodeId concat(NodeId a, NodeId b);
    NodeId cumsum_ex_rows(NodeId a);
    NodeId seg_weight_sum(NodeId w, NodeId x);
    NodeId col_slice(NodeId a, int64_t col);
    NodeId reshape(NodeId a, std::vector<int64_t> shape);
    NodeId linear_relu(NodeId x, NodeId w, NodeId bias);
    NodeId linear_nt_bias(NodeId x, NodeId w, NodeId bias);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Tensor& grad(NodeId id) const;
    double scalar(NodeId id) const;

    // Backward pass from a scalar output; visits each node exactly once in
    // reverse order. Throws if the selected output is not scalar.
    void backward(NodeId output);

    size_t size() const { return nodes_.size(); }
    void reserve(size_t n) { nodes_.reserve(n); }

private:
    NodeId push(Node n);
    const Node& at(NodeId id) const;
    [[noreturn]] void fail(Op op, const std::string& msg) const;
    void check_same_shape(Op op, const Tensor& a, const Tensor& b) const;

    std::vector<Node> nodes_;
};

// Gradients of a scalar output w.r.t. named parameter leaves.
using GradientMap = std::map<std::string, Tensor>;

}  // namespace mirf
