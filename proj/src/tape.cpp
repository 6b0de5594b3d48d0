#include "mirf/tape.hpp"

#include <cmath>

#include "mirf/kernels.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mirf {

namespace {
// Tapes churn through multi-MB tensors every step; keep glibc from handing
// those allocations to mmap/munmap, which costs page faults on every batch.
struct MallocTuning {
    MallocTuning() {
#if defined(__GLIBC__)
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    }
};
const MallocTuning malloc_tuning;
}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Scale: return "scale";
        case Op::Neg: return "neg";
        case Op::AddRowVec: return "add_rowvec";
        case Op::AddColVec: return "add_colvec";
        case Op::MulColVec: return "mul_colvec";
        case Op::MatMul: return "matmul";
        case Op::MatMulNT: return "matmul_nt";
        case Op::Sigmoid: return "sigmoid";
        case Op::Relu: return "relu";
        case Op::Sin: return "sin";
        case Op::Cos: return "cos";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::Abs: return "abs";
        case Op::SumAll: return "sum_all";
        case Op::MeanAll: return "mean_all";
        case Op::SumRows: return "sum_rows";
        case Op::Concat: return "concat";
        case Op::CumsumExRows: return "cumsum_ex_rows";
        case Op::SegWeightSum: return "seg_weight_sum";
        case Op::ColSlice: return "col_slice";
        case Op::Reshape: return "reshape";
        case Op::LinearRelu: return "linear_relu";
        case Op::LinearNTBias: return "linear_nt_bias";
    }
    return "?";
}

void Tape::fail(Op op, const std::string& msg) const {
    throw Error("tape node " + std::to_string(nodes_.size()) + " (" + op_name(op) + "): " + msg);
}

void Tape::check_same_shape(Op op, const Tensor& a, const Tensor& b) const {
    if (!a.same_shape(b)) fail(op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

const Tape::Node& Tape::at(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) throw Error("tape: bad node id");
    return nodes_[id];
}

NodeId Tape::leaf(Tensor v, bool needs_grad) {
    Node n{Op::Leaf};
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    return push(std::move(n));
}

namespace {
bool is_2d(const Tensor& t) { return t.rank() == 2; }
}  // namespace

#define MIRF_UNARY_BODY(OPNAME, EXPR)                                  \
    {                                                                  \
        const Node& pa = at(a);                                        \
        Node n{OPNAME, a};                                             \
        n.needs_grad = pa.needs_grad;                                  \
        n.value = Tensor::zeros(pa.value.shape());                     \
        const double* x = pa.value.data();                             \
        double* y = n.value.data();                                    \
        const int64_t m = pa.value.numel();                            \
        for (int64_t i = 0; i < m; ++i) y[i] = (EXPR);                 \
        return push(std::move(n));                                     \
    }

NodeId Tape::sigmoid(NodeId a) MIRF_UNARY_BODY(Op::Sigmoid, 1.0 / (1.0 + std::exp(-x[i])))
NodeId Tape::relu(NodeId a) MIRF_UNARY_BODY(Op::Relu, x[i] > 0.0 ? x[i] : 0.0)
NodeId Tape::sin(NodeId a) MIRF_UNARY_BODY(Op::Sin, std::sin(x[i]))
NodeId Tape::cos(NodeId a) MIRF_UNARY_BODY(Op::Cos, std::cos(x[i]))
NodeId Tape::exp(NodeId a) MIRF_UNARY_BODY(Op::Exp, std::exp(x[i]))
NodeId Tape::log(NodeId a) MIRF_UNARY_BODY(Op::Log, std::log(x[i]))
NodeId Tape::sqrt(NodeId a) MIRF_UNARY_BODY(Op::Sqrt, std::sqrt(x[i]))
NodeId Tape::abs(NodeId a) MIRF_UNARY_BODY(Op::Abs, std::fabs(x[i]))
NodeId Tape::neg(NodeId a) MIRF_UNARY_BODY(Op::Neg, -x[i])

#undef MIRF_UNARY_BODY

NodeId Tape::scale(NodeId a, double c) {
    const Node& pa = at(a);
    Node n{Op::Scale, a};
    n.c = c;
    n.needs_grad = pa.needs_grad;
    n.value = Tensor::zeros(pa.value.shape());
    const int64_t m = pa.value.numel();
    for (int64_t i = 0; i < m; ++i) n.value[i] = c * pa.value[i];
    return push(std::move(n));
}

#define MIRF_BINARY_BODY(OPNAME, EXPR)                         \
    {                                                          \
        const Node& pa = at(a);                                \
        const Node& pb = at(b);                                \
        check_same_shape(OPNAME, pa.value, pb.value);          \
        Node n{OPNAME, a, b};                                  \
        n.needs_grad = pa.needs_grad || pb.needs_grad;         \
        n.value = Tensor::zeros(pa.value.shape());             \
        const double* x = pa.value.data();                     \
        const double* y = pb.value.data();                     \
        double* z = n.value.data();                            \
        const int64_t m = pa.value.numel();                    \
        for (int64_t i = 0; i < m; ++i) z[i] = (EXPR);         \
        return push(std::move(n));                             \
    }

NodeId Tape::add(NodeId a, NodeId b) MIRF_BINARY_BODY(Op::Add, x[i] + y[i])
NodeId Tape::sub(NodeId a, NodeId b) MIRF_BINARY_BODY(Op::Sub, x[i] - y[i])
NodeId Tape::mul(NodeId a, NodeId b) MIRF_BINARY_BODY(Op::Mul, x[i] * y[i])
NodeId Tape::div(NodeId a, NodeId b) MIRF_BINARY_BODY(Op::Div, x[i] / y[i])

#undef MIRF_BINARY_BODY

NodeId Tape::add_rowvec(NodeId a, NodeId b) {
    const Node& pa = at(a);
    const Node& pb = at(b);
    if (!is_2d(pa.value)) fail(Op::AddRowVec, "lhs must be 2-d, got " + pa.value.shape_str());
    if (pb.value.numel() != pa.value.cols())
        fail(Op::AddRowVec, "row vector length " + std::to_string(pb.value.numel()) +
                                " vs cols " + std::to_string(pa.value.cols()));
    Node n{Op::AddRowVec, a, b};
    n.needs_grad = pa.needs_grad || pb.needs_grad;
    n.value = Tensor::zeros(pa.value.shape());
    const int64_t N = pa.value.rows(), M = pa.value.cols();
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < M; ++j) n.value.at(i, j) = pa.value.at(i, j) + pb.value[j];
    return push(std::move(n));
}

NodeId Tape::add_colvec(NodeId a, NodeId b) {
    const Node& pa = at(a);
    const Node& pb = at(b);
    if (!is_2d(pa.value)) fail(Op::AddColVec, "lhs must be 2-d, got " + pa.value.shape_str());
    if (pb.value.numel() != pa.value.rows())
        fail(Op::AddColVec, "col vector length " + std::to_string(pb.value.numel()) +
                                " vs rows " + std::to_string(pa.value.rows()));
    Node n{Op::AddColVec, a, b};
    n.needs_grad = pa.needs_grad || pb.needs_grad;
    n.value = Tensor::zeros(pa.value.shape());
    const int64_t N = pa.value.rows(), M = pa.value.cols();
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < M; ++j) n.value.at(i, j) = pa.value.at(i, j) + pb.value[i];
    return push(std::move(n));
}

NodeId Tape::mul_colvec(NodeId a, NodeId b) {
    const Node& pa = at(a);
    const Node& pb = at(b);
    if (!is_2d(pa.value)) fail(Op::MulColVec, "lhs must be 2-d, got " + pa.value.shape_str());
    if (pb.value.numel() != pa.value.rows())
        fail(Op::MulColVec, "col vector length " + std::to_string(pb.value.numel()) +
                                " vs rows " + std::to_string(pa.value.rows()));
    Node n{Op::MulColVec, a, b};
    n.needs_grad = pa.needs_grad || pb.needs_grad;
    n.value = Tensor::zeros(pa.value.shape());
    const int64_t N = pa.value.rows(), M = pa.value.cols();
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < M; ++j) n.value.at(i, j) = pa.value.at(i, j) * pb.value[i];
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Node& pa = at(a);
    const Node& pb = at(b);
    if (!is_2d(pa.value) || !is_2d(pb.value)) fail(Op::MatMul, "operands must be 2-d");
    if (pa.value.cols() != pb.value.rows())
        fail(Op::MatMul, "inner dims " + std::to_string(pa.value.cols()) + " vs " +
                             std::to_string(pb.value.rows()));
    Node n{Op::MatMul, a, b};
    n.needs_grad = pa.needs_grad || pb.needs_grad;
    n.value = Tensor::zeros({pa.value.rows(), pb.value.cols()});
    kernels::matmul(pa.value.data(), pb.value.data(), n.value.data(), pa.value.rows(),
                    pa.value.cols(), pb.value.cols());
    return push(std::move(n));
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    const Node& pa = at(a);
    const Node& pb = at(b);
    if (!is_2d(pa.value) || !is_2d(pb.value)) fail(Op::MatMulNT, "operands must be 2-d");
    if (pa.value.cols() != pb.value.cols())
        fail(Op::MatMulNT, "inner dims " + std::to_string(pa.value.cols()) + " vs " +
                               std::to_string(pb.value.cols()));
    Node n{Op::MatMulNT, a, b};
    n.needs_grad = pa.needs_grad || pb.needs_grad;
    n.value = Tensor::zeros({pa.value.rows(), pb.value.rows()});
    kernels::matmul_nt(pa.value.data(), pb.value.data(), n.value.data(), pa.value.rows(),
                       pa.value.cols(), pb.value.rows());
    return push(std::move(n));
}

NodeId Tape::sum_all(NodeId a) {
    const Node& pa = at(a);
    Node n{Op::SumAll, a};
    n.needs_grad = pa.needs_grad;
    double s = 0.0;
    for (int64_t i = 0; i < pa.value.numel(); ++i) s += pa.value[i];
    n.value = Tensor::scalar(s);
    return push(std::move(n));
}

NodeId Tape::mean_all(NodeId a) {
    const Node& pa = at(a);
    Node n{Op::MeanAll, a};
    n.needs_grad = pa.needs_grad;
    double s = 0.0;
    for (int64_t i = 0; i < pa.value.numel(); ++i) s += pa.value[i];
    n.value = Tensor::scalar(s / static_cast<double>(pa.value.numel()));
    return push(std::move(n));
}

NodeId Tape::sum_rows(NodeId a) {
    const Node& pa = at(a);
    if (!is_2d(pa.value)) fail(Op::SumRows, "operand must be 2-d, got " + pa.value.shape_str());
    Node n{Op::SumRows, a};
    n.needs_grad = pa.needs_grad;
    const int64_t N = pa.value.rows(), M = pa.value.cols();
    n.value = Tensor::zeros({N, 1});
    for (int64_t i = 0; i < N; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < M; ++j) s += pa.value.at(i, j);
        n.value[i] = s;
    }
    return push(std::move(n));
}

NodeId Tape::concat(NodeId a, NodeId b) {
    const Node& pa = at(a);
    const Node& pb = at(b);
    if (!is_2d(pa.value) || !is_2d(pb.value)) fail(Op::Concat, "operands must be 2-d");
    if (pa.value.rows() != pb.value.rows())
        fail(Op::Concat, "row counts " + std::to_string(pa.value.rows()) + " vs " +
                             std::to_string(pb.value.rows()));
    Node n{Op::Concat, a, b};
    n.needs_grad = pa.needs_grad || pb.needs_grad;
    const int64_t N = pa.value.rows(), M1 = pa.value.cols(), M2 = pb.value.cols();
    n.value = Tensor::zeros({N, M1 + M2});
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t j = 0; j < M1; ++j) n.value.at(i, j) = pa.value.at(i, j);
        for (int64_t j = 0; j < M2; ++j) n.value.at(i, M1 + j) = pb.value.at(i, j);
    }
    return push(std::move(n));
}

NodeId Tape::cumsum_ex_rows(NodeId a) {
    const Node& pa = at(a);
    if (!is_2d(pa.value)) fail(Op::CumsumExRows, "operand must be 2-d");
    Node n{Op::CumsumExRows, a};
    n.needs_grad = pa.needs_grad;
    const int64_t N = pa.value.rows(), M = pa.value.cols();
    n.value = Tensor::zeros({N, M});
    for (int64_t i = 0; i < N; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < M; ++j) {
            n.value.at(i, j) = s;
            s += pa.value.at(i, j);
        }
    }
    return push(std::move(n));
}

NodeId Tape::seg_weight_sum(NodeId w, NodeId x) {
    const Node& pw = at(w);
    const Node& px = at(x);
    if (!is_2d(pw.value) || !is_2d(px.value)) fail(Op::SegWeightSum, "operands must be 2-d");
    const int64_t R = pw.value.rows(), K = pw.value.cols();
    if (px.value.rows() != R * K)
        fail(Op::SegWeightSum, "x rows " + std::to_string(px.value.rows()) + " vs R*K " +
                                   std::to_string(R * K));
    const int64_t C = px.value.cols();
    Node n{Op::SegWeightSum, w, x};
    n.k = K;
    n.needs_grad = pw.needs_grad || px.needs_grad;
    n.value = Tensor::zeros({R, C});
    for (int64_t r = 0; r < R; ++r)
        for (int64_t k = 0; k < K; ++k) {
            const double wv = pw.value.at(r, k);
            for (int64_t c = 0; c < C; ++c) n.value.at(r, c) += wv * px.value.at(r * K + k, c);
        }
    return push(std::move(n));
}

NodeId Tape::col_slice(NodeId a, int64_t col) {
    const Node& pa = at(a);
    if (!is_2d(pa.value)) fail(Op::ColSlice, "operand must be 2-d");
    if (col < 0 || col >= pa.value.cols()) fail(Op::ColSlice, "column out of range");
    Node n{Op::ColSlice, a};
    n.k = col;
    n.needs_grad = pa.needs_grad;
    const int64_t N = pa.value.rows();
    n.value = Tensor::zeros({N, 1});
    for (int64_t i = 0; i < N; ++i) n.value[i] = pa.value.at(i, col);
    return push(std::move(n));
}

NodeId Tape::linear_relu(NodeId x, NodeId w, NodeId bias) {
    const Node& px = at(x);
    const Node& pw = at(w);
    const Node& pb = at(bias);
    if (!is_2d(px.value) || !is_2d(pw.value)) fail(Op::LinearRelu, "x and W must be 2-d");
    if (px.value.cols() != pw.value.rows())
        fail(Op::LinearRelu, "inner dims " + std::to_string(px.value.cols()) + " vs " +
                                 std::to_string(pw.value.rows()));
    if (pb.value.numel() != pw.value.cols()) fail(Op::LinearRelu, "bias length vs W cols");
    Node n{Op::LinearRelu, x, w, bias};
    n.needs_grad = px.needs_grad || pw.needs_grad || pb.needs_grad;
    const int64_t N = px.value.rows(), M = pw.value.cols();
    n.value = Tensor::zeros({N, M});
    kernels::matmul(px.value.data(), pw.value.data(), n.value.data(), N, px.value.cols(), M);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < M; ++j) {
            double v = n.value.at(i, j) + pb.value[j];
            n.value.at(i, j) = v > 0.0 ? v : 0.0;
        }
    return push(std::move(n));
}

NodeId Tape::linear_nt_bias(NodeId x, NodeId w, NodeId bias) {
    const Node& px = at(x);
    const Node& pw = at(w);
    const Node& pb = at(bias);
    if (!is_2d(px.value) || !is_2d(pw.value)) fail(Op::LinearNTBias, "x and W must be 2-d");
    if (px.value.cols() != pw.value.cols())
        fail(Op::LinearNTBias, "inner dims " + std::to_string(px.value.cols()) + " vs " +
                                   std::to_string(pw.value.cols()));
    if (pb.value.numel() != pw.value.rows()) fail(Op::LinearNTBias, "bias length vs W rows");
    Node n{Op::LinearNTBias, x, w, bias};
    n.needs_grad = px.needs_grad || pw.needs_grad || pb.needs_grad;
    const int64_t N = px.value.rows(), R = pw.value.rows();
    n.value = Tensor::zeros({N, R});
    kernels::matmul_nt(px.value.data(), pw.value.data(), n.value.data(), N, px.value.cols(), R);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < R; ++j) n.value.at(i, j) += pb.value[j];
    return push(std::move(n));
}

NodeId Tape::reshape(NodeId a, std::vector<int64_t> shape) {
    const Node& pa = at(a);
    Node n{Op::Reshape, a};
    n.needs_grad = pa.needs_grad;
    n.value = Tensor(std::move(shape), pa.value.vec());
    if (n.value.numel() != pa.value.numel()) fail(Op::Reshape, "numel mismatch");
    return push(std::move(n));
}

const Tensor& Tape::grad(NodeId id) const {
    const Node& n = at(id);
    if (n.grad.numel() == 0) throw Error("tape: no gradient on node (run backward first)");
    return n.grad;
}

double Tape::scalar(NodeId id) const {
    const Node& n = at(id);
    if (n.value.numel() != 1) throw Error("tape: node value is not scalar");
    return n.value[0];
}

void Tape::backward(NodeId output) {
    Node& out = nodes_.at(output);
    if (out.value.numel() != 1)
        throw Error("tape: backward seed must be scalar, node has shape " + out.value.shape_str());

    for (Node& n : nodes_)
        if (n.needs_grad) n.grad = Tensor::zeros(n.value.shape());
    if (!out.needs_grad) return;
    out.grad[0] = 1.0;

    for (NodeId id = output; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.op == Op::Leaf) continue;
        const Tensor& gy = n.grad;
        Node& pa = nodes_[n.a];
        Node* pb = n.b >= 0 ? &nodes_[n.b] : nullptr;
        const bool need_a = pa.needs_grad;
        const bool need_b = pb && pb->needs_grad;
        const bool need_c3 = n.c3 >= 0 && nodes_[n.c3].needs_grad;
        if (!need_a && !need_b && !need_c3) continue;

        if (n.op == Op::Add) {
            if (need_a)
                for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] += gy[i];
            if (need_b)
                for (int64_t i = 0; i < gy.numel(); ++i) pb->grad[i] += gy[i];
        } else if (n.op == Op::Sub) {
            if (need_a)
                for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] += gy[i];
            if (need_b)
                for (int64_t i = 0; i < gy.numel(); ++i) pb->grad[i] -= gy[i];
        } else if (n.op == Op::Mul) {
            if (need_a)
                for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] += gy[i] * pb->value[i];
            if (need_b)
                for (int64_t i = 0; i < gy.numel(); ++i) pb->grad[i] += gy[i] * pa.value[i];
        } else if (n.op == Op::Div) {
            if (need_a)
                for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] += gy[i] / pb->value[i];
            if (need_b)
                for (int64_t i = 0; i < gy.numel(); ++i)
                    pb->grad[i] -= gy[i] * pa.value[i] / (pb->value[i] * pb->value[i]);
        } else if (n.op == Op::Scale) {
            for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] += n.c * gy[i];
        } else if (n.op == Op::Neg) {
            for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] -= gy[i];
        } else if (n.op == Op::AddRowVec) {
            const int64_t N = n.value.rows(), M = n.value.cols();
            if (need_a)
                for (int64_t i = 0; i < N * M; ++i) pa.grad[i] += gy[i];
            if (need_b)
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < M; ++j) pb->grad[j] += gy.at(i, j);
        } else if (n.op == Op::AddColVec) {
            const int64_t N = n.value.rows(), M = n.value.cols();
            if (need_a)
                for (int64_t i = 0; i < N * M; ++i) pa.grad[i] += gy[i];
            if (need_b)
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < M; ++j) pb->grad[i] += gy.at(i, j);
        } else if (n.op == Op::MulColVec) {
            const int64_t N = n.value.rows(), M = n.value.cols();
            if (need_a)
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < M; ++j) pa.grad.at(i, j) += gy.at(i, j) * pb->value[i];
            if (need_b)
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < M; ++j) pb->grad[i] += gy.at(i, j) * pa.value.at(i, j);
        } else if (n.op == Op::MatMul) {
            // gA += gY*B^T ; gB += A^T*gY
            if (need_a) {
                Tensor tmp = Tensor::zeros(pa.value.shape());
                kernels::matmul_nt(gy.data(), pb->value.data(), tmp.data(), gy.rows(), gy.cols(),
                                   pb->value.rows());
                for (int64_t i = 0; i < tmp.numel(); ++i) pa.grad[i] += tmp[i];
            }
            if (need_b)
                kernels::matmul_tn_acc(pa.value.data(), gy.data(), pb->grad.data(),
                                       pa.value.rows(), pa.value.cols(), gy.cols());
        } else if (n.op == Op::MatMulNT) {
            // y = a*b^T : gA += gY*B ; gB += gY^T*A
            if (need_a) {
                Tensor tmp = Tensor::zeros(pa.value.shape());
                kernels::matmul(gy.data(), pb->value.data(), tmp.data(), gy.rows(), gy.cols(),
                                pb->value.cols());
                for (int64_t i = 0; i < tmp.numel(); ++i) pa.grad[i] += tmp[i];
            }
            if (need_b)
                kernels::matmul_tn_acc(gy.data(), pa.value.data(), pb->grad.data(), gy.rows(),
                                       gy.cols(), pa.value.cols());
        } else if (n.op == Op::Sigmoid) {
            for (int64_t i = 0; i < gy.numel(); ++i) {
                const double s = n.value[i];
                pa.grad[i] += gy[i] * s * (1.0 - s);
            }
        } else if (n.op == Op::Relu) {
            // subgradient at 0 is 0
            for (int64_t i = 0; i < gy.numel(); ++i)
                if (pa.value[i] > 0.0) pa.grad[i] += gy[i];
        } else if (n.op == Op::Sin) {
            for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] += gy[i] * std::cos(pa.value[i]);
        } else if (n.op == Op::Cos) {
            for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] -= gy[i] * std::sin(pa.value[i]);
        } else if (n.op == Op::Exp) {
            for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] += gy[i] * n.value[i];
        } else if (n.op == Op::Log) {
            for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] += gy[i] / pa.value[i];
        } else if (n.op == Op::Sqrt) {
            for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] += gy[i] * 0.5 / n.value[i];
        } else if (n.op == Op::Abs) {
            for (int64_t i = 0; i < gy.numel(); ++i) {
                const double x = pa.value[i];
                if (x > 0.0)
                    pa.grad[i] += gy[i];
                else if (x < 0.0)
                    pa.grad[i] -= gy[i];
            }
        } else if (n.op == Op::SumAll) {
            for (int64_t i = 0; i < pa.grad.numel(); ++i) pa.grad[i] += gy[0];
        } else if (n.op == Op::MeanAll) {
            const double g = gy[0] / static_cast<double>(pa.value.numel());
            for (int64_t i = 0; i < pa.grad.numel(); ++i) pa.grad[i] += g;
        } else if (n.op == Op::SumRows) {
            const int64_t N = pa.value.rows(), M = pa.value.cols();
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < M; ++j) pa.grad.at(i, j) += gy[i];
        } else if (n.op == Op::Concat) {
            const int64_t N = pa.value.rows(), M1 = pa.value.cols(), M2 = pb->value.cols();
            if (need_a)
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < M1; ++j) pa.grad.at(i, j) += gy.at(i, j);
            if (need_b)
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < M2; ++j) pb->grad.at(i, j) += gy.at(i, M1 + j);
        } else if (n.op == Op::CumsumExRows) {
            const int64_t N = pa.value.rows(), M = pa.value.cols();
            for (int64_t i = 0; i < N; ++i) {
                double s = 0.0;
                for (int64_t j = M - 1; j >= 0; --j) {
                    pa.grad.at(i, j) += s;
                    s += gy.at(i, j);
                }
            }
        } else if (n.op == Op::SegWeightSum) {
            const int64_t R = pa.value.rows(), K = pa.value.cols(), C = pb->value.cols();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t k = 0; k < K; ++k) {
                    const int64_t row = r * K + k;
                    if (need_a) {
                        double s = 0.0;
                        for (int64_t c = 0; c < C; ++c) s += gy.at(r, c) * pb->value.at(row, c);
                        pa.grad.at(r, k) += s;
                    }
                    if (need_b) {
                        const double wv = pa.value.at(r, k);
                        for (int64_t c = 0; c < C; ++c) pb->grad.at(row, c) += wv * gy.at(r, c);
                    }
                }
        } else if (n.op == Op::ColSlice) {
            const int64_t N = pa.value.rows();
            for (int64_t i = 0; i < N; ++i) pa.grad.at(i, n.k) += gy[i];
        } else if (n.op == Op::Reshape) {
            for (int64_t i = 0; i < gy.numel(); ++i) pa.grad[i] += gy[i];
        } else if (n.op == Op::LinearRelu) {
            Node& pbias = nodes_[n.c3];
            const int64_t N = n.value.rows(), M = n.value.cols(), K = pa.value.cols();
            Tensor gm = Tensor::zeros({N, M});
            for (int64_t i = 0; i < N * M; ++i) gm[i] = n.value[i] > 0.0 ? gy[i] : 0.0;
            if (need_a) kernels::matmul_nt_acc(gm.data(), pb->value.data(), pa.grad.data(), N, M, K);
            if (need_b) kernels::matmul_tn_acc(pa.value.data(), gm.data(), pb->grad.data(), N, K, M);
            if (pbias.needs_grad)
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < M; ++j) pbias.grad[j] += gm.at(i, j);
        } else if (n.op == Op::LinearNTBias) {
            Node& pbias = nodes_[n.c3];
            const int64_t N = n.value.rows(), R = n.value.cols(), M = pa.value.cols();
            if (need_a) kernels::matmul_acc(gy.data(), pb->value.data(), pa.grad.data(), N, R, M);
            if (need_b) kernels::matmul_tn_acc(gy.data(), pa.value.data(), pb->grad.data(), N, R, M);
            if (pbias.needs_grad)
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < R; ++j) pbias.grad[j] += gy.at(i, j);
        }
    }
}

}  // namespace mirf
