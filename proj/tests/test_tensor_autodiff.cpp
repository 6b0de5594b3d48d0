#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "mirf/rng.hpp"
#include "mirf/tape.hpp"

using namespace mirf;

namespace {

Tensor rand_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// builds scalar = sum(op(inputs) * weight) and checks every input gradient
// against central finite differences
struct FdCheck {
    std::vector<Tensor> inputs;
    std::function<NodeId(Tape&, const std::vector<NodeId>&)> build;
    double h = 1e-5;
    double tol = 1e-4;
    Tensor weight;

    double eval(const std::vector<Tensor>& ins, Tape* keep = nullptr, NodeId* loss_out = nullptr) {
        Tape local;
        Tape& tape = keep ? *keep : local;
        std::vector<NodeId> ids;
        for (const Tensor& t : ins) ids.push_back(tape.leaf(t, true));
        NodeId out = build(tape, ids);
        if (weight.numel() == 0) {
            Rng wrng(99);
            weight = rand_tensor(tape.value(out).shape(), wrng);
        }
        NodeId loss = tape.sum_all(tape.mul(out, tape.constant(weight)));
        if (loss_out) *loss_out = loss;
        return tape.scalar(loss);
    }

    void run() {
        Tape tape;
        NodeId loss = -1;
        eval(inputs, &tape, &loss);
        tape.backward(loss);

        for (size_t which = 0; which < inputs.size(); ++which) {
            const Tensor& analytic = tape.grad(static_cast<NodeId>(which));
            for (int64_t i = 0; i < inputs[which].numel(); ++i) {
                std::vector<Tensor> plus = inputs, minus = inputs;
                plus[which][i] += h;
                minus[which][i] -= h;
                const double fd = (eval(plus) - eval(minus)) / (2 * h);
                const double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-4});
                CHECK(std::fabs(analytic[i] - fd) / denom < tol);
            }
        }
    }
};

}  // namespace

TEST_CASE("forward examples") {
    Tape tape;
    // identity tape on x -> x
    Tensor x({2, 2}, {1, 2, 3, 4});
    NodeId id = tape.leaf(x);
    CHECK(tape.value(id).vec() == x.vec());

    // sigmoid at 0 -> 0.5
    NodeId s = tape.sigmoid(tape.leaf(Tensor::scalar(0.0)));
    CHECK(tape.value(s)[0] == doctest::Approx(0.5));

    // [[1,2],[3,4]] * [[1],[1]] -> [[3],[7]]
    NodeId m = tape.matmul(tape.leaf(Tensor({2, 2}, {1, 2, 3, 4})), tape.leaf(Tensor({2, 1}, {1, 1})));
    CHECK(tape.value(m)[0] == doctest::Approx(3));
    CHECK(tape.value(m)[1] == doctest::Approx(7));
}

TEST_CASE("forward determinism is bit exact") {
    auto run = [] {
        Tape tape;
        Rng rng(5);
        NodeId a = tape.leaf(rand_tensor({8, 8}, rng), true);
        NodeId b = tape.leaf(rand_tensor({8, 8}, rng), true);
        NodeId out = tape.sum_all(tape.sigmoid(tape.matmul(a, b)));
        tape.backward(out);
        return std::pair(tape.value(out)[0], tape.grad(a).vec());
    };
    auto [v1, g1] = run();
    auto [v2, g2] = run();
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}

TEST_CASE("backward examples") {
    // d(x^2)/dx at x=3 -> 6
    {
        Tape tape;
        NodeId x = tape.leaf(Tensor::scalar(3.0), true);
        NodeId y = tape.mul(x, x);
        tape.backward(y);
        CHECK(tape.grad(x)[0] == doctest::Approx(6.0));
    }
    // gradient of a constant w.r.t. x is zero
    {
        Tape tape;
        NodeId x = tape.leaf(Tensor::scalar(3.0), true);
        NodeId c = tape.constant(Tensor::scalar(7.0));
        NodeId y = tape.add(tape.scale(x, 0.0), c);
        tape.backward(y);
        CHECK(tape.grad(x)[0] == 0.0);
    }
    // non-scalar seed is an error
    {
        Tape tape;
        NodeId x = tape.leaf(Tensor({2, 1}, {1, 2}), true);
        CHECK_THROWS_AS(tape.backward(x), Error);
    }
}

TEST_CASE("shape mismatch names the offending node") {
    Tape tape;
    NodeId a = tape.leaf(Tensor::zeros({2, 3}));
    NodeId b = tape.leaf(Tensor::zeros({2, 2}));
    CHECK_THROWS_WITH_AS(tape.add(a, b),
                         doctest::Contains("(add): shape mismatch"), Error);
    CHECK_THROWS_WITH_AS(tape.matmul(a, a), doctest::Contains("matmul"), Error);
}

TEST_CASE("every primitive op matches central finite differences") {
    // 100 random seeds spread over the op set, as small dense cases
    auto unary = [](NodeId (Tape::*op)(NodeId)) {
        return [op](Tape& t, const std::vector<NodeId>& in) { return (t.*op)(in[0]); };
    };
    auto binary = [](NodeId (Tape::*op)(NodeId, NodeId)) {
        return [op](Tape& t, const std::vector<NodeId>& in) { return (t.*op)(in[0], in[1]); };
    };

    struct Case {
        const char* name;
        std::function<void(Rng&)> run;
    };
    std::vector<Case> cases;

    auto add_unary = [&](const char* name, NodeId (Tape::*op)(NodeId), double lo, double hi) {
        cases.push_back({name, [=](Rng& rng) {
                             FdCheck chk;
                             chk.inputs = {rand_tensor({3, 4}, rng, lo, hi)};
                             chk.build = unary(op);
                             chk.run();
                         }});
    };
    add_unary("sigmoid", &Tape::sigmoid, -3, 3);
    add_unary("relu", &Tape::relu, -2, 2);
    add_unary("sin", &Tape::sin, -3, 3);
    add_unary("cos", &Tape::cos, -3, 3);
    add_unary("exp", &Tape::exp, -2, 2);
    add_unary("log", &Tape::log, 0.3, 4);
    add_unary("sqrt", &Tape::sqrt, 0.3, 4);
    add_unary("abs", &Tape::abs, 0.2, 2);  // away from the kink
    add_unary("neg", &Tape::neg, -2, 2);
    add_unary("sum_all", &Tape::sum_all, -2, 2);
    add_unary("mean_all", &Tape::mean_all, -2, 2);
    add_unary("sum_rows", &Tape::sum_rows, -2, 2);
    add_unary("cumsum_ex_rows", &Tape::cumsum_ex_rows, -2, 2);

    auto add_binary = [&](const char* name, NodeId (Tape::*op)(NodeId, NodeId), double lo, double hi) {
        cases.push_back({name, [=](Rng& rng) {
                             FdCheck chk;
                             chk.inputs = {rand_tensor({3, 4}, rng, lo, hi),
                                           rand_tensor({3, 4}, rng, lo, hi)};
                             chk.build = binary(op);
                             chk.run();
                         }});
    };
    add_binary("add", &Tape::add, -2, 2);
    add_binary("sub", &Tape::sub, -2, 2);
    add_binary("mul", &Tape::mul, -2, 2);
    add_binary("div", &Tape::div, 0.5, 2);
    add_binary("concat", &Tape::concat, -2, 2);

    cases.push_back({"scale", [&](Rng& rng) {
                         FdCheck chk;
                         chk.inputs = {rand_tensor({3, 4}, rng)};
                         chk.build = [](Tape& t, const std::vector<NodeId>& in) {
                             return t.scale(in[0], -1.7);
                         };
                         chk.run();
                     }});
    cases.push_back({"add_rowvec", [&](Rng& rng) {
                         FdCheck chk;
                         chk.inputs = {rand_tensor({3, 4}, rng), rand_tensor({4}, rng)};
                         chk.build = binary(&Tape::add_rowvec);
                         chk.run();
                     }});
    cases.push_back({"add_colvec", [&](Rng& rng) {
                         FdCheck chk;
                         chk.inputs = {rand_tensor({3, 4}, rng), rand_tensor({3, 1}, rng)};
                         chk.build = binary(&Tape::add_colvec);
                         chk.run();
                     }});
    cases.push_back({"mul_colvec", [&](Rng& rng) {
                         FdCheck chk;
                         chk.inputs = {rand_tensor({3, 4}, rng), rand_tensor({3, 1}, rng)};
                         chk.build = binary(&Tape::mul_colvec);
                         chk.run();
                     }});
    cases.push_back({"matmul", [&](Rng& rng) {
                         FdCheck chk;
                         chk.inputs = {rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)};
                         chk.build = binary(&Tape::matmul);
                         chk.run();
                     }});
    cases.push_back({"matmul_nt", [&](Rng& rng) {
                         FdCheck chk;
                         chk.inputs = {rand_tensor({3, 4}, rng), rand_tensor({2, 4}, rng)};
                         chk.build = binary(&Tape::matmul_nt);
                         chk.run();
                     }});
    cases.push_back({"seg_weight_sum", [&](Rng& rng) {
                         FdCheck chk;
                         chk.inputs = {rand_tensor({2, 3}, rng), rand_tensor({6, 2}, rng)};
                         chk.build = binary(&Tape::seg_weight_sum);
                         chk.run();
                     }});
    cases.push_back({"col_slice", [&](Rng& rng) {
                         FdCheck chk;
                         chk.inputs = {rand_tensor({3, 4}, rng)};
                         chk.build = [](Tape& t, const std::vector<NodeId>& in) {
                             return t.col_slice(in[0], 2);
                         };
                         chk.run();
                     }});
    cases.push_back({"reshape", [&](Rng& rng) {
                         FdCheck chk;
                         chk.inputs = {rand_tensor({3, 4}, rng)};
                         chk.build = [](Tape& t, const std::vector<NodeId>& in) {
                             return t.reshape(in[0], {2, 6});
                         };
                         chk.run();
                     }});

    for (const Case& c : cases) {
        CAPTURE(c.name);
        for (uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(mix_seed(seed, 0xf0));
            c.run(rng);
        }
    }
}

TEST_CASE("two-layer MLP gradient vs finite differences") {
    Rng rng(42);
    FdCheck chk;
    chk.inputs = {rand_tensor({5, 3}, rng), rand_tensor({3, 8}, rng), rand_tensor({8}, rng),
                  rand_tensor({8, 2}, rng), rand_tensor({2}, rng)};
    chk.build = [](Tape& t, const std::vector<NodeId>& in) {
        NodeId h = t.relu(t.add_rowvec(t.matmul(in[0], in[1]), in[2]));
        return t.sigmoid(t.add_rowvec(t.matmul(h, in[3]), in[4]));
    };
    chk.run();
}

TEST_CASE("linearity of backward") {
    // grad of a*f + b*g == a*grad f + b*grad g
    Rng rng(7);
    Tensor x0 = rand_tensor({4, 4}, rng);
    const double a = 1.7, b = -0.6;

    auto grad_of = [&](bool with_f, bool with_g, double sa, double sb) {
        Tape tape;
        NodeId x = tape.leaf(x0, true);
        NodeId f = tape.sum_all(tape.sigmoid(x));
        NodeId g = tape.sum_all(tape.mul(x, x));
        NodeId out;
        if (with_f && with_g)
            out = tape.add(tape.scale(f, sa), tape.scale(g, sb));
        else
            out = with_f ? f : g;
        tape.backward(out);
        return tape.grad(x).vec();
    };

    auto combined = grad_of(true, true, a, b);
    auto gf = grad_of(true, false, 0, 0);
    auto gg = grad_of(false, true, 0, 0);
    for (size_t i = 0; i < combined.size(); ++i)
        CHECK(combined[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
}
