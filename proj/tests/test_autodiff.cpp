#include <gtest/gtest.h>

#include <cmath>

#include "ltgan/autodiff.hpp"
#include "ltgan/gradcheck.hpp"
#include "ltgan/rng.hpp"
#include "random_graphs.hpp"

using namespace ltgan;

namespace {

Tensor row(std::initializer_list<double> v) { return Tensor({1, v.size()}, std::vector<double>(v)); }

}  // namespace

TEST(Forward, AddIsElementwise) {
  Tape t;
  const Var s = add(t.constant(row({1, 2})), t.constant(row({3, 4})));
  EXPECT_EQ(s.value(), row({4, 6}));
}

TEST(Forward, MatmulByIdentityReturnsOperand) {
  Rng rng(3);
  const Tensor a = rng.normal_matrix(3, 3);
  Tensor eye = Tensor::matrix(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  Tape t;
  EXPECT_EQ(matmul(t.constant(eye), t.constant(a)).value(), a);
}

TEST(Forward, L2NormRowsOfThreeFour) {
  Tape t;
  const Var n = l2_norm_rows(t.constant(row({3, 4})));
  ASSERT_EQ(n.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(n.value().item(), 5.0);
}

TEST(Forward, ShapeMismatchNamesBothShapes) {
  Tape t;
  try {
    add(t.constant(Tensor::matrix(2, 3)), t.constant(Tensor::matrix(3, 2)));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3x2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(matmul(t.constant(Tensor::matrix(2, 3)), t.constant(Tensor::matrix(2, 3))), ShapeError);
  EXPECT_THROW(concat_rows(t.constant(Tensor::matrix(2, 3)), t.constant(Tensor::matrix(2, 2))), ShapeError);
}

TEST(Forward, RowBiasIsTheOnlyBroadcast) {
  Tape t;
  const Var m = t.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  const Var b = t.constant(row({10, 20}));
  EXPECT_EQ(add(m, b).value(), Tensor::from_rows({{11, 22}, {13, 24}}));
  EXPECT_THROW(add(b, m), ShapeError);
  EXPECT_THROW(mul(m, b), ShapeError);
  EXPECT_THROW(add(m, t.constant(Tensor::matrix(2, 1))), ShapeError);
}

TEST(Forward, EmptyReductionsRejected) {
  Tape t;
  EXPECT_THROW(sum(t.constant(Tensor::matrix(0, 3))), std::invalid_argument);
  EXPECT_THROW(mean(t.constant(Tensor::matrix(0, 3))), std::invalid_argument);
}

TEST(Forward, DeterministicValues) {
  auto run = [] {
    Rng rng(11);
    Tape t;
    Var x = t.variable(rng.normal_matrix(4, 3));
    Var w = t.variable(rng.normal_matrix(3, 2));
    return tanh(matmul(leaky_relu(x), w)).value();
  };
  const Tensor a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i]));
}

TEST(Backward, SumOfSquares) {
  Tape t;
  const Var w = t.variable(row({1, 2}));
  const GradientMap g = t.backward(sum(square(w)));
  EXPECT_EQ(g.value(w), row({2, 4}));
}

TEST(Backward, SigmoidAtZero) {
  Tape t;
  const Var x = t.variable(Tensor::scalar(0.0));
  EXPECT_DOUBLE_EQ(t.backward(sigmoid(x)).value(x).item(), 0.25);
}

TEST(Backward, NonScalarLossRejected) {
  Tape t;
  const Var x = t.variable(Tensor::matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(square(x)), ShapeError);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Tape t;
  const Var x = t.variable(row({1, 2}));
  const Var c = t.constant(row({3, 4}));
  const GradientMap g = t.backward(sum(mul(x, c)));
  EXPECT_TRUE(g.contains(x));
  EXPECT_FALSE(g.contains(c));
  EXPECT_EQ(g.value(x), row({3, 4}));
}

TEST(Backward, GradientShapesMatchValues) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto graph = testing_graphs::random_graph(seed);
    Tape t;
    std::vector<Var> vars;
    for (const auto& x : graph.inputs) vars.push_back(t.variable(x));
    const Var loss = graph.builder(t, vars);
    const std::size_t forward_nodes = t.size();
    const GradientMap g = t.backward(loss);
    for (NodeId id = 0; id < forward_nodes; ++id) {
      const Var v(&t, id);
      if (g.contains(v)) {
        EXPECT_EQ(g.value(v).shape(), v.shape()) << "node " << id;
      }
    }
  }
}

TEST(Backward, TapeIsTopologicallyOrdered) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto graph = testing_graphs::random_penalty_graph(seed);
    Tape t;
    std::vector<Var> vars;
    for (const auto& x : graph.inputs) vars.push_back(t.variable(x));
    t.backward(graph.builder(t, vars));
    for (NodeId id = 0; id < t.size(); ++id) {
      const TapeNode& n = t.node(id);
      for (std::size_t k = 0; k < n.arity; ++k) EXPECT_LT(n.inputs[k], id);
    }
  }
}

TEST(Backward, WrtRestrictsDifferentiatedPaths) {
  Tape t;
  const Var x = t.variable(row({1, 2}));
  const Var y = t.variable(row({3, 4}));
  const std::array<Var, 1> wrt{x};
  const GradientMap g = t.backward(sum(mul(x, y)), wrt);
  EXPECT_TRUE(g.contains(x));
  EXPECT_FALSE(g.contains(y));
  EXPECT_EQ(g.value(x), row({3, 4}));
}

TEST(GradCheck, TwoLayerPerceptron) {
  Rng rng(5);
  const std::vector<Tensor> inputs{rng.normal_matrix(4, 3), rng.normal_matrix(3, 5), rng.normal_matrix(1, 5), rng.normal_matrix(5, 1),
                                   rng.normal_matrix(1, 1)};
  const GraphBuilder mlp = [](Tape&, std::span<const Var> v) {
    const Var h = tanh(add(matmul(v[0], v[1]), v[2]));
    return mean(square(add(matmul(h, v[3]), v[4])));
  };
  EXPECT_LT(gradient_check(mlp, inputs), 1e-4);
}

TEST(GradCheck, EveryOpIndividually) {
  Rng rng(8);
  const Tensor x = rng.normal_matrix(3, 2), y = rng.normal_matrix(3, 2), m = rng.normal_matrix(2, 3), b = rng.normal_matrix(1, 2);
  const std::vector<std::pair<std::string, GraphBuilder>> cases{
      {"add", [](Tape&, std::span<const Var> v) { return sum(tanh(add(v[0], v[1]))); }},
      {"sub", [](Tape&, std::span<const Var> v) { return sum(tanh(sub(v[0], v[1]))); }},
      {"mul", [](Tape&, std::span<const Var> v) { return sum(mul(v[0], v[1])); }},
      {"div", [](Tape&, std::span<const Var> v) { return sum(div(v[0], add_scalar(square(v[1]), 1.0))); }},
      {"matmul", [](Tape&, std::span<const Var> v) { return sum(tanh(matmul(v[0], v[2]))); }},
      {"scalar-mul", [](Tape&, std::span<const Var> v) { return sum(tanh(scalar_mul(v[0], 1.7))); }},
      {"negate", [](Tape&, std::span<const Var> v) { return sum(tanh(negate(v[0]))); }},
      {"exp", [](Tape&, std::span<const Var> v) { return sum(exp(v[0])); }},
      {"log", [](Tape&, std::span<const Var> v) { return sum(log(add_scalar(square(v[0]), 0.5))); }},
      {"tanh", [](Tape&, std::span<const Var> v) { return sum(tanh(v[0])); }},
      {"sigmoid", [](Tape&, std::span<const Var> v) { return sum(sigmoid(v[0])); }},
      {"leaky-relu", [](Tape&, std::span<const Var> v) { return sum(mul(leaky_relu(v[0]), v[1])); }},
      {"square", [](Tape&, std::span<const Var> v) { return sum(square(v[0])); }},
      {"sqrt", [](Tape&, std::span<const Var> v) { return sum(sqrt(add_scalar(square(v[0]), 0.1))); }},
      {"mean", [](Tape&, std::span<const Var> v) { return mean(square(v[0])); }},
      {"l2-norm-rows", [](Tape&, std::span<const Var> v) { return sum(l2_norm_rows(v[0])); }},
      {"concat-rows", [](Tape&, std::span<const Var> v) { return sum(tanh(concat_rows(v[0], square(v[1])))); }},
      {"broadcast", [](Tape&, std::span<const Var> v) { return sum(mul(broadcast(v[3], 3, 2), v[0])); }},
      {"row-bias", [](Tape&, std::span<const Var> v) { return sum(tanh(add(v[0], v[3]))); }},
      {"transpose", [](Tape&, std::span<const Var> v) { return sum(mul(transpose(v[0]), v[2])); }},
      {"slice-cols", [](Tape&, std::span<const Var> v) { return sum(square(slice_cols(v[0], 1, 1))); }},
      {"slice-rows", [](Tape&, std::span<const Var> v) { return sum(square(slice_rows(v[0], 1, 2))); }},
  };
  const std::vector<Tensor> inputs{x, y, m, b};
  for (const auto& [name, f] : cases) EXPECT_LT(gradient_check(f, inputs), 1e-4) << name;
}

TEST(GradCheck, SecondOrderOfEveryOp) {
  // Differentiate a function of the first-order gradient, so every op's
  // gradient rule is itself differentiated.
  Rng rng(9);
  const std::vector<Tensor> inputs{rng.normal_matrix(3, 2), rng.normal_matrix(3, 2), rng.normal_matrix(2, 3), rng.normal_matrix(1, 2)};
  const std::vector<std::pair<std::string, std::function<Var(std::span<const Var>)>>> ops{
      {"mul", [](std::span<const Var> v) { return sum(mul(mul(v[0], v[0]), v[1])); }},
      {"div", [](std::span<const Var> v) { return sum(div(v[1], add_scalar(square(v[0]), 1.0))); }},
      {"matmul", [](std::span<const Var> v) { return sum(tanh(matmul(v[0], v[2]))); }},
      {"exp", [](std::span<const Var> v) { return sum(mul(exp(v[0]), v[1])); }},
      {"log", [](std::span<const Var> v) { return sum(log(add_scalar(square(v[0]), 0.5))); }},
      {"tanh", [](std::span<const Var> v) { return sum(mul(tanh(v[0]), v[1])); }},
      {"sigmoid", [](std::span<const Var> v) { return sum(mul(sigmoid(v[0]), v[1])); }},
      {"leaky-relu", [](std::span<const Var> v) { return sum(square(leaky_relu(mul(v[0], v[1])))); }},
      {"sqrt", [](std::span<const Var> v) { return sum(sqrt(add_scalar(square(v[0]), 0.1))); }},
      {"l2-norm-rows", [](std::span<const Var> v) { return sum(square(l2_norm_rows(mul(v[0], v[1])))); }},
      {"l2-norm-rows-direct", [](std::span<const Var> v) { return sum(l2_norm_rows(v[0])); }},
      {"mean", [](std::span<const Var> v) { return mean(mul(square(v[0]), v[1])); }},
      {"concat-rows", [](std::span<const Var> v) { return sum(tanh(concat_rows(v[0], square(v[1])))); }},
      {"broadcast", [](std::span<const Var> v) { return sum(tanh(add(v[0], v[3]))); }},
      {"transpose", [](std::span<const Var> v) { return sum(tanh(mul(transpose(v[0]), v[2]))); }},
  };
  for (const auto& [name, op] : ops) {
    const GraphBuilder f = [op = op](Tape& tape, std::span<const Var> v) {
      const std::array<Var, 1> wrt{v[0]};
      const Var g = tape.backward(op(v), wrt)[v[0]];
      return sum(mul(g, tanh(v[1])));
    };
    EXPECT_LT(grad_of_grad_check(f, inputs), 1e-3) << name;
  }
}

TEST(GradCheck, RandomGraphs) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto g = testing_graphs::random_graph(seed);
    const double err = gradient_check(g.builder, g.inputs);
    EXPECT_LT(err, 1e-4) << "seed " << seed;
    worst = std::max(worst, err);
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(GradOfGrad, LinearCriticClosedForm) {
  // f(x, w) = (|grad_x (x w)| - 1)^2 = (|w| - 1)^2, independent of x.
  const Tensor x = row({0.3, -1.2, 2.0});
  const Tensor w = Tensor({3, 1}, std::vector<double>{1.0, 2.0, -2.0});  // |w| = 3
  Tape t;
  const Var vx = t.variable(x), vw = t.variable(w);
  const std::array<Var, 1> wrt_x{vx};
  const Var gx = t.backward(sum(matmul(vx, vw)), wrt_x)[vx];
  const Var f = sum(square(add_scalar(l2_norm_rows(gx), -1.0)));
  EXPECT_NEAR(f.value().item(), 4.0, 1e-12);
  const GradientMap g = t.backward(f);
  const Tensor& dw = g.value(vw);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(dw[i], 2.0 * (3.0 - 1.0) * w[i] / 3.0, 1e-12);
  const Var dx = g[vx];
  for (double v : dx.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(GradOfGrad, UnitNormLinearCriticHasZeroPenaltyAndGradient) {
  Tape t;
  const Var vx = t.variable(Tensor::from_rows({{1.0, 2.0}, {-3.0, 0.5}}));
  const Var vw = t.variable(Tensor({2, 1}, std::vector<double>{0.6, 0.8}));
  const std::array<Var, 1> wrt_x{vx};
  const Var gx = t.backward(sum(matmul(vx, vw)), wrt_x)[vx];
  const Var f = mean(square(add_scalar(l2_norm_rows(gx), -1.0)));
  EXPECT_NEAR(f.value().item(), 0.0, 1e-15);
  for (double v : t.backward(f).value(vw).data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(GradOfGrad, QuadraticCriticAgainstFiniteDifferences) {
  // D(x) = x^T A x with A a parameter: grad_x D = x (A + A^T).
  Rng rng(21);
  const std::vector<Tensor> inputs{rng.normal_matrix(3, 2), rng.normal_matrix(2, 2)};
  const GraphBuilder f = [](Tape& tape, std::span<const Var> v) {
    const std::array<Var, 1> wrt{v[0]};
    const Var score = sum(mul(matmul(v[0], v[1]), v[0]));
    const Var gx = tape.backward(score, wrt)[v[0]];
    return mean(square(add_scalar(l2_norm_rows(gx), -1.0)));
  };
  EXPECT_LT(grad_of_grad_check(f, inputs), 1e-3);

  // With A = I the input gradient is exactly 2x.
  Tape t;
  const Var x = t.variable(inputs[0]);
  const std::array<Var, 1> wrt{x};
  const Var gx = t.backward(sum(square(x)), wrt)[x];
  for (std::size_t i = 0; i < inputs[0].size(); ++i) EXPECT_DOUBLE_EQ(gx.value()[i], 2.0 * inputs[0][i]);
}

TEST(GradOfGrad, RandomPenaltyGraphs) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto g = testing_graphs::random_penalty_graph(seed);
    EXPECT_LT(grad_of_grad_check(g.builder, g.inputs), 1e-3) << "seed " << seed;
  }
}

TEST(RelativeError, FloorGuardsNearZero) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-3);
}
