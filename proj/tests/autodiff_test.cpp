#include "latentshift/autodiff.hpp"
#include "latentshift/checkpoint.hpp"

#include "model_zoo.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace latentshift;

namespace {

ModelGraph sigmoid_dot(std::vector<double> w) {
  const Index n = static_cast<Index>(w.size());
  ModelGraph g({n});
  LayerSpec d = dense("logit", n, 1);
  d.param("weight") = Tensor({1, n}, Eigen::Map<Eigen::VectorXd>(w.data(), n));
  g.add(std::move(d));
  g.add(sigmoid("prob"));
  return g;
}

// y = w · ReLU(x), the two-pixel guided-backprop example.
ModelGraph relu_dot() {
  ModelGraph g({2});
  g.add(relu("relu"));
  LayerSpec d = dense("out", 2, 1);
  d.param("weight") = Tensor({1, 2}, {1.0, -1.0});
  g.add(std::move(d));
  return g;
}

}  // namespace

TEST(Forward, DenseNoBias) {
  ModelGraph g({1});
  LayerSpec d = dense("d", 1, 1);
  d.param("weight") = Tensor({1, 1}, {2.0});
  g.add(std::move(d));
  EXPECT_EQ(forward(g, Tensor({1}, {3.0})), Tensor({1}, {6.0}));
}

TEST(Forward, Relu) {
  ModelGraph g({2});
  g.add(relu("r"));
  EXPECT_EQ(forward(g, Tensor({2}, {2.0, -3.0})), Tensor({2}, {2.0, 0.0}));
}

TEST(Forward, ValidConvShape) {
  ModelGraph g({1, 8, 8});
  g.add(conv2d("c", 1, 1, 3, 1, Padding::Valid));
  EXPECT_EQ(forward(g, Tensor({1, 8, 8})).shape(), (Shape{1, 6, 6}));
}

TEST(Forward, ConvMatchesDirectSum) {
  Rng rng(3);
  ModelGraph g({2, 5, 6});
  g.add(conv2d("c", 2, 3, 3, 2, Padding::Same));
  initialize(g, 11);
  const Tensor x = zoo::random_tensor({2, 5, 6}, rng);
  const Tensor y = forward(g, x);
  const LayerSpec& l = g.layer(0);
  const Tensor& w = l.param("weight");
  ASSERT_EQ(y.shape(), (Shape{3, 3, 3}));
  for (Index co = 0; co < 3; ++co)
    for (Index oy = 0; oy < 3; ++oy)
      for (Index ox = 0; ox < 3; ++ox) {
        double acc = l.param("bias")[co];
        for (Index ci = 0; ci < 2; ++ci)
          for (Index ky = 0; ky < 3; ++ky)
            for (Index kx = 0; kx < 3; ++kx) {
              const Index iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
              acc += w[((co * 2 + ci) * 3 + ky) * 3 + kx] * x.at(ci, iy, ix);
            }
        EXPECT_NEAR(y.at(co, oy, ox), acc, 1e-12);
      }
}

TEST(Forward, TransposedConvIsAdjointOfConv) {
  // <conv(x), y> == <x, tconv(y)> when both share weights and carry no bias.
  Rng rng(5);
  ModelGraph c({2, 8, 8});
  c.add(conv2d("c", 2, 3, 3, 2, Padding::Same));
  initialize(c, 1);
  c.layer(0).param("bias").vec().setZero();
  ModelGraph t({3, 4, 4});
  LayerSpec tl = transposed_conv2d("t", 3, 2, 3, 2, Padding::Same);
  // conv weight [co,ci,k,k] read as [in=co, out=ci, k, k] for the transpose.
  tl.param("weight") = c.layer(0).param("weight");
  t.add(std::move(tl));
  const Tensor x = zoo::random_tensor({2, 8, 8}, rng);
  const Tensor y = zoo::random_tensor({3, 4, 4}, rng);
  EXPECT_NEAR(forward(c, x).vec().dot(y.vec()), x.vec().dot(forward(t, y).vec()), 1e-10);
}

TEST(Forward, ShapeMismatchNamesLayer) {
  ModelGraph g({4});
  g.add(dense("first", 4, 2));
  try {
    forward(g, Tensor({3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.layer(), "first");
  }
  EXPECT_THROW(ModelGraph({4}).add(dense("bad", 5, 2)), ShapeError);
}

TEST(Forward, RejectsDuplicateAndForwardReferences) {
  ModelGraph g({2});
  g.add(relu("a"));
  EXPECT_THROW(g.add(relu("a")), std::invalid_argument);
  EXPECT_THROW(g.add(residual_add("sum", "a", "later")), std::invalid_argument);
}

TEST(Forward, IsPure) {
  for (const auto& c : zoo::all_layer_kinds(17)) {
    EXPECT_TRUE(bit_equal(forward(c.graph, c.input), forward(c.graph, c.input))) << c.kind;
  }
}

TEST(InputGradient, SigmoidOfDotAtZero) {
  const ModelGraph g = sigmoid_dot({1.0, -2.0});
  const Tensor x({2});
  const Tensor grad = input_gradient(g, x, 0);
  EXPECT_NEAR(grad[0], 0.25, 1e-12);
  EXPECT_NEAR(grad[1], -0.5, 1e-12);
  for (Index i = 0; i < 2; ++i) {
    const double fd = oracle::central_difference(
        [&](double v) {
          Tensor p = x;
          p[i] = v;
          return forward(g, p)[0];
        },
        x[i]);
    EXPECT_LT(oracle::relative_error(grad[i], fd), 1e-4);
  }
}

TEST(InputGradient, PreSigmoidNodeSelection) {
  const ModelGraph g = sigmoid_dot({1.0, -2.0});
  const Tensor grad = input_gradient(g, Tensor({2}), 0, GradientMode::Standard, "logit");
  EXPECT_EQ(grad, Tensor({2}, {1.0, -2.0}));
}

TEST(InputGradient, GuidedRule) {
  const ModelGraph g = relu_dot();
  const Tensor x({2}, {2.0, 3.0});
  EXPECT_EQ(input_gradient(g, x, 0, GradientMode::Standard), Tensor({2}, {1.0, -1.0}));
  EXPECT_EQ(input_gradient(g, x, 0, GradientMode::Guided), Tensor({2}, {1.0, 0.0}));
}

TEST(InputGradient, GuidedEqualsStandardWithoutRelu) {
  for (const auto& c : zoo::all_layer_kinds(23)) {
    if (c.kind == "relu") continue;
    const Index outs = shape_size(c.graph.output_shape());
    for (Index o = 0; o < outs; o += std::max<Index>(1, outs / 3)) {
      EXPECT_TRUE(bit_equal(input_gradient(c.graph, c.input, o, GradientMode::Standard),
                            input_gradient(c.graph, c.input, o, GradientMode::Guided)))
          << c.kind;
    }
  }
}

TEST(InputGradient, GuidedNeverAddsNonzeros) {
  // Same activations and upstream gradient at one ReLU: guided masks a subset.
  Rng rng(29);
  const auto nnz = [](const Tensor& t) { return (t.vec().array() != 0.0).count(); };
  for (int trial = 0; trial < 20; ++trial) {
    ModelGraph single({3, 6, 6});
    single.add(relu("r"));
    const Tape tape = forward_tape(single, zoo::random_tensor({3, 6, 6}, rng));
    const Tensor dy = zoo::random_tensor({3, 6, 6}, rng);
    BackwardOptions standard, guided;
    guided.mode = GradientMode::Guided;
    EXPECT_LE(nnz(backward(single, tape, dy, guided).input), nnz(backward(single, tape, dy, standard).input));
  }
}

TEST(InputGradient, OutputIndexOutOfRange) {
  const ModelGraph g = sigmoid_dot({1.0, 2.0});
  EXPECT_THROW(input_gradient(g, Tensor({2}), 1), std::out_of_range);
  EXPECT_THROW(input_gradient(g, Tensor({2}), -1), std::out_of_range);
}

TEST(ParameterGradients, ScalarChainRule) {
  ModelGraph g({1});
  LayerSpec d = dense("d", 1, 1);
  d.param("weight") = Tensor({1, 1}, {1.0});
  g.add(std::move(d));
  const auto squared = [](const Tensor& y, Tensor& dy) {
    dy[0] = 2 * y[0];
    return y[0] * y[0];
  };
  const auto r = parameter_gradients(g, Tensor({1}, {2.0}), squared);
  EXPECT_DOUBLE_EQ(r.loss, 4.0);
  EXPECT_DOUBLE_EQ(r.params.at("d/weight")[0], 8.0);
  EXPECT_DOUBLE_EQ(r.params.at("d/bias")[0], 4.0);
}

TEST(ParameterGradients, ZeroInputNoBiasGivesZero) {
  ModelGraph g({3});
  g.add(dense("a", 3, 4));
  g.add(dense("b", 4, 2));
  initialize(g, 2);
  g.layer("a").param("bias").vec().setZero();
  g.layer("b").param("bias").vec().setZero();
  const auto sq = [](const Tensor& y, Tensor& dy) {
    dy.vec() = 2 * y.vec();
    return y.vec().squaredNorm();
  };
  const auto r = parameter_gradients(g, Tensor({3}), sq);
  for (const auto& [k, t] : r.params) EXPECT_TRUE(t.vec().isZero(0.0)) << k;
}

TEST(ParameterGradients, DisconnectedLayerIsZero) {
  ModelGraph g({2});
  g.add(dense("used", 2, 2));
  g.add(dense("dangling", 2, 2));
  LayerSpec out = relu("out");
  out.inputs = {"used"};
  g.add(std::move(out));
  initialize(g, 4);
  const auto sum = [](const Tensor& y, Tensor& dy) {
    dy.vec().setOnes();
    return y.vec().sum();
  };
  const auto r = parameter_gradients(g, Tensor({2}, {1.0, 2.0}), sum);
  EXPECT_TRUE(r.params.at("dangling/weight").vec().isZero(0.0));
  EXPECT_TRUE(r.params.at("dangling/bias").vec().isZero(0.0));
}

TEST(ParameterGradients, TwoLayerFiniteDifferences) {
  Rng rng(41);
  ModelGraph g({4});
  g.add(dense("h", 4, 5));
  g.add(sigmoid("s"));
  g.add(dense("o", 5, 3));
  initialize(g, 8);
  const Tensor x = zoo::random_tensor({4}, rng);
  const Tensor r = zoo::random_tensor({3}, rng);
  const auto probe = [&](const Tensor& y, Tensor& dy) {
    dy = r;
    return y.vec().dot(r.vec());
  };
  const auto grads = parameter_gradients(g, x, probe);
  g.for_each_parameter([&](const std::string& key, Tensor& p) {
    for (Index i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      const double fd = oracle::central_difference(
          [&](double v) {
            p[i] = v;
            return oracle::project(g, x, r);
          },
          orig);
      p[i] = orig;
      EXPECT_LT(oracle::relative_error(grads.params.at(key)[i], fd), 1e-4) << key << "[" << i << "]";
    }
  });
}

TEST(GradientCheck, EveryLayerKind) {
  Rng rng(99);
  for (auto& c : zoo::all_layer_kinds(7)) {
    const Tensor r = zoo::random_tensor(c.graph.output_shape(), rng);
    const Tape tape = forward_tape(c.graph, c.input);
    BackwardOptions opts;
    opts.parameters = true;
    const BackwardResult b = backward(c.graph, tape, r, opts);
    for (Index i = 0; i < c.input.size(); ++i) {
      Tensor x = c.input;
      const double fd = oracle::central_difference(
          [&](double v) {
            x[i] = v;
            return oracle::project(c.graph, x, r);
          },
          c.input[i]);
      EXPECT_LT(oracle::relative_error(b.input[i], fd), 1e-4) << c.kind << " input " << i;
    }
    ModelGraph& g = c.graph;
    g.for_each_parameter([&](const std::string& key, Tensor& p) {
      for (Index i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        const double fd = oracle::central_difference(
            [&](double v) {
              p[i] = v;
              return oracle::project(g, c.input, r);
            },
            orig);
        p[i] = orig;
        EXPECT_LT(oracle::relative_error(b.params.at(key)[i], fd), 1e-4) << c.kind << " " << key;
      }
    });
  }
}

TEST(Graph, LayerOrderIsOutputFirstParameterizedOnly) {
  ModelGraph g({4});
  g.add(dense("l1", 4, 4));
  g.add(relu("r"));
  g.add(dense("l2", 4, 4));
  g.add(dense("l3", 4, 1));
  EXPECT_EQ(g.layer_order(), (std::vector<std::string>{"l3", "l2", "l1"}));
}

TEST(Checkpoint, GraphRoundTripIsBitExact) {
  for (const auto& c : zoo::all_layer_kinds(55)) {
    const auto path = std::filesystem::temp_directory_path() / ("ls_ckpt_" + c.kind + ".lsck");
    save_graph(path, c.graph, {{"note", c.kind}});
    json extra;
    const ModelGraph back = load_graph(path, &extra);
    EXPECT_TRUE(back == c.graph) << c.kind;
    EXPECT_EQ(extra.at("note"), c.kind);
    EXPECT_TRUE(bit_equal(forward(back, c.input), forward(c.graph, c.input)));
    std::filesystem::remove(path);
  }
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "ls_garbage.lsck";
  { std::ofstream(path) << "not a checkpoint at all"; }
  EXPECT_THROW(read_container(path), FormatError);
  std::filesystem::remove(path);
}
