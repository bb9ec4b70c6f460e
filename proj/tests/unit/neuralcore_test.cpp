#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "deepspace/errors.hpp"
#include "deepspace/neuralcore.hpp"

namespace deepspace::nn {

namespace {

MaskedNetwork random_network(std::mt19937_64& rng, Eigen::Index& input_width, Eigen::Index& aux_width) {
  std::uniform_int_distribution<int> width(1, 7);
  std::uniform_int_distribution<int> depth(1, 4);
  std::bernoulli_distribution coin(0.6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  input_width = width(rng);
  aux_width = std::uniform_int_distribution<int>(0, 3)(rng);
  const int layers = depth(rng);
  std::vector<MaskedLayer> stack;
  Eigen::Index in = input_width;
  for (int l = 0; l < layers; ++l) {
    const Eigen::Index out = width(rng);
    auto layer = make_layer(in + aux_width, out, l + 1 == layers ? Activation::Identity : Activation::Elu, rng);
    for (Eigen::Index i = 0; i < layer.mask.size(); ++i) layer.mask.data()[i] = coin(rng) ? 1.0 : 0.0;
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = u(rng);
    stack.push_back(std::move(layer));
    in = out;
  }
  return MaskedNetwork(std::move(stack), aux_width);
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double loss(const MaskedNetwork& net, const Matrix& x, const Matrix& aux, const Matrix& upstream) {
  return net.forward(x, aux).cwiseProduct(upstream).sum();
}

// Direct evaluation of a single sample, written without the batched code path.
Vector reference_forward(const MaskedNetwork& net, const Vector& x, const Vector& aux) {
  Vector h = x;
  for (const auto& layer : net.layers()) {
    Vector in(h.size() + aux.size());
    in << h, aux;
    Vector out(layer.outputs());
    for (Eigen::Index o = 0; o < layer.outputs(); ++o) {
      double s = layer.bias[o];
      for (Eigen::Index i = 0; i < layer.inputs(); ++i) s += layer.weights(o, i) * layer.mask(o, i) * in[i];
      out[o] = layer.activation == Activation::Elu ? (s > 0 ? s : std::exp(s) - 1.0) : s;
    }
    h = out;
  }
  return h;
}

}  // namespace

TEST(NeuralcoreTest, EluValues) {
  EXPECT_DOUBLE_EQ(elu(2.0), 2.0);
  EXPECT_DOUBLE_EQ(elu(0.0), 0.0);
  EXPECT_NEAR(elu(-1.0), std::exp(-1.0) - 1.0, 1e-15);
}

TEST(NeuralcoreTest, LayerForwardAppliesMask) {
  MaskedLayer layer;
  layer.weights = Matrix{{1.0, 2.0}, {3.0, 4.0}};
  layer.mask = Matrix{{1.0, 0.0}, {1.0, 1.0}};
  layer.bias = Vector{{0.5, -20.0}};
  layer.activation = Activation::Elu;
  const Vector out = layer_forward(layer, Vector{{1.0, 1.0}});
  EXPECT_DOUBLE_EQ(out[0], 1.5);
  EXPECT_NEAR(out[1], std::expm1(-13.0), 1e-15);
  EXPECT_THROW(layer_forward(layer, Vector{{1.0}}), ArgumentError);
}

TEST(NeuralcoreTest, BatchedForwardMatchesReference) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Index in = 0, aux = 0;
    const auto net = random_network(rng, in, aux);
    const Matrix x = random_matrix(5, in, rng);
    const Matrix a = random_matrix(5, aux, rng);
    const Matrix y = net.forward(x, a);
    for (Eigen::Index r = 0; r < 5; ++r) {
      const Vector ref = reference_forward(net, x.row(r).transpose(), a.row(r).transpose());
      for (Eigen::Index c = 0; c < y.cols(); ++c) EXPECT_NEAR(y(r, c), ref[c], 1e-12);
    }
  }
}

TEST(NeuralcoreTest, GradientsMatchCentralDifferences) {
  std::mt19937_64 rng(17);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Index in = 0, aux = 0;
    auto net = random_network(rng, in, aux);
    const Matrix x = random_matrix(3, in, rng);
    const Matrix a = random_matrix(3, aux, rng);
    const Matrix upstream = random_matrix(3, net.output_width(), rng);
    ForwardCache cache;
    net.forward(x, a, &cache);
    const Gradients g = net.backward(cache, upstream);

    const auto check = [&](double& slot, double analytic, const char* what) {
      const double saved = slot;
      slot = saved + h;
      const double up = loss(net, x, a, upstream);
      slot = saved - h;
      const double down = loss(net, x, a, upstream);
      slot = saved;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(analytic, numeric, 1e-6 * std::max(1.0, std::abs(numeric))) << what << " trial " << trial;
    };
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      auto& layer = net.layers()[l];
      for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
        const double analytic = g.weights[l].data()[i];
        if (layer.mask.data()[i] == 0.0) {
          EXPECT_EQ(analytic, 0.0);
          continue;
        }
        check(layer.weights.data()[i], analytic, "weight");
      }
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) check(layer.bias[i], g.biases[l][i], "bias");
    }
    Matrix xm = x;
    for (Eigen::Index i = 0; i < xm.size(); ++i) {
      const double saved = xm.data()[i];
      xm.data()[i] = saved + h;
      const double up = loss(net, xm, a, upstream);
      xm.data()[i] = saved - h;
      const double down = loss(net, xm, a, upstream);
      xm.data()[i] = saved;
      EXPECT_NEAR(g.input.data()[i], (up - down) / (2 * h), 1e-6 * std::max(1.0, std::abs(g.input.data()[i])));
    }
    Matrix am = a;
    for (Eigen::Index i = 0; i < am.size(); ++i) {
      const double saved = am.data()[i];
      am.data()[i] = saved + h;
      const double up = loss(net, x, am, upstream);
      am.data()[i] = saved - h;
      const double down = loss(net, x, am, upstream);
      am.data()[i] = saved;
      EXPECT_NEAR(g.aux.data()[i], (up - down) / (2 * h), 1e-6 * std::max(1.0, std::abs(g.aux.data()[i])));
    }
  }
}

TEST(NeuralcoreTest, BackwardWithoutCacheThrows) {
  std::mt19937_64 rng(1);
  Eigen::Index in = 0, aux = 0;
  const auto net = random_network(rng, in, aux);
  ForwardCache cache;
  EXPECT_THROW(net.backward(cache, Matrix::Zero(1, net.output_width())), StateError);
}

TEST(NeuralcoreTest, MaskOverrideChangesOnlyThatPass) {
  std::mt19937_64 rng(2);
  auto layer = make_layer(3, 2, Activation::Identity, rng);
  layer.mask.setOnes();
  const MaskedNetwork net({layer}, 0);
  const Matrix x = Matrix::Ones(1, 3);
  const std::vector<Matrix> zero{Matrix::Zero(2, 3)};
  EXPECT_EQ(net.forward(x, Matrix(1, 0), nullptr, zero), Matrix::Zero(1, 2));
  EXPECT_NE(net.forward(x, Matrix(1, 0)), Matrix::Zero(1, 2));
}

TEST(NeuralcoreTest, AdamMatchesHandComputedSteps) {
  AdamConfig config{0.1, 0.9, 0.999, 1e-8};
  AdamState state(config, {2});
  std::vector<double> p{1.0, -2.0};
  const std::vector<std::vector<double>> grads{{0.5, -1.0}, {0.25, 2.0}};
  double m[2] = {0, 0}, v[2] = {0, 0};
  std::vector<double> expected = p;
  for (int t = 1; t <= 2; ++t) {
    const auto& g = grads[static_cast<std::size_t>(t - 1)];
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[static_cast<std::size_t>(i)];
      v[i] = 0.999 * v[i] + 0.001 * g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(i)];
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      expected[static_cast<std::size_t>(i)] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    std::vector<std::span<double>> params{std::span<double>(p)};
    std::vector<std::span<const double>> gs{std::span<const double>(g)};
    adam_step(params, gs, state);
    EXPECT_NEAR(p[0], expected[0], 1e-12);
    EXPECT_NEAR(p[1], expected[1], 1e-12);
  }
  EXPECT_EQ(state.step_count(), 2);
}

TEST(NeuralcoreTest, AdamRejectsShapeMismatch) {
  AdamState state(AdamConfig{}, {2});
  std::vector<double> p{1.0, 2.0};
  std::vector<double> g{1.0};
  std::vector<std::span<double>> params{std::span<double>(p)};
  std::vector<std::span<const double>> gs{std::span<const double>(g)};
  EXPECT_THROW(adam_step(params, gs, state), ArgumentError);
}

TEST(NeuralcoreTest, ParameterCountAndSpans) {
  std::mt19937_64 rng(3);
  auto l0 = make_layer(4, 3, Activation::Elu, rng);
  auto l1 = make_layer(3, 2, Activation::Identity, rng);
  MaskedNetwork net({l0, l1}, 0);
  EXPECT_EQ(net.parameter_count(), 4u * 3 + 3 + 3 * 2 + 2);
  const auto spans = net.parameters();
  ASSERT_EQ(spans.size(), 4u);
  EXPECT_EQ(spans[0].size(), 12u);
  EXPECT_EQ(spans[3].size(), 2u);
}

}  // namespace deepspace::nn
