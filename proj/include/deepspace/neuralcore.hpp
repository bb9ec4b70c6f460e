#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace deepspace::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { Elu, Identity };

/// Dense layer whose effective weights are weights ⊙ mask.
struct MaskedLayer {
  Matrix weights;  // outputs x inputs
  Matrix mask;     // same shape, entries in {0, 1}
  Vector bias;     // outputs
  Activation activation = Activation::Elu;

  Eigen::Index inputs() const { return weights.cols(); }
  Eigen::Index outputs() const { return weights.rows(); }
  Matrix masked_weights() const { return weights.cwiseProduct(mask); }
};

/// ELU with alpha = 1.
inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

/// activation((weights ⊙ mask) · input + bias). Throws ArgumentError on a dimension mismatch and
/// NumericError if the output is not finite.
Vector layer_forward(const MaskedLayer& layer, const Vector& input);

/// Uniform Glorot initialisation, applied before masking; biases zero.
MaskedLayer make_layer(Eigen::Index inputs, Eigen::Index outputs, Activation activation,
                       std::mt19937_64& rng);

/// Activations saved by MaskedNetwork::forward for a subsequent backward pass.
struct ForwardCache {
  std::vector<Matrix> inputs;           // per layer: the layer's main input (batch x width)
  std::vector<Matrix> pre_activations;  // per layer: batch x outputs
  std::vector<Matrix> masked_weights;
  std::vector<Matrix> masks;
  Matrix aux;
  bool valid = false;
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Matrix input;
  Matrix aux;
};

/// A stack of masked layers. An optional auxiliary input (batch x aux_width) is appended to the
/// input of every layer; its weights are the trailing aux_width columns of each weight matrix.
///
/// Rows of every batch matrix are samples. The network itself is immutable during forward and
/// backward passes, so concurrent inference on one instance is safe.
class MaskedNetwork {
 public:
  MaskedNetwork() = default;
  MaskedNetwork(std::vector<MaskedLayer> layers, Eigen::Index aux_width);

  /// `masks`, when non-empty, replaces the layers' own masks for this pass (one per layer).
  Matrix forward(const Matrix& input, const Matrix& aux, ForwardCache* cache = nullptr,
                 std::span<const Matrix> masks = {}) const;
  /// Exact gradients of a scalar loss given d loss / d output, using the masks of the cached pass.
  /// Throws StateError if the cache does not hold a forward pass.
  Gradients backward(const ForwardCache& cache, const Matrix& upstream, bool input_gradient = true) const;

  std::vector<MaskedLayer>& layers() { return layers_; }
  const std::vector<MaskedLayer>& layers() const { return layers_; }
  Eigen::Index aux_width() const { return aux_width_; }
  Eigen::Index input_width() const;
  Eigen::Index output_width() const;

  /// Weight and bias storage in a fixed order (w0, b0, w1, b1, ...), for the optimizer.
  std::vector<std::span<double>> parameters();
  static std::vector<std::span<const double>> gradient_spans(const Gradients& g);
  std::size_t parameter_count() const;

 private:
  std::vector<MaskedLayer> layers_;
  Eigen::Index aux_width_ = 0;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(AdamConfig config, const std::vector<std::size_t>& sizes);

  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  std::int64_t step_count() const { return step_count_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

 private:
  friend void adam_step(std::span<const std::span<double>>, std::span<const std::span<const double>>,
                        AdamState&);
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_count_ = 0;
};

/// One bias-corrected Adam update in place. Throws ArgumentError on any shape mismatch.
void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state);

}  // namespace deepspace::nn
