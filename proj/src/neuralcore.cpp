#include "deepspace/neuralcore.hpp"

#include <cmath>
#include <string>

#include "deepspace/errors.hpp"

namespace deepspace::nn {

namespace {

void apply_activation(Activation act, const Matrix& z, Matrix& out) {
  if (act == Activation::Identity) {
    out = z;
    return;
  }
  out = z.unaryExpr([](double v) { return elu(v); });
}

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace

Vector layer_forward(const MaskedLayer& layer, const Vector& input) {
  if (input.size() != layer.inputs()) {
    throw ArgumentError("layer expects " + std::to_string(layer.inputs()) + " inputs, got " +
                        std::to_string(input.size()));
  }
  Vector z = layer.masked_weights() * input + layer.bias;
  if (layer.activation == Activation::Elu) z = z.unaryExpr([](double v) { return elu(v); });
  if (!z.allFinite()) throw NumericError("non-finite layer output");
  return z;
}

MaskedLayer make_layer(Eigen::Index inputs, Eigen::Index outputs, Activation activation,
                       std::mt19937_64& rng) {
  MaskedLayer layer;
  const double limit = std::sqrt(6.0 / static_cast<double>(inputs + outputs));
  std::uniform_real_distribution<double> dist(-limit, limit);
  layer.weights.resize(outputs, inputs);
  for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = dist(rng);
  layer.mask = Matrix::Ones(outputs, inputs);
  layer.bias = Vector::Zero(outputs);
  layer.activation = activation;
  return layer;
}

MaskedNetwork::MaskedNetwork(std::vector<MaskedLayer> layers, Eigen::Index aux_width)
    : layers_(std::move(layers)), aux_width_(aux_width) {
  if (layers_.empty()) throw ArgumentError("network needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.mask.rows() != layer.weights.rows() || layer.mask.cols() != layer.weights.cols() ||
        layer.bias.size() != layer.weights.rows()) {
      throw ArgumentError("layer " + std::to_string(l) + ": weights, mask and bias shapes disagree");
    }
    if (layer.inputs() < aux_width_) throw ArgumentError("layer narrower than the auxiliary input");
    if (l > 0 && layers_[l - 1].outputs() + aux_width_ != layer.inputs()) {
      throw ArgumentError("layer " + std::to_string(l) + " input width does not match previous layer");
    }
  }
}

Eigen::Index MaskedNetwork::input_width() const { return layers_.front().inputs() - aux_width_; }
Eigen::Index MaskedNetwork::output_width() const { return layers_.back().outputs(); }

Matrix MaskedNetwork::forward(const Matrix& input, const Matrix& aux, ForwardCache* cache,
                              std::span<const Matrix> masks) const {
  if (!masks.empty() && masks.size() != layers_.size()) throw ArgumentError("one mask per layer required");
  if (input.cols() != input_width()) {
    throw ArgumentError("network expects " + std::to_string(input_width()) + " inputs, got " +
                        std::to_string(input.cols()));
  }
  if (aux.cols() != aux_width_ || (aux_width_ > 0 && aux.rows() != input.rows())) {
    throw ArgumentError("auxiliary input has the wrong shape");
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre_activations.clear();
    cache->masked_weights.clear();
    cache->masks.clear();
    cache->aux = aux;
    cache->valid = false;
  }
  Matrix x = input;
  Matrix out;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const auto& layer = layers_[li];
    const Matrix& mask = masks.empty() ? layer.mask : masks[li];
    if (mask.rows() != layer.weights.rows() || mask.cols() != layer.weights.cols()) {
      throw ArgumentError("mask shape does not match layer " + std::to_string(li));
    }
    Matrix w = layer.weights.cwiseProduct(mask);
    const Eigen::Index main = layer.inputs() - aux_width_;
    Matrix z(x.rows(), layer.outputs());
    z.noalias() = x * w.leftCols(main).transpose();
    if (aux_width_ > 0) z.noalias() += aux * w.rightCols(aux_width_).transpose();
    z.rowwise() += layer.bias.transpose();
    apply_activation(layer.activation, z, out);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre_activations.push_back(std::move(z));
      cache->masked_weights.push_back(std::move(w));
      cache->masks.push_back(mask);
    }
    x = out;
  }
  check_finite(out, "network output");
  if (cache) cache->valid = true;
  return out;
}

Gradients MaskedNetwork::backward(const ForwardCache& cache, const Matrix& upstream, bool input_gradient) const {
  if (!cache.valid || cache.inputs.size() != layers_.size()) {
    throw StateError("backward called without a matching forward pass");
  }
  if (upstream.rows() != cache.pre_activations.back().rows() || upstream.cols() != output_width()) {
    throw ArgumentError("upstream gradient has the wrong shape");
  }
  Gradients g;
  g.weights.resize(layers_.size());
  g.biases.resize(layers_.size());
  g.aux = Matrix::Zero(upstream.rows(), aux_width_);

  Matrix da = upstream;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& layer = layers_[li];
    const Matrix& z = cache.pre_activations[li];
    Matrix dz;
    if (layer.activation == Activation::Elu) {
      dz = da.cwiseProduct(z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : std::exp(v); }));
    } else {
      dz = da;
    }
    const Eigen::Index main = layer.inputs() - aux_width_;
    Matrix dw(layer.outputs(), layer.inputs());
    dw.leftCols(main).noalias() = dz.transpose() * cache.inputs[li];
    if (aux_width_ > 0) {
      dw.rightCols(aux_width_).noalias() = dz.transpose() * cache.aux;
      g.aux.noalias() += dz * cache.masked_weights[li].rightCols(aux_width_);
    }
    g.weights[li] = dw.cwiseProduct(cache.masks[li]);
    g.biases[li] = dz.colwise().sum().transpose();
    if (li == 0 && !input_gradient) break;
    Matrix dx(dz.rows(), main);
    dx.noalias() = dz * cache.masked_weights[li].leftCols(main);
    da = std::move(dx);
  }
  if (input_gradient) g.input = std::move(da);
  return g;
}

std::vector<std::span<double>> MaskedNetwork::parameters() {
  std::vector<std::span<double>> out;
  for (auto& layer : layers_) {
    out.emplace_back(layer.weights.data(), static_cast<std::size_t>(layer.weights.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  return out;
}

std::vector<std::span<const double>> MaskedNetwork::gradient_spans(const Gradients& g) {
  std::vector<std::span<const double>> out;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    out.emplace_back(g.weights[l].data(), static_cast<std::size_t>(g.weights[l].size()));
    out.emplace_back(g.biases[l].data(), static_cast<std::size_t>(g.biases[l].size()));
  }
  return out;
}

std::size_t MaskedNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  return n;
}

AdamState::AdamState(AdamConfig config, const std::vector<std::size_t>& sizes) : config_(config) {
  for (auto s : sizes) {
    m_.emplace_back(s, 0.0);
    v_.emplace_back(s, 0.0);
  }
}

void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m_.size()) {
    throw ArgumentError("adam: parameter, gradient and state tensor counts differ");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size() || params[t].size() != state.m_[t].size()) {
      throw ArgumentError("adam: tensor " + std::to_string(t) + " shape mismatch");
    }
  }
  const auto& c = state.config_;
  state.step_count_ += 1;
  const double t = static_cast<double>(state.step_count_);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.m_[k];
    auto& v = state.v_[k];
    const auto& g = grads[k];
    auto& p = params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace deepspace::nn
