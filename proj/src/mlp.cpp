#include "v2n/mlp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace v2n {

namespace {

template <typename M>
void apply_activation(Activation a, M& z) {
  using T = typename M::Scalar;
  switch (a) {
    case Activation::kElu:
      z = (z.array().max(T(0)) + (z.array().min(T(0)).exp() - T(1))).matrix();
      break;
    case Activation::kTanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::kLinear:
      break;
  }
}

// d(activation)/dz expressed through the activation output y.
template <typename M>
void multiply_slope(Activation a, const M& y, M& delta) {
  using T = typename M::Scalar;
  switch (a) {
    case Activation::kElu:
      // y = e^z - 1 for z <= 0, so the slope e^z is y + 1 there.
      delta.array() *= (y.array() + T(1)).min(T(1));
      break;
    case Activation::kTanh:
      delta.array() *= T(1) - y.array().square();
      break;
    case Activation::kLinear:
      break;
  }
}

void check_width(const char* what, Eigen::Index got, int want) {
  if (got != want)
    throw std::invalid_argument(std::string(what) + ": expected width " + std::to_string(want) + ", got " +
                                std::to_string(got));
}

}  // namespace

template <typename T>
BasicMlp<T>::BasicMlp(std::vector<int> widths, Activation hidden, Activation output)
    : widths_(std::move(widths)), hidden_(hidden), output_(output) {
  if (widths_.size() < 2) throw std::invalid_argument("MlpNet: need at least input and output widths");
  for (int w : widths_)
    if (w < 1) throw std::invalid_argument("MlpNet: widths must be positive");
  layers_.resize(widths_.size() - 1);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weight = Matrix::Zero(widths_[l + 1], widths_[l]);
    layers_[l].bias = Vector::Zero(widths_[l + 1]);
  }
}

template <typename T>
BasicMlp<T> BasicMlp<T>::random(std::vector<int> widths, Activation hidden, Activation output, Rng& rng,
                                double final_scale) {
  BasicMlp net(std::move(widths), hidden, output);
  for (std::size_t l = 0; l < net.layers_.size(); ++l) {
    const bool last = l + 1 == net.layers_.size();
    const double bound = last ? final_scale : 1.0 / std::sqrt(static_cast<double>(net.widths_[l]));
    auto& layer = net.layers_[l];
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
        layer.weight(i, j) = static_cast<T>(rng.uniform(-bound, bound));
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = static_cast<T>(rng.uniform(-bound, bound));
  }
  return net;
}

template <typename T>
typename BasicMlp<T>::Matrix BasicMlp<T>::forward(const Matrix& x) const {
  check_width("MlpNet::forward", x.rows(), input_width());
  Matrix h = x;
  Matrix z;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    z.noalias() = layers_[l].weight * h;
    z.colwise() += layers_[l].bias;
    apply_activation(activation_of(l), z);
    h.swap(z);
  }
  return h;
}

template <typename T>
typename BasicMlp<T>::Matrix BasicMlp<T>::forward(const Matrix& x, Tape& tape) const {
  check_width("MlpNet::forward", x.rows(), input_width());
  tape.inputs.resize(layers_.size());
  tape.outputs.resize(layers_.size());
  const Matrix* h = &x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    tape.inputs[l] = *h;
    auto& z = tape.outputs[l];
    z.noalias() = layers_[l].weight * *h;
    z.colwise() += layers_[l].bias;
    apply_activation(activation_of(l), z);
    h = &z;
  }
  return tape.outputs.back();
}

template <typename T>
typename BasicMlp<T>::Matrix BasicMlp<T>::backward(const Tape& tape, const Matrix& upstream, Params* grads) const {
  if (tape.outputs.size() != layers_.size()) throw std::invalid_argument("MlpNet::backward: tape does not match net");
  check_width("MlpNet::backward", upstream.rows(), output_width());
  if (upstream.cols() != tape.outputs.back().cols())
    throw std::invalid_argument("MlpNet::backward: batch size mismatch");
  if (grads) grads->resize(layers_.size());

  Matrix delta = upstream;
  Matrix prev;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    multiply_slope(activation_of(l), tape.outputs[l], delta);
    if (grads) {
      (*grads)[l].weight.noalias() = delta * tape.inputs[l].transpose();
      (*grads)[l].bias = delta.rowwise().sum();
    }
    prev.noalias() = layers_[l].weight.transpose() * delta;
    delta.swap(prev);
  }
  return delta;
}

template <typename T>
std::size_t BasicMlp<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

template <typename T>
bool BasicMlp<T>::all_finite() const {
  for (const auto& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

template <typename T>
BasicLayerParams<T> zeros_like(const BasicLayerParams<T>& params) {
  BasicLayerParams<T> out(params.size());
  for (std::size_t l = 0; l < params.size(); ++l) {
    out[l].weight.setZero(params[l].weight.rows(), params[l].weight.cols());
    out[l].bias.setZero(params[l].bias.size());
  }
  return out;
}

template <typename T>
void polyak_update(BasicMlp<T>& target, const BasicMlp<T>& source, double tau) {
  if (target.widths() != source.widths()) throw std::invalid_argument("polyak_update: shape mismatch");
  auto& t = target.layers();
  const auto& s = source.layers();
  const T a = static_cast<T>(tau);
  const T b = static_cast<T>(1.0 - tau);
  for (std::size_t l = 0; l < t.size(); ++l) {
    t[l].weight = a * s[l].weight + b * t[l].weight;
    t[l].bias = a * s[l].bias + b * t[l].bias;
  }
}

template <typename T>
BasicAdam<T>::BasicAdam(const BasicMlp<T>& net, AdamConfig cfg)
    : cfg_(cfg), m_(zeros_like(net.layers())), v_(zeros_like(net.layers())) {}

template <typename T>
void BasicAdam<T>::step(BasicMlp<T>& net, const BasicLayerParams<T>& grads) {
  auto& layers = net.layers();
  if (grads.size() != layers.size() || m_.size() != layers.size())
    throw std::invalid_argument("Adam::step: gradient shape mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads[l].weight.rows() != layers[l].weight.rows() || grads[l].weight.cols() != layers[l].weight.cols() ||
        grads[l].bias.size() != layers[l].bias.size())
      throw std::invalid_argument("Adam::step: gradient shape mismatch");
    if (!grads[l].weight.allFinite() || !grads[l].bias.allFinite())
      throw std::domain_error("Adam::step: non-finite gradient in layer " + std::to_string(l));
  }

  ++t_;
  const T b1 = static_cast<T>(cfg_.beta1);
  const T b2 = static_cast<T>(cfg_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
  const T lr = static_cast<T>(cfg_.lr);
  const T eps = static_cast<T>(cfg_.eps);
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grads[l].weight, m_[l].weight, v_[l].weight);
    update(layers[l].bias, grads[l].bias, m_[l].bias, v_[l].bias);
  }
}

template class BasicMlp<float>;
template class BasicMlp<double>;
template class BasicAdam<float>;
template class BasicAdam<double>;
template BasicLayerParams<float> zeros_like(const BasicLayerParams<float>&);
template BasicLayerParams<double> zeros_like(const BasicLayerParams<double>&);
template void polyak_update(BasicMlp<float>&, const BasicMlp<float>&, double);
template void polyak_update(BasicMlp<double>&, const BasicMlp<double>&, double);

}  // namespace v2n
