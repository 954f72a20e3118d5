#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "v2n/rng.hpp"

namespace v2n {

enum class Activation { kElu, kTanh, kLinear };

template <typename T>
struct BasicDenseLayer {
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> weight;  // out x in
  Eigen::Matrix<T, Eigen::Dynamic, 1> bias;                 // out
};

/// Parameter-shaped container used for gradients and optimizer moments.
template <typename T>
using BasicLayerParams = std::vector<BasicDenseLayer<T>>;

/// Dense feed-forward network. Inputs are column vectors; a batch is a matrix
/// with one sample per column.
template <typename T>
class BasicMlp {
 public:
  using Scalar = T;
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using Params = BasicLayerParams<T>;

  BasicMlp() = default;
  /// widths = {in, hidden..., out}; parameters start at zero.
  BasicMlp(std::vector<int> widths, Activation hidden, Activation output);

  /// Hidden layers ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); output layer ~ U(-final_scale, final_scale).
  static BasicMlp random(std::vector<int> widths, Activation hidden, Activation output, Rng& rng,
                         double final_scale = 3e-3);

  /// Activations kept from a forward pass for backward().
  struct Tape {
    std::vector<Matrix> inputs;   // input of each layer
    std::vector<Matrix> outputs;  // post-activation output of each layer
  };

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Tape& tape) const;

  /// Reverse-mode pass. `upstream` is dL/d(output) per sample (same shape as
  /// the forward output). Parameter gradients are summed over the batch into
  /// `grads` (overwritten) unless it is null. Returns dL/d(input).
  Matrix backward(const Tape& tape, const Matrix& upstream, Params* grads) const;

  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  std::size_t parameter_count() const;
  bool all_finite() const;

  Params& layers() { return layers_; }
  const Params& layers() const { return layers_; }

  /// Same network in another precision.
  template <typename U>
  BasicMlp<U> cast() const {
    BasicMlp<U> out(widths_, hidden_, output_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      out.layers()[l].weight = layers_[l].weight.template cast<U>();
      out.layers()[l].bias = layers_[l].bias.template cast<U>();
    }
    return out;
  }

 private:
  Activation activation_of(std::size_t layer) const {
    return layer + 1 == layers_.size() ? output_ : hidden_;
  }

  std::vector<int> widths_;
  Activation hidden_ = Activation::kElu;
  Activation output_ = Activation::kLinear;
  Params layers_;
};

using MlpNet = BasicMlp<double>;
using MlpNetF = BasicMlp<float>;
using DenseLayer = BasicDenseLayer<double>;
using LayerParams = BasicLayerParams<double>;

template <typename T>
BasicLayerParams<T> zeros_like(const BasicLayerParams<T>& params);

/// target <- tau*source + (1-tau)*target for every parameter.
template <typename T>
void polyak_update(BasicMlp<T>& target, const BasicMlp<T>& source, double tau);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction; step() descends along the given gradient.
template <typename T>
class BasicAdam {
 public:
  BasicAdam() = default;
  BasicAdam(const BasicMlp<T>& net, AdamConfig cfg);

  /// Throws std::domain_error on a non-finite gradient (parameters untouched).
  void step(BasicMlp<T>& net, const BasicLayerParams<T>& grads);

  long long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long long t_ = 0;
  BasicLayerParams<T> m_;
  BasicLayerParams<T> v_;
};

using Adam = BasicAdam<double>;

extern template class BasicMlp<float>;
extern template class BasicMlp<double>;
extern template class BasicAdam<float>;
extern template class BasicAdam<double>;

}  // namespace v2n
