#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gito/tensor.hpp"

namespace gito {

using Rng = std::mt19937_64;

template <typename T>
using ParameterList = std::vector<std::pair<std::string, Tensor<T>>>;

/// Uniform draw on [lo, hi) from the top 53 bits, identical on every platform.
double uniform(Rng& rng, double lo, double hi);

template <typename T>
Tensor<T> uniform_tensor(Rng& rng, Shape shape, double bound);

/// y = x W + b, W stored as in x out.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    std::size_t in_features() const { return weight_.rows(); }
    std::size_t out_features() const { return weight_.cols(); }
    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    bool has_bias() const { return bias_.defined(); }
    /// Sets weight and bias to zero.
    void zero();

private:
    Tensor<T> weight_;
    Tensor<T> bias_;
};

template <typename T>
class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::size_t width);

    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

private:
    Tensor<T> gamma_;
    Tensor<T> beta_;
};

/// in -> hidden -> ... -> hidden -> out with GELU between layers and a linear
/// output. `hidden_layers` counts the hidden activations (>= 1).
template <typename T>
class Mlp {
public:
    Mlp() = default;
    Mlp(std::size_t in, std::size_t hidden, std::size_t out, std::size_t hidden_layers, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    std::size_t in_features() const { return layers_.front().in_features(); }
    std::size_t out_features() const { return layers_.back().out_features(); }
    Linear<T>& output_layer() { return layers_.back(); }
    std::vector<Linear<T>>& layers() { return layers_; }

private:
    std::vector<Linear<T>> layers_;
};

template <typename T>
std::size_t parameter_count(const ParameterList<T>& params);

}  // namespace gito
