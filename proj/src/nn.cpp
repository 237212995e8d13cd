#include "gito/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "gito/ops.hpp"

namespace gito {

double uniform(Rng& rng, double lo, double hi)
{
    const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * unit;
}

template <typename T>
Tensor<T> uniform_tensor(Rng& rng, Shape shape, double bound)
{
    std::vector<T> data(shape_size(shape));
    for (auto& v : data)
        v = static_cast<T>(uniform(rng, -bound, bound));
    return Tensor<T>(std::move(shape), std::move(data), true);
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = uniform_tensor<T>(rng, {in, out}, bound);
    if (bias)
        bias_ = uniform_tensor<T>(rng, {out}, bound);
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const
{
    Tensor<T> y = matmul(x, weight_);
    return bias_.defined() ? add(y, bias_) : y;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParameterList<T>& out) const
{
    out.emplace_back(prefix + ".weight", weight_);
    if (bias_.defined())
        out.emplace_back(prefix + ".bias", bias_);
}

template <typename T>
void Linear<T>::zero()
{
    for (auto& v : weight_.mutable_data())
        v = T(0);
    if (bias_.defined())
        for (auto& v : bias_.mutable_data())
            v = T(0);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t width)
    : gamma_(Tensor<T>::full({width}, T(1), true)), beta_(Tensor<T>::zeros({width}, true))
{
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const
{
    return layer_norm(x, gamma_, beta_);
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParameterList<T>& out) const
{
    out.emplace_back(prefix + ".gamma", gamma_);
    out.emplace_back(prefix + ".beta", beta_);
}

template <typename T>
Mlp<T>::Mlp(std::size_t in, std::size_t hidden, std::size_t out, std::size_t hidden_layers, Rng& rng)
{
    if (hidden_layers == 0)
        throw std::invalid_argument("an MLP needs at least one hidden layer");
    layers_.emplace_back(in, hidden, rng);
    for (std::size_t i = 1; i < hidden_layers; ++i)
        layers_.emplace_back(hidden, hidden, rng);
    layers_.emplace_back(hidden, out, rng);
}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const
{
    Tensor<T> h = x;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i)
        h = gelu(layers_[i](h));
    return layers_.back()(h);
}

template <typename T>
void Mlp<T>::collect(const std::string& prefix, ParameterList<T>& out) const
{
    for (std::size_t i = 0; i < layers_.size(); ++i)
        layers_[i].collect(prefix + "." + std::to_string(i), out);
}

template <typename T>
std::size_t parameter_count(const ParameterList<T>& params)
{
    std::size_t n = 0;
    for (const auto& [name, t] : params)
        n += t.size();
    return n;
}

template Tensor<float> uniform_tensor(Rng&, Shape, double);
template Tensor<double> uniform_tensor(Rng&, Shape, double);
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class Mlp<float>;
template class Mlp<double>;
template std::size_t parameter_count(const ParameterList<float>&);
template std::size_t parameter_count(const ParameterList<double>&);

}  // namespace gito
