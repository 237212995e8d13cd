#include "gito/tno.hpp"

#include <stdexcept>

namespace gito {

template <typename T>
Tno<T>::Tno(const TnoConfig& config, Rng& rng) : config_(config)
{
    if (config.depth == 0)
        throw std::invalid_argument("operator depth must be at least 1");
    for (std::size_t l = 0; l < config.depth; ++l) {
        cross_.emplace_back(BlockConfig{config.hidden, config.heads, true, config.moe}, rng);
        if (config.self_attention)
            self_.emplace_back(BlockConfig{config.hidden, config.heads, false, config.moe}, rng);
    }
}

template <typename T>
Tensor<T> Tno<T>::operator()(const Tensor<T>& queries, const Tensor<T>& coords,
                             const std::vector<Tensor<T>>& inputs) const
{
    if (inputs.empty())
        throw std::invalid_argument("operator needs at least one input-function embedding");
    Tensor<T> x = queries;
    for (std::size_t l = 0; l < cross_.size(); ++l) {
        x = cross_[l](x, coords, inputs);
        if (config_.self_attention)
            x = self_[l](x, coords);
    }
    return x;
}

template <typename T>
void Tno<T>::collect(const std::string& prefix, ParameterList<T>& out) const
{
    for (std::size_t l = 0; l < cross_.size(); ++l) {
        cross_[l].collect(prefix + ".layer" + std::to_string(l) + ".cross", out);
        if (config_.self_attention)
            self_[l].collect(prefix + ".layer" + std::to_string(l) + ".self", out);
    }
}

template class Tno<float>;
template class Tno<double>;

}  // namespace gito
