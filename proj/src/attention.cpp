#include "gito/attention.hpp"

#include <stdexcept>

#include "gito/ops.hpp"

namespace gito {

void AttentionConfig::validate() const
{
    if (hidden == 0 || heads == 0 || hidden % heads != 0)
        throw std::invalid_argument("attention hidden size " + std::to_string(hidden) +
                                    " must be a positive multiple of the head count " + std::to_string(heads));
}

template <typename T>
Tensor<T> linear_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v)
{
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("linear_attention expects 2-D Q, K, V");
    if (k.rows() != v.rows())
        throw ShapeError("linear_attention: K " + shape_to_string(k.shape()) + " and V " +
                         shape_to_string(v.shape()) + " differ in row count");
    if (q.cols() != k.cols())
        throw ShapeError("linear_attention: Q " + shape_to_string(q.shape()) + " and K " +
                         shape_to_string(k.shape()) + " differ in feature size");
    Tensor<T> qs = softmax(q, 1);
    Tensor<T> ks = softmax(k, 1);
    Tensor<T> kv = matmul(transpose(ks), v);                  // d x d_v
    Tensor<T> key_total = transpose(sum_axis(ks, 0));          // d x 1
    Tensor<T> numerator = matmul(qs, kv);                      // n_q x d_v
    Tensor<T> normaliser = clamp_min(matmul(qs, key_total), static_cast<T>(kAttentionFloor));
    return div(numerator, repeat_cols(normaliser, v.cols()));
}

template <typename T>
Tensor<T> multi_head_linear_attention(const Tensor<T>& q, const std::vector<Tensor<T>>& keys,
                                      const std::vector<Tensor<T>>& values, std::size_t heads)
{
    if (keys.empty())
        throw std::invalid_argument("attention needs at least one key/value set");
    if (keys.size() != values.size())
        throw std::invalid_argument("key and value lists differ in length");
    const std::size_t width = q.cols();
    if (heads == 0 || width % heads != 0)
        throw ShapeError("width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) + " heads");
    const std::size_t dh = width / heads;
    std::vector<Tensor<T>> merged;
    merged.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor<T> qh = heads == 1 ? q : slice_last(q, h * dh, dh);
        Tensor<T> acc;
        for (std::size_t s = 0; s < keys.size(); ++s) {
            Tensor<T> kh = heads == 1 ? keys[s] : slice_last(keys[s], h * dh, dh);
            Tensor<T> vh = heads == 1 ? values[s] : slice_last(values[s], h * dh, dh);
            Tensor<T> out = linear_attention(qh, kh, vh);
            acc = acc.defined() ? add(acc, out) : out;
        }
        if (keys.size() > 1)
            acc = mul_scalar(acc, T(1) / static_cast<T>(keys.size()));
        merged.push_back(acc);
    }
    return heads == 1 ? merged.front() : concat(merged);
}

template <typename T>
MixtureOfExperts<T>::MixtureOfExperts(std::size_t width, const ExpertConfig& config, Rng& rng) : width_(width)
{
    if (config.experts == 0)
        throw std::invalid_argument("a mixture of experts needs at least one expert");
    for (std::size_t e = 0; e < config.experts; ++e)
        experts_.emplace_back(width, config.expansion * width, width, 2, rng);
    gate_ = Mlp<T>(config.coord_dim, config.gate_hidden, config.experts, 1, rng);
}

template <typename T>
Tensor<T> MixtureOfExperts<T>::gate_weights(const Tensor<T>& coords) const
{
    return softmax(gate_(coords), 1);
}

template <typename T>
Tensor<T> MixtureOfExperts<T>::operator()(const Tensor<T>& x, const Tensor<T>& coords) const
{
    if (coords.rows() != x.rows())
        throw ShapeError("mixture of experts: coords " + shape_to_string(coords.shape()) + " not row-aligned with " +
                         shape_to_string(x.shape()));
    Tensor<T> gates = gate_weights(coords);
    Tensor<T> out;
    for (std::size_t e = 0; e < experts_.size(); ++e) {
        Tensor<T> weighted = mul(experts_[e](x), repeat_cols(slice_last(gates, e, 1), width_));
        out = out.defined() ? add(out, weighted) : weighted;
    }
    return out;
}

template <typename T>
void MixtureOfExperts<T>::collect(const std::string& prefix, ParameterList<T>& out) const
{
    for (std::size_t e = 0; e < experts_.size(); ++e)
        experts_[e].collect(prefix + ".expert" + std::to_string(e), out);
    gate_.collect(prefix + ".gate", out);
}

template <typename T>
AttentionBlock<T>::AttentionBlock(const BlockConfig& config, Rng& rng)
    : config_(config), norm_in_(config.width), norm_ffn_(config.width)
{
    AttentionConfig{config.width, config.heads}.validate();
    if (config.cross)
        norm_context_ = LayerNorm<T>(config.width);
    wq_ = Linear<T>(config.width, config.width, rng);
    wk_ = Linear<T>(config.width, config.width, rng);
    wv_ = Linear<T>(config.width, config.width, rng);
    wo_ = Linear<T>(config.width, config.width, rng);
    moe_ = MixtureOfExperts<T>(config.width, config.moe, rng);
}

template <typename T>
Tensor<T> AttentionBlock<T>::attention(const Tensor<T>& x, const std::vector<Tensor<T>>& contexts) const
{
    Tensor<T> normed = norm_in_(x);
    Tensor<T> q = wq_(normed);
    std::vector<Tensor<T>> keys, values;
    if (config_.cross) {
        if (contexts.empty())
            throw std::invalid_argument("cross-attention needs at least one context");
        for (const auto& c : contexts) {
            Tensor<T> cn = norm_context_(c);
            keys.push_back(wk_(cn));
            values.push_back(wv_(cn));
        }
    } else {
        if (!contexts.empty())
            throw std::invalid_argument("self-attention block given a context");
        keys.push_back(wk_(normed));
        values.push_back(wv_(normed));
    }
    return wo_(multi_head_linear_attention(q, keys, values, config_.heads));
}

template <typename T>
Tensor<T> AttentionBlock<T>::operator()(const Tensor<T>& x, const Tensor<T>& coords,
                                        const std::vector<Tensor<T>>& contexts) const
{
    Tensor<T> h = add(x, attention(x, contexts));
    return add(h, moe_(norm_ffn_(h), coords));
}

template <typename T>
void AttentionBlock<T>::collect(const std::string& prefix, ParameterList<T>& out) const
{
    norm_in_.collect(prefix + ".norm_in", out);
    if (config_.cross)
        norm_context_.collect(prefix + ".norm_context", out);
    wq_.collect(prefix + ".wq", out);
    wk_.collect(prefix + ".wk", out);
    wv_.collect(prefix + ".wv", out);
    wo_.collect(prefix + ".wo", out);
    norm_ffn_.collect(prefix + ".norm_ffn", out);
    moe_.collect(prefix + ".moe", out);
}

template Tensor<float> linear_attention(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> linear_attention(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template Tensor<float> multi_head_linear_attention(const Tensor<float>&, const std::vector<Tensor<float>>&,
                                                   const std::vector<Tensor<float>>&, std::size_t);
template Tensor<double> multi_head_linear_attention(const Tensor<double>&, const std::vector<Tensor<double>>&,
                                                    const std::vector<Tensor<double>>&, std::size_t);
template class MixtureOfExperts<float>;
template class MixtureOfExperts<double>;
template class AttentionBlock<float>;
template class AttentionBlock<double>;

}  // namespace gito
