#pragma once

#include <cstddef>
#include <vector>

#include "gito/attention.hpp"
#include "gito/nn.hpp"

namespace gito {

struct TnoConfig {
    std::size_t hidden = 96;
    std::size_t heads = 8;
    std::size_t depth = 2;
    bool self_attention = true;
    ExpertConfig moe;
};

/// Transformer operator over query embeddings: `depth` repetitions of
/// cross-attention onto every input-function embedding set, then
/// self-attention among the queries. Query coordinates gate every expert bank.
template <typename T>
class Tno {
public:
    Tno() = default;
    Tno(const TnoConfig& config, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& queries, const Tensor<T>& coords,
                         const std::vector<Tensor<T>>& inputs) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    const TnoConfig& config() const { return config_; }

private:
    TnoConfig config_;
    std::vector<AttentionBlock<T>> cross_;
    std::vector<AttentionBlock<T>> self_;
};

}  // namespace gito
