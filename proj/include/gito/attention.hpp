#pragma once

#include <cstddef>
#include <vector>

#include "gito/nn.hpp"

namespace gito {

struct AttentionConfig {
    std::size_t hidden = 96;
    std::size_t heads = 8;

    std::size_t head_dim() const { return hidden / heads; }
    /// Throws std::invalid_argument unless hidden is a positive multiple of heads.
    void validate() const;
};

/// Floor applied to the linear-attention normaliser.
inline constexpr double kAttentionFloor = 1e-12;

/// Normalised linear attention for one head:
///   out_i = (q~_i . sum_j k~_j v_j^T) / (q~_i . sum_j k~_j)
/// with q~, k~ the row-wise softmax of Q and K over features. No n_q x n_k
/// matrix is ever formed.
template <typename T>
Tensor<T> linear_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);

/// Splits Q and every (K, V) pair into `heads` column groups, runs
/// linear_attention per group against each pair, averages over the pairs and
/// concatenates the heads back together.
template <typename T>
Tensor<T> multi_head_linear_attention(const Tensor<T>& q, const std::vector<Tensor<T>>& keys,
                                      const std::vector<Tensor<T>>& values, std::size_t heads);

/// Shape of a gated expert bank.
struct ExpertConfig {
    std::size_t experts = 2;
    std::size_t expansion = 3;     // expert hidden width = expansion * block width
    std::size_t coord_dim = 2;
    std::size_t gate_hidden = 96;
};

/// Softmax-gated mixture of feed-forward experts; the gate reads only the
/// spatial coordinates of each row.
template <typename T>
class MixtureOfExperts {
public:
    MixtureOfExperts() = default;
    MixtureOfExperts(std::size_t width, const ExpertConfig& config, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& coords) const;
    /// n x experts, rows sum to one.
    Tensor<T> gate_weights(const Tensor<T>& coords) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    std::size_t experts() const { return experts_.size(); }
    std::vector<Mlp<T>>& expert_networks() { return experts_; }

private:
    std::size_t width_ = 0;
    std::vector<Mlp<T>> experts_;
    Mlp<T> gate_;
};

struct BlockConfig {
    std::size_t width = 96;
    std::size_t heads = 8;
    bool cross = false;
    ExpertConfig moe;
};

/// Pre-norm residual attention block ("Norm-Attn-MLP-Norm"):
///   x <- x + W_o Attn(LN(x) W_q, LN(ctx) W_k, LN(ctx) W_v)
///   x <- x + MoE(LN(x), coords)
/// Self-attention uses LN(x) as the context. Cross-attention accepts a list
/// of contexts that share the key/value projections; per-head results are
/// averaged across the list.
template <typename T>
class AttentionBlock {
public:
    AttentionBlock() = default;
    AttentionBlock(const BlockConfig& config, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& coords,
                         const std::vector<Tensor<T>>& contexts = {}) const;
    /// The attention sub-layer alone, before the residual: W_o Attn(...).
    Tensor<T> attention(const Tensor<T>& x, const std::vector<Tensor<T>>& contexts = {}) const;

    void collect(const std::string& prefix, ParameterList<T>& out) const;

    bool is_cross() const { return config_.cross; }
    const BlockConfig& config() const { return config_; }
    Linear<T>& output_projection() { return wo_; }
    Linear<T>& value_projection() { return wv_; }
    MixtureOfExperts<T>& moe() { return moe_; }

private:
    BlockConfig config_;
    LayerNorm<T> norm_in_;
    LayerNorm<T> norm_context_;
    LayerNorm<T> norm_ffn_;
    Linear<T> wq_, wk_, wv_, wo_;
    MixtureOfExperts<T> moe_;
};

}  // namespace gito
