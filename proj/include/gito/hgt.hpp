#pragma once

#include <cstddef>
#include <utility>

#include "gito/attention.hpp"
#include "gito/graph.hpp"
#include "gito/nn.hpp"

namespace gito {

/// Node and edge embeddings over a fixed topology. `edges` is undefined when
/// the graph has no edges.
template <typename T>
struct HgtState {
    Tensor<T> nodes;
    Tensor<T> edges;
    const GraphTopology* topology = nullptr;

    /// Throws ShapeError if the row counts disagree with the topology.
    void validate() const;
};

/// GATv2 layer with edge features. Per receiver i and incoming edge j:
///   logit_ij = a . LeakyReLU(W_r V_i + W_s V_j + W_e E_ij), per head
///   alpha    = softmax of logits over the edges entering i
///   V_G,i    = W_self V_i + sum_j alpha_ij (W_n V_j + W_m E_ij)
///   E'_ij    = E_ij + MLP([V_i, V_j, E_ij])
template <typename T>
class GatV2Layer {
public:
    GatV2Layer() = default;
    GatV2Layer(std::size_t width, std::size_t heads, std::size_t mlp_hidden, std::size_t mlp_layers, Rng& rng);

    /// Returns (V_G, E').
    std::pair<Tensor<T>, Tensor<T>> operator()(const HgtState<T>& state) const;
    /// M x heads attention weights; each receiver's column sums to one.
    Tensor<T> attention_weights(const HgtState<T>& state) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    std::size_t heads() const { return heads_; }
    Linear<T>& self_transform() { return w_self_; }

private:
    Tensor<T> logits(const HgtState<T>& state) const;

    std::size_t width_ = 0;
    std::size_t heads_ = 1;
    Linear<T> w_recv_, w_send_, w_edge_;
    Tensor<T> attn_;
    Linear<T> w_self_;
    Linear<T> w_msg_node_, w_msg_edge_;
    Mlp<T> edge_mlp_;
    Tensor<T> head_pool_;  // width x heads indicator, constant
};

struct HgtConfig {
    std::size_t width = 96;  // block input/output width
    std::size_t heads = 8;
    std::size_t mlp_hidden = 96;
    std::size_t mlp_layers = 2;
    /// Concatenate V_G and V_T and fuse with attention at 2 x width (true),
    /// or sum them and apply a feed-forward MLP at width (false).
    bool fusion = true;
    ExpertConfig moe;
};

/// Hybrid graph transformer block: local message passing and global linear
/// self-attention in parallel, merged by the fusion stage.
template <typename T>
class HgtBlock {
public:
    HgtBlock() = default;
    HgtBlock(const HgtConfig& config, Rng& rng);

    /// Returns (V_hat, E'); `coords` feeds the expert gates.
    std::pair<Tensor<T>, Tensor<T>> operator()(const HgtState<T>& state, const Tensor<T>& coords) const;
    /// Merges the two branch outputs.
    Tensor<T> fuse(const Tensor<T>& local, const Tensor<T>& global, const Tensor<T>& coords) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    const HgtConfig& config() const { return config_; }
    GatV2Layer<T>& gnn() { return gnn_; }
    AttentionBlock<T>& global_attention() { return global_; }
    Mlp<T>& feed_forward() { return ffn_; }

private:
    HgtConfig config_;
    GatV2Layer<T> gnn_;
    AttentionBlock<T> global_;
    AttentionBlock<T> fusion_;
    Linear<T> fusion_out_;
    Mlp<T> ffn_;
};

}  // namespace gito
