#include "gito/hgt.hpp"

#include <cmath>
#include <stdexcept>

#include "gito/ops.hpp"

namespace gito {

template <typename T>
void HgtState<T>::validate() const
{
    if (topology == nullptr)
        throw std::invalid_argument("graph state has no topology");
    if (!nodes.defined() || nodes.rank() != 2 || nodes.rows() != topology->num_nodes)
        throw ShapeError("node embeddings do not match the " + std::to_string(topology->num_nodes) + "-node topology");
    const std::size_t m = topology->num_edges();
    if (m == 0 ? edges.defined() : (!edges.defined() || edges.rank() != 2 || edges.rows() != m))
        throw ShapeError("edge embeddings do not match the " + std::to_string(m) + "-edge topology");
}

template <typename T>
GatV2Layer<T>::GatV2Layer(std::size_t width, std::size_t heads, std::size_t mlp_hidden, std::size_t mlp_layers,
                          Rng& rng)
    : width_(width), heads_(heads)
{
    AttentionConfig{width, heads}.validate();
    w_recv_ = Linear<T>(width, width, rng);
    w_send_ = Linear<T>(width, width, rng, false);
    w_edge_ = Linear<T>(width, width, rng, false);
    attn_ = uniform_tensor<T>(rng, {width}, 1.0 / std::sqrt(static_cast<double>(width / heads)));
    w_self_ = Linear<T>(width, width, rng);
    w_msg_node_ = Linear<T>(width, width, rng);
    w_msg_edge_ = Linear<T>(width, width, rng, false);
    edge_mlp_ = Mlp<T>(3 * width, mlp_hidden, width, mlp_layers, rng);
    std::vector<T> pool(width * heads, T(0));
    const std::size_t dh = width / heads;
    for (std::size_t c = 0; c < width; ++c)
        pool[c * heads + c / dh] = T(1);
    head_pool_ = Tensor<T>({width, heads}, std::move(pool));
}

template <typename T>
Tensor<T> GatV2Layer<T>::logits(const HgtState<T>& state) const
{
    const auto& topo = *state.topology;
    Tensor<T> pre = add(add(gather_rows(w_recv_(state.nodes), std::span<const Index>(topo.receivers)),
                            gather_rows(w_send_(state.nodes), std::span<const Index>(topo.senders))),
                        w_edge_(state.edges));
    return matmul(mul(leaky_relu(pre, T(0.2)), attn_), head_pool_);
}

template <typename T>
Tensor<T> GatV2Layer<T>::attention_weights(const HgtState<T>& state) const
{
    state.validate();
    if (state.topology->num_edges() == 0)
        throw std::invalid_argument("attention weights of an edgeless graph");
    return segment_softmax(logits(state), std::span<const Index>(state.topology->receivers),
                           state.topology->num_nodes);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> GatV2Layer<T>::operator()(const HgtState<T>& state) const
{
    state.validate();
    const auto& topo = *state.topology;
    Tensor<T> self = w_self_(state.nodes);
    if (topo.num_edges() == 0)
        return {self, Tensor<T>()};
    std::span<const Index> recv(topo.receivers), send(topo.senders);
    Tensor<T> alpha = segment_softmax(logits(state), recv, topo.num_nodes);
    Tensor<T> message = add(gather_rows(w_msg_node_(state.nodes), send), w_msg_edge_(state.edges));
    Tensor<T> weighted = mul(message, matmul(alpha, transpose(head_pool_)));
    Tensor<T> local = add(self, scatter_add_rows(weighted, recv, topo.num_nodes));
    Tensor<T> edge_in = concat<T>({gather_rows(state.nodes, recv), gather_rows(state.nodes, send), state.edges});
    return {local, add(state.edges, edge_mlp_(edge_in))};
}

template <typename T>
void GatV2Layer<T>::collect(const std::string& prefix, ParameterList<T>& out) const
{
    w_recv_.collect(prefix + ".w_recv", out);
    w_send_.collect(prefix + ".w_send", out);
    w_edge_.collect(prefix + ".w_edge", out);
    out.emplace_back(prefix + ".attn", attn_);
    w_self_.collect(prefix + ".w_self", out);
    w_msg_node_.collect(prefix + ".w_msg_node", out);
    w_msg_edge_.collect(prefix + ".w_msg_edge", out);
    edge_mlp_.collect(prefix + ".edge_mlp", out);
}

template <typename T>
HgtBlock<T>::HgtBlock(const HgtConfig& config, Rng& rng) : config_(config)
{
    const std::size_t w = config.width;
    gnn_ = GatV2Layer<T>(w, config.heads, config.mlp_hidden, config.mlp_layers, rng);
    global_ = AttentionBlock<T>(BlockConfig{w, config.heads, false, config.moe}, rng);
    if (config.fusion) {
        fusion_ = AttentionBlock<T>(BlockConfig{2 * w, config.heads, false, config.moe}, rng);
        fusion_out_ = Linear<T>(2 * w, w, rng);
    } else {
        ffn_ = Mlp<T>(w, config.moe.expansion * w, w, 2, rng);
    }
}

template <typename T>
Tensor<T> HgtBlock<T>::fuse(const Tensor<T>& local, const Tensor<T>& global, const Tensor<T>& coords) const
{
    if (config_.fusion)
        return fusion_out_(fusion_(concat<T>({local, global}), coords));
    return ffn_(add(local, global));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> HgtBlock<T>::operator()(const HgtState<T>& state, const Tensor<T>& coords) const
{
    auto [local, edges] = gnn_(state);
    Tensor<T> global = global_(state.nodes, coords);
    return {fuse(local, global, coords), edges};
}

template <typename T>
void HgtBlock<T>::collect(const std::string& prefix, ParameterList<T>& out) const
{
    gnn_.collect(prefix + ".gnn", out);
    global_.collect(prefix + ".global", out);
    if (config_.fusion) {
        fusion_.collect(prefix + ".fusion", out);
        fusion_out_.collect(prefix + ".fusion_out", out);
    } else {
        ffn_.collect(prefix + ".ffn", out);
    }
}

template struct HgtState<float>;
template struct HgtState<double>;
template class GatV2Layer<float>;
template class GatV2Layer<double>;
template class HgtBlock<float>;
template class HgtBlock<double>;

}  // namespace gito
