#include "gito/model.hpp"

#include <sstream>
#include <stdexcept>

#include "gito/ops.hpp"

namespace gito {

namespace {

template <typename T>
Tensor<T> to_tensor(const FeatureMatrix& m)
{
    return Tensor<T>({m.rows, m.cols}, std::vector<T>(m.data.begin(), m.data.end()));
}

template <typename T>
Tensor<T> coords_tensor(const PointCloud& cloud)
{
    return Tensor<T>({cloud.size(), cloud.dim()}, std::vector<T>(cloud.coords().begin(), cloud.coords().end()));
}

template <typename T>
Tensor<T> edge_tensor(const GraphTopology& topology, const PointCloud& normalized)
{
    if (topology.num_edges() == 0)
        return Tensor<T>();
    FeatureMatrix nodes, edges;
    compute_features(topology, normalized, nodes, edges);
    return to_tensor<T>(edges);
}

}  // namespace

GraphTopology branch_topology(const PointCloud& cloud, const GraphStrategy& strategy)
{
    if (strategy.kind == GraphStrategy::Kind::knn) {
        const std::size_t k = std::min(strategy.k, cloud.size() - 1);
        if (k == 0)
            return GraphTopology{cloud.size(), {}, {}};
        return knn_topology(cloud, k);
    }
    return radius_topology(cloud, strategy.radius);
}

template <typename T>
PreparedSample<T> prepare_sample(const Sample& sample, const NormalizationStats& stats, const ModelConfig& config)
{
    sample.validate();
    if (sample.inputs.size() != config.input_function_count)
        throw std::invalid_argument("sample has " + std::to_string(sample.inputs.size()) +
                                    " input functions, model expects " +
                                    std::to_string(config.input_function_count));
    if (sample.queries.dim() != config.coord_dim)
        throw std::invalid_argument("sample is " + std::to_string(sample.queries.dim()) + "-D, model expects " +
                                    std::to_string(config.coord_dim) + "-D");
    for (std::size_t f = 0; f < sample.inputs.size(); ++f)
        if (sample.inputs[f].channels() != config.input_channels[f])
            throw std::invalid_argument("input function " + std::to_string(f) + " has " +
                                        std::to_string(sample.inputs[f].channels()) + " channels, model expects " +
                                        std::to_string(config.input_channels[f]));
    if (sample.has_targets() && sample.targets.cols != config.output_field_count)
        throw std::invalid_argument("sample has " + std::to_string(sample.targets.cols) +
                                    " target channels, model predicts " + std::to_string(config.output_field_count));

    PreparedSample<T> out;
    const PointCloud queries = normalize_queries(sample.queries, stats);
    out.query_coords = coords_tensor<T>(queries);
    if (config.n_hgt_blocks > 0) {
        out.query_topology = branch_topology(sample.queries, config.query_graph);
        out.query_edges = edge_tensor<T>(out.query_topology, queries);
    } else {
        out.query_topology = GraphTopology{queries.size(), {}, {}};
    }
    for (std::size_t f = 0; f < sample.inputs.size(); ++f) {
        const PointCloud input = normalize_input(sample.inputs[f], f, stats);
        const std::size_t d = input.dim(), c = input.channels();
        std::vector<T> nodes;
        nodes.reserve(input.size() * (d + c));
        for (std::size_t i = 0; i < input.size(); ++i) {
            for (std::size_t a = 0; a < d; ++a)
                nodes.push_back(static_cast<T>(input.coord(i, a)));
            for (std::size_t ch = 0; ch < c; ++ch)
                nodes.push_back(static_cast<T>(input.value(i, ch)));
        }
        out.input_nodes.emplace_back(Shape{input.size(), d + c}, std::move(nodes));
        out.input_coords.push_back(coords_tensor<T>(input));
        if (config.apply_hgt_to_inputs && config.n_hgt_blocks > 0) {
            out.input_topologies.push_back(branch_topology(sample.inputs[f], config.input_graph));
            out.input_edges.push_back(edge_tensor<T>(out.input_topologies.back(), input));
        }
    }
    if (sample.has_targets())
        out.targets = to_tensor<T>(normalize_targets(sample.targets, stats));
    return out;
}

template <typename T>
Branch<T>::Branch(std::size_t node_features, std::size_t edge_features, std::size_t blocks, const HgtConfig& hgt,
                  std::size_t out_width, std::size_t mlp_hidden, std::size_t mlp_layers, Rng& rng)
{
    const std::size_t width = blocks > 0 ? hgt.width : out_width;
    node_encoder_ = Mlp<T>(node_features, mlp_hidden, width, mlp_layers, rng);
    if (blocks > 0) {
        edge_encoder_ = Mlp<T>(edge_features, mlp_hidden, width, mlp_layers, rng);
        for (std::size_t b = 0; b < blocks; ++b)
            blocks_.emplace_back(hgt, rng);
    }
    if (width != out_width)
        projection_.emplace(width, out_width, rng);
}

template <typename T>
Tensor<T> Branch<T>::operator()(const Tensor<T>& nodes, const Tensor<T>& edges, const GraphTopology* topology,
                                const Tensor<T>& coords) const
{
    Tensor<T> v = node_encoder_(nodes);
    if (!blocks_.empty()) {
        Tensor<T> e = edges.defined() ? edge_encoder_(edges) : Tensor<T>();
        for (const auto& block : blocks_) {
            auto [next_v, next_e] = block(HgtState<T>{v, e, topology}, coords);
            v = next_v;
            e = next_e;
        }
    }
    return projection_ ? (*projection_)(v) : v;
}

template <typename T>
void Branch<T>::collect(const std::string& prefix, ParameterList<T>& out) const
{
    node_encoder_.collect(prefix + ".node_encoder", out);
    if (!blocks_.empty())
        edge_encoder_.collect(prefix + ".edge_encoder", out);
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        blocks_[b].collect(prefix + ".hgt" + std::to_string(b), out);
    if (projection_)
        projection_->collect(prefix + ".projection", out);
}

template <typename T>
GitoModel<T>::GitoModel(const ModelConfig& config, std::uint64_t seed) : config_(config)
{
    config.validate();
    Rng rng(seed);
    const std::size_t h = config.hidden_size, d = config.coord_dim;
    const std::size_t mh = config.mlp_hidden, ml = config.mlp_layers;
    const ExpertConfig experts{config.n_experts, config.expert_expansion, d, mh};
    HgtConfig hgt;
    hgt.width = config.fusion ? h : 2 * h;
    hgt.heads = config.n_heads;
    hgt.mlp_hidden = mh;
    hgt.mlp_layers = ml;
    hgt.fusion = config.fusion;
    hgt.moe = experts;
    if (!config.moe_in_hgt)
        hgt.moe.experts = 1;

    query_branch_ = Branch<T>(d, d + 1, config.n_hgt_blocks, hgt, h, mh, ml, rng);
    for (std::size_t f = 0; f < config.input_function_count; ++f) {
        const std::size_t c = config.input_channels[f];
        const std::size_t blocks = config.apply_hgt_to_inputs ? config.n_hgt_blocks : 0;
        input_branches_.emplace_back(d + c, d + 1 + c, blocks, hgt, h, mh, ml, rng);
    }
    tno_ = Tno<T>(TnoConfig{h, config.n_heads, config.n_attention_layers, config.tno_self_attention, experts}, rng);
    decoder_ = Mlp<T>(h, mh, config.output_field_count, ml, rng);
    decoder_.output_layer().zero();

    query_branch_.collect("query", parameters_);
    for (std::size_t f = 0; f < input_branches_.size(); ++f)
        input_branches_[f].collect("input" + std::to_string(f), parameters_);
    tno_.collect("tno", parameters_);
    decoder_.collect("decoder", parameters_);
}

template <typename T>
std::size_t GitoModel<T>::parameter_count() const
{
    return gito::parameter_count(parameters_);
}

template <typename T>
Tensor<T> GitoModel<T>::forward(const PreparedSample<T>& sample) const
{
    if (sample.input_nodes.size() != input_branches_.size())
        throw std::invalid_argument("sample has " + std::to_string(sample.input_nodes.size()) +
                                    " input functions, model expects " + std::to_string(input_branches_.size()));
    Tensor<T> queries = query_branch_(sample.query_coords, sample.query_edges, &sample.query_topology,
                                      sample.query_coords);
    std::vector<Tensor<T>> inputs;
    for (std::size_t f = 0; f < input_branches_.size(); ++f) {
        const bool graph = input_branches_[f].uses_graph();
        if (graph && sample.input_topologies.size() != input_branches_.size())
            throw std::invalid_argument("sample was prepared without input-function graphs");
        inputs.push_back(input_branches_[f](sample.input_nodes[f], graph ? sample.input_edges[f] : Tensor<T>(),
                                            graph ? &sample.input_topologies[f] : nullptr,
                                            sample.input_coords[f]));
    }
    return decoder_(tno_(queries, sample.query_coords, inputs));
}

template <typename T>
FeatureMatrix predict(const GitoModel<T>& model, const Sample& sample, const NormalizationStats& stats)
{
    Sample bare = sample;
    bare.targets = FeatureMatrix{};
    Tensor<T> out = model.forward(prepare_sample<T>(bare, stats, model.config()));
    FeatureMatrix normalized{out.rows(), out.cols(), std::vector<double>(out.data().begin(), out.data().end())};
    FeatureMatrix physical = denormalize(normalized, stats);
    for (auto& v : physical.data)
        v = static_cast<double>(static_cast<T>(v));
    return physical;
}

std::string join_sections(const std::vector<std::pair<std::string, std::string>>& sections)
{
    std::string out;
    for (const auto& [name, body] : sections) {
        out += "[" + name + "]\n" + body;
        if (!body.empty() && body.back() != '\n')
            out += '\n';
    }
    return out;
}

std::map<std::string, std::string> split_sections(const std::string& header)
{
    std::map<std::string, std::string> out;
    std::stringstream stream(header);
    std::string line, current;
    bool open = false;
    while (std::getline(stream, line)) {
        if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
            current = line.substr(1, line.size() - 2);
            out[current];
            open = true;
            continue;
        }
        if (!open)
            throw std::invalid_argument("checkpoint header text before the first section");
        out[current] += line + '\n';
    }
    return out;
}

template <typename T>
Checkpoint model_checkpoint(const GitoModel<T>& model, const ExperimentConfig& config, const NormalizationStats& stats,
                            const std::string& state)
{
    Checkpoint out;
    std::vector<std::pair<std::string, std::string>> sections{{"config", config.to_text()},
                                                              {"stats", stats.to_text()}};
    if (!state.empty())
        sections.emplace_back("state", state);
    out.header = join_sections(sections);
    for (const auto& [name, tensor] : model.parameters())
        out.tensors.push_back(store_tensor(name, tensor));
    return out;
}

template <typename T>
void load_parameters(GitoModel<T>& model, const Checkpoint& checkpoint)
{
    for (const auto& [name, tensor] : model.parameters()) {
        const StoredTensor* stored = checkpoint.find(name);
        if (stored == nullptr)
            throw std::invalid_argument("checkpoint lacks parameter '" + name + "'");
        Tensor<T> target = tensor;
        restore_tensor(*stored, target);
    }
}

#define GITO_INSTANTIATE_MODEL(T)                                                                                  \
    template PreparedSample<T> prepare_sample<T>(const Sample&, const NormalizationStats&, const ModelConfig&);   \
    template class Branch<T>;                                                                                      \
    template class GitoModel<T>;                                                                                   \
    template FeatureMatrix predict(const GitoModel<T>&, const Sample&, const NormalizationStats&);                 \
    template Checkpoint model_checkpoint(const GitoModel<T>&, const ExperimentConfig&, const NormalizationStats&, \
                                         const std::string&);                                                     \
    template void load_parameters(GitoModel<T>&, const Checkpoint&);

GITO_INSTANTIATE_MODEL(float)
GITO_INSTANTIATE_MODEL(double)

}  // namespace gito
