#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gito/checkpoint.hpp"
#include "gito/config.hpp"
#include "gito/hgt.hpp"
#include "gito/sample.hpp"
#include "gito/tno.hpp"

namespace gito {

/// A sample with graphs built and every feature normalised, ready for the
/// model. Topology comes from physical coordinates; features from the
/// normalised ones.
template <typename T>
struct PreparedSample {
    Tensor<T> query_coords;
    GraphTopology query_topology;
    Tensor<T> query_edges;  // undefined when the query graph has no edges
    std::vector<Tensor<T>> input_nodes;
    std::vector<Tensor<T>> input_coords;
    std::vector<GraphTopology> input_topologies;  // filled only with HGT on inputs
    std::vector<Tensor<T>> input_edges;
    Tensor<T> targets;  // normalised; undefined when the sample has none

    std::size_t query_count() const { return query_coords.rows(); }
};

/// Throws std::invalid_argument if the sample does not fit the configuration.
template <typename T>
PreparedSample<T> prepare_sample(const Sample& sample, const NormalizationStats& stats, const ModelConfig& config);

/// Topology of one cloud under a strategy; k is capped at N - 1.
GraphTopology branch_topology(const PointCloud& cloud, const GraphStrategy& strategy);

/// Node encoder, optional edge encoder and HGT stack for one graph, projected
/// to the model width when the stack runs wider.
template <typename T>
class Branch {
public:
    Branch() = default;
    Branch(std::size_t node_features, std::size_t edge_features, std::size_t blocks, const HgtConfig& hgt,
           std::size_t out_width, std::size_t mlp_hidden, std::size_t mlp_layers, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& nodes, const Tensor<T>& edges, const GraphTopology* topology,
                         const Tensor<T>& coords) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    bool uses_graph() const { return !blocks_.empty(); }

private:
    Mlp<T> node_encoder_;
    Mlp<T> edge_encoder_;
    std::vector<HgtBlock<T>> blocks_;
    std::optional<Linear<T>> projection_;
};

/// The complete operator: encoders, query-branch HGT, TNO and decoder.
/// Predictions are in normalised target units.
template <typename T>
class GitoModel {
public:
    GitoModel(const ModelConfig& config, std::uint64_t seed);
    GitoModel(const GitoModel&) = delete;
    GitoModel& operator=(const GitoModel&) = delete;

    Tensor<T> forward(const PreparedSample<T>& sample) const;

    const ModelConfig& config() const { return config_; }
    const ParameterList<T>& parameters() const { return parameters_; }
    std::size_t parameter_count() const;
    Mlp<T>& decoder() { return decoder_; }

private:
    ModelConfig config_;
    Branch<T> query_branch_;
    std::vector<Branch<T>> input_branches_;
    Tno<T> tno_;
    Mlp<T> decoder_;
    ParameterList<T> parameters_;
};

/// Physical-unit predictions for a raw sample, rounded to the model precision.
template <typename T>
FeatureMatrix predict(const GitoModel<T>& model, const Sample& sample, const NormalizationStats& stats);

/// Checkpoint header sections: "[name]" lines followed by their text.
std::string join_sections(const std::vector<std::pair<std::string, std::string>>& sections);
std::map<std::string, std::string> split_sections(const std::string& header);

template <typename T>
Checkpoint model_checkpoint(const GitoModel<T>& model, const ExperimentConfig& config, const NormalizationStats& stats,
                            const std::string& state = {});
/// Overwrites every parameter of `model` from the checkpoint.
template <typename T>
void load_parameters(GitoModel<T>& model, const Checkpoint& checkpoint);

}  // namespace gito
