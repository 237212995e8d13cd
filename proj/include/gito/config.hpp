#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gito/graph.hpp"

namespace gito {

/// Flat key=value text: one entry per line, '#' starts a comment.
/// Throws std::invalid_argument naming the line on malformed input.
std::map<std::string, std::string> parse_key_values(const std::string& text);

enum class Precision { float32, float64 };

struct ModelConfig {
    std::size_t hidden_size = 96;
    std::size_t n_heads = 8;
    std::size_t n_experts = 2;
    std::size_t n_attention_layers = 2;  // operator depth
    std::size_t n_hgt_blocks = 2;
    std::size_t mlp_layers = 2;           // hidden layers of every encoder/decoder MLP
    std::size_t mlp_hidden = 96;
    std::size_t expert_expansion = 3;     // expert hidden width as a multiple of block width
    GraphStrategy query_graph = GraphStrategy::knn(8);
    GraphStrategy input_graph = GraphStrategy::knn(8);
    bool apply_hgt_to_inputs = false;
    bool fusion = true;
    bool moe_in_hgt = true;
    bool tno_self_attention = true;
    std::size_t input_function_count = 1;
    std::vector<std::size_t> input_channels{1};  // one entry per input function
    std::size_t output_field_count = 1;
    std::size_t coord_dim = 2;
    Precision precision = Precision::float32;

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 4;
    double max_lr = 1e-3;
    double weight_decay = 1e-5;
    double pct_start = 0.3;
    double div_factor = 25.0;
    double final_div_factor = 1e4;
    double grad_clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_interval = 1;  // epochs between periodic checkpoints

    void validate() const;
};

struct ExperimentConfig {
    ModelConfig model;
    TrainConfig train;

    /// Unknown keys are errors; absent keys keep their defaults.
    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig load(const std::string& path);
    /// Applies key=value overrides on top of the current values.
    void apply(const std::map<std::string, std::string>& entries);
    std::string to_text() const;
};

}  // namespace gito
