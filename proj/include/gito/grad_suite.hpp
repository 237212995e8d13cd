#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gito/config.hpp"
#include "gito/grad_check.hpp"

namespace gito {

struct GradientSuiteEntry {
    std::string component;  // encoder, gatv2, global_attention, fusion, cross_attention, moe, decoder, end_to_end
    std::uint64_t seed = 0;
    double relative_error = 0;
    std::string worst_tensor;
    double margin = 0;  // kink distance at the accepted test point
    double analytic = 0;  // worst entry of the worst tensor
    double numeric = 0;
    double peak = 0;      // largest gradient magnitude in the worst tensor
};

struct GradientSuiteSettings {
    KinkSafeSettings check;
    double min_margin = 1e-3;     // test points closer to a kink are redrawn
    std::size_t max_redraws = 50;
};

/// The configuration's switches (fusion, experts, graphs, input layout,
/// self-attention) at a width small enough for exhaustive finite differences.
ModelConfig gradient_check_config(const ModelConfig& config);

/// Float64 finite-difference checks of every layer type and the complete
/// model under `gradient_check_config(config)`, one entry per component and
/// seed. Loss for single layers is a fixed random projection of the outputs;
/// the model uses the relative-L2 training loss.
std::vector<GradientSuiteEntry> run_gradient_suite(const ModelConfig& config, const std::vector<std::uint64_t>& seeds,
                                                   const GradientSuiteSettings& settings = {});

}  // namespace gito
