#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gito/graph.hpp"

namespace gito {

/// One operator-learning instance: observed input functions, query locations
/// and the target fields at those locations (physical units).
struct Sample {
    std::vector<PointCloud> inputs;
    PointCloud queries;
    FeatureMatrix targets;  // queries.size() x output channels, or empty

    bool has_targets() const { return targets.cols > 0; }
    /// Throws std::invalid_argument if the pieces are inconsistent.
    void validate() const;
};

/// Per-channel statistics from the training split.
///
/// Coordinates and input-function values are z-scored. Targets are only
/// divided by their root-mean-square so that a zero prediction stays zero in
/// physical units and relative errors are unaffected by the scaling.
struct NormalizationStats {
    std::vector<double> coord_mean, coord_std;
    std::vector<std::vector<double>> input_mean, input_std;  // [function][channel]
    std::vector<double> target_scale;

    /// Zero spreads are replaced by 1 and reported through `warn`.
    static NormalizationStats compute(std::span<const Sample> train,
                                      const std::function<void(const std::string&)>& warn = {});

    std::string to_text() const;
    static NormalizationStats from_text(const std::string& text);
};

PointCloud normalize_queries(const PointCloud& queries, const NormalizationStats& stats);
PointCloud normalize_input(const PointCloud& input, std::size_t function, const NormalizationStats& stats);
FeatureMatrix normalize_targets(const FeatureMatrix& targets, const NormalizationStats& stats);
FeatureMatrix denormalize(const FeatureMatrix& predictions, const NormalizationStats& stats);
Sample normalize(const Sample& sample, const NormalizationStats& stats);

}  // namespace gito
