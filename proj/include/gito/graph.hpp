#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gito {

using Index = std::uint32_t;

/// Row-major feature table.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Spatial sample locations with optional per-point field values.
class PointCloud {
public:
    PointCloud() = default;
    /// coords: N x dim row-major; values: N x channels row-major or empty.
    PointCloud(std::size_t dim, std::vector<double> coords, std::size_t channels = 0, std::vector<double> values = {});

    std::size_t size() const noexcept { return dim_ == 0 ? 0 : coords_.size() / dim_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t channels() const noexcept { return channels_; }
    bool has_values() const noexcept { return channels_ > 0; }

    const std::vector<double>& coords() const noexcept { return coords_; }
    const std::vector<double>& values() const noexcept { return values_; }
    double coord(std::size_t i, std::size_t axis) const { return coords_[i * dim_ + axis]; }
    double value(std::size_t i, std::size_t channel) const { return values_[i * channels_ + channel]; }

    double distance(std::size_t i, std::size_t j) const;
    double squared_distance(std::size_t i, std::size_t j) const;

private:
    std::size_t dim_ = 0;
    std::vector<double> coords_;
    std::size_t channels_ = 0;
    std::vector<double> values_;
};

/// Directed edge list; edge e carries a message from senders[e] to receivers[e].
struct GraphTopology {
    std::size_t num_nodes = 0;
    std::vector<Index> senders;
    std::vector<Index> receivers;

    std::size_t num_edges() const noexcept { return senders.size(); }
};

struct SpatialGraph {
    GraphTopology topology;
    FeatureMatrix node_features;
    FeatureMatrix edge_features;
};

/// Strategy and its parameter, as carried in configuration.
struct GraphStrategy {
    enum class Kind { knn, radius };
    Kind kind = Kind::knn;
    std::size_t k = 8;
    double radius = 0.1;

    static GraphStrategy knn(std::size_t k) { return {Kind::knn, k, 0.0}; }
    static GraphStrategy radius_of(double r) { return {Kind::radius, 0, r}; }
    std::string to_string() const;
    static GraphStrategy parse(const std::string& text);
};

/// Point counts above which grid bucketing replaces the all-pairs scan.
inline constexpr std::size_t kGridThreshold = 2000;

/// Each node receives one edge from each of its k nearest other nodes; ties go
/// to the lower index. Edges are ordered by receiver, then by rank.
GraphTopology knn_topology(const PointCloud& cloud, std::size_t k, bool allow_grid = true);
/// Edge (i, j) exists iff 0 < |x_i - x_j| <= r, in both directions.
GraphTopology radius_topology(const PointCloud& cloud, double r, bool allow_grid = true);
GraphTopology build_topology(const PointCloud& cloud, const GraphStrategy& strategy);

/// Node rows: [x_i] or [x_i, u_i]. Edge rows for sender s, receiver r:
/// [x_s - x_r, |x_s - x_r|] plus [u_s - u_r] when the cloud carries values.
void compute_features(const GraphTopology& topology, const PointCloud& cloud, FeatureMatrix& node_features,
                      FeatureMatrix& edge_features);

SpatialGraph build_knn_graph(const PointCloud& cloud, std::size_t k);
SpatialGraph build_radius_graph(const PointCloud& cloud, double r);

struct GraphStats {
    std::size_t nodes = 0;
    std::size_t edges = 0;
    std::size_t isolated = 0;
    std::map<std::size_t, std::size_t> in_degree_histogram;

    /// Human-readable block followed by key=value lines.
    std::string report() const;
};

GraphStats graph_stats(const GraphTopology& topology);

}  // namespace gito
