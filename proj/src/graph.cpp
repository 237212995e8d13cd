#include "gito/graph.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace gito {

PointCloud::PointCloud(std::size_t dim, std::vector<double> coords, std::size_t channels, std::vector<double> values)
    : dim_(dim), coords_(std::move(coords)), channels_(channels), values_(std::move(values))
{
    if (dim_ != 2 && dim_ != 3)
        throw std::invalid_argument("point cloud dimension must be 2 or 3, got " + std::to_string(dim_));
    if (coords_.empty() || coords_.size() % dim_ != 0)
        throw std::invalid_argument("point cloud needs a non-empty N x dim coordinate array");
    for (double c : coords_)
        if (!std::isfinite(c))
            throw std::invalid_argument("point cloud coordinates must be finite");
    if (channels_ == 0 && !values_.empty())
        throw std::invalid_argument("values given without a channel count");
    if (channels_ > 0 && values_.size() != size() * channels_)
        throw std::invalid_argument("values must have " + std::to_string(size()) + " rows of " +
                                    std::to_string(channels_) + " channels");
}

double PointCloud::squared_distance(std::size_t i, std::size_t j) const
{
    double s = 0;
    for (std::size_t a = 0; a < dim_; ++a) {
        const double d = coords_[i * dim_ + a] - coords_[j * dim_ + a];
        s += d * d;
    }
    return s;
}

double PointCloud::distance(std::size_t i, std::size_t j) const
{
    return std::sqrt(squared_distance(i, j));
}

std::string GraphStrategy::to_string() const
{
    if (kind == Kind::knn)
        return "knn:" + std::to_string(k);
    char buffer[32];
    auto end = std::to_chars(buffer, buffer + sizeof buffer, radius).ptr;
    return "radius:" + std::string(buffer, end);
}

GraphStrategy GraphStrategy::parse(const std::string& text)
{
    const auto colon = text.find(':');
    if (colon == std::string::npos)
        throw std::invalid_argument("graph strategy must look like knn:<k> or radius:<r>, got '" + text + "'");
    const std::string kind = text.substr(0, colon);
    const std::string arg = text.substr(colon + 1);
    if (kind == "knn") {
        const long k = std::stol(arg);
        if (k <= 0)
            throw std::invalid_argument("knn needs k >= 1");
        return knn(static_cast<std::size_t>(k));
    }
    if (kind == "radius") {
        const double r = std::stod(arg);
        if (!(r > 0))
            throw std::invalid_argument("radius must be positive");
        return radius_of(r);
    }
    throw std::invalid_argument("unknown graph strategy '" + kind + "'");
}

namespace {

/// Uniform bucket grid over the cloud's bounding box.
class BucketGrid {
public:
    BucketGrid(const PointCloud& cloud, double cell) : cloud_(cloud), cell_(cell)
    {
        const std::size_t d = cloud.dim();
        lo_.fill(0.0);
        dims_.fill(1);
        for (std::size_t a = 0; a < d; ++a) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t i = 0; i < cloud.size(); ++i) {
                lo = std::min(lo, cloud.coord(i, a));
                hi = std::max(hi, cloud.coord(i, a));
            }
            lo_[a] = lo;
            dims_[a] = static_cast<long>(std::floor((hi - lo) / cell_)) + 1;
        }
        for (std::size_t i = 0; i < cloud.size(); ++i)
            buckets_[key(cell_of(i))].push_back(static_cast<Index>(i));
    }

    std::array<long, 3> cell_of(std::size_t i) const
    {
        std::array<long, 3> c{0, 0, 0};
        for (std::size_t a = 0; a < cloud_.dim(); ++a)
            c[a] = std::min(dims_[a] - 1, static_cast<long>(std::floor((cloud_.coord(i, a) - lo_[a]) / cell_)));
        return c;
    }

    long max_ring() const { return *std::max_element(dims_.begin(), dims_.end()); }

    /// Visits every point in cells at Chebyshev cell distance exactly `ring`.
    template <typename F>
    void visit_ring(const std::array<long, 3>& centre, long ring, F&& visit) const
    {
        const bool three = cloud_.dim() == 3;
        const long zr = three ? ring : 0;
        for (long dx = -ring; dx <= ring; ++dx)
            for (long dy = -ring; dy <= ring; ++dy)
                for (long dz = -zr; dz <= zr; ++dz) {
                    if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
                        continue;
                    std::array<long, 3> c{centre[0] + dx, centre[1] + dy, centre[2] + dz};
                    bool inside = true;
                    for (int a = 0; a < 3; ++a)
                        inside = inside && c[a] >= 0 && c[a] < dims_[a];
                    if (!inside)
                        continue;
                    auto it = buckets_.find(key(c));
                    if (it == buckets_.end())
                        continue;
                    for (Index j : it->second)
                        visit(j);
                }
    }

    double cell() const { return cell_; }

private:
    long long key(const std::array<long, 3>& c) const
    {
        return (static_cast<long long>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
    }

    const PointCloud& cloud_;
    double cell_;
    std::array<double, 3> lo_{};
    std::array<long, 3> dims_{};
    std::unordered_map<long long, std::vector<Index>> buckets_;
};

struct Candidate {
    double dist2;
    Index index;
    bool operator<(const Candidate& o) const { return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index); }
};

double bounding_extent(const PointCloud& cloud, std::size_t axis)
{
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        lo = std::min(lo, cloud.coord(i, axis));
        hi = std::max(hi, cloud.coord(i, axis));
    }
    return hi - lo;
}

void knn_brute(const PointCloud& cloud, std::size_t k, GraphTopology& out)
{
    const std::size_t n = cloud.size();
    std::vector<Candidate> cand;
    cand.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i)
                cand.push_back({cloud.squared_distance(i, j), static_cast<Index>(j)});
        std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(k), cand.end());
        for (std::size_t r = 0; r < k; ++r) {
            out.senders.push_back(cand[r].index);
            out.receivers.push_back(static_cast<Index>(i));
        }
    }
}

void knn_grid(const PointCloud& cloud, std::size_t k, GraphTopology& out)
{
    const std::size_t n = cloud.size();
    double volume = 1.0;
    for (std::size_t a = 0; a < cloud.dim(); ++a)
        volume *= std::max(bounding_extent(cloud, a), 1e-12);
    // Roughly k points per cell.
    const double cell = std::pow(volume * double(k) / double(n), 1.0 / double(cloud.dim()));
    BucketGrid grid(cloud, std::max(cell, 1e-12));
    std::vector<Candidate> cand;
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        const auto centre = grid.cell_of(i);
        for (long ring = 0;; ++ring) {
            grid.visit_ring(centre, ring, [&](Index j) {
                if (j != i)
                    cand.push_back({cloud.squared_distance(i, j), j});
            });
            // Points in unvisited cells lie at least ring * cell away.
            if (cand.size() >= k) {
                std::nth_element(cand.begin(), cand.begin() + static_cast<long>(k - 1), cand.end());
                const double bound = double(ring) * grid.cell();
                if (cand[k - 1].dist2 < bound * bound)
                    break;
            }
            if (ring > grid.max_ring())
                break;
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(k), cand.end());
        for (std::size_t r = 0; r < k; ++r) {
            out.senders.push_back(cand[r].index);
            out.receivers.push_back(static_cast<Index>(i));
        }
    }
}

}  // namespace

GraphTopology knn_topology(const PointCloud& cloud, std::size_t k, bool allow_grid)
{
    const std::size_t n = cloud.size();
    if (k == 0)
        throw std::invalid_argument("knn graph needs k >= 1");
    if (k >= n)
        throw std::invalid_argument("knn graph needs k < N (k=" + std::to_string(k) + ", N=" + std::to_string(n) +
                                    ")");
    GraphTopology out;
    out.num_nodes = n;
    out.senders.reserve(n * k);
    out.receivers.reserve(n * k);
    if (allow_grid && n > kGridThreshold)
        knn_grid(cloud, k, out);
    else
        knn_brute(cloud, k, out);
    return out;
}

GraphTopology radius_topology(const PointCloud& cloud, double r, bool allow_grid)
{
    if (!(r > 0))
        throw std::invalid_argument("radius graph needs r > 0");
    const std::size_t n = cloud.size();
    const double r2 = r * r;
    std::vector<std::vector<Index>> incoming(n);
    auto consider = [&](std::size_t i, std::size_t j) {
        const double d2 = cloud.squared_distance(i, j);
        if (d2 > 0.0 && d2 <= r2)
            incoming[i].push_back(static_cast<Index>(j));
    };
    if (allow_grid && n > kGridThreshold) {
        BucketGrid grid(cloud, r);
        for (std::size_t i = 0; i < n; ++i) {
            const auto centre = grid.cell_of(i);
            for (long ring = 0; ring <= 1; ++ring)
                grid.visit_ring(centre, ring, [&](Index j) {
                    if (j != i)
                        consider(i, j);
                });
        }
    } else {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (j != i)
                    consider(i, j);
    }
    GraphTopology out;
    out.num_nodes = n;
    for (std::size_t i = 0; i < n; ++i) {
        std::sort(incoming[i].begin(), incoming[i].end());
        for (Index j : incoming[i]) {
            out.senders.push_back(j);
            out.receivers.push_back(static_cast<Index>(i));
        }
    }
    return out;
}

GraphTopology build_topology(const PointCloud& cloud, const GraphStrategy& strategy)
{
    return strategy.kind == GraphStrategy::Kind::knn ? knn_topology(cloud, strategy.k)
                                                      : radius_topology(cloud, strategy.radius);
}

void compute_features(const GraphTopology& topology, const PointCloud& cloud, FeatureMatrix& node_features,
                      FeatureMatrix& edge_features)
{
    if (topology.num_nodes != cloud.size())
        throw std::invalid_argument("topology has " + std::to_string(topology.num_nodes) + " nodes but cloud has " +
                                    std::to_string(cloud.size()));
    const std::size_t d = cloud.dim();
    const std::size_t c = cloud.channels();
    const std::size_t n = cloud.size();

    node_features.rows = n;
    node_features.cols = d + c;
    node_features.data.resize(n * (d + c));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < d; ++a)
            node_features.data[i * (d + c) + a] = cloud.coord(i, a);
        for (std::size_t ch = 0; ch < c; ++ch)
            node_features.data[i * (d + c) + d + ch] = cloud.value(i, ch);
    }

    const std::size_t m = topology.num_edges();
    const std::size_t width = d + 1 + c;
    edge_features.rows = m;
    edge_features.cols = width;
    edge_features.data.resize(m * width);
    for (std::size_t e = 0; e < m; ++e) {
        const std::size_t s = topology.senders[e];
        const std::size_t r = topology.receivers[e];
        if (s >= n || r >= n)
            throw std::invalid_argument("edge " + std::to_string(e) + " references a node outside the cloud");
        double* row = edge_features.data.data() + e * width;
        double sq = 0;
        for (std::size_t a = 0; a < d; ++a) {
            row[a] = cloud.coord(s, a) - cloud.coord(r, a);
            sq += row[a] * row[a];
        }
        row[d] = std::sqrt(sq);
        for (std::size_t ch = 0; ch < c; ++ch)
            row[d + 1 + ch] = cloud.value(s, ch) - cloud.value(r, ch);
    }
}

SpatialGraph build_knn_graph(const PointCloud& cloud, std::size_t k)
{
    SpatialGraph g;
    g.topology = knn_topology(cloud, k);
    compute_features(g.topology, cloud, g.node_features, g.edge_features);
    return g;
}

SpatialGraph build_radius_graph(const PointCloud& cloud, double r)
{
    SpatialGraph g;
    g.topology = radius_topology(cloud, r);
    compute_features(g.topology, cloud, g.node_features, g.edge_features);
    return g;
}

GraphStats graph_stats(const GraphTopology& topology)
{
    GraphStats stats;
    stats.nodes = topology.num_nodes;
    stats.edges = topology.num_edges();
    std::vector<std::size_t> in_degree(topology.num_nodes, 0), out_degree(topology.num_nodes, 0);
    for (std::size_t e = 0; e < topology.num_edges(); ++e) {
        ++in_degree[topology.receivers[e]];
        ++out_degree[topology.senders[e]];
    }
    for (std::size_t i = 0; i < topology.num_nodes; ++i) {
        if (in_degree[i] == 0 && out_degree[i] == 0)
            ++stats.isolated;
        ++stats.in_degree_histogram[in_degree[i]];
    }
    return stats;
}

std::string GraphStats::report() const
{
    std::ostringstream out;
    out << "graph: " << nodes << " nodes, " << edges << " edges, " << isolated << " isolated\n";
    out << "in-degree histogram:";
    for (const auto& [degree, count] : in_degree_histogram)
        out << ' ' << degree << ':' << count;
    out << "\n";
    out << "nodes=" << nodes << "\n";
    out << "edges=" << edges << "\n";
    out << "isolated=" << isolated << "\n";
    out << "degree_histogram=";
    bool first = true;
    for (const auto& [degree, count] : in_degree_histogram) {
        out << (first ? "" : ",") << degree << ':' << count;
        first = false;
    }
    out << "\n";
    return out.str();
}

}  // namespace gito
