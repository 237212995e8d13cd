#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gito/nn.hpp"
#include "gito/sample.hpp"

namespace gito {

/// Declared layout of a dataset: input functions, their channels and the
/// output fields.
struct DatasetSchema {
    std::string name;
    std::size_t coord_dim = 2;
    std::vector<std::size_t> input_channels;  // one entry per input function
    std::vector<std::string> output_names;
    std::size_t points_per_sample = 0;  // query points per sample; 0 means any

    std::size_t output_count() const { return output_names.size(); }
    /// Throws std::invalid_argument naming the first mismatch.
    void check(const Sample& sample) const;

    /// "ns", "heat", "airfoil" or "poisson".
    static DatasetSchema named(const std::string& name);
};

/// Airfoil mesh extent.
inline constexpr std::size_t kAirfoilRows = 221;
inline constexpr std::size_t kAirfoilCols = 51;

/// Flattens a structured rows x cols mesh, given per-node x and y arrays in
/// row-major order, into a 2-D point cloud.
PointCloud flatten_structured_mesh(std::size_t rows, std::size_t cols, std::span<const double> x,
                                   std::span<const double> y, std::size_t channels = 0,
                                   std::vector<double> values = {});

/// Generator settings recorded with a synthetic Poisson dataset.
struct PoissonSpec {
    std::size_t samples = 0;
    std::size_t points = 0;
    std::size_t grid = 128;  // oracle intervals per side
    std::uint64_t seed = 0;
};

struct Dataset {
    DatasetSchema schema;
    std::vector<Sample> samples;
    std::vector<std::size_t> train, test;
    std::uint64_t split_seed = 0;
    NormalizationStats stats;
    std::optional<PoissonSpec> poisson;

    /// Seeded partition into `test_count` test samples and the rest for
    /// training; statistics are recomputed from the training part.
    void split(std::size_t test_count, std::uint64_t seed,
               const std::function<void(const std::string&)>& warn = {});
    std::vector<Sample> subset(std::span<const std::size_t> indices) const;
};

/// Uniformly shuffled 0..n-1 drawn from `seed`.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Per-sample binary file, all values little-endian:
//
//   "GITS"  u32 version  u32 coordinate dimension
//   u32 function count, per function: u64 points, u32 channels
//   u64 query points, u32 output channels
//   float32 payload: per function coords then values, query coords, targets

inline constexpr std::uint32_t kSampleVersion = 1;

std::vector<char> encode_sample(const Sample& sample);
/// Throws FormatError carrying the byte offset of the defect.
Sample decode_sample(const std::vector<char>& bytes);
void write_sample(const std::filesystem::path& path, const Sample& sample);
Sample read_sample(const std::filesystem::path& path);

inline constexpr const char* kManifestName = "manifest.txt";

/// Writes every sample and a manifest naming the schema, output channels,
/// sample files, test count and (for synthetic data) the generator settings.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

/// Reads a dataset directory and checks every sample against `schema`, or
/// against the manifest's own schema when none is given. Splits with the
/// manifest's test count and seed.
Dataset load_dataset(const std::filesystem::path& dir, const std::optional<DatasetSchema>& schema = std::nullopt,
                     const std::function<void(const std::string&)>& warn = {});

// Synthetic Poisson problems: -lap u = f on the unit square, u = 0 on the
// boundary, f a sum of Gaussian bumps.

struct GaussianBump {
    double amplitude, sigma, cx, cy;
};

struct PoissonProblem {
    std::vector<GaussianBump> bumps;
    double source(double x, double y) const;
};

/// 1-3 bumps, amplitude in [0.5, 1.5], width in [0.1, 0.2], centres in
/// [0.2, 0.8]^2.
PoissonProblem random_poisson_problem(Rng& rng);

/// Five-point finite-difference solver on a uniform grid with a factorised
/// system matrix reused across right-hand sides.
class PoissonOracle {
public:
    /// `grid` intervals per side, spacing 1/grid.
    explicit PoissonOracle(std::size_t grid);
    ~PoissonOracle();
    PoissonOracle(const PoissonOracle&) = delete;
    PoissonOracle& operator=(const PoissonOracle&) = delete;

    std::size_t grid() const { return grid_; }
    /// Nodal values on the (grid+1)^2 lattice, row index y, boundary included.
    std::vector<double> solve(const std::function<double(double, double)>& source) const;
    /// Bilinear interpolation of nodal values.
    double interpolate(std::span<const double> nodal, double x, double y) const;

private:
    struct Factor;
    std::size_t grid_;
    std::unique_ptr<Factor> factor_;
};

/// Sample `index` of a generated dataset, with `query_factor` times the
/// native query count. The native queries come first, so factor 1 reproduces
/// the stored sample.
Sample generate_poisson_sample(const PoissonSpec& spec, std::size_t index, const PoissonOracle& oracle,
                               std::size_t query_factor = 1);

/// Requires points >= 16. Test count defaults to one sixth of the samples.
Dataset generate_poisson_dataset(const PoissonSpec& spec, std::optional<std::size_t> test_count = std::nullopt,
                                 const std::function<void(const std::string&)>& warn = {});

}  // namespace gito
