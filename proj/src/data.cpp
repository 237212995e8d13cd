#include "gito/data.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "gito/byte_io.hpp"
#include "gito/checkpoint.hpp"

namespace gito {

namespace {

std::string join_names(const std::vector<std::string>& names)
{
    std::string out;
    for (std::size_t i = 0; i < names.size(); ++i)
        out += (i ? "," : "") + names[i];
    return out;
}

std::vector<std::string> split_commas(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream in(text);
    for (std::string item; std::getline(in, item, ',');)
        if (!item.empty())
            out.push_back(item);
    return out;
}

std::uint64_t parse_count(const std::string& key, const std::string& text)
{
    std::uint64_t value = 0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size())
        throw std::invalid_argument("manifest: " + key + " is not a non-negative integer: '" + text + "'");
    return value;
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

void DatasetSchema::check(const Sample& sample) const
{
    sample.validate();
    if (sample.queries.dim() != coord_dim)
        throw std::invalid_argument(name + " schema: coordinates have dimension " +
                                    std::to_string(sample.queries.dim()) + ", expected " + std::to_string(coord_dim));
    if (sample.inputs.size() != input_channels.size())
        throw std::invalid_argument(name + " schema: " + std::to_string(sample.inputs.size()) +
                                    " input functions, expected " + std::to_string(input_channels.size()));
    for (std::size_t f = 0; f < input_channels.size(); ++f)
        if (sample.inputs[f].channels() != input_channels[f])
            throw std::invalid_argument(name + " schema: input function " + std::to_string(f) + " has " +
                                        std::to_string(sample.inputs[f].channels()) + " channels, expected " +
                                        std::to_string(input_channels[f]));
    if (sample.has_targets() && sample.targets.cols != output_count())
        throw std::invalid_argument(name + " schema: " + std::to_string(sample.targets.cols) +
                                    " output channels, expected " + std::to_string(output_count()) + " (" +
                                    join_names(output_names) + ")");
    if (points_per_sample != 0 && sample.queries.size() != points_per_sample)
        throw std::invalid_argument(name + " schema: " + std::to_string(sample.queries.size()) +
                                    " query points, expected " + std::to_string(points_per_sample));
}

DatasetSchema DatasetSchema::named(const std::string& name)
{
    if (name == "ns")
        return {"ns", 2, {1}, {"u", "v", "p"}, 0};
    if (name == "heat")
        return {"heat", 2, {1, 1, 1, 1, 1}, {"T"}, 0};
    if (name == "airfoil")
        return {"airfoil", 2, {1}, {"M"}, kAirfoilRows * kAirfoilCols};
    if (name == "poisson")
        return {"poisson", 2, {1}, {"u"}, 0};
    throw std::invalid_argument("unknown dataset schema '" + name + "' (expected ns, heat, airfoil or poisson)");
}

PointCloud flatten_structured_mesh(std::size_t rows, std::size_t cols, std::span<const double> x,
                                   std::span<const double> y, std::size_t channels, std::vector<double> values)
{
    const std::size_t n = rows * cols;
    if (x.size() != n || y.size() != n)
        throw std::invalid_argument("structured mesh: expected " + std::to_string(n) + " x and y entries");
    std::vector<double> coords(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        coords[2 * i] = x[i];
        coords[2 * i + 1] = y[i];
    }
    return PointCloud(2, std::move(coords), channels, std::move(values));
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed)
{
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        auto j = static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(i)));
        std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    return order;
}

void Dataset::split(std::size_t test_count, std::uint64_t seed, const std::function<void(const std::string&)>& warn)
{
    if (test_count >= samples.size())
        throw std::invalid_argument("split: " + std::to_string(test_count) + " test samples leave none of " +
                                    std::to_string(samples.size()) + " for training");
    auto order = seeded_permutation(samples.size(), seed);
    test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_count));
    train.assign(order.begin() + static_cast<std::ptrdiff_t>(test_count), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    split_seed = seed;
    auto train_samples = subset(train);
    stats = NormalizationStats::compute(train_samples, warn);
}

std::vector<Sample> Dataset::subset(std::span<const std::size_t> indices) const
{
    std::vector<Sample> out;
    out.reserve(indices.size());
    for (std::size_t i : indices)
        out.push_back(samples.at(i));
    return out;
}

std::vector<char> encode_sample(const Sample& sample)
{
    ByteWriter w;
    w.magic("GITS");
    w.u32(kSampleVersion);
    w.u32(static_cast<std::uint32_t>(sample.queries.dim()));
    w.u32(static_cast<std::uint32_t>(sample.inputs.size()));
    for (const auto& in : sample.inputs) {
        w.u64(in.size());
        w.u32(static_cast<std::uint32_t>(in.channels()));
    }
    w.u64(sample.queries.size());
    w.u32(static_cast<std::uint32_t>(sample.targets.cols));
    auto floats = [&](const std::vector<double>& v) {
        for (double x : v)
            w.f32(static_cast<float>(x));
    };
    for (const auto& in : sample.inputs) {
        floats(in.coords());
        floats(in.values());
    }
    floats(sample.queries.coords());
    floats(sample.targets.data);
    return w.take();
}

Sample decode_sample(const std::vector<char>& bytes)
{
    ByteReader r(bytes);
    r.expect_magic("GITS");
    const std::uint32_t version = r.u32();
    if (version != kSampleVersion)
        throw FormatError("unsupported sample version " + std::to_string(version), r.offset() - 4);
    const std::uint32_t dim = r.u32();
    if (dim == 0 || dim > 3)
        throw FormatError("unsupported coordinate dimension " + std::to_string(dim), r.offset() - 4);
    const std::uint32_t functions = r.u32();
    if (functions > r.remaining() / 12)
        throw FormatError("implausible input function count " + std::to_string(functions), r.offset() - 4);
    std::vector<std::pair<std::uint64_t, std::uint32_t>> layout(functions);
    std::uint64_t payload = 0;
    auto account = [&](std::uint64_t count, std::uint64_t width) {
        if (width != 0 && count > r.remaining() / 4 / width)
            throw FormatError("declared sizes exceed file size", r.offset());
        payload += count * width;
    };
    for (auto& [points, channels] : layout) {
        points = r.u64();
        channels = r.u32();
        account(points, dim + channels);
    }
    const std::uint64_t queries = r.u64();
    const std::uint32_t outputs = r.u32();
    account(queries, dim + outputs);
    if (payload * 4 != r.remaining())
        throw FormatError("payload holds " + std::to_string(r.remaining()) + " bytes, header declares " +
                              std::to_string(payload * 4),
                          r.offset());
    auto floats = [&](std::uint64_t count) {
        std::vector<double> v(count);
        for (auto& x : v) {
            const std::uint64_t at = r.offset();
            x = r.f32();
            if (!std::isfinite(x))
                throw FormatError("non-finite value", at);
        }
        return v;
    };
    Sample s;
    for (auto [points, channels] : layout) {
        auto coords = floats(points * dim);
        auto values = floats(points * channels);
        s.inputs.emplace_back(dim, std::move(coords), channels, std::move(values));
    }
    s.queries = PointCloud(dim, floats(queries * dim));
    s.targets.rows = outputs ? queries : 0;
    s.targets.cols = outputs;
    s.targets.data = floats(queries * outputs);
    return s;
}

void write_sample(const std::filesystem::path& path, const Sample& sample)
{
    write_file(path, encode_sample(sample));
}

Sample read_sample(const std::filesystem::path& path)
{
    try {
        return decode_sample(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.detail(), e.offset());
    }
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset)
{
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    manifest << "schema=" << dataset.schema.name << '\n';
    manifest << "coord_dim=" << dataset.schema.coord_dim << '\n';
    manifest << "input_channels=";
    for (std::size_t f = 0; f < dataset.schema.input_channels.size(); ++f)
        manifest << (f ? "," : "") << dataset.schema.input_channels[f];
    manifest << '\n' << "outputs=" << join_names(dataset.schema.output_names) << '\n';
    manifest << "points_per_sample=" << dataset.schema.points_per_sample << '\n';
    manifest << "test=" << dataset.test.size() << '\n' << "split_seed=" << dataset.split_seed << '\n';
    if (const auto& p = dataset.poisson)
        manifest << "poisson_samples=" << p->samples << '\n'
                 << "poisson_points=" << p->points << '\n'
                 << "poisson_grid=" << p->grid << '\n'
                 << "poisson_seed=" << p->seed << '\n';
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05zu.gits", i);
        write_sample(dir / name, dataset.samples[i]);
        manifest << "sample=" << name << '\n';
    }
    std::ofstream out(dir / kManifestName);
    out << manifest.str();
    if (!out)
        throw std::runtime_error("cannot write " + (dir / kManifestName).string());
}

Dataset load_dataset(const std::filesystem::path& dir, const std::optional<DatasetSchema>& schema,
                     const std::function<void(const std::string&)>& warn)
{
    const auto manifest_path = dir / kManifestName;
    std::ifstream in(manifest_path);
    if (!in)
        throw std::runtime_error("cannot open " + manifest_path.string());
    std::map<std::string, std::string> keys;
    std::vector<std::string> files;
    std::size_t line_number = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_number;
        if (line.empty() || line[0] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(manifest_path.string() + ":" + std::to_string(line_number) +
                                        ": expected key=value");
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "sample")
            files.push_back(value);
        else
            keys[key] = value;
    }
    auto get = [&](const std::string& key, const std::string& fallback) {
        auto it = keys.find(key);
        return it == keys.end() ? fallback : it->second;
    };

    Dataset data;
    DatasetSchema declared;
    declared.name = get("schema", "custom");
    declared.coord_dim = parse_count("coord_dim", get("coord_dim", "2"));
    for (const auto& c : split_commas(get("input_channels", "1")))
        declared.input_channels.push_back(parse_count("input_channels", c));
    declared.output_names = split_commas(get("outputs", ""));
    declared.points_per_sample = parse_count("points_per_sample", get("points_per_sample", "0"));
    if (schema) {
        if (schema->output_count() != declared.output_count())
            throw std::invalid_argument(manifest_path.string() + ": manifest lists " +
                                        std::to_string(declared.output_count()) + " output channels (" +
                                        join_names(declared.output_names) + "), " + schema->name + " schema expects " +
                                        std::to_string(schema->output_count()));
        data.schema = *schema;
    } else {
        data.schema = declared;
    }
    if (keys.count("poisson_seed"))
        data.poisson = PoissonSpec{parse_count("poisson_samples", get("poisson_samples", "0")),
                                   parse_count("poisson_points", get("poisson_points", "0")),
                                   parse_count("poisson_grid", get("poisson_grid", "128")),
                                   parse_count("poisson_seed", get("poisson_seed", "0"))};
    if (files.empty())
        throw std::invalid_argument(manifest_path.string() + ": no sample entries");
    for (const auto& file : files) {
        Sample s = read_sample(dir / file);
        try {
            data.schema.check(s);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument((dir / file).string() + ": " + e.what());
        }
        data.samples.push_back(std::move(s));
    }
    const std::size_t default_test = data.samples.size() / 11;
    data.split(parse_count("test", get("test", std::to_string(default_test))),
               parse_count("split_seed", get("split_seed", "0")), warn);
    return data;
}

double PoissonProblem::source(double x, double y) const
{
    double f = 0;
    for (const auto& b : bumps) {
        const double dx = x - b.cx, dy = y - b.cy;
        f += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
    }
    return f;
}

PoissonProblem random_poisson_problem(Rng& rng)
{
    PoissonProblem p;
    const auto count = 1 + std::min<std::size_t>(2, static_cast<std::size_t>(uniform(rng, 0.0, 3.0)));
    for (std::size_t i = 0; i < count; ++i) {
        GaussianBump b;
        b.amplitude = uniform(rng, 0.5, 1.5);
        b.sigma = uniform(rng, 0.1, 0.2);
        b.cx = uniform(rng, 0.2, 0.8);
        b.cy = uniform(rng, 0.2, 0.8);
        p.bumps.push_back(b);
    }
    return p;
}

struct PoissonOracle::Factor {
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
};

PoissonOracle::PoissonOracle(std::size_t grid) : grid_(grid), factor_(std::make_unique<Factor>())
{
    if (grid < 2)
        throw std::invalid_argument("Poisson oracle needs at least 2 intervals per side");
    const std::size_t m = grid - 1;  // interior nodes per side
    const double inv_h2 = static_cast<double>(grid * grid);
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(5 * m * m);
    auto id = [m](std::size_t i, std::size_t j) { return static_cast<int>(j * m + i); };
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < m; ++i) {
            entries.emplace_back(id(i, j), id(i, j), 4 * inv_h2);
            if (i > 0)
                entries.emplace_back(id(i, j), id(i - 1, j), -inv_h2);
            if (i + 1 < m)
                entries.emplace_back(id(i, j), id(i + 1, j), -inv_h2);
            if (j > 0)
                entries.emplace_back(id(i, j), id(i, j - 1), -inv_h2);
            if (j + 1 < m)
                entries.emplace_back(id(i, j), id(i, j + 1), -inv_h2);
        }
    Eigen::SparseMatrix<double> a(static_cast<int>(m * m), static_cast<int>(m * m));
    a.setFromTriplets(entries.begin(), entries.end());
    factor_->solver.compute(a);
    if (factor_->solver.info() != Eigen::Success)
        throw std::runtime_error("Poisson oracle factorisation failed");
}

PoissonOracle::~PoissonOracle() = default;

std::vector<double> PoissonOracle::solve(const std::function<double(double, double)>& source) const
{
    const std::size_t m = grid_ - 1, n = grid_ + 1;
    const double h = 1.0 / static_cast<double>(grid_);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(m * m));
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < m; ++i)
            rhs[static_cast<Eigen::Index>(j * m + i)] = source(static_cast<double>(i + 1) * h,
                                                               static_cast<double>(j + 1) * h);
    Eigen::VectorXd u = factor_->solver.solve(rhs);
    std::vector<double> nodal(n * n, 0.0);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < m; ++i)
            nodal[(j + 1) * n + (i + 1)] = u[static_cast<Eigen::Index>(j * m + i)];
    return nodal;
}

double PoissonOracle::interpolate(std::span<const double> nodal, double x, double y) const
{
    const std::size_t n = grid_ + 1;
    const double g = static_cast<double>(grid_);
    const double fx = std::clamp(x, 0.0, 1.0) * g, fy = std::clamp(y, 0.0, 1.0) * g;
    const auto i = std::min(static_cast<std::size_t>(fx), grid_ - 1);
    const auto j = std::min(static_cast<std::size_t>(fy), grid_ - 1);
    const double tx = fx - static_cast<double>(i), ty = fy - static_cast<double>(j);
    const double v00 = nodal[j * n + i], v10 = nodal[j * n + i + 1];
    const double v01 = nodal[(j + 1) * n + i], v11 = nodal[(j + 1) * n + i + 1];
    return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
}

namespace {

/// Open unit square, float32-representable, not already in `taken`.
std::pair<double, double> interior_point(Rng& rng, std::set<std::pair<double, double>>& taken)
{
    for (;;) {
        const double x = round_to_float(uniform(rng, 0.0, 1.0));
        const double y = round_to_float(uniform(rng, 0.0, 1.0));
        if (x > 0 && x < 1 && y > 0 && y < 1 && taken.insert({x, y}).second)
            return {x, y};
    }
}

}  // namespace

Sample generate_poisson_sample(const PoissonSpec& spec, std::size_t index, const PoissonOracle& oracle,
                               std::size_t query_factor)
{
    if (spec.points < 16)
        throw std::invalid_argument("Poisson samples need at least 16 points, got " + std::to_string(spec.points));
    if (query_factor == 0)
        throw std::invalid_argument("query factor must be positive");
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    Rng rng(seq);
    const PoissonProblem problem = random_poisson_problem(rng);
    const auto u = oracle.solve([&](double x, double y) { return problem.source(x, y); });

    std::set<std::pair<double, double>> taken;
    std::vector<double> input_coords, input_values;
    for (std::size_t i = 0; i < spec.points; ++i) {
        auto [x, y] = interior_point(rng, taken);
        input_coords.insert(input_coords.end(), {x, y});
        input_values.push_back(round_to_float(problem.source(x, y)));
    }
    taken.clear();
    std::vector<double> query_coords;
    Sample s;
    s.targets.cols = 1;
    for (std::size_t i = 0; i < spec.points * query_factor; ++i) {
        auto [x, y] = interior_point(rng, taken);
        query_coords.insert(query_coords.end(), {x, y});
        s.targets.data.push_back(round_to_float(oracle.interpolate(u, x, y)));
    }
    s.targets.rows = spec.points * query_factor;
    s.inputs.emplace_back(2, std::move(input_coords), 1, std::move(input_values));
    s.queries = PointCloud(2, std::move(query_coords));
    return s;
}

Dataset generate_poisson_dataset(const PoissonSpec& spec, std::optional<std::size_t> test_count,
                                 const std::function<void(const std::string&)>& warn)
{
    if (spec.samples < 2)
        throw std::invalid_argument("a Poisson dataset needs at least 2 samples");
    PoissonOracle oracle(spec.grid);
    Dataset data;
    data.schema = DatasetSchema::named("poisson");
    data.poisson = spec;
    for (std::size_t i = 0; i < spec.samples; ++i)
        data.samples.push_back(generate_poisson_sample(spec, i, oracle));
    data.split(test_count.value_or(std::max<std::size_t>(1, spec.samples / 6)), spec.seed, warn);
    return data;
}

}  // namespace gito
