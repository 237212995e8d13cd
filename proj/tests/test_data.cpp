#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "gito/byte_io.hpp"
#include "gito/data.hpp"

using namespace gito;
namespace fs = std::filesystem;

namespace {

const double kPi = std::numbers::pi;

double sine_solution(double x, double y) { return std::sin(kPi * x) * std::sin(kPi * y); }

double sine_max_error(std::size_t grid)
{
    PoissonOracle oracle(grid);
    auto u = oracle.solve([](double x, double y) { return 2 * kPi * kPi * sine_solution(x, y); });
    const std::size_t n = grid + 1;
    double worst = 0;
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) {
            const double x = double(i) / double(grid), y = double(j) / double(grid);
            worst = std::max(worst, std::abs(u[j * n + i] - sine_solution(x, y)));
        }
    return worst;
}

fs::path scratch_dir(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("gito_test_data_" + name);
    fs::remove_all(dir);
    return dir;
}

Sample small_sample(double offset)
{
    Sample s;
    s.inputs.emplace_back(2, std::vector<double>{0, 0, 1, 0, 0, 1}, 1, std::vector<double>{offset, 2, 3});
    s.queries = PointCloud(2, std::vector<double>{0.5, 0.5, 0.25, 0.75});
    s.targets = {2, 1, {1.5 + offset, -0.5}};
    return s;
}

bool same_sample(const Sample& a, const Sample& b)
{
    if (a.inputs.size() != b.inputs.size())
        return false;
    for (std::size_t f = 0; f < a.inputs.size(); ++f)
        if (a.inputs[f].coords() != b.inputs[f].coords() || a.inputs[f].values() != b.inputs[f].values() ||
            a.inputs[f].channels() != b.inputs[f].channels())
            return false;
    return a.queries.coords() == b.queries.coords() && a.targets.data == b.targets.data &&
           a.targets.cols == b.targets.cols && a.targets.rows == b.targets.rows;
}

}  // namespace

TEST_CASE("oracle reproduces the sine solution at the centre")
{
    PoissonOracle oracle(128);
    auto u = oracle.solve([](double x, double y) { return 2 * kPi * kPi * sine_solution(x, y); });
    const double centre = oracle.interpolate(u, 0.5, 0.5);
    CHECK(std::abs(centre - 1.0) <= 0.01);
    CHECK(centre == u[64 * 129 + 64]);
}

TEST_CASE("oracle returns zero for a zero source")
{
    PoissonOracle oracle(32);
    auto u = oracle.solve([](double, double) { return 0.0; });
    CHECK(std::all_of(u.begin(), u.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("oracle converges at second order")
{
    const double e16 = sine_max_error(16), e32 = sine_max_error(32), e64 = sine_max_error(64);
    CHECK(e16 / e32 == doctest::Approx(4.0).epsilon(0.05));
    CHECK(e32 / e64 == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("oracle is exact for a quadratic-product solution up to roundoff")
{
    // The five-point stencil is exact on x(1-x) and y(1-y) separately.
    PoissonOracle oracle(20);
    auto u = oracle.solve([](double x, double y) { return 2 * (x * (1 - x) + y * (1 - y)); });
    double worst = 0;
    for (std::size_t j = 0; j <= 20; ++j)
        for (std::size_t i = 0; i <= 20; ++i) {
            const double x = i / 20.0, y = j / 20.0;
            worst = std::max(worst, std::abs(u[j * 21 + i] - x * (1 - x) * y * (1 - y)));
        }
    CHECK(worst < 1e-12);
}

TEST_CASE("bilinear interpolation reproduces nodes and boundary zeros")
{
    PoissonOracle oracle(8);
    std::vector<double> nodal(81);
    for (std::size_t i = 0; i < nodal.size(); ++i)
        nodal[i] = double(i % 9) + 10.0 * double(i / 9);
    CHECK(oracle.interpolate(nodal, 0.25, 0.5) == doctest::Approx(2 + 40));
    CHECK(oracle.interpolate(nodal, 0.3125, 0.5) == doctest::Approx(2.5 + 40));
    CHECK(oracle.interpolate(nodal, 1.0, 1.0) == doctest::Approx(8 + 80));
}

TEST_CASE("random Poisson problems respect the declared ranges")
{
    Rng rng(3);
    std::set<std::size_t> counts;
    for (int trial = 0; trial < 200; ++trial) {
        auto p = random_poisson_problem(rng);
        counts.insert(p.bumps.size());
        for (const auto& b : p.bumps) {
            CHECK(b.amplitude >= 0.5);
            CHECK(b.amplitude <= 1.5);
            CHECK(b.sigma >= 0.1);
            CHECK(b.sigma <= 0.2);
            CHECK(b.cx >= 0.2);
            CHECK(b.cx <= 0.8);
            CHECK(b.cy >= 0.2);
            CHECK(b.cy <= 0.8);
        }
    }
    CHECK(counts == std::set<std::size_t>{1, 2, 3});
}

TEST_CASE("generated samples carry the source, distinct interior points and oracle targets")
{
    PoissonSpec spec{4, 32, 64, 9};
    PoissonOracle oracle(spec.grid);
    Sample s = generate_poisson_sample(spec, 2, oracle);
    CHECK(DatasetSchema::named("poisson").output_count() == 1);
    DatasetSchema::named("poisson").check(s);
    REQUIRE(s.inputs[0].size() == 32);
    REQUIRE(s.queries.size() == 32);
    std::set<std::pair<double, double>> seen;
    for (std::size_t i = 0; i < 32; ++i) {
        const double x = s.inputs[0].coord(i, 0), y = s.inputs[0].coord(i, 1);
        CHECK(x > 0);
        CHECK(x < 1);
        CHECK(y > 0);
        CHECK(y < 1);
        seen.insert({x, y});
    }
    CHECK(seen.size() == 32);
    CHECK(std::all_of(s.targets.data.begin(), s.targets.data.end(), [](double v) { return v > 0; }));
    CHECK_THROWS_AS(generate_poisson_sample(PoissonSpec{4, 15, 64, 9}, 0, oracle), std::invalid_argument);
}

TEST_CASE("a denser query set extends the native one")
{
    PoissonSpec spec{4, 20, 32, 5};
    PoissonOracle oracle(spec.grid);
    Sample base = generate_poisson_sample(spec, 1, oracle);
    Sample dense = generate_poisson_sample(spec, 1, oracle, 4);
    REQUIRE(dense.queries.size() == 80);
    CHECK(std::equal(base.queries.coords().begin(), base.queries.coords().end(), dense.queries.coords().begin()));
    CHECK(std::equal(base.targets.data.begin(), base.targets.data.end(), dense.targets.data.begin()));
    CHECK(base.inputs[0].values() == dense.inputs[0].values());
    CHECK(same_sample(base, generate_poisson_sample(spec, 1, oracle)));
}

TEST_CASE("dataset generation and split are deterministic")
{
    PoissonSpec spec{12, 16, 32, 4};
    Dataset a = generate_poisson_dataset(spec);
    Dataset b = generate_poisson_dataset(spec);
    CHECK(a.test.size() == 2);
    CHECK(a.train.size() == 10);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    for (std::size_t i = 0; i < a.samples.size(); ++i)
        CHECK(same_sample(a.samples[i], b.samples[i]));
    CHECK(seeded_permutation(50, 1) == seeded_permutation(50, 1));
    CHECK(seeded_permutation(50, 1) != seeded_permutation(50, 2));
    auto p = seeded_permutation(50, 7);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < p.size(); ++i)
        CHECK(p[i] == i);
}

TEST_CASE("statistics come from the training split only")
{
    PoissonSpec spec{12, 16, 32, 4};
    Dataset d = generate_poisson_dataset(spec, 3);
    auto train = d.subset(d.train);
    auto expected = NormalizationStats::compute(train);
    CHECK(d.stats.to_text() == expected.to_text());
    auto everything = NormalizationStats::compute(d.samples);
    CHECK(d.stats.to_text() != everything.to_text());
    CHECK_THROWS_AS(d.split(12, 0), std::invalid_argument);
}

TEST_CASE("sample files round-trip exactly for float32 values")
{
    Sample s = small_sample(0.25);
    auto bytes = encode_sample(s);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "GITS");
    CHECK(same_sample(decode_sample(bytes), s));

    Sample no_targets = s;
    no_targets.targets = {};
    CHECK(same_sample(decode_sample(encode_sample(no_targets)), no_targets));
}

TEST_CASE("malformed sample files report the byte offset")
{
    auto bytes = encode_sample(small_sample(0));
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    try {
        decode_sample(bad_magic);
        FAIL("bad magic accepted");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 0);
    }
    auto truncated = bytes;
    truncated.resize(truncated.size() - 2);
    CHECK_THROWS_AS(decode_sample(truncated), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    try {
        decode_sample(bad_version);
        FAIL("bad version accepted");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 4);
        CHECK(std::string(e.what()).find("byte offset 4") != std::string::npos);
    }
    auto huge = bytes;
    huge[12] = char(0xff);
    huge[13] = char(0xff);
    huge[14] = char(0xff);
    CHECK_THROWS_AS(decode_sample(huge), FormatError);

    auto dir = scratch_dir("malformed");
    fs::create_directories(dir);
    write_file(dir / "broken.gits", truncated);
    try {
        read_sample(dir / "broken.gits");
        FAIL("truncated file accepted");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("broken.gits") != std::string::npos);
        CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("named schemas declare the benchmark layouts")
{
    CHECK(DatasetSchema::named("ns").output_count() == 3);
    CHECK(DatasetSchema::named("ns").output_names == std::vector<std::string>{"u", "v", "p"});
    CHECK(DatasetSchema::named("heat").input_channels.size() == 5);
    CHECK(DatasetSchema::named("airfoil").points_per_sample == 11271);
    CHECK_THROWS_AS(DatasetSchema::named("weather"), std::invalid_argument);
}

TEST_CASE("schema checks reject channel mismatches")
{
    Sample s = small_sample(0);
    CHECK_NOTHROW(DatasetSchema::named("poisson").check(s));
    CHECK_THROWS_WITH_AS(DatasetSchema::named("ns").check(s), doctest::Contains("output channels"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(DatasetSchema::named("heat").check(s), doctest::Contains("input functions"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(DatasetSchema::named("airfoil").check(s), doctest::Contains("query points"),
                         std::invalid_argument);
}

TEST_CASE("structured meshes flatten row-major")
{
    std::vector<double> x(kAirfoilRows * kAirfoilCols), y(x.size());
    for (std::size_t r = 0; r < kAirfoilRows; ++r)
        for (std::size_t c = 0; c < kAirfoilCols; ++c) {
            x[r * kAirfoilCols + c] = double(r);
            y[r * kAirfoilCols + c] = double(c);
        }
    auto cloud = flatten_structured_mesh(kAirfoilRows, kAirfoilCols, x, y);
    CHECK(cloud.size() == 221 * 51);
    CHECK(cloud.coord(51 * 3 + 7, 0) == 3);
    CHECK(cloud.coord(51 * 3 + 7, 1) == 7);
    CHECK_THROWS_AS(flatten_structured_mesh(2, 2, std::span(x).first(3), std::span(y).first(4)),
                    std::invalid_argument);
}

TEST_CASE("datasets round-trip through a directory")
{
    auto dir = scratch_dir("roundtrip");
    Dataset d = generate_poisson_dataset(PoissonSpec{8, 16, 32, 2}, 2);
    write_dataset(dir, d);
    Dataset back = load_dataset(dir);
    CHECK(back.schema.name == "poisson");
    CHECK(back.train == d.train);
    CHECK(back.test == d.test);
    REQUIRE(back.poisson.has_value());
    CHECK(back.poisson->seed == 2);
    CHECK(back.poisson->grid == 32);
    REQUIRE(back.samples.size() == d.samples.size());
    for (std::size_t i = 0; i < d.samples.size(); ++i)
        CHECK(same_sample(back.samples[i], d.samples[i]));
    CHECK(back.stats.to_text() == d.stats.to_text());
    CHECK_THROWS_WITH_AS(load_dataset(dir, DatasetSchema::named("ns")), doctest::Contains("output channels"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(load_dataset(dir, DatasetSchema::named("heat")), doctest::Contains("input functions"),
                         std::invalid_argument);
    fs::remove_all(dir);
}

TEST_CASE("constant channels normalise to zero with a warning")
{
    Sample a = small_sample(0), b = small_sample(0);
    for (auto* s : {&a, &b})
        s->inputs[0] = PointCloud(2, s->inputs[0].coords(), 1, std::vector<double>{4, 4, 4});
    std::vector<std::string> warnings;
    std::vector<Sample> train{a, b};
    auto stats = NormalizationStats::compute(train, [&](const std::string& w) { warnings.push_back(w); });
    CHECK(!warnings.empty());
    auto normalized = normalize(a, stats);
    for (double v : normalized.inputs[0].values())
        CHECK(v == 0.0);
}

TEST_CASE("denormalisation inverts normalisation")
{
    Rng rng(8);
    std::vector<Sample> train;
    for (int i = 0; i < 3; ++i) {
        Sample s = small_sample(0);
        s.targets = {2, 1, {uniform(rng, -5, 5), uniform(rng, -5, 5)}};
        train.push_back(s);
    }
    auto stats = NormalizationStats::compute(train);
    Sample test = small_sample(1);
    test.targets = {2, 1, {uniform(rng, -50, 50), uniform(rng, -50, 50)}};
    auto normalized = normalize_targets(test.targets, stats);
    auto back = denormalize(normalized, stats);
    for (std::size_t i = 0; i < back.data.size(); ++i)
        CHECK(std::abs(back.data[i] - test.targets.data[i]) <= 1e-12);
}
