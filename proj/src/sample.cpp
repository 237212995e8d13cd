#include "gito/sample.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "gito/config.hpp"

namespace gito {

void Sample::validate() const
{
    if (inputs.empty())
        throw std::invalid_argument("sample has no input functions");
    const std::size_t dim = queries.dim();
    if (queries.size() == 0)
        throw std::invalid_argument("sample has no query points");
    for (std::size_t f = 0; f < inputs.size(); ++f)
        if (inputs[f].dim() != dim)
            throw std::invalid_argument("input function " + std::to_string(f) + " has dimension " +
                                        std::to_string(inputs[f].dim()) + ", queries have " + std::to_string(dim));
    if (!has_targets())
        return;
    if (targets.rows != queries.size() || targets.data.size() != targets.rows * targets.cols)
        throw std::invalid_argument("targets (" + std::to_string(targets.rows) + " rows) are not row-aligned with " +
                                    std::to_string(queries.size()) + " query points");
}

namespace {

struct Moments {
    std::vector<double> sum, sum_sq;
    std::size_t count = 0;

    explicit Moments(std::size_t width) : sum(width, 0.0), sum_sq(width, 0.0) {}
    void add(std::span<const double> values, std::size_t width)
    {
        for (std::size_t i = 0; i < values.size(); ++i) {
            sum[i % width] += values[i];
            sum_sq[i % width] += values[i] * values[i];
        }
        count += values.size() / width;
    }
    double mean(std::size_t c) const { return sum[c] / static_cast<double>(count); }
    double spread(std::size_t c) const
    {
        const double m = mean(c);
        return std::sqrt(std::max(0.0, sum_sq[c] / static_cast<double>(count) - m * m));
    }
    double rms(std::size_t c) const { return std::sqrt(sum_sq[c] / static_cast<double>(count)); }
};

double guard(double spread, const std::string& what, const std::function<void(const std::string&)>& warn)
{
    // Spreads this small relative to unit scale are constant channels.
    if (spread > 1e-12)
        return spread;
    if (warn)
        warn(what + " has zero spread; using 1");
    return 1.0;
}

std::string join(const std::vector<double>& v)
{
    std::string out;
    char buffer[32];
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto end = std::to_chars(buffer, buffer + sizeof buffer, v[i]).ptr;
        out += (i ? "," : "") + std::string(buffer, end);
    }
    return out;
}

std::vector<double> split(const std::string& text)
{
    std::vector<double> out;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ',')) {
        double v = 0;
        auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || end != item.data() + item.size())
            throw std::invalid_argument("bad number '" + item + "' in normalization statistics");
        out.push_back(v);
    }
    return out;
}

std::vector<double> transform(std::span<const double> values, std::size_t width, const std::vector<double>& shift,
                              const std::vector<double>& scale)
{
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        out[i] = (values[i] - shift[i % width]) / scale[i % width];
    return out;
}

}  // namespace

NormalizationStats NormalizationStats::compute(std::span<const Sample> train,
                                               const std::function<void(const std::string&)>& warn)
{
    if (train.empty())
        throw std::invalid_argument("normalization needs at least one training sample");
    const Sample& first = train.front();
    const std::size_t dim = first.queries.dim();
    Moments coords(dim), targets(first.targets.cols);
    std::vector<Moments> inputs;
    for (const auto& in : first.inputs)
        inputs.emplace_back(std::max<std::size_t>(in.channels(), 1));
    for (const Sample& s : train) {
        if (s.inputs.size() != first.inputs.size() || s.targets.cols != first.targets.cols)
            throw std::invalid_argument("training samples disagree on input or output channel layout");
        coords.add(s.queries.coords(), dim);
        targets.add(s.targets.data, s.targets.cols);
        for (std::size_t f = 0; f < s.inputs.size(); ++f) {
            if (s.inputs[f].channels() != first.inputs[f].channels())
                throw std::invalid_argument("input function " + std::to_string(f) + " changes channel count");
            coords.add(s.inputs[f].coords(), dim);
            if (s.inputs[f].has_values())
                inputs[f].add(s.inputs[f].values(), s.inputs[f].channels());
        }
    }
    NormalizationStats stats;
    for (std::size_t a = 0; a < dim; ++a) {
        stats.coord_mean.push_back(coords.mean(a));
        stats.coord_std.push_back(guard(coords.spread(a), "coordinate " + std::to_string(a), warn));
    }
    for (std::size_t f = 0; f < inputs.size(); ++f) {
        std::vector<double> mean, spread;
        for (std::size_t c = 0; c < first.inputs[f].channels(); ++c) {
            mean.push_back(inputs[f].mean(c));
            spread.push_back(guard(inputs[f].spread(c),
                                   "input " + std::to_string(f) + " channel " + std::to_string(c), warn));
        }
        stats.input_mean.push_back(mean);
        stats.input_std.push_back(spread);
    }
    for (std::size_t c = 0; c < first.targets.cols; ++c)
        stats.target_scale.push_back(guard(targets.rms(c), "target channel " + std::to_string(c), warn));
    return stats;
}

std::string NormalizationStats::to_text() const
{
    std::ostringstream out;
    out << "coord_mean=" << join(coord_mean) << '\n' << "coord_std=" << join(coord_std) << '\n';
    out << "input_functions=" << input_mean.size() << '\n';
    for (std::size_t f = 0; f < input_mean.size(); ++f)
        out << "input" << f << "_mean=" << join(input_mean[f]) << '\n'
            << "input" << f << "_std=" << join(input_std[f]) << '\n';
    out << "target_scale=" << join(target_scale) << '\n';
    return out.str();
}

NormalizationStats NormalizationStats::from_text(const std::string& text)
{
    auto entries = parse_key_values(text);
    auto get = [&](const std::string& key) {
        auto it = entries.find(key);
        if (it == entries.end())
            throw std::invalid_argument("normalization statistics lack '" + key + "'");
        return it->second;
    };
    NormalizationStats stats;
    stats.coord_mean = split(get("coord_mean"));
    stats.coord_std = split(get("coord_std"));
    const std::size_t functions = std::stoul(get("input_functions"));
    for (std::size_t f = 0; f < functions; ++f) {
        stats.input_mean.push_back(split(get("input" + std::to_string(f) + "_mean")));
        stats.input_std.push_back(split(get("input" + std::to_string(f) + "_std")));
    }
    stats.target_scale = split(get("target_scale"));
    return stats;
}

PointCloud normalize_queries(const PointCloud& queries, const NormalizationStats& stats)
{
    return PointCloud(queries.dim(), transform(queries.coords(), queries.dim(), stats.coord_mean, stats.coord_std));
}

PointCloud normalize_input(const PointCloud& input, std::size_t function, const NormalizationStats& stats)
{
    if (function >= stats.input_mean.size() || stats.input_mean[function].size() != input.channels())
        throw std::invalid_argument("input function " + std::to_string(function) +
                                    " does not match the normalization statistics");
    auto coords = transform(input.coords(), input.dim(), stats.coord_mean, stats.coord_std);
    if (!input.has_values())
        return PointCloud(input.dim(), std::move(coords));
    return PointCloud(input.dim(), std::move(coords), input.channels(),
                      transform(input.values(), input.channels(), stats.input_mean[function],
                                stats.input_std[function]));
}

FeatureMatrix normalize_targets(const FeatureMatrix& targets, const NormalizationStats& stats)
{
    if (targets.cols != stats.target_scale.size())
        throw std::invalid_argument("target channel count differs from the normalization statistics");
    const std::vector<double> zero(targets.cols, 0.0);
    return {targets.rows, targets.cols, transform(targets.data, targets.cols, zero, stats.target_scale)};
}

FeatureMatrix denormalize(const FeatureMatrix& predictions, const NormalizationStats& stats)
{
    if (predictions.cols != stats.target_scale.size())
        throw std::invalid_argument("prediction channel count differs from the normalization statistics");
    FeatureMatrix out = predictions;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] *= stats.target_scale[i % out.cols];
    return out;
}

Sample normalize(const Sample& sample, const NormalizationStats& stats)
{
    Sample out;
    for (std::size_t f = 0; f < sample.inputs.size(); ++f)
        out.inputs.push_back(normalize_input(sample.inputs[f], f, stats));
    out.queries = normalize_queries(sample.queries, stats);
    out.targets = normalize_targets(sample.targets, stats);
    return out;
}

}  // namespace gito
