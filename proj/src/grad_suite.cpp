#include "gito/grad_suite.hpp"

#include <algorithm>
#include <functional>
#include <stdexcept>

#include "gito/hgt.hpp"
#include "gito/model.hpp"
#include "gito/ops.hpp"
#include "gito/train.hpp"

namespace gito {

namespace {

using D = Tensor<double>;

void fill(Rng& rng, D& t, double scale = 1.0)
{
    for (auto& v : t.mutable_data())
        v = uniform(rng, -scale, scale);
}

D random_tensor(Rng& rng, Shape shape, bool requires_grad = true)
{
    D t = D::zeros(std::move(shape), requires_grad);
    fill(rng, t);
    return t;
}

D project(const D& out, const D& weights) { return sum(mul(out, weights)); }

PointCloud random_cloud(Rng& rng, std::size_t n, std::size_t dim, std::size_t channels)
{
    std::vector<double> coords(n * dim), values(n * channels);
    for (auto& v : coords)
        v = uniform(rng, 0.0, 1.0);
    for (auto& v : values)
        v = uniform(rng, -1.0, 1.0);
    return PointCloud(dim, std::move(coords), channels, std::move(values));
}

class SuiteRunner {
public:
    SuiteRunner(const GradientSuiteSettings& settings, std::uint64_t seed, std::vector<GradientSuiteEntry>& out)
        : settings_(settings), seed_(seed), out_(out)
    {
    }

    /// Redraws the test point until it is clear of every kink, then checks.
    void run(const std::string& component, const std::function<void()>& draw, const std::function<D()>& loss,
             const ParameterList<double>& tensors)
    {
        double margin = 0;
        for (std::size_t attempt = 0;; ++attempt) {
            draw();
            margin = kink_margin(loss);
            if (margin >= settings_.min_margin)
                break;
            if (attempt + 1 >= settings_.max_redraws)
                throw std::runtime_error(component + ": no test point clear of kinks after " +
                                         std::to_string(settings_.max_redraws) + " draws");
        }
        auto results = check_gradients_kink_safe(loss, tensors, settings_.check);
        GradientSuiteEntry e{component, seed_, 0, "", margin};
        for (const auto& r : results)
            if (r.relative_error >= e.relative_error) {
                e.relative_error = r.relative_error;
                e.worst_tensor = r.name;
                e.analytic = r.analytic;
                e.numeric = r.numeric;
                e.peak = r.peak;
            }
        out_.push_back(std::move(e));
    }

private:
    const GradientSuiteSettings& settings_;
    std::uint64_t seed_;
    std::vector<GradientSuiteEntry>& out_;
};

ExpertConfig experts_of(const ModelConfig& c)
{
    return {c.n_experts, c.expert_expansion, c.coord_dim, c.mlp_hidden};
}

}  // namespace

ModelConfig gradient_check_config(const ModelConfig& config)
{
    ModelConfig c = config;
    c.hidden_size = 4;
    c.n_heads = 2;
    c.n_experts = std::min<std::size_t>(config.n_experts, 2);
    c.n_attention_layers = std::min<std::size_t>(config.n_attention_layers, 1);
    c.n_hgt_blocks = std::min<std::size_t>(config.n_hgt_blocks, 1);
    c.mlp_layers = std::min<std::size_t>(config.mlp_layers, 1);
    c.mlp_hidden = 5;
    c.expert_expansion = 2;
    c.precision = Precision::float64;
    for (auto* g : {&c.query_graph, &c.input_graph})
        if (g->kind == GraphStrategy::Kind::knn)
            g->k = std::min<std::size_t>(g->k, 2);
    c.validate();
    return c;
}

std::vector<GradientSuiteEntry> run_gradient_suite(const ModelConfig& config, const std::vector<std::uint64_t>& seeds,
                                                   const GradientSuiteSettings& settings)
{
    const ModelConfig c = gradient_check_config(config);
    const std::size_t h = c.hidden_size, d = c.coord_dim, n = 6;
    std::vector<GradientSuiteEntry> out;
    for (std::uint64_t seed : seeds) {
        Rng rng(seed);
        SuiteRunner runner(settings, seed, out);
        auto with = [](ParameterList<double> params, std::initializer_list<std::pair<const char*, D>> extra) {
            for (const auto& [name, t] : extra)
                params.emplace_back(name, t);
            return params;
        };

        {
            const std::size_t in = d + c.input_channels.front();
            Mlp<double> encoder(in, c.mlp_hidden, h, c.mlp_layers, rng);
            D x = random_tensor(rng, {n, in}), r = random_tensor(rng, {n, h}, false);
            ParameterList<double> params;
            encoder.collect("encoder", params);
            runner.run("encoder", [&] { fill(rng, x); }, [&] { return project(encoder(x), r); },
                       with(params, {{"x", x}}));
        }

        const PointCloud cloud = random_cloud(rng, n, d, 0);
        const GraphTopology topology = branch_topology(cloud, GraphStrategy::knn(2));
        const std::size_t edges = topology.num_edges();
        const D coords(Shape{n, d}, cloud.coords());

        {
            GatV2Layer<double> gat(h, c.n_heads, c.mlp_hidden, c.mlp_layers, rng);
            D nodes = random_tensor(rng, {n, h}), e = random_tensor(rng, {edges, h});
            D rn = random_tensor(rng, {n, h}, false), re = random_tensor(rng, {edges, h}, false);
            ParameterList<double> params;
            gat.collect("gatv2", params);
            runner.run(
                "gatv2", [&] { fill(rng, nodes), fill(rng, e); },
                [&] {
                    auto [v, e2] = gat(HgtState<double>{nodes, e, &topology});
                    return add(project(v, rn), project(e2, re));
                },
                with(params, {{"nodes", nodes}, {"edges", e}}));
        }

        {
            AttentionBlock<double> block(BlockConfig{h, c.n_heads, false, experts_of(c)}, rng);
            D x = random_tensor(rng, {n, h}), r = random_tensor(rng, {n, h}, false);
            ParameterList<double> params;
            block.collect("global", params);
            runner.run("global_attention", [&] { fill(rng, x); }, [&] { return project(block(x, coords), r); },
                       with(params, {{"x", x}}));
        }

        {
            const std::size_t w = c.fusion ? h : 2 * h;
            HgtConfig hc{w, c.n_heads, c.mlp_hidden, c.mlp_layers, c.fusion, experts_of(c)};
            if (!c.moe_in_hgt)
                hc.moe.experts = 1;
            HgtBlock<double> block(hc, rng);
            D nodes = random_tensor(rng, {n, w}), e = random_tensor(rng, {edges, w});
            D rn = random_tensor(rng, {n, w}, false), re = random_tensor(rng, {edges, w}, false);
            ParameterList<double> params;
            block.collect("hgt", params);
            runner.run(
                "fusion", [&] { fill(rng, nodes), fill(rng, e); },
                [&] {
                    auto [v, e2] = block(HgtState<double>{nodes, e, &topology}, coords);
                    return add(project(v, rn), project(e2, re));
                },
                with(params, {{"nodes", nodes}, {"edges", e}}));
        }

        {
            AttentionBlock<double> block(BlockConfig{h, c.n_heads, true, experts_of(c)}, rng);
            D x = random_tensor(rng, {n, h}), r = random_tensor(rng, {n, h}, false);
            D k1 = random_tensor(rng, {4, h}), k2 = random_tensor(rng, {5, h});
            ParameterList<double> params;
            block.collect("cross", params);
            runner.run(
                "cross_attention", [&] { fill(rng, x), fill(rng, k1), fill(rng, k2); },
                [&] { return project(block(x, coords, {k1, k2}), r); },
                with(params, {{"x", x}, {"context0", k1}, {"context1", k2}}));
        }

        {
            MixtureOfExperts<double> moe(h, experts_of(c), rng);
            D x = random_tensor(rng, {n, h}), r = random_tensor(rng, {n, h}, false);
            D where = random_tensor(rng, {n, d});
            ParameterList<double> params;
            moe.collect("moe", params);
            runner.run("moe", [&] { fill(rng, x), fill(rng, where); }, [&] { return project(moe(x, where), r); },
                       with(params, {{"x", x}, {"coords", where}}));
        }

        {
            Mlp<double> decoder(h, c.mlp_hidden, c.output_field_count, c.mlp_layers, rng);
            D x = random_tensor(rng, {n, h}), r = random_tensor(rng, {n, c.output_field_count}, false);
            ParameterList<double> params;
            decoder.collect("decoder", params);
            runner.run("decoder", [&] { fill(rng, x); }, [&] { return project(decoder(x), r); },
                       with(params, {{"x", x}}));
        }

        {
            GitoModel<double> model(c, seed);
            for (auto& layer : model.decoder().layers())
                for (auto* t : {&layer.weight(), &layer.bias()})
                    fill(rng, *t, 0.5);
            PreparedSample<double> prepared;
            auto draw = [&] {
                Sample s;
                for (std::size_t ch : c.input_channels)
                    s.inputs.push_back(random_cloud(rng, n, d, ch));
                s.queries = random_cloud(rng, 4, d, 0);
                s.targets = {4, c.output_field_count, {}};
                for (std::size_t i = 0; i < 4 * c.output_field_count; ++i)
                    s.targets.data.push_back(uniform(rng, 0.5, 1.5));
                std::vector<Sample> one{s};
                prepared = prepare_sample<double>(s, NormalizationStats::compute(one), c);
            };
            runner.run("end_to_end", draw,
                       [&] { return relative_l2_loss(model.forward(prepared), prepared.targets); },
                       model.parameters());
        }
    }
    return out;
}

}  // namespace gito
