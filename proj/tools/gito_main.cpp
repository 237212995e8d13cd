#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gito/data.hpp"
#include "gito/grad_suite.hpp"
#include "gito/train.hpp"

namespace fs = std::filesystem;
using namespace gito;

namespace {

struct Flags {
    std::string config, data, model, out, strategy, variant = "fusion,no_fusion", split = "test";
    std::optional<std::uint64_t> seed;
    std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
    std::optional<std::size_t> k, test;
    std::optional<double> radius;
    std::size_t query_factor = 1, samples = 240, points = 256, grid = 128;
    std::optional<std::string> resume;
    std::vector<std::string> overrides;
    bool count_only = false;
};

/// Shortest round-trip decimal, always with a decimal point or exponent.
std::string real(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    if (s.find_first_of(".eEn") == std::string::npos)
        s += ".0";
    return s;
}

void warn(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

ExperimentConfig experiment(const Flags& f)
{
    ExperimentConfig config = f.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(f.config);
    std::map<std::string, std::string> entries;
    for (const auto& o : f.overrides) {
        auto eq = o.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + o + "'");
        entries[o.substr(0, eq)] = o.substr(eq + 1);
    }
    config.apply(entries);
    if (f.seed)
        config.train.seed = *f.seed;
    if (!f.strategy.empty() || f.k || f.radius) {
        GraphStrategy g = config.model.query_graph;
        if (f.strategy == "knn")
            g = GraphStrategy::knn(f.k.value_or(g.kind == GraphStrategy::Kind::knn ? g.k : 8));
        else if (f.strategy == "radius")
            g = GraphStrategy::radius_of(f.radius.value_or(g.kind == GraphStrategy::Kind::radius ? g.radius : 0.1));
        else if (g.kind == GraphStrategy::Kind::knn && f.k)
            g.k = *f.k;
        else if (g.kind == GraphStrategy::Kind::radius && f.radius)
            g.radius = *f.radius;
        config.model.query_graph = config.model.input_graph = g;
    }
    config.model.validate();
    config.train.validate();
    return config;
}

GraphStrategy strategy(const Flags& f)
{
    if (f.strategy == "radius")
        return GraphStrategy::radius_of(f.radius.value_or(0.1));
    return GraphStrategy::knn(f.k.value_or(8));
}

/// Builds the model stored in a checkpoint at its own precision and calls fn(model).
template <typename F>
void with_checkpoint_model(const Checkpoint& ckpt, F&& fn)
{
    const ExperimentConfig config = checkpoint_config(ckpt);
    auto run = [&]<typename T>(T) {
        GitoModel<T> model(config.model, config.train.seed);
        load_parameters(model, ckpt);
        fn(model);
    };
    if (config.model.precision == Precision::float64)
        run(double{});
    else
        run(float{});
}

std::vector<std::size_t> selected(const Dataset& d, const std::string& split)
{
    if (split == "train")
        return d.train;
    if (split == "all") {
        std::vector<std::size_t> all(d.samples.size());
        for (std::size_t i = 0; i < all.size(); ++i)
            all[i] = i;
        return all;
    }
    return d.test.empty() ? d.train : d.test;
}

int cmd_gen_data(const Flags& f)
{
    PoissonSpec spec{f.samples, f.points, f.grid, f.seed.value_or(0)};
    Dataset d = generate_poisson_dataset(spec, f.test, warn);
    write_dataset(f.out, d);
    std::cout << "samples=" << d.samples.size() << " train=" << d.train.size() << " test=" << d.test.size()
              << " points=" << spec.points << " grid=" << spec.grid << " out=" << f.out << '\n';
    return 0;
}

int cmd_train(const Flags& f)
{
    const ExperimentConfig config = experiment(f);
    const Dataset d = load_dataset(f.data, std::nullopt, warn);
    TrainOptions options;
    options.threads = f.threads;
    options.out_dir = f.out;
    if (f.resume)
        options.resume_from = *f.resume;
    options.log = [](const std::string& line) { std::cout << line << std::endl; };
    auto run = [&]<typename T>(T) {
        GitoModel<T> model(config.model, config.train.seed);
        auto result = train(model, d, config, options);
        std::cout << "best_test_rel_l2=" << real(result.best_test_rel_l2) << " best_epoch=" << result.best_epoch
                  << " checkpoint=" << (fs::path(f.out) / kBestCheckpoint).string() << '\n';
    };
    if (config.model.precision == Precision::float64)
        run(double{});
    else
        run(float{});
    return 0;
}

int cmd_eval(const Flags& f)
{
    const Checkpoint ckpt = read_checkpoint(f.model);
    const NormalizationStats stats = checkpoint_stats(ckpt);
    Dataset d = load_dataset(f.data, std::nullopt, warn);
    d.stats = stats;
    with_checkpoint_model(ckpt, [&](const auto& model) {
        Evaluation e;
        if (f.query_factor != 1) {
            e = evaluate_super_resolution(model, d, f.query_factor, f.threads);
        } else {
            const auto samples = d.subset(selected(d, f.split));
            e = evaluate(model, samples, stats, f.threads, d.schema.output_names);
        }
        std::cout << "samples=" << e.per_sample.size() << " query_factor=" << f.query_factor;
        for (std::size_t c = 0; c < e.errors.per_channel.size(); ++c) {
            const std::string name =
                c < d.schema.output_names.size() ? d.schema.output_names[c] : "channel" + std::to_string(c);
            std::cout << ' ' << name << '=' << real(e.errors.per_channel[c]);
        }
        std::cout << " mean=" << real(e.errors.mean) << " finite=" << (e.finite ? "yes" : "no") << '\n';
    });
    return 0;
}

int cmd_predict(const Flags& f)
{
    const Checkpoint ckpt = read_checkpoint(f.model);
    const NormalizationStats stats = checkpoint_stats(ckpt);
    Dataset d = load_dataset(f.data, std::nullopt, warn);
    with_checkpoint_model(ckpt, [&](const auto& model) {
        for (auto& s : d.samples)
            s.targets = predict(model, s, stats);
    });
    write_dataset(f.out, d);
    std::cout << "predictions=" << d.samples.size() << " out=" << f.out << '\n';
    return 0;
}

int cmd_graph_stats(const Flags& f)
{
    const Dataset d = load_dataset(f.data, std::nullopt, warn);
    const GraphStrategy g = strategy(f);
    auto report = [&](const std::string& name, auto&& clouds) {
        std::size_t nodes = 0, edges = 0, isolated = 0;
        for (const PointCloud* c : clouds) {
            const GraphTopology t = branch_topology(*c, g);
            std::vector<char> has_edge(t.num_nodes, 0);
            for (Index r : t.receivers)
                has_edge[r] = 1;
            nodes += t.num_nodes;
            edges += t.num_edges();
            isolated += static_cast<std::size_t>(std::count(has_edge.begin(), has_edge.end(), 0));
        }
        std::cout << "graph=" << name << " strategy=" << g.to_string() << " samples=" << d.samples.size()
                  << " nodes=" << nodes << " edges=" << edges << " isolated=" << isolated
                  << " mean_in_degree=" << real(nodes ? double(edges) / double(nodes) : 0.0) << '\n';
    };
    std::vector<const PointCloud*> queries, inputs;
    for (const auto& s : d.samples) {
        queries.push_back(&s.queries);
        for (const auto& in : s.inputs)
            inputs.push_back(&in);
    }
    report("query", queries);
    report("input", inputs);
    return 0;
}

int cmd_grad_check(const Flags& f)
{
    const ExperimentConfig config = experiment(f);
    const std::uint64_t seed = config.train.seed;
    const auto entries = run_gradient_suite(config.model, {seed, seed + 1, seed + 2});
    constexpr double tolerance = 1e-4;
    std::size_t failed = 0;
    for (const auto& e : entries) {
        const bool ok = e.relative_error < tolerance;
        failed += ok ? 0 : 1;
        std::cout << "component=" << e.component << " seed=" << e.seed << " rel_error=" << real(e.relative_error)
                  << " worst=" << e.worst_tensor << " analytic=" << real(e.analytic)
                  << " numeric=" << real(e.numeric) << " peak=" << real(e.peak) << " status=" << (ok ? "PASS" : "FAIL") << '\n';
    }
    if (failed)
        throw std::runtime_error(std::to_string(failed) + " gradient checks exceed relative error " + real(tolerance));
    return 0;
}

int cmd_ablate(const Flags& f)
{
    const ExperimentConfig config = experiment(f);
    const Dataset d = load_dataset(f.data, std::nullopt, warn);
    TrainOptions options;
    options.threads = f.threads;
    options.out_dir = f.out;
    options.log = [](const std::string& line) { std::cerr << line << '\n'; };
    const auto rows = run_ablation(ablation_variants(f.variant, config.model), d, config, !f.count_only, options);
    std::cout << format_ablation(rows);
    return 0;
}

std::string one_line(std::string s)
{
    for (char& c : s)
        if (c == '\n' || c == '\r')
            c = ' ';
    return s;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Graph-informed transformer operator: training, evaluation and data tools"};
    app.require_subcommand(1, 1);
    Flags f;

    auto config_opt = [&](CLI::App* c, bool required) {
        auto* o = c->add_option("--config", f.config, "Experiment configuration file")->check(CLI::ExistingFile);
        if (required)
            o->required();
        c->add_option("--set", f.overrides, "Configuration override key=value (repeatable)");
    };
    auto seed_opt = [&](CLI::App* c) { c->add_option("--seed", f.seed, "Seed for all randomness"); };
    auto threads_opt = [&](CLI::App* c) {
        c->add_option("--threads", f.threads, "Worker threads")->check(CLI::PositiveNumber);
    };
    auto graph_opts = [&](CLI::App* c) {
        c->add_option("--strategy", f.strategy, "Graph strategy")->check(CLI::IsMember({"knn", "radius"}));
        c->add_option("--k", f.k, "Neighbours per node for knn")->check(CLI::PositiveNumber);
        c->add_option("--radius", f.radius, "Radius for radius graphs")->check(CLI::PositiveNumber);
    };

    auto* train = app.add_subcommand("train", "Train a model");
    config_opt(train, true);
    train->add_option("--data", f.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", f.out, "Run directory")->required();
    train->add_option("--resume", f.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
    seed_opt(train);
    threads_opt(train);
    graph_opts(train);

    auto* eval = app.add_subcommand("eval", "Relative L2 error of a checkpoint");
    eval->add_option("--model", f.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", f.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--query-factor", f.query_factor, "Query density multiplier (generated data only)")
        ->check(CLI::PositiveNumber);
    eval->add_option("--split", f.split, "Samples to evaluate")->check(CLI::IsMember({"test", "train", "all"}));
    threads_opt(eval);

    auto* predict_cmd = app.add_subcommand("predict", "Write predictions as a dataset directory");
    predict_cmd->add_option("--model", f.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--data", f.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    predict_cmd->add_option("--out", f.out, "Output directory")->required();

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic Poisson dataset");
    gen->add_option("--out", f.out, "Output directory")->required();
    gen->add_option("--samples", f.samples, "Number of samples")->check(CLI::Range(2, 1000000));
    gen->add_option("--points", f.points, "Input and query points per sample")->check(CLI::Range(16, 10000000));
    gen->add_option("--grid", f.grid, "Oracle intervals per side")->check(CLI::Range(2, 4096));
    gen->add_option("--test", f.test, "Test samples (default one sixth)");
    seed_opt(gen);

    auto* stats = app.add_subcommand("graph-stats", "Edge counts of the graphs built over a dataset");
    stats->add_option("--data", f.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    graph_opts(stats);

    auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient checks of every layer");
    config_opt(grad, false);
    seed_opt(grad);

    auto* ablate = app.add_subcommand("ablate", "Compare fusion and graph-construction variants");
    config_opt(ablate, true);
    ablate->add_option("--data", f.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    ablate->add_option("--variant", f.variant, "Comma-separated: fusion, no_fusion, knn{k}, radius{r}");
    ablate->add_option("--out", f.out, "Directory for per-variant runs");
    ablate->add_flag("--count-only", f.count_only, "Report parameters and edges without training");
    seed_opt(ablate);
    threads_opt(ablate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0)
            return app.exit(e);
        std::cerr << "error: " << one_line(e.what()) << '\n' << app.help();
        return 2;
    }

    try {
        if (*train)
            return cmd_train(f);
        if (*eval)
            return cmd_eval(f);
        if (*predict_cmd)
            return cmd_predict(f);
        if (*gen)
            return cmd_gen_data(f);
        if (*stats)
            return cmd_graph_stats(f);
        if (*grad)
            return cmd_grad_check(f);
        if (*ablate)
            return cmd_ablate(f);
    } catch (const std::exception& e) {
        std::cerr << "error: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 1;
}
