#include "gito/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace gito {

namespace {

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::size_t parse_count(const std::string& key, const std::string& value)
{
    std::size_t out = 0;
    auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || end != value.data() + value.size())
        throw std::invalid_argument(key + ": expected a non-negative integer, got '" + value + "'");
    return out;
}

double parse_real(const std::string& key, const std::string& value)
{
    try {
        std::size_t used = 0;
        const double out = std::stod(value, &used);
        if (used == value.size())
            return out;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(key + ": expected a number, got '" + value + "'");
}

bool parse_flag(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1")
        return true;
    if (value == "false" || value == "0")
        return false;
    throw std::invalid_argument(key + ": expected true or false, got '" + value + "'");
}

std::vector<std::size_t> parse_counts(const std::string& key, const std::string& value)
{
    std::vector<std::size_t> out;
    std::stringstream stream(value);
    std::string item;
    while (std::getline(stream, item, ','))
        out.push_back(parse_count(key, trim(item)));
    if (out.empty())
        throw std::invalid_argument(key + ": empty list");
    return out;
}

std::string format_real(double v)
{
    char buffer[32];
    auto end = std::to_chars(buffer, buffer + sizeof buffer, v).ptr;
    return std::string(buffer, end);
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text)
{
    std::map<std::string, std::string> out;
    std::stringstream stream(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(stream, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.resize(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(number) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw std::invalid_argument("line " + std::to_string(number) + ": empty key");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

void ModelConfig::validate() const
{
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0)
            throw std::invalid_argument(std::string(name) + " must be at least 1");
    };
    positive(hidden_size, "hidden_size");
    positive(n_heads, "n_heads");
    positive(n_experts, "n_experts");
    positive(n_attention_layers, "n_attention_layers");
    positive(mlp_layers, "mlp_layers");
    positive(mlp_hidden, "mlp_hidden");
    positive(expert_expansion, "expert_expansion");
    positive(input_function_count, "input_function_count");
    positive(output_field_count, "output_field_count");
    if (hidden_size % n_heads != 0)
        throw std::invalid_argument("hidden_size " + std::to_string(hidden_size) + " is not divisible by n_heads " +
                                    std::to_string(n_heads));
    if (coord_dim != 2 && coord_dim != 3)
        throw std::invalid_argument("coord_dim must be 2 or 3");
    if (input_channels.size() != input_function_count)
        throw std::invalid_argument("input_channels lists " + std::to_string(input_channels.size()) +
                                    " entries for " + std::to_string(input_function_count) + " input functions");
    for (const auto* g : {&query_graph, &input_graph})
        if ((g->kind == GraphStrategy::Kind::knn && g->k == 0) ||
            (g->kind == GraphStrategy::Kind::radius && !(g->radius > 0)))
            throw std::invalid_argument("graph strategy " + g->to_string() + " is degenerate");
}

void TrainConfig::validate() const
{
    if (epochs == 0 || batch_size == 0 || checkpoint_interval == 0)
        throw std::invalid_argument("epochs, batch_size and checkpoint_interval must be at least 1");
    if (!(max_lr > 0) || !(div_factor > 0) || !(final_div_factor > 0) || !(grad_clip_norm > 0))
        throw std::invalid_argument("max_lr, div_factor, final_div_factor and grad_clip_norm must be positive");
    if (!(weight_decay >= 0))
        throw std::invalid_argument("weight_decay must be non-negative");
    if (!(pct_start > 0 && pct_start < 1))
        throw std::invalid_argument("pct_start must lie in (0, 1)");
}

void ExperimentConfig::apply(const std::map<std::string, std::string>& entries)
{
    ModelConfig& m = model;
    TrainConfig& t = train;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    auto count = [](std::size_t& field) -> Setter {
        return [&field](const std::string& k, const std::string& v) { field = parse_count(k, v); };
    };
    auto real = [](double& field) -> Setter {
        return [&field](const std::string& k, const std::string& v) { field = parse_real(k, v); };
    };
    auto flag = [](bool& field) -> Setter {
        return [&field](const std::string& k, const std::string& v) { field = parse_flag(k, v); };
    };
    auto strategy = [](GraphStrategy& field) -> Setter {
        return [&field](const std::string&, const std::string& v) { field = GraphStrategy::parse(v); };
    };
    const std::map<std::string, Setter> setters{
        {"hidden_size", count(m.hidden_size)},
        {"n_heads", count(m.n_heads)},
        {"n_experts", count(m.n_experts)},
        {"n_attention_layers", count(m.n_attention_layers)},
        {"n_hgt_blocks", count(m.n_hgt_blocks)},
        {"mlp_layers", count(m.mlp_layers)},
        {"mlp_hidden", count(m.mlp_hidden)},
        {"expert_expansion", count(m.expert_expansion)},
        {"query_graph", strategy(m.query_graph)},
        {"input_graph", strategy(m.input_graph)},
        {"apply_hgt_to_inputs", flag(m.apply_hgt_to_inputs)},
        {"fusion", flag(m.fusion)},
        {"moe_in_hgt", flag(m.moe_in_hgt)},
        {"tno_self_attention", flag(m.tno_self_attention)},
        {"input_function_count", count(m.input_function_count)},
        {"input_channels",
         [&m](const std::string& k, const std::string& v) { m.input_channels = parse_counts(k, v); }},
        {"output_field_count", count(m.output_field_count)},
        {"coord_dim", count(m.coord_dim)},
        {"precision",
         [&m](const std::string& k, const std::string& v) {
             if (v == "float32")
                 m.precision = Precision::float32;
             else if (v == "float64")
                 m.precision = Precision::float64;
             else
                 throw std::invalid_argument(k + ": expected float32 or float64, got '" + v + "'");
         }},
        {"activation",
         [](const std::string& k, const std::string& v) {
             if (v != "gelu")
                 throw std::invalid_argument(k + ": only gelu is supported, got '" + v + "'");
         }},
        {"epochs", count(t.epochs)},
        {"batch_size", count(t.batch_size)},
        {"max_lr", real(t.max_lr)},
        {"weight_decay", real(t.weight_decay)},
        {"pct_start", real(t.pct_start)},
        {"div_factor", real(t.div_factor)},
        {"final_div_factor", real(t.final_div_factor)},
        {"grad_clip_norm", real(t.grad_clip_norm)},
        {"seed", [&t](const std::string& k, const std::string& v) { t.seed = parse_count(k, v); }},
        {"checkpoint_interval", count(t.checkpoint_interval)},
    };
    for (const auto& [key, value] : entries) {
        auto it = setters.find(key);
        if (it == setters.end())
            throw std::invalid_argument("unknown configuration key '" + key + "'");
        it->second(key, value);
    }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text)
{
    ExperimentConfig config;
    config.apply(parse_key_values(text));
    return config;
}

ExperimentConfig ExperimentConfig::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open config " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return parse(buffer.str());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
}

std::string ExperimentConfig::to_text() const
{
    const ModelConfig& m = model;
    const TrainConfig& t = train;
    std::ostringstream out;
    auto flag = [](bool b) { return b ? "true" : "false"; };
    out << "hidden_size=" << m.hidden_size << '\n'
        << "n_heads=" << m.n_heads << '\n'
        << "n_experts=" << m.n_experts << '\n'
        << "n_attention_layers=" << m.n_attention_layers << '\n'
        << "n_hgt_blocks=" << m.n_hgt_blocks << '\n'
        << "mlp_layers=" << m.mlp_layers << '\n'
        << "mlp_hidden=" << m.mlp_hidden << '\n'
        << "expert_expansion=" << m.expert_expansion << '\n'
        << "query_graph=" << m.query_graph.to_string() << '\n'
        << "input_graph=" << m.input_graph.to_string() << '\n'
        << "apply_hgt_to_inputs=" << flag(m.apply_hgt_to_inputs) << '\n'
        << "fusion=" << flag(m.fusion) << '\n'
        << "moe_in_hgt=" << flag(m.moe_in_hgt) << '\n'
        << "tno_self_attention=" << flag(m.tno_self_attention) << '\n'
        << "input_function_count=" << m.input_function_count << '\n'
        << "input_channels=";
    for (std::size_t i = 0; i < m.input_channels.size(); ++i)
        out << (i ? "," : "") << m.input_channels[i];
    out << '\n'
        << "output_field_count=" << m.output_field_count << '\n'
        << "coord_dim=" << m.coord_dim << '\n'
        << "precision=" << (m.precision == Precision::float32 ? "float32" : "float64") << '\n'
        << "activation=gelu\n"
        << "epochs=" << t.epochs << '\n'
        << "batch_size=" << t.batch_size << '\n'
        << "max_lr=" << format_real(t.max_lr) << '\n'
        << "weight_decay=" << format_real(t.weight_decay) << '\n'
        << "pct_start=" << format_real(t.pct_start) << '\n'
        << "div_factor=" << format_real(t.div_factor) << '\n'
        << "final_div_factor=" << format_real(t.final_div_factor) << '\n'
        << "grad_clip_norm=" << format_real(t.grad_clip_norm) << '\n'
        << "seed=" << t.seed << '\n'
        << "checkpoint_interval=" << t.checkpoint_interval << '\n';
    return out.str();
}

}  // namespace gito
