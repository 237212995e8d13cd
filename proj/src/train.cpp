#include "gito/train.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "gito/ops.hpp"
#include "gito/tape.hpp"

namespace gito {

namespace {

std::string format_real(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

double parse_real(const std::string& key, const std::string& text)
{
    double v = 0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size())
        throw std::invalid_argument(key + ": not a number: '" + text + "'");
    return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text)
{
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size())
        throw std::invalid_argument(key + ": not a non-negative integer: '" + text + "'");
    return v;
}

std::string channel_label(std::size_t c, const std::vector<std::string>& names)
{
    std::string label = "channel " + std::to_string(c);
    if (c < names.size())
        label += " (" + names[c] + ")";
    return label;
}

/// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn)
{
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error)
                        error = std::current_exception();
                }
            }
        });
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

/// Seed of an independent stream derived from `seed` and `tag`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct ResumeState {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double best = 0;
    std::size_t best_epoch = 0;

    std::string to_text() const
    {
        return "epoch=" + std::to_string(epoch) + "\nstep=" + std::to_string(step) + "\nbest_test_rel_l2=" +
               format_real(best) + "\nbest_epoch=" + std::to_string(best_epoch) + "\n";
    }
    static ResumeState parse(const std::string& text)
    {
        auto kv = parse_key_values(text);
        auto get = [&](const char* key) {
            auto it = kv.find(key);
            if (it == kv.end())
                throw std::invalid_argument(std::string("checkpoint state lacks ") + key);
            return it->second;
        };
        return {parse_unsigned("epoch", get("epoch")), parse_unsigned("step", get("step")),
                parse_real("best_test_rel_l2", get("best_test_rel_l2")),
                parse_unsigned("best_epoch", get("best_epoch"))};
    }
};

}  // namespace

ChannelErrors relative_l2(const FeatureMatrix& pred, const FeatureMatrix& truth, const std::vector<std::string>& names)
{
    if (pred.rows != truth.rows || pred.cols != truth.cols || pred.data.size() != truth.data.size())
        throw std::invalid_argument("relative_l2: prediction is " + std::to_string(pred.rows) + "x" +
                                    std::to_string(pred.cols) + ", truth is " + std::to_string(truth.rows) + "x" +
                                    std::to_string(truth.cols));
    ChannelErrors out;
    for (std::size_t c = 0; c < truth.cols; ++c) {
        double diff = 0, norm = 0;
        for (std::size_t r = 0; r < truth.rows; ++r) {
            const double d = pred(r, c) - truth(r, c);
            diff += d * d;
            norm += truth(r, c) * truth(r, c);
        }
        if (norm == 0)
            throw std::invalid_argument("relative_l2: truth " + channel_label(c, names) + " has zero norm");
        out.per_channel.push_back(std::sqrt(diff) / std::sqrt(norm));
    }
    for (double e : out.per_channel)
        out.mean += e;
    if (!out.per_channel.empty())
        out.mean /= static_cast<double>(out.per_channel.size());
    return out;
}

template <typename T>
Tensor<T> relative_l2_loss(const Tensor<T>& pred, const Tensor<T>& truth)
{
    if (pred.shape() != truth.shape() || pred.rank() != 2)
        throw ShapeError("relative_l2_loss: prediction " + shape_to_string(pred.shape()) + " vs truth " +
                         shape_to_string(truth.shape()));
    const std::size_t rows = truth.rows(), cols = truth.cols();
    auto td = truth.data();
    std::vector<T> norms(cols, T(0));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            norms[c] += td[r * cols + c] * td[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) {
        if (norms[c] == T(0))
            throw std::invalid_argument("relative_l2_loss: truth " + channel_label(c, {}) + " has zero norm");
        norms[c] = std::sqrt(norms[c]);
    }
    Tensor<T> diff = sub(pred, detach(truth));
    Tensor<T> column_sq = sum_axis(mul(diff, diff), 0);
    Tensor<T> column_norm = sqrt(clamp_min(column_sq, std::numeric_limits<T>::min()));
    return mean(div(column_norm, Tensor<T>({1, cols}, std::move(norms))));
}

namespace {

/// a + (b - a) w, exact at both w = 0 and w = 1.
double blend(double a, double b, double w) { return w < 0.5 ? a + (b - a) * w : b - (b - a) * (1 - w); }

}  // namespace

double onecycle_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg)
{
    const double peak = cfg.max_lr, start = cfg.max_lr / cfg.div_factor, end = cfg.max_lr / cfg.final_div_factor;
    const double warm = cfg.pct_start * static_cast<double>(total_steps);
    const double s = static_cast<double>(std::min(step, total_steps));
    if (s <= warm) {
        if (warm == 0)
            return peak;
        return blend(start, peak, (1 - std::cos(std::numbers::pi * (s / warm))) / 2);
    }
    if (s >= static_cast<double>(total_steps))
        return end;
    const double t = (s - warm) / (static_cast<double>(total_steps) - warm);
    return blend(peak, end, (1 - std::cos(std::numbers::pi * t)) / 2);
}

template <typename T>
AdamW<T>::AdamW(const ParameterList<T>& params, double weight_decay) : params_(params), weight_decay_(weight_decay)
{
    for (const auto& [name, p] : params_) {
        m_.push_back(Tensor<T>::zeros(p.shape()));
        v_.push_back(Tensor<T>::zeros(p.shape()));
    }
}

template <typename T>
void AdamW<T>::step(std::span<const std::vector<T>> grads, double lr)
{
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (grads.size() != params_.size())
        throw std::invalid_argument("AdamW: gradient list does not match the parameters");
    ++steps_;
    const double c1 = 1 - std::pow(beta1, static_cast<double>(steps_));
    const double c2 = 1 - std::pow(beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto p = params_[k].second.mutable_data();
        auto m = m_[k].mutable_data();
        auto v = v_[k].mutable_data();
        const auto& g = grads[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = static_cast<T>(beta1 * m[i] + (1 - beta1) * g[i]);
            v[i] = static_cast<T>(beta2 * v[i] + (1 - beta2) * double(g[i]) * g[i]);
            const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
            p[i] = static_cast<T>(p[i] - lr * (update + weight_decay_ * p[i]));
        }
    }
}

template <typename T>
std::vector<StoredTensor> AdamW<T>::state() const
{
    std::vector<StoredTensor> out;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        out.push_back(store_tensor("adam.m." + params_[k].first, m_[k]));
        out.push_back(store_tensor("adam.v." + params_[k].first, v_[k]));
    }
    return out;
}

template <typename T>
void AdamW<T>::restore(const Checkpoint& checkpoint, std::uint64_t steps)
{
    for (std::size_t k = 0; k < params_.size(); ++k) {
        for (auto [prefix, target] : {std::pair{"adam.m.", &m_[k]}, std::pair{"adam.v.", &v_[k]}}) {
            const StoredTensor* stored = checkpoint.find(prefix + params_[k].first);
            if (stored == nullptr)
                throw std::invalid_argument("checkpoint lacks optimiser state for '" + params_[k].first + "'");
            restore_tensor(*stored, *target);
        }
    }
    steps_ = steps;
}

template <typename T>
double clip_gradient_norm(std::vector<std::vector<T>>& grads, double max_norm)
{
    double sq = 0;
    for (const auto& g : grads)
        for (T v : g)
            sq += double(v) * v;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const double scale = max_norm / norm;
        for (auto& g : grads)
            for (T& v : g)
                v = static_cast<T>(v * scale);
    }
    return norm;
}

std::string EpochMetrics::to_line() const
{
    std::string line = "epoch=" + std::to_string(epoch) + " step=" + std::to_string(step) + " lr=" + format_real(lr) +
                       " train_loss=" + format_real(train_loss) + " test_rel_l2=" + format_real(test_rel_l2);
    if (!per_channel.empty()) {
        line += " per_channel=";
        for (std::size_t c = 0; c < per_channel.size(); ++c)
            line += (c ? "," : "") + format_real(per_channel[c]);
    }
    return line;
}

EpochMetrics EpochMetrics::parse(const std::string& line)
{
    EpochMetrics m;
    std::istringstream in(line);
    std::map<std::string, std::string> fields;
    for (std::string token; in >> token;) {
        auto eq = token.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("metric line: malformed field '" + token + "'");
        fields[token.substr(0, eq)] = token.substr(eq + 1);
    }
    for (const char* key : {"epoch", "step", "lr", "train_loss", "test_rel_l2"})
        if (!fields.count(key))
            throw std::invalid_argument(std::string("metric line: missing ") + key);
    m.epoch = parse_unsigned("epoch", fields["epoch"]);
    m.step = parse_unsigned("step", fields["step"]);
    m.lr = parse_real("lr", fields["lr"]);
    m.train_loss = parse_real("train_loss", fields["train_loss"]);
    m.test_rel_l2 = parse_real("test_rel_l2", fields["test_rel_l2"]);
    if (fields.count("per_channel")) {
        std::stringstream list(fields["per_channel"]);
        for (std::string item; std::getline(list, item, ',');)
            m.per_channel.push_back(parse_real("per_channel", item));
    }
    return m;
}

template <typename T>
TrainResult train(GitoModel<T>& model, const Dataset& dataset, const ExperimentConfig& config,
                  const TrainOptions& options)
{
    const TrainConfig& tc = config.train;
    tc.validate();
    if (dataset.train.empty())
        throw std::invalid_argument("train: the training split is empty");
    const auto& params = model.parameters();

    std::vector<PreparedSample<T>> train_set(dataset.train.size());
    parallel_for(train_set.size(), options.threads, [&](std::size_t i) {
        train_set[i] = prepare_sample<T>(dataset.samples[dataset.train[i]], dataset.stats, model.config());
    });
    const auto test_samples = dataset.subset(dataset.test);

    const std::size_t per_epoch = (train_set.size() + tc.batch_size - 1) / tc.batch_size;
    const std::size_t total_steps = per_epoch * tc.epochs;
    AdamW<T> optimizer(params, tc.weight_decay);

    ResumeState state;
    state.best = std::numeric_limits<double>::infinity();
    if (options.resume_from) {
        Checkpoint ckpt = read_checkpoint(*options.resume_from);
        load_parameters(model, ckpt);
        auto sections = split_sections(ckpt.header);
        state = ResumeState::parse(sections["state"]);
        optimizer.restore(ckpt, state.step);
    }

    const bool write = !options.out_dir.empty();
    if (write)
        std::filesystem::create_directories(options.out_dir);
    auto save = [&](const std::filesystem::path& name, bool with_optimizer) {
        Checkpoint ckpt = model_checkpoint(model, config, dataset.stats, state.to_text());
        if (with_optimizer)
            for (auto& t : optimizer.state())
                ckpt.tensors.push_back(std::move(t));
        write_checkpoint(options.out_dir / name, ckpt);
    };
    std::ofstream metrics_file;
    if (write)
        metrics_file.open(options.out_dir / kMetricsLog, options.resume_from ? std::ios::app : std::ios::trunc);

    TrainResult result;
    const std::size_t last_epoch = options.stop_after_epoch ? std::min(options.stop_after_epoch, tc.epochs) : tc.epochs;
    for (std::size_t epoch = state.epoch + 1; epoch <= last_epoch; ++epoch) {
        const auto order = seeded_permutation(train_set.size(), derive_seed(tc.seed, epoch));
        double loss_sum = 0;
        double lr = 0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            const std::size_t count = std::min(tc.batch_size, order.size() - start);
            std::vector<std::vector<std::vector<T>>> sample_grads(count);
            std::vector<double> losses(count);
            parallel_for(count, options.threads, [&](std::size_t b) {
                const auto& prepared = train_set[order[start + b]];
                Tape<T> tape;
                TapeScope<T> scope(tape);
                Tensor<T> loss = relative_l2_loss(model.forward(prepared), prepared.targets);
                losses[b] = static_cast<double>(loss.item());
                tape.backward(loss, false);
                auto& grads = sample_grads[b];
                for (const auto& [name, p] : params) {
                    auto g = tape.gradient(p);
                    grads.emplace_back(g.begin(), g.end());
                    grads.back().resize(p.size(), T(0));
                }
            });
            for (std::size_t b = 0; b < count; ++b) {
                if (!std::isfinite(losses[b])) {
                    std::string where = "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                        std::to_string(state.step + 1) + ", training sample " +
                                        std::to_string(dataset.train[order[start + b]]);
                    if (write) {
                        save(kLastGoodCheckpoint, true);
                        where += "; last good checkpoint " + (options.out_dir / kLastGoodCheckpoint).string();
                    }
                    throw TrainingAborted(where);
                }
                loss_sum += losses[b];
            }
            std::vector<std::vector<T>> grads = std::move(sample_grads[0]);
            for (std::size_t b = 1; b < count; ++b)
                for (std::size_t k = 0; k < grads.size(); ++k)
                    for (std::size_t i = 0; i < grads[k].size(); ++i)
                        grads[k][i] += sample_grads[b][k][i];
            for (auto& g : grads)
                for (T& v : g)
                    v /= static_cast<T>(count);
            clip_gradient_norm(grads, tc.grad_clip_norm);
            lr = onecycle_lr(state.step, total_steps, tc);
            optimizer.step(grads, lr);
            ++state.step;
        }

        Evaluation eval = evaluate(model, test_samples, dataset.stats, options.threads, dataset.schema.output_names);
        EpochMetrics m{epoch, state.step, lr, loss_sum / static_cast<double>(order.size()), eval.errors.mean,
                       eval.errors.per_channel};
        state.epoch = epoch;
        if (m.test_rel_l2 < state.best) {
            state.best = m.test_rel_l2;
            state.best_epoch = epoch;
            if (write)
                save(kBestCheckpoint, false);
        }
        const std::string line = m.to_line();
        if (options.log)
            options.log(line);
        if (write) {
            metrics_file << line << '\n';
            metrics_file.flush();
            if (epoch % tc.checkpoint_interval == 0 || epoch == last_epoch)
                save(kLatestCheckpoint, true);
        }
        result.history.push_back(std::move(m));
    }
    result.best_test_rel_l2 = state.best;
    result.best_epoch = state.best_epoch;
    return result;
}

template <typename T>
Evaluation evaluate(const GitoModel<T>& model, std::span<const Sample> samples, const NormalizationStats& stats,
                    std::size_t threads, const std::vector<std::string>& names)
{
    Evaluation out;
    if (samples.empty())
        return out;
    std::vector<ChannelErrors> errors(samples.size());
    std::vector<char> finite(samples.size(), 1);
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        FeatureMatrix pred = predict(model, samples[i], stats);
        finite[i] = std::all_of(pred.data.begin(), pred.data.end(), [](double v) { return std::isfinite(v); });
        errors[i] = relative_l2(pred, samples[i].targets, names);
    });
    const std::size_t channels = errors.front().per_channel.size();
    out.errors.per_channel.assign(channels, 0.0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out.per_sample.push_back(errors[i].mean);
        out.finite = out.finite && finite[i];
        for (std::size_t c = 0; c < channels; ++c)
            out.errors.per_channel[c] += errors[i].per_channel[c] / static_cast<double>(samples.size());
    }
    for (double e : out.errors.per_channel)
        out.errors.mean += e / static_cast<double>(channels);
    return out;
}

template <typename T>
Evaluation evaluate_super_resolution(const GitoModel<T>& model, const Dataset& dataset, std::size_t query_factor,
                                     std::size_t threads)
{
    if (!dataset.poisson)
        throw std::invalid_argument("super-resolution evaluation needs a generated Poisson dataset");
    PoissonOracle oracle(dataset.poisson->grid);
    std::vector<Sample> dense(dataset.test.size());
    for (std::size_t i = 0; i < dense.size(); ++i)
        dense[i] = generate_poisson_sample(*dataset.poisson, dataset.test[i], oracle, query_factor);
    return evaluate(model, dense, dataset.stats, threads, dataset.schema.output_names);
}

std::vector<AblationVariant> ablation_variants(const std::string& spec, const ModelConfig& base)
{
    std::vector<AblationVariant> out;
    std::stringstream list(spec);
    for (std::string item; std::getline(list, item, ',');) {
        if (item.empty())
            continue;
        AblationVariant v{item, base};
        std::string norm = item;
        std::replace(norm.begin(), norm.end(), '{', ':');
        norm.erase(std::remove(norm.begin(), norm.end(), '}'), norm.end());
        if (norm == "fusion") {
            v.model.fusion = true;
        } else if (norm == "no_fusion") {
            v.model.fusion = false;
        } else if (norm.rfind("knn", 0) == 0 || norm.rfind("radius", 0) == 0) {
            if (norm.find(':') == std::string::npos)
                norm.insert(norm.rfind("knn", 0) == 0 ? 3 : 6, ":");
            v.model.query_graph = GraphStrategy::parse(norm);
            v.model.input_graph = v.model.query_graph;
            v.label = v.model.query_graph.to_string();
        } else {
            throw std::invalid_argument("unknown ablation variant '" + item +
                                        "' (expected fusion, no_fusion, knn{k} or radius{r})");
        }
        v.model.validate();
        out.push_back(std::move(v));
    }
    if (out.empty())
        throw std::invalid_argument("no ablation variants given");
    return out;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants, const Dataset& dataset,
                                      const ExperimentConfig& base, bool train_models, const TrainOptions& options)
{
    std::vector<AblationRow> rows;
    for (const auto& variant : variants) {
        ExperimentConfig config = base;
        config.model = variant.model;
        AblationRow row;
        row.label = variant.label;
        double edges = 0;
        for (const auto& s : dataset.samples)
            edges += static_cast<double>(branch_topology(s.queries, config.model.query_graph).num_edges());
        row.mean_query_edges = dataset.samples.empty() ? 0 : edges / static_cast<double>(dataset.samples.size());
        auto run = [&]<typename T>(T) {
            GitoModel<T> model(config.model, config.train.seed);
            row.parameters = model.parameter_count();
            if (train_models) {
                TrainOptions opts = options;
                if (!opts.out_dir.empty())
                    opts.out_dir /= variant.label;
                row.test_rel_l2 = train(model, dataset, config, opts).best_test_rel_l2;
            }
        };
        if (config.model.precision == Precision::float64)
            run(double{});
        else
            run(float{});
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows)
{
    std::string out = "variant parameters mean_query_edges test_rel_l2\n";
    for (const auto& r : rows)
        out += r.label + " " + std::to_string(r.parameters) + " " + format_real(r.mean_query_edges) + " " +
               (r.test_rel_l2 ? format_real(*r.test_rel_l2) : std::string("-")) + "\n";
    return out;
}

ExperimentConfig checkpoint_config(const Checkpoint& checkpoint)
{
    auto sections = split_sections(checkpoint.header);
    auto it = sections.find("config");
    if (it == sections.end())
        throw std::invalid_argument("checkpoint has no [config] section");
    return ExperimentConfig::parse(it->second);
}

NormalizationStats checkpoint_stats(const Checkpoint& checkpoint)
{
    auto sections = split_sections(checkpoint.header);
    auto it = sections.find("stats");
    if (it == sections.end())
        throw std::invalid_argument("checkpoint has no [stats] section");
    return NormalizationStats::from_text(it->second);
}

#define GITO_INSTANTIATE_TRAIN(T)                                                                                   \
    template Tensor<T> relative_l2_loss(const Tensor<T>&, const Tensor<T>&);                                       \
    template class AdamW<T>;                                                                                        \
    template double clip_gradient_norm(std::vector<std::vector<T>>&, double);                                       \
    template TrainResult train(GitoModel<T>&, const Dataset&, const ExperimentConfig&, const TrainOptions&);        \
    template Evaluation evaluate(const GitoModel<T>&, std::span<const Sample>, const NormalizationStats&,          \
                                 std::size_t, const std::vector<std::string>&);                                     \
    template Evaluation evaluate_super_resolution(const GitoModel<T>&, const Dataset&, std::size_t, std::size_t);

GITO_INSTANTIATE_TRAIN(float)
GITO_INSTANTIATE_TRAIN(double)

}  // namespace gito
