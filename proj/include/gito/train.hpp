#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gito/data.hpp"
#include "gito/model.hpp"

namespace gito {

/// Relative L2 error per output channel and their mean.
struct ChannelErrors {
    std::vector<double> per_channel;
    double mean = 0;
};

/// ||pred - truth|| / ||truth|| column by column. Throws std::invalid_argument
/// naming the channel (by `names` when given) whose truth has zero norm.
ChannelErrors relative_l2(const FeatureMatrix& pred, const FeatureMatrix& truth,
                          const std::vector<std::string>& names = {});

/// Differentiable mean over channels of the per-channel relative L2 error.
template <typename T>
Tensor<T> relative_l2_loss(const Tensor<T>& pred, const Tensor<T>& truth);

/// Cosine warm-up from max_lr/div_factor to max_lr over pct_start of the
/// run, then cosine decay to max_lr/final_div_factor.
double onecycle_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

/// Adam with decoupled weight decay (beta 0.9/0.999, eps 1e-8).
template <typename T>
class AdamW {
public:
    explicit AdamW(const ParameterList<T>& params, double weight_decay);

    /// Applies one update from `grads`, aligned with the parameter list.
    void step(std::span<const std::vector<T>> grads, double lr);
    std::uint64_t steps() const { return steps_; }

    /// Moment tensors for checkpoints, named "adam.m.<param>" and "adam.v.<param>".
    std::vector<StoredTensor> state() const;
    void restore(const Checkpoint& checkpoint, std::uint64_t steps);

private:
    ParameterList<T> params_;
    std::vector<Tensor<T>> m_, v_;
    double weight_decay_;
    std::uint64_t steps_ = 0;
};

/// Scales `grads` in place so their joint Euclidean norm is at most
/// `max_norm`; returns the norm before clipping.
template <typename T>
double clip_gradient_norm(std::vector<std::vector<T>>& grads, double max_norm);

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    std::size_t step = 0;   // updates applied so far
    double lr = 0;
    double train_loss = 0;
    double test_rel_l2 = 0;
    std::vector<double> per_channel;

    /// `epoch=<n> step=<n> lr=<f> train_loss=<f> test_rel_l2=<f> [per_channel=<f>,...]`
    std::string to_line() const;
    static EpochMetrics parse(const std::string& line);
};

struct TrainOptions {
    std::size_t threads = 1;
    std::filesystem::path out_dir;  // checkpoints and metrics.log; empty writes nothing
    std::optional<std::filesystem::path> resume_from;
    std::size_t stop_after_epoch = 0;  // halts early when non-zero
    std::function<void(const std::string&)> log;
};

struct TrainResult {
    std::vector<EpochMetrics> history;  // entries produced by this call
    double best_test_rel_l2 = 0;
    std::size_t best_epoch = 0;
};

/// Raised on a non-finite loss; the message names the epoch, step and sample
/// and the last-good checkpoint when one was written.
class TrainingAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kBestCheckpoint = "best.ckpt";
inline constexpr const char* kLatestCheckpoint = "latest.ckpt";
inline constexpr const char* kLastGoodCheckpoint = "last_good.ckpt";
inline constexpr const char* kMetricsLog = "metrics.log";

/// Mini-batch training on the dataset's training split with evaluation on
/// its test split after every epoch. Deterministic for a given seed whatever
/// the thread count.
template <typename T>
TrainResult train(GitoModel<T>& model, const Dataset& dataset, const ExperimentConfig& config,
                  const TrainOptions& options = {});

struct Evaluation {
    ChannelErrors errors;  // per channel averaged over samples, then their mean
    std::vector<double> per_sample;
    bool finite = true;    // every prediction finite
};

template <typename T>
Evaluation evaluate(const GitoModel<T>& model, std::span<const Sample> samples, const NormalizationStats& stats,
                    std::size_t threads = 1, const std::vector<std::string>& names = {});

/// Evaluates test samples of a generated Poisson dataset at `query_factor`
/// times their native query density against fresh oracle values.
template <typename T>
Evaluation evaluate_super_resolution(const GitoModel<T>& model, const Dataset& dataset, std::size_t query_factor,
                                     std::size_t threads = 1);

/// Model variants compared by the ablation harness.
struct AblationVariant {
    std::string label;
    ModelConfig model;
};

/// Comma-separated list of fusion, no_fusion, knn{k} and radius{r} (the
/// braces may be replaced by ':'), each applied to `base`.
std::vector<AblationVariant> ablation_variants(const std::string& spec, const ModelConfig& base);

struct AblationRow {
    std::string label;
    std::size_t parameters = 0;
    double mean_query_edges = 0;  // per sample
    std::optional<double> test_rel_l2;
};

/// Trains every variant under the same seed and budget (or only counts
/// parameters and edges when `train_models` is false).
std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants, const Dataset& dataset,
                                      const ExperimentConfig& base, bool train_models, const TrainOptions& options);
std::string format_ablation(const std::vector<AblationRow>& rows);

/// Configuration and normalisation statistics stored in a model checkpoint.
ExperimentConfig checkpoint_config(const Checkpoint& checkpoint);
NormalizationStats checkpoint_stats(const Checkpoint& checkpoint);

}  // namespace gito
