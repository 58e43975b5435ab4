#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "transmat/data.hpp"
#include "transmat/losses.hpp"
#include "transmat/network.hpp"

namespace transmat::train {

struct TrainConfig {
    int64_t iterations = 2000;
    int batch_size = 4;
    double learning_rate = 1e-4;
    double lr_floor = 1e-6;
    int64_t restart_period = 0;  // 0: max(1, iterations / 8)
    uint64_t seed = 0;
    double grad_clip = 0.0;  // global L2 norm; 0 disables
    int64_t checkpoint_every = 0;
    /// Train on deterministic eval-split samples (no augmentation), cycling in order.
    bool fixed_samples = false;
    int workers = 1;

    void validate() const;
};

/// Everything one experiment needs; maps one-to-one onto config keys and CLI flags.
struct ExperimentConfig {
    TrainConfig train;
    NetworkConfig network;
    data::AugmentationConfig data;
    loss::LossConfig loss;

    /// Propagates the seed into network initialization and the data pipeline.
    void set_seed(uint64_t seed);
    void validate() const;
};

/// Cosine decay from learning_rate to lr_floor within each period, periods
/// doubling from the initial restart period.
double schedule_lr(int64_t iteration, const TrainConfig& cfg);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
class Adam {
public:
    explicit Adam(nn::ParameterSet<T>& params, AdamConfig cfg = {});
    /// One update from the gradients currently held by the parameters.
    void step(double lr);
    int64_t steps() const { return t_; }

private:
    nn::ParameterSet<T>* params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
};

/// Global L2 norm of all parameter gradients.
template <class T>
double grad_norm(const nn::ParameterSet<T>& params);

struct LossRecord {
    int64_t iteration = 0;
    double lr = 0;
    double total = 0;
    double alpha = 0;
    double comp = 0;
    double lap = 0;

    /// Fixed-format text line; equal records give equal bytes.
    std::string to_line() const;
};

struct TrainHooks {
    std::function<void(const LossRecord&)> on_record;
    /// Called every checkpoint_every iterations and after the last one.
    std::function<void(int64_t iteration)> on_checkpoint;
};

/// Indices of the dataset samples used at `iteration`.
std::vector<int64_t> batch_indices(int64_t iteration, const TrainConfig& cfg, int64_t dataset_size);

/// Runs the optimizer for cfg.train.iterations steps from `start_iteration`.
/// Throws NumericalError naming the batch when the loss or gradients are not finite.
std::vector<LossRecord> train(Network<float>& net, const data::DatasetManifest& manifest, const ExperimentConfig& cfg,
                              const TrainHooks& hooks = {}, int64_t start_iteration = 0);

/// The deterministic sample used for dataset index `index` by train().
MattingSample training_sample(const data::SampleStream& stream, int64_t index, const ExperimentConfig& cfg);

}  // namespace transmat::train
