#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vitnas/dataset.hpp"
#include "vitnas/optim.hpp"
#include "vitnas/rng.hpp"
#include "vitnas/supernet.hpp"

namespace vitnas {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    double base_lr = 5e-4;
    int warmup_epochs = 2;
    double weight_decay = 0.05;
    double label_smoothing = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    /// Write a checkpoint every K epochs (0 = only at the end).
    int checkpoint_every = 0;
    /// Random probe subnets evaluated each epoch, in addition to the smallest and largest.
    int probe_random = 3;
    /// Validation samples used per probe evaluation (0 = all).
    int probe_samples = 0;
    /// Batch size for evaluation-only forward passes.
    int eval_batch = 256;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    AdamWConfig adamw() const { return {beta1, beta2, adam_eps, weight_decay}; }
};

/// Linear warmup over warmup_steps (step s gets base * (s + 1) / warmup_steps),
/// then half-cosine from base at step warmup_steps down to 0 at step total_steps - 1.
class LrSchedule {
public:
    LrSchedule(double base_lr, std::uint64_t warmup_steps, std::uint64_t total_steps);
    double at(std::uint64_t step) const;
    std::uint64_t total_steps() const { return total_; }
    std::uint64_t warmup_steps() const { return warmup_; }

private:
    double base_;
    std::uint64_t warmup_;
    std::uint64_t total_;
};

struct IterRecord {
    std::uint64_t iteration = 0;
    int epoch = 0;
    std::string arch;  // arch_key of the sampled subnet
    double loss = 0;
    double lr = 0;
};

struct ProbeRecord {
    std::string name;
    std::string arch;
    double accuracy = 0;
};

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0;
    std::vector<ProbeRecord> probes;
};

struct TrainLog {
    std::vector<IterRecord> iterations;
    std::vector<EpochRecord> epochs;
};

/// Everything besides the store needed to continue a run bit-exactly.
struct TrainState {
    int epoch = 0;                // completed epochs
    std::uint64_t iteration = 0;  // completed iterations
    std::string arch_rng;         // architecture sampling stream
    std::string data_rng;         // batch shuffling stream
};

struct Accuracy {
    std::size_t correct = 0;
    std::size_t total = 0;
    double value() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Top-1 accuracy of arch's view on data[0, limit) (limit 0 = all). Argmax ties
/// go to the lowest class index. When predictions is non-null it receives one
/// predicted class per sample.
template <class T>
Accuracy evaluate_accuracy(const ParamStore<T>& store, const ArchConfig& arch, const Dataset& data,
                           int eval_batch = 256, std::size_t limit = 0, std::vector<int>* predictions = nullptr);

/// Logits for every sample of data, row-major [n x classes].
template <class T>
std::vector<T> predict_logits(const ParamStore<T>& store, const ArchConfig& arch, const Dataset& data,
                              int eval_batch = 256);

/// Mean smoothed cross-entropy of arch on the given samples, no gradient.
template <class T>
double batch_loss(const ParamStore<T>& store, const ArchConfig& arch, const Dataset& data,
                  std::span<const std::size_t> indices, double smoothing);

/// Smallest, largest and n seeded-random architectures of a space.
std::vector<std::pair<std::string, ArchConfig>> probe_archs(const SpaceSpec& spec, int n_random, std::uint64_t seed);

/// Single-path training loop. Each iteration samples one subnet uniformly
/// (or uses the fixed architecture), runs one batch through its view and
/// updates exactly trainable_params(view).
template <class T>
class Trainer {
public:
    using IterCallback = std::function<void(const IterRecord&)>;
    using EpochCallback = std::function<void(const EpochRecord&)>;

    /// val may be null (no probes). fixed_arch pins every iteration to one architecture.
    Trainer(ParamStore<T>& store, const Dataset& train, const Dataset* val, TrainConfig cfg,
            std::optional<ArchConfig> fixed_arch = std::nullopt);

    /// Runs one epoch; returns false when all configured epochs are done.
    bool run_epoch();
    /// Runs the remaining epochs.
    void run();

    /// One optimizer step on the given batch; returns the loss.
    double step(const ArchConfig& arch, std::span<const std::size_t> batch, double lr);

    const TrainState& state() const { return state_; }
    void restore(const TrainState& s);
    const TrainLog& log() const { return log_; }
    const TrainConfig& config() const { return cfg_; }
    const LrSchedule& schedule() const { return sched_; }
    std::uint64_t iterations_per_epoch() const { return iters_per_epoch_; }
    bool done() const { return state_.epoch >= cfg_.epochs; }

    void on_iteration(IterCallback cb) { iter_cb_ = std::move(cb); }
    void on_epoch(EpochCallback cb) { epoch_cb_ = std::move(cb); }

private:
    ParamStore<T>& store_;
    const Dataset& train_;
    const Dataset* val_;
    TrainConfig cfg_;
    std::optional<ArchConfig> fixed_;
    std::uint64_t iters_per_epoch_;
    LrSchedule sched_;
    Rng arch_rng_;
    Rng data_rng_;
    TrainState state_;
    TrainLog log_;
    std::vector<std::pair<std::string, ArchConfig>> probes_;
    IterCallback iter_cb_;
    EpochCallback epoch_cb_;
};

/// Trains the whole supernet for cfg.epochs.
template <class T>
TrainLog train_supernet(ParamStore<T>& store, const Dataset& train, const Dataset* val, const TrainConfig& cfg);

template <class T>
struct StandaloneResult {
    std::unique_ptr<StandaloneNet<T>> net;
    TrainLog log;
    double accuracy = 0;  // on val
};

/// From-scratch baseline: a freshly initialized network of exactly arch's size.
template <class T>
StandaloneResult<T> train_standalone(const SpaceSpec& spec, const NetGeometry& geom, const ArchConfig& arch,
                                     const Dataset& train, const Dataset& val, const TrainConfig& cfg);

template <class T>
struct FinetuneResult {
    double before = 0;
    double after = 0;
    std::unique_ptr<StandaloneNet<T>> net;
};

/// Continues training arch's inherited weights on a copied-out network with
/// fresh optimizer state; the source store is not modified. Uses cfg with
/// epochs overridden.
template <class T>
FinetuneResult<T> finetune(const ParamStore<T>& store, const ArchConfig& arch, const Dataset& train,
                           const Dataset& val, TrainConfig cfg, int epochs);

}  // namespace vitnas
