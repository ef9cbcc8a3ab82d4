#include "vitnas/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vitnas/error.hpp"

namespace vitnas {

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
    if (epochs < 0) fail("epochs must be >= 0");
    if (batch_size < 1) fail("batch_size must be positive");
    if (!(base_lr > 0)) fail("base_lr must be positive");
    if (warmup_epochs < 0 || warmup_epochs > epochs) fail("warmup_epochs must be in [0, epochs]");
    if (weight_decay < 0) fail("weight_decay must be >= 0");
    if (!(label_smoothing >= 0 && label_smoothing < 1)) fail("label_smoothing must be in [0, 1)");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("adam betas must be in [0, 1)");
    if (!(adam_eps > 0)) fail("adam_eps must be positive");
    if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    if (probe_random < 0) fail("probe_random must be >= 0");
    if (probe_samples < 0) fail("probe_samples must be >= 0");
    if (eval_batch < 1) fail("eval_batch must be positive");
}

LrSchedule::LrSchedule(double base_lr, std::uint64_t warmup_steps, std::uint64_t total_steps)
    : base_(base_lr), warmup_(std::min(warmup_steps, total_steps)), total_(total_steps) {}

double LrSchedule::at(std::uint64_t step) const {
    if (step < warmup_) {
        return base_ * static_cast<double>(step + 1) / static_cast<double>(warmup_);
    }
    if (step + 1 >= total_) {
        return 0.0;
    }
    const double t = static_cast<double>(step - warmup_) / static_cast<double>(total_ - 1 - warmup_);
    return 0.5 * base_ * (1.0 + std::cos(M_PI * t));
}

// ---- evaluation -----------------------------------------------------------

namespace {

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> v(end - begin);
    std::iota(v.begin(), v.end(), begin);
    return v;
}

}  // namespace

template <class T>
std::vector<T> predict_logits(const ParamStore<T>& store, const ArchConfig& arch, const Dataset& data,
                              int eval_batch) {
    const auto view = store.view(arch);
    const std::size_t c = static_cast<std::size_t>(store.geometry().num_classes);
    const int patch = store.geometry().patch;
    std::vector<T> out;
    out.reserve(data.size() * c);
    for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(eval_batch)) {
        const auto idx = iota_range(b, std::min(data.size(), b + static_cast<std::size_t>(eval_batch)));
        Tape<T> tape(false);
        const Tensor<T> logits = forward(tape, store, view, make_patches<T>(data, idx, patch));
        const auto v = logits.data();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

template <class T>
Accuracy evaluate_accuracy(const ParamStore<T>& store, const ArchConfig& arch, const Dataset& data, int eval_batch,
                           std::size_t limit, std::vector<int>* predictions) {
    const std::size_t n = limit == 0 ? data.size() : std::min(limit, data.size());
    const Dataset* src = &data;
    Dataset head;
    if (n < data.size()) {
        head = data.subset(0, n);
        src = &head;
    }
    const std::vector<T> logits = predict_logits(store, arch, *src, eval_batch);
    const std::size_t c = static_cast<std::size_t>(store.geometry().num_classes);
    Accuracy acc;
    acc.total = n;
    if (predictions) {
        predictions->assign(n, 0);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * c;
        // max_element returns the first maximum: ties go to the lowest class index.
        const auto pred = static_cast<int>(std::max_element(row, row + c) - row);
        if (pred == src->labels[i]) {
            ++acc.correct;
        }
        if (predictions) {
            (*predictions)[i] = pred;
        }
    }
    return acc;
}

template <class T>
double batch_loss(const ParamStore<T>& store, const ArchConfig& arch, const Dataset& data,
                  std::span<const std::size_t> indices, double smoothing) {
    Tape<T> tape(false);
    const auto view = store.view(arch);
    const Tensor<T> logits = forward(tape, store, view, make_patches<T>(data, indices, store.geometry().patch));
    const auto labels = gather_labels(data, indices);
    return static_cast<double>(cross_entropy(tape, logits, labels, smoothing).item());
}

std::vector<std::pair<std::string, ArchConfig>> probe_archs(const SpaceSpec& spec, int n_random, std::uint64_t seed) {
    std::vector<std::pair<std::string, ArchConfig>> out{{"min", spec.smallest()}, {"max", spec.largest()}};
    Rng rng(derive_seed(seed, "probes"));
    for (int i = 0; i < n_random; ++i) {
        out.emplace_back("rand" + std::to_string(i), sample_uniform(spec, rng));
    }
    return out;
}

// ---- Trainer --------------------------------------------------------------

template <class T>
Trainer<T>::Trainer(ParamStore<T>& store, const Dataset& train, const Dataset* val, TrainConfig cfg,
                    std::optional<ArchConfig> fixed_arch)
    : store_(store),
      train_(train),
      val_(val),
      cfg_(std::move(cfg)),
      fixed_(std::move(fixed_arch)),
      iters_per_epoch_(0),
      sched_(0, 0, 0),
      arch_rng_(derive_seed(cfg_.seed, "arch")),
      data_rng_(derive_seed(cfg_.seed, "data")) {
    cfg_.validate();
    if (train_.size() < static_cast<std::size_t>(cfg_.batch_size)) {
        throw ConfigError("train config: batch_size " + std::to_string(cfg_.batch_size) + " exceeds the " +
                          std::to_string(train_.size()) + " training samples");
    }
    const NetGeometry g = train_.geometry(store_.geometry().patch);
    if (!(g == store_.geometry())) {
        throw DataError("training data geometry does not match the store it trains");
    }
    if (fixed_) {
        store_.spec().check(*fixed_);
    }
    iters_per_epoch_ = train_.size() / static_cast<std::size_t>(cfg_.batch_size);
    sched_ = LrSchedule(cfg_.base_lr, iters_per_epoch_ * static_cast<std::uint64_t>(cfg_.warmup_epochs),
                        iters_per_epoch_ * static_cast<std::uint64_t>(cfg_.epochs));
    if (val_) {
        probes_ = fixed_ ? std::vector<std::pair<std::string, ArchConfig>>{{"fixed", *fixed_}}
                         : probe_archs(store_.spec(), cfg_.probe_random, cfg_.seed);
    }
    state_.arch_rng = arch_rng_.state();
    state_.data_rng = data_rng_.state();
}

template <class T>
void Trainer<T>::restore(const TrainState& s) {
    if (s.epoch < 0 || s.epoch > cfg_.epochs || s.iteration != iters_per_epoch_ * static_cast<std::uint64_t>(s.epoch)) {
        throw DataError("train state (epoch " + std::to_string(s.epoch) + ", iteration " + std::to_string(s.iteration) +
                        ") is inconsistent with the configured schedule");
    }
    arch_rng_.set_state(s.arch_rng);
    data_rng_.set_state(s.data_rng);
    state_ = s;
}

template <class T>
double Trainer<T>::step(const ArchConfig& arch, std::span<const std::size_t> batch, double lr) {
    Tape<T> tape;
    const auto view = store_.view(arch);
    const Tensor<T> patches = make_patches<T>(train_, batch, store_.geometry().patch);
    const auto labels = gather_labels(train_, batch);
    const Tensor<T> logits = forward(tape, store_, view, patches);
    Tensor<T> loss = cross_entropy(tape, logits, labels, cfg_.label_smoothing);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "non-finite loss " << value << " at iteration " << state_.iteration << " for arch " << arch_key(arch);
        throw NumericalError(os.str());
    }
    tape.backward(loss);
    const auto slices = trainable_params(view);
    adamw_step<T>(slices, lr, cfg_.adamw());
    return value;
}

template <class T>
bool Trainer<T>::run_epoch() {
    if (done()) {
        return false;
    }
    const int epoch = state_.epoch;
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[data_rng_.uniform_index(i)]);
    }
    const std::size_t b = static_cast<std::size_t>(cfg_.batch_size);
    double loss_sum = 0;
    for (std::uint64_t it = 0; it < iters_per_epoch_; ++it) {
        const ArchConfig arch = fixed_ ? *fixed_ : sample_uniform(store_.spec(), arch_rng_);
        const std::span<const std::size_t> batch(order.data() + it * b, b);
        const double lr = sched_.at(state_.iteration);
        const double loss = step(arch, batch, lr);
        loss_sum += loss;
        IterRecord rec{state_.iteration, epoch, arch_key(arch), loss, lr};
        if (iter_cb_) {
            iter_cb_(rec);
        }
        log_.iterations.push_back(std::move(rec));
        ++state_.iteration;
    }
    EpochRecord er;
    er.epoch = epoch;
    er.mean_loss = iters_per_epoch_ ? loss_sum / static_cast<double>(iters_per_epoch_) : 0.0;
    for (const auto& [name, arch] : probes_) {
        const auto acc = evaluate_accuracy(store_, arch, *val_, cfg_.eval_batch, static_cast<std::size_t>(cfg_.probe_samples));
        er.probes.push_back({name, arch_key(arch), acc.value()});
    }
    if (epoch_cb_) {
        epoch_cb_(er);
    }
    log_.epochs.push_back(std::move(er));
    ++state_.epoch;
    state_.arch_rng = arch_rng_.state();
    state_.data_rng = data_rng_.state();
    return !done();
}

template <class T>
void Trainer<T>::run() {
    while (run_epoch()) {
    }
}

template <class T>
TrainLog train_supernet(ParamStore<T>& store, const Dataset& train, const Dataset* val, const TrainConfig& cfg) {
    Trainer<T> trainer(store, train, val, cfg);
    trainer.run();
    return trainer.log();
}

template <class T>
StandaloneResult<T> train_standalone(const SpaceSpec& spec, const NetGeometry& geom, const ArchConfig& arch,
                                     const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
    StandaloneResult<T> r;
    r.net = std::make_unique<StandaloneNet<T>>(spec, geom, arch, derive_seed(cfg.seed, "standalone"));
    Trainer<T> trainer(*r.net, train, nullptr, cfg, arch);
    trainer.run();
    r.log = trainer.log();
    r.accuracy = evaluate_accuracy(*r.net, arch, val, cfg.eval_batch).value();
    return r;
}

template <class T>
FinetuneResult<T> finetune(const ParamStore<T>& store, const ArchConfig& arch, const Dataset& train,
                           const Dataset& val, TrainConfig cfg, int epochs) {
    FinetuneResult<T> r;
    r.net = StandaloneNet<T>::extract(store, arch);
    r.before = evaluate_accuracy(*r.net, arch, val, cfg.eval_batch).value();
    cfg.epochs = epochs;
    cfg.warmup_epochs = std::min(cfg.warmup_epochs, epochs);
    if (epochs > 0) {
        Trainer<T> trainer(*r.net, train, nullptr, cfg, arch);
        trainer.run();
        r.after = evaluate_accuracy(*r.net, arch, val, cfg.eval_batch).value();
    } else {
        r.after = r.before;
    }
    return r;
}

#define VITNAS_INSTANTIATE_TRAINER(T)                                                                          \
    template class Trainer<T>;                                                                                 \
    template std::vector<T> predict_logits(const ParamStore<T>&, const ArchConfig&, const Dataset&, int);      \
    template Accuracy evaluate_accuracy(const ParamStore<T>&, const ArchConfig&, const Dataset&, int,          \
                                        std::size_t, std::vector<int>*);                                       \
    template double batch_loss(const ParamStore<T>&, const ArchConfig&, const Dataset&,                        \
                               std::span<const std::size_t>, double);                                          \
    template TrainLog train_supernet(ParamStore<T>&, const Dataset&, const Dataset*, const TrainConfig&);      \
    template StandaloneResult<T> train_standalone(const SpaceSpec&, const NetGeometry&, const ArchConfig&,     \
                                                  const Dataset&, const Dataset&, const TrainConfig&);         \
    template FinetuneResult<T> finetune(const ParamStore<T>&, const ArchConfig&, const Dataset&,               \
                                        const Dataset&, TrainConfig, int);

VITNAS_INSTANTIATE_TRAINER(float)
VITNAS_INSTANTIATE_TRAINER(double)

#undef VITNAS_INSTANTIATE_TRAINER

}  // namespace vitnas
