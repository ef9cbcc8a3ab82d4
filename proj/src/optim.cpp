#include "vitnas/optim.hpp"

#include <cmath>

namespace vitnas {

template <class T>
void Param<T>::ensure_state() {
    const std::size_t n = value.numel();
    if (m.size() != n) {
        m.assign(n, T(0));
        v.assign(n, T(0));
        steps.assign(n, 0);
    }
}

template <class T>
bool ParamSlice<T>::full() const {
    return numel() == param->value.numel();
}

template <class T>
void adamw_step(std::span<const ParamSlice<T>> slices, double lr, const AdamWConfig& cfg) {
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2), eps = T(cfg.eps);
    // Bias corrections depend only on the step count; cache the last one seen.
    std::uint32_t cached_t = 0;
    T corr1 = 1, corr2 = 1;
    for (const auto& s : slices) {
        Param<T>& p = *s.param;
        p.ensure_state();
        auto w = p.value.data();
        auto g = p.value.grad();
        const T decay = p.decay ? T(lr * cfg.weight_decay) : T(0);
        const T step_lr = T(lr);
        for (std::size_t r = 0; r < s.rows; ++r) {
            for (std::size_t c = 0; c < s.cols; ++c) {
                const std::size_t i = s.index(r, c);
                const std::uint32_t t = ++p.steps[i];
                if (t != cached_t) {
                    cached_t = t;
                    corr1 = T(1) - T(std::pow(cfg.beta1, double(t)));
                    corr2 = T(1) - T(std::pow(cfg.beta2, double(t)));
                }
                const T gi = g[i];
                p.m[i] = b1 * p.m[i] + (T(1) - b1) * gi;
                p.v[i] = b2 * p.v[i] + (T(1) - b2) * gi * gi;
                const T mhat = p.m[i] / corr1;
                const T vhat = p.v[i] / corr2;
                w[i] -= decay * w[i];
                w[i] -= step_lr * mhat / (std::sqrt(vhat) + eps);
                g[i] = T(0);
            }
        }
    }
}

template <class T>
void zero_slice_grads(std::span<const ParamSlice<T>> slices) {
    for (const auto& s : slices) {
        if (!s.param->value.has_grad()) {
            continue;
        }
        auto g = s.param->value.grad();
        for (std::size_t r = 0; r < s.rows; ++r) {
            for (std::size_t c = 0; c < s.cols; ++c) {
                g[s.index(r, c)] = T(0);
            }
        }
    }
}

template struct Param<float>;
template struct Param<double>;
template struct ParamSlice<float>;
template struct ParamSlice<double>;
template void adamw_step(std::span<const ParamSlice<float>>, double, const AdamWConfig&);
template void adamw_step(std::span<const ParamSlice<double>>, double, const AdamWConfig&);
template void zero_slice_grads(std::span<const ParamSlice<float>>);
template void zero_slice_grads(std::span<const ParamSlice<double>>);

}  // namespace vitnas
