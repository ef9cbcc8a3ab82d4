#pragma once

// Central finite-difference oracle for the autograd tests.

#include <cmath>
#include <functional>
#include <vector>

#include "vitnas/rng.hpp"
#include "vitnas/tensor.hpp"

namespace vitnas::testing {

inline constexpr double kGradFloor = 1e-6;

using LossFn = std::function<Tensor<double>(Tape<double>&)>;

/// Norm-wise relative error ||a - n|| / max(||a|| + ||n||, kGradFloor) per
/// input, maximized over inputs. Per-element ratios are ill-conditioned for
/// entries whose true gradient is near zero; the floor covers inputs whose
/// gradient is identically zero (a key bias under row-softmax shift
/// invariance), where only finite-difference noise remains.
struct GradCheckResult {
    double max_rel_error = 0;
    double max_abs_error = 0;
};

inline GradCheckResult grad_check(const std::vector<Tensor<double>>& inputs, const LossFn& loss_fn, double h = 1e-5) {
    for (const auto& t : inputs) {
        t.zero_grad();
    }
    {
        Tape<double> tape;
        Tensor<double> loss = loss_fn(tape);
        tape.backward(loss);
    }
    GradCheckResult r;
    for (Tensor<double> t : inputs) {  // handle copy aliases the same storage
        std::vector<double> analytic(t.grad().begin(), t.grad().end());
        std::vector<double> numeric(t.numel());
        auto data = t.data();
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double x0 = data[i];
            Tape<double> off(false);
            data[i] = x0 + h;
            const double fp = loss_fn(off).item();
            data[i] = x0 - h;
            const double fm = loss_fn(off).item();
            data[i] = x0;
            numeric[i] = (fp - fm) / (2 * h);
        }
        double diff = 0, na = 0, nn = 0;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            na += analytic[i] * analytic[i];
            nn += numeric[i] * numeric[i];
            r.max_abs_error = std::max(r.max_abs_error, std::fabs(analytic[i] - numeric[i]));
        }
        const double denom = std::max(std::sqrt(na) + std::sqrt(nn), kGradFloor);
        r.max_rel_error = std::max(r.max_rel_error, std::sqrt(diff) / denom);
    }
    return r;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
    Tensor<double> t(std::move(shape), requires_grad);
    for (auto& x : t.data()) {
        x = scale * rng.normal();
    }
    return t;
}

inline std::vector<double> random_weights(std::size_t n, Rng& rng) {
    std::vector<double> w(n);
    for (auto& x : w) {
        x = rng.normal();
    }
    return w;
}

}  // namespace vitnas::testing
