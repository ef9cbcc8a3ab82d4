#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vitnas/tensor.hpp"

namespace vitnas {

/// A named trainable tensor plus its AdamW state.
///
/// Moment buffers and per-element step counts are allocated on the first
/// update. Step counts are per element because a slice of a shared tensor is
/// updated only on the iterations that sample it, so bias correction must use
/// that element's own update count.
template <class T>
struct Param {
    std::string name;
    Tensor<T> value;
    bool decay = false;  // decoupled weight decay applies (projection matrices only)
    std::vector<T> m;
    std::vector<T> v;
    std::vector<std::uint32_t> steps;

    bool has_state() const { return !m.empty(); }
    void ensure_state();
};

/// Leading-index region [0, rows) x [0, cols) of a parameter. 1-D parameters
/// use rows == 1. This is the unit of "trainable" for one subnet.
template <class T>
struct ParamSlice {
    Param<T>* param = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t numel() const { return rows * cols; }
    bool full() const;
    /// Flat element index of (r, c) in the underlying parameter.
    std::size_t index(std::size_t r, std::size_t c) const { return r * param->value.cols() + c; }
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// One AdamW update over exactly the given slices, using the gradients
/// accumulated in each parameter's value tensor. Elements outside the slices
/// (values, moments, step counts) are not read or written. The consumed
/// gradient region is zeroed afterwards.
template <class T>
void adamw_step(std::span<const ParamSlice<T>> slices, double lr, const AdamWConfig& cfg);

/// Clears the gradient region of each slice without updating.
template <class T>
void zero_slice_grads(std::span<const ParamSlice<T>> slices);

}  // namespace vitnas
