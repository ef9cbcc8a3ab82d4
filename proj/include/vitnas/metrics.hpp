#pragma once

#include <cstdint>

#include "vitnas/geometry.hpp"
#include "vitnas/space.hpp"

namespace vitnas {

/// FLOPs here are multiply-accumulates (1 MAC = 1 FLOP). Softmax, LayerNorm,
/// GELU, bias adds and residual adds are not counted.
struct ModelCost {
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

/// Exact trainable element count of one subnet.
std::uint64_t count_params(const ArchConfig& arch, const NetGeometry& geom);

/// MACs for one image: dense projections over all tokens, attention scores and
/// weighted sums (2 * N^2 * qkv per layer), and the classifier on the class token.
std::uint64_t count_flops(const ArchConfig& arch, const NetGeometry& geom);

/// Parameters of one transformer block (attention, MLP and its two LayerNorms).
std::uint64_t block_params(const LayerGene& gene, int embed_dim);

inline ModelCost model_cost(const ArchConfig& arch, const NetGeometry& geom) {
    return {count_params(arch, geom), count_flops(arch, geom)};
}

struct ParamRange {
    std::uint64_t min = 0;
    std::uint64_t max = 0;
};

/// Parameter counts of the smallest and largest architecture in a space.
/// Every count is monotone in every gene, so these bound the whole space.
ParamRange param_range(const SpaceSpec& spec, const NetGeometry& geom);

}  // namespace vitnas
