#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "vitnas/rng.hpp"

namespace vitnas {

using BigInt = boost::multiprecision::cpp_int;

/// (low, high, step) range. Values may be integers or half-steps (MLP ratios).
struct RangeTriple {
    double low = 0;
    double high = 0;
    double step = 1;

    /// Throws ConfigError unless low <= high, step > 0 and (high - low) is a whole number of steps.
    void validate(std::string_view what) const;
    bool operator==(const RangeTriple&) const = default;
};

/// {low, low + step, ..., high}, ascending.
std::vector<double> expand(const RangeTriple& r);

struct LayerGene {
    int num_heads = 0;
    int qkv_dim = 0;
    double mlp_ratio = 0;

    bool operator==(const LayerGene&) const = default;
};

struct ArchConfig {
    int embed_dim = 0;
    int depth = 0;
    std::vector<LayerGene> layers;

    bool operator==(const ArchConfig&) const = default;
};

/// MLP hidden width: ceil(ratio * embed).
int hidden_dim(double mlp_ratio, int embed_dim);

struct SpaceSpec {
    RangeTriple embed_dim;
    RangeTriple qkv_dim;
    RangeTriple mlp_ratio;
    RangeTriple num_heads;
    RangeTriple depth;
    /// When set, each layer's qkv_dim is head_dim_lock * num_heads.
    std::optional<int> head_dim_lock;

    void validate() const;

    std::vector<int> embed_choices() const;
    std::vector<int> depth_choices() const;
    std::vector<int> heads_choices() const;
    std::vector<int> qkv_choices() const;
    std::vector<double> ratio_choices() const;

    /// Every legal per-layer gene. Locked: one qkv per head count. Unlocked:
    /// all (heads, qkv) pairs where heads divides qkv, times every ratio.
    std::vector<LayerGene> layer_genes() const;

    /// Throws ConfigError naming the first offending gene.
    void check(const ArchConfig& arch) const;
    bool contains(const ArchConfig& arch) const;

    ArchConfig smallest() const;
    ArchConfig largest() const;

    int max_embed() const;
    int max_qkv() const;
    int max_hidden() const;
    int max_depth() const;

    bool operator==(const SpaceSpec&) const = default;
};

/// Built-in search spaces "tiny", "small", "base" with head_dim_lock = 64.
SpaceSpec preset(std::string_view name);
std::vector<std::string> preset_names();

/// Canonical one-line description; equal specs give equal strings.
std::string canonical_string(const SpaceSpec& spec);
/// 16-hex-digit fingerprint of canonical_string.
std::string spec_hash(const SpaceSpec& spec);

/// Depth, then embed dim, then each layer gene, each uniform over its choices.
ArchConfig sample_uniform(const SpaceSpec& spec, Rng& rng);

/// Exact count: |embed| * sum over depths d of |layer genes|^d.
BigInt cardinality(const SpaceSpec& spec);

/// With probability p_depth resample the depth (truncating or extending with
/// fresh genes), then resample each layer gene and the embed dim with p_gene.
ArchConfig mutate(const ArchConfig& a, const SpaceSpec& spec, double p_depth, double p_gene, Rng& rng);

/// Uniform crossover: depth from one parent, embed from either, each layer
/// gene from whichever parents have that layer.
ArchConfig crossover(const ArchConfig& a, const ArchConfig& b, const SpaceSpec& spec, Rng& rng);

/// Compact reversible text key, e.g. "E64|D2|H2Q32R2|H4Q64R3".
std::string arch_key(const ArchConfig& arch);
ArchConfig parse_arch_key(std::string_view key);

std::string format_ratio(double r);

}  // namespace vitnas
