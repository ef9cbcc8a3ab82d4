#pragma once

#include <functional>
#include <vector>

#include "vitnas/space.hpp"

namespace vitnas::testing {

/// embed {32,48,64}, heads {2,4} at head dim 16, ratio {2,3}, depth {3,4,5}.
inline SpaceSpec shrunk_space() { return {{32, 64, 16}, {32, 64, 32}, {2, 3, 1}, {2, 4, 2}, {3, 5, 1}, 16}; }

/// Every depth and embed width pinned to one value; one layer gene.
inline SpaceSpec singleton_space(int embed = 16, int heads = 2, int qkv = 16, double ratio = 2, int depth = 2) {
    return {{double(embed), double(embed), 1}, {double(qkv), double(qkv), 1}, {ratio, ratio, 1},
            {double(heads), double(heads), 1}, {double(depth), double(depth), 1}, std::nullopt};
}

/// Brute-force walk over every architecture, independent of cardinality().
inline void enumerate_archs(const SpaceSpec& spec, const std::function<void(const ArchConfig&)>& visit) {
    std::vector<LayerGene> genes;
    for (int h : spec.heads_choices()) {
        for (int q : spec.qkv_choices()) {
            const bool ok = spec.head_dim_lock ? q == *spec.head_dim_lock * h : q % h == 0;
            if (!ok) continue;
            for (double r : spec.ratio_choices()) genes.push_back({h, q, r});
        }
    }
    for (int e : spec.embed_choices()) {
        for (int d : spec.depth_choices()) {
            ArchConfig a{e, d, std::vector<LayerGene>(static_cast<std::size_t>(d))};
            std::function<void(std::size_t)> rec = [&](std::size_t i) {
                if (i == a.layers.size()) {
                    visit(a);
                    return;
                }
                for (const auto& g : genes) {
                    a.layers[i] = g;
                    rec(i + 1);
                }
            };
            rec(0);
        }
    }
}

/// Deterministic training-free fitness over the shrunk space: the fraction of
/// genes agreeing with a hidden target arch. Embed and depth count once each;
/// every layer slot counts heads and ratio separately, and a slot present in
/// only one of the two archs counts as a miss. Range [0, 1], 1 only at target.
inline double surrogate_fitness(const ArchConfig& a) {
    static const ArchConfig target{48, 4, {{4, 64, 2}, {2, 32, 3}, {4, 64, 3}, {2, 32, 2}}};
    double hits = (a.embed_dim == target.embed_dim) + (a.depth == target.depth);
    for (int i = 0; i < std::min(a.depth, target.depth); ++i) {
        hits += a.layers[std::size_t(i)].num_heads == target.layers[std::size_t(i)].num_heads;
        hits += a.layers[std::size_t(i)].mlp_ratio == target.layers[std::size_t(i)].mlp_ratio;
    }
    return hits / (2.0 + 2.0 * target.depth);
}

/// Pearson chi-square statistic of observed counts against a uniform law.
inline double chi_square_uniform(const std::vector<long>& counts) {
    long n = 0;
    for (long c : counts) n += c;
    const double expect = static_cast<double>(n) / static_cast<double>(counts.size());
    double chi = 0;
    for (long c : counts) chi += (c - expect) * (c - expect) / expect;
    return chi;
}

/// Upper 1% critical values of chi-square for 1..7 degrees of freedom.
inline double chi_square_crit_01(std::size_t dof) {
    static const double table[] = {6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475};
    return table[dof - 1];
}

}  // namespace vitnas::testing
