#include "vitnas/metrics.hpp"

namespace vitnas {

std::uint64_t block_params(const LayerGene& gene, int embed_dim) {
    const std::uint64_t e = static_cast<std::uint64_t>(embed_dim);
    const std::uint64_t q = static_cast<std::uint64_t>(gene.qkv_dim);
    const std::uint64_t h = static_cast<std::uint64_t>(hidden_dim(gene.mlp_ratio, embed_dim));
    return 3 * (q * e + q)   // Wq, Wk, Wv
           + (e * q + e)     // output projection
           + 2 * (2 * e)     // two LayerNorms
           + (h * e + h)     // fc1
           + (e * h + e);    // fc2
}

std::uint64_t count_params(const ArchConfig& arch, const NetGeometry& geom) {
    const std::uint64_t e = static_cast<std::uint64_t>(arch.embed_dim);
    const std::uint64_t tokens = geom.tokens();
    const std::uint64_t classes = static_cast<std::uint64_t>(geom.num_classes);
    std::uint64_t n = e * geom.patch_pixels() + e  // patch projection
                      + e                           // class token
                      + tokens * e                  // position embeddings
                      + 2 * e                       // final LayerNorm
                      + classes * e + classes;      // classifier
    for (const auto& g : arch.layers) {
        n += block_params(g, arch.embed_dim);
    }
    return n;
}

std::uint64_t count_flops(const ArchConfig& arch, const NetGeometry& geom) {
    const std::uint64_t e = static_cast<std::uint64_t>(arch.embed_dim);
    const std::uint64_t n = geom.tokens();
    std::uint64_t macs = geom.num_patches() * geom.patch_pixels() * e;
    for (const auto& g : arch.layers) {
        const std::uint64_t q = static_cast<std::uint64_t>(g.qkv_dim);
        const std::uint64_t h = static_cast<std::uint64_t>(hidden_dim(g.mlp_ratio, arch.embed_dim));
        macs += 3 * n * e * q;   // q, k, v projections
        macs += 2 * n * n * q;   // scores and weighted sum
        macs += n * q * e;       // output projection
        macs += 2 * n * e * h;   // fc1 + fc2
    }
    macs += e * static_cast<std::uint64_t>(geom.num_classes);
    return macs;
}

ParamRange param_range(const SpaceSpec& spec, const NetGeometry& geom) {
    return {count_params(spec.smallest(), geom), count_params(spec.largest(), geom)};
}

}  // namespace vitnas
