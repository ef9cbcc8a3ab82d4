#include "vitnas/space.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vitnas/error.hpp"

namespace vitnas {

namespace {

constexpr double kTol = 1e-9;

bool near(double a, double b) { return std::fabs(a - b) <= kTol * std::max(1.0, std::fabs(b)); }

std::vector<int> to_ints(const std::vector<double>& v) {
    std::vector<int> out;
    out.reserve(v.size());
    for (double x : v) {
        out.push_back(static_cast<int>(std::lround(x)));
    }
    return out;
}

void require_integral(const RangeTriple& r, std::string_view what) {
    for (double x : {r.low, r.high, r.step}) {
        if (!near(x, std::round(x))) {
            throw ConfigError(std::string(what) + ": values must be integers");
        }
    }
    if (r.low < 1) {
        throw ConfigError(std::string(what) + ": values must be positive");
    }
}

std::string triple_string(const RangeTriple& r) {
    return "(" + format_ratio(r.low) + "," + format_ratio(r.high) + "," + format_ratio(r.step) + ")";
}

template <class V>
const V& pick(const std::vector<V>& v, Rng& rng) {
    return v[rng.uniform_index(v.size())];
}

}  // namespace

std::string format_ratio(double r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", r);
    return buf;
}

void RangeTriple::validate(std::string_view what) const {
    if (!(step > 0)) {
        throw ConfigError(std::string(what) + ": step must be positive, got " + format_ratio(step));
    }
    if (!(low <= high)) {
        throw ConfigError(std::string(what) + ": low " + format_ratio(low) + " exceeds high " + format_ratio(high));
    }
    const double n = (high - low) / step;
    if (!near(n, std::round(n))) {
        throw ConfigError(std::string(what) + ": (high - low) = " + format_ratio(high - low) +
                          " is not a multiple of step " + format_ratio(step));
    }
}

std::vector<double> expand(const RangeTriple& r) {
    r.validate("range");
    const auto n = static_cast<std::size_t>(std::lround((r.high - r.low) / r.step));
    std::vector<double> out;
    out.reserve(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        out.push_back(i == n ? r.high : r.low + double(i) * r.step);
    }
    return out;
}

int hidden_dim(double mlp_ratio, int embed_dim) {
    return static_cast<int>(std::ceil(mlp_ratio * embed_dim - kTol));
}

// ---- SpaceSpec ------------------------------------------------------------

void SpaceSpec::validate() const {
    embed_dim.validate("embed_dim");
    qkv_dim.validate("qkv_dim");
    mlp_ratio.validate("mlp_ratio");
    num_heads.validate("num_heads");
    depth.validate("depth");
    require_integral(embed_dim, "embed_dim");
    require_integral(qkv_dim, "qkv_dim");
    require_integral(num_heads, "num_heads");
    require_integral(depth, "depth");
    if (!(mlp_ratio.low > 0)) {
        throw ConfigError("mlp_ratio: values must be positive");
    }
    const auto heads = heads_choices();
    const auto qkvs = qkv_choices();
    if (head_dim_lock) {
        if (*head_dim_lock < 1) {
            throw ConfigError("head_dim_lock must be positive");
        }
        for (int h : heads) {
            const int q = *head_dim_lock * h;
            if (std::find(qkvs.begin(), qkvs.end(), q) == qkvs.end()) {
                throw ConfigError("head_dim_lock " + std::to_string(*head_dim_lock) + " x " + std::to_string(h) +
                                  " heads = " + std::to_string(q) + " is not a qkv_dim choice " +
                                  triple_string(qkv_dim));
            }
        }
    } else {
        for (int h : heads) {
            if (std::none_of(qkvs.begin(), qkvs.end(), [h](int q) { return q % h == 0; })) {
                throw ConfigError("num_heads " + std::to_string(h) + " divides no qkv_dim choice");
            }
        }
        for (int q : qkvs) {
            if (std::none_of(heads.begin(), heads.end(), [q](int h) { return q % h == 0; })) {
                throw ConfigError("qkv_dim " + std::to_string(q) + " is divisible by no num_heads choice");
            }
        }
    }
}

std::vector<int> SpaceSpec::embed_choices() const { return to_ints(expand(embed_dim)); }
std::vector<int> SpaceSpec::depth_choices() const { return to_ints(expand(depth)); }
std::vector<int> SpaceSpec::heads_choices() const { return to_ints(expand(num_heads)); }
std::vector<int> SpaceSpec::qkv_choices() const { return to_ints(expand(qkv_dim)); }
std::vector<double> SpaceSpec::ratio_choices() const { return expand(mlp_ratio); }

std::vector<LayerGene> SpaceSpec::layer_genes() const {
    std::vector<LayerGene> genes;
    const auto ratios = ratio_choices();
    for (int h : heads_choices()) {
        std::vector<int> qs;
        if (head_dim_lock) {
            qs.push_back(*head_dim_lock * h);
        } else {
            for (int q : qkv_choices()) {
                if (q % h == 0) {
                    qs.push_back(q);
                }
            }
        }
        for (int q : qs) {
            for (double r : ratios) {
                genes.push_back({h, q, r});
            }
        }
    }
    return genes;
}

void SpaceSpec::check(const ArchConfig& arch) const {
    const auto embeds = embed_choices();
    if (std::find(embeds.begin(), embeds.end(), arch.embed_dim) == embeds.end()) {
        throw ConfigError("embed_dim " + std::to_string(arch.embed_dim) + " not in " + triple_string(embed_dim));
    }
    const auto depths = depth_choices();
    if (std::find(depths.begin(), depths.end(), arch.depth) == depths.end()) {
        throw ConfigError("depth " + std::to_string(arch.depth) + " not in " + triple_string(depth));
    }
    if (arch.layers.size() != static_cast<std::size_t>(arch.depth)) {
        throw ConfigError("depth " + std::to_string(arch.depth) + " but " + std::to_string(arch.layers.size()) +
                          " layer genes");
    }
    const auto genes = layer_genes();
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& g = arch.layers[i];
        const bool ok = std::any_of(genes.begin(), genes.end(), [&](const LayerGene& c) {
            return c.num_heads == g.num_heads && c.qkv_dim == g.qkv_dim && near(c.mlp_ratio, g.mlp_ratio);
        });
        if (!ok) {
            throw ConfigError("layer " + std::to_string(i) + " gene (heads " + std::to_string(g.num_heads) +
                              ", qkv " + std::to_string(g.qkv_dim) + ", ratio " + format_ratio(g.mlp_ratio) +
                              ") is not legal in this space");
        }
    }
}

bool SpaceSpec::contains(const ArchConfig& arch) const {
    try {
        check(arch);
        return true;
    } catch (const ConfigError&) {
        return false;
    }
}

namespace {

// Genes ordered by (qkv, ratio, heads) so front/back are the smallest/largest.
std::vector<LayerGene> sorted_genes(const SpaceSpec& s) {
    auto g = s.layer_genes();
    std::stable_sort(g.begin(), g.end(), [](const LayerGene& a, const LayerGene& b) {
        if (a.qkv_dim != b.qkv_dim) {
            return a.qkv_dim < b.qkv_dim;
        }
        if (a.mlp_ratio != b.mlp_ratio) {
            return a.mlp_ratio < b.mlp_ratio;
        }
        return a.num_heads < b.num_heads;
    });
    return g;
}

}  // namespace

ArchConfig SpaceSpec::smallest() const {
    const auto g = sorted_genes(*this);
    ArchConfig a{embed_choices().front(), depth_choices().front(), {}};
    a.layers.assign(static_cast<std::size_t>(a.depth), g.front());
    return a;
}

ArchConfig SpaceSpec::largest() const {
    const auto g = sorted_genes(*this);
    ArchConfig a{embed_choices().back(), depth_choices().back(), {}};
    a.layers.assign(static_cast<std::size_t>(a.depth), g.back());
    return a;
}

int SpaceSpec::max_embed() const { return embed_choices().back(); }
int SpaceSpec::max_depth() const { return depth_choices().back(); }

int SpaceSpec::max_qkv() const {
    int m = 0;
    for (const auto& g : layer_genes()) {
        m = std::max(m, g.qkv_dim);
    }
    return m;
}

int SpaceSpec::max_hidden() const { return hidden_dim(ratio_choices().back(), max_embed()); }

SpaceSpec preset(std::string_view name) {
    SpaceSpec s;
    if (name == "tiny") {
        s = {{192, 240, 24}, {192, 256, 64}, {3.5, 4, 0.5}, {3, 4, 1}, {12, 14, 1}, 64};
    } else if (name == "small") {
        s = {{320, 448, 64}, {320, 448, 64}, {3, 4, 0.5}, {5, 7, 1}, {12, 14, 1}, 64};
    } else if (name == "base") {
        s = {{528, 624, 48}, {512, 640, 64}, {3, 4, 0.5}, {8, 10, 1}, {14, 16, 1}, 64};
    } else {
        throw ConfigError("unknown space preset '" + std::string(name) + "' (expected tiny, small or base)");
    }
    return s;
}

std::vector<std::string> preset_names() { return {"tiny", "small", "base"}; }

std::string canonical_string(const SpaceSpec& s) {
    std::string out = "embed" + triple_string(s.embed_dim) + ";qkv" + triple_string(s.qkv_dim) + ";ratio" +
                      triple_string(s.mlp_ratio) + ";heads" + triple_string(s.num_heads) + ";depth" +
                      triple_string(s.depth) + ";lock=";
    out += s.head_dim_lock ? std::to_string(*s.head_dim_lock) : "none";
    return out;
}

std::string spec_hash(const SpaceSpec& spec) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_string(spec))));
    return buf;
}

// ---- sampling and genetic operators ---------------------------------------

ArchConfig sample_uniform(const SpaceSpec& spec, Rng& rng) {
    const auto depths = spec.depth_choices();
    const auto embeds = spec.embed_choices();
    const auto genes = spec.layer_genes();
    ArchConfig a;
    a.depth = pick(depths, rng);
    a.embed_dim = pick(embeds, rng);
    a.layers.reserve(static_cast<std::size_t>(a.depth));
    for (int i = 0; i < a.depth; ++i) {
        a.layers.push_back(pick(genes, rng));
    }
    return a;
}

BigInt cardinality(const SpaceSpec& spec) {
    const BigInt per_layer = spec.layer_genes().size();
    BigInt sum = 0;
    for (int d : spec.depth_choices()) {
        BigInt term = 1;
        for (int i = 0; i < d; ++i) {
            term *= per_layer;
        }
        sum += term;
    }
    return BigInt(spec.embed_choices().size()) * sum;
}

ArchConfig mutate(const ArchConfig& a, const SpaceSpec& spec, double p_depth, double p_gene, Rng& rng) {
    const auto genes = spec.layer_genes();
    ArchConfig out = a;
    if (rng.bernoulli(p_depth)) {
        const int d = pick(spec.depth_choices(), rng);
        if (d < out.depth) {
            out.layers.resize(static_cast<std::size_t>(d));
        }
        while (static_cast<int>(out.layers.size()) < d) {
            out.layers.push_back(pick(genes, rng));
        }
        out.depth = d;
    }
    for (auto& g : out.layers) {
        if (rng.bernoulli(p_gene)) {
            g = pick(genes, rng);
        }
    }
    if (rng.bernoulli(p_gene)) {
        out.embed_dim = pick(spec.embed_choices(), rng);
    }
    return out;
}

ArchConfig crossover(const ArchConfig& a, const ArchConfig& b, const SpaceSpec& spec, Rng& rng) {
    (void)spec;
    ArchConfig out;
    out.depth = rng.bernoulli(0.5) ? a.depth : b.depth;
    out.embed_dim = rng.bernoulli(0.5) ? a.embed_dim : b.embed_dim;
    out.layers.reserve(static_cast<std::size_t>(out.depth));
    for (int i = 0; i < out.depth; ++i) {
        const bool in_a = i < a.depth, in_b = i < b.depth;
        const auto idx = static_cast<std::size_t>(i);
        if (in_a && in_b) {
            out.layers.push_back(rng.bernoulli(0.5) ? a.layers[idx] : b.layers[idx]);
        } else {
            out.layers.push_back(in_a ? a.layers[idx] : b.layers[idx]);
        }
    }
    return out;
}

// ---- keys -----------------------------------------------------------------

std::string arch_key(const ArchConfig& arch) {
    std::string s = "E" + std::to_string(arch.embed_dim) + "|D" + std::to_string(arch.depth);
    for (const auto& g : arch.layers) {
        s += "|H" + std::to_string(g.num_heads) + "Q" + std::to_string(g.qkv_dim) + "R" + format_ratio(g.mlp_ratio);
    }
    return s;
}

ArchConfig parse_arch_key(std::string_view key) {
    auto fail = [&]() -> ConfigError { return ConfigError("malformed architecture key '" + std::string(key) + "'"); };
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (start <= key.size()) {
        const auto bar = key.find('|', start);
        const auto end = bar == std::string_view::npos ? key.size() : bar;
        parts.push_back(key.substr(start, end - start));
        start = end + 1;
    }
    auto parse_int = [&](std::string_view s) {
        int v = 0;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) {
            throw fail();
        }
        return v;
    };
    if (parts.size() < 2 || parts[0].size() < 2 || parts[0][0] != 'E' || parts[1].size() < 2 || parts[1][0] != 'D') {
        throw fail();
    }
    ArchConfig a;
    a.embed_dim = parse_int(parts[0].substr(1));
    a.depth = parse_int(parts[1].substr(1));
    if (a.depth < 0 || parts.size() != 2 + static_cast<std::size_t>(a.depth)) {
        throw fail();
    }
    for (std::size_t i = 2; i < parts.size(); ++i) {
        const auto p = parts[i];
        const auto q = p.find('Q');
        const auto r = p.find('R');
        if (p.empty() || p[0] != 'H' || q == std::string_view::npos || r == std::string_view::npos || r < q) {
            throw fail();
        }
        LayerGene g;
        g.num_heads = parse_int(p.substr(1, q - 1));
        g.qkv_dim = parse_int(p.substr(q + 1, r - q - 1));
        const std::string ratio(p.substr(r + 1));
        char* endp = nullptr;
        g.mlp_ratio = std::strtod(ratio.c_str(), &endp);
        if (ratio.empty() || endp != ratio.c_str() + ratio.size()) {
            throw fail();
        }
        a.layers.push_back(g);
    }
    return a;
}

}  // namespace vitnas
