#include "vitnas/supernet.hpp"

#include <cmath>

#include "vitnas/error.hpp"
#include "vitnas/rng.hpp"

namespace vitnas {

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

std::string layer_prefix(int i) { return "layers." + std::to_string(i) + "."; }

}  // namespace

std::string_view to_string(StoreKind kind) {
    switch (kind) {
        case StoreKind::entangled:
            return "entangled";
        case StoreKind::disjoint:
            return "disjoint";
        case StoreKind::standalone:
            return "standalone";
    }
    return "?";
}

StoreKind parse_store_kind(std::string_view name) {
    if (name == "entangled") {
        return StoreKind::entangled;
    }
    if (name == "disjoint") {
        return StoreKind::disjoint;
    }
    if (name == "standalone") {
        return StoreKind::standalone;
    }
    throw ConfigError("unknown sharing mode '" + std::string(name) + "' (expected entangled or disjoint)");
}

std::string BlockChoice::key() const {
    return "e" + std::to_string(embed_dim) + ".h" + std::to_string(gene.num_heads) + ".q" +
           std::to_string(gene.qkv_dim) + ".r" + format_ratio(gene.mlp_ratio);
}

std::vector<BlockChoice> block_choices(const SpaceSpec& spec) {
    std::vector<BlockChoice> out;
    for (int e : spec.embed_choices()) {
        for (const auto& g : spec.layer_genes()) {
            out.push_back({e, g});
        }
    }
    return out;
}

template <class T>
std::vector<ParamSlice<T>> trainable_params(const SubnetView<T>& v) {
    std::vector<ParamSlice<T>> out{v.patch_w, v.patch_b, v.cls, v.pos};
    for (const auto& l : v.layers) {
        out.insert(out.end(), {l.ln1_g, l.ln1_b, l.q_w, l.q_b, l.k_w, l.k_b, l.v_w, l.v_b, l.proj_w, l.proj_b,
                               l.ln2_g, l.ln2_b, l.fc1_w, l.fc1_b, l.fc2_w, l.fc2_b});
    }
    out.insert(out.end(), {v.norm_g, v.norm_b, v.head_w, v.head_b});
    return out;
}

template <class T>
std::uint64_t slice_elements(const std::vector<ParamSlice<T>>& slices) {
    std::uint64_t n = 0;
    for (const auto& s : slices) {
        n += s.numel();
    }
    return n;
}

// ---- ParamStore -----------------------------------------------------------

template <class T>
ParamStore<T>::ParamStore(SpaceSpec spec, NetGeometry geom, std::uint64_t init_seed)
    : spec_(std::move(spec)), geom_(geom), init_seed_(init_seed) {
    spec_.validate();
    geom_.validate();
}

template <class T>
std::vector<Param<T>*> ParamStore<T>::params() const {
    std::vector<Param<T>*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        out.push_back(p.get());
    }
    return out;
}

template <class T>
Param<T>* ParamStore<T>::find(std::string_view name) const {
    const auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

template <class T>
Param<T>& ParamStore<T>::at(std::string_view name) const {
    Param<T>* p = find(name);
    if (!p) {
        throw ConfigError("store has no parameter '" + std::string(name) + "'");
    }
    return *p;
}

template <class T>
std::uint64_t ParamStore<T>::total_elements() const {
    std::uint64_t n = 0;
    for (const auto& p : params_) {
        n += p->value.numel();
    }
    return n;
}

template <class T>
Param<T>& ParamStore<T>::add_param(std::string name, Shape shape, ParamInit init, bool decay) {
    auto p = std::make_unique<Param<T>>();
    p->name = std::move(name);
    p->decay = decay;
    p->value = Tensor<T>(std::move(shape), true);
    auto data = p->value.data();
    switch (init) {
        case ParamInit::zeros:
            break;
        case ParamInit::ones:
            std::fill(data.begin(), data.end(), T(1));
            break;
        case ParamInit::trunc_normal: {
            // Seeded by name so the values do not depend on allocation order.
            Rng rng(derive_seed(init_seed_, p->name));
            for (auto& x : data) {
                double z = rng.normal();
                while (std::fabs(z) > 2.0) {
                    z = rng.normal();
                }
                x = T(0.02 * z);
            }
            break;
        }
    }
    Param<T>* raw = p.get();
    if (!by_name_.emplace(raw->name, raw).second) {
        throw ConfigError("duplicate parameter name '" + raw->name + "'");
    }
    params_.push_back(std::move(p));
    return *raw;
}

template <class T>
void ParamStore<T>::add_shared(int max_embed) {
    const std::size_t e = sz(max_embed);
    add_param("patch.w", {e, geom_.patch_pixels()}, ParamInit::trunc_normal, true);
    add_param("patch.b", {e}, ParamInit::zeros, false);
    add_param("cls", {e}, ParamInit::trunc_normal, false);
    add_param("pos", {geom_.tokens(), e}, ParamInit::trunc_normal, false);
    add_param("norm.g", {e}, ParamInit::ones, false);
    add_param("norm.b", {e}, ParamInit::zeros, false);
    add_param("head.w", {sz(geom_.num_classes), e}, ParamInit::trunc_normal, true);
    add_param("head.b", {sz(geom_.num_classes)}, ParamInit::zeros, false);
}

template <class T>
void ParamStore<T>::fill_shared(SubnetView<T>& v, const ArchConfig& arch) const {
    const std::size_t e = sz(arch.embed_dim);
    const std::size_t c = sz(geom_.num_classes);
    v.arch = arch;
    v.patch_w = {&at("patch.w"), e, geom_.patch_pixels()};
    v.patch_b = {&at("patch.b"), 1, e};
    v.cls = {&at("cls"), 1, e};
    v.pos = {&at("pos"), geom_.tokens(), e};
    v.norm_g = {&at("norm.g"), 1, e};
    v.norm_b = {&at("norm.b"), 1, e};
    v.head_w = {&at("head.w"), c, e};
    v.head_b = {&at("head.b"), 1, c};
}

namespace {

// Block tensors for one layer, sized (embed e, qkv q, hidden h).
template <class Adder>
void add_block(Adder&& add, const std::string& prefix, std::size_t e, std::size_t q, std::size_t h) {
    using enum ParamInit;
    add(prefix + "ln1.g", Shape{e}, ones, false);
    add(prefix + "ln1.b", Shape{e}, zeros, false);
    for (const char* n : {"q", "k", "v"}) {
        add(prefix + n + ".w", Shape{q, e}, trunc_normal, true);
        add(prefix + n + ".b", Shape{q}, zeros, false);
    }
    add(prefix + "proj.w", Shape{e, q}, trunc_normal, true);
    add(prefix + "proj.b", Shape{e}, zeros, false);
    add(prefix + "ln2.g", Shape{e}, ones, false);
    add(prefix + "ln2.b", Shape{e}, zeros, false);
    add(prefix + "fc1.w", Shape{h, e}, trunc_normal, true);
    add(prefix + "fc1.b", Shape{h}, zeros, false);
    add(prefix + "fc2.w", Shape{e, h}, trunc_normal, true);
    add(prefix + "fc2.b", Shape{e}, zeros, false);
}

template <class T, class At>
LayerSlices<T> block_slices(At&& at, const std::string& prefix, std::size_t e, std::size_t q, std::size_t h) {
    LayerSlices<T> l;
    l.ln1_g = {&at(prefix + "ln1.g"), 1, e};
    l.ln1_b = {&at(prefix + "ln1.b"), 1, e};
    l.q_w = {&at(prefix + "q.w"), q, e};
    l.q_b = {&at(prefix + "q.b"), 1, q};
    l.k_w = {&at(prefix + "k.w"), q, e};
    l.k_b = {&at(prefix + "k.b"), 1, q};
    l.v_w = {&at(prefix + "v.w"), q, e};
    l.v_b = {&at(prefix + "v.b"), 1, q};
    l.proj_w = {&at(prefix + "proj.w"), e, q};
    l.proj_b = {&at(prefix + "proj.b"), 1, e};
    l.ln2_g = {&at(prefix + "ln2.g"), 1, e};
    l.ln2_b = {&at(prefix + "ln2.b"), 1, e};
    l.fc1_w = {&at(prefix + "fc1.w"), h, e};
    l.fc1_b = {&at(prefix + "fc1.b"), 1, h};
    l.fc2_w = {&at(prefix + "fc2.w"), e, h};
    l.fc2_b = {&at(prefix + "fc2.b"), 1, e};
    return l;
}

}  // namespace

// ---- EntangledStore -------------------------------------------------------

template <class T>
EntangledStore<T>::EntangledStore(const SpaceSpec& spec, const NetGeometry& geom, std::uint64_t init_seed)
    : ParamStore<T>(spec, geom, init_seed) {
    const std::size_t e = sz(this->spec_.max_embed());
    const std::size_t q = sz(this->spec_.max_qkv());
    const std::size_t h = sz(this->spec_.max_hidden());
    this->add_shared(this->spec_.max_embed());
    auto add = [this](std::string name, Shape shape, ParamInit init, bool decay) {
        this->add_param(std::move(name), std::move(shape), init, decay);
    };
    for (int i = 0; i < this->spec_.max_depth(); ++i) {
        add_block(add, layer_prefix(i), e, q, h);
    }
}

template <class T>
SubnetView<T> EntangledStore<T>::view(const ArchConfig& arch) const {
    this->spec_.check(arch);
    SubnetView<T> v;
    this->fill_shared(v, arch);
    auto at = [this](const std::string& n) -> Param<T>& { return this->at(n); };
    const std::size_t e = sz(arch.embed_dim);
    for (int i = 0; i < arch.depth; ++i) {
        const auto& g = arch.layers[sz(i)];
        v.layers.push_back(block_slices<T>(at, layer_prefix(i), e, sz(g.qkv_dim), sz(hidden_dim(g.mlp_ratio, arch.embed_dim))));
    }
    return v;
}

// ---- DisjointStore --------------------------------------------------------

template <class T>
DisjointStore<T>::DisjointStore(const SpaceSpec& spec, const NetGeometry& geom, std::uint64_t init_seed)
    : ParamStore<T>(spec, geom, init_seed) {
    this->add_shared(this->spec_.max_embed());
    auto add = [this](std::string name, Shape shape, ParamInit init, bool decay) {
        this->add_param(std::move(name), std::move(shape), init, decay);
    };
    const auto choices = block_choices(this->spec_);
    block_prefix_.resize(sz(this->spec_.max_depth()));
    for (int i = 0; i < this->spec_.max_depth(); ++i) {
        for (const auto& c : choices) {
            const std::string prefix = layer_prefix(i) + c.key() + ".";
            add_block(add, prefix, sz(c.embed_dim), sz(c.gene.qkv_dim), sz(hidden_dim(c.gene.mlp_ratio, c.embed_dim)));
            block_prefix_[sz(i)].emplace(c.key(), prefix);
        }
    }
}

template <class T>
SubnetView<T> DisjointStore<T>::view(const ArchConfig& arch) const {
    this->spec_.check(arch);
    SubnetView<T> v;
    this->fill_shared(v, arch);
    auto at = [this](const std::string& n) -> Param<T>& { return this->at(n); };
    const std::size_t e = sz(arch.embed_dim);
    for (int i = 0; i < arch.depth; ++i) {
        const auto& g = arch.layers[sz(i)];
        const std::string& prefix = block_prefix_[sz(i)].at(BlockChoice{arch.embed_dim, g}.key());
        v.layers.push_back(block_slices<T>(at, prefix, e, sz(g.qkv_dim), sz(hidden_dim(g.mlp_ratio, arch.embed_dim))));
    }
    return v;
}

// ---- StandaloneNet --------------------------------------------------------

template <class T>
StandaloneNet<T>::StandaloneNet(const SpaceSpec& spec, const NetGeometry& geom, const ArchConfig& arch,
                                std::uint64_t init_seed)
    : ParamStore<T>(spec, geom, init_seed), arch_(arch) {
    this->spec_.check(arch_);
    this->add_shared(arch_.embed_dim);
    auto add = [this](std::string name, Shape shape, ParamInit init, bool decay) {
        this->add_param(std::move(name), std::move(shape), init, decay);
    };
    const std::size_t e = sz(arch_.embed_dim);
    for (int i = 0; i < arch_.depth; ++i) {
        const auto& g = arch_.layers[sz(i)];
        add_block(add, layer_prefix(i), e, sz(g.qkv_dim), sz(hidden_dim(g.mlp_ratio, arch_.embed_dim)));
    }
}

template <class T>
std::unique_ptr<StandaloneNet<T>> StandaloneNet<T>::extract(const ParamStore<T>& src, const ArchConfig& arch) {
    auto net = std::make_unique<StandaloneNet<T>>(src.spec(), src.geometry(), arch, src.init_seed());
    net->set_gelu_form(src.gelu_form());
    const auto from = trainable_params(src.view(arch));
    const auto to = trainable_params(net->view(arch));
    for (std::size_t k = 0; k < from.size(); ++k) {
        const auto& s = from[k];
        const auto& d = to[k];
        auto sv = s.param->value.data();
        auto dv = d.param->value.data();
        for (std::size_t r = 0; r < s.rows; ++r) {
            for (std::size_t c = 0; c < s.cols; ++c) {
                dv[d.index(r, c)] = sv[s.index(r, c)];
            }
        }
    }
    return net;
}

template <class T>
SubnetView<T> StandaloneNet<T>::view(const ArchConfig& arch) const {
    if (!(arch == arch_)) {
        throw ConfigError("standalone network built for " + arch_key(arch_) + " cannot serve " + arch_key(arch));
    }
    SubnetView<T> v;
    this->fill_shared(v, arch);
    auto at = [this](const std::string& n) -> Param<T>& { return this->at(n); };
    const std::size_t e = sz(arch.embed_dim);
    for (int i = 0; i < arch.depth; ++i) {
        const auto& g = arch.layers[sz(i)];
        v.layers.push_back(block_slices<T>(at, layer_prefix(i), e, sz(g.qkv_dim), sz(hidden_dim(g.mlp_ratio, arch.embed_dim))));
    }
    return v;
}

template <class T>
std::unique_ptr<ParamStore<T>> make_store(StoreKind kind, const SpaceSpec& spec, const NetGeometry& geom,
                                          std::uint64_t init_seed, const ArchConfig* arch) {
    switch (kind) {
        case StoreKind::entangled:
            return std::make_unique<EntangledStore<T>>(spec, geom, init_seed);
        case StoreKind::disjoint:
            return std::make_unique<DisjointStore<T>>(spec, geom, init_seed);
        case StoreKind::standalone:
            if (!arch) {
                throw ConfigError("a standalone network needs an architecture");
            }
            return std::make_unique<StandaloneNet<T>>(spec, geom, *arch, init_seed);
    }
    throw ConfigError("unknown store kind");
}

// ---- forward --------------------------------------------------------------

template <class T>
Tensor<T> forward(Tape<T>& tape, const ParamStore<T>& store, const SubnetView<T>& view, const Tensor<T>& patches) {
    const auto& geom = store.geometry();
    const std::size_t np = geom.num_patches();
    if (patches.cols() != geom.patch_pixels() || patches.rows() % np != 0 || patches.rows() == 0) {
        throw DimensionError("forward: patches " + shape_string(patches.shape()) + " do not match " +
                             std::to_string(np) + " patches of " + std::to_string(geom.patch_pixels()) + " pixels");
    }
    const std::size_t batch = patches.rows() / np;
    const double eps = store.ln_eps();
    const GeluForm gelu_form = store.gelu_form();

    auto take = [&tape](const ParamSlice<T>& s) {
        const Tensor<T>& full = s.param->value;
        return full.shape().size() == 1 ? slice_leading(tape, full, s.cols) : slice_leading(tape, full, s.rows, s.cols);
    };

    Tensor<T> x = linear(tape, patches, take(view.patch_w), take(view.patch_b));
    x = embed_tokens(tape, x, take(view.cls), take(view.pos), batch);
    for (std::size_t i = 0; i < view.layers.size(); ++i) {
        const auto& l = view.layers[i];
        const auto heads = static_cast<std::size_t>(view.arch.layers[i].num_heads);
        Tensor<T> h = layernorm(tape, x, take(l.ln1_g), take(l.ln1_b), eps);
        Tensor<T> q = linear(tape, h, take(l.q_w), take(l.q_b));
        Tensor<T> k = linear(tape, h, take(l.k_w), take(l.k_b));
        Tensor<T> v = linear(tape, h, take(l.v_w), take(l.v_b));
        Tensor<T> a = multi_head_attention(tape, q, k, v, batch, heads);
        x = add(tape, x, linear(tape, a, take(l.proj_w), take(l.proj_b)));
        h = layernorm(tape, x, take(l.ln2_g), take(l.ln2_b), eps);
        h = gelu(tape, linear(tape, h, take(l.fc1_w), take(l.fc1_b)), gelu_form);
        x = add(tape, x, linear(tape, h, take(l.fc2_w), take(l.fc2_b)));
    }
    // LayerNorm is per-row, so normalizing only the class-token rows is exact.
    Tensor<T> cls_rows = select_rows(tape, x, geom.tokens());
    cls_rows = layernorm(tape, cls_rows, take(view.norm_g), take(view.norm_b), eps);
    return linear(tape, cls_rows, take(view.head_w), take(view.head_b));
}

#define VITNAS_INSTANTIATE_SUPERNET(T)                                                                         \
    template std::vector<ParamSlice<T>> trainable_params(const SubnetView<T>&);                                \
    template std::uint64_t slice_elements(const std::vector<ParamSlice<T>>&);                                  \
    template class ParamStore<T>;                                                                              \
    template class EntangledStore<T>;                                                                          \
    template class DisjointStore<T>;                                                                           \
    template class StandaloneNet<T>;                                                                           \
    template std::unique_ptr<ParamStore<T>> make_store(StoreKind, const SpaceSpec&, const NetGeometry&,        \
                                                       std::uint64_t, const ArchConfig*);                      \
    template Tensor<T> forward(Tape<T>&, const ParamStore<T>&, const SubnetView<T>&, const Tensor<T>&);

VITNAS_INSTANTIATE_SUPERNET(float)
VITNAS_INSTANTIATE_SUPERNET(double)

#undef VITNAS_INSTANTIATE_SUPERNET

}  // namespace vitnas
