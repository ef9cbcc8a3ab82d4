#pragma once

// Weight stores for subnets of a vision-transformer search space.
//
// EntangledStore keeps one maximal tensor per slot; a subnet's weights are
// the leading-index blocks of those tensors, so for any two choices in one
// layer the smaller choice's weights are a subset of the larger's.
// DisjointStore gives every (layer, block choice) its own independent weights.
// StandaloneNet owns exactly one architecture's weights.
//
// All three hand out SubnetView: a set of ParamSlice descriptors (offset 0,
// extent per axis) into their parameters. Views alias the store; the forward
// pass and the optimizer both operate through them.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "vitnas/geometry.hpp"
#include "vitnas/optim.hpp"
#include "vitnas/space.hpp"
#include "vitnas/tensor.hpp"

namespace vitnas {

template <class T>
struct LayerSlices {
    ParamSlice<T> ln1_g, ln1_b;
    ParamSlice<T> q_w, q_b, k_w, k_b, v_w, v_b;
    ParamSlice<T> proj_w, proj_b;
    ParamSlice<T> ln2_g, ln2_b;
    ParamSlice<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

template <class T>
struct SubnetView {
    ArchConfig arch;
    ParamSlice<T> patch_w, patch_b, cls, pos;
    std::vector<LayerSlices<T>> layers;
    ParamSlice<T> norm_g, norm_b, head_w, head_b;
};

/// Every slice the subnet touches, each exactly once: shared head and tail
/// components plus the sliced regions of its first arch.depth layers.
template <class T>
std::vector<ParamSlice<T>> trainable_params(const SubnetView<T>& view);

template <class T>
std::uint64_t slice_elements(const std::vector<ParamSlice<T>>& slices);

/// Initial values: truncated normal (sigma 0.02, cut at 2 sigma) for projections
/// and embeddings, zeros for biases, ones for LayerNorm gains.
enum class ParamInit { trunc_normal, zeros, ones };

enum class StoreKind { entangled, disjoint, standalone };
std::string_view to_string(StoreKind kind);
StoreKind parse_store_kind(std::string_view name);

template <class T>
class ParamStore {
public:
    virtual ~ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    virtual StoreKind kind() const = 0;
    /// Throws ConfigError when arch is not servable by this store.
    virtual SubnetView<T> view(const ArchConfig& arch) const = 0;

    const SpaceSpec& spec() const { return spec_; }
    const NetGeometry& geometry() const { return geom_; }
    std::uint64_t init_seed() const { return init_seed_; }

    GeluForm gelu_form() const { return gelu_; }
    void set_gelu_form(GeluForm f) { gelu_ = f; }
    double ln_eps() const { return ln_eps_; }

    /// All parameters in creation order (the checkpoint order).
    std::vector<Param<T>*> params() const;
    Param<T>* find(std::string_view name) const;
    Param<T>& at(std::string_view name) const;
    std::uint64_t total_elements() const;

protected:
    ParamStore(SpaceSpec spec, NetGeometry geom, std::uint64_t init_seed);

    Param<T>& add_param(std::string name, Shape shape, ParamInit init, bool decay);
    /// Shared patch/class/position/final-norm/classifier tensors at maximal embed width.
    void add_shared(int max_embed);
    void fill_shared(SubnetView<T>& v, const ArchConfig& arch) const;

    SpaceSpec spec_;
    NetGeometry geom_;
    std::uint64_t init_seed_;
    GeluForm gelu_ = GeluForm::tanh;
    double ln_eps_ = 1e-6;

private:
    std::vector<std::unique_ptr<Param<T>>> params_;
    std::map<std::string, Param<T>*, std::less<>> by_name_;
};

template <class T>
class EntangledStore final : public ParamStore<T> {
public:
    /// Allocates maximal tensors: qkv rows = spec.max_qkv(), embed = spec.max_embed(),
    /// hidden = ceil(max ratio * max embed), one block per layer up to max depth.
    EntangledStore(const SpaceSpec& spec, const NetGeometry& geom, std::uint64_t init_seed);

    StoreKind kind() const override { return StoreKind::entangled; }
    SubnetView<T> view(const ArchConfig& arch) const override;
};

/// One block choice of the disjoint baseline: the gene plus the embed width it
/// was built for, since every block tensor's shape depends on both.
struct BlockChoice {
    int embed_dim = 0;
    LayerGene gene;

    std::string key() const;
};

/// All block choices a layer can take: embed choices x legal layer genes.
std::vector<BlockChoice> block_choices(const SpaceSpec& spec);

template <class T>
class DisjointStore final : public ParamStore<T> {
public:
    /// Shared head/tail components are maximal and sliced by embed width as in
    /// the entangled store; every (layer, block choice) gets its own exact-size
    /// block weights.
    DisjointStore(const SpaceSpec& spec, const NetGeometry& geom, std::uint64_t init_seed);

    StoreKind kind() const override { return StoreKind::disjoint; }
    SubnetView<T> view(const ArchConfig& arch) const override;

private:
    std::vector<std::map<std::string, std::string>> block_prefix_;  // per layer: choice key -> param prefix
};

template <class T>
class StandaloneNet final : public ParamStore<T> {
public:
    /// Freshly initialized network of exactly arch's size.
    StandaloneNet(const SpaceSpec& spec, const NetGeometry& geom, const ArchConfig& arch, std::uint64_t init_seed);

    /// Copies the sliced weights of arch out of another store.
    static std::unique_ptr<StandaloneNet> extract(const ParamStore<T>& src, const ArchConfig& arch);

    StoreKind kind() const override { return StoreKind::standalone; }
    SubnetView<T> view(const ArchConfig& arch) const override;
    const ArchConfig& arch() const { return arch_; }

private:
    ArchConfig arch_;
};

template <class T>
std::unique_ptr<ParamStore<T>> make_store(StoreKind kind, const SpaceSpec& spec, const NetGeometry& geom,
                                          std::uint64_t init_seed, const ArchConfig* arch = nullptr);

/// Logits [batch x classes] for patches [batch*num_patches x patch_pixels].
template <class T>
Tensor<T> forward(Tape<T>& tape, const ParamStore<T>& store, const SubnetView<T>& view, const Tensor<T>& patches);

}  // namespace vitnas
