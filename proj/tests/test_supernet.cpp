#include <doctest.h>

#include <cstring>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "vitnas/dataset.hpp"
#include "vitnas/metrics.hpp"
#include "vitnas/supernet.hpp"
#include "vitnas/trainer.hpp"

using namespace vitnas;
using namespace vitnas::testing;

namespace {

struct Snapshot {
    std::vector<float> value, m, v;
    std::vector<std::uint32_t> steps;
};

std::map<std::string, Snapshot> snapshot(const ParamStore<float>& store) {
    std::map<std::string, Snapshot> out;
    for (const auto* p : store.params()) {
        out[p->name] = {{p->value.data().begin(), p->value.data().end()}, p->m, p->v, p->steps};
    }
    return out;
}

bool bits_equal(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

// Elements of p inside any of the given slices.
std::vector<bool> covered(const Param<float>* p, const std::vector<ParamSlice<float>>& slices) {
    std::vector<bool> in(p->value.numel(), false);
    for (const auto& s : slices) {
        if (s.param != p) continue;
        for (std::size_t r = 0; r < s.rows; ++r)
            for (std::size_t c = 0; c < s.cols; ++c) in[s.index(r, c)] = true;
    }
    return in;
}

std::uint64_t elements_with_prefix(const ParamStore<float>& store, const std::string& prefix) {
    std::uint64_t n = 0;
    for (const auto* p : store.params())
        if (p->name.rfind(prefix, 0) == 0) n += p->value.numel();
    return n;
}

std::uint64_t block_oracle(std::uint64_t e, std::uint64_t q, std::uint64_t h) {
    return 3 * (q * e + q) + (e * q + e) + 4 * e + (h * e + h) + (e * h + e);
}

}  // namespace

TEST_CASE("tiny preset store shapes") {
    EntangledStore<float> store(preset("tiny"), NetGeometry{16, 16, 3, 16, 10}, 0);
    CHECK(store.at("pos").value.shape() == Shape{2, 240});
    CHECK(store.at("layers.0.q.w").value.shape() == Shape{256, 240});
    CHECK(store.at("layers.13.fc1.w").value.shape() == Shape{960, 240});
    CHECK(store.find("layers.14.q.w") == nullptr);
    CHECK_THROWS_AS(EntangledStore<float>(preset("tiny"), NetGeometry{18, 18, 3, 16, 10}, 0), ConfigError);
}

TEST_CASE("singleton spec: store size equals the unique architecture's size") {
    const SpaceSpec s = singleton_space();
    const NetGeometry g{8, 8, 1, 4, 3};
    EntangledStore<float> store(s, g, 0);
    CHECK(store.total_elements() == count_params(s.smallest(), g));
}

TEST_CASE("views: maximal arch is full extent, shallow arch omits deep layers, ratio leaves Wq alone") {
    const SpaceSpec s = shrunk_space();
    EntangledStore<float> store(s, NetGeometry{16, 16, 3, 8, 4}, 0);
    for (const auto& sl : trainable_params(store.view(s.largest()))) CHECK(sl.full());
    ArchConfig a = s.smallest();
    const auto v = store.view(a);
    CHECK(v.layers.size() == 3);
    for (const auto& sl : trainable_params(v)) CHECK(sl.param->name.rfind("layers.3.", 0) != 0);
    ArchConfig b = a;
    b.layers[0].mlp_ratio = 3;
    const auto w = store.view(b);
    CHECK(w.layers[0].q_w.param == v.layers[0].q_w.param);
    CHECK(w.layers[0].q_w.rows == v.layers[0].q_w.rows);
    CHECK(w.layers[0].q_w.cols == v.layers[0].q_w.cols);
    CHECK(w.layers[0].fc1_w.rows > v.layers[0].fc1_w.rows);
    ArchConfig bad = a;
    bad.embed_dim = 40;
    CHECK_THROWS_AS(store.view(bad), ConfigError);
}

TEST_CASE("subset law: every pair of block choices in every tiny layer nests slot by slot") {
    const SpaceSpec s = preset("tiny");
    EntangledStore<float> store(s, NetGeometry{16, 16, 3, 16, 10}, 0);
    const auto choices = block_choices(s);
    for (int layer = 0; layer < s.max_depth(); ++layer) {
        std::vector<std::vector<ParamSlice<float>>> sets;
        for (const auto& c : choices) {
            ArchConfig a{c.embed_dim, s.max_depth(), std::vector<LayerGene>(std::size_t(s.max_depth()), c.gene)};
            const auto& l = store.view(a).layers[std::size_t(layer)];
            sets.push_back({l.ln1_g, l.ln1_b, l.q_w, l.q_b, l.k_w, l.k_b, l.v_w, l.v_b, l.proj_w, l.proj_b,
                            l.ln2_g, l.ln2_b, l.fc1_w, l.fc1_b, l.fc2_w, l.fc2_b});
        }
        for (std::size_t i = 0; i < choices.size(); ++i) {
            for (std::size_t j = 0; j < choices.size(); ++j) {
                const auto& ci = choices[i];
                const auto& cj = choices[j];
                const bool dominated = ci.embed_dim <= cj.embed_dim && ci.gene.qkv_dim <= cj.gene.qkv_dim &&
                                       ci.gene.mlp_ratio <= cj.gene.mlp_ratio;
                for (std::size_t k = 0; k < sets[i].size(); ++k) {
                    const auto& a = sets[i][k];
                    const auto& b = sets[j][k];
                    REQUIRE(a.param == b.param);
                    const bool a_in_b = a.rows <= b.rows && a.cols <= b.cols;
                    const bool b_in_a = b.rows <= a.rows && b.cols <= a.cols;
                    CHECK((a_in_b || b_in_a || !dominated));
                    if (dominated) CHECK(a_in_b);
                }
            }
        }
    }
}

TEST_CASE("disjoint store: blocks per choice, closed-form size ratio, no overlap") {
    // Depth pinned to 1: every layer of the tiny space is structurally identical.
    SpaceSpec s = preset("tiny");
    s.depth = {1, 1, 1};
    const NetGeometry g{16, 16, 3, 16, 10};
    EntangledStore<float> ent(s, g, 0);
    DisjointStore<float> dis(s, g, 0);
    std::uint64_t expect_dis = 0;
    for (int e : s.embed_choices())
        for (const auto& gene : s.layer_genes())
            expect_dis += block_oracle(e, gene.qkv_dim, std::uint64_t(std::ceil(gene.mlp_ratio * e)));
    const std::uint64_t expect_ent = block_oracle(240, 256, 960);
    CHECK(elements_with_prefix(ent, "layers.0.") == expect_ent);
    CHECK(elements_with_prefix(dis, "layers.0.") == expect_dis);
    CHECK(double(expect_dis) / double(expect_ent) > 1.0);
    CHECK(dis.total_elements() >= ent.total_elements());

    const auto choices = block_choices(s);
    std::set<const Param<float>*> seen;
    for (const auto& c : choices) {
        const auto v = dis.view(ArchConfig{c.embed_dim, 1, {c.gene}});
        for (const auto& sl : std::vector<ParamSlice<float>>{v.layers[0].q_w, v.layers[0].fc1_w, v.layers[0].ln1_g}) {
            CHECK(sl.full());
            CHECK(seen.insert(sl.param).second);
        }
    }
}

TEST_CASE("attention rows sum to one in every layer and head") {
    const SpaceSpec s = shrunk_space();
    const NetGeometry g{16, 16, 3, 8, 4};
    EntangledStore<double> store(s, g, 5);
    Rng rng(5);
    for (int i = 0; i < 10; ++i) {
        const auto a = sample_uniform(s, rng);
        Tensor<double> patches({2 * g.num_patches(), g.patch_pixels()});
        for (auto& x : patches.data()) x = rng.normal();
        Tape<double> tape(false);
        std::size_t blocks = 0;
        tape.set_attention_hook([&](std::span<const double> p, std::size_t r, std::size_t c) {
            ++blocks;
            for (std::size_t row = 0; row < r; ++row) {
                double sum = 0;
                for (std::size_t col = 0; col < c; ++col) sum += p[row * c + col];
                CHECK(std::fabs(sum - 1) < 1e-6);
            }
        });
        forward(tape, store, store.view(a), patches);
        std::size_t heads = 0;
        for (const auto& l : a.layers) heads += std::size_t(l.num_heads);
        CHECK(blocks == 2 * heads);
    }
}

TEST_CASE("zeroed classifier gives zero logits for any arch") {
    const SpaceSpec s = shrunk_space();
    const NetGeometry g{16, 16, 3, 8, 4};
    EntangledStore<float> store(s, g, 6);
    for (auto* name : {"head.w", "head.b"})
        for (auto& x : store.at(name).value.data()) x = 0;
    Rng rng(6);
    for (int i = 0; i < 5; ++i) {
        Tensor<float> patches({3 * g.num_patches(), g.patch_pixels()});
        for (auto& x : patches.data()) x = float(rng.normal());
        Tape<float> tape(false);
        const auto y = forward(tape, store, store.view(sample_uniform(s, rng)), patches);
        CHECK(y.shape() == Shape{3, 4});
        for (float v : y.data()) CHECK(v == 0.0f);
    }
}

TEST_CASE("view forward equals forward of the copied-out standalone network") {
    const SpaceSpec s = shrunk_space();
    const NetGeometry g{16, 16, 3, 8, 4};
    for (StoreKind kind : {StoreKind::entangled, StoreKind::disjoint}) {
        auto store = make_store<double>(kind, s, g, 7);
        Rng rng(7);
        for (int i = 0; i < 20; ++i) {
            const auto a = sample_uniform(s, rng);
            const auto net = StandaloneNet<double>::extract(*store, a);
            CHECK(net->total_elements() == count_params(a, g));
            Tensor<double> patches({2 * g.num_patches(), g.patch_pixels()});
            for (auto& x : patches.data()) x = rng.normal();
            Tape<double> t1(false), t2(false);
            const auto y1 = forward(t1, *store, store->view(a), patches);
            const auto y2 = forward(t2, *net, net->view(a), patches);
            for (std::size_t k = 0; k < y1.numel(); ++k) CHECK(std::fabs(y1.data()[k] - y2.data()[k]) <= 1e-6);
        }
    }
}

TEST_CASE("update locality: one step leaves everything outside the subnet bit-identical") {
    const SpaceSpec s = shrunk_space();
    SynthOptions so;
    so.samples = 64;
    so.size = 16;
    const Dataset data = synthesize(so);
    const NetGeometry g = data.geometry(8);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 1;
    cfg.warmup_epochs = 0;
    for (StoreKind kind : {StoreKind::entangled, StoreKind::disjoint}) {
        auto store = make_store<float>(kind, s, g, 8);
        Trainer<float> trainer(*store, data, nullptr, cfg);
        Rng rng(8);
        for (int probe = 0; probe < 10; ++probe) {
            const auto a = sample_uniform(s, rng);
            std::vector<std::size_t> batch(8);
            for (auto& b : batch) b = rng.uniform_index(data.size());
            const auto before = snapshot(*store);
            const auto slices = trainable_params(store->view(a));
            trainer.step(a, batch, 1e-2);
            for (const auto* p : store->params()) {
                const auto in = covered(p, slices);
                const auto& old = before.at(p->name);
                for (std::size_t k = 0; k < in.size(); ++k) {
                    if (in[k]) continue;
                    REQUIRE(bits_equal(p->value.data()[k], old.value[k]));
                    if (!old.m.empty()) {
                        REQUIRE(bits_equal(p->m[k], old.m[k]));
                        REQUIRE(bits_equal(p->v[k], old.v[k]));
                        REQUIRE(p->steps[k] == old.steps[k]);
                    } else if (p->has_state()) {
                        REQUIRE(p->m[k] == 0.0f);
                        REQUIRE(p->steps[k] == 0);
                    }
                }
            }
        }
    }
}

TEST_CASE("full 2-layer, embed-16 subnet gradient matches finite differences") {
    const SpaceSpec s{{16, 16, 1}, {8, 16, 8}, {1, 2, 1}, {2, 2, 1}, {2, 2, 1}, std::nullopt};
    const NetGeometry g{8, 8, 1, 4, 3};
    EntangledStore<double> store(s, g, 9);
    Rng rng(9);
    // Perturb biases and norms away from their constant initial values.
    for (auto* p : store.params())
        for (auto& x : p->value.data()) x += 0.1 * rng.normal();
    const ArchConfig a{16, 2, {{2, 8, 2}, {2, 16, 1}}};
    Tensor<double> patches({2 * g.num_patches(), g.patch_pixels()});
    for (auto& x : patches.data()) x = rng.normal();
    const std::vector<std::int32_t> labels{0, 2};
    std::vector<Tensor<double>> inputs;
    for (auto* p : store.params()) inputs.push_back(p->value);
    inputs.push_back(patches.clone(true));
    const Tensor<double> x = inputs.back();
    for (GeluForm f : {GeluForm::tanh, GeluForm::erf}) {
        store.set_gelu_form(f);
        const auto r = grad_check(inputs, [&](Tape<double>& t) {
            return cross_entropy(t, forward(t, store, store.view(a), x), labels, 0.1);
        });
        CHECK(r.max_rel_error < 1e-4);
    }
}
