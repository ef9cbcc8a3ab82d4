#include <doctest.h>

#include "fixtures.hpp"
#include "vitnas/metrics.hpp"
#include "vitnas/supernet.hpp"

using namespace vitnas;
using namespace vitnas::testing;

namespace {

// Term-by-term parameter tally written out independently of the library.
std::uint64_t params_oracle(const ArchConfig& a, const NetGeometry& g) {
    const std::uint64_t e = a.embed_dim;
    const std::uint64_t pp = std::uint64_t(g.patch) * g.patch * g.channels;
    const std::uint64_t tokens = std::uint64_t(g.height / g.patch) * (g.width / g.patch);
    std::uint64_t n = e * pp + e + e + (tokens + 1) * e;
    for (const auto& l : a.layers) {
        const std::uint64_t q = l.qkv_dim;
        const auto h = static_cast<std::uint64_t>(std::ceil(l.mlp_ratio * a.embed_dim - 1e-9));
        n += 3 * (q * e + q) + (e * q + e) + 2 * (2 * e) + (h * e + h) + (e * h + e);
    }
    return n + 2 * e + std::uint64_t(g.num_classes) * e + g.num_classes;
}

}  // namespace

TEST_CASE("a single 192 to 768 linear slot with bias has 148,224 elements") {
    CHECK(192 * 768 + 768 == 148224);
    // fc1 of a one-layer, embed-192, ratio-4 block is exactly that slot.
    const SpaceSpec s = singleton_space(192, 3, 192, 4, 1);
    const NetGeometry g{16, 16, 3, 16, 10};
    EntangledStore<float> store(s, g, 0);
    const auto v = store.view(s.smallest());
    CHECK(v.layers[0].fc1_w.numel() + v.layers[0].fc1_b.numel() == 148224);
}

TEST_CASE("count_params matches the independent tally and the trainable element count") {
    const NetGeometry g{32, 32, 3, 8, 8};
    EntangledStore<float> store(shrunk_space(), g, 0);
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const auto a = sample_uniform(shrunk_space(), rng);
        CHECK(count_params(a, g) == params_oracle(a, g));
        CHECK(count_params(a, g) == slice_elements(trainable_params(store.view(a))));
    }
    const auto tiny = preset("tiny");
    for (int i = 0; i < 50; ++i) {
        const auto a = sample_uniform(tiny, rng);
        CHECK(count_params(a, g) == params_oracle(a, g));
    }
}

TEST_CASE("maximal arch's trainable slices cover every stored element once") {
    const NetGeometry g{16, 16, 3, 8, 4};
    EntangledStore<double> store(shrunk_space(), g, 0);
    CHECK(slice_elements(trainable_params(store.view(shrunk_space().largest()))) == store.total_elements());
}

TEST_CASE("count_params is monotone in every gene and independent of image size") {
    const SpaceSpec s = preset("tiny");
    const NetGeometry g{32, 32, 3, 8, 8};
    Rng rng(2);
    const auto heads = s.heads_choices();
    const auto ratios = s.ratio_choices();
    for (int i = 0; i < 100; ++i) {
        const auto a = sample_uniform(s, rng);
        const auto base = count_params(a, g);
        ArchConfig b = a;
        b.embed_dim = s.max_embed();
        CHECK(count_params(b, g) >= base);
        b = a;
        b.layers[0].num_heads = heads.back();
        b.layers[0].qkv_dim = *s.head_dim_lock * heads.back();
        CHECK(count_params(b, g) >= base);
        b = a;
        b.layers[0].mlp_ratio = ratios.back();
        CHECK(count_params(b, g) >= base);
        b = a;
        b.depth += 1;
        b.layers.push_back(a.layers.back());
        CHECK(count_params(b, g) > base);
        // Only the position table depends on image size.
        const NetGeometry big{64, 64, 3, 8, 8};
        CHECK(count_params(a, big) - count_params(a, g) == (64 - 16) * std::uint64_t(a.embed_dim));
    }
    const auto range = param_range(s, g);
    CHECK(range.min < range.max);
}

TEST_CASE("count_flops: zero-layer arch is patch projection plus classifier") {
    const NetGeometry g{32, 32, 3, 8, 8};
    const ArchConfig a{64, 0, {}};
    CHECK(count_flops(a, g) == 16ULL * 192 * 64 + 64 * 8);
}

TEST_CASE("count_flops: attention term scales with the square of the token count") {
    const NetGeometry small{32, 32, 3, 8, 8}, big{64, 64, 3, 8, 8};
    ArchConfig a{64, 1, {{4, 64, 2}}};
    ArchConfig b = a;
    b.layers[0].qkv_dim = 128;  // isolates the qkv-linear terms
    auto attn = [&](const NetGeometry& g) {
        // Doubling q doubles every q-linear term; subtract to isolate 2*N^2*q.
        const std::uint64_t dq = count_flops(b, g) - count_flops(a, g);
        const std::uint64_t n = g.tokens();
        return dq - 4 * n * 64 * 64;
    };
    CHECK(attn(small) == 2 * 17 * 17 * 64);
    CHECK(attn(big) == 2 * 65 * 65 * 64);
    CHECK(double(attn(big)) / double(attn(small)) == doctest::Approx(14.6).epsilon(0.01));
}

TEST_CASE("count_flops equals the MAC tally instrumented inside forward") {
    const NetGeometry g{16, 16, 3, 8, 5};
    const SpaceSpec s = shrunk_space();
    EntangledStore<double> store(s, g, 3);
    Rng rng(3);
    for (int i = 0; i < 5; ++i) {
        const auto a = sample_uniform(s, rng);
        const std::size_t batch = 1 + i;
        Tensor<double> patches({batch * g.num_patches(), g.patch_pixels()});
        for (auto& x : patches.data()) x = rng.normal();
        Tape<double> tape(false);
        forward(tape, store, store.view(a), patches);
        CHECK(tape.macs() == batch * count_flops(a, g));
    }
}
