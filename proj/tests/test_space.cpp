#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "vitnas/error.hpp"
#include "vitnas/space.hpp"

using namespace vitnas;
using namespace vitnas::testing;

TEST_CASE("expand: table ranges and the degenerate range") {
    CHECK(expand({192, 240, 24}) == std::vector<double>{192, 216, 240});
    CHECK(expand({3.5, 4, 0.5}) == std::vector<double>{3.5, 4});
    CHECK(expand({4, 4, 1}) == std::vector<double>{4});
}

TEST_CASE("expand: invalid triples are configuration errors") {
    CHECK_THROWS_AS(RangeTriple({5, 4, 1}).validate("x"), ConfigError);
    CHECK_THROWS_AS(RangeTriple({1, 4, 0}).validate("x"), ConfigError);
    CHECK_THROWS_AS(RangeTriple({1, 4, 2}).validate("x"), ConfigError);
}

TEST_CASE("expand: idempotent on its own output") {
    for (RangeTriple r : {RangeTriple{192, 240, 24}, RangeTriple{3, 4, 0.5}, RangeTriple{2, 2, 1}, RangeTriple{1, 9, 2}}) {
        const auto once = expand(r);
        const double step = once.size() > 1 ? once[1] - once[0] : 1;
        CHECK(expand({once.front(), once.back(), step}) == once);
        for (std::size_t i = 1; i < once.size(); ++i) CHECK(once[i] > once[i - 1]);
    }
}

TEST_CASE("presets validate and keep every head count's locked qkv inside the qkv range") {
    for (const auto& name : preset_names()) {
        const SpaceSpec s = preset(name);
        CHECK_NOTHROW(s.validate());
        const auto qkv = s.qkv_choices();
        for (int h : s.heads_choices()) {
            CHECK(std::find(qkv.begin(), qkv.end(), *s.head_dim_lock * h) != qkv.end());
        }
    }
    CHECK_THROWS_AS(preset("huge"), ConfigError);
}

TEST_CASE("sample_uniform: singleton spec yields the unique architecture") {
    const SpaceSpec s = singleton_space();
    Rng rng(1);
    const ArchConfig a = sample_uniform(s, rng);
    CHECK(a == ArchConfig{16, 2, {{2, 16, 2}, {2, 16, 2}}});
    CHECK(cardinality(s) == 1);
}

TEST_CASE("sample_uniform: tiny preset depths lie in 12..14") {
    const SpaceSpec s = preset("tiny");
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const auto a = sample_uniform(s, rng);
        CHECK(a.depth >= 12);
        CHECK(a.depth <= 14);
    }
}

TEST_CASE("sample_uniform: depth gene passes a chi-square test over 10,000 draws") {
    const SpaceSpec s = preset("tiny");
    Rng rng(3);
    std::vector<long> counts(3, 0);
    for (int i = 0; i < 10000; ++i) counts[static_cast<std::size_t>(sample_uniform(s, rng).depth - 12)]++;
    CHECK(chi_square_uniform(counts) < chi_square_crit_01(2));
}

TEST_CASE("cardinality: singleton and toy examples match enumeration") {
    CHECK(cardinality(singleton_space()) == 1);
    // 2 embed widths, depth {1,2}, 3 per-layer combinations (ratio {1,2,3}).
    const SpaceSpec toy{{8, 16, 8}, {8, 8, 1}, {1, 3, 1}, {2, 2, 1}, {1, 2, 1}, std::nullopt};
    CHECK(cardinality(toy) == 24);
    long n = 0;
    enumerate_archs(toy, [&](const ArchConfig&) { ++n; });
    CHECK(n == 24);
}

TEST_CASE("cardinality equals brute-force enumeration on every small random spec") {
    Rng rng(4);
    int checked = 0;
    for (int trial = 0; trial < 400 && checked < 60; ++trial) {
        const double e0 = 8 * (1 + double(rng.uniform_index(3)));
        const double h0 = 1 + double(rng.uniform_index(3));
        const double q0 = 4 * (1 + double(rng.uniform_index(3)));
        SpaceSpec s{{e0, e0 + 8 * double(rng.uniform_index(3)), 8},
                    {q0, q0 + 4 * double(rng.uniform_index(4)), 4},
                    {1, 1 + 0.5 * double(rng.uniform_index(3)), 0.5},
                    {h0, h0 + double(rng.uniform_index(3)), 1},
                    {1, 1 + double(rng.uniform_index(3)), 1},
                    std::nullopt};
        if (rng.bernoulli(0.3)) s.head_dim_lock = 4;
        try {
            s.validate();
        } catch (const ConfigError&) {
            continue;
        }
        const BigInt c = cardinality(s);
        if (c > 10000) continue;
        std::set<std::string> keys;
        enumerate_archs(s, [&](const ArchConfig& a) {
            CHECK(s.contains(a));
            keys.insert(arch_key(a));
        });
        CHECK(BigInt(keys.size()) == c);
        ++checked;
    }
    CHECK(checked >= 20);
}

TEST_CASE("cardinality: summed unlocked presets exceed 1.7e16") {
    BigInt total = 0, locked = 0;
    for (const auto& name : preset_names()) {
        SpaceSpec s = preset(name);
        locked += cardinality(s);
        s.head_dim_lock.reset();
        total += cardinality(s);
    }
    CHECK(total >= BigInt("17000000000000000"));
    CHECK(locked < BigInt("17000000000000000"));
}

TEST_CASE("mutate: zero probabilities and singleton sets are identities") {
    const SpaceSpec s = shrunk_space();
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const auto a = sample_uniform(s, rng);
        CHECK(mutate(a, s, 0, 0, rng) == a);
    }
    const SpaceSpec one = singleton_space();
    const auto u = sample_uniform(one, rng);
    CHECK(mutate(u, one, 1, 1, rng) == u);
}

TEST_CASE("mutate: depth changes at a rate consistent with p_depth=0.2") {
    const SpaceSpec s = shrunk_space();
    Rng rng(6);
    const auto a = sample_uniform(s, rng);
    int changed = 0;
    for (int i = 0; i < 1000; ++i) changed += mutate(a, s, 0.2, 0, rng).depth != a.depth;
    // Resampling one of 3 depths changes it with probability 2/3, so ~0.133.
    CHECK(changed >= 100);
    CHECK(changed <= 300);
}

TEST_CASE("crossover: self-cross is identity, genes come from a parent") {
    const SpaceSpec s = shrunk_space();
    Rng rng(7);
    const auto a = sample_uniform(s, rng);
    CHECK(crossover(a, a, s, rng) == a);
    ArchConfig b = sample_uniform(s, rng);
    while (b == a) b = sample_uniform(s, rng);
    for (int i = 0; i < 500; ++i) {
        const auto c = crossover(a, b, s, rng);
        CHECK((c.depth == a.depth || c.depth == b.depth));
        CHECK((c.embed_dim == a.embed_dim || c.embed_dim == b.embed_dim));
        for (std::size_t l = 0; l < c.layers.size(); ++l) {
            const bool from_a = l < a.layers.size() && c.layers[l] == a.layers[l];
            const bool from_b = l < b.layers.size() && c.layers[l] == b.layers[l];
            CHECK((from_a || from_b));
        }
    }
}

TEST_CASE("sample, mutate and crossover always produce valid architectures") {
    for (const SpaceSpec& s : {shrunk_space(), preset("tiny"), [] {
             auto u = preset("small");
             u.head_dim_lock.reset();
             return u;
         }()}) {
        Rng rng(8);
        ArchConfig prev = sample_uniform(s, rng);
        for (int i = 0; i < 10000; ++i) {
            ArchConfig a;
            switch (i % 3) {
                case 0: a = sample_uniform(s, rng); break;
                case 1: a = mutate(prev, s, 0.5, 0.5, rng); break;
                default: a = crossover(prev, sample_uniform(s, rng), s, rng); break;
            }
            REQUIRE(s.contains(a));
            for (const auto& g : a.layers) CHECK(g.qkv_dim % g.num_heads == 0);
            prev = a;
        }
    }
}

TEST_CASE("arch keys round-trip and reject garbage") {
    const SpaceSpec s = preset("tiny");
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        const auto a = sample_uniform(s, rng);
        CHECK(parse_arch_key(arch_key(a)) == a);
    }
    CHECK(arch_key(ArchConfig{64, 2, {{2, 32, 2}, {4, 64, 3}}}) == "E64|D2|H2Q32R2|H4Q64R3");
    CHECK_THROWS_AS(parse_arch_key("E64|D3|H2Q32R2"), ConfigError);
    CHECK_THROWS_AS(parse_arch_key("nonsense"), ConfigError);
}

TEST_CASE("check names the offending gene") {
    const SpaceSpec s = shrunk_space();
    ArchConfig a = s.smallest();
    a.layers[1].num_heads = 3;
    try {
        s.check(a);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
    CHECK(s.contains(s.largest()));
    CHECK(s.largest().layers[0] == LayerGene{4, 64, 3});
}

TEST_CASE("spec hash depends on every field") {
    const SpaceSpec s = preset("tiny");
    SpaceSpec t = s;
    CHECK(spec_hash(s) == spec_hash(t));
    t.head_dim_lock.reset();
    CHECK(spec_hash(s) != spec_hash(t));
    t = s;
    t.depth.high = 13;
    CHECK(spec_hash(s) != spec_hash(t));
    CHECK(spec_hash(s).size() == 16);
}
