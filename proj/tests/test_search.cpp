#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "vitnas/error.hpp"
#include "vitnas/metrics.hpp"
#include "vitnas/search.hpp"
#include "vitnas/trainer.hpp"

using namespace vitnas;
using namespace vitnas::testing;

namespace {

const NetGeometry kGeom{32, 32, 3, 8, 8};

SearchConfig small_cfg(std::uint64_t seed) {
    SearchConfig c;
    c.population_size = 20;
    c.generations = 5;
    c.num_parents = 5;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("search config validation") {
    SearchConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.budget() == 50 * 21);
    c.num_parents = 60;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SearchConfig{};
    c.min_params = 10;
    c.max_params = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SearchConfig{};
    c.p_gene = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    for (auto p : {Provenance::seed, Provenance::mutation, Provenance::crossover})
        CHECK(parse_provenance(to_string(p)) == p);
}

TEST_CASE("generations=0 is a constrained random population") {
    SearchConfig c = small_cfg(1);
    c.generations = 0;
    const auto r = evolve(shrunk_space(), kGeom, c, surrogate_fitness);
    CHECK(r.history.size() == 20);
    CHECK(r.generations.size() == 1);
    for (const auto& cand : r.history) {
        CHECK(cand.generation == 0);
        CHECK(cand.provenance == Provenance::seed);
    }
}

TEST_CASE("history is best-first per generation and best-so-far never decreases") {
    const auto r = evolve(shrunk_space(), kGeom, small_cfg(2), surrogate_fitness);
    REQUIRE(r.history.size() == 20 * 6);
    REQUIRE(r.generations.size() == 6);
    double best = -1;
    for (std::size_t g = 0; g < 6; ++g) {
        for (std::size_t i = 0; i < 20; ++i) {
            const auto& c = r.history[g * 20 + i];
            CHECK(c.generation == int(g));
            if (i > 0) CHECK(c.fitness <= r.history[g * 20 + i - 1].fitness);
            best = std::max(best, c.fitness);
            if (g > 0) CHECK(c.provenance != Provenance::seed);  // fallback is rare here
        }
        CHECK(r.generations[g].best_so_far == best);
        if (g > 0) CHECK(r.generations[g].best_so_far >= r.generations[g - 1].best_so_far);
    }
    CHECK(r.best().fitness == best);
}

TEST_CASE("memoization: one evaluation per distinct architecture") {
    int calls = 0;
    FitnessFn counted = [&](const ArchConfig& a) {
        ++calls;
        return surrogate_fitness(a);
    };
    const auto r = evolve(shrunk_space(), kGeom, small_cfg(3), counted);
    std::set<std::string> keys;
    for (const auto& c : r.history) keys.insert(arch_key(c.arch));
    CHECK(r.evaluations == keys.size());
    CHECK(std::size_t(calls) == keys.size());
    CHECK(keys.size() < r.history.size());  // evolution revisits archs

    FitnessCache cache(counted);
    const ArchConfig a = shrunk_space().smallest();
    calls = 0;
    CHECK(cache(a) == cache(a));
    CHECK(calls == 1);
    CHECK(cache.evaluations() == 1);
}

TEST_CASE("every candidate respects the parameter window") {
    const SpaceSpec s = shrunk_space();
    const auto range = param_range(s, kGeom);
    SearchConfig c = small_cfg(4);
    c.min_params = range.min + (range.max - range.min) / 3;
    c.max_params = range.min + 2 * (range.max - range.min) / 3;
    for (const auto& r : {evolve(s, kGeom, c, surrogate_fitness), random_search(s, kGeom, c, 77, surrogate_fitness)}) {
        for (const auto& cand : r.history) {
            CHECK(cand.params == count_params(cand.arch, kGeom));
            CHECK(cand.params >= c.min_params);
            CHECK(cand.params <= c.max_params);
            CHECK(s.contains(cand.arch));
        }
    }
    c.min_params = range.max + 1;
    c.max_params = range.max + 2;
    CHECK_THROWS_WITH_AS(evolve(s, kGeom, c, surrogate_fitness), doctest::Contains("infeasible"), ConfigError);
}

TEST_CASE("random search: budget 1 gives one candidate; chunks carry generation indices") {
    const auto one = random_search(shrunk_space(), kGeom, small_cfg(5), 1, surrogate_fitness);
    REQUIRE(one.history.size() == 1);
    CHECK(&one.best() == &one.history[0]);
    const auto r = random_search(shrunk_space(), kGeom, small_cfg(5), 45, surrogate_fitness);
    CHECK(r.history.size() == 45);
    CHECK(r.generations.size() == 3);
    CHECK(r.history.back().generation == 2);
    CHECK_THROWS_AS(random_search(shrunk_space(), kGeom, small_cfg(5), 0, surrogate_fitness), ConfigError);
}

TEST_CASE("search is deterministic given the seed") {
    const auto a = evolve(shrunk_space(), kGeom, small_cfg(6), surrogate_fitness);
    const auto b = evolve(shrunk_space(), kGeom, small_cfg(6), surrogate_fitness);
    const auto c = evolve(shrunk_space(), kGeom, small_cfg(7), surrogate_fitness);
    REQUIRE(a.history.size() == b.history.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].arch == b.history[i].arch);
        CHECK(a.history[i].provenance == b.history[i].provenance);
        differs = differs || !(a.history[i].arch == c.history[i].arch);
    }
    CHECK(differs);
}

TEST_CASE("constant fitness leaves gene marginals uniform") {
    // One draw per independent seed from the final generation, so the
    // chi-square samples are independent despite parent sharing within a run.
    const SpaceSpec s = shrunk_space();
    const FitnessFn flat = [](const ArchConfig&) { return 0.5; };
    std::vector<long> depth_e(3, 0), embed_e(3, 0), heads_e(2, 0), depth_r(3, 0), embed_r(3, 0);
    for (std::uint64_t seed = 0; seed < 600; ++seed) {
        SearchConfig c;
        c.population_size = 6;
        c.generations = 3;
        c.num_parents = 3;
        c.seed = seed;
        const auto r = evolve(s, kGeom, c, flat);
        const auto& pick = r.history[r.history.size() - 1 - seed % 6];
        depth_e[std::size_t(pick.arch.depth - 3)]++;
        embed_e[std::size_t((pick.arch.embed_dim - 32) / 16)]++;
        heads_e[std::size_t(pick.arch.layers[0].num_heads / 2 - 1)]++;
        const auto rr = random_search(s, kGeom, c, 1, flat);
        depth_r[std::size_t(rr.history[0].arch.depth - 3)]++;
        embed_r[std::size_t((rr.history[0].arch.embed_dim - 32) / 16)]++;
    }
    CHECK(chi_square_uniform(depth_e) < chi_square_crit_01(2));
    CHECK(chi_square_uniform(embed_e) < chi_square_crit_01(2));
    CHECK(chi_square_uniform(heads_e) < chi_square_crit_01(1));
    CHECK(chi_square_uniform(depth_r) < chi_square_crit_01(2));
    CHECK(chi_square_uniform(embed_r) < chi_square_crit_01(2));
}

TEST_CASE("surrogate: evolution beats matched-budget random search on most seeds") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const SearchConfig c = small_cfg(seed);
        const double e = evolve(shrunk_space(), kGeom, c, surrogate_fitness).best().fitness;
        const double r = random_search(shrunk_space(), kGeom, c, c.budget(), surrogate_fitness).best().fitness;
        wins += e > r;
    }
    CHECK(wins >= 8);
}

TEST_CASE("supernet fitness: zeroed classifier scores the class-0 share; repeat calls agree") {
    SynthOptions o;
    o.samples = 40;
    o.size = 32;
    const Dataset val = synthesize(o);
    EntangledStore<float> store(shrunk_space(), val.geometry(8), 0);
    for (auto* n : {"head.w", "head.b"})
        for (auto& x : store.at(n).value.data()) x = 0;
    const auto fit = supernet_fitness(store, val, 24, 8);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < 24; ++i) zeros += val.labels[i] == 0;
    Rng rng(1);
    const auto a = sample_uniform(shrunk_space(), rng);
    CHECK(fit(a) == doctest::Approx(double(zeros) / 24));
    CHECK(fit(a) == fit(a));
}
