#pragma once

// Constrained architecture search over a trained supernet. Fitness is any
// deterministic function of an architecture; supernet_fitness adapts a store
// plus a validation split into one. Every candidate ever produced satisfies
// the parameter window.

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vitnas/dataset.hpp"
#include "vitnas/geometry.hpp"
#include "vitnas/space.hpp"
#include "vitnas/supernet.hpp"

namespace vitnas {

struct SearchConfig {
    int population_size = 50;
    int generations = 20;
    int num_parents = 10;
    double p_depth = 0.2;
    double p_gene = 0.4;
    std::uint64_t min_params = 1;
    std::uint64_t max_params = std::numeric_limits<std::uint64_t>::max();
    /// Leading validation samples used as the evaluation split (0 = all).
    int eval_samples = 0;
    int eval_batch = 256;
    std::uint64_t seed = 0;
    /// Attempts per constrained draw before falling back.
    int rejection_cap = 100;

    void validate() const;
    /// Candidates produced by evolve: population_size * (generations + 1).
    std::uint64_t budget() const;
};

enum class Provenance { seed, mutation, crossover };
std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view s);

struct Candidate {
    ArchConfig arch;
    std::uint64_t params = 0;
    double fitness = 0;
    Provenance provenance = Provenance::seed;
    int generation = 0;
};

using FitnessFn = std::function<double(const ArchConfig&)>;

/// Memoizes a fitness function by arch key; each distinct arch is evaluated once.
class FitnessCache {
public:
    explicit FitnessCache(FitnessFn fn) : fn_(std::move(fn)) {}
    double operator()(const ArchConfig& arch);
    std::size_t evaluations() const { return cache_.size(); }

private:
    FitnessFn fn_;
    std::map<std::string, double> cache_;
};

struct GenerationStats {
    int generation = 0;
    double best = 0;
    double median = 0;
    double best_so_far = 0;
};

struct SearchResult {
    /// Every candidate, grouped by generation, best-first within a generation.
    std::vector<Candidate> history;
    std::vector<GenerationStats> generations;
    std::size_t evaluations = 0;

    /// Highest-fitness candidate; earliest wins ties.
    const Candidate& best() const;
};

/// Uniform draws until one lies in [min_params, max_params]; nullopt after cap attempts.
std::optional<ArchConfig> constrained_uniform(const SpaceSpec& spec, const NetGeometry& geom, std::uint64_t min_params,
                                              std::uint64_t max_params, int cap, Rng& rng);

/// Generation 0 is constrained-uniform. Each later generation takes the top
/// num_parents distinct archs of the whole history (fitness ties broken at
/// random) and produces population_size offspring, alternating crossover of
/// two distinct parents and mutation of one parent.
SearchResult evolve(const SpaceSpec& spec, const NetGeometry& geom, const SearchConfig& cfg, const FitnessFn& fitness);

/// budget constrained-uniform candidates, reported in chunks of
/// population_size so the per-generation curve is comparable with evolve.
SearchResult random_search(const SpaceSpec& spec, const NetGeometry& geom, const SearchConfig& cfg,
                           std::uint64_t budget, const FitnessFn& fitness);

/// Inherited-weight top-1 accuracy on val[0, eval_samples).
template <class T>
FitnessFn supernet_fitness(const ParamStore<T>& store, const Dataset& val, int eval_samples, int eval_batch);

}  // namespace vitnas
