#include "vitnas/search.hpp"

#include <algorithm>
#include <numeric>

#include "vitnas/error.hpp"
#include "vitnas/metrics.hpp"
#include "vitnas/trainer.hpp"

namespace vitnas {

void SearchConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("search config: " + what); };
    if (population_size < 1) fail("population_size must be positive");
    if (generations < 0) fail("generations must be >= 0");
    if (num_parents < 1 || num_parents > population_size) fail("num_parents must be in [1, population_size]");
    if (!(p_depth >= 0 && p_depth <= 1) || !(p_gene >= 0 && p_gene <= 1)) fail("probabilities must be in [0, 1]");
    if (min_params == 0 || min_params > max_params) fail("param bounds need 0 < min_params <= max_params");
    if (eval_samples < 0) fail("eval_samples must be >= 0");
    if (eval_batch < 1) fail("eval_batch must be positive");
    if (rejection_cap < 1) fail("rejection_cap must be positive");
}

std::uint64_t SearchConfig::budget() const {
    return static_cast<std::uint64_t>(population_size) * static_cast<std::uint64_t>(generations + 1);
}

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::seed: return "seed";
        case Provenance::mutation: return "mutation";
        case Provenance::crossover: return "crossover";
    }
    return "?";
}

Provenance parse_provenance(std::string_view s) {
    if (s == "seed") return Provenance::seed;
    if (s == "mutation") return Provenance::mutation;
    if (s == "crossover") return Provenance::crossover;
    throw DataError("unknown provenance '" + std::string(s) + "'");
}

double FitnessCache::operator()(const ArchConfig& arch) {
    const std::string key = arch_key(arch);
    const auto it = cache_.find(key);
    if (it != cache_.end()) {
        return it->second;
    }
    const double f = fn_(arch);
    cache_.emplace(key, f);
    return f;
}

const Candidate& SearchResult::best() const {
    if (history.empty()) {
        throw ConfigError("search result is empty");
    }
    const Candidate* b = &history.front();
    for (const auto& c : history) {
        if (c.fitness > b->fitness) {
            b = &c;
        }
    }
    return *b;
}

std::optional<ArchConfig> constrained_uniform(const SpaceSpec& spec, const NetGeometry& geom, std::uint64_t min_params,
                                              std::uint64_t max_params, int cap, Rng& rng) {
    for (int i = 0; i < cap; ++i) {
        ArchConfig a = sample_uniform(spec, rng);
        const std::uint64_t p = count_params(a, geom);
        if (p >= min_params && p <= max_params) {
            return a;
        }
    }
    return std::nullopt;
}

namespace {

bool in_bounds(const ArchConfig& a, const NetGeometry& geom, const SearchConfig& cfg) {
    const std::uint64_t p = count_params(a, geom);
    return p >= cfg.min_params && p <= cfg.max_params;
}

Candidate make_candidate(ArchConfig arch, const NetGeometry& geom, Provenance prov, int gen, FitnessCache& fit) {
    Candidate c;
    c.params = count_params(arch, geom);
    c.fitness = fit(arch);
    c.arch = std::move(arch);
    c.provenance = prov;
    c.generation = gen;
    return c;
}

// Sorts [begin, end) best-first, stable so earlier candidates win ties.
void rank_generation(std::vector<Candidate>& h, std::size_t begin) {
    std::stable_sort(h.begin() + static_cast<std::ptrdiff_t>(begin), h.end(),
                     [](const Candidate& a, const Candidate& b) { return a.fitness > b.fitness; });
}

void record_stats(SearchResult& r, std::size_t begin, int gen) {
    std::vector<double> f;
    for (std::size_t i = begin; i < r.history.size(); ++i) {
        f.push_back(r.history[i].fitness);
    }
    std::sort(f.begin(), f.end());
    GenerationStats s;
    s.generation = gen;
    s.best = f.back();
    const std::size_t m = f.size();
    s.median = m % 2 ? f[m / 2] : 0.5 * (f[m / 2 - 1] + f[m / 2]);
    s.best_so_far = r.generations.empty() ? s.best : std::max(s.best, r.generations.back().best_so_far);
    r.generations.push_back(s);
}

std::vector<ArchConfig> initial_population(const SpaceSpec& spec, const NetGeometry& geom, const SearchConfig& cfg,
                                           std::uint64_t count, Rng& rng) {
    std::vector<std::optional<ArchConfig>> slots(count);
    std::vector<std::size_t> found;
    for (std::size_t i = 0; i < count; ++i) {
        slots[i] = constrained_uniform(spec, geom, cfg.min_params, cfg.max_params, cfg.rejection_cap, rng);
        if (slots[i]) {
            found.push_back(i);
        }
    }
    if (found.empty()) {
        throw ConfigError("infeasible constraint: no architecture with " + std::to_string(cfg.min_params) + " to " +
                          std::to_string(cfg.max_params) + " parameters found in " +
                          std::to_string(count * static_cast<std::uint64_t>(cfg.rejection_cap)) + " draws");
    }
    std::vector<ArchConfig> out;
    out.reserve(count);
    for (auto& s : slots) {
        // Slots whose draws all failed reuse a uniformly chosen feasible draw.
        out.push_back(s ? *s : *slots[found[rng.uniform_index(found.size())]]);
    }
    return out;
}

}  // namespace

SearchResult evolve(const SpaceSpec& spec, const NetGeometry& geom, const SearchConfig& cfg, const FitnessFn& fitness) {
    cfg.validate();
    spec.validate();
    Rng rng(derive_seed(cfg.seed, "evolve"));
    FitnessCache fit(fitness);
    SearchResult r;

    for (auto& a : initial_population(spec, geom, cfg, static_cast<std::uint64_t>(cfg.population_size), rng)) {
        r.history.push_back(make_candidate(std::move(a), geom, Provenance::seed, 0, fit));
    }
    rank_generation(r.history, 0);
    record_stats(r, 0, 0);

    for (int gen = 1; gen <= cfg.generations; ++gen) {
        // Parents: top num_parents distinct archs over the whole history.
        std::map<std::string, const Candidate*> distinct;
        for (const auto& c : r.history) {
            distinct.emplace(arch_key(c.arch), &c);
        }
        std::vector<const Candidate*> pool;
        for (const auto& kv : distinct) {
            pool.push_back(kv.second);
        }
        for (std::size_t i = pool.size(); i > 1; --i) {
            std::swap(pool[i - 1], pool[rng.uniform_index(i)]);
        }
        std::stable_sort(pool.begin(), pool.end(),
                         [](const Candidate* a, const Candidate* b) { return a->fitness > b->fitness; });
        pool.resize(std::min(pool.size(), static_cast<std::size_t>(cfg.num_parents)));
        std::vector<ArchConfig> parents;
        for (const auto* c : pool) {
            parents.push_back(c->arch);
        }

        std::vector<Candidate> offspring;
        for (int j = 0; j < cfg.population_size; ++j) {
            const bool cross = j % 2 == 0 && parents.size() >= 2;
            std::optional<ArchConfig> child;
            for (int attempt = 0; attempt < cfg.rejection_cap && !child; ++attempt) {
                ArchConfig a;
                if (cross) {
                    const std::size_t x = rng.uniform_index(parents.size());
                    std::size_t y = rng.uniform_index(parents.size() - 1);
                    y += y >= x ? 1 : 0;
                    a = crossover(parents[x], parents[y], spec, rng);
                } else {
                    a = mutate(parents[rng.uniform_index(parents.size())], spec, cfg.p_depth, cfg.p_gene, rng);
                }
                if (in_bounds(a, geom, cfg)) {
                    child = std::move(a);
                }
            }
            Provenance prov = cross ? Provenance::crossover : Provenance::mutation;
            if (!child) {
                prov = Provenance::seed;
                child = constrained_uniform(spec, geom, cfg.min_params, cfg.max_params, cfg.rejection_cap, rng);
                if (!child) {
                    // Feasible archs exist (generation 0 found some); fall back to a parent.
                    child = parents[rng.uniform_index(parents.size())];
                }
            }
            offspring.push_back(make_candidate(std::move(*child), geom, prov, gen, fit));
        }
        const std::size_t begin = r.history.size();
        r.history.insert(r.history.end(), offspring.begin(), offspring.end());
        rank_generation(r.history, begin);
        record_stats(r, begin, gen);
    }
    r.evaluations = fit.evaluations();
    return r;
}

SearchResult random_search(const SpaceSpec& spec, const NetGeometry& geom, const SearchConfig& cfg,
                           std::uint64_t budget, const FitnessFn& fitness) {
    cfg.validate();
    spec.validate();
    if (budget == 0) {
        throw ConfigError("random search budget must be positive");
    }
    Rng rng(derive_seed(cfg.seed, "random"));
    FitnessCache fit(fitness);
    SearchResult r;
    const auto archs = initial_population(spec, geom, cfg, budget, rng);
    const std::size_t chunk = static_cast<std::size_t>(cfg.population_size);
    for (std::size_t begin = 0; begin < archs.size(); begin += chunk) {
        const int gen = static_cast<int>(begin / chunk);
        const std::size_t end = std::min(archs.size(), begin + chunk);
        for (std::size_t i = begin; i < end; ++i) {
            r.history.push_back(make_candidate(archs[i], geom, Provenance::seed, gen, fit));
        }
        rank_generation(r.history, begin);
        record_stats(r, begin, gen);
    }
    r.evaluations = fit.evaluations();
    return r;
}

template <class T>
FitnessFn supernet_fitness(const ParamStore<T>& store, const Dataset& val, int eval_samples, int eval_batch) {
    return [&store, &val, eval_samples, eval_batch](const ArchConfig& arch) {
        return evaluate_accuracy(store, arch, val, eval_batch, static_cast<std::size_t>(eval_samples)).value();
    };
}

template FitnessFn supernet_fitness(const ParamStore<float>&, const Dataset&, int, int);
template FitnessFn supernet_fitness(const ParamStore<double>&, const Dataset&, int, int);

}  // namespace vitnas
