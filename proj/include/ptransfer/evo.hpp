#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ptransfer/rng.hpp"
#include "ptransfer/scheme.hpp"

namespace ptransfer {

struct SearchConfig {
    std::size_t population = 20;
    std::size_t iterations = 20;
    std::size_t n_random = 50;
    std::size_t n_mutation = 50;
    std::size_t n_crossover = 50;
    double mutation_prob = 0.1;
    LrZoo zoo;
    std::size_t n_val_episodes = 20;
    std::uint64_t seed = 0;
    std::size_t scheme_length = 0;

    void validate() const;
};

enum class Provenance { Seeded, Random, Mutation, Crossover };

std::string to_string(Provenance p);
Provenance parse_provenance(const std::string& text);

struct ScoredScheme {
    SchemeVector scheme;
    double fitness = 0.0;
    std::size_t generation = 0;
    Provenance provenance = Provenance::Random;
    std::size_t order = 0;  // global evaluation index; the tie-break key
};

struct GenerationRecord {
    std::size_t generation = 0;
    double best_fitness = 0.0;
    std::vector<double> population_fitness;
    std::size_t evaluations = 0;  // cumulative evaluation count so far
};

struct SearchTrace {
    std::vector<ScoredScheme> evaluations;
    std::vector<GenerationRecord> generations;
    ScoredScheme best;

    std::size_t total_evaluations() const { return evaluations.size(); }
};

using FitnessFn = std::function<double(const SchemeVector&)>;
using FitnessMemo = std::map<std::vector<std::size_t>, double>;
using EvalCallback = std::function<void(const ScoredScheme&)>;

SchemeVector random_scheme(std::size_t L, std::size_t m, Rng& rng);

// Each gene independently resampled (uniformly over the other m-1 values)
// with probability prob; if no gene flipped, one uniformly chosen gene is
// resampled, so the child always differs from the parent.
SchemeVector mutate(const SchemeVector& parent, std::size_t m, double prob, Rng& rng);

// Uniform crossover: each gene from either parent with probability 1/2.
SchemeVector crossover(const SchemeVector& p1, const SchemeVector& p2, Rng& rng);

// K highest-fitness entries; ties keep the earlier evaluation order.
std::vector<ScoredScheme> topk(std::vector<ScoredScheme> scored, std::size_t k);

// m^L capped at `cap` so the caller can test coverage without overflow.
std::size_t scheme_space_size(std::size_t L, std::size_t m, std::size_t cap);

// Evolutionary search: the initial generation holds the two seeded baselines
// (all-frozen and uniform) plus n_random samples; when the whole space fits
// inside n_random the random phase enumerates it instead, so full coverage is
// guaranteed. Then `iterations` elitist generations of mutations and
// crossovers. Duplicate schemes are charged against the budget but their
// fitness comes from a memo. A warm memo (e.g. from a partial trace) lets a
// re-run skip already-paid evaluations; on_eval fires after every evaluation
// so callers can persist the trace incrementally.
std::pair<ScoredScheme, SearchTrace> search(const SearchConfig& cfg,
                                            const FitnessFn& fitness,
                                            const FitnessMemo* warm_memo = nullptr,
                                            const EvalCallback& on_eval = nullptr);

// Evaluates every scheme in the space (m^L <= 100000) and returns the global
// maximum under the same tie-break as topk.
ScoredScheme exhaustive_oracle(std::size_t L, std::size_t m, const FitnessFn& fitness);

std::string format_scored(const ScoredScheme& s);
ScoredScheme parse_scored(const std::string& line);

std::string format_trace(const SearchTrace& t);
SearchTrace parse_trace(const std::string& text);

// Scheme -> fitness map recovered from a (possibly partial) trace.
FitnessMemo memo_from_trace(const SearchTrace& t);

}  // namespace ptransfer
