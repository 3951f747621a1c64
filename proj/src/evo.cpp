#include "ptransfer/evo.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "ptransfer/text.hpp"

namespace ptransfer {

void SearchConfig::validate() const {
    if (population < 2) throw std::invalid_argument("population must be at least 2");
    if (n_random < population)
        throw std::invalid_argument("n_random must be at least the population size");
    if (iterations == 0 || n_mutation == 0 || n_crossover == 0 || n_val_episodes == 0)
        throw std::invalid_argument("search counts must be positive");
    if (!(mutation_prob > 0.0) || mutation_prob > 1.0)
        throw std::invalid_argument("mutation_prob must be in (0, 1]");
    if (zoo.size() < 2) throw std::invalid_argument("zoo needs at least 2 rates");
    if (scheme_length == 0) throw std::invalid_argument("scheme_length must be positive");
}

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::Seeded: return "seeded";
        case Provenance::Random: return "random";
        case Provenance::Mutation: return "mutation";
        case Provenance::Crossover: return "crossover";
    }
    return "?";
}

Provenance parse_provenance(const std::string& text) {
    if (text == "seeded") return Provenance::Seeded;
    if (text == "random") return Provenance::Random;
    if (text == "mutation") return Provenance::Mutation;
    if (text == "crossover") return Provenance::Crossover;
    throw std::invalid_argument("unknown provenance '" + text + "'");
}

SchemeVector random_scheme(std::size_t L, std::size_t m, Rng& rng) {
    if (L < 1) throw std::invalid_argument("scheme length must be at least 1");
    if (m < 2) throw std::invalid_argument("zoo size must be at least 2");
    SchemeVector s;
    s.entries.resize(L);
    for (std::size_t i = 0; i < L; ++i) s.entries[i] = rng.uniform_below(m);
    return s;
}

namespace {

// Uniform over the m-1 values different from `current`.
std::size_t resample_gene(std::size_t current, std::size_t m, Rng& rng) {
    std::size_t v = rng.uniform_below(m - 1);
    if (v >= current) ++v;
    return v;
}

}  // namespace

SchemeVector mutate(const SchemeVector& parent, std::size_t m, double prob, Rng& rng) {
    if (!(prob > 0.0) || prob > 1.0)
        throw std::invalid_argument("mutation probability must be in (0, 1]");
    if (m < 2) throw std::invalid_argument("zoo size must be at least 2");
    SchemeVector child = parent;
    bool changed = false;
    for (std::size_t i = 0; i < child.entries.size(); ++i) {
        if (rng.uniform01() < prob) {
            child.entries[i] = resample_gene(child.entries[i], m, rng);
            changed = true;
        }
    }
    if (!changed) {
        const std::size_t i = rng.uniform_below(child.entries.size());
        child.entries[i] = resample_gene(child.entries[i], m, rng);
    }
    return child;
}

SchemeVector crossover(const SchemeVector& p1, const SchemeVector& p2, Rng& rng) {
    if (p1.length() != p2.length())
        throw std::invalid_argument("crossover parents differ in length: " +
                                    std::to_string(p1.length()) + " vs " +
                                    std::to_string(p2.length()));
    SchemeVector child;
    child.entries.resize(p1.length());
    for (std::size_t i = 0; i < p1.length(); ++i)
        child.entries[i] = rng.uniform01() < 0.5 ? p1.entries[i] : p2.entries[i];
    return child;
}

std::vector<ScoredScheme> topk(std::vector<ScoredScheme> scored, std::size_t k) {
    if (scored.empty()) throw std::invalid_argument("topk on empty list");
    if (k > scored.size())
        throw std::invalid_argument("topk asked for " + std::to_string(k) + " of " +
                                    std::to_string(scored.size()));
    std::sort(scored.begin(), scored.end(), [](const ScoredScheme& a, const ScoredScheme& b) {
        if (a.fitness != b.fitness) return a.fitness > b.fitness;
        return a.order < b.order;
    });
    scored.resize(k);
    return scored;
}

std::size_t scheme_space_size(std::size_t L, std::size_t m, std::size_t cap) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < L; ++i) {
        if (n > cap / m) return cap;
        n *= m;
        if (n >= cap) return cap;
    }
    return n;
}

namespace {

// Lexicographic successor, leftmost entry most significant. Returns false
// after the last scheme.
bool next_scheme(SchemeVector& s, std::size_t m) {
    for (std::size_t i = s.entries.size(); i-- > 0;) {
        if (++s.entries[i] < m) return true;
        s.entries[i] = 0;
    }
    return false;
}

}  // namespace

std::pair<ScoredScheme, SearchTrace> search(const SearchConfig& cfg,
                                            const FitnessFn& fitness,
                                            const FitnessMemo* warm_memo,
                                            const EvalCallback& on_eval) {
    cfg.validate();
    const std::size_t L = cfg.scheme_length;
    const std::size_t m = cfg.zoo.size();
    Rng rng(cfg.seed);
    SearchTrace trace;
    FitnessMemo memo;
    if (warm_memo) memo = *warm_memo;

    auto evaluate = [&](SchemeVector s, std::size_t generation, Provenance prov) {
        ScoredScheme scored;
        scored.order = trace.evaluations.size();
        scored.generation = generation;
        scored.provenance = prov;
        auto it = memo.find(s.entries);
        if (it == memo.end()) {
            const double f = fitness(s);
            it = memo.emplace(s.entries, f).first;
        }
        scored.fitness = it->second;
        scored.scheme = std::move(s);
        trace.evaluations.push_back(scored);
        if (on_eval) on_eval(scored);
        return scored;
    };

    // Generation 0: when the whole space fits in the random budget, enumerate
    // it first (same order as the exhaustive oracle, so tie-breaks agree),
    // then charge the seeded baselines as memoized duplicates. Otherwise the
    // baselines come first, followed by n_random independent samples.
    const std::size_t space = scheme_space_size(L, m, cfg.n_random + 1);
    const bool full_coverage = space <= cfg.n_random;
    if (full_coverage) {
        SchemeVector s = fixed_scheme(L);
        std::size_t enumerated = 0;
        do {
            evaluate(s, 0, Provenance::Random);
            ++enumerated;
        } while (next_scheme(s, m));
        for (std::size_t i = enumerated; i < cfg.n_random; ++i)
            evaluate(random_scheme(L, m, rng), 0, Provenance::Random);
        evaluate(fixed_scheme(L), 0, Provenance::Seeded);
        evaluate(uniform_scheme(L, cfg.zoo), 0, Provenance::Seeded);
    } else {
        evaluate(fixed_scheme(L), 0, Provenance::Seeded);
        evaluate(uniform_scheme(L, cfg.zoo), 0, Provenance::Seeded);
        for (std::size_t i = 0; i < cfg.n_random; ++i)
            evaluate(random_scheme(L, m, rng), 0, Provenance::Random);
    }

    std::vector<ScoredScheme> population = topk(trace.evaluations, cfg.population);
    auto record_generation = [&](std::size_t g) {
        GenerationRecord rec;
        rec.generation = g;
        rec.best_fitness = population.front().fitness;
        for (const ScoredScheme& s : population) rec.population_fitness.push_back(s.fitness);
        rec.evaluations = trace.evaluations.size();
        trace.generations.push_back(std::move(rec));
    };
    record_generation(0);

    for (std::size_t g = 1; g <= cfg.iterations; ++g) {
        std::vector<ScoredScheme> candidates = population;
        for (std::size_t j = 0; j < cfg.n_mutation; ++j) {
            const ScoredScheme& parent = population[rng.uniform_below(population.size())];
            candidates.push_back(
                evaluate(mutate(parent.scheme, m, cfg.mutation_prob, rng), g,
                         Provenance::Mutation));
        }
        for (std::size_t j = 0; j < cfg.n_crossover; ++j) {
            const std::size_t i1 = rng.uniform_below(population.size());
            std::size_t i2 = rng.uniform_below(population.size() - 1);
            if (i2 >= i1) ++i2;
            candidates.push_back(
                evaluate(crossover(population[i1].scheme, population[i2].scheme, rng), g,
                         Provenance::Crossover));
        }
        population = topk(std::move(candidates), cfg.population);
        record_generation(g);
    }

    trace.best = population.front();
    return {trace.best, trace};
}

ScoredScheme exhaustive_oracle(std::size_t L, std::size_t m, const FitnessFn& fitness) {
    if (L < 1) throw std::invalid_argument("scheme length must be at least 1");
    if (m < 1) throw std::invalid_argument("zoo size must be at least 1");
    constexpr std::size_t kLimit = 100000;
    if (scheme_space_size(L, m, kLimit + 1) > kLimit)
        throw std::invalid_argument("scheme space exceeds " + std::to_string(kLimit));
    SchemeVector s;
    s.entries.assign(L, 0);
    ScoredScheme best;
    bool first = true;
    std::size_t order = 0;
    do {
        const double f = fitness(s);
        if (first || f > best.fitness) {
            best.scheme = s;
            best.fitness = f;
            best.order = order;
            first = false;
        }
        ++order;
    } while (m >= 2 && next_scheme(s, m));
    best.generation = 0;
    best.provenance = Provenance::Random;
    return best;
}

std::string format_scored(const ScoredScheme& s) {
    std::ostringstream os;
    os << "order=" << s.order << " gen=" << s.generation
       << " prov=" << to_string(s.provenance)
       << " scheme=" << format_scheme_entries(s.scheme) << " fitness=" << dstr(s.fitness);
    return os.str();
}

ScoredScheme parse_scored(const std::string& line) {
    ScoredScheme s;
    bool have_scheme = false;
    for (const std::string& tok : split(trim(line), ' ')) {
        if (tok.empty()) continue;
        const std::size_t eq = tok.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("bad trace field '" + tok + "'");
        const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
        if (key == "order") s.order = parse_size(value);
        else if (key == "gen") s.generation = parse_size(value);
        else if (key == "prov") s.provenance = parse_provenance(value);
        else if (key == "scheme") {
            s.scheme = parse_scheme_entries(value);
            have_scheme = true;
        } else if (key == "fitness") s.fitness = parse_double(value);
        else throw std::invalid_argument("unknown trace field '" + key + "'");
    }
    if (!have_scheme) throw std::invalid_argument("trace line missing scheme: '" + line + "'");
    return s;
}

std::string format_trace(const SearchTrace& t) {
    std::ostringstream os;
    os << "trace-v1\n";
    for (const ScoredScheme& s : t.evaluations) os << "eval " << format_scored(s) << "\n";
    for (const GenerationRecord& g : t.generations) {
        os << "gen index=" << g.generation << " best=" << dstr(g.best_fitness)
           << " evals=" << g.evaluations << " population=";
        for (std::size_t i = 0; i < g.population_fitness.size(); ++i) {
            if (i) os << ",";
            os << dstr(g.population_fitness[i]);
        }
        os << "\n";
    }
    os << "best " << format_scored(t.best) << "\n";
    return os.str();
}

SearchTrace parse_trace(const std::string& text) {
    SearchTrace t;
    std::istringstream is(text);
    std::string line;
    bool saw_header = false, saw_best = false;
    while (std::getline(is, line)) {
        std::string_view tl = trim(line);
        if (tl.empty()) continue;
        if (!saw_header) {
            if (tl != "trace-v1")
                throw std::invalid_argument("unsupported trace header '" + std::string(tl) + "'");
            saw_header = true;
            continue;
        }
        const std::size_t sp = tl.find(' ');
        const std::string word(tl.substr(0, sp));
        const std::string rest(sp == std::string_view::npos ? "" : tl.substr(sp + 1));
        if (word == "eval") {
            t.evaluations.push_back(parse_scored(rest));
        } else if (word == "gen") {
            GenerationRecord g;
            for (const std::string& tok : split(rest, ' ')) {
                if (tok.empty()) continue;
                const std::size_t eq = tok.find('=');
                if (eq == std::string::npos)
                    throw std::invalid_argument("bad trace field '" + tok + "'");
                const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
                if (key == "index") g.generation = parse_size(value);
                else if (key == "best") g.best_fitness = parse_double(value);
                else if (key == "evals") g.evaluations = parse_size(value);
                else if (key == "population") {
                    for (const std::string& f : split(value, ','))
                        g.population_fitness.push_back(parse_double(f));
                } else throw std::invalid_argument("unknown trace field '" + key + "'");
            }
            t.generations.push_back(std::move(g));
        } else if (word == "best") {
            t.best = parse_scored(rest);
            saw_best = true;
        } else {
            throw std::invalid_argument("unknown trace record '" + word + "'");
        }
    }
    if (!saw_header) throw std::invalid_argument("empty trace");
    if (!saw_best && !t.evaluations.empty()) {
        // partial trace from an aborted run: best-so-far among evaluations
        t.best = topk(t.evaluations, 1).front();
    }
    return t;
}

FitnessMemo memo_from_trace(const SearchTrace& t) {
    FitnessMemo memo;
    for (const ScoredScheme& s : t.evaluations) memo.emplace(s.scheme.entries, s.fitness);
    return memo;
}

}  // namespace ptransfer
