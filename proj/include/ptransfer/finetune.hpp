#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ptransfer/dataset.hpp"
#include "ptransfer/network.hpp"
#include "ptransfer/scheme.hpp"

namespace ptransfer {

// Fine-tuning runs full-support-batch SGD: every iteration takes one step on
// the whole support set.
struct FinetuneBudget {
    std::size_t iterations = 100;
    double head_lr = 0.01;

    bool operator==(const FinetuneBudget& o) const = default;
};

struct FinetuneResult {
    double accuracy = 0.0;      // fraction of query points classified correctly
    double support_loss = 0.0;  // support-set loss after the final update
    std::size_t degenerate_count = 0;
};

void attach_softmax_head(Network& net, std::size_t n_classes, std::uint64_t seed);

// Cross-entropy training on the Base split with Adam; per-epoch loss and
// base-split accuracy go to `log` when non-null. Returns the trained network
// with the softmax head detached. Throws if the loss stops being finite,
// naming the epoch.
Network pretrain_base(Network net, const LabeledDataset& ds, std::size_t epochs,
                      std::size_t batch, double adam_lr, std::uint64_t seed,
                      std::ostream* log = nullptr);

// Copies the base network, attaches the requested head, and fine-tunes on the
// episode's support set under the scheme's per-layer rates. The base network
// is never mutated. Cosine head weights start as normalized class-mean
// support embeddings; the prototype head recomputes prototypes from current
// embeddings every iteration. Returns the tuned copy.
Network finetune_network(const Network& base, const SchemeVector& scheme,
                         const LrZoo& zoo, const Episode& ep,
                         const FinetuneBudget& budget, HeadKind head,
                         double cosine_scale = 10.0,
                         DegenerateCounter* degenerate = nullptr);

// finetune_network plus query-set scoring.
FinetuneResult mini_finetune(const Network& base, const SchemeVector& scheme,
                             const LrZoo& zoo, const Episode& ep,
                             const FinetuneBudget& budget, HeadKind head,
                             double cosine_scale = 10.0);

struct EvalReport {
    SchemeVector scheme;
    LrZoo zoo;
    std::uint64_t seed = 0;
    std::size_t n_episodes = 0;
    double mean_accuracy = 0.0;
    double ci95_halfwidth = 0.0;
    std::vector<double> per_episode;
    std::size_t degenerate_count = 0;
};

// Sample standard deviation with n-1 denominator; exactly 0 when all values
// are equal or fewer than two are given.
double sample_std(std::span<const double> xs);
double ci95_halfwidth_of(std::span<const double> xs);

EvalReport make_report(SchemeVector scheme, LrZoo zoo, std::uint64_t seed,
                       std::vector<double> per_episode, std::size_t degenerate_count);

// Runs n_episodes independent episodes; episode i uses sampler seed
// (seed XOR i), so any worker count produces the identical report.
EvalReport evaluate_scheme(const Network& base, const SchemeVector& scheme,
                           const LrZoo& zoo, const LabeledDataset& ds, Split split,
                           std::size_t n_way, std::size_t k_shot, std::size_t n_query,
                           std::size_t n_episodes, const FinetuneBudget& budget,
                           HeadKind head, std::uint64_t seed, std::size_t workers = 1,
                           double cosine_scale = 10.0);

// One report per line in run logs.
std::string eval_record_line(const EvalReport& r);
EvalReport parse_eval_record(const std::string& line);

}  // namespace ptransfer
