#include "ptransfer/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ptransfer/rng.hpp"
#include "ptransfer/text.hpp"

namespace ptransfer {

void attach_softmax_head(Network& net, std::size_t n_classes, std::uint64_t seed) {
    const std::size_t emb = net.embedding_dim();
    SoftmaxHead h;
    h.weight = Tensor({emb, n_classes});
    h.bias = Tensor({n_classes});
    Rng rng(seed);
    const double limit = std::sqrt(6.0 / static_cast<double>(emb));
    for (double& w : h.weight.data) w = (2.0 * rng.uniform01() - 1.0) * limit;
    net.head = std::move(h);
}

namespace {

Tensor gather_points(const LabeledDataset& ds, const std::vector<std::size_t>& examples) {
    Tensor out({examples.size(), ds.dim()});
    for (std::size_t i = 0; i < examples.size(); ++i)
        std::copy(ds.point(examples[i]), ds.point(examples[i]) + ds.dim(),
                  out.data.data() + i * ds.dim());
    return out;
}

double split_accuracy(const Network& net, const Tensor& points,
                      const std::vector<std::size_t>& labels) {
    Tensor scores = forward(net, points);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        correct += argmax_row(scores, i) == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

Network pretrain_base(Network net, const LabeledDataset& ds, std::size_t epochs,
                      std::size_t batch, double adam_lr, std::uint64_t seed,
                      std::ostream* log) {
    if (batch == 0) throw std::invalid_argument("batch size must be positive");
    if (head_kind(net.head) != HeadKind::Softmax)
        throw std::invalid_argument("pre-training expects a softmax head");
    std::vector<std::size_t> base_examples;
    for (std::size_t e = 0; e < ds.n_examples(); ++e)
        if (ds.class_split[ds.labels[e]] == Split::Base) base_examples.push_back(e);
    if (base_examples.empty()) throw std::invalid_argument("dataset has no base examples");

    const std::size_t n_head_classes = std::get<SoftmaxHead>(net.head).weight.shape[1];
    for (std::size_t e : base_examples)
        if (ds.labels[e] >= n_head_classes)
            throw std::invalid_argument("base class " + std::to_string(ds.labels[e]) +
                                        " outside head of " +
                                        std::to_string(n_head_classes) + " classes");

    AdamState state = make_adam_state(net);
    Rng rng(seed);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(base_examples);
        std::vector<double> batch_losses;
        for (std::size_t start = 0; start < base_examples.size(); start += batch) {
            const std::size_t end = std::min(start + batch, base_examples.size());
            std::vector<std::size_t> idx(base_examples.begin() + start,
                                         base_examples.begin() + end);
            Tensor points = gather_points(ds, idx);
            std::vector<std::size_t> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = ds.labels[idx[i]];
            auto [loss, g] = loss_and_gradients(net, points, labels);
            if (!std::isfinite(loss))
                throw std::runtime_error("pre-training diverged at epoch " +
                                         std::to_string(epoch) + " (loss not finite)");
            net = adam_step(net, g, state, adam_lr);
            batch_losses.push_back(loss);
        }
        if (log) {
            Tensor all = gather_points(ds, base_examples);
            std::vector<std::size_t> labels(base_examples.size());
            for (std::size_t i = 0; i < base_examples.size(); ++i)
                labels[i] = ds.labels[base_examples[i]];
            *log << "epoch " << epoch << " loss=" << dstr(pairwise_mean(batch_losses))
                 << " acc=" << dstr(split_accuracy(net, all, labels)) << "\n";
        }
    }
    net.head = std::monostate{};
    return net;
}

namespace {

CosineHead init_cosine_head(const Network& backbone, const Episode& ep, double scale) {
    Tensor semb = embed(backbone, ep.support_points);
    Tensor means = class_prototypes(semb, ep.support_labels, ep.n_way);
    const std::size_t emb = means.shape[1];
    for (std::size_t c = 0; c < ep.n_way; ++c) {
        double* w = means.data.data() + c * emb;
        double n2 = 0.0;
        for (std::size_t i = 0; i < emb; ++i) n2 += w[i] * w[i];
        const double n = std::sqrt(n2);
        if (n == 0.0) continue;  // kept at zero; scoring flags it as degenerate
        for (std::size_t i = 0; i < emb; ++i) w[i] /= n;
    }
    CosineHead h;
    h.weights = std::move(means);
    h.scale = scale;
    return h;
}

}  // namespace

Network finetune_network(const Network& base, const SchemeVector& scheme,
                         const LrZoo& zoo, const Episode& ep,
                         const FinetuneBudget& budget, HeadKind head,
                         double cosine_scale, DegenerateCounter* degenerate) {
    const std::vector<double> rates = scheme_rates(scheme, zoo, base.scheme_length());
    if (head != HeadKind::Cosine && head != HeadKind::Prototype)
        throw std::invalid_argument("fine-tuning head must be cosine or prototype");

    Network net = base;
    if (head == HeadKind::Cosine) {
        net.head = init_cosine_head(base, ep, cosine_scale);
    } else {
        net.head = PrototypeHead{Tensor({ep.n_way, base.embedding_dim()})};
    }

    for (std::size_t it = 0; it < budget.iterations; ++it) {
        auto [loss, g] = loss_and_gradients(net, ep.support_points, ep.support_labels,
                                            degenerate);
        (void)loss;
        net = apply_update(net, g, rates, budget.head_lr);
    }
    return net;
}

FinetuneResult mini_finetune(const Network& base, const SchemeVector& scheme,
                             const LrZoo& zoo, const Episode& ep,
                             const FinetuneBudget& budget, HeadKind head,
                             double cosine_scale) {
    DegenerateCounter counter;
    Network net =
        finetune_network(base, scheme, zoo, ep, budget, head, cosine_scale, &counter);
    auto [final_loss, g_unused] =
        loss_and_gradients(net, ep.support_points, ep.support_labels, &counter);
    (void)g_unused;

    std::size_t correct = 0;
    if (head == HeadKind::Cosine) {
        Tensor scores = forward(net, ep.query_points, &counter);
        for (std::size_t i = 0; i < ep.query_labels.size(); ++i)
            correct += argmax_row(scores, i) == ep.query_labels[i];
    } else {
        Tensor semb = embed(net, ep.support_points);
        Tensor protos = class_prototypes(semb, ep.support_labels, ep.n_way);
        Tensor qemb = embed(net, ep.query_points);
        Tensor scores = prototype_scores(protos, qemb);
        for (std::size_t i = 0; i < ep.query_labels.size(); ++i)
            correct += argmax_row(scores, i) == ep.query_labels[i];
    }

    FinetuneResult r;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(ep.query_labels.size());
    r.support_loss = final_loss;
    r.degenerate_count = counter.zero_norm_cosine;
    return r;
}

double sample_std(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
    if (*mn == *mx) return 0.0;
    const double mean = pairwise_mean(xs);
    std::vector<double> sq(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double d = xs[i] - mean;
        sq[i] = d * d;
    }
    return std::sqrt(pairwise_sum(sq) / static_cast<double>(xs.size() - 1));
}

double ci95_halfwidth_of(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    return 1.96 * sample_std(xs) / std::sqrt(static_cast<double>(xs.size()));
}

EvalReport make_report(SchemeVector scheme, LrZoo zoo, std::uint64_t seed,
                       std::vector<double> per_episode, std::size_t degenerate_count) {
    if (per_episode.empty()) throw std::invalid_argument("report needs at least one episode");
    EvalReport r;
    r.scheme = std::move(scheme);
    r.zoo = std::move(zoo);
    r.seed = seed;
    r.n_episodes = per_episode.size();
    r.mean_accuracy = pairwise_mean(per_episode);
    r.ci95_halfwidth = ci95_halfwidth_of(per_episode);
    r.per_episode = std::move(per_episode);
    r.degenerate_count = degenerate_count;
    return r;
}

EvalReport evaluate_scheme(const Network& base, const SchemeVector& scheme,
                           const LrZoo& zoo, const LabeledDataset& ds, Split split,
                           std::size_t n_way, std::size_t k_shot, std::size_t n_query,
                           std::size_t n_episodes, const FinetuneBudget& budget,
                           HeadKind head, std::uint64_t seed, std::size_t workers,
                           double cosine_scale) {
    if (n_episodes == 0) throw std::invalid_argument("n_episodes must be positive");
    std::vector<double> accuracies(n_episodes);
    std::vector<std::size_t> degenerate(n_episodes);

    auto run_episode = [&](std::size_t i) {
        Rng rng(seed ^ static_cast<std::uint64_t>(i));
        Episode ep = sample_episode(ds, split, n_way, k_shot, n_query, rng);
        FinetuneResult res = mini_finetune(base, scheme, zoo, ep, budget, head,
                                           cosine_scale);
        accuracies[i] = res.accuracy;
        degenerate[i] = res.degenerate_count;
    };

    if (workers <= 1) {
        for (std::size_t i = 0; i < n_episodes; ++i) run_episode(i);
    } else {
        const std::size_t n_threads = std::min(workers, n_episodes);
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < n_episodes; i += n_threads) run_episode(i);
            });
        for (std::thread& th : pool) th.join();
    }

    std::size_t total_degenerate = 0;
    for (std::size_t d : degenerate) total_degenerate += d;
    return make_report(scheme, zoo, seed, std::move(accuracies), total_degenerate);
}

std::string eval_record_line(const EvalReport& r) {
    std::ostringstream os;
    os << "eval scheme=" << format_scheme_entries(r.scheme)
       << " zoo=" << format_zoo(r.zoo) << " seed=" << r.seed
       << " episodes=" << r.n_episodes << " mean=" << dstr(r.mean_accuracy)
       << " halfwidth=" << dstr(r.ci95_halfwidth)
       << " degenerate=" << r.degenerate_count << " per=";
    for (std::size_t i = 0; i < r.per_episode.size(); ++i) {
        if (i) os << ",";
        os << dstr(r.per_episode[i]);
    }
    return os.str();
}

EvalReport parse_eval_record(const std::string& line) {
    const auto tokens = split(trim(line), ' ');
    if (tokens.empty() || tokens[0] != "eval")
        throw std::invalid_argument("not an eval record: '" + line + "'");
    EvalReport r;
    bool have_scheme = false, have_zoo = false, have_per = false;
    double mean = 0.0, halfwidth = 0.0;
    std::size_t episodes = 0;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        const auto& tok = tokens[i];
        const std::size_t eq = tok.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("bad record field '" + tok + "'");
        const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
        if (key == "scheme") {
            r.scheme = parse_scheme_entries(value);
            have_scheme = true;
        } else if (key == "zoo") {
            r.zoo = parse_zoo(value);
            have_zoo = true;
        } else if (key == "seed") r.seed = parse_u64(value);
        else if (key == "episodes") episodes = parse_size(value);
        else if (key == "mean") mean = parse_double(value);
        else if (key == "halfwidth") halfwidth = parse_double(value);
        else if (key == "degenerate") r.degenerate_count = parse_size(value);
        else if (key == "per") {
            for (const std::string& f : split(value, ','))
                r.per_episode.push_back(parse_double(f));
            have_per = true;
        } else throw std::invalid_argument("unknown record field '" + key + "'");
    }
    if (!have_scheme || !have_zoo || !have_per)
        throw std::invalid_argument("record missing scheme/zoo/per fields");
    if (episodes != r.per_episode.size())
        throw std::invalid_argument("record declares " + std::to_string(episodes) +
                                    " episodes, lists " +
                                    std::to_string(r.per_episode.size()));
    r.n_episodes = episodes;
    r.mean_accuracy = mean;
    r.ci95_halfwidth = halfwidth;
    return r;
}

}  // namespace ptransfer
