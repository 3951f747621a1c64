#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "ptransfer/tensor.hpp"

namespace ptransfer {

enum class LayerKind { Dense, Conv2D, ReLU, MaxPool, Flatten };

std::string to_string(LayerKind k);

// One backbone layer. Dense and Conv2D are the parameterized kinds; only
// those occupy a slot in the fine-tuning scheme. in_shape/out_shape are the
// per-example shapes, resolved when the layer chain is built.
struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t in = 0, out = 0;                       // Dense
    std::size_t in_c = 0, in_h = 0, in_w = 0;          // Conv2D input planes
    std::size_t out_c = 0, kh = 0, kw = 0, stride = 1; // Conv2D kernel
    std::vector<std::size_t> in_shape, out_shape;

    bool parameterized() const {
        return kind == LayerKind::Dense || kind == LayerKind::Conv2D;
    }
    bool operator==(const LayerSpec& o) const;
};

LayerSpec dense_spec(std::size_t in, std::size_t out);
LayerSpec conv2d_spec(std::size_t in_c, std::size_t in_h, std::size_t in_w,
                      std::size_t out_c, std::size_t kh, std::size_t kw,
                      std::size_t stride = 1);
LayerSpec relu_spec();
LayerSpec maxpool_spec();   // fixed 2x2 window, stride 2
LayerSpec flatten_spec();

std::string to_string(const LayerSpec& spec);          // e.g. "dense:16:32"
LayerSpec parse_layer_spec(const std::string& text);
std::vector<LayerSpec> parse_layer_list(const std::string& csv);
std::string format_layer_list(const std::vector<LayerSpec>& specs);

// Validates the chain and fills in_shape/out_shape for every layer.
std::vector<LayerSpec> resolve_layer_chain(std::vector<LayerSpec> specs);

enum class HeadKind { None, Softmax, Cosine, Prototype };

std::string to_string(HeadKind k);
HeadKind parse_head_kind(const std::string& text);

// Linear classifier over base classes, used during pre-training only.
struct SoftmaxHead {
    Tensor weight;  // [emb, classes]
    Tensor bias;    // [classes]
};

// Scaled cosine-similarity classifier: score_c = scale * cos(e, w_c).
struct CosineHead {
    Tensor weights;      // [ways, emb]
    double scale = 10.0;
};

// Nearest-prototype classifier: score_c = -|e - p_c|^2.
struct PrototypeHead {
    Tensor prototypes;  // [ways, emb]
};

using Head = std::variant<std::monostate, SoftmaxHead, CosineHead, PrototypeHead>;

HeadKind head_kind(const Head& h);

struct LayerParams {
    Tensor weight;
    Tensor bias;
};

// Counts inputs that forced a degenerate cosine (zero-norm embedding or
// weight, where the score is defined as 0 instead of NaN).
struct DegenerateCounter {
    std::size_t zero_norm_cosine = 0;
};

struct Network {
    std::vector<LayerSpec> layers;
    std::vector<LayerParams> params;  // one entry per parameterized layer
    Head head;

    std::size_t scheme_length() const { return params.size(); }
    std::size_t embedding_dim() const;
    // index into `layers` of the i-th parameterized layer
    std::size_t param_layer_index(std::size_t i) const;
};

// He-uniform weights, zero biases, seeded.
Network make_network(std::vector<LayerSpec> specs, std::uint64_t init_seed);

struct Gradients {
    std::vector<LayerParams> layers;  // shape-congruent with Network::params
    Tensor head_weight;               // Softmax/Cosine heads
    Tensor head_bias;                 // Softmax head only
};

Gradients zero_gradients(const Network& net);

// Backbone embeddings for a batch shaped [B, d] (or [B, ...] matching the
// first layer). Output is flattened to [B, emb].
Tensor embed(const Network& net, const Tensor& batch);

// Head scores when a head is attached, else embeddings.
Tensor forward(const Network& net, const Tensor& batch,
               DegenerateCounter* degenerate = nullptr);

// Mean softmax cross-entropy over the attached head's scores plus exact
// analytic gradients for every backbone parameter and any head parameters.
// For a Prototype head the prototypes are recomputed from this batch.
std::pair<double, Gradients> loss_and_gradients(const Network& net, const Tensor& batch,
                                                const std::vector<std::size_t>& labels,
                                                DegenerateCounter* degenerate = nullptr);

// SGD step with one learning rate per backbone layer plus a head rate.
// Layers with rate 0 are skipped outright, so their parameters stay
// bit-identical.
Network apply_update(const Network& net, const Gradients& g,
                     const std::vector<double>& per_layer_lr, double head_lr);

Tensor cosine_scores(const CosineHead& head, const Tensor& embeddings,
                     DegenerateCounter* degenerate = nullptr);

// prototype_scores builds prototypes as class-wise means of the support
// embeddings, then scores queries by negative squared distance.
Tensor class_prototypes(const Tensor& support_embeddings,
                        const std::vector<std::size_t>& support_labels,
                        std::size_t n_classes);
Tensor prototype_scores(const Tensor& prototypes, const Tensor& query_embeddings);

struct AdamState {
    std::vector<LayerParams> m_layers, v_layers;
    Tensor m_head_weight, v_head_weight;
    Tensor m_head_bias, v_head_bias;
    std::size_t step = 0;
};

AdamState make_adam_state(const Network& net);

// Standard Adam with bias correction; updates backbone and head parameters.
Network adam_step(const Network& net, const Gradients& g, AdamState& state, double lr,
                  double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Replaces a layer's weight with a seeded rank-1 matrix scaled by `scale` and
// zeroes its bias. Used to build benchmarks where frozen transfer fails.
void corrupt_layer(Network& net, std::size_t param_layer, double scale, std::uint64_t seed);

std::size_t argmax_row(const Tensor& scores, std::size_t row);

}  // namespace ptransfer
