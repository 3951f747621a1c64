#include "ptransfer/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ptransfer/rng.hpp"

namespace ptransfer {

std::string to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2D: return "conv";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

bool LayerSpec::operator==(const LayerSpec& o) const {
    return kind == o.kind && in == o.in && out == o.out && in_c == o.in_c &&
           in_h == o.in_h && in_w == o.in_w && out_c == o.out_c && kh == o.kh &&
           kw == o.kw && stride == o.stride;
}

LayerSpec dense_spec(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in = in;
    s.out = out;
    return s;
}

LayerSpec conv2d_spec(std::size_t in_c, std::size_t in_h, std::size_t in_w,
                      std::size_t out_c, std::size_t kh, std::size_t kw,
                      std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::Conv2D;
    s.in_c = in_c;
    s.in_h = in_h;
    s.in_w = in_w;
    s.out_c = out_c;
    s.kh = kh;
    s.kw = kw;
    s.stride = stride;
    return s;
}

LayerSpec relu_spec() {
    LayerSpec s;
    s.kind = LayerKind::ReLU;
    return s;
}

LayerSpec maxpool_spec() {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    return s;
}

LayerSpec flatten_spec() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

std::string to_string(const LayerSpec& spec) {
    std::ostringstream os;
    switch (spec.kind) {
        case LayerKind::Dense:
            os << "dense:" << spec.in << ":" << spec.out;
            break;
        case LayerKind::Conv2D:
            os << "conv:" << spec.in_c << ":" << spec.in_h << ":" << spec.in_w << ":"
               << spec.out_c << ":" << spec.kh << ":" << spec.kw << ":" << spec.stride;
            break;
        default:
            os << to_string(spec.kind);
    }
    return os.str();
}

namespace {

std::vector<std::size_t> split_sizes(const std::string& text, std::size_t expect_min,
                                     std::size_t expect_max, const std::string& what) {
    std::vector<std::size_t> out;
    std::string cur;
    std::istringstream is(text);
    while (std::getline(is, cur, ':')) {
        if (cur.empty()) throw std::invalid_argument("empty field in layer spec '" + what + "'");
        std::size_t pos = 0;
        unsigned long long v = std::stoull(cur, &pos);
        if (pos != cur.size())
            throw std::invalid_argument("bad number '" + cur + "' in layer spec '" + what + "'");
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.size() < expect_min || out.size() > expect_max)
        throw std::invalid_argument("layer spec '" + what + "' has " +
                                    std::to_string(out.size()) + " numeric fields");
    return out;
}

}  // namespace

LayerSpec parse_layer_spec(const std::string& text) {
    if (text == "relu") return relu_spec();
    if (text == "maxpool") return maxpool_spec();
    if (text == "flatten") return flatten_spec();
    if (text.rfind("dense:", 0) == 0) {
        auto f = split_sizes(text.substr(6), 2, 2, text);
        if (f[0] == 0 || f[1] == 0)
            throw std::invalid_argument("dense layer dimensions must be positive: " + text);
        return dense_spec(f[0], f[1]);
    }
    if (text.rfind("conv:", 0) == 0) {
        auto f = split_sizes(text.substr(5), 6, 7, text);
        std::size_t stride = f.size() == 7 ? f[6] : 1;
        for (std::size_t i = 0; i < f.size(); ++i)
            if (f[i] == 0)
                throw std::invalid_argument("conv layer dimensions must be positive: " + text);
        return conv2d_spec(f[0], f[1], f[2], f[3], f[4], f[5], stride);
    }
    throw std::invalid_argument("unknown layer spec '" + text + "'");
}

std::vector<LayerSpec> parse_layer_list(const std::string& csv) {
    std::vector<LayerSpec> out;
    std::string cur;
    std::istringstream is(csv);
    while (std::getline(is, cur, ',')) {
        // trim spaces
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t");
        if (b == std::string::npos)
            throw std::invalid_argument("empty entry in layer list");
        out.push_back(parse_layer_spec(cur.substr(b, e - b + 1)));
    }
    if (out.empty()) throw std::invalid_argument("layer list is empty");
    return out;
}

std::string format_layer_list(const std::vector<LayerSpec>& specs) {
    std::string out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (i) out += ",";
        out += to_string(specs[i]);
    }
    return out;
}

std::vector<LayerSpec> resolve_layer_chain(std::vector<LayerSpec> specs) {
    if (specs.empty()) throw std::invalid_argument("network needs at least one layer");
    std::vector<std::size_t> prev;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        LayerSpec& s = specs[i];
        switch (s.kind) {
            case LayerKind::Dense: {
                s.in_shape = {s.in};
                if (i > 0 && prev != s.in_shape)
                    throw std::invalid_argument(
                        "layer " + std::to_string(i) + " (dense) expects input " +
                        shape_str(s.in_shape) + " but layer " + std::to_string(i - 1) +
                        " produces " + shape_str(prev));
                s.out_shape = {s.out};
                break;
            }
            case LayerKind::Conv2D: {
                s.in_shape = {s.in_c, s.in_h, s.in_w};
                if (i > 0 && prev != s.in_shape)
                    throw std::invalid_argument(
                        "layer " + std::to_string(i) + " (conv) expects input " +
                        shape_str(s.in_shape) + " but layer " + std::to_string(i - 1) +
                        " produces " + shape_str(prev));
                if (s.kh > s.in_h || s.kw > s.in_w)
                    throw std::invalid_argument("layer " + std::to_string(i) +
                                                " (conv) kernel larger than input");
                const std::size_t oh = (s.in_h - s.kh) / s.stride + 1;
                const std::size_t ow = (s.in_w - s.kw) / s.stride + 1;
                s.out_shape = {s.out_c, oh, ow};
                break;
            }
            case LayerKind::ReLU: {
                if (i == 0) throw std::invalid_argument("relu cannot be the first layer");
                s.in_shape = prev;
                s.out_shape = prev;
                break;
            }
            case LayerKind::MaxPool: {
                if (i == 0) throw std::invalid_argument("maxpool cannot be the first layer");
                if (prev.size() != 3)
                    throw std::invalid_argument("layer " + std::to_string(i) +
                                                " (maxpool) needs a [c,h,w] input, got " +
                                                shape_str(prev));
                if (prev[1] < 2 || prev[2] < 2)
                    throw std::invalid_argument("layer " + std::to_string(i) +
                                                " (maxpool) input too small: " + shape_str(prev));
                s.in_shape = prev;
                s.out_shape = {prev[0], prev[1] / 2, prev[2] / 2};
                break;
            }
            case LayerKind::Flatten: {
                if (i == 0) throw std::invalid_argument("flatten cannot be the first layer");
                s.in_shape = prev;
                s.out_shape = {Tensor::count(prev)};
                break;
            }
        }
        prev = s.out_shape;
    }
    return specs;
}

std::string to_string(HeadKind k) {
    switch (k) {
        case HeadKind::None: return "none";
        case HeadKind::Softmax: return "softmax";
        case HeadKind::Cosine: return "cosine";
        case HeadKind::Prototype: return "prototype";
    }
    return "?";
}

HeadKind parse_head_kind(const std::string& text) {
    if (text == "none") return HeadKind::None;
    if (text == "softmax") return HeadKind::Softmax;
    if (text == "cosine") return HeadKind::Cosine;
    if (text == "prototype") return HeadKind::Prototype;
    throw std::invalid_argument("unknown head kind '" + text + "'");
}

HeadKind head_kind(const Head& h) {
    if (std::holds_alternative<SoftmaxHead>(h)) return HeadKind::Softmax;
    if (std::holds_alternative<CosineHead>(h)) return HeadKind::Cosine;
    if (std::holds_alternative<PrototypeHead>(h)) return HeadKind::Prototype;
    return HeadKind::None;
}

std::size_t Network::embedding_dim() const {
    if (layers.empty()) throw std::logic_error("network has no layers");
    return Tensor::count(layers.back().out_shape);
}

std::size_t Network::param_layer_index(std::size_t i) const {
    std::size_t seen = 0;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        if (!layers[li].parameterized()) continue;
        if (seen == i) return li;
        ++seen;
    }
    throw std::out_of_range("parameterized layer index " + std::to_string(i) +
                            " out of range (L=" + std::to_string(seen) + ")");
}

Network make_network(std::vector<LayerSpec> specs, std::uint64_t init_seed) {
    Network net;
    net.layers = resolve_layer_chain(std::move(specs));
    Rng rng(init_seed);
    for (const LayerSpec& s : net.layers) {
        if (!s.parameterized()) continue;
        LayerParams p;
        if (s.kind == LayerKind::Dense) {
            p.weight = Tensor({s.in, s.out});
            p.bias = Tensor({s.out});
            const double limit = std::sqrt(6.0 / static_cast<double>(s.in));
            for (double& w : p.weight.data) w = (2.0 * rng.uniform01() - 1.0) * limit;
        } else {
            p.weight = Tensor({s.out_c, s.in_c, s.kh, s.kw});
            p.bias = Tensor({s.out_c});
            const double fan_in = static_cast<double>(s.in_c * s.kh * s.kw);
            const double limit = std::sqrt(6.0 / fan_in);
            for (double& w : p.weight.data) w = (2.0 * rng.uniform01() - 1.0) * limit;
        }
        net.params.push_back(std::move(p));
    }
    return net;
}

Gradients zero_gradients(const Network& net) {
    Gradients g;
    for (const LayerParams& p : net.params) {
        LayerParams z;
        z.weight = Tensor(p.weight.shape);
        z.bias = Tensor(p.bias.shape);
        g.layers.push_back(std::move(z));
    }
    if (const auto* sh = std::get_if<SoftmaxHead>(&net.head)) {
        g.head_weight = Tensor(sh->weight.shape);
        g.head_bias = Tensor(sh->bias.shape);
    } else if (const auto* ch = std::get_if<CosineHead>(&net.head)) {
        g.head_weight = Tensor(ch->weights.shape);
    }
    return g;
}

namespace {

std::size_t batch_of(const Tensor& t) {
    if (t.shape.empty()) throw std::invalid_argument("batch tensor needs a leading dimension");
    return t.shape[0];
}

std::size_t per_example_count(const Tensor& t) { return t.size() / batch_of(t); }

// ---- layer kernels ------------------------------------------------------

void dense_forward(const LayerSpec& s, const LayerParams& p, const Tensor& x, Tensor& y) {
    const std::size_t B = batch_of(x);
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = x.data.data() + b * s.in;
        double* yb = y.data.data() + b * s.out;
        for (std::size_t o = 0; o < s.out; ++o) {
            double acc = p.bias[o];
            for (std::size_t i = 0; i < s.in; ++i) acc += xb[i] * p.weight[i * s.out + o];
            yb[o] = acc;
        }
    }
}

void dense_backward(const LayerSpec& s, const LayerParams& p, const Tensor& x,
                    const Tensor& delta, LayerParams& grad, Tensor& dx) {
    const std::size_t B = batch_of(x);
    std::vector<Tensor> wleaves, bleaves;
    wleaves.reserve(B);
    bleaves.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = x.data.data() + b * s.in;
        const double* db = delta.data.data() + b * s.out;
        Tensor wl({s.in, s.out});
        for (std::size_t i = 0; i < s.in; ++i)
            for (std::size_t o = 0; o < s.out; ++o) wl[i * s.out + o] = xb[i] * db[o];
        wleaves.push_back(std::move(wl));
        Tensor bl({s.out});
        for (std::size_t o = 0; o < s.out; ++o) bl[o] = db[o];
        bleaves.push_back(std::move(bl));
        double* dxb = dx.data.data() + b * s.in;
        for (std::size_t i = 0; i < s.in; ++i) {
            double acc = 0.0;
            for (std::size_t o = 0; o < s.out; ++o) acc += db[o] * p.weight[i * s.out + o];
            dxb[i] = acc;
        }
    }
    grad.weight = pairwise_reduce(std::move(wleaves));
    grad.bias = pairwise_reduce(std::move(bleaves));
}

void conv_forward(const LayerSpec& s, const LayerParams& p, const Tensor& x, Tensor& y) {
    const std::size_t B = batch_of(x);
    const std::size_t oh = s.out_shape[1], ow = s.out_shape[2];
    const std::size_t in_plane = s.in_h * s.in_w;
    const std::size_t out_plane = oh * ow;
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = x.data.data() + b * s.in_c * in_plane;
        double* yb = y.data.data() + b * s.out_c * out_plane;
        for (std::size_t oc = 0; oc < s.out_c; ++oc) {
            const double* k_oc = p.weight.data.data() + oc * s.in_c * s.kh * s.kw;
            for (std::size_t r = 0; r < oh; ++r) {
                for (std::size_t c = 0; c < ow; ++c) {
                    double acc = p.bias[oc];
                    for (std::size_t ic = 0; ic < s.in_c; ++ic) {
                        const double* xp = xb + ic * in_plane;
                        const double* kp = k_oc + ic * s.kh * s.kw;
                        for (std::size_t i = 0; i < s.kh; ++i)
                            for (std::size_t j = 0; j < s.kw; ++j)
                                acc += xp[(r * s.stride + i) * s.in_w + c * s.stride + j] *
                                       kp[i * s.kw + j];
                    }
                    yb[oc * out_plane + r * ow + c] = acc;
                }
            }
        }
    }
}

void conv_backward(const LayerSpec& s, const LayerParams& p, const Tensor& x,
                   const Tensor& delta, LayerParams& grad, Tensor& dx) {
    const std::size_t B = batch_of(x);
    const std::size_t oh = s.out_shape[1], ow = s.out_shape[2];
    const std::size_t in_plane = s.in_h * s.in_w;
    const std::size_t out_plane = oh * ow;
    std::vector<Tensor> wleaves, bleaves;
    wleaves.reserve(B);
    bleaves.reserve(B);
    std::fill(dx.data.begin(), dx.data.end(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = x.data.data() + b * s.in_c * in_plane;
        const double* db = delta.data.data() + b * s.out_c * out_plane;
        double* dxb = dx.data.data() + b * s.in_c * in_plane;
        Tensor wl(p.weight.shape);
        Tensor bl(p.bias.shape);
        for (std::size_t oc = 0; oc < s.out_c; ++oc) {
            const double* d_oc = db + oc * out_plane;
            const double* k_oc = p.weight.data.data() + oc * s.in_c * s.kh * s.kw;
            double* wl_oc = wl.data.data() + oc * s.in_c * s.kh * s.kw;
            double bacc = 0.0;
            for (std::size_t r = 0; r < oh; ++r) {
                for (std::size_t c = 0; c < ow; ++c) {
                    const double d = d_oc[r * ow + c];
                    bacc += d;
                    for (std::size_t ic = 0; ic < s.in_c; ++ic) {
                        const double* xp = xb + ic * in_plane;
                        double* dxp = dxb + ic * in_plane;
                        double* wlp = wl_oc + ic * s.kh * s.kw;
                        const double* kp = k_oc + ic * s.kh * s.kw;
                        for (std::size_t i = 0; i < s.kh; ++i) {
                            for (std::size_t j = 0; j < s.kw; ++j) {
                                const std::size_t xi =
                                    (r * s.stride + i) * s.in_w + c * s.stride + j;
                                wlp[i * s.kw + j] += d * xp[xi];
                                dxp[xi] += d * kp[i * s.kw + j];
                            }
                        }
                    }
                }
            }
            bl[oc] = bacc;
        }
        wleaves.push_back(std::move(wl));
        bleaves.push_back(std::move(bl));
    }
    grad.weight = pairwise_reduce(std::move(wleaves));
    grad.bias = pairwise_reduce(std::move(bleaves));
}

void maxpool_forward(const LayerSpec& s, const Tensor& x, Tensor& y,
                     std::vector<std::size_t>& argmax) {
    const std::size_t B = batch_of(x);
    const std::size_t C = s.in_shape[0], H = s.in_shape[1], W = s.in_shape[2];
    const std::size_t OH = s.out_shape[1], OW = s.out_shape[2];
    argmax.assign(B * C * OH * OW, 0);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const double* xp = x.data.data() + (b * C + c) * H * W;
            double* yp = y.data.data() + (b * C + c) * OH * OW;
            std::size_t* ap = argmax.data() + (b * C + c) * OH * OW;
            for (std::size_t r = 0; r < OH; ++r) {
                for (std::size_t q = 0; q < OW; ++q) {
                    std::size_t best = (2 * r) * W + 2 * q;
                    double bv = xp[best];
                    // ties keep the first index in row-major scan order
                    for (std::size_t i = 0; i < 2; ++i) {
                        for (std::size_t j = 0; j < 2; ++j) {
                            const std::size_t idx = (2 * r + i) * W + 2 * q + j;
                            if (xp[idx] > bv) {
                                bv = xp[idx];
                                best = idx;
                            }
                        }
                    }
                    yp[r * OW + q] = bv;
                    ap[r * OW + q] = best;
                }
            }
        }
    }
}

// ---- head scoring -------------------------------------------------------

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

Tensor softmax_head_scores(const SoftmaxHead& h, const Tensor& emb) {
    const std::size_t B = batch_of(emb);
    const std::size_t E = h.weight.shape[0], C = h.weight.shape[1];
    Tensor scores({B, C});
    for (std::size_t b = 0; b < B; ++b) {
        const double* eb = emb.data.data() + b * E;
        for (std::size_t c = 0; c < C; ++c) {
            double acc = h.bias[c];
            for (std::size_t i = 0; i < E; ++i) acc += eb[i] * h.weight[i * C + c];
            scores[b * C + c] = acc;
        }
    }
    return scores;
}

// Per-sample softmax cross-entropy; fills unscaled dscores (p - onehot) and
// per-sample losses.
void softmax_ce(const Tensor& scores, const std::vector<std::size_t>& labels,
                std::vector<double>& losses, Tensor& dscores) {
    const std::size_t B = scores.shape[0], C = scores.shape[1];
    losses.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
        const double* sb = scores.data.data() + b * C;
        double* db = dscores.data.data() + b * C;
        double mx = sb[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, sb[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(sb[c] - mx);
        const double lse = mx + std::log(sum);
        losses[b] = lse - sb[labels[b]];
        for (std::size_t c = 0; c < C; ++c) {
            db[c] = std::exp(sb[c] - lse);
            if (c == labels[b]) db[c] -= 1.0;
        }
    }
}

}  // namespace

Tensor class_prototypes(const Tensor& support_embeddings,
                        const std::vector<std::size_t>& support_labels,
                        std::size_t n_classes) {
    const std::size_t B = batch_of(support_embeddings);
    const std::size_t E = per_example_count(support_embeddings);
    if (support_labels.size() != B)
        throw std::invalid_argument("label count does not match support batch");
    Tensor protos({n_classes, E});
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<Tensor> members;
        for (std::size_t b = 0; b < B; ++b) {
            if (support_labels[b] != c) continue;
            Tensor m({E});
            std::copy_n(support_embeddings.data.data() + b * E, E, m.data.begin());
            members.push_back(std::move(m));
        }
        if (members.empty())
            throw std::invalid_argument("class " + std::to_string(c) +
                                        " has no support examples");
        const double k = static_cast<double>(members.size());
        Tensor sum = pairwise_reduce(std::move(members));
        for (std::size_t i = 0; i < E; ++i) protos[c * E + i] = sum[i] / k;
    }
    return protos;
}

Tensor prototype_scores(const Tensor& prototypes, const Tensor& query_embeddings) {
    const std::size_t B = batch_of(query_embeddings);
    const std::size_t E = per_example_count(query_embeddings);
    const std::size_t C = prototypes.shape[0];
    if (prototypes.shape[1] != E)
        throw std::invalid_argument("prototype dimension " + std::to_string(prototypes.shape[1]) +
                                    " does not match embedding dimension " + std::to_string(E));
    Tensor scores({B, C});
    for (std::size_t b = 0; b < B; ++b) {
        const double* qb = query_embeddings.data.data() + b * E;
        for (std::size_t c = 0; c < C; ++c) {
            const double* pc = prototypes.data.data() + c * E;
            double acc = 0.0;
            for (std::size_t i = 0; i < E; ++i) {
                const double d = qb[i] - pc[i];
                acc += d * d;
            }
            scores[b * C + c] = -acc;
        }
    }
    return scores;
}

Tensor cosine_scores(const CosineHead& head, const Tensor& embeddings,
                     DegenerateCounter* degenerate) {
    const std::size_t B = batch_of(embeddings);
    const std::size_t E = per_example_count(embeddings);
    const std::size_t C = head.weights.shape[0];
    if (head.weights.shape[1] != E)
        throw std::invalid_argument("cosine head dimension " +
                                    std::to_string(head.weights.shape[1]) +
                                    " does not match embedding dimension " + std::to_string(E));
    Tensor scores({B, C});
    for (std::size_t b = 0; b < B; ++b) {
        const double* eb = embeddings.data.data() + b * E;
        const double en = std::sqrt(dot(eb, eb, E));
        for (std::size_t c = 0; c < C; ++c) {
            const double* wc = head.weights.data.data() + c * E;
            const double wn = std::sqrt(dot(wc, wc, E));
            if (en == 0.0 || wn == 0.0) {
                // zero-norm input: cosine is defined as 0, flagged
                scores[b * C + c] = 0.0;
                if (degenerate) ++degenerate->zero_norm_cosine;
            } else {
                scores[b * C + c] = head.scale * dot(eb, wc, E) / (en * wn);
            }
        }
    }
    return scores;
}

namespace {

// Activations of every layer: acts[0] is the (reshaped) input, acts[i+1] the
// output of layer i. MaxPool argmax caches are kept for the backward pass.
struct ForwardCache {
    std::vector<Tensor> acts;
    std::vector<std::vector<std::size_t>> pool_argmax;
};

Tensor reshape_batch(const Tensor& batch, const std::vector<std::size_t>& per_example) {
    const std::size_t B = batch_of(batch);
    const std::size_t want = Tensor::count(per_example);
    if (per_example_count(batch) != want)
        throw std::invalid_argument("layer 0 expects input of " + std::to_string(want) +
                                    " values per example, got " +
                                    std::to_string(per_example_count(batch)) + " (batch shape " +
                                    shape_str(batch.shape) + ")");
    std::vector<std::size_t> shape = {B};
    shape.insert(shape.end(), per_example.begin(), per_example.end());
    return Tensor(shape, batch.data);
}

ForwardCache run_backbone(const Network& net, const Tensor& batch) {
    ForwardCache cache;
    cache.pool_argmax.resize(net.layers.size());
    cache.acts.push_back(reshape_batch(batch, net.layers.front().in_shape));
    std::size_t pi = 0;
    const std::size_t B = batch_of(batch);
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& s = net.layers[li];
        const Tensor& x = cache.acts.back();
        std::vector<std::size_t> expect = {B};
        expect.insert(expect.end(), s.in_shape.begin(), s.in_shape.end());
        if (x.shape != expect)
            throw std::invalid_argument("layer " + std::to_string(li) + " (" +
                                        to_string(s.kind) + ") expects input " +
                                        shape_str(expect) + ", got " + shape_str(x.shape));
        std::vector<std::size_t> oshape = {B};
        oshape.insert(oshape.end(), s.out_shape.begin(), s.out_shape.end());
        Tensor y(oshape);
        switch (s.kind) {
            case LayerKind::Dense:
                dense_forward(s, net.params[pi], x, y);
                ++pi;
                break;
            case LayerKind::Conv2D:
                conv_forward(s, net.params[pi], x, y);
                ++pi;
                break;
            case LayerKind::ReLU:
                for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
                break;
            case LayerKind::MaxPool:
                maxpool_forward(s, x, y, cache.pool_argmax[li]);
                break;
            case LayerKind::Flatten:
                y.data = x.data;
                break;
        }
        cache.acts.push_back(std::move(y));
    }
    return cache;
}

Tensor flatten_embeddings(const Network& net, const Tensor& last) {
    const std::size_t B = last.shape[0];
    return Tensor({B, net.embedding_dim()}, last.data);
}

// Propagates unscaled deltas through the backbone; fills g.layers with
// batch-summed parameter gradients (caller divides by B afterwards).
void backbone_backward(const Network& net, const ForwardCache& cache, Tensor delta,
                       Gradients& g) {
    std::size_t pi = net.params.size();
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const LayerSpec& s = net.layers[li];
        const Tensor& x = cache.acts[li];
        Tensor dx(x.shape);
        switch (s.kind) {
            case LayerKind::Dense:
                --pi;
                dense_backward(s, net.params[pi], x, delta, g.layers[pi], dx);
                break;
            case LayerKind::Conv2D:
                --pi;
                conv_backward(s, net.params[pi], x, delta, g.layers[pi], dx);
                break;
            case LayerKind::ReLU:
                for (std::size_t i = 0; i < x.size(); ++i)
                    dx[i] = x[i] > 0.0 ? delta[i] : 0.0;
                break;
            case LayerKind::MaxPool: {
                const auto& amax = cache.pool_argmax[li];
                const std::size_t C = s.in_shape[0];
                const std::size_t plane = s.in_shape[1] * s.in_shape[2];
                const std::size_t oplane = s.out_shape[1] * s.out_shape[2];
                const std::size_t B = x.shape[0];
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t c = 0; c < C; ++c) {
                        const double* dp = delta.data.data() + (b * C + c) * oplane;
                        double* dxp = dx.data.data() + (b * C + c) * plane;
                        const std::size_t* ap = amax.data() + (b * C + c) * oplane;
                        for (std::size_t o = 0; o < oplane; ++o) dxp[ap[o]] += dp[o];
                    }
                break;
            }
            case LayerKind::Flatten:
                dx.data = delta.data;
                break;
        }
        delta = std::move(dx);
    }
}

}  // namespace

Tensor embed(const Network& net, const Tensor& batch) {
    ForwardCache cache = run_backbone(net, batch);
    return flatten_embeddings(net, cache.acts.back());
}

Tensor forward(const Network& net, const Tensor& batch, DegenerateCounter* degenerate) {
    Tensor emb = embed(net, batch);
    switch (head_kind(net.head)) {
        case HeadKind::None:
            return emb;
        case HeadKind::Softmax:
            return softmax_head_scores(std::get<SoftmaxHead>(net.head), emb);
        case HeadKind::Cosine:
            return cosine_scores(std::get<CosineHead>(net.head), emb, degenerate);
        case HeadKind::Prototype:
            return prototype_scores(std::get<PrototypeHead>(net.head).prototypes, emb);
    }
    return emb;
}

std::pair<double, Gradients> loss_and_gradients(const Network& net, const Tensor& batch,
                                                const std::vector<std::size_t>& labels,
                                                DegenerateCounter* degenerate) {
    const std::size_t B = batch_of(batch);
    if (B == 0) throw std::invalid_argument("empty batch");
    if (labels.size() != B)
        throw std::invalid_argument("batch has " + std::to_string(B) + " examples but " +
                                    std::to_string(labels.size()) + " labels");

    ForwardCache cache = run_backbone(net, batch);
    Tensor emb = flatten_embeddings(net, cache.acts.back());
    const std::size_t E = net.embedding_dim();

    Gradients g = zero_gradients(net);
    std::vector<double> losses;
    Tensor demb({B, E});

    const HeadKind hk = head_kind(net.head);
    std::size_t n_classes = 0;
    switch (hk) {
        case HeadKind::None:
            throw std::invalid_argument("loss requires a classifier head");
        case HeadKind::Softmax: {
            const auto& h = std::get<SoftmaxHead>(net.head);
            n_classes = h.weight.shape[1];
            for (std::size_t b = 0; b < B; ++b)
                if (labels[b] >= n_classes)
                    throw std::invalid_argument("label " + std::to_string(labels[b]) +
                                                " out of range [0," +
                                                std::to_string(n_classes) + ")");
            Tensor scores = softmax_head_scores(h, emb);
            Tensor dscores({B, n_classes});
            softmax_ce(scores, labels, losses, dscores);
            // head gradients and embedding deltas
            std::vector<Tensor> wleaves, bleaves;
            wleaves.reserve(B);
            bleaves.reserve(B);
            for (std::size_t b = 0; b < B; ++b) {
                const double* eb = emb.data.data() + b * E;
                const double* db = dscores.data.data() + b * n_classes;
                Tensor wl({E, n_classes});
                for (std::size_t i = 0; i < E; ++i)
                    for (std::size_t c = 0; c < n_classes; ++c)
                        wl[i * n_classes + c] = eb[i] * db[c];
                wleaves.push_back(std::move(wl));
                Tensor bl({n_classes});
                std::copy_n(db, n_classes, bl.data.begin());
                bleaves.push_back(std::move(bl));
                double* de = demb.data.data() + b * E;
                for (std::size_t i = 0; i < E; ++i) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < n_classes; ++c)
                        acc += db[c] * h.weight[i * n_classes + c];
                    de[i] = acc;
                }
            }
            g.head_weight = pairwise_reduce(std::move(wleaves));
            g.head_bias = pairwise_reduce(std::move(bleaves));
            break;
        }
        case HeadKind::Cosine: {
            const auto& h = std::get<CosineHead>(net.head);
            n_classes = h.weights.shape[0];
            for (std::size_t b = 0; b < B; ++b)
                if (labels[b] >= n_classes)
                    throw std::invalid_argument("label " + std::to_string(labels[b]) +
                                                " out of range [0," +
                                                std::to_string(n_classes) + ")");
            Tensor scores = cosine_scores(h, emb, degenerate);
            Tensor dscores({B, n_classes});
            softmax_ce(scores, labels, losses, dscores);
            std::vector<Tensor> wleaves;
            wleaves.reserve(B);
            for (std::size_t b = 0; b < B; ++b) {
                const double* eb = emb.data.data() + b * E;
                const double* db = dscores.data.data() + b * n_classes;
                const double en = std::sqrt(dot(eb, eb, E));
                Tensor wl(h.weights.shape);
                double* de = demb.data.data() + b * E;
                for (std::size_t c = 0; c < n_classes; ++c) {
                    const double* wc = h.weights.data.data() + c * E;
                    const double wn = std::sqrt(dot(wc, wc, E));
                    if (en == 0.0 || wn == 0.0) continue;  // degenerate scores carry no gradient
                    const double cosv = dot(eb, wc, E) / (en * wn);
                    const double gs = db[c] * h.scale;
                    double* wlc = wl.data.data() + c * E;
                    for (std::size_t i = 0; i < E; ++i) {
                        de[i] += gs * (wc[i] / (en * wn) - cosv * eb[i] / (en * en));
                        wlc[i] += gs * (eb[i] / (en * wn) - cosv * wc[i] / (wn * wn));
                    }
                }
                wleaves.push_back(std::move(wl));
            }
            g.head_weight = pairwise_reduce(std::move(wleaves));
            break;
        }
        case HeadKind::Prototype: {
            // Episodic loss: prototypes are the class means of this batch, so
            // the gradient flows both through each example's own embedding and
            // through its contribution to its class prototype.
            n_classes = 0;
            for (std::size_t l : labels) n_classes = std::max(n_classes, l + 1);
            std::vector<std::size_t> class_count(n_classes, 0);
            for (std::size_t l : labels) ++class_count[l];
            for (std::size_t c = 0; c < n_classes; ++c)
                if (class_count[c] == 0)
                    throw std::invalid_argument("class " + std::to_string(c) +
                                                " has no examples in the batch");
            Tensor protos = class_prototypes(emb, labels, n_classes);
            Tensor scores = prototype_scores(protos, emb);
            Tensor dscores({B, n_classes});
            softmax_ce(scores, labels, losses, dscores);
            // dL/dp_c accumulated pairwise over the batch
            std::vector<Tensor> pleaves;
            pleaves.reserve(B);
            for (std::size_t b = 0; b < B; ++b) {
                const double* eb = emb.data.data() + b * E;
                const double* db = dscores.data.data() + b * n_classes;
                Tensor pl({n_classes, E});
                double* de = demb.data.data() + b * E;
                for (std::size_t c = 0; c < n_classes; ++c) {
                    const double* pc = protos.data.data() + c * E;
                    double* plc = pl.data.data() + c * E;
                    for (std::size_t i = 0; i < E; ++i) {
                        const double diff = eb[i] - pc[i];
                        de[i] += db[c] * (-2.0) * diff;
                        plc[i] = db[c] * 2.0 * diff;
                    }
                }
                pleaves.push_back(std::move(pl));
            }
            Tensor dprotos = pairwise_reduce(std::move(pleaves));
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t c = labels[b];
                double* de = demb.data.data() + b * E;
                const double* dpc = dprotos.data.data() + c * E;
                const double k = static_cast<double>(class_count[c]);
                for (std::size_t i = 0; i < E; ++i) de[i] += dpc[i] / k;
            }
            break;
        }
    }

    // reshape embedding deltas to the last layer's output and run the chain
    Tensor delta(cache.acts.back().shape, demb.data);
    backbone_backward(net, cache, std::move(delta), g);

    const double nb = static_cast<double>(B);
    for (LayerParams& lp : g.layers) {
        divide_in_place(lp.weight, nb);
        divide_in_place(lp.bias, nb);
    }
    if (!g.head_weight.data.empty()) divide_in_place(g.head_weight, nb);
    if (!g.head_bias.data.empty()) divide_in_place(g.head_bias, nb);

    return {pairwise_mean(losses), std::move(g)};
}

Network apply_update(const Network& net, const Gradients& g,
                     const std::vector<double>& per_layer_lr, double head_lr) {
    if (per_layer_lr.size() != net.params.size())
        throw std::invalid_argument("expected " + std::to_string(net.params.size()) +
                                    " per-layer rates, got " +
                                    std::to_string(per_layer_lr.size()));
    for (double lr : per_layer_lr)
        if (lr < 0.0) throw std::invalid_argument("negative learning rate");
    Network out = net;
    for (std::size_t i = 0; i < out.params.size(); ++i) {
        const double lr = per_layer_lr[i];
        if (lr == 0.0) continue;  // frozen layer: untouched, bit-identical
        LayerParams& p = out.params[i];
        const LayerParams& gp = g.layers[i];
        for (std::size_t j = 0; j < p.weight.size(); ++j) p.weight[j] -= lr * gp.weight[j];
        for (std::size_t j = 0; j < p.bias.size(); ++j) p.bias[j] -= lr * gp.bias[j];
    }
    if (head_lr != 0.0) {
        if (auto* sh = std::get_if<SoftmaxHead>(&out.head)) {
            for (std::size_t j = 0; j < sh->weight.size(); ++j)
                sh->weight[j] -= head_lr * g.head_weight[j];
            for (std::size_t j = 0; j < sh->bias.size(); ++j)
                sh->bias[j] -= head_lr * g.head_bias[j];
        } else if (auto* ch = std::get_if<CosineHead>(&out.head)) {
            for (std::size_t j = 0; j < ch->weights.size(); ++j)
                ch->weights[j] -= head_lr * g.head_weight[j];
        }
    }
    return out;
}

AdamState make_adam_state(const Network& net) {
    AdamState st;
    for (const LayerParams& p : net.params) {
        LayerParams m, v;
        m.weight = Tensor(p.weight.shape);
        m.bias = Tensor(p.bias.shape);
        v.weight = Tensor(p.weight.shape);
        v.bias = Tensor(p.bias.shape);
        st.m_layers.push_back(std::move(m));
        st.v_layers.push_back(std::move(v));
    }
    if (const auto* sh = std::get_if<SoftmaxHead>(&net.head)) {
        st.m_head_weight = Tensor(sh->weight.shape);
        st.v_head_weight = Tensor(sh->weight.shape);
        st.m_head_bias = Tensor(sh->bias.shape);
        st.v_head_bias = Tensor(sh->bias.shape);
    } else if (const auto* ch = std::get_if<CosineHead>(&net.head)) {
        st.m_head_weight = Tensor(ch->weights.shape);
        st.v_head_weight = Tensor(ch->weights.shape);
    }
    return st;
}

namespace {

void adam_tensor(Tensor& p, const Tensor& grad, Tensor& m, Tensor& v, double lr, double b1,
                 double b2, double eps, double bc1, double bc2) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace

Network adam_step(const Network& net, const Gradients& g, AdamState& state, double lr,
                  double beta1, double beta2, double eps) {
    Network out = net;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < out.params.size(); ++i) {
        adam_tensor(out.params[i].weight, g.layers[i].weight, state.m_layers[i].weight,
                    state.v_layers[i].weight, lr, beta1, beta2, eps, bc1, bc2);
        adam_tensor(out.params[i].bias, g.layers[i].bias, state.m_layers[i].bias,
                    state.v_layers[i].bias, lr, beta1, beta2, eps, bc1, bc2);
    }
    if (auto* sh = std::get_if<SoftmaxHead>(&out.head)) {
        adam_tensor(sh->weight, g.head_weight, state.m_head_weight, state.v_head_weight, lr,
                    beta1, beta2, eps, bc1, bc2);
        adam_tensor(sh->bias, g.head_bias, state.m_head_bias, state.v_head_bias, lr, beta1,
                    beta2, eps, bc1, bc2);
    } else if (auto* ch = std::get_if<CosineHead>(&out.head)) {
        adam_tensor(ch->weights, g.head_weight, state.m_head_weight, state.v_head_weight, lr,
                    beta1, beta2, eps, bc1, bc2);
    }
    return out;
}

void corrupt_layer(Network& net, std::size_t param_layer, double scale, std::uint64_t seed) {
    if (param_layer >= net.params.size())
        throw std::out_of_range("corrupt_layer: no parameterized layer " +
                                std::to_string(param_layer));
    LayerParams& p = net.params[param_layer];
    Rng rng(seed);
    // rank-1 weight: collapses the layer output onto a line, which destroys
    // class information while leaving gradients full-rank
    const std::size_t rows = p.weight.shape[0];
    std::size_t cols = 1;
    for (std::size_t d = 1; d < p.weight.shape.size(); ++d) cols *= p.weight.shape[d];
    std::vector<double> u(rows), v(cols);
    for (double& x : u) x = rng.normal();
    for (double& x : v) x = rng.normal();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) p.weight[r * cols + c] = scale * u[r] * v[c];
    std::fill(p.bias.data.begin(), p.bias.data.end(), 0.0);
}

std::size_t argmax_row(const Tensor& scores, std::size_t row) {
    const std::size_t C = scores.shape[1];
    const double* sb = scores.data.data() + row * C;
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
        if (sb[c] > sb[best]) best = c;  // ties keep the lowest class index
    return best;
}

}  // namespace ptransfer
