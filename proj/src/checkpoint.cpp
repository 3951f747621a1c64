#include "ptransfer/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ptransfer {

namespace {

constexpr char kMagic[4] = {'P', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

void put_str(std::string& out, std::string_view s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s.data(), s.size());
}

void put_tensor(std::string& out, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put_u64(out, d);
    for (double v : t.data) put_f64(out, v);
}

struct Reader {
    std::string_view bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size())
            throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(bytes.substr(pos, n));
        pos += n;
        return s;
    }
    Tensor tensor() {
        const std::uint32_t ndim = u32();
        std::vector<std::size_t> shape(ndim);
        for (std::uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<std::size_t>(u64());
        const std::size_t n = Tensor::count(shape);
        std::vector<double> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = f64();
        return Tensor(std::move(shape), std::move(data));
    }
};

}  // namespace

std::string serialize_checkpoint(const Network& net, const std::string& config_text) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
    for (const LayerSpec& s : net.layers) put_str(out, to_string(s));
    const HeadKind hk = head_kind(net.head);
    put_u32(out, static_cast<std::uint32_t>(hk));
    put_str(out, config_text);
    put_u32(out, static_cast<std::uint32_t>(net.params.size()));
    for (const LayerParams& p : net.params) {
        put_tensor(out, p.weight);
        put_tensor(out, p.bias);
    }
    switch (hk) {
        case HeadKind::None:
            break;
        case HeadKind::Softmax: {
            const auto& h = std::get<SoftmaxHead>(net.head);
            put_tensor(out, h.weight);
            put_tensor(out, h.bias);
            break;
        }
        case HeadKind::Cosine: {
            const auto& h = std::get<CosineHead>(net.head);
            put_f64(out, h.scale);
            put_tensor(out, h.weights);
            break;
        }
        case HeadKind::Prototype: {
            put_tensor(out, std::get<PrototypeHead>(net.head).prototypes);
            break;
        }
    }
    return out;
}

LoadedCheckpoint deserialize_checkpoint(std::string_view bytes) {
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file (bad magic)");
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t n_layers = r.u32();
    std::vector<LayerSpec> specs;
    specs.reserve(n_layers);
    for (std::uint32_t i = 0; i < n_layers; ++i) specs.push_back(parse_layer_spec(r.str()));
    const auto hk = static_cast<HeadKind>(r.u32());
    LoadedCheckpoint lc;
    lc.config_text = r.str();
    lc.net.layers = resolve_layer_chain(std::move(specs));
    const std::uint32_t n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        LayerParams p;
        p.weight = r.tensor();
        p.bias = r.tensor();
        lc.net.params.push_back(std::move(p));
    }
    std::size_t expected = 0;
    for (const LayerSpec& s : lc.net.layers) expected += s.parameterized();
    if (expected != lc.net.params.size())
        throw std::runtime_error("checkpoint has " + std::to_string(lc.net.params.size()) +
                                 " parameter blocks for " + std::to_string(expected) +
                                 " parameterized layers");
    switch (hk) {
        case HeadKind::None:
            break;
        case HeadKind::Softmax: {
            SoftmaxHead h;
            h.weight = r.tensor();
            h.bias = r.tensor();
            lc.net.head = std::move(h);
            break;
        }
        case HeadKind::Cosine: {
            CosineHead h;
            h.scale = r.f64();
            h.weights = r.tensor();
            lc.net.head = std::move(h);
            break;
        }
        case HeadKind::Prototype: {
            PrototypeHead h;
            h.prototypes = r.tensor();
            lc.net.head = std::move(h);
            break;
        }
    }
    if (r.pos != bytes.size())
        throw std::runtime_error("checkpoint has " + std::to_string(bytes.size() - r.pos) +
                                 " trailing bytes");
    return lc;
}

void save_checkpoint(const std::string& path, const Network& net,
                     const std::string& config_text) {
    write_text_file(path, serialize_checkpoint(net, config_text));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    return deserialize_checkpoint(read_text_file(path));
}

std::string git_blob_sha1(std::string_view bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("hash context allocation failed");
    if (EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha1 computation failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string file_blob_sha1(const std::string& path) {
    return git_blob_sha1(read_text_file(path));
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace ptransfer
