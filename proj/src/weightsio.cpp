#include "entropycache/weightsio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace entropycache {

namespace {

constexpr char kMagic[4] = {'E', 'C', 'W', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
    }
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
    }
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    }
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return v;
}

void put_floats(std::vector<unsigned char>& out, const Scalar* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
    }
}

void get_floats(const unsigned char*& p, Scalar* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        data[i] = std::bit_cast<Scalar>(get_u32(p));
        p += 4;
    }
}

template <typename Fn>
void visit_tensors(ModelWeights& w, Fn&& fn) {
    fn(w.embedding.data(), static_cast<std::size_t>(w.embedding.size()));
    for (LayerWeights& l : w.layers) {
        fn(l.attn_norm.data(), static_cast<std::size_t>(l.attn_norm.size()));
        fn(l.wq.data(), static_cast<std::size_t>(l.wq.size()));
        fn(l.wk.data(), static_cast<std::size_t>(l.wk.size()));
        fn(l.wv.data(), static_cast<std::size_t>(l.wv.size()));
        fn(l.wo.data(), static_cast<std::size_t>(l.wo.size()));
        fn(l.ffn_norm.data(), static_cast<std::size_t>(l.ffn_norm.size()));
        fn(l.w_gate.data(), static_cast<std::size_t>(l.w_gate.size()));
        fn(l.w_up.data(), static_cast<std::size_t>(l.w_up.size()));
        fn(l.w_down.data(), static_cast<std::size_t>(l.w_down.size()));
    }
    fn(w.final_norm.data(), static_cast<std::size_t>(w.final_norm.size()));
    fn(w.lm_head.data(), static_cast<std::size_t>(w.lm_head.size()));
}

}  // namespace

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
    std::vector<unsigned char> payload;
    auto& w = const_cast<ModelWeights&>(weights);
    visit_tensors(w, [&](const Scalar* data, std::size_t count) {
        put_floats(payload, data, count);
    });

    std::vector<unsigned char> file;
    file.insert(file.end(), kMagic, kMagic + 4);
    put_u32(file, kVersion);
    const ModelConfig& c = weights.config;
    put_u32(file, static_cast<std::uint32_t>(c.num_layers));
    put_u32(file, static_cast<std::uint32_t>(c.num_heads));
    put_u32(file, static_cast<std::uint32_t>(c.head_dim));
    put_u32(file, static_cast<std::uint32_t>(c.hidden_dim));
    put_u32(file, static_cast<std::uint32_t>(c.vocab_size));
    put_u32(file, static_cast<std::uint32_t>(c.ffn_mult));
    put_u32(file, static_cast<std::uint32_t>(c.max_seq_len));
    put_u32(file, static_cast<std::uint32_t>(c.mask_token_id));
    put_u64(file, c.rng_seed);
    put_u64(file, payload.size());
    file.insert(file.end(), payload.begin(), payload.end());
    put_u64(file, fnv1a64(payload.data(), payload.size()));

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            throw EngineError("WriteFailed", "cannot open " + tmp.string());
        }
        os.write(reinterpret_cast<const char*>(file.data()),
                 static_cast<std::streamsize>(file.size()));
        if (!os) {
            throw EngineError("WriteFailed", "short write to " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw EngineError("WriteFailed", "cannot move weights into place at " + path.string());
    }
}

ModelWeights load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw EngineError("NotAWeightsFile", "cannot open " + path.string());
    }
    std::vector<unsigned char> file((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());

    constexpr std::size_t kHeaderBytes = 4 + 4 + 8 * 4 + 8 + 8;
    if (file.size() < 8 || std::memcmp(file.data(), kMagic, 4) != 0 ||
        get_u32(file.data() + 4) != kVersion) {
        throw EngineError("NotAWeightsFile", path.string() + " lacks the ECW1 header");
    }
    if (file.size() < kHeaderBytes) {
        throw EngineError("Truncated", path.string() + " ends inside the header");
    }

    const unsigned char* p = file.data() + 8;
    ModelConfig c;
    c.num_layers = static_cast<int>(get_u32(p)); p += 4;
    c.num_heads = static_cast<int>(get_u32(p)); p += 4;
    c.head_dim = static_cast<int>(get_u32(p)); p += 4;
    c.hidden_dim = static_cast<int>(get_u32(p)); p += 4;
    c.vocab_size = static_cast<int>(get_u32(p)); p += 4;
    c.ffn_mult = static_cast<int>(get_u32(p)); p += 4;
    c.max_seq_len = static_cast<int>(get_u32(p)); p += 4;
    c.mask_token_id = static_cast<int>(get_u32(p)); p += 4;
    c.rng_seed = get_u64(p); p += 8;
    const std::uint64_t payload_bytes = get_u64(p); p += 8;

    if (file.size() < kHeaderBytes + payload_bytes + 8) {
        throw EngineError("Truncated", path.string() + " is shorter than its payload claims");
    }
    const std::uint64_t stored = get_u64(file.data() + kHeaderBytes + payload_bytes);
    if (fnv1a64(p, payload_bytes) != stored) {
        throw EngineError("ChecksumMismatch", path.string() + " payload checksum differs");
    }

    if (c.num_layers < 1 || c.num_heads < 1 || c.head_dim < 1 || c.vocab_size < 2 ||
        c.ffn_mult < 1 || c.hidden_dim != c.num_heads * c.head_dim || c.mask_token_id < 0 ||
        c.mask_token_id >= c.vocab_size) {
        throw EngineError("InvalidConfig", path.string() + " header has inconsistent dimensions");
    }
    const auto du = static_cast<std::uint64_t>(c.hidden_dim);
    const auto fu = static_cast<std::uint64_t>(c.ffn_mult) * du;
    const auto vu = static_cast<std::uint64_t>(c.vocab_size);
    const auto lu = static_cast<std::uint64_t>(c.num_layers);
    const std::uint64_t expected = 4 * (2 * vu * du + du + lu * (2 * du + 4 * du * du + 3 * du * fu));
    if (expected != payload_bytes) {
        throw EngineError("Truncated", path.string() + " payload size does not match config");
    }

    ModelWeights w;
    w.config = c;
    const int d = c.hidden_dim;
    const int f = c.ffn_mult * d;
    w.embedding = Mat(c.vocab_size, d);
    w.layers.resize(static_cast<std::size_t>(c.num_layers));
    for (LayerWeights& l : w.layers) {
        l.attn_norm = Vec(d);
        l.wq = Mat(d, d);
        l.wk = Mat(d, d);
        l.wv = Mat(d, d);
        l.wo = Mat(d, d);
        l.ffn_norm = Vec(d);
        l.w_gate = Mat(d, f);
        l.w_up = Mat(d, f);
        l.w_down = Mat(f, d);
    }
    w.final_norm = Vec(d);
    w.lm_head = Mat(d, c.vocab_size);

    visit_tensors(w, [&](const Scalar* data, std::size_t count) {
        get_floats(p, const_cast<Scalar*>(data), count);
    });
    return w;
}

}  // namespace entropycache
