#include "cge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace cge {

namespace {

constexpr char kMagic[6] = {'C', 'G', 'E', 'L', 'M', '\0'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
  public:
    explicit Reader(std::string buf) : buf_(std::move(buf)) {}

    void need(size_t n) const {
        if (pos_ + n > buf_.size()) {
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  "checkpoint truncated: wanted " + std::to_string(n) +
                                      " bytes at offset " + std::to_string(pos_));
        }
    }
    void raw(void* dst, size_t n) {
        need(n);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<size_t>(i)])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<size_t>(i)])) << (8 * i);
        }
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

  private:
    std::string buf_;
    size_t pos_ = 0;
};

} // namespace

void save_checkpoint(const Model& m, const std::string& path) {
    if (m.lora_active()) {
        throw ValidationError("save_checkpoint: merge adapters before saving");
    }
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);

    put_u32(out, static_cast<uint32_t>(m.config.vocab_size));
    put_u32(out, static_cast<uint32_t>(m.config.context_len));
    put_u32(out, static_cast<uint32_t>(m.config.d_model));
    put_u32(out, static_cast<uint32_t>(m.config.n_layers));
    put_u32(out, static_cast<uint32_t>(m.config.n_heads));
    put_u32(out, static_cast<uint32_t>(m.config.d_ff));

    put_u32(out, static_cast<uint32_t>(m.vocab.size()));
    for (const std::string& tok : m.vocab.tokens()) {
        put_u32(out, static_cast<uint32_t>(tok.size()));
        out += tok;
    }
    put_u32(out, static_cast<uint32_t>(m.vocab.bos_id()));
    put_u32(out, static_cast<uint32_t>(m.vocab.eos_id()));

    put_u32(out, static_cast<uint32_t>(m.layout.tensors.size()));
    for (const TensorInfo& t : m.layout.tensors) {
        put_u32(out, static_cast<uint32_t>(t.name.size()));
        out += t.name;
        put_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (uint32_t d : t.shape) put_u32(out, d);
        for (size_t i = 0; i < t.size; ++i) put_f64(out, m.weights[t.offset + i]);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_checkpoint: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(std::move(buf));

    char magic[6];
    r.raw(magic, 6);
    if (std::memcmp(magic, kMagic, 6) != 0) {
        throw CheckpointError(CheckpointError::Kind::bad_magic, "not a checkpoint: " + path);
    }
    const uint32_t version = r.u32();
    if (version != kVersion) {
        throw CheckpointError(CheckpointError::Kind::version_mismatch,
                              "unsupported checkpoint version " + std::to_string(version));
    }

    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(r.u32());
    cfg.context_len = static_cast<int>(r.u32());
    cfg.d_model = static_cast<int>(r.u32());
    cfg.n_layers = static_cast<int>(r.u32());
    cfg.n_heads = static_cast<int>(r.u32());
    cfg.d_ff = static_cast<int>(r.u32());
    cfg.validate();

    const uint32_t n_tokens = r.u32();
    std::vector<std::string> tokens;
    tokens.reserve(n_tokens);
    for (uint32_t i = 0; i < n_tokens; ++i) {
        const uint32_t len = r.u32();
        tokens.push_back(r.str(len));
    }
    const auto bos = static_cast<TokenId>(r.u32());
    const auto eos = static_cast<TokenId>(r.u32());
    Vocab vocab(std::move(tokens), bos, eos);
    if (vocab.size() != cfg.vocab_size) {
        throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                              "checkpoint vocab size disagrees with config");
    }

    Model m;
    m.config = cfg;
    m.vocab = std::move(vocab);
    m.layout = ParamLayout::build(cfg);
    m.weights.assign(m.layout.total, 0.0);

    const uint32_t n_arrays = r.u32();
    if (n_arrays != m.layout.tensors.size()) {
        throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                              "checkpoint holds " + std::to_string(n_arrays) + " arrays, expected " +
                                  std::to_string(m.layout.tensors.size()));
    }
    for (const TensorInfo& expect : m.layout.tensors) {
        const uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        const uint32_t ndim = r.u32();
        std::vector<uint32_t> shape(ndim);
        for (uint32_t i = 0; i < ndim; ++i) shape[i] = r.u32();
        if (name != expect.name || shape != expect.shape) {
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  "checkpoint array '" + name + "' does not match expected '" +
                                      expect.name + "' shape");
        }
        r.need(expect.size * 8);
        for (size_t i = 0; i < expect.size; ++i) m.weights[expect.offset + i] = r.f64();
    }
    return m;
}

} // namespace cge
