#pragma once

#include <string>
#include <vector>

#include "cge/model.hpp"
#include "cge/rng.hpp"

namespace testsup {

// Vocab of n_chars single letters plus bos/eos.
inline cge::Vocab small_vocab(int n_chars) {
    std::vector<std::string> tokens = {"<bos>", "<eos>"};
    for (int i = 0; i < n_chars; ++i) tokens.emplace_back(1, static_cast<char>('a' + i));
    return cge::Vocab(std::move(tokens), 0, 1);
}

inline cge::ModelConfig tiny_config(int vocab_size, int context_len = 16, int d_model = 16,
                                    int n_layers = 2, int n_heads = 2, int d_ff = 32) {
    cge::ModelConfig cfg;
    cfg.vocab_size = vocab_size;
    cfg.context_len = context_len;
    cfg.d_model = d_model;
    cfg.n_layers = n_layers;
    cfg.n_heads = n_heads;
    cfg.d_ff = d_ff;
    return cfg;
}

inline cge::Model tiny_model(uint64_t seed = 7, int n_chars = 14) {
    const cge::Vocab vocab = small_vocab(n_chars);
    return cge::random_init(tiny_config(vocab.size()), vocab, seed);
}

// All weights zero except the head bias: a context-free unigram model with
// p = softmax(head.b).
inline cge::Model unigram_model(const cge::Vocab& vocab, const std::vector<double>& probs) {
    cge::Model m;
    m.config = tiny_config(vocab.size());
    m.vocab = vocab;
    m.layout = cge::ParamLayout::build(m.config);
    m.weights.assign(m.layout.total, 0.0);
    for (size_t v = 0; v < probs.size(); ++v) {
        m.weights[m.layout.head_b + v] = std::log(probs[v]);
    }
    return m;
}

inline cge::TokenSeq random_seq(cge::Rng& rng, const cge::Model& m, int len) {
    cge::TokenSeq x;
    for (int i = 0; i < len; ++i) {
        x.push_back(static_cast<cge::TokenId>(rng.next_below(static_cast<uint64_t>(m.config.vocab_size))));
    }
    return x;
}

} // namespace testsup
