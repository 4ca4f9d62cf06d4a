#include "cge/vocab.hpp"

namespace cge {

Vocab::Vocab(std::vector<std::string> tokens, TokenId bos_id, TokenId eos_id)
    : tokens_(std::move(tokens)), bos_id_(bos_id), eos_id_(eos_id) {
    if (tokens_.empty()) {
        throw ValidationError("vocab: empty token list");
    }
    if (bos_id_ < 0 || bos_id_ >= size() || eos_id_ < 0 || eos_id_ >= size() || bos_id_ == eos_id_) {
        throw ValidationError("vocab: bos/eos ids must be distinct valid ids");
    }
    for (int i = 0; i < size(); ++i) {
        const std::string& s = tokens_[static_cast<size_t>(i)];
        if (s.size() == 1) {
            auto [it, inserted] = char_to_id_.emplace(s[0], i);
            if (!inserted) {
                throw ValidationError("vocab: duplicate symbol '" + s + "'");
            }
        }
    }
}

const std::string& Vocab::symbol(TokenId id) const {
    if (id < 0 || id >= size()) {
        throw ValidationError("vocab: token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<size_t>(id)];
}

TokenId Vocab::id_of_char(char c) const {
    auto it = char_to_id_.find(c);
    if (it == char_to_id_.end()) {
        throw ValidationError(std::string("vocab: unknown symbol '") + c + "'");
    }
    return it->second;
}

const Vocab& project_vocab() {
    static const Vocab vocab = [] {
        std::vector<std::string> tokens;
        tokens.push_back("<bos>");
        tokens.push_back("<eos>");
        for (char c = 'a'; c <= 'z'; ++c) {
            tokens.emplace_back(1, c);
        }
        for (char c = '0'; c <= '9'; ++c) {
            tokens.emplace_back(1, c);
        }
        for (char c : std::string(" +=()[]{}<>")) {
            tokens.emplace_back(1, c);
        }
        return Vocab(std::move(tokens), /*bos_id=*/0, /*eos_id=*/1);
    }();
    return vocab;
}

TokenSeq tokenize(const std::string& text, const Vocab& vocab) {
    if (text.empty()) {
        throw ValidationError("tokenize: empty input");
    }
    TokenSeq ids;
    ids.reserve(text.size());
    for (size_t i = 0; i < text.size(); ++i) {
        if (!vocab.has_char(text[i])) {
            throw ValidationError(std::string("tokenize: unknown symbol '") + text[i] +
                                  "' at position " + std::to_string(i));
        }
        ids.push_back(vocab.id_of_char(text[i]));
    }
    return ids;
}

std::string detokenize(const TokenSeq& ids, const Vocab& vocab) {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
        // Reserved symbols render as their multi-character names; tokenize
        // never emits them, so tokenize/detokenize still round-trips.
        out += vocab.symbol(id);
    }
    return out;
}

} // namespace cge
