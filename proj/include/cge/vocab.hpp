#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cge/errors.hpp"

namespace cge {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

// Token alphabet. Ordinary tokens are single characters; bos/eos are
// multi-character reserved symbols that tokenize() never produces.
class Vocab {
  public:
    Vocab() = default;
    Vocab(std::vector<std::string> tokens, TokenId bos_id, TokenId eos_id);

    int size() const { return static_cast<int>(tokens_.size()); }
    TokenId bos_id() const { return bos_id_; }
    TokenId eos_id() const { return eos_id_; }
    const std::string& symbol(TokenId id) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool has_char(char c) const { return char_to_id_.count(c) > 0; }
    TokenId id_of_char(char c) const;
    bool is_special(TokenId id) const { return id == bos_id_ || id == eos_id_; }

    bool operator==(const Vocab& other) const {
        return tokens_ == other.tokens_ && bos_id_ == other.bos_id_ && eos_id_ == other.eos_id_;
    }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<char, TokenId> char_to_id_;
    TokenId bos_id_ = 0;
    TokenId eos_id_ = 1;
};

// The fixed project alphabet: bos, eos, a-z, 0-9, space and the structural
// characters the synthetic domains use.
const Vocab& project_vocab();

TokenSeq tokenize(const std::string& text, const Vocab& vocab);
std::string detokenize(const TokenSeq& ids, const Vocab& vocab);

} // namespace cge
