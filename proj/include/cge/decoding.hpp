#pragma once

#include <string>
#include <vector>

#include "cge/model.hpp"
#include "cge/rng.hpp"

namespace cge {

enum class DecodeStrategy { ancestral, beam };

DecodeStrategy decode_strategy_from_string(const std::string& s);
std::string to_string(DecodeStrategy s);

struct DecodeConfig {
    double alpha = 0.01;
    DecodeStrategy strategy = DecodeStrategy::beam;
    int beam_size = 4;
    int max_len = 63;
    uint64_t seed = 0;

    void validate(const ModelConfig& model) const;
};

// Per-token contrastive scores with the adaptive plausibility constraint:
// s'(v) = log p_ft(v) - log p_pt(v) where p_ft(v) >= alpha * max p_ft, else -inf.
struct StepScores {
    std::vector<double> scores;     // size V, -inf off the admissible set
    std::vector<TokenId> admissible; // ascending ids; never empty
};

// Token ids whose fine-tuned probability clears alpha times the maximum
// (inclusive comparison).
std::vector<TokenId> plausibility_mask(const std::vector<double>& ft_logprobs, double alpha);

StepScores make_step_scores(const std::vector<double>& ft_logprobs,
                            const std::vector<double>& pt_logprobs, double alpha);

StepScores contrastive_step(const Model& pt, const Model& ft, const TokenSeq& prefix, double alpha);

struct DecodeResult {
    TokenSeq tokens;                  // body, bos/eos excluded
    double cum_score = 0.0;           // sum of step scores over drawn tokens
    std::vector<int> admissible_sizes; // one entry per drawn token
    bool ended_eos = false;
};

// Contrastive decoding. Ancestral samples the constrained softmax of s' each
// step. Beam keeps beam_size partials, expands each with one multinomial
// draw plus the step argmax, ranks by cumulative s' and returns the best
// finished sequence. Fully determined by cfg.seed.
DecodeResult sample_sequence(const Model& pt, const Model& ft, const DecodeConfig& cfg);

// Plain ancestral sampling from the fine-tuned model.
DecodeResult sample_from_ft(const Model& ft, int max_len, uint64_t seed);

} // namespace cge
