#include "cge/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cge {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

DecodeStrategy decode_strategy_from_string(const std::string& s) {
    if (s == "ancestral") return DecodeStrategy::ancestral;
    if (s == "beam") return DecodeStrategy::beam;
    throw ValidationError("unknown decode strategy '" + s + "'");
}

std::string to_string(DecodeStrategy s) {
    return s == DecodeStrategy::ancestral ? "ancestral" : "beam";
}

void DecodeConfig::validate(const ModelConfig& model) const {
    if (alpha < 0.0 || alpha > 1.0) throw ValidationError("decode config: alpha must be in [0,1]");
    if (beam_size < 1) throw ValidationError("decode config: beam_size must be positive");
    if (max_len < 1 || max_len > model.context_len - 1) {
        throw ValidationError("decode config: max_len must be in [1, context_len-1]");
    }
}

std::vector<TokenId> plausibility_mask(const std::vector<double>& ft_logprobs, double alpha) {
    double max_lp = kNegInf;
    for (double lp : ft_logprobs) max_lp = std::max(max_lp, lp);
    const double threshold = (alpha > 0.0) ? std::log(alpha) + max_lp : kNegInf;
    std::vector<TokenId> admissible;
    for (size_t v = 0; v < ft_logprobs.size(); ++v) {
        if (ft_logprobs[v] >= threshold) admissible.push_back(static_cast<TokenId>(v));
    }
    return admissible;
}

StepScores make_step_scores(const std::vector<double>& ft_logprobs,
                            const std::vector<double>& pt_logprobs, double alpha) {
    if (ft_logprobs.size() != pt_logprobs.size()) {
        throw ValidationError("step scores: distribution size mismatch");
    }
    StepScores out;
    out.admissible = plausibility_mask(ft_logprobs, alpha);
    out.scores.assign(ft_logprobs.size(), kNegInf);
    for (TokenId v : out.admissible) {
        out.scores[static_cast<size_t>(v)] =
            ft_logprobs[static_cast<size_t>(v)] - pt_logprobs[static_cast<size_t>(v)];
    }
    return out;
}

StepScores contrastive_step(const Model& pt, const Model& ft, const TokenSeq& prefix, double alpha) {
    require_same_config(pt, ft);
    return make_step_scores(next_token_logprobs(ft, prefix), next_token_logprobs(pt, prefix), alpha);
}

namespace {

// Multinomial draw from softmax of scores restricted to the admissible set.
TokenId draw_from_scores(const StepScores& ss, Rng& rng) {
    double max_s = kNegInf;
    for (TokenId v : ss.admissible) max_s = std::max(max_s, ss.scores[static_cast<size_t>(v)]);
    std::vector<double> w(ss.admissible.size());
    double total = 0.0;
    for (size_t i = 0; i < ss.admissible.size(); ++i) {
        w[i] = std::exp(ss.scores[static_cast<size_t>(ss.admissible[i])] - max_s);
        total += w[i];
    }
    double r = rng.next_double() * total;
    for (size_t i = 0; i < w.size(); ++i) {
        r -= w[i];
        if (r <= 0.0) return ss.admissible[i];
    }
    return ss.admissible.back();
}

TokenId argmax_score(const StepScores& ss) {
    TokenId best = ss.admissible.front();
    double best_s = ss.scores[static_cast<size_t>(best)];
    for (TokenId v : ss.admissible) {
        if (ss.scores[static_cast<size_t>(v)] > best_s) {
            best = v;
            best_s = ss.scores[static_cast<size_t>(v)];
        }
    }
    return best;
}

DecodeResult decode_ancestral(const Model& pt, const Model& ft, const DecodeConfig& cfg) {
    Rng rng = Rng(cfg.seed).derive("decode");
    DecoderSession spt(pt), sft(ft);
    const TokenId eos = ft.vocab.eos_id();
    DecodeResult res;
    for (int step = 0; step < cfg.max_len; ++step) {
        const StepScores ss = make_step_scores(sft.logprobs(), spt.logprobs(), cfg.alpha);
        const TokenId tok = draw_from_scores(ss, rng);
        res.cum_score += ss.scores[static_cast<size_t>(tok)];
        res.admissible_sizes.push_back(static_cast<int>(ss.admissible.size()));
        if (tok == eos) {
            res.ended_eos = true;
            break;
        }
        res.tokens.push_back(tok);
        if (static_cast<int>(res.tokens.size()) >= cfg.max_len) break;
        spt.push(tok);
        sft.push(tok);
    }
    return res;
}

struct Beam {
    DecoderSession spt, sft;
    DecodeResult partial;
    bool finished = false;

    Beam(const Model& pt, const Model& ft) : spt(pt), sft(ft) {}
};

struct Candidate {
    size_t parent;
    TokenId token;
    double step_score;
    double cum_score;
};

DecodeResult decode_beam(const Model& pt, const Model& ft, const DecodeConfig& cfg) {
    Rng rng = Rng(cfg.seed).derive("decode");
    const TokenId eos = ft.vocab.eos_id();
    std::vector<Beam> beams;
    beams.emplace_back(pt, ft);
    std::vector<DecodeResult> finished;

    while (!beams.empty()) {
        std::vector<Candidate> cands;
        for (size_t b = 0; b < beams.size(); ++b) {
            const StepScores ss = make_step_scores(beams[b].sft.logprobs(), beams[b].spt.logprobs(),
                                                   cfg.alpha);
            beams[b].partial.admissible_sizes.push_back(static_cast<int>(ss.admissible.size()));
            const TokenId sampled = draw_from_scores(ss, rng);
            const TokenId greedy = argmax_score(ss);
            cands.push_back({b, sampled, ss.scores[static_cast<size_t>(sampled)],
                             beams[b].partial.cum_score + ss.scores[static_cast<size_t>(sampled)]});
            if (greedy != sampled) {
                cands.push_back({b, greedy, ss.scores[static_cast<size_t>(greedy)],
                                 beams[b].partial.cum_score + ss.scores[static_cast<size_t>(greedy)]});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.cum_score != b.cum_score) return a.cum_score > b.cum_score;
            if (a.parent != b.parent) return a.parent < b.parent;
            return a.token < b.token;
        });
        if (cands.size() > static_cast<size_t>(cfg.beam_size)) {
            cands.resize(static_cast<size_t>(cfg.beam_size));
        }

        // Children of the same parent share its session state; the last child
        // may take it by move.
        std::vector<int> remaining(beams.size(), 0);
        for (const Candidate& c : cands) remaining[c.parent] += 1;
        std::vector<Beam> next;
        next.reserve(cands.size());
        for (const Candidate& c : cands) {
            remaining[c.parent] -= 1;
            Beam child = (remaining[c.parent] == 0) ? std::move(beams[c.parent]) : beams[c.parent];
            child.partial.cum_score = c.cum_score;
            if (c.token == eos) {
                child.partial.ended_eos = true;
                child.finished = true;
            } else {
                child.partial.tokens.push_back(c.token);
                if (static_cast<int>(child.partial.tokens.size()) >= cfg.max_len) {
                    child.finished = true;
                } else {
                    child.spt.push(c.token);
                    child.sft.push(c.token);
                }
            }
            if (child.finished) {
                finished.push_back(std::move(child.partial));
            } else {
                next.push_back(std::move(child));
            }
        }
        beams = std::move(next);
    }

    // Highest cumulative score wins; earlier finisher breaks ties.
    size_t best = 0;
    for (size_t i = 1; i < finished.size(); ++i) {
        if (finished[i].cum_score > finished[best].cum_score) best = i;
    }
    return finished[best];
}

} // namespace

DecodeResult sample_sequence(const Model& pt, const Model& ft, const DecodeConfig& cfg) {
    require_same_config(pt, ft);
    cfg.validate(ft.config);
    return cfg.strategy == DecodeStrategy::ancestral ? decode_ancestral(pt, ft, cfg)
                                                     : decode_beam(pt, ft, cfg);
}

DecodeResult sample_from_ft(const Model& ft, int max_len, uint64_t seed) {
    if (max_len < 1 || max_len > ft.config.context_len - 1) {
        throw ValidationError("sample_from_ft: max_len out of range");
    }
    Rng rng = Rng(seed).derive("decode");
    DecoderSession sft(ft);
    const TokenId eos = ft.vocab.eos_id();
    DecodeResult res;
    for (int step = 0; step < max_len; ++step) {
        const std::vector<double> lp = sft.logprobs();
        // ancestral draw from the full distribution
        double total = 0.0;
        std::vector<double> w(lp.size());
        for (size_t v = 0; v < lp.size(); ++v) {
            w[v] = std::exp(lp[v]);
            total += w[v];
        }
        double r = rng.next_double() * total;
        TokenId tok = static_cast<TokenId>(lp.size() - 1);
        for (size_t v = 0; v < w.size(); ++v) {
            r -= w[v];
            if (r <= 0.0) {
                tok = static_cast<TokenId>(v);
                break;
            }
        }
        res.cum_score += lp[static_cast<size_t>(tok)];
        res.admissible_sizes.push_back(static_cast<int>(lp.size()));
        if (tok == eos) {
            res.ended_eos = true;
            break;
        }
        res.tokens.push_back(tok);
        if (static_cast<int>(res.tokens.size()) >= max_len) break;
        sft.push(tok);
    }
    return res;
}

} // namespace cge
