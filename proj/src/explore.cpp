#include "cge/explore.hpp"

#include <unordered_set>

#include "cge/lora.hpp"
#include "cge/parallel.hpp"
#include "cge/scoring.hpp"

namespace cge {

void CgeConfig::validate() const {
    if (n_generate < 1) throw ValidationError("cge config: n_generate must be >= 1");
    if (iterative && inner.steps < 1) {
        throw ValidationError("cge config: iterative mode needs inner steps >= 1");
    }
    if (inner.learning_rate < 0.0) {
        throw ValidationError("cge config: inner learning rate must be >= 0");
    }
}

std::pair<double, double> evaluate_generations(const std::vector<std::string>& labels, int k_domains) {
    if (k_domains < 1) throw ValidationError("evaluate_generations: K must be >= 1");
    if (labels.empty()) return {0.0, 0.0};
    std::unordered_set<std::string> seen;
    size_t novel = 0;
    for (const std::string& l : labels) {
        if (l != "base") {
            ++novel;
            seen.insert(l);
        }
    }
    return {static_cast<double>(novel) / static_cast<double>(labels.size()),
            static_cast<double>(seen.size()) / static_cast<double>(k_domains)};
}

namespace {

void finish_report(GenerationReport& rep, int k_domains) {
    rep.k_domains = k_domains;
    std::unordered_set<std::string> seen;
    size_t novel = 0;
    for (size_t i = 0; i < rep.records.size(); ++i) {
        GenerationRecord& r = rep.records[i];
        if (r.label != "base") {
            ++novel;
            seen.insert(r.label);
        }
        r.detection_so_far = static_cast<double>(novel) / static_cast<double>(i + 1);
        r.coverage_so_far = static_cast<double>(seen.size()) / static_cast<double>(k_domains);
    }
    if (!rep.records.empty()) {
        rep.detection_rate = rep.records.back().detection_so_far;
        rep.coverage_rate = rep.records.back().coverage_so_far;
    }
}

uint64_t generation_seed(uint64_t run_seed, int iteration) {
    return Rng(run_seed).derive("gen", static_cast<uint64_t>(iteration)).next_u64();
}

GenerationRecord record_from(const Model& vocab_model, const DecodeResult& dec, int iteration,
                             uint64_t seed, const DomainOracle& oracle) {
    GenerationRecord r;
    r.iteration = iteration;
    r.text = detokenize(dec.tokens, vocab_model.vocab);
    r.label = oracle.classify(r.text);
    r.cum_score = dec.cum_score;
    r.admissible_sizes = dec.admissible_sizes;
    r.decode_seed = seed;
    return r;
}

} // namespace

GenerationReport static_generate(const Model& pt, const Model& ft, const DomainOracle& oracle,
                                 const CgeConfig& cfg) {
    cfg.validate();
    require_same_config(pt, ft);
    GenerationReport rep;
    rep.records.assign(static_cast<size_t>(cfg.n_generate), {});
    parallel_for(static_cast<size_t>(cfg.n_generate), [&](size_t i) {
        DecodeConfig dc = cfg.decode;
        dc.seed = generation_seed(cfg.seed, static_cast<int>(i));
        const DecodeResult dec = sample_sequence(pt, ft, dc);
        GenerationRecord r = record_from(ft, dec, static_cast<int>(i), dc.seed, oracle);
        if (!dec.tokens.empty()) {
            r.score_before = contrastive_score(pt, ft, dec.tokens);
        }
        r.score_after = r.score_before;
        rep.records[i] = std::move(r);
    });
    finish_report(rep, oracle.num_domains());
    return rep;
}

GenerationReport iterative_generate(const Model& pt, const Model& ft, const DomainOracle& oracle,
                                    const CgeConfig& cfg) {
    cfg.validate();
    require_same_config(pt, ft);
    if (!cfg.iterative) throw ValidationError("iterative_generate: cfg.iterative must be set");

    Model ref = pt; // working copy; the caller's model is never touched
    if (cfg.inner.use_lora) {
        lora_attach(ref, cfg.inner.lora, Rng(cfg.seed).derive("inner-lora").next_u64());
    }
    TrainConfig inner_cfg;
    inner_cfg.learning_rate = cfg.inner.learning_rate;

    GenerationReport rep;
    for (int i = 0; i < cfg.n_generate; ++i) {
        DecodeConfig dc = cfg.decode;
        dc.seed = generation_seed(cfg.seed, i);
        const DecodeResult dec = sample_sequence(ref, ft, dc);
        GenerationRecord r = record_from(ft, dec, i, dc.seed, oracle);
        if (!dec.tokens.empty()) {
            r.score_before = contrastive_score(ref, ft, dec.tokens);
            // Pull the reference toward the generated sequence (fresh Adam
            // state: the update is a function of (theta, x_t) only).
            AdamState state = AdamState::init(ref.trainable().size());
            for (int s = 0; s < cfg.inner.steps; ++s) {
                const GradientVec g = example_loss_grad(ref, dec.tokens);
                adam_step(ref.trainable(), g, state, inner_cfg);
            }
            r.score_after = contrastive_score(ref, ft, dec.tokens);
        }
        rep.records.push_back(std::move(r));
    }
    finish_report(rep, oracle.num_domains());
    return rep;
}

GenerationReport sampling_baseline(const Model& ft, const DomainOracle& oracle, const CgeConfig& cfg) {
    cfg.validate();
    GenerationReport rep;
    rep.records.assign(static_cast<size_t>(cfg.n_generate), {});
    parallel_for(static_cast<size_t>(cfg.n_generate), [&](size_t i) {
        const uint64_t seed = generation_seed(cfg.seed, static_cast<int>(i));
        const DecodeResult dec = sample_from_ft(ft, cfg.decode.max_len, seed);
        GenerationRecord r = record_from(ft, dec, static_cast<int>(i), seed, oracle);
        r.score_before = r.score_after = dec.cum_score;
        rep.records[i] = std::move(r);
    });
    finish_report(rep, oracle.num_domains());
    return rep;
}

} // namespace cge
