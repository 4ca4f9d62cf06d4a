#pragma once

#include <string>
#include <vector>

#include "cge/corpus.hpp"
#include "cge/decoding.hpp"
#include "cge/model.hpp"
#include "cge/optim.hpp"

namespace cge {

// Eq.-5-style inner update: a few Adam steps on the single generated
// sequence, fresh optimizer state each time.
struct InnerUpdateConfig {
    double learning_rate = 3e-3;
    int steps = 4;
    bool use_lora = false;
    LoraConfig lora;
};

struct CgeConfig {
    int n_generate = 100;
    DecodeConfig decode;
    bool iterative = false;
    InnerUpdateConfig inner;
    uint64_t seed = 0;

    void validate() const;
};

struct GenerationRecord {
    int iteration = 0;
    std::string text;
    std::string label;
    double cum_score = 0.0;
    std::vector<int> admissible_sizes;
    uint64_t decode_seed = 0;
    // Contrastive score of the generated text against the reference model,
    // before and after the inner update (equal for the static pipeline).
    double score_before = 0.0;
    double score_after = 0.0;
    double detection_so_far = 0.0;
    double coverage_so_far = 0.0;
};

struct GenerationReport {
    std::vector<GenerationRecord> records;
    double detection_rate = 0.0;
    double coverage_rate = 0.0;
    int k_domains = 0;
};

// detection = share labeled non-base; coverage = distinct novel domains / K.
std::pair<double, double> evaluate_generations(const std::vector<std::string>& labels, int k_domains);

// Repeated contrastive decoding against the fixed pre-trained reference.
GenerationReport static_generate(const Model& pt, const Model& ft, const DomainOracle& oracle,
                                 const CgeConfig& cfg);

// After each generation the reference copy is fine-tuned on the generated
// sequence; neither caller model is modified. With inner learning rate 0
// this reduces exactly to static_generate.
GenerationReport iterative_generate(const Model& pt, const Model& ft, const DomainOracle& oracle,
                                    const CgeConfig& cfg);

// Plain sampling-from-fine-tuned baseline over the same bookkeeping.
GenerationReport sampling_baseline(const Model& ft, const DomainOracle& oracle, const CgeConfig& cfg);

} // namespace cge
