#pragma once

#include <optional>

#include "cge/model.hpp"
#include "cge/optim.hpp"
#include "cge/rng.hpp"

namespace cge {

struct DpConfig {
    double clip_norm = 1.0;              // C; may be +inf
    double noise_multiplier = 0.0;       // sigma
    double delta = 0.0;                  // 0 = resolve to 1/n at training time
    long long lot_size = 32;
    uint64_t seed = 0;

    void validate() const;
};

// g * min(1, C / ||g||_2), global norm across all arrays.
GradientVec clip_gradient(const GradientVec& g, double clip_norm);

// (sum_i clip(g_i, C) + N(0, sigma^2 C^2 I)) / L. Noise is drawn from
// noise_rng only when sigma > 0.
GradientVec dp_noisy_mean(const std::vector<GradientVec>& per_example, const DpConfig& dp,
                          Rng& noise_rng);

void dp_adam_step(std::vector<double>& params, const std::vector<GradientVec>& per_example,
                  const DpConfig& dp, const TrainConfig& train, AdamState& state, Rng& noise_rng);

// Lot-wise DP-Adam over the same seeded shuffle as finetune; with sigma=0 and
// C=inf it reproduces finetune bit for bit given lot_size == batch_size.
// With a LoRA config, adapters are attached (returned un-merged) and the
// mechanism acts on adapter gradients only.
Model dp_finetune(const Model& m, const std::vector<TokenSeq>& corpus, const DpConfig& dp,
                  const TrainConfig& train, const std::optional<LoraConfig>& lora);

struct DpRunManifest {
    double sigma = 0.0;
    double clip_norm = 0.0;
    double delta = 0.0;
    long long lot_size = 0;
    long long lots_per_epoch = 0;
    long long total_steps = 0;
    uint64_t seed = 0;
};

DpRunManifest dp_run_manifest(const DpConfig& dp, const TrainConfig& train, size_t corpus_size);

} // namespace cge
