#pragma once

#include <cstdint>
#include <vector>

#include "cge/model.hpp"

namespace cge {

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 4;
    int epochs = 3;
    uint64_t seed = 0;

    void validate() const;
};

struct AdamState {
    int64_t step = 0;
    std::vector<double> m, v;

    static AdamState init(size_t n) {
        AdamState s;
        s.m.assign(n, 0.0);
        s.v.assign(n, 0.0);
        return s;
    }
};

// One Adam update with bias correction; interprets grads as a loss gradient.
void adam_step(std::vector<double>& params, const GradientVec& grads, AdamState& state,
               const TrainConfig& cfg);

// Gradient of the per-example loss -log p(x) / len(x) over the trainable set.
GradientVec example_loss_grad(const Model& m, const TokenSeq& x);

// Mean per-token negative log-likelihood over a corpus.
double mean_nll_per_token(const Model& m, const std::vector<TokenSeq>& corpus);

// Adam training over seeded epoch shuffles; batch loss is the mean of the
// per-example per-token losses. Returns new parameters, input untouched.
// Trains the adapter set when LoRA is attached.
Model finetune(const Model& m, const std::vector<TokenSeq>& corpus, const TrainConfig& cfg);

// Deterministic epoch order shared by finetune and dp_finetune.
std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch);

} // namespace cge
