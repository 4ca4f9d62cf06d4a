#include "cge/dp.hpp"

#include <cmath>

#include "cge/lora.hpp"
#include "cge/parallel.hpp"

namespace cge {

void DpConfig::validate() const {
    if (!(clip_norm > 0.0)) throw ValidationError("dp config: clip_norm must be positive");
    if (noise_multiplier < 0.0) throw ValidationError("dp config: noise_multiplier must be >= 0");
    if (delta < 0.0 || delta >= 1.0) throw ValidationError("dp config: delta must lie in [0,1)");
    if (lot_size < 1) throw ValidationError("dp config: lot_size must be positive");
}

GradientVec clip_gradient(const GradientVec& g, double clip_norm) {
    if (!(clip_norm > 0.0)) throw ValidationError("clip_gradient: clip norm must be positive");
    GradientVec out = g;
    const double norm = out.l2_norm();
    if (norm > 0.0) {
        const double factor = std::min(1.0, clip_norm / norm);
        if (factor < 1.0) {
            for (double& v : out.data) v *= factor;
        }
    }
    return out;
}

GradientVec dp_noisy_mean(const std::vector<GradientVec>& per_example, const DpConfig& dp,
                          Rng& noise_rng) {
    if (per_example.empty()) throw ValidationError("dp: empty lot");
    GradientVec mean;
    mean.data.assign(per_example.front().data.size(), 0.0);
    for (const GradientVec& g : per_example) {
        if (g.data.size() != mean.data.size()) throw ValidationError("dp: gradient shape mismatch");
        const GradientVec clipped = clip_gradient(g, dp.clip_norm);
        for (size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += clipped.data[i];
    }
    if (dp.noise_multiplier > 0.0) {
        const double scale = dp.noise_multiplier * dp.clip_norm;
        for (double& v : mean.data) v += scale * noise_rng.next_gauss();
    }
    const double inv = 1.0 / static_cast<double>(per_example.size());
    for (double& v : mean.data) v *= inv;
    return mean;
}

void dp_adam_step(std::vector<double>& params, const std::vector<GradientVec>& per_example,
                  const DpConfig& dp, const TrainConfig& train, AdamState& state, Rng& noise_rng) {
    dp.validate();
    adam_step(params, dp_noisy_mean(per_example, dp, noise_rng), state, train);
}

Model dp_finetune(const Model& m, const std::vector<TokenSeq>& corpus, const DpConfig& dp,
                  const TrainConfig& train, const std::optional<LoraConfig>& lora) {
    dp.validate();
    train.validate();
    if (corpus.empty()) throw ValidationError("dp_finetune: empty corpus");

    Model out = m;
    if (lora) {
        lora_attach(out, *lora, Rng(train.seed).derive("lora").next_u64());
    }
    AdamState state = AdamState::init(out.trainable().size());
    Rng noise_rng = Rng(dp.seed).derive("noise");
    std::vector<GradientVec> grads;

    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        const std::vector<size_t> order = epoch_order(corpus.size(), train.seed, epoch);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(dp.lot_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(dp.lot_size));
            grads.assign(end - start, {});
            parallel_for(end - start, [&](size_t i) {
                grads[i] = example_loss_grad(out, corpus[order[start + i]]);
            });
            dp_adam_step(out.trainable(), grads, dp, train, state, noise_rng);
        }
    }
    return out;
}

DpRunManifest dp_run_manifest(const DpConfig& dp, const TrainConfig& train, size_t corpus_size) {
    DpRunManifest man;
    man.sigma = dp.noise_multiplier;
    man.clip_norm = dp.clip_norm;
    man.delta = dp.delta > 0.0 ? dp.delta : 1.0 / static_cast<double>(corpus_size);
    man.lot_size = dp.lot_size;
    man.lots_per_epoch =
        static_cast<long long>((corpus_size + static_cast<size_t>(dp.lot_size) - 1) /
                               static_cast<size_t>(dp.lot_size));
    man.total_steps = man.lots_per_epoch * train.epochs;
    man.seed = dp.seed;
    return man;
}

} // namespace cge
