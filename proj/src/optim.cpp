#include "cge/optim.hpp"

#include <numeric>

#include "cge/parallel.hpp"
#include "cge/rng.hpp"

namespace cge {

void TrainConfig::validate() const {
    if (learning_rate < 0.0) throw ValidationError("train config: learning_rate must be >= 0");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
        throw ValidationError("train config: betas must lie in (0,1)");
    }
    if (epsilon <= 0.0) throw ValidationError("train config: epsilon must be positive");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be positive");
    if (epochs < 0) throw ValidationError("train config: epochs must be >= 0");
}

void adam_step(std::vector<double>& params, const GradientVec& grads, AdamState& state,
               const TrainConfig& cfg) {
    if (grads.data.size() != params.size() || state.m.size() != params.size()) {
        throw ValidationError("adam_step: shape mismatch between params, grads and state");
    }
    state.step += 1;
    const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = grads.data[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / b1t;
        const double vhat = state.v[i] / b2t;
        params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

GradientVec example_loss_grad(const Model& m, const TokenSeq& x) {
    GradientVec g = grad_logprob(m, x);
    const double s = -1.0 / static_cast<double>(x.size());
    for (double& v : g.data) v *= s;
    return g;
}

double mean_nll_per_token(const Model& m, const std::vector<TokenSeq>& corpus) {
    if (corpus.empty()) throw ValidationError("mean_nll_per_token: empty corpus");
    std::vector<double> nll(corpus.size());
    parallel_for(corpus.size(), [&](size_t i) {
        nll[i] = -sequence_logprob(m, corpus[i]) / static_cast<double>(corpus[i].size());
    });
    return std::accumulate(nll.begin(), nll.end(), 0.0) / static_cast<double>(corpus.size());
}

std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng = Rng(seed).derive("shuffle", static_cast<uint64_t>(epoch));
    rng.shuffle(order);
    return order;
}

Model finetune(const Model& m, const std::vector<TokenSeq>& corpus, const TrainConfig& cfg) {
    cfg.validate();
    if (corpus.empty()) throw ValidationError("finetune: empty corpus");
    for (const TokenSeq& x : corpus) {
        if (x.empty() || static_cast<int>(x.size()) > m.config.context_len - 1) {
            throw ValidationError("finetune: corpus sequence length out of range");
        }
    }

    Model out = m;
    AdamState state = AdamState::init(out.trainable().size());
    std::vector<GradientVec> grads;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<size_t> order = epoch_order(corpus.size(), cfg.seed, epoch);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            grads.assign(end - start, {});
            parallel_for(end - start, [&](size_t i) {
                grads[i] = example_loss_grad(out, corpus[order[start + i]]);
            });
            GradientVec mean;
            mean.data.assign(out.trainable().size(), 0.0);
            for (const GradientVec& g : grads) {
                for (size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += g.data[i];
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (double& v : mean.data) v *= inv;
            adam_step(out.trainable(), mean, state, cfg);
        }
    }
    return out;
}

} // namespace cge
