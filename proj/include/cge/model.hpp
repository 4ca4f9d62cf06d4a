#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cge/errors.hpp"
#include "cge/vocab.hpp"

namespace cge {

struct ModelConfig {
    int vocab_size = 47;
    int context_len = 64;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;

    void validate() const;
    size_t param_count() const;
    bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
    std::string name;
    std::vector<uint32_t> shape;
    size_t offset = 0;
    size_t size = 0;
};

// Offsets into the flat weight buffer. Every tensor's shape is a pure
// function of the config, so two models with equal config are congruent.
struct ParamLayout {
    struct Layer {
        size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, w2;
    };
    size_t tok_emb = 0;
    size_t pos_emb = 0;
    std::vector<Layer> layers;
    size_t lnf_g = 0, lnf_b = 0;
    size_t head_w = 0, head_b = 0;
    size_t total = 0;
    std::vector<TensorInfo> tensors;

    static ParamLayout build(const ModelConfig& cfg);
};

// Dense gradient congruent with a parameter set (full weights, or the
// adapter set when LoRA is attached).
struct GradientVec {
    std::vector<double> data;

    size_t size() const { return data.size(); }
    double l2_norm() const;
};

double dot(const std::vector<double>& a, const std::vector<double>& b);
double l2_norm(const std::vector<double>& v);

struct LoraConfig {
    int rank = 8;
    double alpha = 16.0;

    double scaling() const { return alpha / static_cast<double>(rank); }
    void validate() const;
};

// Low-rank pairs on the attention q/k/v/o projections. Effective delta for
// a target W [out,in] is scaling * B[out,r] * A[r,in]; B starts at zero so a
// fresh attach leaves the forward function untouched.
struct LoraAdapters {
    struct Target {
        int layer;
        std::string proj; // "wq" | "wk" | "wv" | "wo"
        size_t base_offset;
        int out_dim, in_dim;
        size_t a_off, b_off; // offsets into the adapter buffer
    };
    LoraConfig cfg;
    std::vector<Target> targets;
    std::vector<double> w;
};

struct Model {
    ModelConfig config;
    Vocab vocab;
    std::vector<double> weights;
    ParamLayout layout;
    std::optional<LoraAdapters> lora;

    bool lora_active() const { return lora.has_value(); }
    // The buffer gradient descent acts on.
    std::vector<double>& trainable() { return lora ? lora->w : weights; }
    const std::vector<double>& trainable() const { return lora ? lora->w : weights; }
};

Model random_init(const ModelConfig& cfg, const Vocab& vocab, uint64_t seed);

inline void require_same_config(const Model& a, const Model& b) {
    if (!(a.config == b.config) || !(a.vocab == b.vocab)) {
        throw ValidationError("models do not share config and vocab");
    }
}

// Log-probabilities over the next token after [bos] + prefix. Normalized:
// logsumexp is 0 to within 1e-9 for any weights.
std::vector<double> next_token_logprobs(const Model& m, const TokenSeq& prefix);

// log p(x) = sum_t log p(x_t | bos, x_<t). Requires len(x) <= context_len-1.
double sequence_logprob(const Model& m, const TokenSeq& x);

// Raw logits at every step of x; row t scores the prediction of x[t].
std::vector<std::vector<double>> per_step_logits(const Model& m, const TokenSeq& x);

// Exact reverse-mode gradient of sequence_logprob w.r.t. the trainable set.
GradientVec grad_logprob(const Model& m, const TokenSeq& x);

// Gradient of sum_t KL(uniform || p(.|x_<t)) w.r.t. the trainable set.
GradientVec grad_kl_uniform(const Model& m, const TokenSeq& x);

std::vector<double> log_softmax(const std::vector<double>& logits);

// Base weights with any LoRA delta folded in (borrowing when no adapters).
class EffectiveWeights {
  public:
    explicit EffectiveWeights(const Model& m);
    const double* data() const { return ptr_; }

  private:
    std::vector<double> owned_;
    const double* ptr_;
};

// Incremental decoder with per-layer K/V caches; push() feeds one token and
// returns the logits for the next position. Bit-identical to the batch
// forward pass (same accumulation order).
class DecoderSession {
  public:
    explicit DecoderSession(const Model& m);

    // Number of body tokens pushed (bos excluded).
    int length() const { return pos_ - 1; }
    int max_body_len() const { return model_->config.context_len - 1; }

    const std::vector<double>& push(TokenId t);
    const std::vector<double>& logits() const { return logits_; }
    std::vector<double> logprobs() const { return log_softmax(logits_); }

  private:
    const Model* model_;
    EffectiveWeights eff_;
    int pos_ = 0;
    std::vector<std::vector<double>> k_cache_, v_cache_; // per layer [ctx*C]
    std::vector<double> logits_;
};

uint64_t weights_checksum(const Model& m);

} // namespace cge
