#include "cge/model.hpp"

#include <algorithm>
#include <cstring>
#include <functional>

#include "cge/rng.hpp"

namespace cge {

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ValidationError("model config: vocab_size must be >= 2");
    if (context_len < 2) throw ValidationError("model config: context_len must be >= 2");
    if (d_model < 1 || n_layers < 1 || d_ff < 1) throw ValidationError("model config: dims must be positive");
    if (n_heads < 1 || d_model % n_heads != 0) {
        throw ValidationError("model config: n_heads must divide d_model");
    }
}

ParamLayout ParamLayout::build(const ModelConfig& cfg) {
    ParamLayout lay;
    size_t off = 0;
    auto add = [&](const std::string& name, std::vector<uint32_t> shape) {
        size_t n = 1;
        for (uint32_t d : shape) n *= d;
        lay.tensors.push_back({name, std::move(shape), off, n});
        size_t at = off;
        off += n;
        return at;
    };
    const auto V = static_cast<uint32_t>(cfg.vocab_size);
    const auto T = static_cast<uint32_t>(cfg.context_len);
    const auto C = static_cast<uint32_t>(cfg.d_model);
    const auto F = static_cast<uint32_t>(cfg.d_ff);

    lay.tok_emb = add("tok_emb", {V, C});
    lay.pos_emb = add("pos_emb", {T, C});
    lay.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        auto& L = lay.layers[static_cast<size_t>(l)];
        L.ln1_g = add(p + "ln1.gamma", {C});
        L.ln1_b = add(p + "ln1.beta", {C});
        L.wq = add(p + "attn.wq", {C, C});
        L.wk = add(p + "attn.wk", {C, C});
        L.wv = add(p + "attn.wv", {C, C});
        L.wo = add(p + "attn.wo", {C, C});
        L.ln2_g = add(p + "ln2.gamma", {C});
        L.ln2_b = add(p + "ln2.beta", {C});
        L.w1 = add(p + "mlp.w1", {F, C});
        L.w2 = add(p + "mlp.w2", {C, F});
    }
    lay.lnf_g = add("lnf.gamma", {C});
    lay.lnf_b = add("lnf.beta", {C});
    lay.head_w = add("head.w", {V, C});
    lay.head_b = add("head.b", {V});
    lay.total = off;
    return lay;
}

size_t ModelConfig::param_count() const {
    validate();
    return ParamLayout::build(*this).total;
}

double GradientVec::l2_norm() const { return cge::l2_norm(data); }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ValidationError("dot: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

void LoraConfig::validate() const {
    if (rank < 1) throw ValidationError("lora config: rank must be positive");
    if (alpha <= 0.0) throw ValidationError("lora config: alpha must be positive");
}

Model random_init(const ModelConfig& cfg, const Vocab& vocab, uint64_t seed) {
    cfg.validate();
    if (vocab.size() != cfg.vocab_size) {
        throw ValidationError("random_init: vocab size does not match config");
    }
    Model m;
    m.config = cfg;
    m.vocab = vocab;
    m.layout = ParamLayout::build(cfg);
    m.weights.assign(m.layout.total, 0.0);

    Rng rng = Rng(seed).derive("init");
    const double std = 0.02;
    for (const TensorInfo& t : m.layout.tensors) {
        const bool gamma = t.name.find("gamma") != std::string::npos;
        const bool bias = t.name.find("beta") != std::string::npos || t.name == "head.b";
        for (size_t i = 0; i < t.size; ++i) {
            double w = 0.0;
            if (gamma) {
                w = 1.0;
            } else if (!bias) {
                w = std * rng.next_gauss();
            }
            m.weights[t.offset + i] = w;
        }
    }
    return m;
}

namespace {

constexpr double kLnEps = 1e-5;

void matvec(const double* W, const double* x, double* y, int out_dim, int in_dim) {
    for (int o = 0; o < out_dim; ++o) {
        const double* row = W + static_cast<size_t>(o) * in_dim;
        double acc = 0.0;
        for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

void ln_forward(const double* x, const double* g, const double* b, double* out, double* mean_out,
                double* rstd_out, int C) {
    double mean = 0.0;
    for (int i = 0; i < C; ++i) mean += x[i];
    mean /= C;
    double var = 0.0;
    for (int i = 0; i < C; ++i) {
        const double d = x[i] - mean;
        var += d * d;
    }
    var /= C;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < C; ++i) {
        out[i] = g[i] * ((x[i] - mean) * rstd) + b[i];
    }
    *mean_out = mean;
    *rstd_out = rstd;
}

// dx for one position; accumulates into dg/db.
void ln_backward(const double* x, const double* g, double mean, double rstd, const double* dout,
                 double* dx, double* dg, double* db, int C) {
    double dnorm_mean = 0.0;
    double dnorm_norm_mean = 0.0;
    for (int i = 0; i < C; ++i) {
        const double norm = (x[i] - mean) * rstd;
        const double dnorm = g[i] * dout[i];
        dnorm_mean += dnorm;
        dnorm_norm_mean += dnorm * norm;
    }
    dnorm_mean /= C;
    dnorm_norm_mean /= C;
    for (int i = 0; i < C; ++i) {
        const double norm = (x[i] - mean) * rstd;
        const double dnorm = g[i] * dout[i];
        dx[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rstd;
        dg[i] += dout[i] * norm;
        db[i] += dout[i];
    }
}

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluK * x * x * x)));
}

double gelu_grad(double x) {
    const double u = kGeluC * (x + kGeluK * x * x * x);
    const double t = std::tanh(u);
    const double sech2 = 1.0 - t * t;
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kGeluC * (1.0 + 3.0 * kGeluK * x * x);
}

struct LayerActs {
    std::vector<double> x_in;                 // [T,C]
    std::vector<double> ln1_out;              // [T,C]
    std::vector<double> ln1_mean, ln1_rstd;   // [T]
    std::vector<double> q, k, v;              // [T,C]
    std::vector<double> att;                  // [H,T,T]
    std::vector<double> att_out;              // [T,C]
    std::vector<double> x_mid;                // [T,C]
    std::vector<double> ln2_out;              // [T,C]
    std::vector<double> ln2_mean, ln2_rstd;   // [T]
    std::vector<double> ff_pre, ff_act;       // [T,F]
};

struct Acts {
    int T = 0;
    std::vector<LayerActs> layers;
    std::vector<double> x_final;              // [T,C]
    std::vector<double> lnf_out;              // [T,C]
    std::vector<double> lnf_mean, lnf_rstd;   // [T]
    std::vector<double> logits;               // [T,V]
};

// input includes the leading bos token.
void forward(const Model& m, const double* w, const TokenSeq& input, Acts& acts) {
    const ModelConfig& cfg = m.config;
    const int T = static_cast<int>(input.size());
    const int C = cfg.d_model;
    const int H = cfg.n_heads;
    const int hs = C / H;
    const int F = cfg.d_ff;
    const int V = cfg.vocab_size;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    const ParamLayout& lay = m.layout;

    if (T < 1 || T > cfg.context_len) {
        throw ValidationError("forward: input length " + std::to_string(T) +
                              " exceeds context_len " + std::to_string(cfg.context_len));
    }
    for (TokenId t : input) {
        if (t < 0 || t >= V) throw ValidationError("forward: token id out of vocab range");
    }

    acts.T = T;
    acts.layers.assign(static_cast<size_t>(cfg.n_layers), {});
    std::vector<double> x(static_cast<size_t>(T) * C);
    for (int t = 0; t < T; ++t) {
        const double* emb = w + lay.tok_emb + static_cast<size_t>(input[t]) * C;
        const double* pos = w + lay.pos_emb + static_cast<size_t>(t) * C;
        for (int c = 0; c < C; ++c) x[static_cast<size_t>(t) * C + c] = emb[c] + pos[c];
    }

    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerActs& la = acts.layers[static_cast<size_t>(l)];
        const ParamLayout::Layer& lw = lay.layers[static_cast<size_t>(l)];
        la.x_in = x;
        la.ln1_out.resize(static_cast<size_t>(T) * C);
        la.ln1_mean.resize(T);
        la.ln1_rstd.resize(T);
        la.q.resize(static_cast<size_t>(T) * C);
        la.k.resize(static_cast<size_t>(T) * C);
        la.v.resize(static_cast<size_t>(T) * C);
        la.att.assign(static_cast<size_t>(H) * T * T, 0.0);
        la.att_out.assign(static_cast<size_t>(T) * C, 0.0);

        for (int t = 0; t < T; ++t) {
            ln_forward(&la.x_in[static_cast<size_t>(t) * C], w + lw.ln1_g, w + lw.ln1_b,
                       &la.ln1_out[static_cast<size_t>(t) * C], &la.ln1_mean[t], &la.ln1_rstd[t], C);
            matvec(w + lw.wq, &la.ln1_out[static_cast<size_t>(t) * C], &la.q[static_cast<size_t>(t) * C], C, C);
            matvec(w + lw.wk, &la.ln1_out[static_cast<size_t>(t) * C], &la.k[static_cast<size_t>(t) * C], C, C);
            matvec(w + lw.wv, &la.ln1_out[static_cast<size_t>(t) * C], &la.v[static_cast<size_t>(t) * C], C, C);

            // causal attention for position t, all heads
            for (int h = 0; h < H; ++h) {
                const double* qh = &la.q[static_cast<size_t>(t) * C + static_cast<size_t>(h) * hs];
                double* att_row = &la.att[(static_cast<size_t>(h) * T + t) * T];
                double maxs = -1e30;
                for (int j = 0; j <= t; ++j) {
                    const double* kh = &la.k[static_cast<size_t>(j) * C + static_cast<size_t>(h) * hs];
                    double s = 0.0;
                    for (int d = 0; d < hs; ++d) s += qh[d] * kh[d];
                    s *= scale;
                    att_row[j] = s;
                    if (s > maxs) maxs = s;
                }
                double denom = 0.0;
                for (int j = 0; j <= t; ++j) {
                    att_row[j] = std::exp(att_row[j] - maxs);
                    denom += att_row[j];
                }
                for (int j = 0; j <= t; ++j) att_row[j] /= denom;
                double* out = &la.att_out[static_cast<size_t>(t) * C + static_cast<size_t>(h) * hs];
                for (int j = 0; j <= t; ++j) {
                    const double* vh = &la.v[static_cast<size_t>(j) * C + static_cast<size_t>(h) * hs];
                    const double a = att_row[j];
                    for (int d = 0; d < hs; ++d) out[d] += a * vh[d];
                }
            }
        }

        la.x_mid.resize(static_cast<size_t>(T) * C);
        std::vector<double> proj(C);
        for (int t = 0; t < T; ++t) {
            matvec(w + lw.wo, &la.att_out[static_cast<size_t>(t) * C], proj.data(), C, C);
            for (int c = 0; c < C; ++c) {
                la.x_mid[static_cast<size_t>(t) * C + c] = la.x_in[static_cast<size_t>(t) * C + c] + proj[c];
            }
        }

        la.ln2_out.resize(static_cast<size_t>(T) * C);
        la.ln2_mean.resize(T);
        la.ln2_rstd.resize(T);
        la.ff_pre.resize(static_cast<size_t>(T) * F);
        la.ff_act.resize(static_cast<size_t>(T) * F);
        std::vector<double> ff_out(C);
        for (int t = 0; t < T; ++t) {
            ln_forward(&la.x_mid[static_cast<size_t>(t) * C], w + lw.ln2_g, w + lw.ln2_b,
                       &la.ln2_out[static_cast<size_t>(t) * C], &la.ln2_mean[t], &la.ln2_rstd[t], C);
            matvec(w + lw.w1, &la.ln2_out[static_cast<size_t>(t) * C], &la.ff_pre[static_cast<size_t>(t) * F], F, C);
            for (int f = 0; f < F; ++f) {
                la.ff_act[static_cast<size_t>(t) * F + f] = gelu(la.ff_pre[static_cast<size_t>(t) * F + f]);
            }
            matvec(w + lw.w2, &la.ff_act[static_cast<size_t>(t) * F], ff_out.data(), C, F);
            for (int c = 0; c < C; ++c) {
                x[static_cast<size_t>(t) * C + c] = la.x_mid[static_cast<size_t>(t) * C + c] + ff_out[c];
            }
        }
    }

    acts.x_final = x;
    acts.lnf_out.resize(static_cast<size_t>(T) * C);
    acts.lnf_mean.resize(T);
    acts.lnf_rstd.resize(T);
    acts.logits.resize(static_cast<size_t>(T) * V);
    for (int t = 0; t < T; ++t) {
        ln_forward(&acts.x_final[static_cast<size_t>(t) * C], w + lay.lnf_g, w + lay.lnf_b,
                   &acts.lnf_out[static_cast<size_t>(t) * C], &acts.lnf_mean[t], &acts.lnf_rstd[t], C);
        matvec(w + lay.head_w, &acts.lnf_out[static_cast<size_t>(t) * C],
               &acts.logits[static_cast<size_t>(t) * V], V, C);
        const double* hb = w + lay.head_b;
        for (int v = 0; v < V; ++v) acts.logits[static_cast<size_t>(t) * V + v] += hb[v];
    }
}

// Reverse pass; dlogits is [T,V]. Returns the gradient over the model's
// trainable set (projects onto adapters when LoRA is active).
GradientVec backward(const Model& m, const double* w, const TokenSeq& input, const Acts& acts,
                     const std::vector<double>& dlogits) {
    const ModelConfig& cfg = m.config;
    const int T = acts.T;
    const int C = cfg.d_model;
    const int H = cfg.n_heads;
    const int hs = C / H;
    const int F = cfg.d_ff;
    const int V = cfg.vocab_size;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    const ParamLayout& lay = m.layout;

    std::vector<double> gw(lay.total, 0.0);
    std::vector<double> dx(static_cast<size_t>(T) * C, 0.0);

    // head and final layer norm
    {
        std::vector<double> dlnf(static_cast<size_t>(T) * C, 0.0);
        for (int t = 0; t < T; ++t) {
            const double* dl = &dlogits[static_cast<size_t>(t) * V];
            const double* f = &acts.lnf_out[static_cast<size_t>(t) * C];
            for (int v = 0; v < V; ++v) {
                const double d = dl[v];
                if (d == 0.0) continue;
                double* wrow = gw.data() + lay.head_w + static_cast<size_t>(v) * C;
                const double* hw = w + lay.head_w + static_cast<size_t>(v) * C;
                double* dlnf_t = &dlnf[static_cast<size_t>(t) * C];
                for (int c = 0; c < C; ++c) {
                    wrow[c] += d * f[c];
                    dlnf_t[c] += d * hw[c];
                }
                gw[lay.head_b + static_cast<size_t>(v)] += d;
            }
        }
        for (int t = 0; t < T; ++t) {
            ln_backward(&acts.x_final[static_cast<size_t>(t) * C], w + lay.lnf_g, acts.lnf_mean[t],
                        acts.lnf_rstd[t], &dlnf[static_cast<size_t>(t) * C],
                        &dx[static_cast<size_t>(t) * C], gw.data() + lay.lnf_g, gw.data() + lay.lnf_b, C);
        }
    }

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerActs& la = acts.layers[static_cast<size_t>(l)];
        const ParamLayout::Layer& lw = lay.layers[static_cast<size_t>(l)];

        // mlp block: x3 = x_mid + W2 gelu(W1 ln2(x_mid)); dx currently holds dx3
        std::vector<double> dx_mid(static_cast<size_t>(T) * C, 0.0);
        {
            std::vector<double> dff_act(F), dff_pre(F), dln2(static_cast<size_t>(T) * C, 0.0);
            for (int t = 0; t < T; ++t) {
                const double* dx3 = &dx[static_cast<size_t>(t) * C];
                const double* act = &la.ff_act[static_cast<size_t>(t) * F];
                std::fill(dff_act.begin(), dff_act.end(), 0.0);
                for (int c = 0; c < C; ++c) {
                    const double d = dx3[c];
                    const double* w2row = w + lw.w2 + static_cast<size_t>(c) * F;
                    double* gw2row = gw.data() + lw.w2 + static_cast<size_t>(c) * F;
                    for (int f = 0; f < F; ++f) {
                        dff_act[f] += d * w2row[f];
                        gw2row[f] += d * act[f];
                    }
                }
                const double* pre = &la.ff_pre[static_cast<size_t>(t) * F];
                for (int f = 0; f < F; ++f) dff_pre[f] = dff_act[f] * gelu_grad(pre[f]);
                const double* c_in = &la.ln2_out[static_cast<size_t>(t) * C];
                double* dln2_t = &dln2[static_cast<size_t>(t) * C];
                for (int f = 0; f < F; ++f) {
                    const double d = dff_pre[f];
                    if (d == 0.0) continue;
                    const double* w1row = w + lw.w1 + static_cast<size_t>(f) * C;
                    double* gw1row = gw.data() + lw.w1 + static_cast<size_t>(f) * C;
                    for (int c = 0; c < C; ++c) {
                        dln2_t[c] += d * w1row[c];
                        gw1row[c] += d * c_in[c];
                    }
                }
            }
            for (int t = 0; t < T; ++t) {
                ln_backward(&la.x_mid[static_cast<size_t>(t) * C], w + lw.ln2_g, la.ln2_mean[t],
                            la.ln2_rstd[t], &dln2[static_cast<size_t>(t) * C],
                            &dx_mid[static_cast<size_t>(t) * C], gw.data() + lw.ln2_g,
                            gw.data() + lw.ln2_b, C);
            }
            for (size_t i = 0; i < dx_mid.size(); ++i) dx_mid[i] += dx[i]; // residual
        }

        // attention block: x_mid = x_in + Wo att_out
        std::vector<double> datt_out(static_cast<size_t>(T) * C, 0.0);
        for (int t = 0; t < T; ++t) {
            const double* d_mid = &dx_mid[static_cast<size_t>(t) * C];
            const double* ao = &la.att_out[static_cast<size_t>(t) * C];
            double* dao = &datt_out[static_cast<size_t>(t) * C];
            for (int c = 0; c < C; ++c) {
                const double d = d_mid[c];
                const double* worow = w + lw.wo + static_cast<size_t>(c) * C;
                double* gworow = gw.data() + lw.wo + static_cast<size_t>(c) * C;
                for (int c2 = 0; c2 < C; ++c2) {
                    dao[c2] += d * worow[c2];
                    gworow[c2] += d * ao[c2];
                }
            }
        }

        std::vector<double> dq(static_cast<size_t>(T) * C, 0.0), dk(static_cast<size_t>(T) * C, 0.0),
            dv(static_cast<size_t>(T) * C, 0.0);
        std::vector<double> datt_row(T), ds_row(T);
        for (int h = 0; h < H; ++h) {
            for (int t = 0; t < T; ++t) {
                const double* att_row = &la.att[(static_cast<size_t>(h) * T + t) * T];
                const double* dout = &datt_out[static_cast<size_t>(t) * C + static_cast<size_t>(h) * hs];
                for (int j = 0; j <= t; ++j) {
                    const double* vh = &la.v[static_cast<size_t>(j) * C + static_cast<size_t>(h) * hs];
                    double* dvh = &dv[static_cast<size_t>(j) * C + static_cast<size_t>(h) * hs];
                    double acc = 0.0;
                    const double a = att_row[j];
                    for (int d = 0; d < hs; ++d) {
                        acc += dout[d] * vh[d];
                        dvh[d] += a * dout[d];
                    }
                    datt_row[j] = acc;
                }
                double inner = 0.0;
                for (int j = 0; j <= t; ++j) inner += att_row[j] * datt_row[j];
                for (int j = 0; j <= t; ++j) ds_row[j] = att_row[j] * (datt_row[j] - inner);
                const double* qh = &la.q[static_cast<size_t>(t) * C + static_cast<size_t>(h) * hs];
                double* dqh = &dq[static_cast<size_t>(t) * C + static_cast<size_t>(h) * hs];
                for (int j = 0; j <= t; ++j) {
                    const double dsj = ds_row[j] * scale;
                    if (dsj == 0.0) continue;
                    const double* kh = &la.k[static_cast<size_t>(j) * C + static_cast<size_t>(h) * hs];
                    double* dkh = &dk[static_cast<size_t>(j) * C + static_cast<size_t>(h) * hs];
                    for (int d = 0; d < hs; ++d) {
                        dqh[d] += dsj * kh[d];
                        dkh[d] += dsj * qh[d];
                    }
                }
            }
        }

        // q/k/v projections and ln1
        std::vector<double> dln1(static_cast<size_t>(T) * C, 0.0);
        auto proj_back = [&](size_t w_off, const std::vector<double>& dy) {
            for (int t = 0; t < T; ++t) {
                const double* dyt = &dy[static_cast<size_t>(t) * C];
                const double* a = &la.ln1_out[static_cast<size_t>(t) * C];
                double* dl = &dln1[static_cast<size_t>(t) * C];
                for (int c = 0; c < C; ++c) {
                    const double d = dyt[c];
                    if (d == 0.0) continue;
                    const double* wrow = w + w_off + static_cast<size_t>(c) * C;
                    double* gwrow = gw.data() + w_off + static_cast<size_t>(c) * C;
                    for (int c2 = 0; c2 < C; ++c2) {
                        dl[c2] += d * wrow[c2];
                        gwrow[c2] += d * a[c2];
                    }
                }
            }
        };
        proj_back(lw.wq, dq);
        proj_back(lw.wk, dk);
        proj_back(lw.wv, dv);

        std::vector<double> dx_in(static_cast<size_t>(T) * C, 0.0);
        for (int t = 0; t < T; ++t) {
            ln_backward(&la.x_in[static_cast<size_t>(t) * C], w + lw.ln1_g, la.ln1_mean[t],
                        la.ln1_rstd[t], &dln1[static_cast<size_t>(t) * C],
                        &dx_in[static_cast<size_t>(t) * C], gw.data() + lw.ln1_g,
                        gw.data() + lw.ln1_b, C);
        }
        for (size_t i = 0; i < dx_in.size(); ++i) dx_in[i] += dx_mid[i]; // residual
        dx = std::move(dx_in);
    }

    // embeddings
    for (int t = 0; t < T; ++t) {
        double* gtok = gw.data() + lay.tok_emb + static_cast<size_t>(input[t]) * C;
        double* gpos = gw.data() + lay.pos_emb + static_cast<size_t>(t) * C;
        const double* d = &dx[static_cast<size_t>(t) * C];
        for (int c = 0; c < C; ++c) {
            gtok[c] += d[c];
            gpos[c] += d[c];
        }
    }

    GradientVec out;
    if (!m.lora_active()) {
        out.data = std::move(gw);
        return out;
    }

    // Project effective-weight gradients onto the adapter pairs:
    // dA = s * B^T dW, dB = s * dW A^T.
    const LoraAdapters& ad = *m.lora;
    const double s = ad.cfg.scaling();
    const int r = ad.cfg.rank;
    out.data.assign(ad.w.size(), 0.0);
    for (const LoraAdapters::Target& tg : ad.targets) {
        const double* dW = gw.data() + tg.base_offset;
        const double* A = ad.w.data() + tg.a_off;
        const double* B = ad.w.data() + tg.b_off;
        double* dA = out.data.data() + tg.a_off;
        double* dB = out.data.data() + tg.b_off;
        for (int o = 0; o < tg.out_dim; ++o) {
            const double* dWrow = dW + static_cast<size_t>(o) * tg.in_dim;
            for (int ri = 0; ri < r; ++ri) {
                const double b = B[static_cast<size_t>(o) * r + ri];
                const double* Arow = A + static_cast<size_t>(ri) * tg.in_dim;
                double* dArow = dA + static_cast<size_t>(ri) * tg.in_dim;
                double accB = 0.0;
                for (int i = 0; i < tg.in_dim; ++i) {
                    dArow[i] += s * b * dWrow[i];
                    accB += dWrow[i] * Arow[i];
                }
                dB[static_cast<size_t>(o) * r + ri] += s * accB;
            }
        }
    }
    return out;
}

TokenSeq with_bos(const Model& m, const TokenSeq& body, size_t drop_last) {
    TokenSeq input;
    input.reserve(body.size() + 1 - drop_last);
    input.push_back(m.vocab.bos_id());
    input.insert(input.end(), body.begin(), body.end() - static_cast<long>(drop_last));
    return input;
}

void check_sequence(const Model& m, const TokenSeq& x) {
    if (x.empty()) throw ValidationError("sequence: empty input");
    if (static_cast<int>(x.size()) > m.config.context_len - 1) {
        throw ValidationError("sequence: length " + std::to_string(x.size()) +
                              " overflows context (max " +
                              std::to_string(m.config.context_len - 1) + ")");
    }
}

} // namespace

std::vector<double> log_softmax(const std::vector<double>& logits) {
    double maxv = -1e300;
    for (double v : logits) maxv = std::max(maxv, v);
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - maxv);
    const double lse = maxv + std::log(denom);
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

EffectiveWeights::EffectiveWeights(const Model& m) {
    if (!m.lora_active()) {
        ptr_ = m.weights.data();
        return;
    }
    owned_ = m.weights;
    const LoraAdapters& ad = *m.lora;
    const double s = ad.cfg.scaling();
    const int r = ad.cfg.rank;
    for (const LoraAdapters::Target& tg : ad.targets) {
        const double* A = ad.w.data() + tg.a_off;
        const double* B = ad.w.data() + tg.b_off;
        double* W = owned_.data() + tg.base_offset;
        for (int o = 0; o < tg.out_dim; ++o) {
            for (int ri = 0; ri < r; ++ri) {
                const double b = s * B[static_cast<size_t>(o) * r + ri];
                if (b == 0.0) continue;
                const double* Arow = A + static_cast<size_t>(ri) * tg.in_dim;
                double* Wrow = W + static_cast<size_t>(o) * tg.in_dim;
                for (int i = 0; i < tg.in_dim; ++i) Wrow[i] += b * Arow[i];
            }
        }
    }
    ptr_ = owned_.data();
}

std::vector<double> next_token_logprobs(const Model& m, const TokenSeq& prefix) {
    if (static_cast<int>(prefix.size()) >= m.config.context_len) {
        throw ValidationError("next_token_logprobs: prefix overflows context");
    }
    TokenSeq input;
    input.reserve(prefix.size() + 1);
    input.push_back(m.vocab.bos_id());
    input.insert(input.end(), prefix.begin(), prefix.end());

    EffectiveWeights eff(m);
    Acts acts;
    forward(m, eff.data(), input, acts);
    const int V = m.config.vocab_size;
    const int T = acts.T;
    std::vector<double> logits(acts.logits.begin() + static_cast<size_t>(T - 1) * V,
                               acts.logits.begin() + static_cast<size_t>(T) * V);
    return log_softmax(logits);
}

std::vector<std::vector<double>> per_step_logits(const Model& m, const TokenSeq& x) {
    check_sequence(m, x);
    const TokenSeq input = with_bos(m, x, 1);
    EffectiveWeights eff(m);
    Acts acts;
    forward(m, eff.data(), input, acts);
    const int V = m.config.vocab_size;
    std::vector<std::vector<double>> rows(x.size());
    for (size_t t = 0; t < x.size(); ++t) {
        rows[t].assign(acts.logits.begin() + t * V, acts.logits.begin() + (t + 1) * V);
    }
    return rows;
}

double sequence_logprob(const Model& m, const TokenSeq& x) {
    check_sequence(m, x);
    const TokenSeq input = with_bos(m, x, 1);
    EffectiveWeights eff(m);
    Acts acts;
    forward(m, eff.data(), input, acts);
    const int V = m.config.vocab_size;
    double total = 0.0;
    for (size_t t = 0; t < x.size(); ++t) {
        std::vector<double> logits(acts.logits.begin() + t * V, acts.logits.begin() + (t + 1) * V);
        total += log_softmax(logits)[static_cast<size_t>(x[t])];
    }
    return total;
}

namespace {

GradientVec grad_with_dlogits(const Model& m, const TokenSeq& x,
                              const std::function<void(const double*, int, int, double*)>& fill_row) {
    check_sequence(m, x);
    const TokenSeq input = with_bos(m, x, 1);
    EffectiveWeights eff(m);
    Acts acts;
    forward(m, eff.data(), input, acts);
    const int V = m.config.vocab_size;
    const int T = acts.T;
    std::vector<double> dlogits(static_cast<size_t>(T) * V);
    for (int t = 0; t < T; ++t) {
        fill_row(&acts.logits[static_cast<size_t>(t) * V], V, t,
                 &dlogits[static_cast<size_t>(t) * V]);
    }
    return backward(m, eff.data(), input, acts, dlogits);
}

void softmax_row(const double* logits, int V, std::vector<double>& probs) {
    probs.resize(V);
    double maxv = -1e300;
    for (int v = 0; v < V; ++v) maxv = std::max(maxv, logits[v]);
    double denom = 0.0;
    for (int v = 0; v < V; ++v) {
        probs[v] = std::exp(logits[v] - maxv);
        denom += probs[v];
    }
    for (int v = 0; v < V; ++v) probs[v] /= denom;
}

} // namespace

GradientVec grad_logprob(const Model& m, const TokenSeq& x) {
    std::vector<double> probs;
    return grad_with_dlogits(m, x, [&](const double* logits, int V, int t, double* out) {
        softmax_row(logits, V, probs);
        for (int v = 0; v < V; ++v) out[v] = -probs[v];
        out[x[static_cast<size_t>(t)]] += 1.0;
    });
}

GradientVec grad_kl_uniform(const Model& m, const TokenSeq& x) {
    std::vector<double> probs;
    const double u = 1.0 / m.config.vocab_size;
    return grad_with_dlogits(m, x, [&](const double* logits, int V, int, double* out) {
        softmax_row(logits, V, probs);
        for (int v = 0; v < V; ++v) out[v] = probs[v] - u;
    });
}

DecoderSession::DecoderSession(const Model& m) : model_(&m), eff_(m) {
    const ModelConfig& cfg = m.config;
    k_cache_.assign(static_cast<size_t>(cfg.n_layers),
                    std::vector<double>(static_cast<size_t>(cfg.context_len) * cfg.d_model));
    v_cache_ = k_cache_;
    logits_.resize(cfg.vocab_size);
    push(m.vocab.bos_id());
}

const std::vector<double>& DecoderSession::push(TokenId tok) {
    const Model& m = *model_;
    const ModelConfig& cfg = m.config;
    const int C = cfg.d_model;
    const int H = cfg.n_heads;
    const int hs = C / H;
    const int F = cfg.d_ff;
    const int V = cfg.vocab_size;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    const ParamLayout& lay = m.layout;
    const double* w = eff_.data();
    const int p = pos_;

    if (p >= cfg.context_len) throw ValidationError("decoder session: context overflow");
    if (tok < 0 || tok >= V) throw ValidationError("decoder session: token id out of range");

    std::vector<double> x(C), a(C), q(C), buf(C), ff_pre(F);
    const double* emb = w + lay.tok_emb + static_cast<size_t>(tok) * C;
    const double* pe = w + lay.pos_emb + static_cast<size_t>(p) * C;
    for (int c = 0; c < C; ++c) x[c] = emb[c] + pe[c];

    double mean, rstd;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const ParamLayout::Layer& lw = lay.layers[static_cast<size_t>(l)];
        double* kc = k_cache_[static_cast<size_t>(l)].data();
        double* vc = v_cache_[static_cast<size_t>(l)].data();

        ln_forward(x.data(), w + lw.ln1_g, w + lw.ln1_b, a.data(), &mean, &rstd, C);
        matvec(w + lw.wq, a.data(), q.data(), C, C);
        matvec(w + lw.wk, a.data(), kc + static_cast<size_t>(p) * C, C, C);
        matvec(w + lw.wv, a.data(), vc + static_cast<size_t>(p) * C, C, C);

        std::vector<double> att_out(C, 0.0), att_row(p + 1);
        for (int h = 0; h < H; ++h) {
            const double* qh = q.data() + static_cast<size_t>(h) * hs;
            double maxs = -1e30;
            for (int j = 0; j <= p; ++j) {
                const double* kh = kc + static_cast<size_t>(j) * C + static_cast<size_t>(h) * hs;
                double s = 0.0;
                for (int d = 0; d < hs; ++d) s += qh[d] * kh[d];
                s *= scale;
                att_row[j] = s;
                if (s > maxs) maxs = s;
            }
            double denom = 0.0;
            for (int j = 0; j <= p; ++j) {
                att_row[j] = std::exp(att_row[j] - maxs);
                denom += att_row[j];
            }
            for (int j = 0; j <= p; ++j) att_row[j] /= denom;
            double* out = att_out.data() + static_cast<size_t>(h) * hs;
            for (int j = 0; j <= p; ++j) {
                const double* vh = vc + static_cast<size_t>(j) * C + static_cast<size_t>(h) * hs;
                const double av = att_row[j];
                for (int d = 0; d < hs; ++d) out[d] += av * vh[d];
            }
        }
        matvec(w + lw.wo, att_out.data(), buf.data(), C, C);
        for (int c = 0; c < C; ++c) x[c] += buf[c];

        ln_forward(x.data(), w + lw.ln2_g, w + lw.ln2_b, a.data(), &mean, &rstd, C);
        matvec(w + lw.w1, a.data(), ff_pre.data(), F, C);
        for (int f = 0; f < F; ++f) ff_pre[f] = gelu(ff_pre[f]);
        matvec(w + lw.w2, ff_pre.data(), buf.data(), C, F);
        for (int c = 0; c < C; ++c) x[c] += buf[c];
    }

    ln_forward(x.data(), w + lay.lnf_g, w + lay.lnf_b, a.data(), &mean, &rstd, C);
    matvec(w + lay.head_w, a.data(), logits_.data(), V, C);
    const double* hb = w + lay.head_b;
    for (int v = 0; v < V; ++v) logits_[static_cast<size_t>(v)] += hb[v];

    pos_ = p + 1;
    return logits_;
}

uint64_t weights_checksum(const Model& m) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&](const std::vector<double>& v) {
        for (double x : v) {
            uint64_t bits;
            std::memcpy(&bits, &x, sizeof(bits));
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 0x100000001b3ull;
            }
        }
    };
    feed(m.weights);
    if (m.lora_active()) feed(m.lora->w);
    return h;
}

} // namespace cge
