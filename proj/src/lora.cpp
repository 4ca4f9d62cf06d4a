#include "cge/lora.hpp"

#include "cge/rng.hpp"

namespace cge {

void lora_attach(Model& m, const LoraConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (m.lora_active()) {
        throw ValidationError("lora_attach: adapters already attached");
    }
    LoraAdapters ad;
    ad.cfg = cfg;
    const int C = m.config.d_model;
    const int r = cfg.rank;

    size_t off = 0;
    for (int l = 0; l < m.config.n_layers; ++l) {
        const ParamLayout::Layer& lw = m.layout.layers[static_cast<size_t>(l)];
        for (auto [proj, base] : {std::pair<const char*, size_t>{"wq", lw.wq},
                                  {"wk", lw.wk},
                                  {"wv", lw.wv},
                                  {"wo", lw.wo}}) {
            LoraAdapters::Target tg;
            tg.layer = l;
            tg.proj = proj;
            tg.base_offset = base;
            tg.out_dim = C;
            tg.in_dim = C;
            tg.a_off = off;
            off += static_cast<size_t>(r) * C;
            tg.b_off = off;
            off += static_cast<size_t>(C) * r;
            ad.targets.push_back(std::move(tg));
        }
    }
    ad.w.assign(off, 0.0);

    Rng rng = Rng(seed).derive("lora_init");
    const double std = 0.01;
    for (const LoraAdapters::Target& tg : ad.targets) {
        for (size_t i = 0; i < static_cast<size_t>(r) * tg.in_dim; ++i) {
            ad.w[tg.a_off + i] = std * rng.next_gauss();
        }
        // B stays zero
    }
    m.lora = std::move(ad);
}

void lora_merge(Model& m) {
    if (!m.lora_active()) {
        throw ValidationError("lora_merge: no adapters attached");
    }
    const LoraAdapters& ad = *m.lora;
    const double s = ad.cfg.scaling();
    const int r = ad.cfg.rank;
    for (const LoraAdapters::Target& tg : ad.targets) {
        const double* A = ad.w.data() + tg.a_off;
        const double* B = ad.w.data() + tg.b_off;
        double* W = m.weights.data() + tg.base_offset;
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
    m.lora.reset();
}

} // namespace cge
