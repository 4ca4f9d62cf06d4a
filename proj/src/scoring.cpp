#include "cge/scoring.hpp"

#include <algorithm>
#include <cmath>

namespace cge {

ScoreMethod score_method_from_string(const std::string& s) {
    if (s == "contrastive") return ScoreMethod::contrastive;
    if (s == "msp") return ScoreMethod::msp;
    if (s == "energy") return ScoreMethod::energy;
    if (s == "gradnorm_uniform") return ScoreMethod::gradnorm_uniform;
    if (s == "negprob_pt") return ScoreMethod::negprob_pt;
    if (s == "prob_ft") return ScoreMethod::prob_ft;
    if (s == "gradnorm_pt") return ScoreMethod::gradnorm_pt;
    throw ValidationError("unknown scoring method '" + s + "'");
}

std::string to_string(ScoreMethod m) {
    switch (m) {
        case ScoreMethod::contrastive: return "contrastive";
        case ScoreMethod::msp: return "msp";
        case ScoreMethod::energy: return "energy";
        case ScoreMethod::gradnorm_uniform: return "gradnorm_uniform";
        case ScoreMethod::negprob_pt: return "negprob_pt";
        case ScoreMethod::prob_ft: return "prob_ft";
        case ScoreMethod::gradnorm_pt: return "gradnorm_pt";
    }
    throw ValidationError("unknown scoring method");
}

const std::vector<ScoreMethod>& all_score_methods() {
    static const std::vector<ScoreMethod> methods = {
        ScoreMethod::msp,         ScoreMethod::energy,  ScoreMethod::gradnorm_uniform,
        ScoreMethod::negprob_pt,  ScoreMethod::prob_ft, ScoreMethod::gradnorm_pt,
        ScoreMethod::contrastive,
    };
    return methods;
}

double contrastive_score(const Model& pt, const Model& ft, const TokenSeq& x) {
    require_same_config(pt, ft);
    return sequence_logprob(ft, x) - sequence_logprob(pt, x);
}

namespace {

double logsumexp_row(const std::vector<double>& logits) {
    double maxv = -1e300;
    for (double v : logits) maxv = std::max(maxv, v);
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - maxv);
    return maxv + std::log(denom);
}

} // namespace

double baseline_score(ScoreMethod method, const Model& pt, const Model& ft, const TokenSeq& x) {
    switch (method) {
        case ScoreMethod::contrastive:
            return contrastive_score(pt, ft, x);
        case ScoreMethod::msp: {
            // -sum_t max_v log p(v | x_<t; pt)
            double total = 0.0;
            for (const auto& logits : per_step_logits(pt, x)) {
                const double lse = logsumexp_row(logits);
                double maxv = -1e300;
                for (double v : logits) maxv = std::max(maxv, v);
                total -= maxv - lse;
            }
            return total;
        }
        case ScoreMethod::energy: {
            // sum_t log sum_v exp f(v | x_<t; pt), literal sign per the source
            double total = 0.0;
            for (const auto& logits : per_step_logits(pt, x)) total += logsumexp_row(logits);
            return total;
        }
        case ScoreMethod::gradnorm_uniform:
            return grad_kl_uniform(pt, x).l2_norm();
        case ScoreMethod::negprob_pt:
            return -sequence_logprob(pt, x);
        case ScoreMethod::prob_ft:
            return sequence_logprob(ft, x);
        case ScoreMethod::gradnorm_pt:
            return grad_logprob(pt, x).l2_norm();
    }
    throw ValidationError("unknown scoring method");
}

double score_example(ScoreMethod method, const Model& pt, const Model& ft, const TokenSeq& x,
                     bool per_token_mean) {
    const double raw = baseline_score(method, pt, ft, x);
    return per_token_mean ? raw / static_cast<double>(x.size()) : raw;
}

namespace {

void check_two_classes(const std::vector<ScoreRecord>& records) {
    size_t pos = 0, neg = 0;
    for (const ScoreRecord& r : records) {
        if (!std::isfinite(r.score)) throw ValidationError("metrics: non-finite score");
        (r.novel ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) {
        throw ValidationError("metrics: need at least one novel and one in-distribution example");
    }
}

} // namespace

double auroc(const std::vector<ScoreRecord>& records) {
    check_two_classes(records);
    // Average rank of the positive class (Mann-Whitney), ties get mid-ranks.
    std::vector<size_t> idx(records.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return records[a].score < records[b].score; });
    std::vector<double> rank(records.size());
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j + 1 < idx.size() && records[idx[j + 1]].score == records[idx[i]].score) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    double n_pos = 0.0, n_neg = 0.0;
    for (size_t k = 0; k < records.size(); ++k) {
        if (records[k].novel) {
            pos_rank_sum += rank[k];
            n_pos += 1.0;
        } else {
            n_neg += 1.0;
        }
    }
    const double u = pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    return u / (n_pos * n_neg);
}

double fpr95(const std::vector<ScoreRecord>& records) {
    check_two_classes(records);
    std::vector<double> novel_scores;
    std::vector<double> in_scores;
    for (const ScoreRecord& r : records) {
        (r.novel ? novel_scores : in_scores).push_back(r.score);
    }
    // Largest feasible threshold is the k-th largest novel score with
    // k = ceil(0.95 * n); predicting novel when score >= t then has TPR >= 0.95.
    std::sort(novel_scores.begin(), novel_scores.end(), std::greater<>());
    const size_t n = novel_scores.size();
    const size_t k = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(n)));
    const double threshold = novel_scores[k - 1];
    size_t fp = 0;
    for (double s : in_scores) fp += (s >= threshold) ? 1 : 0;
    return static_cast<double>(fp) / static_cast<double>(in_scores.size());
}

TaylorReport taylor_check(const Model& pt, const Model& ft, const TokenSeq& x) {
    require_same_config(pt, ft);
    if (pt.lora_active() || ft.lora_active()) {
        throw ValidationError("taylor_check: merge adapters first");
    }
    TaylorReport rep;
    rep.s_exact = contrastive_score(pt, ft, x);
    const GradientVec g = grad_logprob(pt, x);
    std::vector<double> delta(pt.weights.size());
    for (size_t i = 0; i < delta.size(); ++i) delta[i] = ft.weights[i] - pt.weights[i];
    rep.s_linear = dot(delta, g.data);
    rep.delta_norm = l2_norm(delta);
    rep.abs_gap = std::abs(rep.s_exact - rep.s_linear);
    rep.rel_gap = rep.abs_gap / std::max(std::abs(rep.s_exact), 1e-12);
    return rep;
}

} // namespace cge
