#pragma once

#include <string>
#include <vector>

#include "cge/model.hpp"

namespace cge {

struct ScoreRecord {
    size_t index = 0;
    double score = 0.0; // higher = more novel
    bool novel = false;
};

enum class ScoreMethod {
    contrastive,
    msp,
    energy,
    gradnorm_uniform,
    negprob_pt,
    prob_ft,
    gradnorm_pt,
};

ScoreMethod score_method_from_string(const std::string& s);
std::string to_string(ScoreMethod m);
const std::vector<ScoreMethod>& all_score_methods();

// log p(x; ft) - log p(x; pt).
double contrastive_score(const Model& pt, const Model& ft, const TokenSeq& x);

// Appendix-style baselines, literal raw-sum forms, higher = more novel.
double baseline_score(ScoreMethod method, const Model& pt, const Model& ft, const TokenSeq& x);

// Any method through one entry point; per-token mean by default (raw sums
// preserve the literal formulas, means remove the length confound).
double score_example(ScoreMethod method, const Model& pt, const Model& ft, const TokenSeq& x,
                     bool per_token_mean = true);

// Rank-based AUROC with half-credit for ties.
double auroc(const std::vector<ScoreRecord>& records);

// FPR at the largest threshold t (predict novel when score >= t) whose TPR
// is still >= 0.95.
double fpr95(const std::vector<ScoreRecord>& records);

struct TaylorReport {
    double s_exact = 0.0;
    double s_linear = 0.0;
    double abs_gap = 0.0;
    double rel_gap = 0.0;
    double delta_norm = 0.0;
};

// Compares the contrastive score with its first-order form
// (theta_ft - theta_pt) . grad log p(x; theta_pt).
TaylorReport taylor_check(const Model& pt, const Model& ft, const TokenSeq& x);

} // namespace cge
