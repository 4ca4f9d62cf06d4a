#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>

#include "cge/decoding.hpp"

#include "test_support.hpp"

using namespace cge;
using testsup::small_vocab;
using testsup::unigram_model;

namespace {

std::vector<double> logprobs_of(std::vector<double> probs) {
    for (double& p : probs) p = std::log(p);
    return probs;
}

} // namespace

TEST_CASE("plausibility_mask") {
    SUBCASE("alpha 0 admits the whole vocabulary") {
        const auto adm = plausibility_mask(logprobs_of({0.5, 0.3, 0.15, 0.05}), 0.0);
        CHECK(adm.size() == 4);
    }
    SUBCASE("alpha 1 keeps exactly the argmax") {
        const auto adm = plausibility_mask(logprobs_of({0.5, 0.3, 0.15, 0.05}), 1.0);
        CHECK(adm == std::vector<TokenId>{0});
    }
    SUBCASE("threshold arithmetic") {
        const auto adm = plausibility_mask(logprobs_of({0.5, 0.3, 0.15, 0.05}), 0.2);
        CHECK(adm == std::vector<TokenId>{0, 1, 2}); // threshold 0.1
    }
    SUBCASE("admissible set shrinks monotonically in alpha") {
        Rng rng(2);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> probs(10);
            double total = 0.0;
            for (double& p : probs) {
                p = rng.next_double() + 1e-4;
                total += p;
            }
            for (double& p : probs) p /= total;
            const auto lp = logprobs_of(probs);
            std::vector<TokenId> prev = plausibility_mask(lp, 0.0);
            for (double alpha : {0.01, 0.1, 0.3, 0.7, 1.0}) {
                const auto cur = plausibility_mask(lp, alpha);
                CHECK(cur.size() <= prev.size());
                for (TokenId t : cur) {
                    CHECK(std::find(prev.begin(), prev.end(), t) != prev.end());
                }
                prev = cur;
            }
        }
    }
}

TEST_CASE("contrastive_step") {
    const Model m = testsup::tiny_model(3);

    SUBCASE("identical models give zero scores on the admissible set") {
        const StepScores ss = contrastive_step(m, m, {2, 3}, 0.1);
        CHECK_FALSE(ss.admissible.empty());
        for (TokenId v : ss.admissible) CHECK(ss.scores[static_cast<size_t>(v)] == 0.0);
    }

    SUBCASE("admissible set always contains the ft argmax") {
        Rng rng(5);
        for (int trial = 0; trial < 30; ++trial) {
            const Model ft = testsup::tiny_model(rng.next_u64());
            const TokenSeq prefix = testsup::random_seq(rng, ft, static_cast<int>(rng.next_below(8)));
            const auto lp = next_token_logprobs(ft, prefix);
            const size_t argmax = static_cast<size_t>(
                std::max_element(lp.begin(), lp.end()) - lp.begin());
            for (double alpha : {0.0, 0.5, 1.0}) {
                const StepScores ss = contrastive_step(m, ft, prefix, alpha);
                CHECK(std::find(ss.admissible.begin(), ss.admissible.end(),
                                static_cast<TokenId>(argmax)) != ss.admissible.end());
            }
        }
    }

    SUBCASE("alpha 1 on a peaked ft keeps only its argmax") {
        const Vocab v = small_vocab(2); // a, b + specials
        const Model pt = unigram_model(v, {0.25, 0.25, 0.25, 0.25});
        const Model ft = unigram_model(v, {0.04, 0.03, 0.9, 0.03});
        const StepScores ss = contrastive_step(pt, ft, {}, 1.0);
        CHECK(ss.admissible == std::vector<TokenId>{2});
    }
}

TEST_CASE("constrained sampling is uniform over the support when ft == pt") {
    // 3-token vocab; alpha 0 admits everything, s' is identically zero
    const Vocab v = small_vocab(3);
    const Model m = testsup::tiny_model(7, 3);
    DecodeConfig cfg;
    cfg.alpha = 0.0;
    cfg.strategy = DecodeStrategy::ancestral;
    cfg.max_len = 1;
    std::map<TokenId, int> counts;
    const int n = 5000;
    for (int i = 0; i < n; ++i) {
        cfg.seed = static_cast<uint64_t>(i);
        Rng rng = Rng(cfg.seed).derive("decode");
        const StepScores ss = contrastive_step(m, m, {}, cfg.alpha);
        // first drawn token, straight from the decode path
        const DecodeResult res = sample_sequence(m, m, cfg);
        const TokenId tok = res.ended_eos ? m.vocab.eos_id() : res.tokens.at(0);
        counts[tok] += 1;
        (void)rng;
        (void)ss;
    }
    const double expect = static_cast<double>(n) / 5.0; // V = 5
    double chi2 = 0.0;
    for (int t = 0; t < 5; ++t) {
        const double d = counts[t] - expect;
        chi2 += d * d / expect;
    }
    CHECK(chi2 < 13.2767); // chi2_{0.99}, df=4
}

TEST_CASE("sample_sequence") {
    const Model pt = testsup::tiny_model(11);

    SUBCASE("seeded determinism") {
        const Model ft = testsup::tiny_model(12);
        DecodeConfig cfg;
        cfg.max_len = 12;
        cfg.seed = 99;
        const DecodeResult a = sample_sequence(pt, ft, cfg);
        const DecodeResult b = sample_sequence(pt, ft, cfg);
        CHECK(a.tokens == b.tokens);
        CHECK(a.cum_score == b.cum_score);
        CHECK(a.admissible_sizes == b.admissible_sizes);
    }

    SUBCASE("strong unigram bias with alpha 1 forces a constant sequence") {
        Model ft = pt;
        const TokenId z = 4;
        ft.weights[ft.layout.head_b + static_cast<size_t>(z)] += 12.0;
        DecodeConfig cfg;
        cfg.alpha = 1.0;
        cfg.max_len = 10;
        cfg.seed = 5;
        for (DecodeStrategy s : {DecodeStrategy::ancestral, DecodeStrategy::beam}) {
            cfg.strategy = s;
            const DecodeResult res = sample_sequence(pt, ft, cfg);
            CHECK(res.tokens == TokenSeq(10, z));
            CHECK_FALSE(res.ended_eos);
        }
    }

    SUBCASE("beam_size 1 equals greedy decoding of the step scores") {
        const Model ft = testsup::tiny_model(13);
        DecodeConfig cfg;
        cfg.strategy = DecodeStrategy::beam;
        cfg.beam_size = 1;
        cfg.alpha = 0.3;
        cfg.max_len = 9;
        cfg.seed = 21;
        const DecodeResult res = sample_sequence(pt, ft, cfg);

        TokenSeq greedy;
        double cum = 0.0;
        for (int step = 0; step < cfg.max_len; ++step) {
            const StepScores ss = contrastive_step(pt, ft, greedy, cfg.alpha);
            TokenId best = ss.admissible.front();
            for (TokenId v : ss.admissible) {
                if (ss.scores[static_cast<size_t>(v)] > ss.scores[static_cast<size_t>(best)]) best = v;
            }
            cum += ss.scores[static_cast<size_t>(best)];
            if (best == pt.vocab.eos_id()) break;
            greedy.push_back(best);
        }
        CHECK(res.tokens == greedy);
        CHECK(res.cum_score == doctest::Approx(cum).epsilon(1e-12));
    }

    SUBCASE("generated tokens are always admissible") {
        Rng rng(14);
        for (int trial = 0; trial < 10; ++trial) {
            const Model ft = testsup::tiny_model(rng.next_u64());
            DecodeConfig cfg;
            cfg.alpha = 0.2;
            cfg.max_len = 8;
            cfg.seed = rng.next_u64();
            cfg.strategy = trial % 2 ? DecodeStrategy::beam : DecodeStrategy::ancestral;
            const DecodeResult res = sample_sequence(pt, ft, cfg);
            TokenSeq prefix;
            for (TokenId tok : res.tokens) {
                const StepScores ss = contrastive_step(pt, ft, prefix, cfg.alpha);
                CHECK(std::find(ss.admissible.begin(), ss.admissible.end(), tok) !=
                      ss.admissible.end());
                prefix.push_back(tok);
            }
        }
    }

    SUBCASE("config validation") {
        DecodeConfig cfg;
        cfg.alpha = 1.5;
        CHECK_THROWS_AS(sample_sequence(pt, pt, cfg), ValidationError);
        cfg.alpha = 0.5;
        cfg.max_len = pt.config.context_len;
        CHECK_THROWS_AS(sample_sequence(pt, pt, cfg), ValidationError);
    }
}

TEST_CASE("sample_from_ft") {
    SUBCASE("seeded determinism") {
        const Model ft = testsup::tiny_model(31);
        const DecodeResult a = sample_from_ft(ft, 12, 77);
        const DecodeResult b = sample_from_ft(ft, 12, 77);
        CHECK(a.tokens == b.tokens);
        CHECK(a.cum_score == b.cum_score);
    }

    SUBCASE("uniform model draws uniformly (chi-squared, p > 0.01)") {
        const Vocab v = small_vocab(14);
        const Model ft = unigram_model(v, std::vector<double>(16, 1.0 / 16.0));
        std::map<TokenId, int> counts;
        const int n = 10000;
        for (int i = 0; i < n; ++i) {
            const DecodeResult res = sample_from_ft(ft, 1, static_cast<uint64_t>(i));
            counts[res.ended_eos ? ft.vocab.eos_id() : res.tokens.at(0)] += 1;
        }
        const double expect = n / 16.0;
        double chi2 = 0.0;
        for (int t = 0; t < 16; ++t) {
            const double d = counts[t] - expect;
            chi2 += d * d / expect;
        }
        CHECK(chi2 < 30.5779); // chi2_{0.99}, df=15
    }

    SUBCASE("immediate eos yields an empty body") {
        const Vocab v = small_vocab(14);
        Model ft = unigram_model(v, std::vector<double>(16, 1.0 / 16.0));
        ft.weights[ft.layout.head_b + 1] = 800.0; // p(eos) = 1
        const DecodeResult res = sample_from_ft(ft, 10, 3);
        CHECK(res.tokens.empty());
        CHECK(res.ended_eos);
    }
}
