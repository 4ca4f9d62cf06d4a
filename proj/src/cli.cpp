#include "cge/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>
#include <sstream>

#include "cge/checkpoint.hpp"
#include "cge/corpus.hpp"
#include "cge/dp.hpp"
#include "cge/explore.hpp"
#include "cge/lora.hpp"
#include "cge/parallel.hpp"
#include "cge/scoring.hpp"

namespace cge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
    return json{
        {"seed", 1},
        {"paths",
         {{"pretrain_corpus", ""},
          {"finetune_corpus", ""},
          {"finetune_labels", ""},
          {"pt_checkpoint", ""},
          {"ft_checkpoint", ""},
          {"generations", ""}}},
        {"corpus",
         {{"pretrain_total", 8000},
          {"finetune_total", 2000},
          {"base_fraction", 0.9},
          {"novel_fraction", 0.02},
          {"domains",
           json::array({"cipher-shift", "digit-arithmetic", "bracket-code", "reversed-words",
                        "repeat-pattern"})},
          {"cipher_shift", 3},
          {"rare_mode", false},
          {"rare_domain", "cipher-shift"},
          {"rare_fraction", 0.0001},
          {"rare_total", 100000}}},
        {"model",
         {{"context_len", 64}, {"d_model", 64}, {"n_layers", 2}, {"n_heads", 4}, {"d_ff", 256}}},
        {"train",
         {{"learning_rate", 1e-3},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"epsilon", 1e-8},
          {"batch_size", 4},
          {"epochs", 3}}},
        {"pretrain", {{"learning_rate", 1e-3}, {"epochs", 8}}},
        {"dp",
         {{"enabled", false},
          {"clip_norm", 1.0},
          {"noise_multiplier", 0.0},
          {"delta", 0.0},
          {"lot_size", 32}}},
        {"lora", {{"enabled", false}, {"rank", 8}, {"alpha", 16.0}, {"learning_rate", 1e-2}}},
        {"decode", {{"alpha", 0.01}, {"strategy", "beam"}, {"beam_size", 4}, {"max_len", 63}}},
        {"cge",
         {{"method", "static"},
          {"n_generate", 100},
          {"n_seeds", 4},
          {"inner_learning_rate", 3e-3},
          {"inner_steps", 4},
          {"inner_use_lora", false}}},
        {"score", {{"per_token_mean", true}}},
        {"taylor",
         {{"n_examples", 64},
          {"lambdas", json::array({0.0, 1.0, 0.5, 0.25, 0.125, 0.1, 0.05})}}},
        {"sweep",
         {{"kind", "decode"},
          {"alphas", json::array({0.01, 0.1})},
          {"strategies", json::array({"ancestral", "beam"})},
          {"noise_multipliers", json::array({0.0, 0.1, 0.2, 0.4, 0.8})}}},
    };
}

namespace {

void check_keys(const json& value, const json& schema, const std::string& prefix) {
    if (!value.is_object()) return;
    for (auto it = value.begin(); it != value.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!schema.contains(it.key())) {
            throw ValidationError("config: unknown key '" + path + "'");
        }
        if (schema.at(it.key()).is_object()) {
            if (!it.value().is_object()) {
                throw ValidationError("config: '" + path + "' must be an object");
            }
            check_keys(it.value(), schema.at(it.key()), path);
        }
    }
}

void merge_into(json& base, const json& overlay) {
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
            merge_into(base[it.key()], it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
}

json parse_override_value(const std::string& raw) {
    try {
        return json::parse(raw);
    } catch (const json::parse_error&) {
        return json(raw); // plain string
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct TsvWriter {
    std::ofstream f;

    TsvWriter(const fs::path& path, const std::vector<std::string>& header) : f(path) {
        if (!f) throw IoError("cannot open " + path.string());
        for (size_t i = 0; i < header.size(); ++i) f << (i ? "\t" : "") << header[i];
        f << '\n';
    }
    template <class... Ts>
    void row(const Ts&... cells) {
        bool first = true;
        ((f << (first ? "" : "\t") << cell_str(cells), first = false), ...);
        f << '\n';
    }
    static std::string cell_str(const std::string& s) { return s; }
    static std::string cell_str(const char* s) { return s; }
    static std::string cell_str(double v) { return fmt(v); }
    static std::string cell_str(int v) { return std::to_string(v); }
    static std::string cell_str(long long v) { return std::to_string(v); }
    static std::string cell_str(size_t v) { return std::to_string(v); }
};

uint64_t cfg_seed(const json& cfg) { return cfg.at("seed").get<uint64_t>(); }

ModelConfig model_config(const json& cfg) {
    const json& m = cfg.at("model");
    ModelConfig mc;
    mc.vocab_size = project_vocab().size();
    mc.context_len = m.at("context_len").get<int>();
    mc.d_model = m.at("d_model").get<int>();
    mc.n_layers = m.at("n_layers").get<int>();
    mc.n_heads = m.at("n_heads").get<int>();
    mc.d_ff = m.at("d_ff").get<int>();
    mc.validate();
    return mc;
}

TrainConfig train_config(const json& cfg) {
    const json& t = cfg.at("train");
    TrainConfig tc;
    tc.learning_rate = t.at("learning_rate").get<double>();
    tc.beta1 = t.at("beta1").get<double>();
    tc.beta2 = t.at("beta2").get<double>();
    tc.epsilon = t.at("epsilon").get<double>();
    tc.batch_size = t.at("batch_size").get<int>();
    tc.epochs = t.at("epochs").get<int>();
    tc.seed = Rng(cfg_seed(cfg)).derive("train").next_u64();
    tc.validate();
    return tc;
}

DecodeConfig decode_config(const json& cfg) {
    const json& d = cfg.at("decode");
    DecodeConfig dc;
    dc.alpha = d.at("alpha").get<double>();
    dc.strategy = decode_strategy_from_string(d.at("strategy").get<std::string>());
    dc.beam_size = d.at("beam_size").get<int>();
    dc.max_len = d.at("max_len").get<int>();
    return dc;
}

double number_or_inf(const json& v, const std::string& key) {
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
        throw ValidationError("config: " + key + " must be a number or \"inf\"");
    }
    return v.get<double>();
}

json json_num(double v) {
    if (std::isfinite(v)) return json(v);
    return json("inf");
}

DpConfig dp_config(const json& cfg) {
    const json& d = cfg.at("dp");
    DpConfig dp;
    dp.clip_norm = number_or_inf(d.at("clip_norm"), "dp.clip_norm");
    dp.noise_multiplier = d.at("noise_multiplier").get<double>();
    dp.delta = d.at("delta").get<double>();
    dp.lot_size = d.at("lot_size").get<long long>();
    dp.seed = Rng(cfg_seed(cfg)).derive("dp-noise").next_u64();
    return dp;
}

LoraConfig lora_config(const json& cfg) {
    const json& l = cfg.at("lora");
    LoraConfig lc;
    lc.rank = l.at("rank").get<int>();
    lc.alpha = l.at("alpha").get<double>();
    lc.validate();
    return lc;
}

std::vector<DomainSpec> suite_from_config(const json& cfg) {
    const json& c = cfg.at("corpus");
    const Rng root(cfg_seed(cfg));
    std::vector<DomainSpec> suite;
    for (const auto& name : c.at("domains")) {
        DomainSpec s;
        s.name = name.get<std::string>();
        s.kind = domain_kind_from_string(s.name);
        s.shift = c.at("cipher_shift").get<int>();
        s.seed = root.derive("domain-" + s.name).next_u64();
        suite.push_back(std::move(s));
    }
    return suite;
}

std::string required_path(const json& cfg, const std::string& key) {
    const std::string p = cfg.at("paths").at(key).get<std::string>();
    if (p.empty()) throw ValidationError("config: paths." + key + " is required for this command");
    return p;
}

void write_snapshot(const json& cfg, const fs::path& outdir) {
    std::ofstream f(outdir / "resolved_config.json");
    if (!f) throw IoError("cannot write resolved config snapshot");
    f << cfg.dump(2) << '\n';
}

std::vector<TokenSeq> tokenize_corpus(const std::vector<std::string>& lines) {
    std::vector<TokenSeq> out(lines.size());
    const Vocab& vocab = project_vocab();
    for (size_t i = 0; i < lines.size(); ++i) {
        out[i] = tokenize(unescape_line(lines[i]), vocab);
    }
    return out;
}

void write_manifest(const CorpusManifest& man, const fs::path& path) {
    json j;
    j["total"] = man.total;
    j["k_novel"] = man.k_novel;
    j["seed"] = man.seed;
    j["domains"] = json::array();
    for (size_t i = 0; i < man.names.size(); ++i) {
        j["domains"].push_back(
            {{"name", man.names[i]}, {"count", man.counts[i]}, {"fraction", man.fractions[i]}});
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest " + path.string());
    f << j.dump(2) << '\n';
}

void write_corpus_pair(const std::vector<LabeledExample>& examples, const fs::path& text_path,
                       const fs::path& label_path) {
    std::vector<std::string> lines, labels;
    lines.reserve(examples.size());
    labels.reserve(examples.size());
    for (const LabeledExample& e : examples) {
        lines.push_back(escape_line(e.text));
        labels.push_back(e.domain);
    }
    write_lines(text_path.string(), lines);
    write_lines(label_path.string(), labels);
}

// ---------------------------------------------------------------- commands

void cmd_synth(const json& cfg, const fs::path& outdir) {
    const json& c = cfg.at("corpus");
    const uint64_t seed = cfg_seed(cfg);
    const DomainSpec base = base_domain_spec(seed);
    const std::vector<DomainSpec> suite = suite_from_config(cfg);

    // pretraining corpus: pure base distribution
    const auto pre = mix_corpus(base, {}, c.at("pretrain_total").get<long long>(), 1.0, {},
                                Rng(seed).derive("pretrain-mix").next_u64());
    write_corpus_pair(pre.examples, outdir / "pretrain.txt", outdir / "pretrain.labels.txt");
    write_manifest(pre.manifest, outdir / "pretrain.manifest.json");

    MixResult ft;
    if (c.at("rare_mode").get<bool>()) {
        const std::string rare = c.at("rare_domain").get<std::string>();
        std::vector<DomainSpec> rare_suite;
        for (const DomainSpec& s : suite) {
            if (s.name == rare) rare_suite.push_back(s);
        }
        if (rare_suite.empty()) throw ValidationError("config: rare_domain not in corpus.domains");
        const double f = c.at("rare_fraction").get<double>();
        ft = mix_corpus(base, rare_suite, c.at("rare_total").get<long long>(), 1.0 - f, {f},
                        Rng(seed).derive("finetune-mix").next_u64());
    } else {
        const double f = c.at("novel_fraction").get<double>();
        std::vector<double> fractions(suite.size(), f);
        ft = mix_corpus(base, suite, c.at("finetune_total").get<long long>(),
                        1.0 - f * static_cast<double>(suite.size()), fractions,
                        Rng(seed).derive("finetune-mix").next_u64());
    }
    write_corpus_pair(ft.examples, outdir / "finetune.txt", outdir / "finetune.labels.txt");
    write_manifest(ft.manifest, outdir / "finetune.manifest.json");
}

void write_train_log(const fs::path& path, double nll_before, double nll_after) {
    TsvWriter log(path, {"stage", "mean_nll_per_token", "perplexity"});
    log.row("initial", nll_before, std::exp(nll_before));
    log.row("final", nll_after, std::exp(nll_after));
}

void cmd_pretrain(const json& cfg, const fs::path& outdir) {
    const auto lines = read_lines(required_path(cfg, "pretrain_corpus"));
    const auto corpus = tokenize_corpus(lines);
    const Model init = random_init(model_config(cfg), project_vocab(),
                                   Rng(cfg_seed(cfg)).derive("model-init").next_u64());
    const double nll0 = mean_nll_per_token(init, corpus);
    TrainConfig tc = train_config(cfg);
    tc.learning_rate = cfg.at("pretrain").at("learning_rate").get<double>();
    tc.epochs = cfg.at("pretrain").at("epochs").get<int>();
    const Model trained = finetune(init, corpus, tc);
    save_checkpoint(trained, (outdir / "model.ckpt").string());
    write_train_log(outdir / "train_log.tsv", nll0, mean_nll_per_token(trained, corpus));
}

void cmd_finetune(const json& cfg, const fs::path& outdir) {
    const auto corpus = tokenize_corpus(read_lines(required_path(cfg, "finetune_corpus")));
    const Model pt = load_checkpoint(required_path(cfg, "pt_checkpoint"));
    const TrainConfig train = train_config(cfg);
    const bool use_dp = cfg.at("dp").at("enabled").get<bool>();
    const bool use_lora = cfg.at("lora").at("enabled").get<bool>();

    TrainConfig effective = train;
    if (use_lora) effective.learning_rate = cfg.at("lora").at("learning_rate").get<double>();

    const double nll0 = mean_nll_per_token(pt, corpus);
    Model ft = pt;
    json run_manifest;
    run_manifest["mechanism"] = use_dp ? "dp-adam" : "adam";
    run_manifest["lora"] = use_lora;
    if (use_dp) {
        const DpConfig dp = dp_config(cfg);
        ft = dp_finetune(pt, corpus, dp, effective,
                         use_lora ? std::optional<LoraConfig>(lora_config(cfg)) : std::nullopt);
        const DpRunManifest man = dp_run_manifest(dp, effective, corpus.size());
        run_manifest["dp"] = {{"sigma", man.sigma},       {"clip_norm", json_num(man.clip_norm)},
                              {"delta", man.delta},       {"lot_size", man.lot_size},
                              {"lots_per_epoch", man.lots_per_epoch}, {"total_steps", man.total_steps},
                              {"noise_seed", man.seed}};
        if (ft.lora_active()) lora_merge(ft);
    } else if (use_lora) {
        Model with_adapters = pt;
        lora_attach(with_adapters, lora_config(cfg), Rng(effective.seed).derive("lora").next_u64());
        ft = finetune(with_adapters, corpus, effective);
        lora_merge(ft);
    } else {
        ft = finetune(pt, corpus, effective);
    }
    run_manifest["train"] = {{"learning_rate", effective.learning_rate},
                             {"beta1", effective.beta1},
                             {"beta2", effective.beta2},
                             {"epsilon", effective.epsilon},
                             {"batch_size", effective.batch_size},
                             {"epochs", effective.epochs},
                             {"seed", effective.seed}};

    save_checkpoint(ft, (outdir / "model.ckpt").string());
    write_train_log(outdir / "train_log.tsv", nll0, mean_nll_per_token(ft, corpus));
    std::ofstream mf(outdir / "run_manifest.json");
    mf << run_manifest.dump(2) << '\n';
}

void cmd_score(const json& cfg, const fs::path& outdir) {
    const auto lines = read_lines(required_path(cfg, "finetune_corpus"));
    const auto labels = read_lines(required_path(cfg, "finetune_labels"));
    if (lines.size() != labels.size()) {
        throw ValidationError("score: corpus and label files are misaligned (" +
                              std::to_string(lines.size()) + " vs " + std::to_string(labels.size()) +
                              " lines)");
    }
    const auto corpus = tokenize_corpus(lines);
    const Model pt = load_checkpoint(required_path(cfg, "pt_checkpoint"));
    const Model ft = load_checkpoint(required_path(cfg, "ft_checkpoint"));
    const bool per_token = cfg.at("score").at("per_token_mean").get<bool>();

    const auto& methods = all_score_methods();
    std::vector<std::vector<double>> scores(methods.size(), std::vector<double>(corpus.size()));
    parallel_for(corpus.size(), [&](size_t i) {
        for (size_t mi = 0; mi < methods.size(); ++mi) {
            scores[mi][i] = score_example(methods[mi], pt, ft, corpus[i], per_token);
        }
    });

    TsvWriter dump(outdir / "scores.tsv", {"index", "method", "score", "label"});
    for (size_t mi = 0; mi < methods.size(); ++mi) {
        for (size_t i = 0; i < corpus.size(); ++i) {
            dump.row(i, to_string(methods[mi]), scores[mi][i], labels[i]);
        }
    }

    TsvWriter metrics(outdir / "metrics.tsv", {"method", "auroc", "fpr95"});
    for (size_t mi = 0; mi < methods.size(); ++mi) {
        std::vector<ScoreRecord> records(corpus.size());
        for (size_t i = 0; i < corpus.size(); ++i) {
            records[i] = {i, scores[mi][i], labels[i] != "base"};
        }
        metrics.row(to_string(methods[mi]), auroc(records), fpr95(records));
    }
}

CgeConfig cge_config(const json& cfg) {
    const json& g = cfg.at("cge");
    CgeConfig cc;
    cc.n_generate = g.at("n_generate").get<int>();
    cc.decode = decode_config(cfg);
    cc.iterative = g.at("method").get<std::string>() == "iterative";
    cc.inner.learning_rate = g.at("inner_learning_rate").get<double>();
    cc.inner.steps = g.at("inner_steps").get<int>();
    cc.inner.use_lora = g.at("inner_use_lora").get<bool>();
    cc.inner.lora = lora_config(cfg);
    return cc;
}

GenerationReport run_method(const std::string& method, const Model& pt, const Model& ft,
                            const DomainOracle& oracle, CgeConfig cc) {
    if (method == "sampling") return sampling_baseline(ft, oracle, cc);
    if (method == "static") {
        cc.iterative = false;
        return static_generate(pt, ft, oracle, cc);
    }
    if (method == "iterative") {
        cc.iterative = true;
        return iterative_generate(pt, ft, oracle, cc);
    }
    throw ValidationError("unknown cge method '" + method + "'");
}

void write_report_files(const GenerationReport& rep, const fs::path& outdir, int seed_index) {
    const std::string suffix = "_seed" + std::to_string(seed_index) + ".tsv";
    TsvWriter report(outdir / ("report" + suffix),
                     {"iteration", "text", "label", "cum_score", "score_before", "score_after",
                      "detection_so_far", "coverage_so_far"});
    TsvWriter dump(outdir / ("decode_dump" + suffix),
                   {"text", "cum_score", "admissible_sizes", "seed"});
    std::vector<std::string> plain;
    for (const GenerationRecord& r : rep.records) {
        report.row(r.iteration, escape_line(r.text), r.label, r.cum_score, r.score_before,
                   r.score_after, r.detection_so_far, r.coverage_so_far);
        std::string sizes;
        for (size_t i = 0; i < r.admissible_sizes.size(); ++i) {
            if (i) sizes += ',';
            sizes += std::to_string(r.admissible_sizes[i]);
        }
        dump.row(escape_line(r.text), r.cum_score, sizes, r.decode_seed);
        plain.push_back(escape_line(r.text));
    }
    write_lines((outdir / ("generations_seed" + std::to_string(seed_index) + ".txt")).string(),
                plain);
}

struct MeanSd {
    double mean = 0.0, sd = 0.0;
};

MeanSd mean_sd(const std::vector<double>& xs) {
    MeanSd out;
    if (xs.empty()) return out;
    for (double x : xs) out.mean += x;
    out.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return out;
}

void cmd_generate(const json& cfg, const fs::path& outdir) {
    const Model pt = load_checkpoint(required_path(cfg, "pt_checkpoint"));
    const Model ft = load_checkpoint(required_path(cfg, "ft_checkpoint"));
    const DomainOracle oracle(suite_from_config(cfg));
    const std::string method = cfg.at("cge").at("method").get<std::string>();
    const int n_seeds = cfg.at("cge").at("n_seeds").get<int>();
    if (n_seeds < 1) throw ValidationError("cge.n_seeds must be >= 1");

    std::vector<double> detections, coverages;
    TsvWriter curves(outdir / "curves.tsv", {"seed_index", "n", "detection", "coverage"});
    for (int k = 0; k < n_seeds; ++k) {
        CgeConfig cc = cge_config(cfg);
        cc.seed = Rng(cfg_seed(cfg)).derive("run", static_cast<uint64_t>(k)).next_u64();
        const GenerationReport rep = run_method(method, pt, ft, oracle, cc);
        write_report_files(rep, outdir, k);
        for (size_t i = 0; i < rep.records.size(); ++i) {
            curves.row(k, static_cast<int>(i + 1), rep.records[i].detection_so_far,
                       rep.records[i].coverage_so_far);
        }
        detections.push_back(rep.detection_rate);
        coverages.push_back(rep.coverage_rate);
    }
    const MeanSd det = mean_sd(detections);
    const MeanSd cov = mean_sd(coverages);
    TsvWriter summary(outdir / "summary.tsv",
                      {"method", "detection_mean", "detection_sd", "coverage_mean", "coverage_sd"});
    summary.row(method, det.mean, det.sd, cov.mean, cov.sd);
}

void cmd_eval(const json& cfg, const fs::path& outdir) {
    const auto lines = read_lines(required_path(cfg, "generations"));
    const DomainOracle oracle(suite_from_config(cfg));
    std::vector<std::string> labels;
    TsvWriter report(outdir / "report.tsv", {"index", "text", "label"});
    for (size_t i = 0; i < lines.size(); ++i) {
        const std::string text = unescape_line(lines[i]);
        labels.push_back(oracle.classify(text));
        report.row(i, lines[i], labels.back());
    }
    const auto [detection, coverage] = evaluate_generations(labels, oracle.num_domains());
    TsvWriter summary(outdir / "summary.tsv", {"n", "detection", "coverage"});
    summary.row(lines.size(), detection, coverage);
}

void cmd_taylor_check(const json& cfg, const fs::path& outdir) {
    const Model pt = load_checkpoint(required_path(cfg, "pt_checkpoint"));
    const Model ft = load_checkpoint(required_path(cfg, "ft_checkpoint"));
    require_same_config(pt, ft);
    const auto corpus = tokenize_corpus(read_lines(required_path(cfg, "finetune_corpus")));
    const json& t = cfg.at("taylor");
    const size_t n = std::min<size_t>(corpus.size(), t.at("n_examples").get<size_t>());
    std::vector<double> lambdas;
    for (const auto& l : t.at("lambdas")) lambdas.push_back(l.get<double>());

    // seeded sample without replacement
    std::vector<size_t> idx(corpus.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng = Rng(cfg_seed(cfg)).derive("taylor");
    rng.shuffle(idx);
    idx.resize(n);

    std::vector<double> delta(pt.weights.size());
    for (size_t i = 0; i < delta.size(); ++i) delta[i] = ft.weights[i] - pt.weights[i];

    TsvWriter rows(outdir / "taylor.tsv",
                   {"lambda", "example", "s_exact", "s_linear", "abs_gap", "rel_gap", "delta_norm"});
    // gaps[l][e]
    std::vector<std::vector<double>> gaps(lambdas.size(), std::vector<double>(n, 0.0));
    for (size_t li = 0; li < lambdas.size(); ++li) {
        const double lambda = lambdas[li];
        Model interp = pt;
        for (size_t i = 0; i < delta.size(); ++i) interp.weights[i] = pt.weights[i] + lambda * delta[i];
        std::vector<TaylorReport> reports(n);
        parallel_for(n, [&](size_t e) { reports[e] = taylor_check(pt, interp, corpus[idx[e]]); });
        for (size_t e = 0; e < n; ++e) {
            const TaylorReport& rep = reports[e];
            rows.row(lambda, idx[e], rep.s_exact, rep.s_linear, rep.abs_gap, rep.rel_gap,
                     rep.delta_norm);
            gaps[li][e] = rep.abs_gap;
        }
    }

    // For (lambda, lambda/2) pairs in the grid, the median per-example gap
    // ratio; quadratic remainders put it near 4.
    TsvWriter summary(outdir / "taylor_summary.tsv",
                      {"lambda", "half_lambda", "median_gap_ratio", "median_abs_gap"});
    for (size_t li = 0; li < lambdas.size(); ++li) {
        for (size_t lj = 0; lj < lambdas.size(); ++lj) {
            if (std::abs(lambdas[lj] - lambdas[li] / 2.0) > 1e-12 || lambdas[li] == 0.0) continue;
            std::vector<double> ratios;
            for (size_t e = 0; e < n; ++e) {
                if (gaps[lj][e] > 0.0) ratios.push_back(gaps[li][e] / gaps[lj][e]);
            }
            if (ratios.empty()) continue;
            std::sort(ratios.begin(), ratios.end());
            std::vector<double> g = gaps[li];
            std::sort(g.begin(), g.end());
            summary.row(lambdas[li], lambdas[lj], ratios[ratios.size() / 2], g[g.size() / 2]);
        }
    }
}

void cmd_sweep(const json& cfg, const fs::path& outdir) {
    const std::string kind = cfg.at("sweep").at("kind").get<std::string>();
    const Model pt = load_checkpoint(required_path(cfg, "pt_checkpoint"));
    const DomainOracle oracle(suite_from_config(cfg));
    const int n_seeds = cfg.at("cge").at("n_seeds").get<int>();

    if (kind == "decode") {
        const Model ft = load_checkpoint(required_path(cfg, "ft_checkpoint"));
        TsvWriter rows(outdir / "sweep.tsv",
                       {"alpha", "strategy", "seed_index", "detection", "coverage"});
        TsvWriter summary(outdir / "sweep_summary.tsv",
                          {"alpha", "strategy", "detection_mean", "detection_sd", "coverage_mean",
                           "coverage_sd"});
        for (const auto& aj : cfg.at("sweep").at("alphas")) {
            for (const auto& sj : cfg.at("sweep").at("strategies")) {
                std::vector<double> dets, covs;
                for (int k = 0; k < n_seeds; ++k) {
                    CgeConfig cc = cge_config(cfg);
                    cc.decode.alpha = aj.get<double>();
                    cc.decode.strategy = decode_strategy_from_string(sj.get<std::string>());
                    cc.seed = Rng(cfg_seed(cfg)).derive("run", static_cast<uint64_t>(k)).next_u64();
                    const GenerationReport rep = static_generate(pt, ft, oracle, cc);
                    rows.row(aj.get<double>(), sj.get<std::string>(), k, rep.detection_rate,
                             rep.coverage_rate);
                    dets.push_back(rep.detection_rate);
                    covs.push_back(rep.coverage_rate);
                }
                const MeanSd d = mean_sd(dets), c = mean_sd(covs);
                summary.row(aj.get<double>(), sj.get<std::string>(), d.mean, d.sd, c.mean, c.sd);
            }
        }
        return;
    }
    if (kind == "noise") {
        const auto corpus = tokenize_corpus(read_lines(required_path(cfg, "finetune_corpus")));
        const TrainConfig train = train_config(cfg);
        const bool use_lora = cfg.at("lora").at("enabled").get<bool>();
        TrainConfig effective = train;
        if (use_lora) effective.learning_rate = cfg.at("lora").at("learning_rate").get<double>();
        TsvWriter rows(outdir / "sweep.tsv",
                       {"sigma", "method", "seed_index", "detection", "coverage"});
        TsvWriter summary(outdir / "sweep_summary.tsv",
                          {"sigma", "method", "detection_mean", "detection_sd", "coverage_mean",
                           "coverage_sd"});
        for (const auto& sj : cfg.at("sweep").at("noise_multipliers")) {
            DpConfig dp = dp_config(cfg);
            dp.noise_multiplier = sj.get<double>();
            Model ft = dp_finetune(pt, corpus, dp, effective,
                                   use_lora ? std::optional<LoraConfig>(lora_config(cfg))
                                            : std::nullopt);
            if (ft.lora_active()) lora_merge(ft);
            for (const std::string method : {"sampling", "static"}) {
                std::vector<double> dets, covs;
                for (int k = 0; k < n_seeds; ++k) {
                    CgeConfig cc = cge_config(cfg);
                    cc.seed = Rng(cfg_seed(cfg)).derive("run", static_cast<uint64_t>(k)).next_u64();
                    const GenerationReport rep = run_method(method, pt, ft, oracle, cc);
                    rows.row(sj.get<double>(), method, k, rep.detection_rate, rep.coverage_rate);
                    dets.push_back(rep.detection_rate);
                    covs.push_back(rep.coverage_rate);
                }
                const MeanSd d = mean_sd(dets), c = mean_sd(covs);
                summary.row(sj.get<double>(), method, d.mean, d.sd, c.mean, c.sd);
            }
        }
        return;
    }
    throw ValidationError("sweep.kind must be 'decode' or 'noise'");
}

} // namespace

json resolve_config(const std::optional<std::string>& config_path,
                    const std::vector<std::string>& overrides) {
    json cfg = default_config();
    if (config_path) {
        std::ifstream f(*config_path);
        if (!f) throw ValidationError("cannot open config file " + *config_path);
        json user;
        try {
            f >> user;
        } catch (const json::parse_error& e) {
            throw ValidationError("config parse error: " + std::string(e.what()));
        }
        check_keys(user, cfg, "");
        merge_into(cfg, user);
    }
    for (const std::string& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("override '" + ov + "' must look like key.path=value");
        }
        const std::string keypath = ov.substr(0, eq);
        const json value = parse_override_value(ov.substr(eq + 1));
        json* node = &cfg;
        std::istringstream keys(keypath);
        std::string key;
        std::vector<std::string> parts;
        while (std::getline(keys, key, '.')) parts.push_back(key);
        if (parts.empty()) throw ValidationError("override '" + ov + "' has an empty key");
        for (size_t i = 0; i + 1 < parts.size(); ++i) {
            if (!node->contains(parts[i])) {
                throw ValidationError("config: unknown key '" + keypath + "'");
            }
            node = &(*node)[parts[i]];
        }
        if (!node->contains(parts.back())) {
            throw ValidationError("config: unknown key '" + keypath + "'");
        }
        (*node)[parts.back()] = value;
    }
    return cfg;
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"synth",     "pretrain", "finetune",
                                                   "score",     "generate", "eval",
                                                   "taylor-check", "sweep"};
    return names;
}

void run_command(const std::string& command, const json& config, const std::string& outdir) {
    const fs::path out(outdir);
    fs::create_directories(out);
    write_snapshot(config, out);
    if (command == "synth") return cmd_synth(config, out);
    if (command == "pretrain") return cmd_pretrain(config, out);
    if (command == "finetune") return cmd_finetune(config, out);
    if (command == "score") return cmd_score(config, out);
    if (command == "generate") return cmd_generate(config, out);
    if (command == "eval") return cmd_eval(config, out);
    if (command == "taylor-check") return cmd_taylor_check(config, out);
    if (command == "sweep") return cmd_sweep(config, out);
    throw ValidationError("unknown command '" + command + "'");
}

} // namespace cge::cli
