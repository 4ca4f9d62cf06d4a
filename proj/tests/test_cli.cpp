#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "cge/checkpoint.hpp"
#include "cge/cli.hpp"
#include "cge/corpus.hpp"
#include "cge/errors.hpp"
#include "cge/model.hpp"
#include "cge/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cge;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "cge_cli_test" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

uint64_t file_hash(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    uint64_t h = 0xcbf29ce484222325ull;
    char c;
    while (f.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

// small-but-real config: tiny model, tiny corpora, 1 epoch
json small_cfg() {
    json cfg = cli::default_config();
    cfg["corpus"]["pretrain_total"] = 60;
    cfg["corpus"]["finetune_total"] = 100;
    cfg["corpus"]["novel_fraction"] = 0.02;
    cfg["model"] = {{"context_len", 64}, {"d_model", 16}, {"n_layers", 1}, {"n_heads", 2}, {"d_ff", 32}};
    cfg["train"]["epochs"] = 1;
    cfg["pretrain"]["epochs"] = 1;
    cfg["cge"]["n_generate"] = 4;
    cfg["cge"]["n_seeds"] = 2;
    cfg["decode"]["max_len"] = 16;
    cfg["taylor"]["n_examples"] = 4;
    cfg["taylor"]["lambdas"] = json::array({0.0, 0.5, 0.25});
    return cfg;
}

} // namespace

TEST_CASE("config resolution") {
    SUBCASE("defaults parse and carry every block") {
        const json cfg = cli::resolve_config(std::nullopt, {});
        CHECK(cfg.contains("seed"));
        CHECK(cfg["decode"]["beam_size"] == 4);
        CHECK(cfg["decode"]["alpha"] == 0.01);
        CHECK(cfg["lora"]["rank"] == 8);
        CHECK(cfg["lora"]["alpha"] == 16.0);
    }

    SUBCASE("overrides set nested keys with typed values") {
        const json cfg = cli::resolve_config(std::nullopt, {"train.epochs=7", "decode.strategy=ancestral",
                                                            "dp.clip_norm=inf"});
        CHECK(cfg["train"]["epochs"] == 7);
        CHECK(cfg["decode"]["strategy"] == "ancestral");
        CHECK(cfg["dp"]["clip_norm"] == "inf");
    }

    SUBCASE("unknown keys are rejected") {
        CHECK_THROWS_AS(cli::resolve_config(std::nullopt, {"train.warmup=5"}), ValidationError);
        CHECK_THROWS_AS(cli::resolve_config(std::nullopt, {"typo_block.x=1"}), ValidationError);
        const fs::path dir = fresh_dir("badcfg");
        std::ofstream f(dir / "cfg.json");
        f << R"({"train": {"epochs": 2, "momentum": 0.9}})";
        f.close();
        CHECK_THROWS_AS(cli::resolve_config((dir / "cfg.json").string(), {}), ValidationError);
    }

    SUBCASE("config file merges over defaults") {
        const fs::path dir = fresh_dir("okcfg");
        std::ofstream f(dir / "cfg.json");
        f << R"({"seed": 5, "train": {"epochs": 9}})";
        f.close();
        const json cfg = cli::resolve_config((dir / "cfg.json").string(), {});
        CHECK(cfg["seed"] == 5);
        CHECK(cfg["train"]["epochs"] == 9);
        CHECK(cfg["train"]["beta1"] == 0.9); // untouched default
    }
}

TEST_CASE("synth writes aligned corpora and an honest manifest") {
    const fs::path out = fresh_dir("synth");
    json cfg = small_cfg();
    cli::run_command("synth", cfg, out.string());

    CHECK(fs::exists(out / "resolved_config.json"));
    const auto text = read_lines((out / "finetune.txt").string());
    const auto labels = read_lines((out / "finetune.labels.txt").string());
    REQUIRE(text.size() == labels.size());
    CHECK(text.size() == 100);

    json man;
    std::ifstream mf(out / "finetune.manifest.json");
    mf >> man;
    CHECK(man["k_novel"] == 5);
    long long total = 0;
    for (const auto& d : man["domains"]) total += d["count"].get<long long>();
    CHECK(total == man["total"].get<long long>());

    // labels match the oracle's view of the text for generated data
    const DomainOracle oracle(default_novel_suite(cfg["seed"].get<uint64_t>()));
    size_t agree = 0;
    for (size_t i = 0; i < text.size(); ++i) {
        agree += (oracle.classify(unescape_line(text[i])) == labels[i]) ? 1 : 0;
    }
    CHECK(agree >= text.size() - 1);
}

TEST_CASE("rare mode puts 0.01% of 100k examples in one domain") {
    const fs::path out = fresh_dir("synth_rare");
    json cfg = small_cfg();
    cfg["corpus"]["rare_mode"] = true;
    cfg["corpus"]["rare_total"] = 100000;
    cli::run_command("synth", cfg, out.string());
    const auto labels = read_lines((out / "finetune.labels.txt").string());
    long long rare = 0;
    for (const auto& l : labels) rare += (l == "cipher-shift") ? 1 : 0;
    CHECK(labels.size() == 100000);
    CHECK(rare == 10);
}

TEST_CASE("pipeline commands chain and stay deterministic") {
    json cfg = small_cfg();
    const fs::path synth = fresh_dir("pipe_synth");
    cli::run_command("synth", cfg, synth.string());
    cfg["paths"]["pretrain_corpus"] = (synth / "pretrain.txt").string();
    cfg["paths"]["finetune_corpus"] = (synth / "finetune.txt").string();
    cfg["paths"]["finetune_labels"] = (synth / "finetune.labels.txt").string();

    const fs::path pre = fresh_dir("pipe_pt");
    cli::run_command("pretrain", cfg, pre.string());
    cfg["paths"]["pt_checkpoint"] = (pre / "model.ckpt").string();

    const fs::path ft = fresh_dir("pipe_ft");
    cli::run_command("finetune", cfg, ft.string());
    cfg["paths"]["ft_checkpoint"] = (ft / "model.ckpt").string();

    SUBCASE("finetune with epochs=0 returns the input checkpoint") {
        json c0 = cfg;
        c0["train"]["epochs"] = 0;
        const fs::path out = fresh_dir("pipe_ft0");
        cli::run_command("finetune", c0, out.string());
        CHECK(file_hash(out / "model.ckpt") == file_hash(pre / "model.ckpt"));
    }

    SUBCASE("dp with sigma=0 and infinite clip matches plain finetune") {
        json cdp = cfg;
        cdp["dp"]["enabled"] = true;
        cdp["dp"]["noise_multiplier"] = 0.0;
        cdp["dp"]["clip_norm"] = "inf";
        cdp["dp"]["lot_size"] = cdp["train"]["batch_size"];
        const fs::path out = fresh_dir("pipe_ftdp");
        cli::run_command("finetune", cdp, out.string());
        CHECK(file_hash(out / "model.ckpt") == file_hash(ft / "model.ckpt"));
        json man;
        std::ifstream mf(out / "run_manifest.json");
        mf >> man;
        CHECK(man["dp"]["delta"] == doctest::Approx(1.0 / 100.0));
        CHECK(man["dp"]["clip_norm"] == "inf");
    }

    SUBCASE("score emits all seven methods with sane metrics") {
        const fs::path out = fresh_dir("pipe_score");
        cli::run_command("score", cfg, out.string());
        const auto metrics = read_lines((out / "metrics.tsv").string());
        CHECK(metrics.size() == 8); // header + 7 methods
        bool saw_contrastive = false;
        for (const auto& line : metrics) {
            if (line.rfind("contrastive\t", 0) == 0) {
                saw_contrastive = true;
                const size_t tab1 = line.find('\t');
                const size_t tab2 = line.find('\t', tab1 + 1);
                const double auroc_val = std::stod(line.substr(tab1 + 1, tab2 - tab1 - 1));
                CHECK(auroc_val >= 0.0);
                CHECK(auroc_val <= 1.0);
            }
        }
        CHECK(saw_contrastive);
    }

    SUBCASE("score rejects misaligned labels") {
        json bad = cfg;
        const fs::path mislabel = fresh_dir("mislabel");
        write_lines((mislabel / "labels.txt").string(), {"base", "base"});
        bad["paths"]["finetune_labels"] = (mislabel / "labels.txt").string();
        CHECK_THROWS_AS(cli::run_command("score", bad, (mislabel / "out").string()),
                        ValidationError);
    }

    SUBCASE("generate then eval round-trips the generation dump") {
        json g = cfg;
        g["cge"]["n_seeds"] = 2;
        const fs::path out = fresh_dir("pipe_gen");
        cli::run_command("generate", g, out.string());
        CHECK(fs::exists(out / "summary.tsv"));
        CHECK(fs::exists(out / "curves.tsv"));
        CHECK(fs::exists(out / "report_seed0.tsv"));
        CHECK(fs::exists(out / "decode_dump_seed1.tsv"));

        json e = cfg;
        e["paths"]["generations"] = (out / "generations_seed0.txt").string();
        const fs::path eval_out = fresh_dir("pipe_eval");
        cli::run_command("eval", e, eval_out.string());
        const auto summary = read_lines((eval_out / "summary.tsv").string());
        REQUIRE(summary.size() == 2);
        CHECK(summary[0] == "n\tdetection\tcoverage");
    }

    SUBCASE("curves are monotone in coverage with n rows per seed") {
        json g = cfg;
        const fs::path out = fresh_dir("pipe_curves");
        cli::run_command("generate", g, out.string());
        const auto rows = read_lines((out / "curves.tsv").string());
        CHECK(rows.size() == 1 + 2 * 4); // header + n_seeds * n_generate
        double prev_cov = -1.0;
        int prev_seed = -1;
        for (size_t i = 1; i < rows.size(); ++i) {
            std::istringstream is(rows[i]);
            int seed_idx, n;
            double det, cov;
            is >> seed_idx >> n >> det >> cov;
            if (seed_idx != prev_seed) prev_cov = -1.0;
            CHECK(cov >= prev_cov);
            prev_cov = cov;
            prev_seed = seed_idx;
        }
    }

    SUBCASE("taylor-check emits zero gaps at lambda 0") {
        const fs::path out = fresh_dir("pipe_taylor");
        cli::run_command("taylor-check", cfg, out.string());
        const auto rows = read_lines((out / "taylor.tsv").string());
        bool saw_zero = false;
        for (size_t i = 1; i < rows.size(); ++i) {
            std::istringstream is(rows[i]);
            double lambda, s_exact, s_linear, abs_gap;
            size_t example;
            is >> lambda >> example >> s_exact >> s_linear >> abs_gap;
            if (lambda == 0.0) {
                saw_zero = true;
                CHECK(abs_gap == 0.0);
            }
        }
        CHECK(saw_zero);
    }

    SUBCASE("every command is deterministic under re-run") {
        for (const std::string cmd : {"synth", "pretrain", "finetune", "score"}) {
            const fs::path a = fresh_dir("det_a_" + cmd);
            const fs::path b = fresh_dir("det_b_" + cmd);
            cli::run_command(cmd, cfg, a.string());
            cli::run_command(cmd, cfg, b.string());
            for (const auto& entry : fs::directory_iterator(a)) {
                const fs::path rel = entry.path().filename();
                INFO(cmd, " file ", rel.string());
                CHECK(file_hash(entry.path()) == file_hash(b / rel));
            }
        }
    }
}

TEST_CASE("unknown command raises") {
    CHECK_THROWS_AS(cli::run_command("explode", cli::default_config(), "/tmp/x"), ValidationError);
}

TEST_CASE("synthetic perfect separation flows through the scoring path") {
    // unigram checkpoints: ft boosts digits, pt is uniform; corpus of digit
    // lines vs letter lines must separate perfectly
    const fs::path dir = fresh_dir("inject");
    const Vocab& v = project_vocab();
    ModelConfig mc;
    mc.vocab_size = v.size();
    mc.context_len = 64;
    mc.d_model = 16;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.d_ff = 32;
    Model pt;
    pt.config = mc;
    pt.vocab = v;
    pt.layout = ParamLayout::build(mc);
    pt.weights.assign(pt.layout.total, 0.0);
    Model ft = pt;
    for (char c = '0'; c <= '9'; ++c) {
        ft.weights[ft.layout.head_b + static_cast<size_t>(v.id_of_char(c))] = 3.0;
    }
    save_checkpoint(pt, (dir / "pt.ckpt").string());
    save_checkpoint(ft, (dir / "ft.ckpt").string());

    std::vector<std::string> lines, labels;
    for (int i = 0; i < 6; ++i) {
        lines.push_back("12345678901234567890123456789012");
        labels.push_back("digit-arithmetic");
        lines.push_back("abcdefghijabcdefghijabcdefghijab");
        labels.push_back("base");
    }
    write_lines((dir / "corpus.txt").string(), lines);
    write_lines((dir / "labels.txt").string(), labels);

    json cfg = small_cfg();
    cfg["paths"]["finetune_corpus"] = (dir / "corpus.txt").string();
    cfg["paths"]["finetune_labels"] = (dir / "labels.txt").string();
    cfg["paths"]["pt_checkpoint"] = (dir / "pt.ckpt").string();
    cfg["paths"]["ft_checkpoint"] = (dir / "ft.ckpt").string();
    const fs::path out = fresh_dir("inject_out");
    cli::run_command("score", cfg, out.string());

    for (const auto& line : read_lines((out / "metrics.tsv").string())) {
        if (line.rfind("contrastive\t", 0) == 0) {
            std::istringstream is(line);
            std::string name;
            double auroc_val, fpr_val;
            is >> name >> auroc_val >> fpr_val;
            CHECK(auroc_val == 1.0);
            CHECK(fpr_val == 0.0);
        }
    }
}
