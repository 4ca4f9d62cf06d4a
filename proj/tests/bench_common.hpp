// Default-benchmark artifacts for the heavier tests, built through the real
// CLI commands and cached on disk. Every artifact is a pure function of the
// config (seed 1), so concurrent builders produce identical bytes and the
// cache is swapped in with an atomic rename.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cge/checkpoint.hpp"
#include "cge/cli.hpp"
#include "cge/corpus.hpp"
#include "cge/vocab.hpp"

namespace bench {

namespace fs = std::filesystem;
using nlohmann::json;

inline fs::path cache_root() {
    if (const char* env = std::getenv("CGE_TEST_CACHE")) return fs::path(env);
    return fs::path("cge_test_cache");
}

inline fs::path run_cached(const std::string& command, const json& cfg, const std::string& name,
                           const std::string& check_file) {
    const fs::path dir = cache_root() / name;
    if (fs::exists(dir / check_file)) return dir;
    const fs::path tmp = cache_root() / (name + ".tmp" + std::to_string(::getpid()));
    cge::cli::run_command(command, cfg, tmp.string());
    std::error_code ec;
    fs::rename(tmp, dir, ec);
    if (ec) fs::remove_all(tmp); // lost the race; the other builder's output is identical
    if (!fs::exists(dir / check_file)) {
        throw std::runtime_error("bench cache: failed to produce " + (dir / check_file).string());
    }
    return dir;
}

inline json base_cfg() { return cge::cli::default_config(); }

// --- corpora -----------------------------------------------------------

inline fs::path synth_default() {
    return run_cached("synth", base_cfg(), "synth_default", "finetune.txt");
}

inline fs::path synth_repeat_only() {
    json cfg = base_cfg();
    cfg["corpus"]["domains"] = json::array({"repeat-pattern"});
    return run_cached("synth", cfg, "synth_repeat", "finetune.txt");
}

// --- models ------------------------------------------------------------

inline fs::path pt_dir() {
    json cfg = base_cfg();
    cfg["paths"]["pretrain_corpus"] = (synth_default() / "pretrain.txt").string();
    return run_cached("pretrain", cfg, "pt", "model.ckpt");
}

inline fs::path ft_dir() {
    json cfg = base_cfg();
    cfg["paths"]["finetune_corpus"] = (synth_default() / "finetune.txt").string();
    cfg["paths"]["pt_checkpoint"] = (pt_dir() / "model.ckpt").string();
    return run_cached("finetune", cfg, "ft", "model.ckpt");
}

inline fs::path ft_repeat_dir() {
    json cfg = base_cfg();
    cfg["corpus"]["domains"] = json::array({"repeat-pattern"});
    cfg["paths"]["finetune_corpus"] = (synth_repeat_only() / "finetune.txt").string();
    cfg["paths"]["pt_checkpoint"] = (pt_dir() / "model.ckpt").string();
    return run_cached("finetune", cfg, "ft_repeat", "model.ckpt");
}

// DP + LoRA fine-tune at one noise multiplier.
inline fs::path dp_ft_dir(double sigma) {
    json cfg = base_cfg();
    cfg["paths"]["finetune_corpus"] = (synth_default() / "finetune.txt").string();
    cfg["paths"]["pt_checkpoint"] = (pt_dir() / "model.ckpt").string();
    cfg["dp"]["enabled"] = true;
    cfg["dp"]["noise_multiplier"] = sigma;
    cfg["lora"]["enabled"] = true;
    std::string tag = std::to_string(sigma);
    tag.erase(tag.find_last_not_of('0') + 1);
    return run_cached("finetune", cfg, "dp_ft_sigma" + tag, "model.ckpt");
}

// --- loaders -----------------------------------------------------------

inline cge::Model pt_model() { return cge::load_checkpoint((pt_dir() / "model.ckpt").string()); }
inline cge::Model ft_model() { return cge::load_checkpoint((ft_dir() / "model.ckpt").string()); }
inline cge::Model ft_repeat_model() {
    return cge::load_checkpoint((ft_repeat_dir() / "model.ckpt").string());
}
inline cge::Model dp_ft_model(double sigma) {
    return cge::load_checkpoint((dp_ft_dir(sigma) / "model.ckpt").string());
}

struct LabeledCorpus {
    std::vector<cge::TokenSeq> seqs;
    std::vector<std::string> labels;
};

inline LabeledCorpus load_corpus(const fs::path& dir, const std::string& stem) {
    LabeledCorpus out;
    const cge::Vocab& vocab = cge::project_vocab();
    for (const std::string& line : cge::read_lines((dir / (stem + ".txt")).string())) {
        out.seqs.push_back(cge::tokenize(cge::unescape_line(line), vocab));
    }
    out.labels = cge::read_lines((dir / (stem + ".labels.txt")).string());
    return out;
}

inline cge::DomainOracle default_oracle() {
    return cge::DomainOracle(cge::default_novel_suite(1));
}

} // namespace bench
