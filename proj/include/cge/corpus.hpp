#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "cge/errors.hpp"
#include "cge/rng.hpp"

namespace cge {

enum class DomainKind {
    base_language,
    cipher_shift,
    digit_arithmetic,
    bracket_code,
    reversed_words,
    repeat_pattern,
};

DomainKind domain_kind_from_string(const std::string& s);
std::string to_string(DomainKind k);

struct DomainSpec {
    std::string name;
    DomainKind kind = DomainKind::base_language;
    int shift = 3; // cipher rotation
    uint64_t seed = 0;
};

struct LabeledExample {
    std::string text;
    std::string domain;
    std::string split; // "pretrain" | "finetune"
};

struct CorpusManifest {
    std::vector<std::string> names;
    std::vector<long long> counts;
    std::vector<double> fractions;
    long long total = 0;
    int k_novel = 0;
    uint64_t seed = 0;
};

// Shared 500-word lexicon. Words are 4-6 lowercase letters and every word is
// identified by its first two characters, so spellings are near-deterministic
// once a word starts. Built from a fixed internal seed; identical everywhere.
class Lexicon {
  public:
    static const Lexicon& instance();

    const std::vector<std::string>& words() const { return words_; }
    bool contains(const std::string& w) const { return set_.count(w) > 0; }
    size_t size() const { return words_.size(); }
    // Preferred bigram successors (generator side).
    size_t successor(size_t word, int branch) const;

  private:
    Lexicon();
    std::vector<std::string> words_;
    std::unordered_set<std::string> set_;
};

// Example text lengths, chosen to fit context 64 with the bos token.
constexpr int kMinExampleLen = 32;
constexpr int kMaxExampleLen = 63;

// Alphabet rotation used by the cipher domain ('a'..'z' only).
std::string rotate_text(const std::string& text, int shift);

std::vector<LabeledExample> generate_domain(const DomainSpec& spec, long long n);

DomainSpec base_domain_spec(uint64_t seed);
std::vector<DomainSpec> default_novel_suite(uint64_t seed);

struct MixResult {
    std::vector<LabeledExample> examples;
    CorpusManifest manifest;
};

// Counts are round(fraction * total); examples are shuffled by seed. Labels
// travel separately from the text so the training path never sees them.
MixResult mix_corpus(const DomainSpec& base, const std::vector<DomainSpec>& novel, long long total,
                     double base_fraction, const std::vector<double>& novel_fractions, uint64_t seed);

// Deterministic rule cascade standing in for an LLM judge. Knows the suite's
// domain parameters the same way the judge's prompt listed the candidate
// languages.
class DomainOracle {
  public:
    explicit DomainOracle(std::vector<DomainSpec> novel_suite);

    std::string classify(const std::string& text) const;
    int num_domains() const { return static_cast<int>(suite_.size()); }
    const std::vector<DomainSpec>& suite() const { return suite_; }

  private:
    std::vector<DomainSpec> suite_;
};

// File formats: one escaped example per line; sidecar carries line-aligned
// domain names.
std::string escape_line(const std::string& s);
std::string unescape_line(const std::string& s);
void write_lines(const std::string& path, const std::vector<std::string>& lines);
std::vector<std::string> read_lines(const std::string& path);

} // namespace cge
