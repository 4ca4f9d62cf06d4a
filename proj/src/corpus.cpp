#include "cge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>

namespace cge {

DomainKind domain_kind_from_string(const std::string& s) {
    if (s == "base-language") return DomainKind::base_language;
    if (s == "cipher-shift") return DomainKind::cipher_shift;
    if (s == "digit-arithmetic") return DomainKind::digit_arithmetic;
    if (s == "bracket-code") return DomainKind::bracket_code;
    if (s == "reversed-words") return DomainKind::reversed_words;
    if (s == "repeat-pattern") return DomainKind::repeat_pattern;
    throw ValidationError("unknown domain kind '" + s + "'");
}

std::string to_string(DomainKind k) {
    switch (k) {
        case DomainKind::base_language: return "base-language";
        case DomainKind::cipher_shift: return "cipher-shift";
        case DomainKind::digit_arithmetic: return "digit-arithmetic";
        case DomainKind::bracket_code: return "bracket-code";
        case DomainKind::reversed_words: return "reversed-words";
        case DomainKind::repeat_pattern: return "repeat-pattern";
    }
    throw ValidationError("unknown domain kind");
}

const Lexicon& Lexicon::instance() {
    static const Lexicon lex;
    return lex;
}

Lexicon::Lexicon() {
    Rng rng(0x5e11ab1e);
    std::vector<std::pair<char, char>> pairs;
    pairs.reserve(26 * 26);
    for (char a = 'a'; a <= 'z'; ++a) {
        for (char b = 'a'; b <= 'z'; ++b) pairs.emplace_back(a, b);
    }
    rng.shuffle(pairs);
    words_.reserve(500);
    for (size_t i = 0; i < 500; ++i) {
        std::string w;
        w += pairs[i].first;
        w += pairs[i].second;
        const size_t suffix = 2 + i % 3; // word length 4..6
        for (size_t j = 0; j < suffix; ++j) {
            w += static_cast<char>('a' + rng.next_below(26));
        }
        words_.push_back(w);
        set_.insert(w);
    }
}

size_t Lexicon::successor(size_t word, int branch) const {
    return (word * 31 + 101 * static_cast<size_t>(branch) + 13) % words_.size();
}

namespace {

// Word-salad over the lexicon with a simple bigram: a quarter of transitions
// repeat the current word, most of the rest go to one of three preferred
// successors. Repetition mass is what gives repeated motifs a high
// probability under a model trained on this distribution.
constexpr double kSelfProb = 0.25;
constexpr double kPreferredProb = 0.55;

std::vector<size_t> base_word_stream(const Lexicon& lex, Rng& rng, int target_len, int max_len) {
    std::vector<size_t> words;
    size_t w = rng.next_below(lex.size());
    int len = static_cast<int>(lex.words()[w].size());
    words.push_back(w);
    while (len < target_len) {
        const double r = rng.next_double();
        size_t nw;
        if (r < kSelfProb) {
            nw = w;
        } else if (r < kSelfProb + kPreferredProb) {
            nw = lex.successor(w, 1 + static_cast<int>(rng.next_below(3)));
        } else {
            nw = rng.next_below(lex.size());
        }
        const int wlen = static_cast<int>(lex.words()[nw].size());
        if (len + 1 + wlen > max_len) break;
        words.push_back(nw);
        len += 1 + wlen;
        w = nw;
    }
    return words;
}

std::string join_words(const Lexicon& lex, const std::vector<size_t>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += lex.words()[ids[i]];
    }
    return out;
}

int draw_target_len(Rng& rng) {
    return kMinExampleLen +
           static_cast<int>(rng.next_below(static_cast<uint64_t>(kMaxExampleLen - kMinExampleLen + 1)));
}

std::string gen_base(const Lexicon& lex, Rng& rng) {
    return join_words(lex, base_word_stream(lex, rng, draw_target_len(rng), kMaxExampleLen));
}

char rotate_char(char c, int shift) {
    if (c < 'a' || c > 'z') return c;
    return static_cast<char>('a' + (c - 'a' + shift % 26 + 26) % 26);
}

std::string gen_cipher(const Lexicon& lex, Rng& rng, int shift) {
    return rotate_text(gen_base(lex, rng), shift);
}

std::string gen_reversed(const Lexicon& lex, Rng& rng) {
    std::string text = gen_base(lex, rng);
    size_t start = 0;
    for (size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == ' ') {
            std::reverse(text.begin() + static_cast<long>(start), text.begin() + static_cast<long>(i));
            start = i + 1;
        }
    }
    return text;
}

std::string gen_arithmetic(Rng& rng) {
    const int target = draw_target_len(rng);
    std::string out;
    while (static_cast<int>(out.size()) < target) {
        const long a = static_cast<long>(rng.next_below(100));
        const long b = static_cast<long>(rng.next_below(100));
        const std::string unit =
            std::to_string(a) + "+" + std::to_string(b) + "=" + std::to_string(a + b);
        const int extra = static_cast<int>(unit.size()) + (out.empty() ? 0 : 1);
        if (static_cast<int>(out.size()) + extra > kMaxExampleLen) break;
        if (!out.empty()) out += ' ';
        out += unit;
    }
    return out;
}

const char kOpens[4] = {'(', '[', '{', '<'};
const char kCloses[4] = {')', ']', '}', '>'};

std::string gen_bracket_unit(Rng& rng, int depth) {
    const size_t b = rng.next_below(4);
    std::string inner;
    if (depth < 3 && rng.next_double() < 0.45) {
        inner = gen_bracket_unit(rng, depth + 1);
        if (rng.next_double() < 0.3) inner += gen_bracket_unit(rng, depth + 1);
    } else {
        const size_t n = 1 + rng.next_below(3);
        for (size_t i = 0; i < n; ++i) inner += static_cast<char>('a' + rng.next_below(26));
    }
    return std::string(1, kOpens[b]) + inner + std::string(1, kCloses[b]);
}

std::string gen_bracket(Rng& rng) {
    const int target = draw_target_len(rng);
    std::string out;
    while (static_cast<int>(out.size()) < target) {
        std::string unit = gen_bracket_unit(rng, 0);
        const int extra = static_cast<int>(unit.size()) + (out.empty() ? 0 : 1);
        if (static_cast<int>(out.size()) + extra > kMaxExampleLen) {
            if (static_cast<int>(out.size()) >= kMinExampleLen) break;
            continue; // redraw a smaller unit
        }
        if (!out.empty()) out += ' ';
        out += unit;
    }
    return out;
}

// Motifs come from a small seeded pool so the domain is coherent: the same
// few motifs recur across examples the way a novel language reuses its
// vocabulary.
constexpr size_t kRepeatPoolSize = 16;

std::string gen_repeat(const Lexicon& lex, uint64_t domain_seed, Rng& rng) {
    const int target = draw_target_len(rng);
    Rng pool_rng = Rng(domain_seed).derive("motif-pool");
    std::vector<size_t> pool(kRepeatPoolSize);
    for (size_t& p : pool) p = pool_rng.next_below(lex.size());
    const std::string& motif = lex.words()[pool[rng.next_below(kRepeatPoolSize)]];
    std::string out = motif;
    while (static_cast<int>(out.size() + 1 + motif.size()) <= kMaxExampleLen &&
           static_cast<int>(out.size()) < target) {
        out += ' ';
        out += motif;
    }
    return out;
}

std::string generate_text(const DomainSpec& spec, Rng& rng) {
    const Lexicon& lex = Lexicon::instance();
    switch (spec.kind) {
        case DomainKind::base_language: return gen_base(lex, rng);
        case DomainKind::cipher_shift: return gen_cipher(lex, rng, spec.shift);
        case DomainKind::digit_arithmetic: return gen_arithmetic(rng);
        case DomainKind::bracket_code: return gen_bracket(rng);
        case DomainKind::reversed_words: return gen_reversed(lex, rng);
        case DomainKind::repeat_pattern: return gen_repeat(lex, spec.seed, rng);
    }
    throw ValidationError("unknown domain kind");
}

} // namespace

std::string rotate_text(const std::string& text, int shift) {
    std::string out = text;
    for (char& c : out) c = rotate_char(c, shift);
    return out;
}

std::vector<LabeledExample> generate_domain(const DomainSpec& spec, long long n) {
    if (n < 1) throw ValidationError("generate_domain: n must be >= 1");
    std::vector<LabeledExample> out;
    out.reserve(static_cast<size_t>(n));
    const Rng domain_rng = Rng(spec.seed).derive(spec.name);
    for (long long i = 0; i < n; ++i) {
        Rng rng = domain_rng.derive("example", static_cast<uint64_t>(i));
        out.push_back({generate_text(spec, rng), spec.name, ""});
    }
    return out;
}

DomainSpec base_domain_spec(uint64_t seed) {
    return DomainSpec{"base", DomainKind::base_language, 0, Rng(seed).derive("domain-base").next_u64()};
}

std::vector<DomainSpec> default_novel_suite(uint64_t seed) {
    const Rng root(seed);
    std::vector<DomainSpec> suite;
    auto add = [&](const std::string& name, DomainKind kind) {
        DomainSpec s;
        s.name = name;
        s.kind = kind;
        s.seed = root.derive("domain-" + name).next_u64();
        suite.push_back(std::move(s));
    };
    add("cipher-shift", DomainKind::cipher_shift);
    add("digit-arithmetic", DomainKind::digit_arithmetic);
    add("bracket-code", DomainKind::bracket_code);
    add("reversed-words", DomainKind::reversed_words);
    add("repeat-pattern", DomainKind::repeat_pattern);
    return suite;
}

MixResult mix_corpus(const DomainSpec& base, const std::vector<DomainSpec>& novel, long long total,
                     double base_fraction, const std::vector<double>& novel_fractions, uint64_t seed) {
    if (total < 1) throw ValidationError("mix_corpus: total must be >= 1");
    if (novel.size() != novel_fractions.size()) {
        throw ValidationError("mix_corpus: one fraction per novel domain required");
    }
    double sum = base_fraction;
    double novel_sum = 0.0;
    for (double f : novel_fractions) {
        if (f < 0.0) throw ValidationError("mix_corpus: negative fraction");
        sum += f;
        novel_sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError("mix_corpus: fractions sum to " + std::to_string(sum) + ", expected 1");
    }
    if (!novel.empty() && novel_sum > 0.15 + 1e-9) {
        throw ValidationError("mix_corpus: novel mass " + std::to_string(novel_sum) +
                              " violates the rare-domain bound M/(N'+M) <= 0.15");
    }

    MixResult res;
    res.manifest.seed = seed;
    res.manifest.k_novel = static_cast<int>(novel.size());

    auto add_domain = [&](const DomainSpec& spec, double fraction) {
        const long long count = std::llround(fraction * static_cast<double>(total));
        res.manifest.names.push_back(spec.name);
        res.manifest.counts.push_back(count);
        res.manifest.fractions.push_back(fraction);
        if (count > 0) {
            auto ex = generate_domain(spec, count);
            res.examples.insert(res.examples.end(), std::make_move_iterator(ex.begin()),
                                std::make_move_iterator(ex.end()));
        }
    };
    add_domain(base, base_fraction);
    for (size_t i = 0; i < novel.size(); ++i) add_domain(novel[i], novel_fractions[i]);

    res.manifest.total = 0;
    for (long long c : res.manifest.counts) res.manifest.total += c;

    Rng rng = Rng(seed).derive("mix");
    rng.shuffle(res.examples);
    return res;
}

DomainOracle::DomainOracle(std::vector<DomainSpec> novel_suite) : suite_(std::move(novel_suite)) {
    for (const DomainSpec& s : suite_) {
        if (s.kind == DomainKind::base_language) {
            throw ValidationError("oracle: base-language is not a novel domain");
        }
    }
}

namespace {

bool is_digits(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool matches_arith_unit(const std::string& u) {
    const size_t plus = u.find('+');
    const size_t eq = u.find('=');
    if (plus == std::string::npos || eq == std::string::npos || eq < plus) return false;
    return is_digits(u.substr(0, plus)) && is_digits(u.substr(plus + 1, eq - plus - 1)) &&
           is_digits(u.substr(eq + 1));
}

std::vector<std::string> split_units(const std::string& text) {
    std::vector<std::string> units;
    std::string cur;
    for (char c : text) {
        if (c == ' ') {
            if (!cur.empty()) units.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) units.push_back(std::move(cur));
    return units;
}

double arith_ratio(const std::string& text) {
    const auto units = split_units(text);
    if (units.empty()) return 0.0;
    size_t hits = 0;
    for (const auto& u : units) hits += matches_arith_unit(u) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(units.size());
}

int bracket_index(char c, const char* set) {
    for (int i = 0; i < 4; ++i) {
        if (set[i] == c) return i;
    }
    return -1;
}

// Fraction of characters that are brackets, and fraction of those that pair
// up in a proper nesting scan.
std::pair<double, double> bracket_stats(const std::string& text) {
    size_t bracket_chars = 0;
    size_t matched = 0;
    std::vector<int> stack;
    for (char c : text) {
        const int open = bracket_index(c, kOpens);
        const int close = bracket_index(c, kCloses);
        if (open >= 0) {
            ++bracket_chars;
            stack.push_back(open);
        } else if (close >= 0) {
            ++bracket_chars;
            if (!stack.empty() && stack.back() == close) {
                stack.pop_back();
                matched += 2;
            }
        }
    }
    if (text.empty() || bracket_chars == 0) return {0.0, 0.0};
    return {static_cast<double>(bracket_chars) / static_cast<double>(text.size()),
            static_cast<double>(matched) / static_cast<double>(bracket_chars)};
}

double lexicon_hit_ratio(const std::string& text, const std::function<std::string(std::string)>& map) {
    const Lexicon& lex = Lexicon::instance();
    const auto units = split_units(text);
    size_t words = 0, hits = 0;
    for (const auto& u : units) {
        if (!std::all_of(u.begin(), u.end(), [](char c) { return c >= 'a' && c <= 'z'; })) continue;
        ++words;
        if (lex.contains(map(u))) ++hits;
    }
    if (words == 0) return 0.0;
    return static_cast<double>(hits) / static_cast<double>(words);
}

double best_motif_coverage(const std::string& text) {
    const int n = static_cast<int>(text.size());
    if (n == 0) return 0.0;
    double best = 0.0;
    for (int off = 0; off <= std::min(8, n - 1); ++off) {
        for (int m = 1; m <= 8 && off + m <= n; ++m) {
            int hits = 0;
            for (int i = off; i < n; ++i) {
                if (text[static_cast<size_t>(i)] == text[static_cast<size_t>(off + (i - off) % m)]) ++hits;
            }
            best = std::max(best, static_cast<double>(hits) / static_cast<double>(n));
        }
    }
    return best;
}

} // namespace

std::string DomainOracle::classify(const std::string& text) const {
    // Fixed cascade; only rules for domains present in the suite fire.
    auto find = [&](DomainKind k) -> const DomainSpec* {
        for (const DomainSpec& s : suite_) {
            if (s.kind == k) return &s;
        }
        return nullptr;
    };
    if (const DomainSpec* s = find(DomainKind::digit_arithmetic)) {
        if (arith_ratio(text) >= 0.8) return s->name;
    }
    if (const DomainSpec* s = find(DomainKind::bracket_code)) {
        const auto [density, matched] = bracket_stats(text);
        if (density >= 0.2 && matched >= 0.6) return s->name;
    }
    if (const DomainSpec* s = find(DomainKind::cipher_shift)) {
        const int shift = s->shift;
        const double r = lexicon_hit_ratio(text, [shift](std::string w) {
            for (char& c : w) c = rotate_char(c, -shift);
            return w;
        });
        if (r >= 0.6) return s->name;
    }
    if (const DomainSpec* s = find(DomainKind::reversed_words)) {
        const double r = lexicon_hit_ratio(text, [](std::string w) {
            std::reverse(w.begin(), w.end());
            return w;
        });
        if (r >= 0.6) return s->name;
    }
    if (const DomainSpec* s = find(DomainKind::repeat_pattern)) {
        if (best_motif_coverage(text) >= 0.7) return s->name;
    }
    return "base";
}

std::string escape_line(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '\\') {
            out += "\\\\";
        } else if (c == '\n') {
            out += "\\n";
        } else {
            out += c;
        }
    }
    return out;
}

std::string unescape_line(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            ++i;
            out += (s[i] == 'n') ? '\n' : s[i];
        } else {
            out += s[i];
        }
    }
    return out;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_lines: cannot open " + path);
    for (const std::string& line : lines) f << line << '\n';
    if (!f) throw IoError("write_lines: write failed for " + path);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("read_lines: cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) lines.push_back(line);
    return lines;
}

} // namespace cge
