#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ocrmt/util.hpp"

namespace ocrmt {

struct SentencePair {
    std::string source;
    std::string target;
    friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

// Pairs in file order; every field already normalized and non-empty.
using ParallelCorpus = std::vector<SentencePair>;

namespace detail {

// Decodes one UTF-8 code point starting at `i`, advancing it. Malformed bytes
// decode as U+FFFD and consume a single byte.
inline uint32_t utf8_next(std::string_view s, size_t& i) {
    const auto byte = [&](size_t k) { return static_cast<unsigned char>(s[k]); };
    unsigned char b0 = byte(i);
    if (b0 < 0x80) {
        i += 1;
        return b0;
    }
    int len = 0;
    uint32_t cp = 0;
    if ((b0 & 0xe0) == 0xc0) {
        len = 2;
        cp = b0 & 0x1f;
    } else if ((b0 & 0xf0) == 0xe0) {
        len = 3;
        cp = b0 & 0x0f;
    } else if ((b0 & 0xf8) == 0xf0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        i += 1;
        return 0xFFFD;
    }
    if (i + static_cast<size_t>(len) > s.size()) {
        i += 1;
        return 0xFFFD;
    }
    for (int k = 1; k < len; k++) {
        unsigned char bk = byte(i + static_cast<size_t>(k));
        if ((bk & 0xc0) != 0x80) {
            i += 1;
            return 0xFFFD;
        }
        cp = (cp << 6) | (bk & 0x3f);
    }
    static const uint32_t min_cp[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < min_cp[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
        i += 1;
        return 0xFFFD;
    }
    i += static_cast<size_t>(len);
    return cp;
}

inline bool is_space_cp(uint32_t cp) {
    switch (cp) {
        case ' ':
        case '\t':
        case '\n':
        case '\r':
        case '\v':
        case '\f':
        case 0x00A0:
        case 0x2028:
        case 0x2029:
        case 0x202F:
        case 0x205F:
        case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

// ASCII folding for Latin-1 Supplement and Latin Extended-A. Anything not in
// this table and not a basic Latin letter is dropped by the normalizer.
inline const char* fold_latin(uint32_t cp) {
    struct Range {
        uint32_t lo, hi;
        const char* out;
    };
    static const Range table[] = {
        {0x00C0, 0x00C5, "a"}, {0x00C6, 0x00C6, "ae"}, {0x00C7, 0x00C7, "c"},
        {0x00C8, 0x00CB, "e"}, {0x00CC, 0x00CF, "i"},  {0x00D0, 0x00D0, "d"},
        {0x00D1, 0x00D1, "n"}, {0x00D2, 0x00D6, "o"},  {0x00D8, 0x00D8, "o"},
        {0x00D9, 0x00DC, "u"}, {0x00DD, 0x00DD, "y"},  {0x00DE, 0x00DE, "th"},
        {0x00DF, 0x00DF, "ss"}, {0x00E0, 0x00E5, "a"}, {0x00E6, 0x00E6, "ae"},
        {0x00E7, 0x00E7, "c"}, {0x00E8, 0x00EB, "e"},  {0x00EC, 0x00EF, "i"},
        {0x00F0, 0x00F0, "d"}, {0x00F1, 0x00F1, "n"},  {0x00F2, 0x00F6, "o"},
        {0x00F8, 0x00F8, "o"}, {0x00F9, 0x00FC, "u"},  {0x00FD, 0x00FD, "y"},
        {0x00FE, 0x00FE, "th"}, {0x00FF, 0x00FF, "y"}, {0x0100, 0x0105, "a"},
        {0x0106, 0x010D, "c"}, {0x010E, 0x0111, "d"},  {0x0112, 0x011B, "e"},
        {0x011C, 0x0123, "g"}, {0x0124, 0x0127, "h"},  {0x0128, 0x0131, "i"},
        {0x0132, 0x0133, "ij"}, {0x0134, 0x0135, "j"}, {0x0136, 0x0138, "k"},
        {0x0139, 0x0142, "l"}, {0x0143, 0x014B, "n"},  {0x014C, 0x0151, "o"},
        {0x0152, 0x0153, "oe"}, {0x0154, 0x0159, "r"}, {0x015A, 0x0161, "s"},
        {0x0162, 0x0167, "t"}, {0x0168, 0x0173, "u"},  {0x0174, 0x0175, "w"},
        {0x0176, 0x0178, "y"}, {0x0179, 0x017E, "z"},  {0x017F, 0x017F, "s"},
    };
    for (const auto& r : table) {
        if (cp >= r.lo && cp <= r.hi) return r.out;
    }
    return nullptr;
}

inline std::string normalize_impl(std::string_view raw, std::string_view extra_keep) {
    std::string out;
    out.reserve(raw.size());
    std::string token;
    const auto flush = [&] {
        if (token.empty()) return;
        if (!out.empty()) out.push_back(' ');
        out += token;
        token.clear();
    };
    size_t i = 0;
    while (i < raw.size()) {
        uint32_t cp = utf8_next(raw, i);
        if (is_space_cp(cp)) {
            flush();
            continue;
        }
        if (cp >= 'A' && cp <= 'Z') {
            token.push_back(static_cast<char>(cp + 32));
        } else if (cp >= 'a' && cp <= 'z') {
            token.push_back(static_cast<char>(cp));
        } else if (cp < 0x80 && extra_keep.find(static_cast<char>(cp)) != std::string_view::npos) {
            token.push_back(static_cast<char>(cp));
        } else if (const char* folded = fold_latin(cp)) {
            token += folded;
        }
        // everything else (punctuation, digits, marks, other scripts) is dropped
    }
    flush();
    return out;
}

}  // namespace detail

// Lowercase, fold diacritics to ASCII, keep only [a-z], collapse whitespace.
inline std::string normalize_sentence(std::string_view raw) {
    return detail::normalize_impl(raw, {});
}

// Same pipeline, but characters of a noise channel's confusion alphabet
// (digits, '@', '+', ...) survive so misfit words like "c0de" stay intact.
inline std::string normalize_noisy(std::string_view raw, std::string_view confusion_alphabet) {
    return detail::normalize_impl(raw, confusion_alphabet);
}

inline std::vector<std::string> split_tokens(std::string_view sentence) {
    std::vector<std::string> tokens;
    size_t i = 0;
    while (i < sentence.size()) {
        size_t j = sentence.find(' ', i);
        if (j == std::string_view::npos) j = sentence.size();
        if (j > i) tokens.emplace_back(sentence.substr(i, j - i));
        i = j + 1;
    }
    return tokens;
}

inline size_t token_count(std::string_view sentence) {
    if (sentence.empty()) return 0;
    return static_cast<size_t>(std::count(sentence.begin(), sentence.end(), ' ')) + 1;
}

struct AnkiParse {
    ParallelCorpus corpus;
    size_t dropped_empty = 0;    // lines whose source or target normalized to ""
    size_t malformed = 0;        // lines with fewer than two tab-separated fields
};

namespace detail {

inline std::vector<std::string> split_fields(std::string_view line) {
    std::vector<std::string> fields;
    size_t i = 0;
    while (true) {
        size_t j = line.find('\t', i);
        if (j == std::string_view::npos) {
            fields.emplace_back(line.substr(i));
            break;
        }
        fields.emplace_back(line.substr(i, j - i));
        i = j + 1;
    }
    return fields;
}

inline void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

// Reads ANKI-style tab-separated pairs: source <TAB> target [<TAB> attribution].
// Fields beyond the second are ignored; empty-normalizing pairs are dropped.
inline AnkiParse parse_anki(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open corpus file: " + path);
    AnkiParse result;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        detail::strip_cr(line);
        if (first) {
            // strip a UTF-8 BOM if present
            if (line.size() >= 3 && line.compare(0, 3, "\xef\xbb\xbf") == 0) line.erase(0, 3);
            first = false;
        }
        if (line.empty()) continue;
        auto fields = detail::split_fields(line);
        if (fields.size() < 2) {
            result.malformed++;
            continue;
        }
        std::string src = normalize_sentence(fields[0]);
        std::string tgt = normalize_sentence(fields[1]);
        if (src.empty() || tgt.empty()) {
            result.dropped_empty++;
            continue;
        }
        result.corpus.push_back({std::move(src), std::move(tgt)});
    }
    return result;
}

// Reader for pipeline-internal corpus files. Fields are taken verbatim (they
// are already normalized; misfit sources may carry digits that a re-run of
// normalize_sentence would destroy).
struct CorpusRead {
    ParallelCorpus corpus;
    std::vector<bool> misfit;  // per-pair provenance if a third column is present
    size_t skipped = 0;
};

inline CorpusRead read_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open corpus file: " + path);
    CorpusRead result;
    std::string line;
    while (std::getline(in, line)) {
        detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split_fields(line);
        if (fields.size() < 2 || fields[0].empty() || fields[1].empty()) {
            result.skipped++;
            continue;
        }
        result.corpus.push_back({fields[0], fields[1]});
        result.misfit.push_back(fields.size() >= 3 && fields[2] == "misfit");
    }
    return result;
}

inline void write_corpus(const std::string& path, const ParallelCorpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write corpus file: " + path);
    for (const auto& p : corpus) out << p.source << '\t' << p.target << '\n';
    if (!out) throw data_error("failed writing corpus file: " + path);
}

struct LengthHistogram {
    std::map<size_t, size_t> counts;  // word count -> number of sentences
    size_t total() const {
        size_t n = 0;
        for (const auto& [_, c] : counts) n += c;
        return n;
    }
};

enum class Side { source, target };

inline LengthHistogram length_histogram(const ParallelCorpus& corpus, Side side) {
    if (corpus.empty()) throw data_error("length_histogram: empty corpus");
    LengthHistogram h;
    for (const auto& p : corpus) {
        const std::string& s = side == Side::source ? p.source : p.target;
        h.counts[token_count(s)]++;
    }
    return h;
}

inline void write_histogram_csv(const std::string& path, const LengthHistogram& h) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write histogram: " + path);
    out << "word_count,sentences\n";
    for (const auto& [words, count] : h.counts) out << words << ',' << count << '\n';
}

struct SplitSpec {
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
    uint64_t seed = 1;
};

struct CorpusSplit {
    ParallelCorpus train, val, test;
};

namespace detail {

// Hand-rolled Fisher-Yates so the permutation is identical across standard
// library implementations (std::shuffle is not pinned down).
template <typename T>
inline void deterministic_shuffle(std::vector<T>& items, uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (size_t i = items.size(); i > 1; i--) {
        size_t j = static_cast<size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace detail

inline CorpusSplit split_corpus(const ParallelCorpus& corpus, const SplitSpec& spec) {
    const double sum = spec.train_fraction + spec.val_fraction + spec.test_fraction;
    if (std::abs(sum - 1.0) > 1e-9) throw data_error("split fractions must sum to 1");
    for (double f : {spec.train_fraction, spec.val_fraction, spec.test_fraction}) {
        if (f < 0.0 || f > 1.0) throw data_error("split fraction out of [0,1]");
    }
    if (corpus.size() < 3) throw data_error("corpus too small to split (need at least 3 pairs)");

    ParallelCorpus shuffled = corpus;
    detail::deterministic_shuffle(shuffled, spec.seed);

    const auto n = static_cast<double>(shuffled.size());
    size_t n_train = static_cast<size_t>(std::floor(n * spec.train_fraction));
    size_t n_train_val = static_cast<size_t>(std::floor(n * (spec.train_fraction + spec.val_fraction)));
    n_train_val = std::max(n_train_val, n_train);
    CorpusSplit out;
    out.train.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(n_train));
    out.val.assign(shuffled.begin() + static_cast<long>(n_train),
                   shuffled.begin() + static_cast<long>(n_train_val));
    out.test.assign(shuffled.begin() + static_cast<long>(n_train_val), shuffled.end());
    if (out.train.empty() || out.val.empty() || out.test.empty()) {
        throw data_error("split leaves an empty partition (train " +
                         std::to_string(out.train.size()) + ", val " +
                         std::to_string(out.val.size()) + ", test " +
                         std::to_string(out.test.size()) + ")");
    }
    return out;
}

inline uint64_t corpus_hash(const ParallelCorpus& corpus) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : corpus) {
        h = fnv1a64(p.source, h);
        h = fnv1a64("\t", h);
        h = fnv1a64(p.target, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

}  // namespace ocrmt
