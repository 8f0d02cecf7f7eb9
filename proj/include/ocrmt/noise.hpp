#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "ocrmt/corpus.hpp"
#include "ocrmt/util.hpp"

namespace ocrmt {

// Character-level model of OCR errors: visually confusable substitutions plus
// rare drops and spurious insertions.
struct NoiseChannel {
    std::map<char, std::vector<std::pair<char, double>>> confusions;
    double substitution_rate = 0.08;
    double deletion_rate = 0.01;
    double insertion_rate = 0.01;
    uint64_t seed = 1;

    void validate() const {
        for (double r : {substitution_rate, deletion_rate, insertion_rate}) {
            if (!(r >= 0.0 && r <= 1.0)) throw data_error("noise rate out of [0,1]");
        }
        if (substitution_rate + deletion_rate > 1.0) {
            throw data_error("substitution_rate + deletion_rate exceeds 1");
        }
        for (const auto& [c, repls] : confusions) {
            if (repls.empty()) throw data_error(std::string("no replacements for '") + c + "'");
            for (const auto& [_, w] : repls) {
                if (!(w > 0.0)) throw data_error("confusion weight must be positive");
            }
        }
    }
};

// Visually plausible confusable pairs, both directions, uniform weights.
inline NoiseChannel default_confusions() {
    NoiseChannel ch;
    static constexpr std::pair<char, char> pairs[] = {
        {'o', '0'}, {'l', '1'}, {'i', '1'}, {'e', '3'}, {'a', '@'},
        {'s', '5'}, {'t', '+'}, {'g', '9'}, {'b', '8'},
    };
    for (auto [from, to] : pairs) {
        ch.confusions[from].push_back({to, 1.0});
        ch.confusions[to].push_back({from, 1.0});
    }
    return ch;
}

// The non-letter characters the channel can emit. normalize_noisy must retain
// exactly these, and insertions draw from them.
inline std::string confusion_alphabet(const NoiseChannel& channel) {
    std::string chars;
    for (const auto& [_, repls] : channel.confusions) {
        for (const auto& [c, w] : repls) {
            (void)w;
            if (!(c >= 'a' && c <= 'z') && chars.find(c) == std::string::npos) chars.push_back(c);
        }
    }
    std::sort(chars.begin(), chars.end());
    return chars;
}

namespace detail {

// Uniform double in [0,1) from the top 53 bits: identical on every platform,
// unlike std::uniform_real_distribution.
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline char weighted_draw(const std::vector<std::pair<char, double>>& repls, std::mt19937_64& rng) {
    double total = 0.0;
    for (const auto& [_, w] : repls) total += w;
    double u = uniform_unit(rng) * total;
    for (const auto& [c, w] : repls) {
        u -= w;
        if (u < 0.0) return c;
    }
    return repls.back().first;
}

}  // namespace detail

// One character event per input character: [0,sub) substitute (no-op for
// unconfusable characters), [sub,sub+del) delete, else keep. Spaces only ever
// pass through. An independent draw decides insertion after each character.
inline std::string corrupt(const std::string& sentence, const NoiseChannel& channel,
                           std::mt19937_64& rng) {
    channel.validate();
    const std::string alphabet = confusion_alphabet(channel);
    std::string out;
    out.reserve(sentence.size() + 4);
    for (char c : sentence) {
        if (c == ' ') {
            out.push_back(c);
        } else {
            double u = detail::uniform_unit(rng);
            if (u < channel.substitution_rate) {
                auto it = channel.confusions.find(c);
                if (it != channel.confusions.end()) {
                    out.push_back(detail::weighted_draw(it->second, rng));
                } else {
                    out.push_back(c);
                }
            } else if (u < channel.substitution_rate + channel.deletion_rate) {
                // dropped
            } else {
                out.push_back(c);
            }
        }
        if (channel.insertion_rate > 0.0 && !alphabet.empty() &&
            detail::uniform_unit(rng) < channel.insertion_rate) {
            out.push_back(alphabet[rng() % alphabet.size()]);
        }
    }
    std::string cleaned = normalize_noisy(out, alphabet);
    // deletions can wipe a short sentence out entirely; keep the clean source
    // rather than emit a pair with an empty side
    return cleaned.empty() ? sentence : cleaned;
}

struct AugmentedCorpus {
    ParallelCorpus pairs;
    std::vector<bool> misfit;  // parallel to pairs

    size_t size() const { return pairs.size(); }
};

// Doubles the corpus: all clean pairs first, then one misfit per clean pair in
// the same order. Pair i is corrupted on its own rng stream so results do not
// depend on corpus size or processing order.
inline AugmentedCorpus augment(const ParallelCorpus& corpus, const NoiseChannel& channel) {
    if (corpus.empty()) throw data_error("augment: empty corpus");
    channel.validate();
    AugmentedCorpus out;
    out.pairs.reserve(corpus.size() * 2);
    out.misfit.reserve(corpus.size() * 2);
    for (const auto& p : corpus) {
        out.pairs.push_back(p);
        out.misfit.push_back(false);
    }
    for (size_t i = 0; i < corpus.size(); i++) {
        std::mt19937_64 rng(derive_seed(channel.seed, i));
        out.pairs.push_back({corrupt(corpus[i].source, channel, rng), corpus[i].target});
        out.misfit.push_back(true);
    }
    return out;
}

inline void write_augmented(const std::string& path, const AugmentedCorpus& aug) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write augmented corpus: " + path);
    for (size_t i = 0; i < aug.pairs.size(); i++) {
        out << aug.pairs[i].source << '\t' << aug.pairs[i].target << '\t'
            << (aug.misfit[i] ? "misfit" : "clean") << '\n';
    }
    if (!out) throw data_error("failed writing augmented corpus: " + path);
}

struct OcrIngest {
    AugmentedCorpus corpus;  // every pair flagged misfit
    size_t malformed = 0;
    size_t unmatched = 0;         // original text absent from the reference corpus
    size_t empty_prediction = 0;  // prediction normalized to nothing
};

// Reads `predicted_text <TAB> original_source_text` lines (an external OCR
// run's output) and pairs each prediction with the target of its original.
inline OcrIngest ingest_ocr_predictions(const std::string& path, const ParallelCorpus& reference,
                                        const NoiseChannel& channel) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open OCR predictions: " + path);
    const std::string alphabet = confusion_alphabet(channel);
    std::unordered_map<std::string, const std::string*> source_to_target;
    for (const auto& p : reference) source_to_target.emplace(p.source, &p.target);

    OcrIngest result;
    std::string line;
    while (std::getline(in, line)) {
        detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split_fields(line);
        if (fields.size() < 2) {
            result.malformed++;
            continue;
        }
        std::string original = normalize_sentence(fields[1]);
        auto it = source_to_target.find(original);
        if (it == source_to_target.end()) {
            result.unmatched++;
            continue;
        }
        std::string prediction = normalize_noisy(fields[0], alphabet);
        if (prediction.empty()) {
            result.empty_prediction++;
            continue;
        }
        result.corpus.pairs.push_back({std::move(prediction), *it->second});
        result.corpus.misfit.push_back(true);
    }
    return result;
}

}  // namespace ocrmt
