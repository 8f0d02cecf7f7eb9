#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ocrmt/corpus.hpp"
#include "ocrmt/model.hpp"
#include "ocrmt/util.hpp"

namespace ocrmt {

struct BleuConfig {
    size_t max_n = 4;
    std::vector<double> weights = {0.25, 0.25, 0.25, 0.25};
    bool add_one_smoothing = false;  // (m+1)/(t+1) per n; corpus-level either way

    void validate() const {
        if (max_n == 0 || weights.size() != max_n) {
            throw data_error("bleu: weights length must equal max_n");
        }
        double sum = 0.0;
        for (double w : weights) sum += w;
        if (std::abs(sum - 1.0) > 1e-9) throw data_error("bleu: weights must sum to 1");
    }
};

struct BleuReport {
    double bleu = 0.0;
    std::vector<double> precisions;       // clipped pₙ, n = 1..max_n
    std::vector<size_t> matched, totals;  // the counts behind each pₙ
    double brevity_penalty = 0.0;
    size_t candidate_length = 0;  // c: total candidate tokens
    size_t reference_length = 0;  // r: total reference tokens
};

namespace detail {

// n-gram multiset of one token sequence, keyed by '\x1f'-joined tokens.
inline std::map<std::string, size_t> ngram_counts(const std::vector<std::string>& tokens,
                                                  size_t n) {
    std::map<std::string, size_t> counts;
    if (tokens.size() < n) return counts;
    for (size_t i = 0; i + n <= tokens.size(); i++) {
        std::string key = tokens[i];
        for (size_t k = 1; k < n; k++) {
            key.push_back('\x1f');
            key += tokens[i + k];
        }
        counts[key]++;
    }
    return counts;
}

}  // namespace detail

// Corpus-level BLEU with clipped n-gram precision and brevity penalty
// BP = min(1, exp(1 − r/c)). Single reference per candidate.
inline BleuReport bleu4(const std::vector<std::vector<std::string>>& candidates,
                        const std::vector<std::vector<std::string>>& references,
                        const BleuConfig& config = {}) {
    config.validate();
    if (candidates.size() != references.size()) {
        throw data_error("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                         std::to_string(references.size()) + " references");
    }
    if (candidates.empty()) throw data_error("bleu: empty corpus");

    BleuReport report;
    report.matched.assign(config.max_n, 0);
    report.totals.assign(config.max_n, 0);
    for (size_t i = 0; i < candidates.size(); i++) {
        report.candidate_length += candidates[i].size();
        report.reference_length += references[i].size();
        for (size_t n = 1; n <= config.max_n; n++) {
            auto cand = detail::ngram_counts(candidates[i], n);
            auto ref = detail::ngram_counts(references[i], n);
            for (const auto& [gram, count] : cand) {
                report.totals[n - 1] += count;
                auto it = ref.find(gram);
                if (it != ref.end()) report.matched[n - 1] += std::min(count, it->second);
            }
        }
    }

    report.precisions.resize(config.max_n);
    for (size_t n = 0; n < config.max_n; n++) {
        if (config.add_one_smoothing) {
            report.precisions[n] = static_cast<double>(report.matched[n] + 1) /
                                   static_cast<double>(report.totals[n] + 1);
        } else {
            report.precisions[n] = report.totals[n] == 0
                                       ? 0.0
                                       : static_cast<double>(report.matched[n]) /
                                             static_cast<double>(report.totals[n]);
        }
    }

    if (report.candidate_length == 0) {
        report.brevity_penalty = 0.0;
        report.bleu = 0.0;
        return report;
    }
    report.brevity_penalty =
        std::min(1.0, std::exp(1.0 - static_cast<double>(report.reference_length) /
                                         static_cast<double>(report.candidate_length)));
    double log_sum = 0.0;
    for (size_t n = 0; n < config.max_n; n++) {
        if (report.precisions[n] == 0.0) {
            report.bleu = 0.0;
            return report;
        }
        log_sum += config.weights[n] * std::log(report.precisions[n]);
    }
    report.bleu = report.brevity_penalty * std::exp(log_sum);
    return report;
}

struct PredictionRow {
    std::string source, reference, prediction;
};

struct EvalResult {
    BleuReport report;
    std::vector<PredictionRow> rows;
    size_t skipped_too_long = 0;
};

// Greedy-translates every test source that fits max_len and scores the
// whitespace tokens of the predictions against the references.
inline EvalResult evaluate_model(const ParallelCorpus& test, const ModelParams& params,
                                 const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                 size_t max_len, const BleuConfig& config = {}) {
    if (test.empty()) throw data_error("evaluate_model: empty test corpus");
    EvalResult out;
    std::vector<std::vector<std::string>> candidates, references;
    for (const auto& pair : test) {
        if (!fits(pair.source, max_len)) {
            out.skipped_too_long++;
            continue;
        }
        std::string prediction = translate_greedy(pair.source, params, src_vocab, tgt_vocab, max_len);
        candidates.push_back(split_tokens(prediction));
        references.push_back(split_tokens(pair.target));
        out.rows.push_back({pair.source, pair.target, std::move(prediction)});
    }
    if (out.rows.empty()) {
        throw data_error("evaluate_model: every test pair exceeds max_len " +
                         std::to_string(max_len));
    }
    out.report = bleu4(candidates, references, config);
    return out;
}

inline void write_predictions(const std::string& path, const std::vector<PredictionRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write predictions: " + path);
    for (const auto& r : rows) {
        out << r.source << '\t' << r.reference << '\t' << r.prediction << '\n';
    }
    if (!out) throw data_error("failed writing predictions: " + path);
}

inline void write_bleu_report(const std::string& path, const BleuReport& report,
                              const BleuConfig& config, size_t pairs, size_t skipped_too_long) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write bleu report: " + path);
    out << "# bleu-4 report\n";
    out << "scoring=corpus-level\n";
    out << "smoothing=" << (config.add_one_smoothing ? "add-one" : "none") << '\n';
    out << "bleu=" << format_double(report.bleu) << '\n';
    for (size_t n = 0; n < report.precisions.size(); n++) {
        out << 'p' << (n + 1) << '=' << format_double(report.precisions[n]) << '\n';
    }
    out << "brevity_penalty=" << format_double(report.brevity_penalty) << '\n';
    out << "candidate_length=" << report.candidate_length << '\n';
    out << "reference_length=" << report.reference_length << '\n';
    out << "pairs=" << pairs << '\n';
    out << "skipped_too_long=" << skipped_too_long << '\n';
    if (!out) throw data_error("failed writing bleu report: " + path);
}

}  // namespace ocrmt
