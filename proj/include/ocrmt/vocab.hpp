#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ocrmt/corpus.hpp"
#include "ocrmt/util.hpp"

namespace ocrmt {

// Special indices are fixed so encoded data is meaningful without the vocab.
inline constexpr int32_t kPad = 0;
inline constexpr int32_t kSos = 1;
inline constexpr int32_t kEos = 2;
inline constexpr int32_t kUnk = 3;
inline constexpr const char* kSpecialNames[4] = {"<pad>", "<sos>", "<eos>", "<unk>"};

class Vocabulary {
public:
    Vocabulary() = default;

    // tokens: corpus tokens in index order (index 4 onward); specials are
    // prepended here so callers never pass them in.
    explicit Vocabulary(std::vector<std::string> tokens) {
        index_to_token_.reserve(tokens.size() + 4);
        for (const char* s : kSpecialNames) index_to_token_.emplace_back(s);
        for (auto& t : tokens) index_to_token_.push_back(std::move(t));
        for (size_t i = 0; i < index_to_token_.size(); i++) {
            auto [_, inserted] = token_to_index_.emplace(index_to_token_[i], static_cast<int32_t>(i));
            if (!inserted) throw data_error("duplicate vocabulary token: " + index_to_token_[i]);
        }
    }

    size_t size() const { return index_to_token_.size(); }

    int32_t index_of(std::string_view token) const {
        auto it = token_to_index_.find(std::string(token));
        return it == token_to_index_.end() ? kUnk : it->second;
    }

    bool contains(std::string_view token) const {
        return token_to_index_.count(std::string(token)) != 0;
    }

    const std::string& token_at(int32_t index) const {
        if (index < 0 || static_cast<size_t>(index) >= index_to_token_.size()) {
            throw data_error("vocabulary index out of range: " + std::to_string(index));
        }
        return index_to_token_[static_cast<size_t>(index)];
    }

    const std::vector<std::string>& tokens() const { return index_to_token_; }

    uint64_t hash() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& t : index_to_token_) {
            h = fnv1a64(t, h);
            h = fnv1a64("\n", h);
        }
        return h;
    }

private:
    std::vector<std::string> index_to_token_;
    std::unordered_map<std::string, int32_t> token_to_index_;
};

// Every distinct token is kept (no frequency cutoff); indices are assigned by
// descending frequency, ties broken lexicographically, so the mapping is a
// pure function of the token multiset.
inline Vocabulary build_vocab(const std::vector<std::string>& sentences) {
    if (sentences.empty()) throw data_error("build_vocab: no sentences");
    std::map<std::string, size_t> freq;  // ordered: lexicographic tie-break for free
    for (const auto& s : sentences) {
        for (auto& tok : split_tokens(s)) freq[std::move(tok)]++;
    }
    std::vector<std::pair<std::string, size_t>> entries(freq.begin(), freq.end());
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens;
    tokens.reserve(entries.size());
    for (auto& [tok, _] : entries) tokens.push_back(std::move(tok));
    return Vocabulary(std::move(tokens));
}

inline Vocabulary build_vocab(const ParallelCorpus& corpus, Side side) {
    std::vector<std::string> sentences;
    sentences.reserve(corpus.size());
    for (const auto& pair : corpus) {
        sentences.push_back(side == Side::source ? pair.source : pair.target);
    }
    return build_vocab(sentences);
}

struct EncodedSequence {
    std::vector<int32_t> indices;  // length = max_len, PAD-filled past true_length
    size_t true_length = 0;        // count of non-PAD entries
    friend bool operator==(const EncodedSequence&, const EncodedSequence&) = default;
};

enum class Role { source, target };

// Source framing: [tokens..., EOS, PAD...]. Target framing: [SOS, tokens...,
// EOS, PAD...]. Both require token count ≤ max_len − 2 so either framing fits.
inline EncodedSequence encode(std::string_view sentence, const Vocabulary& vocab, size_t max_len,
                              Role role) {
    auto tokens = split_tokens(sentence);
    if (tokens.size() + 2 > max_len) {
        throw data_error("sentence of " + std::to_string(tokens.size()) +
                         " tokens exceeds max_len " + std::to_string(max_len));
    }
    EncodedSequence seq;
    seq.indices.assign(max_len, kPad);
    size_t pos = 0;
    if (role == Role::target) seq.indices[pos++] = kSos;
    for (const auto& tok : tokens) seq.indices[pos++] = vocab.index_of(tok);
    seq.indices[pos++] = kEos;
    seq.true_length = pos;
    return seq;
}

inline bool fits(std::string_view sentence, size_t max_len) {
    return token_count(sentence) + 2 <= max_len;
}

inline std::string decode(const EncodedSequence& seq, const Vocabulary& vocab) {
    std::string out;
    for (int32_t idx : seq.indices) {
        if (idx == kPad || idx == kSos || idx == kEos) continue;
        const std::string& tok = vocab.token_at(idx);  // validates range
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

// Text format: one token per line, index = line number, specials first.
inline void save_vocab(const std::string& path, const Vocabulary& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write vocabulary: " + path);
    for (const auto& t : vocab.tokens()) out << t << '\n';
    if (!out) throw data_error("failed writing vocabulary: " + path);
}

inline Vocabulary load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open vocabulary: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        detail::strip_cr(line);
        lines.push_back(line);
    }
    if (lines.size() < 4) throw data_error("vocabulary file too short: " + path);
    for (int i = 0; i < 4; i++) {
        if (lines[static_cast<size_t>(i)] != kSpecialNames[i]) {
            throw data_error("vocabulary file missing special token " +
                             std::string(kSpecialNames[i]) + ": " + path);
        }
    }
    return Vocabulary(std::vector<std::string>(lines.begin() + 4, lines.end()));
}

}  // namespace ocrmt
