#pragma once

// Deterministic toy English→Spanish corpus with a systematic token mapping and
// adjective reordering (english "the red cat", spanish "el gato rojo"). Small
// enough to memorize quickly, structured enough that attention has a real job.

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ocrmt/corpus.hpp"

namespace synth {

struct Lexeme {
    const char* en;
    const char* es;
};

inline const std::vector<Lexeme>& nouns() {
    static const std::vector<Lexeme> v = {
        {"cat", "gato"},   {"dog", "perro"},   {"bird", "pajaro"}, {"house", "casa"},
        {"book", "libro"}, {"tree", "arbol"},  {"car", "coche"},   {"child", "nino"},
        {"river", "rio"},  {"stone", "piedra"}, {"door", "puerta"}, {"fish", "pez"},
    };
    return v;
}

inline const std::vector<Lexeme>& adjectives() {
    static const std::vector<Lexeme> v = {
        {"red", "rojo"},     {"blue", "azul"},   {"small", "pequeno"}, {"big", "grande"},
        {"old", "viejo"},    {"new", "nuevo"},   {"happy", "feliz"},   {"quiet", "tranquilo"},
    };
    return v;
}

inline const std::vector<Lexeme>& verbs() {
    static const std::vector<Lexeme> v = {
        {"sees", "ve"},        {"likes", "quiere"},  {"finds", "encuentra"}, {"takes", "toma"},
        {"follows", "sigue"},  {"paints", "pinta"},  {"holds", "sostiene"},  {"watches", "mira"},
    };
    return v;
}

inline const std::vector<Lexeme>& determiners() {
    static const std::vector<Lexeme> v = {{"the", "el"}, {"a", "un"}};
    return v;
}

// `det [adj] noun verb det [adj] noun`, the adjective moving behind its noun
// on the Spanish side. Source length 5–7 tokens, so everything fits max_len 12.
inline ocrmt::SentencePair make_pair(std::mt19937_64& rng) {
    const auto pick = [&](const std::vector<Lexeme>& pool) -> const Lexeme& {
        return pool[rng() % pool.size()];
    };
    std::string en, es;
    const auto append = [&](const Lexeme& lex) {
        if (!en.empty()) en.push_back(' ');
        if (!es.empty()) es.push_back(' ');
        en += lex.en;
        es += lex.es;
    };
    const auto noun_phrase = [&] {
        append(pick(determiners()));
        if (rng() % 2 == 0) {
            const Lexeme& adj = pick(adjectives());
            const Lexeme& noun = pick(nouns());
            en += ' ';
            en += adj.en;
            en += ' ';
            en += noun.en;
            es += ' ';
            es += noun.es;  // noun first on the Spanish side
            es += ' ';
            es += adj.es;
        } else {
            append(pick(nouns()));
        }
    };
    noun_phrase();
    append(pick(verbs()));
    noun_phrase();
    return {en, es};
}

// n pairs with distinct source sentences, deterministic in seed.
inline ocrmt::ParallelCorpus make_corpus(size_t n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    ocrmt::ParallelCorpus corpus;
    std::set<std::string> seen;
    while (corpus.size() < n) {
        ocrmt::SentencePair p = make_pair(rng);
        if (seen.insert(p.source).second) corpus.push_back(std::move(p));
    }
    return corpus;
}

}  // namespace synth
