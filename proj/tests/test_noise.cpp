#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "ocrmt/noise.hpp"

using namespace ocrmt;

namespace {

bool channel_maps(const NoiseChannel& ch, char from, char to) {
    auto it = ch.confusions.find(from);
    if (it == ch.confusions.end()) return false;
    for (const auto& [c, _] : it->second) {
        if (c == to) return true;
    }
    return false;
}

NoiseChannel forcing_channel(char from, char to) {
    NoiseChannel ch;
    ch.confusions[from].push_back({to, 1.0});
    ch.substitution_rate = 1.0;
    ch.deletion_rate = 0.0;
    ch.insertion_rate = 0.0;
    return ch;
}

}  // namespace

TEST_CASE("default channel covers the visually confusable pairs") {
    NoiseChannel ch = default_confusions();
    CHECK_NOTHROW(ch.validate());
    CHECK(channel_maps(ch, 'o', '0'));
    CHECK(channel_maps(ch, 't', '+'));
    CHECK(channel_maps(ch, 'l', '1'));
    CHECK(channel_maps(ch, 'i', '1'));
    CHECK(channel_maps(ch, 'e', '3'));
    CHECK(channel_maps(ch, 'a', '@'));
    CHECK(channel_maps(ch, 's', '5'));
    CHECK(channel_maps(ch, 'g', '9'));
    CHECK(channel_maps(ch, 'b', '8'));
    CHECK(channel_maps(ch, '0', 'o'));  // reverse direction present too
    CHECK(ch.substitution_rate == 0.08);
    CHECK(ch.deletion_rate == 0.01);
    CHECK(ch.insertion_rate == 0.01);
    CHECK(confusion_alphabet(ch) == "+013589@");
}

TEST_CASE("channel validation rejects bad parameters") {
    NoiseChannel ch = default_confusions();
    ch.substitution_rate = 1.5;
    CHECK_THROWS_AS(ch.validate(), data_error);
    ch = default_confusions();
    ch.substitution_rate = 0.9;
    ch.deletion_rate = 0.2;  // sum > 1
    CHECK_THROWS_AS(ch.validate(), data_error);
    ch = default_confusions();
    ch.confusions['x'].push_back({'y', 0.0});  // non-positive weight
    CHECK_THROWS_AS(ch.validate(), data_error);
}

TEST_CASE("corrupt reproduces the canonical misfit examples") {
    std::mt19937_64 rng(1);
    CHECK(corrupt("code", forcing_channel('o', '0'), rng) == "c0de");
    CHECK(corrupt("today", forcing_channel('t', '+'), rng) == "+oday");
}

TEST_CASE("the identity channel leaves sentences unchanged") {
    NoiseChannel ch = default_confusions();
    ch.substitution_rate = ch.deletion_rate = ch.insertion_rate = 0.0;
    std::mt19937_64 rng(1);
    CHECK(corrupt("be cool now", ch, rng) == "be cool now");
}

TEST_CASE("corrupt is reproducible for a fixed rng state") {
    NoiseChannel ch = default_confusions();
    std::mt19937_64 a(42), b(42), c(43);
    std::string sentence = "the quick brown fox jumps over the lazy dog";
    std::string out_a = corrupt(sentence, ch, a);
    std::string out_b = corrupt(sentence, ch, b);
    CHECK(out_a == out_b);
    // different stream: corruption pattern diverges somewhere over many runs
    bool diverged = false;
    for (int i = 0; i < 50 && !diverged; i++) {
        diverged = corrupt(sentence, ch, a) != corrupt(sentence, ch, c);
    }
    CHECK(diverged);
}

TEST_CASE("substitution-only corruption preserves token count") {
    NoiseChannel ch = default_confusions();
    ch.deletion_rate = ch.insertion_rate = 0.0;
    ch.substitution_rate = 0.5;
    std::mt19937_64 rng(7);
    std::string sentence = "several words with letters to substitute aggressively";
    for (int i = 0; i < 200; i++) {
        CHECK(token_count(corrupt(sentence, ch, rng)) == token_count(sentence));
    }
}

TEST_CASE("observed substitution frequency matches the configured rate") {
    NoiseChannel ch = default_confusions();
    ch.substitution_rate = 0.08;
    ch.deletion_rate = ch.insertion_rate = 0.0;
    std::string sentence(10000, 'o');  // every character confusable
    std::mt19937_64 rng(123);
    std::string out = corrupt(sentence, ch, rng);
    REQUIRE(out.size() == sentence.size());
    double freq = static_cast<double>(std::count(out.begin(), out.end(), '0')) /
                  static_cast<double>(sentence.size());
    CHECK(freq == Catch::Approx(0.08).margin(0.01));
}

TEST_CASE("corruption that erases a sentence falls back to the clean source") {
    NoiseChannel ch;
    ch.substitution_rate = 0.0;
    ch.deletion_rate = 1.0;
    ch.insertion_rate = 0.0;
    std::mt19937_64 rng(1);
    CHECK(corrupt("ab", ch, rng) == "ab");
}

TEST_CASE("augment doubles the corpus with aligned misfit pairs") {
    ParallelCorpus corpus = {{"code word", "palabra clave"}, {"go now", "ve ahora"}};
    NoiseChannel ch = default_confusions();
    ch.seed = 11;
    AugmentedCorpus aug = augment(corpus, ch);
    REQUIRE(aug.size() == 4);
    // clean block first, in corpus order
    CHECK(aug.pairs[0] == corpus[0]);
    CHECK(aug.pairs[1] == corpus[1]);
    CHECK(aug.misfit == std::vector<bool>{false, false, true, true});
    // misfit pairs keep their originating targets
    CHECK(aug.pairs[2].target == corpus[0].target);
    CHECK(aug.pairs[3].target == corpus[1].target);

    // identity channel: misfit sources equal clean sources
    NoiseChannel identity = default_confusions();
    identity.substitution_rate = identity.deletion_rate = identity.insertion_rate = 0.0;
    AugmentedCorpus same = augment({{"go", "ve"}}, identity);
    REQUIRE(same.size() == 2);
    CHECK(same.pairs[0].source == same.pairs[1].source);

    CHECK_THROWS_AS(augment({}, ch), data_error);
}

TEST_CASE("augment is seed-reproducible and per-pair stable") {
    ParallelCorpus corpus = {{"first sentence here", "x"}, {"second sentence there", "y"},
                             {"third one as well", "z"}};
    NoiseChannel ch = default_confusions();
    ch.seed = 5;
    AugmentedCorpus a = augment(corpus, ch);
    AugmentedCorpus b = augment(corpus, ch);
    CHECK(a.pairs == b.pairs);

    // each pair has its own rng stream, so a prefix corpus corrupts identically
    AugmentedCorpus prefix = augment({corpus[0], corpus[1]}, ch);
    CHECK(prefix.pairs[2] == a.pairs[3]);  // misfit of pair 0
    CHECK(prefix.pairs[3] == a.pairs[4]);  // misfit of pair 1

    ch.seed = 6;
    AugmentedCorpus c = augment(corpus, ch);
    CHECK(a.pairs != c.pairs);
}

TEST_CASE("write_augmented and read_corpus round-trip provenance") {
    ParallelCorpus corpus = {{"code word", "palabra clave"}};
    NoiseChannel ch = default_confusions();
    ch.seed = 3;
    AugmentedCorpus aug = augment(corpus, ch);
    const std::string path = "test_noise_aug_tmp.txt";
    write_augmented(path, aug);
    CorpusRead r = read_corpus(path);
    CHECK(r.corpus == aug.pairs);
    CHECK(r.misfit == aug.misfit);
    CHECK(r.skipped == 0);
    std::remove(path.c_str());
}

TEST_CASE("ingest_ocr_predictions maps predictions onto reference targets") {
    ParallelCorpus reference = {{"code", "codigo"}, {"go now", "ve ahora"}};
    NoiseChannel ch = default_confusions();
    const std::string path = "test_noise_ocr_tmp.txt";
    {
        std::ofstream out(path, std::ios::binary);
        out << "c0de\tCode.\n"           // matches "code" after normalization
            << "g0 n0w\tgo now\n"        // matches second pair
            << "whatever\tnot present\n" // unmatched original
            << "missing tab line\n"      // malformed
            << "!!!\tcode\n";            // prediction normalizes to empty
    }
    OcrIngest ing = ingest_ocr_predictions(path, reference, ch);
    REQUIRE(ing.corpus.size() == 2);
    CHECK(ing.corpus.pairs[0] == SentencePair{"c0de", "codigo"});
    CHECK(ing.corpus.pairs[1] == SentencePair{"g0 n0w", "ve ahora"});
    CHECK(ing.corpus.misfit == std::vector<bool>{true, true});
    CHECK(ing.unmatched == 1);
    CHECK(ing.malformed == 1);
    CHECK(ing.empty_prediction == 1);
    std::remove(path.c_str());

    // empty file: empty result, zero counters
    { std::ofstream out(path, std::ios::binary); }
    OcrIngest empty = ingest_ocr_predictions(path, reference, ch);
    CHECK(empty.corpus.size() == 0);
    CHECK(empty.malformed == 0);
    CHECK(empty.unmatched == 0);
    std::remove(path.c_str());

    CHECK_THROWS_AS(ingest_ocr_predictions("definitely_missing_ocr.txt", reference, ch), data_error);
}
