#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ocrmt/bleu.hpp"
#include "ocrmt/corpus.hpp"
#include "ocrmt/model.hpp"
#include "ocrmt/noise.hpp"
#include "ocrmt/train.hpp"
#include "ocrmt/util.hpp"

// Command implementations behind the CLI binary. Flag parsing stays in the
// binary; everything here takes a filled option struct and throws data_error /
// numeric_error on failure, so the same entry points are unit-testable.
namespace ocrmt {

namespace detail {

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw data_error("cannot create directory " + dir + ": " + ec.message());
}

inline void ensure_parent_dir(const std::string& file_path) {
    auto parent = std::filesystem::path(file_path).parent_path();
    if (!parent.empty()) ensure_dir(parent.string());
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

}  // namespace detail

// ---- prep -------------------------------------------------------------------

struct PrepOptions {
    std::string input;    // raw tab-separated pair file
    std::string out_dir;  // receives train/val/test/histogram/manifest
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
    uint64_t seed = 1;
};

// Parses and normalizes the raw file, splits it, and writes the three corpus
// files plus a source-length histogram and the run manifest.
inline void run_prep(const PrepOptions& opt, std::ostream& log) {
    AnkiParse parsed = parse_anki(opt.input);
    if (parsed.corpus.empty()) throw data_error("prep: no usable pairs in " + opt.input);

    SplitSpec spec;
    spec.train_fraction = opt.train_fraction;
    spec.val_fraction = opt.val_fraction;
    spec.test_fraction = opt.test_fraction;
    spec.seed = opt.seed;
    CorpusSplit split = split_corpus(parsed.corpus, spec);

    detail::ensure_dir(opt.out_dir);
    const std::string train_path = detail::join_path(opt.out_dir, "train.txt");
    const std::string val_path = detail::join_path(opt.out_dir, "val.txt");
    const std::string test_path = detail::join_path(opt.out_dir, "test.txt");
    const std::string hist_path = detail::join_path(opt.out_dir, "length_hist.csv");
    write_corpus(train_path, split.train);
    write_corpus(val_path, split.val);
    write_corpus(test_path, split.test);
    write_histogram_csv(hist_path, length_histogram(parsed.corpus, Side::source));

    write_manifest(detail::join_path(opt.out_dir, "manifest.txt"),
                   {{"command", "prep"},
                    {"version", kVersion},
                    {"timestamp", iso_timestamp_utc()},
                    {"input", opt.input},
                    {"input_hash", hex64(file_hash(opt.input))},
                    {"seed", std::to_string(opt.seed)},
                    {"split", format_double(opt.train_fraction) + "," +
                                  format_double(opt.val_fraction) + "," +
                                  format_double(opt.test_fraction)},
                    {"pairs", std::to_string(parsed.corpus.size())},
                    {"dropped_empty", std::to_string(parsed.dropped_empty)},
                    {"malformed", std::to_string(parsed.malformed)},
                    {"artifact.train", train_path},
                    {"artifact_hash.train", hex64(file_hash(train_path))},
                    {"artifact.val", val_path},
                    {"artifact_hash.val", hex64(file_hash(val_path))},
                    {"artifact.test", test_path},
                    {"artifact_hash.test", hex64(file_hash(test_path))},
                    {"artifact.histogram", hist_path},
                    {"artifact_hash.histogram", hex64(file_hash(hist_path))}});

    log << "parsed " << parsed.corpus.size() << " pairs (" << parsed.dropped_empty
        << " dropped empty, " << parsed.malformed << " malformed)\n";
    log << "split train/val/test = " << split.train.size() << "/" << split.val.size() << "/"
        << split.test.size() << " into " << opt.out_dir << "\n";
}

// ---- augment ----------------------------------------------------------------

struct AugmentOptions {
    std::string corpus;  // clean corpus file (prep output)
    std::string out;     // augmented corpus file
    double substitution_rate = 0.08;
    double deletion_rate = 0.01;
    double insertion_rate = 0.01;
    uint64_t seed = 1;
    std::string ocr_predictions;  // when set, ingest real OCR output instead
};

// Doubles the corpus with synthetic OCR noise, or appends ingested real OCR
// predictions when a predictions file is given.
inline void run_augment(const AugmentOptions& opt, std::ostream& log) {
    CorpusRead base = read_corpus(opt.corpus);
    if (base.corpus.empty()) throw data_error("augment: no usable pairs in " + opt.corpus);

    NoiseChannel channel = default_confusions();
    channel.substitution_rate = opt.substitution_rate;
    channel.deletion_rate = opt.deletion_rate;
    channel.insertion_rate = opt.insertion_rate;
    channel.seed = opt.seed;

    AugmentedCorpus augmented;
    std::vector<std::pair<std::string, std::string>> extra_manifest;
    if (opt.ocr_predictions.empty()) {
        augmented = augment(base.corpus, channel);
    } else {
        OcrIngest ingest = ingest_ocr_predictions(opt.ocr_predictions, base.corpus, channel);
        for (const auto& p : base.corpus) {
            augmented.pairs.push_back(p);
            augmented.misfit.push_back(false);
        }
        for (size_t i = 0; i < ingest.corpus.size(); i++) {
            augmented.pairs.push_back(ingest.corpus.pairs[i]);
            augmented.misfit.push_back(true);
        }
        log << "ingested " << ingest.corpus.size() << " OCR predictions (" << ingest.malformed
            << " malformed, " << ingest.unmatched << " unmatched, " << ingest.empty_prediction
            << " empty)\n";
        extra_manifest = {{"ocr_predictions", opt.ocr_predictions},
                          {"ocr_predictions_hash", hex64(file_hash(opt.ocr_predictions))},
                          {"ingested", std::to_string(ingest.corpus.size())},
                          {"malformed", std::to_string(ingest.malformed)},
                          {"unmatched", std::to_string(ingest.unmatched)},
                          {"empty_prediction", std::to_string(ingest.empty_prediction)}};
    }

    detail::ensure_parent_dir(opt.out);
    write_augmented(opt.out, augmented);

    std::vector<std::pair<std::string, std::string>> manifest = {
        {"command", "augment"},
        {"version", kVersion},
        {"timestamp", iso_timestamp_utc()},
        {"input", opt.corpus},
        {"input_hash", hex64(file_hash(opt.corpus))},
        {"rates", format_double(opt.substitution_rate) + "," +
                      format_double(opt.deletion_rate) + "," +
                      format_double(opt.insertion_rate)},
        {"seed", std::to_string(opt.seed)},
        {"pairs_in", std::to_string(base.corpus.size())},
        {"pairs_out", std::to_string(augmented.size())},
        {"artifact.corpus", opt.out},
        {"artifact_hash.corpus", hex64(file_hash(opt.out))},
    };
    manifest.insert(manifest.end(), extra_manifest.begin(), extra_manifest.end());
    write_manifest(opt.out + ".manifest.txt", manifest);

    log << "wrote " << augmented.size() << " pairs (" << base.corpus.size() << " clean) to "
        << opt.out << "\n";
}

// ---- train ------------------------------------------------------------------

struct TrainOptions {
    std::string train;    // corpus file
    std::string val;      // corpus file
    std::string out_dir;  // receives model.ckpt, loss.csv, manifest
    TrainConfig config;
};

inline void run_train(const TrainOptions& opt, std::ostream& log) {
    opt.config.validate();
    CorpusRead train_read = read_corpus(opt.train);
    CorpusRead val_read = read_corpus(opt.val);
    if (train_read.corpus.empty()) throw data_error("train: no usable pairs in " + opt.train);
    if (val_read.corpus.empty()) throw data_error("train: no usable pairs in " + opt.val);

    Vocabulary src_vocab = build_vocab(train_read.corpus, Side::source);
    Vocabulary tgt_vocab = build_vocab(train_read.corpus, Side::target);

    EncodeResult train_set = encode_pairs(train_read.corpus, src_vocab, tgt_vocab, opt.config.max_len);
    EncodeResult val_set = encode_pairs(val_read.corpus, src_vocab, tgt_vocab, opt.config.max_len);
    if (train_set.skipped_too_long + val_set.skipped_too_long > 0) {
        log << "skipped " << train_set.skipped_too_long << " train / "
            << val_set.skipped_too_long << " val pairs over max_len " << opt.config.max_len
            << "\n";
    }
    if (train_set.pairs.empty() || val_set.pairs.empty()) {
        throw data_error("train: no pairs fit max_len " + std::to_string(opt.config.max_len));
    }

    log << "vocab " << src_vocab.size() << " source / " << tgt_vocab.size()
        << " target tokens; training " << variant_name(opt.config.variant) << " on "
        << train_set.pairs.size() << " pairs\n";
    FitResult result = fit(train_set.pairs, val_set.pairs, opt.config, src_vocab.size(),
                           tgt_vocab.size(), [&log](size_t epoch, double tr, double va) {
                               log << "epoch " << epoch << " train_loss " << format_double(tr)
                                   << " val_loss " << format_double(va) << "\n";
                           });

    detail::ensure_dir(opt.out_dir);
    const std::string ckpt_path = detail::join_path(opt.out_dir, "model.ckpt");
    const std::string loss_path = detail::join_path(opt.out_dir, "loss.csv");
    // deterministic meta only: checkpoints must be bit-identical across
    // identically-seeded runs
    save_checkpoint(ckpt_path, result.params, src_vocab, tgt_vocab,
                    {{"max_len", std::to_string(opt.config.max_len)},
                     {"seed", std::to_string(opt.config.seed)},
                     {"learning_rate", format_double(opt.config.learning_rate)},
                     {"dropout_rate", format_double(opt.config.dropout_rate)},
                     {"batch_size", std::to_string(opt.config.batch_size)},
                     {"patience", std::to_string(opt.config.patience)},
                     {"best_epoch", std::to_string(result.report.best_epoch)},
                     {"best_val_loss", format_double(result.report.best_val_loss)}});
    write_loss_csv(loss_path, result.report);

    write_manifest(detail::join_path(opt.out_dir, "manifest.txt"),
                   {{"command", "train"},
                    {"version", kVersion},
                    {"timestamp", iso_timestamp_utc()},
                    {"train", opt.train},
                    {"train_hash", hex64(file_hash(opt.train))},
                    {"val", opt.val},
                    {"val_hash", hex64(file_hash(opt.val))},
                    {"variant", variant_name(opt.config.variant)},
                    {"n_units", std::to_string(opt.config.n_units)},
                    {"emb", std::to_string(opt.config.d_src) + "," +
                                std::to_string(opt.config.d_tgt)},
                    {"learning_rate", format_double(opt.config.learning_rate)},
                    {"dropout_rate", format_double(opt.config.dropout_rate)},
                    {"batch_size", std::to_string(opt.config.batch_size)},
                    {"max_epochs", std::to_string(opt.config.max_epochs)},
                    {"patience", std::to_string(opt.config.patience)},
                    {"max_len", std::to_string(opt.config.max_len)},
                    {"seed", std::to_string(opt.config.seed)},
                    {"artifact.checkpoint", ckpt_path},
                    {"artifact_hash.checkpoint", hex64(file_hash(ckpt_path))},
                    {"artifact.loss_csv", loss_path},
                    {"artifact_hash.loss_csv", hex64(file_hash(loss_path))}});

    log << variant_name(opt.config.variant) << " n_units=" << opt.config.n_units
        << " best val loss " << format_double(result.report.best_val_loss) << " at epoch "
        << result.report.best_epoch << " (stopped after " << result.report.stopped_epoch
        << ")\n";
}

// ---- translate --------------------------------------------------------------

struct TranslateOptions {
    std::string ckpt;
    std::string text;  // exactly one of text/file is set (binary enforces)
    std::string file;
    bool noisy = false;  // keep the channel's confusion characters on input
};

inline size_t checkpoint_max_len(const Checkpoint& ckpt) {
    auto it = ckpt.meta.find("max_len");
    if (it == ckpt.meta.end()) return 12;
    size_t max_len = std::stoul(it->second);
    if (max_len < 3) throw data_error("checkpoint meta has unusable max_len " + it->second);
    return max_len;
}

// Normalizes each input line and prints one translation per line.
inline void run_translate(const TranslateOptions& opt, std::ostream& log) {
    Checkpoint ckpt = load_checkpoint(opt.ckpt);
    const size_t max_len = checkpoint_max_len(ckpt);
    const std::string alphabet = confusion_alphabet(default_confusions());

    std::vector<std::string> raw_lines;
    if (!opt.file.empty()) {
        std::ifstream in(opt.file, std::ios::binary);
        if (!in) throw data_error("cannot open input file: " + opt.file);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) raw_lines.push_back(line);
        }
    } else {
        raw_lines.push_back(opt.text);
    }
    if (raw_lines.empty()) throw data_error("translate: no input lines");

    for (const auto& raw : raw_lines) {
        std::string normalized =
            opt.noisy ? normalize_noisy(raw, alphabet) : normalize_sentence(raw);
        if (normalized.empty()) {
            throw data_error("translate: input normalizes to nothing: \"" + raw + "\"");
        }
        log << translate_greedy(normalized, ckpt.params, ckpt.src_vocab, ckpt.tgt_vocab, max_len)
            << "\n";
    }
}

// ---- eval -------------------------------------------------------------------

struct EvalOptions {
    std::string ckpt;
    std::string test;  // corpus file
    std::string out;   // predictions file; report/manifest written alongside
    bool add_one_smoothing = false;
};

inline void run_eval(const EvalOptions& opt, std::ostream& log) {
    Checkpoint ckpt = load_checkpoint(opt.ckpt);
    CorpusRead test_read = read_corpus(opt.test);
    if (test_read.corpus.empty()) throw data_error("eval: no usable pairs in " + opt.test);
    const size_t max_len = checkpoint_max_len(ckpt);

    BleuConfig config;
    config.add_one_smoothing = opt.add_one_smoothing;
    EvalResult result = evaluate_model(test_read.corpus, ckpt.params, ckpt.src_vocab,
                                       ckpt.tgt_vocab, max_len, config);

    detail::ensure_parent_dir(opt.out);
    const std::string report_path = opt.out + ".report.txt";
    write_predictions(opt.out, result.rows);
    write_bleu_report(report_path, result.report, config, result.rows.size(),
                      result.skipped_too_long);

    write_manifest(opt.out + ".manifest.txt",
                   {{"command", "eval"},
                    {"version", kVersion},
                    {"timestamp", iso_timestamp_utc()},
                    {"checkpoint", opt.ckpt},
                    {"checkpoint_hash", hex64(file_hash(opt.ckpt))},
                    {"test", opt.test},
                    {"test_hash", hex64(file_hash(opt.test))},
                    {"smoothing", opt.add_one_smoothing ? "add-one" : "none"},
                    {"pairs", std::to_string(result.rows.size())},
                    {"skipped_too_long", std::to_string(result.skipped_too_long)},
                    {"artifact.predictions", opt.out},
                    {"artifact_hash.predictions", hex64(file_hash(opt.out))},
                    {"artifact.report", report_path},
                    {"artifact_hash.report", hex64(file_hash(report_path))}});

    log << "bleu " << format_double(result.report.bleu) << " on " << result.rows.size()
        << " pairs (" << result.skipped_too_long << " skipped) -> " << opt.out << "\n";
}

}  // namespace ocrmt
