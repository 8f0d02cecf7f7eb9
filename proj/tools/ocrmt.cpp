#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "ocrmt/cli.hpp"

namespace {

// exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OCR-robust English-to-Spanish translation pipeline"};
    app.set_version_flag("--version", ocrmt::kVersion);
    app.require_subcommand(1);

    ocrmt::PrepOptions prep_opt;
    std::vector<double> split = {0.8, 0.1, 0.1};
    CLI::App* prep = app.add_subcommand("prep", "normalize, split, and histogram a raw pair file");
    prep->add_option("--input", prep_opt.input, "raw tab-separated pair file")->required();
    prep->add_option("--out", prep_opt.out_dir, "output directory")->required();
    prep->add_option("--split", split, "train,val,test fractions")
        ->delimiter(',')
        ->expected(3);
    prep->add_option("--seed", prep_opt.seed, "shuffle seed");

    ocrmt::AugmentOptions aug_opt;
    std::vector<double> rates = {0.08, 0.01, 0.01};
    CLI::App* augment = app.add_subcommand("augment", "double a corpus with OCR-style noise");
    augment->add_option("--corpus", aug_opt.corpus, "clean corpus file")->required();
    augment->add_option("--out", aug_opt.out, "augmented corpus file")->required();
    CLI::Option* rates_opt = augment->add_option("--rates", rates, "substitution,deletion,insertion rates")
                                 ->delimiter(',')
                                 ->expected(3);
    augment->add_option("--seed", aug_opt.seed, "noise seed");
    augment->add_option("--ocr-predictions", aug_opt.ocr_predictions,
                        "real OCR output: prediction<TAB>original lines")
        ->excludes(rates_opt);

    ocrmt::TrainOptions train_opt;
    std::vector<size_t> emb = {256, 256};
    std::string variant = "plain";
    CLI::App* train = app.add_subcommand("train", "fit a translation model");
    train->add_option("--train", train_opt.train, "training corpus file")->required();
    train->add_option("--val", train_opt.val, "validation corpus file")->required();
    train->add_option("--out", train_opt.out_dir, "output directory")->required();
    train->add_option("--variant", variant, "model variant")
        ->check(CLI::IsMember({"plain", "attention"}));
    train->add_option("--n-units", train_opt.config.n_units, "LSTM units per layer");
    train->add_option("--lr", train_opt.config.learning_rate, "Adam learning rate");
    train->add_option("--dropout", train_opt.config.dropout_rate, "embedding dropout rate");
    train->add_option("--emb", emb, "source,target embedding dims")->delimiter(',')->expected(2);
    train->add_option("--batch-size", train_opt.config.batch_size, "pairs per Adam step");
    train->add_option("--epochs", train_opt.config.max_epochs, "max training epochs");
    train->add_option("--patience", train_opt.config.patience, "early-stopping patience");
    train->add_option("--max-len", train_opt.config.max_len, "encoded sequence length");
    train->add_option("--seed", train_opt.config.seed, "init/shuffle/dropout seed");

    ocrmt::TranslateOptions tr_opt;
    CLI::App* translate = app.add_subcommand("translate", "translate text with a checkpoint");
    translate->add_option("--ckpt", tr_opt.ckpt, "checkpoint file")->required();
    CLI::Option* text_opt = translate->add_option("--text", tr_opt.text, "one sentence to translate");
    CLI::Option* file_opt = translate->add_option("--file", tr_opt.file, "file with one sentence per line");
    text_opt->excludes(file_opt);
    translate->add_flag("--noisy", tr_opt.noisy, "keep OCR confusion characters when normalizing");

    ocrmt::EvalOptions eval_opt;
    std::string smoothing = "none";
    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a test corpus");
    eval->add_option("--ckpt", eval_opt.ckpt, "checkpoint file")->required();
    eval->add_option("--test", eval_opt.test, "test corpus file")->required();
    eval->add_option("--out", eval_opt.out, "predictions file (report written alongside)")
        ->required();
    eval->add_option("--smoothing", smoothing, "BLEU smoothing")
        ->check(CLI::IsMember({"none", "add-one"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*prep) {
            prep_opt.train_fraction = split[0];
            prep_opt.val_fraction = split[1];
            prep_opt.test_fraction = split[2];
            ocrmt::run_prep(prep_opt, std::cout);
        } else if (*augment) {
            aug_opt.substitution_rate = rates[0];
            aug_opt.deletion_rate = rates[1];
            aug_opt.insertion_rate = rates[2];
            ocrmt::run_augment(aug_opt, std::cout);
        } else if (*train) {
            train_opt.config.d_src = emb[0];
            train_opt.config.d_tgt = emb[1];
            train_opt.config.variant = ocrmt::variant_from_name(variant);
            ocrmt::run_train(train_opt, std::cout);
        } else if (*translate) {
            if (!*text_opt && !*file_opt) {
                std::cerr << "translate requires --text or --file\n";
                return kExitUsage;
            }
            ocrmt::run_translate(tr_opt, std::cout);
        } else if (*eval) {
            eval_opt.add_one_smoothing = smoothing == "add-one";
            ocrmt::run_eval(eval_opt, std::cout);
        }
    } catch (const ocrmt::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const ocrmt::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ocrmt::shape_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return 0;
}
