#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ocrmt/model.hpp"
#include "ocrmt/util.hpp"
#include "ocrmt/vocab.hpp"

namespace ocrmt {

struct TrainConfig {
    double learning_rate = 0.001;
    double dropout_rate = 0.2;
    size_t d_src = 256;
    size_t d_tgt = 256;
    size_t n_units = 256;
    size_t batch_size = 64;
    size_t max_epochs = 30;
    size_t patience = 5;
    size_t max_len = 12;
    uint64_t seed = 1;
    Variant variant = Variant::plain;

    void validate() const {
        if (!(learning_rate > 0.0)) throw data_error("learning_rate must be positive");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
            throw data_error("dropout_rate must be in [0,1)");
        }
        for (size_t v : {d_src, d_tgt, n_units, batch_size, max_epochs, patience}) {
            if (v == 0) throw data_error("train config fields must be positive");
        }
        if (max_len < 3) throw data_error("max_len must be at least 3");
    }
};

struct EncodedPair {
    EncodedSequence src, tgt;
};

using EncodedDataset = std::vector<EncodedPair>;

struct EncodeResult {
    EncodedDataset pairs;
    size_t skipped_too_long = 0;
};

// Encodes every pair that fits max_len on both sides; the tail is skipped and
// counted, never truncated.
inline EncodeResult encode_pairs(const ParallelCorpus& corpus, const Vocabulary& src_vocab,
                                 const Vocabulary& tgt_vocab, size_t max_len) {
    EncodeResult out;
    for (const auto& p : corpus) {
        if (!fits(p.source, max_len) || !fits(p.target, max_len)) {
            out.skipped_too_long++;
            continue;
        }
        out.pairs.push_back({encode(p.source, src_vocab, max_len, Role::source),
                             encode(p.target, tgt_vocab, max_len, Role::target)});
    }
    return out;
}

// ---- Adam -------------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m, v;  // parallel to ModelParams::tensors()
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static AdamState init(const ModelParams& params) {
        AdamState st;
        for (const Tensor* p : params.tensors()) {
            st.m.emplace_back(p->rows, p->cols);
            st.v.emplace_back(p->rows, p->cols);
        }
        return st;
    }
};

// θ ← θ − lr·m̂/(√v̂+ε) with bias-corrected first and second moments.
inline void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& st,
                      double lr) {
    auto tensors = params.tensors();
    if (grads.size() != tensors.size() || st.m.size() != tensors.size()) {
        throw shape_error("adam_step: got " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(tensors.size()) + " tensors");
    }
    st.t++;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (size_t i = 0; i < tensors.size(); i++) {
        Tensor& theta = *tensors[i];
        const Tensor& g = grads[i];
        if (!theta.same_shape(g)) {
            throw shape_error("adam_step: tensor " + std::to_string(i) + " is " +
                              shape_str(theta) + " but gradient is " + shape_str(g));
        }
        for (size_t k = 0; k < theta.numel(); k++) {
            double gk = g.data[k];
            st.m[i].data[k] = st.beta1 * st.m[i].data[k] + (1.0 - st.beta1) * gk;
            st.v[i].data[k] = st.beta2 * st.v[i].data[k] + (1.0 - st.beta2) * gk * gk;
            double m_hat = st.m[i].data[k] / bc1;
            double v_hat = st.v[i].data[k] / bc2;
            theta.data[k] -= lr * m_hat / (std::sqrt(v_hat) + st.eps);
        }
    }
}

// ---- epoch loop ---------------------------------------------------------------

// Strict-improvement early stopping: stop once `patience` consecutive epochs
// fail to beat the best validation loss.
struct EarlyStopper {
    size_t patience;
    double best = std::numeric_limits<double>::infinity();
    size_t best_epoch = 0;  // 1-based; 0 = no epoch seen
    size_t stall = 0;

    explicit EarlyStopper(size_t patience_epochs) : patience(patience_epochs) {}

    // Returns true when training should stop after this epoch.
    bool observe(size_t epoch, double val_loss) {
        if (val_loss < best) {
            best = val_loss;
            best_epoch = epoch;
            stall = 0;
            return false;
        }
        stall++;
        return stall >= patience;
    }

    bool improved_at(size_t epoch) const { return best_epoch == epoch; }
};

// One pass over the training set: deterministic epoch shuffle, one Adam step
// per batch on the mean per-position loss. Returns the epoch's mean loss.
inline double run_epoch(const EncodedDataset& train_set, ModelParams& params, AdamState& adam,
                        const TrainConfig& config, size_t epoch) {
    if (train_set.empty()) throw data_error("run_epoch: empty training set");
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); i++) order[i] = i;
    detail::deterministic_shuffle(order, derive_seed(config.seed, 0xE, epoch));
    std::mt19937_64 dropout_rng(derive_seed(config.seed, 0xD, epoch));

    double epoch_loss_sum = 0.0;
    size_t epoch_scored = 0;

    for (size_t begin = 0; begin < order.size(); begin += config.batch_size) {
        const size_t end = std::min(begin + config.batch_size, order.size());
        Tape tape;
        BoundParams bound = bind_params(tape, params);
        std::vector<Value> pair_losses;
        size_t batch_scored = 0;
        for (size_t k = begin; k < end; k++) {
            const EncodedPair& pair = train_set[order[k]];
            ForwardResult fwd = forward_teacher_forced(tape, pair.src, pair.tgt, bound,
                                                       config.dropout_rate, dropout_rng, true);
            pair_losses.push_back(fwd.sum_loss);
            batch_scored += fwd.scored;
        }
        Value batch_sum = pair_losses.size() == 1 ? pair_losses[0] : tape.add_n(pair_losses);
        double batch_sum_value = tape.val(batch_sum).data[0];
        if (!std::isfinite(batch_sum_value)) {
            for (size_t k = 0; k < pair_losses.size(); k++) {
                if (!std::isfinite(tape.val(pair_losses[k]).data[0])) {
                    throw numeric_error("non-finite loss at epoch " + std::to_string(epoch) +
                                        ", batch " + std::to_string(begin / config.batch_size) +
                                        ", pair " + std::to_string(order[begin + k]));
                }
            }
            throw numeric_error("non-finite batch loss at epoch " + std::to_string(epoch));
        }
        Value batch_loss = tape.scale(batch_sum, 1.0 / static_cast<double>(batch_scored));
        tape.backward(batch_loss);

        std::vector<Tensor> grads;
        grads.reserve(bound.leaves.size());
        for (Value leaf : bound.leaves) grads.push_back(tape.grad(leaf));
        adam_step(params, grads, adam, config.learning_rate);

        epoch_loss_sum += batch_sum_value;
        epoch_scored += batch_scored;
    }
    return epoch_loss_sum / static_cast<double>(epoch_scored);
}

// Teacher-forced mean per-position loss, dropout off, params untouched.
inline double evaluate_loss(const EncodedDataset& dataset, const ModelParams& params) {
    if (dataset.empty()) throw data_error("evaluate_loss: empty dataset");
    double loss_sum = 0.0;
    size_t scored = 0;
    std::mt19937_64 rng(0);  // never consumed: dropout off
    for (const EncodedPair& pair : dataset) {
        Tape tape;
        BoundParams bound = bind_params(tape, params);
        ForwardResult fwd = forward_teacher_forced(tape, pair.src, pair.tgt, bound, 0.0, rng, false);
        loss_sum += tape.val(fwd.sum_loss).data[0];
        scored += fwd.scored;
    }
    return loss_sum / static_cast<double>(scored);
}

struct TrainReport {
    std::vector<double> train_loss, val_loss;  // index 0 = epoch 1
    double best_val_loss = std::numeric_limits<double>::infinity();
    size_t best_epoch = 0;     // 1-based epoch that attained best_val_loss first
    size_t stopped_epoch = 0;  // epochs actually run
    TrainConfig config;
};

struct FitResult {
    ModelParams params;  // snapshot from the best-validation epoch
    TrainReport report;
};

using EpochCallback = std::function<void(size_t epoch, double train_loss, double val_loss)>;

// Trains from a fresh Glorot init, snapshotting parameters at every new best
// validation loss, until max_epochs or the patience rule ends the run.
inline FitResult fit(const EncodedDataset& train_set, const EncodedDataset& val_set,
                     const TrainConfig& config, size_t v_src, size_t v_tgt,
                     const EpochCallback& on_epoch = {}) {
    config.validate();
    if (train_set.empty() || val_set.empty()) throw data_error("fit: empty train or val set");

    ModelParams params = init_params(v_src, v_tgt, config.d_src, config.d_tgt, config.n_units,
                                     config.variant, derive_seed(config.seed, 0xA));
    AdamState adam = AdamState::init(params);
    EarlyStopper stopper(config.patience);

    FitResult out;
    out.report.config = config;
    out.params = params;

    for (size_t epoch = 1; epoch <= config.max_epochs; epoch++) {
        double train_loss = run_epoch(train_set, params, adam, config, epoch);
        double val_loss = evaluate_loss(val_set, params);
        out.report.train_loss.push_back(train_loss);
        out.report.val_loss.push_back(val_loss);
        out.report.stopped_epoch = epoch;
        bool stop = stopper.observe(epoch, val_loss);
        if (stopper.improved_at(epoch)) out.params = params;
        if (on_epoch) on_epoch(epoch, train_loss, val_loss);
        if (stop) break;
    }
    out.report.best_val_loss = stopper.best;
    out.report.best_epoch = stopper.best_epoch;
    return out;
}

inline void write_loss_csv(const std::string& path, const TrainReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write loss curve: " + path);
    out << "epoch,train_loss,val_loss\n";
    for (size_t i = 0; i < report.train_loss.size(); i++) {
        out << (i + 1) << ',' << format_double(report.train_loss[i]) << ','
            << format_double(report.val_loss[i]) << '\n';
    }
    if (!out) throw data_error("failed writing loss curve: " + path);
}

}  // namespace ocrmt
