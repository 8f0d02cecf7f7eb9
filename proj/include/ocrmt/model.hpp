#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ocrmt/autodiff.hpp"
#include "ocrmt/corpus.hpp"
#include "ocrmt/util.hpp"
#include "ocrmt/vocab.hpp"

namespace ocrmt {

enum class Variant { plain, attention };

inline const char* variant_name(Variant v) { return v == Variant::plain ? "plain" : "attention"; }

inline Variant variant_from_name(const std::string& name) {
    if (name == "plain") return Variant::plain;
    if (name == "attention") return Variant::attention;
    throw data_error("unknown model variant: " + name);
}

// Gate columns of the fused 4n weight matrices, in order [i, f, g, o].
struct LstmWeights {
    Tensor wx;  // d×4n
    Tensor wh;  // n×4n
    Tensor b;   // 1×4n
};

struct ModelParams {
    Variant variant = Variant::plain;
    size_t v_src = 0, v_tgt = 0, d_src = 0, d_tgt = 0, n_units = 0;
    Tensor src_embedding;  // v_src×d_src
    Tensor tgt_embedding;  // v_tgt×d_tgt
    LstmWeights encoder;
    LstmWeights decoder;
    Tensor attn_combine;   // 2n×n, attention variant only
    Tensor out_w;          // n×v_tgt
    Tensor out_b;          // 1×v_tgt

    // Fixed enumeration shared by checkpoints, optimizer state, and gradient
    // collection. attn_combine appears only for the attention variant.
    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> list = {&src_embedding, &tgt_embedding, &encoder.wx, &encoder.wh,
                                     &encoder.b,     &decoder.wx,    &decoder.wh, &decoder.b};
        if (variant == Variant::attention) list.push_back(&attn_combine);
        list.push_back(&out_w);
        list.push_back(&out_b);
        return list;
    }
    std::vector<const Tensor*> tensors() const {
        auto list = const_cast<ModelParams*>(this)->tensors();
        return std::vector<const Tensor*>(list.begin(), list.end());
    }
    std::vector<std::string> tensor_names() const {
        std::vector<std::string> names = {"src_embedding", "tgt_embedding", "encoder.wx",
                                          "encoder.wh",    "encoder.b",     "decoder.wx",
                                          "decoder.wh",    "decoder.b"};
        if (variant == Variant::attention) names.push_back("attn_combine");
        names.push_back("out_w");
        names.push_back("out_b");
        return names;
    }
};

namespace detail {

inline void glorot_fill(Tensor& t, size_t fan_in, size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.data) {
        v = (static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * limit;
    }
}

inline LstmWeights init_lstm(size_t d, size_t n, uint64_t seed_wx, uint64_t seed_wh) {
    LstmWeights w;
    w.wx = Tensor(d, 4 * n);
    w.wh = Tensor(n, 4 * n);
    w.b = Tensor(1, 4 * n);
    std::mt19937_64 rx(seed_wx), rh(seed_wh);
    glorot_fill(w.wx, d, 4 * n, rx);
    glorot_fill(w.wh, n, 4 * n, rh);
    for (size_t j = n; j < 2 * n; j++) w.b.data[j] = 1.0;  // forget gate open at start
    return w;
}

}  // namespace detail

// Glorot-uniform weights, zero biases except forget-gate bias 1. Each tensor
// draws from its own seed stream, so variants share every common tensor.
inline ModelParams init_params(size_t v_src, size_t v_tgt, size_t d_src, size_t d_tgt,
                               size_t n_units, Variant variant, uint64_t seed) {
    for (size_t dim : {v_src, v_tgt, d_src, d_tgt, n_units}) {
        if (dim == 0) throw data_error("init_params: all dimensions must be positive");
    }
    ModelParams p;
    p.variant = variant;
    p.v_src = v_src;
    p.v_tgt = v_tgt;
    p.d_src = d_src;
    p.d_tgt = d_tgt;
    p.n_units = n_units;

    p.src_embedding = Tensor(v_src, d_src);
    p.tgt_embedding = Tensor(v_tgt, d_tgt);
    std::mt19937_64 r0(derive_seed(seed, 0)), r1(derive_seed(seed, 1));
    detail::glorot_fill(p.src_embedding, v_src, d_src, r0);
    detail::glorot_fill(p.tgt_embedding, v_tgt, d_tgt, r1);

    p.encoder = detail::init_lstm(d_src, n_units, derive_seed(seed, 2), derive_seed(seed, 3));
    p.decoder = detail::init_lstm(d_tgt, n_units, derive_seed(seed, 4), derive_seed(seed, 5));

    if (variant == Variant::attention) {
        p.attn_combine = Tensor(2 * n_units, n_units);
        std::mt19937_64 rc(derive_seed(seed, 6));
        detail::glorot_fill(p.attn_combine, 2 * n_units, n_units, rc);
    }
    p.out_w = Tensor(n_units, v_tgt);
    p.out_b = Tensor(1, v_tgt);
    std::mt19937_64 ro(derive_seed(seed, 7));
    detail::glorot_fill(p.out_w, n_units, v_tgt, ro);
    return p;
}

// FNV over the serialized bytes of every tensor; detects any mutation.
inline uint64_t param_checksum(const ModelParams& p) {
    std::ostringstream buf;
    for (const Tensor* t : p.tensors()) write_tensor(buf, *t);
    std::string bytes = buf.str();
    return fnv1a64_bytes(bytes.data(), bytes.size());
}

// ---- tape-bound forward passes ---------------------------------------------

struct TapeState {
    Value h, c;
};

struct BoundLstm {
    Value wx, wh, b;
};

// Model parameters registered as tape leaves. `leaves` parallels tensors().
struct BoundParams {
    Variant variant = Variant::plain;
    size_t n_units = 0;
    Value src_embedding, tgt_embedding;
    BoundLstm encoder, decoder;
    Value attn_combine, out_w, out_b;
    std::vector<Value> leaves;
};

inline BoundParams bind_params(Tape& tape, const ModelParams& p) {
    BoundParams b;
    b.variant = p.variant;
    b.n_units = p.n_units;
    b.src_embedding = tape.leaf(p.src_embedding);
    b.tgt_embedding = tape.leaf(p.tgt_embedding);
    b.encoder = {tape.leaf(p.encoder.wx), tape.leaf(p.encoder.wh), tape.leaf(p.encoder.b)};
    b.decoder = {tape.leaf(p.decoder.wx), tape.leaf(p.decoder.wh), tape.leaf(p.decoder.b)};
    b.leaves = {b.src_embedding, b.tgt_embedding, b.encoder.wx, b.encoder.wh,
                b.encoder.b,     b.decoder.wx,    b.decoder.wh, b.decoder.b};
    if (p.variant == Variant::attention) {
        b.attn_combine = tape.leaf(p.attn_combine);
        b.leaves.push_back(b.attn_combine);
    }
    b.out_w = tape.leaf(p.out_w);
    b.out_b = tape.leaf(p.out_b);
    b.leaves.push_back(b.out_w);
    b.leaves.push_back(b.out_b);
    return b;
}

inline TapeState zero_state(Tape& tape, size_t n_units) {
    return {tape.leaf(Tensor(1, n_units)), tape.leaf(Tensor(1, n_units))};
}

// c' = f⊙c + i⊙g, h' = o⊙tanh(c') with i,f,o sigmoid gates and g tanh.
inline TapeState lstm_step(Tape& t, Value x, TapeState state, const BoundLstm& w, size_t n) {
    Value z = t.add(t.add(t.matmul(x, w.wx), t.matmul(state.h, w.wh)), w.b);
    Value i = t.sigmoid(t.slice_cols(z, 0, n));
    Value f = t.sigmoid(t.slice_cols(z, n, 2 * n));
    Value g = t.tanh(t.slice_cols(z, 2 * n, 3 * n));
    Value o = t.sigmoid(t.slice_cols(z, 3 * n, 4 * n));
    Value c = t.add(t.mul(f, state.c), t.mul(i, g));
    Value h = t.mul(o, t.tanh(c));
    return {h, c};
}

struct EncoderOutput {
    Value all_h;      // true_length×n_units, one row per source position
    TapeState final;  // state after the last real position
};

// Embeds and runs the encoder over positions 0..true_length−1 (EOS included,
// PAD never touched). Dropout hits embedding rows only, and only in training.
inline EncoderOutput encode_sequence(Tape& t, const EncodedSequence& src, const BoundParams& p,
                                     double dropout_rate, std::mt19937_64& rng, bool train) {
    if (src.true_length == 0) throw data_error("encode_sequence: empty source");
    TapeState state = zero_state(t, p.n_units);
    std::vector<Value> rows;
    rows.reserve(src.true_length);
    for (size_t pos = 0; pos < src.true_length; pos++) {
        Value e = t.embedding_lookup(p.src_embedding, src.indices[pos]);
        e = t.dropout(e, dropout_rate, rng, train);
        state = lstm_step(t, e, state, p.encoder, p.n_units);
        rows.push_back(state.h);
    }
    return {t.concat_rows(rows), state};
}

struct DecodeStep {
    Value logits;  // 1×v_tgt, raw scores
    TapeState state;
    Value attn_weights;  // 1×T_src, attention variant only
};

inline DecodeStep decode_step_plain(Tape& t, int32_t prev_token, TapeState state,
                                    const BoundParams& p, double dropout_rate,
                                    std::mt19937_64& rng, bool train) {
    Value e = t.embedding_lookup(p.tgt_embedding, prev_token);
    e = t.dropout(e, dropout_rate, rng, train);
    TapeState next = lstm_step(t, e, state, p.decoder, p.n_units);
    Value logits = t.add(t.matmul(next.h, p.out_w), p.out_b);
    return {logits, next, Value{}};
}

// Luong attention with dot score over the current top-layer decoder state:
// softmax(h_t·all_hᵀ) weights the encoder states into a context vector, which
// is combined with h_t through tanh(W_c·[ctx; h_t]) before the output layer.
inline DecodeStep decode_step_attention(Tape& t, int32_t prev_token, TapeState state,
                                        const EncoderOutput& enc, const BoundParams& p,
                                        double dropout_rate, std::mt19937_64& rng, bool train) {
    Value e = t.embedding_lookup(p.tgt_embedding, prev_token);
    e = t.dropout(e, dropout_rate, rng, train);
    TapeState next = lstm_step(t, e, state, p.decoder, p.n_units);
    Value scores = t.matmul_nt(next.h, enc.all_h);
    Value attn = t.softmax(scores);
    Value context = t.matmul(attn, enc.all_h);
    Value combined = t.tanh(t.matmul(t.concat_cols(context, next.h), p.attn_combine));
    Value logits = t.add(t.matmul(combined, p.out_w), p.out_b);
    return {logits, next, attn};
}

struct ForwardResult {
    Value sum_loss;             // total cross-entropy over scored positions
    size_t scored = 0;          // number of non-PAD prediction targets
    std::vector<Value> step_logits;
};

// Teacher forcing: the decoder consumes gold tokens tgt[0..L−2] and is scored
// against tgt[1..L−1]. The decoder starts from the encoder's final state.
inline ForwardResult forward_teacher_forced(Tape& t, const EncodedSequence& src,
                                            const EncodedSequence& tgt, const BoundParams& p,
                                            double dropout_rate, std::mt19937_64& rng,
                                            bool train) {
    if (tgt.true_length < 2 || tgt.indices[0] != kSos ||
        tgt.indices[tgt.true_length - 1] != kEos) {
        throw data_error("forward_teacher_forced: target must be [SOS, ..., EOS]");
    }
    EncoderOutput enc = encode_sequence(t, src, p, dropout_rate, rng, train);
    TapeState state = enc.final;
    ForwardResult result;
    std::vector<Value> losses;
    for (size_t pos = 0; pos + 1 < tgt.true_length; pos++) {
        DecodeStep step =
            p.variant == Variant::attention
                ? decode_step_attention(t, tgt.indices[pos], state, enc, p, dropout_rate, rng, train)
                : decode_step_plain(t, tgt.indices[pos], state, p, dropout_rate, rng, train);
        state = step.state;
        losses.push_back(t.sparse_ce(step.logits, tgt.indices[pos + 1]));
        result.step_logits.push_back(step.logits);
    }
    result.sum_loss = losses.size() == 1 ? losses[0] : t.add_n(losses);
    result.scored = losses.size();
    return result;
}

// Mean per-position teacher-forced loss of one pair, dropout off.
inline double pair_loss(const ModelParams& params, const EncodedSequence& src,
                        const EncodedSequence& tgt) {
    Tape t;
    BoundParams bound = bind_params(t, params);
    std::mt19937_64 rng(0);  // never consumed: dropout is off
    ForwardResult fwd = forward_teacher_forced(t, src, tgt, bound, 0.0, rng, false);
    return t.val(fwd.sum_loss).data[0] / static_cast<double>(fwd.scored);
}

// Greedy decoding: repeatedly feed back the argmax token (ties to the lowest
// index) until EOS or max_len tokens.
inline std::string translate_greedy(const std::string& source, const ModelParams& params,
                                    const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                    size_t max_len) {
    if (source.empty()) throw data_error("translate_greedy: empty source sentence");
    if (max_len < 2) throw data_error("translate_greedy: max_len must be at least 2");
    EncodedSequence src = encode(source, src_vocab, max_len, Role::source);

    Tape t;
    BoundParams bound = bind_params(t, params);
    std::mt19937_64 rng(0);
    EncoderOutput enc = encode_sequence(t, src, bound, 0.0, rng, false);
    TapeState state = enc.final;

    std::string out;
    int32_t prev = kSos;
    for (size_t step = 0; step < max_len; step++) {
        DecodeStep ds = params.variant == Variant::attention
                            ? decode_step_attention(t, prev, state, enc, bound, 0.0, rng, false)
                            : decode_step_plain(t, prev, state, bound, 0.0, rng, false);
        state = ds.state;
        const Tensor& logits = t.val(ds.logits);
        int32_t best = 0;
        for (size_t v = 1; v < logits.cols; v++) {
            if (logits.data[v] > logits.data[static_cast<size_t>(best)]) {
                best = static_cast<int32_t>(v);
            }
        }
        if (best == kEos) break;
        const std::string& tok = tgt_vocab.token_at(best);
        if (!out.empty()) out.push_back(' ');
        out += tok;
        prev = best;
    }
    return out;
}

// ---- checkpoints ------------------------------------------------------------

// Layout: text header (magic, dims, vocab token lists, free-form meta), then
// every parameter tensor in tensors() order via the binary tensor format.
inline constexpr const char* kCheckpointMagic = "ocrmt-checkpoint v1";

struct Checkpoint {
    ModelParams params;
    Vocabulary src_vocab;
    Vocabulary tgt_vocab;
    std::map<std::string, std::string> meta;  // config echo: max_len, seed, ...
};

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                            const std::map<std::string, std::string>& meta) {
    if (src_vocab.size() != params.v_src || tgt_vocab.size() != params.v_tgt) {
        throw data_error("save_checkpoint: vocabulary sizes disagree with model dims");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write checkpoint: " + path);
    out << kCheckpointMagic << '\n';
    out << "variant=" << variant_name(params.variant) << '\n';
    out << "v_src=" << params.v_src << '\n';
    out << "v_tgt=" << params.v_tgt << '\n';
    out << "d_src=" << params.d_src << '\n';
    out << "d_tgt=" << params.d_tgt << '\n';
    out << "n_units=" << params.n_units << '\n';
    out << "vocab_hash_src=" << hex64(src_vocab.hash()) << '\n';
    out << "vocab_hash_tgt=" << hex64(tgt_vocab.hash()) << '\n';
    for (const auto& [k, v] : meta) out << "meta." << k << '=' << v << '\n';
    out << "vocab_src=" << src_vocab.size() << '\n';
    for (const auto& tok : src_vocab.tokens()) out << tok << '\n';
    out << "vocab_tgt=" << tgt_vocab.size() << '\n';
    for (const auto& tok : tgt_vocab.tokens()) out << tok << '\n';
    out << "tensors\n";
    for (const Tensor* t : params.tensors()) write_tensor(out, *t);
    if (!out) throw data_error("failed writing checkpoint: " + path);
}

namespace detail {

inline std::string expect_line(std::istream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("truncated checkpoint: " + path);
    strip_cr(line);
    return line;
}

inline size_t header_number(const std::string& line, const std::string& key,
                            const std::string& path) {
    if (line.size() <= key.size() + 1 || line.compare(0, key.size(), key) != 0 ||
        line[key.size()] != '=') {
        throw data_error("checkpoint " + path + ": expected " + key + "=..., got '" + line + "'");
    }
    return static_cast<size_t>(std::stoull(line.substr(key.size() + 1)));
}

}  // namespace detail

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path);
    if (detail::expect_line(in, path) != kCheckpointMagic) {
        throw data_error("not a checkpoint file: " + path);
    }
    std::string variant_line = detail::expect_line(in, path);
    if (variant_line.rfind("variant=", 0) != 0) {
        throw data_error("checkpoint " + path + ": missing variant");
    }
    Checkpoint ck;
    ck.params.variant = variant_from_name(variant_line.substr(8));
    ck.params.v_src = detail::header_number(detail::expect_line(in, path), "v_src", path);
    ck.params.v_tgt = detail::header_number(detail::expect_line(in, path), "v_tgt", path);
    ck.params.d_src = detail::header_number(detail::expect_line(in, path), "d_src", path);
    ck.params.d_tgt = detail::header_number(detail::expect_line(in, path), "d_tgt", path);
    ck.params.n_units = detail::header_number(detail::expect_line(in, path), "n_units", path);

    std::string expect_src_hash, expect_tgt_hash;
    std::string line = detail::expect_line(in, path);
    if (line.rfind("vocab_hash_src=", 0) == 0) {
        expect_src_hash = line.substr(15);
        line = detail::expect_line(in, path);
    }
    if (line.rfind("vocab_hash_tgt=", 0) == 0) {
        expect_tgt_hash = line.substr(15);
        line = detail::expect_line(in, path);
    }
    while (line.rfind("meta.", 0) == 0) {
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw data_error("checkpoint " + path + ": bad meta line");
        ck.meta[line.substr(5, eq - 5)] = line.substr(eq + 1);
        line = detail::expect_line(in, path);
    }

    size_t n_src = detail::header_number(line, "vocab_src", path);
    std::vector<std::string> src_tokens;
    for (size_t i = 0; i < n_src; i++) src_tokens.push_back(detail::expect_line(in, path));
    size_t n_tgt = detail::header_number(detail::expect_line(in, path), "vocab_tgt", path);
    std::vector<std::string> tgt_tokens;
    for (size_t i = 0; i < n_tgt; i++) tgt_tokens.push_back(detail::expect_line(in, path));
    if (detail::expect_line(in, path) != "tensors") {
        throw data_error("checkpoint " + path + ": missing tensors section");
    }

    for (const auto& toks : {&src_tokens, &tgt_tokens}) {
        if (toks->size() < 4) throw data_error("checkpoint " + path + ": vocabulary too short");
        for (int i = 0; i < 4; i++) {
            if ((*toks)[static_cast<size_t>(i)] != kSpecialNames[i]) {
                throw data_error("checkpoint " + path + ": corrupt vocabulary specials");
            }
        }
    }
    ck.src_vocab = Vocabulary({src_tokens.begin() + 4, src_tokens.end()});
    ck.tgt_vocab = Vocabulary({tgt_tokens.begin() + 4, tgt_tokens.end()});
    if (!expect_src_hash.empty() && hex64(ck.src_vocab.hash()) != expect_src_hash) {
        throw data_error("checkpoint " + path + ": source vocabulary hash mismatch");
    }
    if (!expect_tgt_hash.empty() && hex64(ck.tgt_vocab.hash()) != expect_tgt_hash) {
        throw data_error("checkpoint " + path + ": target vocabulary hash mismatch");
    }
    if (ck.src_vocab.size() != ck.params.v_src || ck.tgt_vocab.size() != ck.params.v_tgt) {
        throw data_error("checkpoint " + path + ": vocabulary sizes disagree with dims");
    }

    ModelParams& p = ck.params;
    const size_t n = p.n_units;
    struct Expect {
        Tensor* dst;
        size_t rows, cols;
    };
    std::vector<Expect> layout = {
        {&p.src_embedding, p.v_src, p.d_src}, {&p.tgt_embedding, p.v_tgt, p.d_tgt},
        {&p.encoder.wx, p.d_src, 4 * n},      {&p.encoder.wh, n, 4 * n},
        {&p.encoder.b, 1, 4 * n},             {&p.decoder.wx, p.d_tgt, 4 * n},
        {&p.decoder.wh, n, 4 * n},            {&p.decoder.b, 1, 4 * n},
    };
    if (p.variant == Variant::attention) layout.push_back({&p.attn_combine, 2 * n, n});
    layout.push_back({&p.out_w, n, p.v_tgt});
    layout.push_back({&p.out_b, 1, p.v_tgt});
    for (auto& e : layout) {
        Tensor t = read_tensor(in);
        if (t.rows != e.rows || t.cols != e.cols) {
            throw data_error("checkpoint " + path + ": tensor shape " + shape_str(t) +
                             ", expected " + std::to_string(e.rows) + "x" +
                             std::to_string(e.cols));
        }
        *e.dst = std::move(t);
    }
    return ck;
}

}  // namespace ocrmt
