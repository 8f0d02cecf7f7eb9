#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "ocrmt/util.hpp"

namespace ocrmt {

// Dense row-major matrix of doubles. Vectors are 1×n rows by convention.
struct Tensor {
    size_t rows = 0, cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Tensor row(std::vector<double> values) {
        Tensor t;
        t.rows = 1;
        t.cols = values.size();
        t.data = std::move(values);
        return t;
    }

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }
    size_t numel() const { return rows * cols; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_str(const Tensor& t) {
    return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// rank (always 2), dims, then raw values, all little-endian 64-bit.
inline void write_tensor(std::ostream& out, const Tensor& t) {
    write_u64_le(out, 2);
    write_u64_le(out, t.rows);
    write_u64_le(out, t.cols);
    for (double v : t.data) write_f64_le(out, v);
}

inline Tensor read_tensor(std::istream& in) {
    uint64_t rank = read_u64_le(in);
    if (rank != 2) throw data_error("tensor stream has rank " + std::to_string(rank) + ", want 2");
    uint64_t rows = read_u64_le(in);
    uint64_t cols = read_u64_le(in);
    if (rows == 0 || cols == 0 || rows * cols > (1ULL << 32)) {
        throw data_error("tensor stream has implausible shape " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
    Tensor t(rows, cols);
    for (double& v : t.data) v = read_f64_le(in);
    return t;
}

// Handle into a Tape's node list.
struct Value {
    size_t idx = static_cast<size_t>(-1);
};

// Records every primitive application; backward() replays the records in
// reverse, accumulating gradients. One tape per forward/backward cycle.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;             // backprop closures capture `this`
    Tape& operator=(const Tape&) = delete;

    Value leaf(const Tensor& t) { return push(t, {}); }

    const Tensor& val(Value v) const { return nodes_[v.idx].val; }
    const Tensor& grad(Value v) const { return nodes_[v.idx].grad; }
    size_t size() const { return nodes_.size(); }

    // ---- primitives ------------------------------------------------------

    Value matmul(Value a, Value b) {
        const Tensor &A = val(a), &B = val(b);
        if (A.cols != B.rows) {
            throw shape_error("matmul: " + shape_str(A) + " by " + shape_str(B));
        }
        Tensor out(A.rows, B.cols);
        for (size_t i = 0; i < A.rows; i++) {
            for (size_t k = 0; k < A.cols; k++) {
                double aik = A.at(i, k);
                if (aik == 0.0) continue;
                for (size_t j = 0; j < B.cols; j++) out.at(i, j) += aik * B.at(k, j);
            }
        }
        return push(std::move(out), [this, a, b](const Tensor& g) {
            const Tensor &A = val(a), &B = val(b);
            Tensor &dA = grad_mut(a), &dB = grad_mut(b);
            // dA += g·Bᵀ
            for (size_t i = 0; i < A.rows; i++) {
                for (size_t k = 0; k < A.cols; k++) {
                    double acc = 0.0;
                    for (size_t j = 0; j < B.cols; j++) acc += g.at(i, j) * B.at(k, j);
                    dA.at(i, k) += acc;
                }
            }
            // dB += Aᵀ·g
            for (size_t k = 0; k < B.rows; k++) {
                for (size_t i = 0; i < A.rows; i++) {
                    double aik = A.at(i, k);
                    if (aik == 0.0) continue;
                    for (size_t j = 0; j < B.cols; j++) dB.at(k, j) += aik * g.at(i, j);
                }
            }
        });
    }

    // a·bᵀ without materializing the transpose (used for attention scores).
    Value matmul_nt(Value a, Value b) {
        const Tensor &A = val(a), &B = val(b);
        if (A.cols != B.cols) {
            throw shape_error("matmul_nt: " + shape_str(A) + " by " + shape_str(B) + " transposed");
        }
        Tensor out(A.rows, B.rows);
        for (size_t i = 0; i < A.rows; i++) {
            for (size_t j = 0; j < B.rows; j++) {
                double acc = 0.0;
                for (size_t k = 0; k < A.cols; k++) acc += A.at(i, k) * B.at(j, k);
                out.at(i, j) = acc;
            }
        }
        return push(std::move(out), [this, a, b](const Tensor& g) {
            const Tensor &A = val(a), &B = val(b);
            Tensor &dA = grad_mut(a), &dB = grad_mut(b);
            for (size_t i = 0; i < A.rows; i++) {
                for (size_t j = 0; j < B.rows; j++) {
                    double gij = g.at(i, j);
                    if (gij == 0.0) continue;
                    for (size_t k = 0; k < A.cols; k++) {
                        dA.at(i, k) += gij * B.at(j, k);
                        dB.at(j, k) += gij * A.at(i, k);
                    }
                }
            }
        });
    }

    Value add(Value a, Value b) {
        const Tensor &A = val(a), &B = val(b);
        if (!A.same_shape(B)) {
            throw shape_error("add: " + shape_str(A) + " vs " + shape_str(B));
        }
        Tensor out = A;
        for (size_t i = 0; i < out.numel(); i++) out.data[i] += B.data[i];
        return push(std::move(out), [this, a, b](const Tensor& g) {
            Tensor &dA = grad_mut(a), &dB = grad_mut(b);
            for (size_t i = 0; i < g.numel(); i++) {
                dA.data[i] += g.data[i];
                dB.data[i] += g.data[i];
            }
        });
    }

    Value add_n(const std::vector<Value>& items) {
        if (items.empty()) throw shape_error("add_n: no operands");
        Tensor out = val(items[0]);
        for (size_t k = 1; k < items.size(); k++) {
            const Tensor& t = val(items[k]);
            if (!t.same_shape(out)) {
                throw shape_error("add_n: " + shape_str(out) + " vs " + shape_str(t));
            }
            for (size_t i = 0; i < out.numel(); i++) out.data[i] += t.data[i];
        }
        return push(std::move(out), [this, items](const Tensor& g) {
            for (Value v : items) {
                Tensor& dv = grad_mut(v);
                for (size_t i = 0; i < g.numel(); i++) dv.data[i] += g.data[i];
            }
        });
    }

    Value mul(Value a, Value b) {
        const Tensor &A = val(a), &B = val(b);
        if (!A.same_shape(B)) {
            throw shape_error("mul: " + shape_str(A) + " vs " + shape_str(B));
        }
        Tensor out = A;
        for (size_t i = 0; i < out.numel(); i++) out.data[i] *= B.data[i];
        return push(std::move(out), [this, a, b](const Tensor& g) {
            const Tensor &A = val(a), &B = val(b);
            Tensor &dA = grad_mut(a), &dB = grad_mut(b);
            for (size_t i = 0; i < g.numel(); i++) {
                dA.data[i] += g.data[i] * B.data[i];
                dB.data[i] += g.data[i] * A.data[i];
            }
        });
    }

    Value scale(Value a, double s) {
        Tensor out = val(a);
        for (double& v : out.data) v *= s;
        return push(std::move(out), [this, a, s](const Tensor& g) {
            Tensor& dA = grad_mut(a);
            for (size_t i = 0; i < g.numel(); i++) dA.data[i] += s * g.data[i];
        });
    }

    Value tanh(Value a) {
        Tensor out = val(a);
        for (double& v : out.data) v = std::tanh(v);
        size_t self = nodes_.size();
        return push(std::move(out), [this, a, self](const Tensor& g) {
            const Tensor& y = nodes_[self].val;
            Tensor& dA = grad_mut(a);
            for (size_t i = 0; i < g.numel(); i++) {
                dA.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
            }
        });
    }

    Value sigmoid(Value a) {
        Tensor out = val(a);
        for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
        size_t self = nodes_.size();
        return push(std::move(out), [this, a, self](const Tensor& g) {
            const Tensor& y = nodes_[self].val;
            Tensor& dA = grad_mut(a);
            for (size_t i = 0; i < g.numel(); i++) {
                dA.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
            }
        });
    }

    // Row-wise softmax with max subtraction for overflow safety.
    Value softmax(Value a) {
        Tensor out = val(a);
        for (size_t r = 0; r < out.rows; r++) {
            double mx = out.at(r, 0);
            for (size_t c = 1; c < out.cols; c++) mx = std::max(mx, out.at(r, c));
            double sum = 0.0;
            for (size_t c = 0; c < out.cols; c++) {
                out.at(r, c) = std::exp(out.at(r, c) - mx);
                sum += out.at(r, c);
            }
            for (size_t c = 0; c < out.cols; c++) out.at(r, c) /= sum;
        }
        size_t self = nodes_.size();
        return push(std::move(out), [this, a, self](const Tensor& g) {
            const Tensor& y = nodes_[self].val;
            Tensor& dA = grad_mut(a);
            for (size_t r = 0; r < y.rows; r++) {
                double dot = 0.0;
                for (size_t c = 0; c < y.cols; c++) dot += g.at(r, c) * y.at(r, c);
                for (size_t c = 0; c < y.cols; c++) {
                    dA.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
                }
            }
        });
    }

    // Stacks same-width blocks vertically (axis 0).
    Value concat_rows(const std::vector<Value>& items) {
        if (items.empty()) throw shape_error("concat_rows: no operands");
        size_t cols = val(items[0]).cols, rows = 0;
        for (Value v : items) {
            if (val(v).cols != cols) {
                throw shape_error("concat_rows: " + shape_str(val(items[0])) + " vs " +
                                  shape_str(val(v)));
            }
            rows += val(v).rows;
        }
        Tensor out(rows, cols);
        size_t r0 = 0;
        for (Value v : items) {
            const Tensor& t = val(v);
            std::copy(t.data.begin(), t.data.end(), out.data.begin() + r0 * cols);
            r0 += t.rows;
        }
        return push(std::move(out), [this, items](const Tensor& g) {
            size_t r0 = 0;
            for (Value v : items) {
                Tensor& dv = grad_mut(v);
                for (size_t i = 0; i < dv.numel(); i++) dv.data[i] += g.data[r0 * g.cols + i];
                r0 += dv.rows;
            }
        });
    }

    // Joins two row blocks side by side (axis 1).
    Value concat_cols(Value a, Value b) {
        const Tensor &A = val(a), &B = val(b);
        if (A.rows != B.rows) {
            throw shape_error("concat_cols: " + shape_str(A) + " vs " + shape_str(B));
        }
        Tensor out(A.rows, A.cols + B.cols);
        for (size_t r = 0; r < A.rows; r++) {
            for (size_t c = 0; c < A.cols; c++) out.at(r, c) = A.at(r, c);
            for (size_t c = 0; c < B.cols; c++) out.at(r, A.cols + c) = B.at(r, c);
        }
        return push(std::move(out), [this, a, b](const Tensor& g) {
            Tensor &dA = grad_mut(a), &dB = grad_mut(b);
            for (size_t r = 0; r < dA.rows; r++) {
                for (size_t c = 0; c < dA.cols; c++) dA.at(r, c) += g.at(r, c);
                for (size_t c = 0; c < dB.cols; c++) dB.at(r, c) += g.at(r, dA.cols + c);
            }
        });
    }

    // Column range [begin, end) of every row; the LSTM gate splitter.
    Value slice_cols(Value a, size_t begin, size_t end) {
        const Tensor& A = val(a);
        if (begin >= end || end > A.cols) {
            throw shape_error("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) +
                              ") of " + shape_str(A));
        }
        Tensor out(A.rows, end - begin);
        for (size_t r = 0; r < A.rows; r++) {
            for (size_t c = 0; c < out.cols; c++) out.at(r, c) = A.at(r, begin + c);
        }
        return push(std::move(out), [this, a, begin](const Tensor& g) {
            Tensor& dA = grad_mut(a);
            for (size_t r = 0; r < g.rows; r++) {
                for (size_t c = 0; c < g.cols; c++) dA.at(r, begin + c) += g.at(r, c);
            }
        });
    }

    // Copies one row of an embedding table; gradient scatters back into it.
    Value embedding_lookup(Value table, int32_t index) {
        const Tensor& T = val(table);
        if (index < 0 || static_cast<size_t>(index) >= T.rows) {
            throw shape_error("embedding_lookup: index " + std::to_string(index) + " into " +
                              shape_str(T));
        }
        Tensor out(1, T.cols);
        for (size_t c = 0; c < T.cols; c++) out.at(0, c) = T.at(static_cast<size_t>(index), c);
        return push(std::move(out), [this, table, index](const Tensor& g) {
            Tensor& dT = grad_mut(table);
            for (size_t c = 0; c < g.cols; c++) dT.at(static_cast<size_t>(index), c) += g.at(0, c);
        });
    }

    // Inverted dropout: survivors scaled by 1/(1−rate) so evaluation needs no
    // rescaling. Identity (no tape node) when not training or rate is 0.
    Value dropout(Value a, double rate, std::mt19937_64& rng, bool train) {
        if (rate < 0.0 || rate >= 1.0) throw data_error("dropout rate must be in [0,1)");
        if (!train || rate == 0.0) return a;
        const Tensor& A = val(a);
        std::vector<double> mask(A.numel());
        const double keep_scale = 1.0 / (1.0 - rate);
        for (double& m : mask) {
            m = (static_cast<double>(rng() >> 11) * 0x1.0p-53 < rate) ? 0.0 : keep_scale;
        }
        Tensor out = A;
        for (size_t i = 0; i < out.numel(); i++) out.data[i] *= mask[i];
        return push(std::move(out), [this, a, mask = std::move(mask)](const Tensor& g) {
            Tensor& dA = grad_mut(a);
            for (size_t i = 0; i < g.numel(); i++) dA.data[i] += g.data[i] * mask[i];
        });
    }

    Value sum(Value a) {
        double total = 0.0;
        for (double v : val(a).data) total += v;
        return push(Tensor(1, 1, total), [this, a](const Tensor& g) {
            Tensor& dA = grad_mut(a);
            for (double& v : dA.data) v += g.data[0];
        });
    }

    // Fused −log softmax(logits)[target] via log-sum-exp; the gradient is the
    // textbook softmax−onehot, which stays stable for extreme logits.
    Value sparse_ce(Value logits, int32_t target) {
        const Tensor& L = val(logits);
        if (L.rows != 1) throw shape_error("sparse_ce: logits must be 1xV, got " + shape_str(L));
        if (target < 0 || static_cast<size_t>(target) >= L.cols) {
            throw data_error("sparse_ce: target " + std::to_string(target) + " out of range for " +
                             std::to_string(L.cols) + " classes");
        }
        double mx = L.data[0];
        for (double v : L.data) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : L.data) sum += std::exp(v - mx);
        double lse = mx + std::log(sum);
        double loss = lse - L.data[static_cast<size_t>(target)];
        return push(Tensor(1, 1, loss), [this, logits, target, mx, sum](const Tensor& g) {
            const Tensor& L = val(logits);
            Tensor& dL = grad_mut(logits);
            for (size_t c = 0; c < L.cols; c++) {
                double p = std::exp(L.data[c] - mx) / sum;
                dL.data[c] += g.data[0] * (p - (c == static_cast<size_t>(target) ? 1.0 : 0.0));
            }
        });
    }

    // ---- backward --------------------------------------------------------

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Call once per
    // tape; a second call would accumulate on top of existing gradients.
    void backward(Value loss) {
        const Tensor& L = val(loss);
        if (L.rows != 1 || L.cols != 1) {
            throw shape_error("backward: loss must be scalar, got " + shape_str(L));
        }
        nodes_[loss.idx].grad.data[0] = 1.0;
        for (size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].backprop) nodes_[i].backprop(nodes_[i].grad);
        }
    }

private:
    struct Node {
        Tensor val;
        Tensor grad;  // zero-filled at creation, accumulated by backward()
        std::function<void(const Tensor&)> backprop;
    };

    Tensor& grad_mut(Value v) { return nodes_[v.idx].grad; }

    Value push(Tensor val, std::function<void(const Tensor&)> backprop) {
        Node n;
        n.grad = Tensor(val.rows, val.cols);
        n.val = std::move(val);
        n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        return Value{nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

// Builds the loss for given parameter values; used by the gradient checker to
// evaluate perturbed parameter sets on fresh tapes.
using TapeFn = std::function<Value(Tape&, const std::vector<Value>&)>;

// Compares reverse-mode gradients against central finite differences on a
// random sample of coordinates per tensor. Returns the worst relative error
// |a−n| / max(|a|,|n|,1e-8).
inline double grad_check(const TapeFn& f, const std::vector<Tensor>& params, double eps = 1e-5,
                         size_t samples_per_tensor = 50, uint64_t seed = 1) {
    if (!(eps > 0.0)) throw data_error("grad_check: epsilon must be positive");

    const auto eval = [&](const std::vector<Tensor>& p) {
        Tape tape;
        std::vector<Value> leaves;
        leaves.reserve(p.size());
        for (const auto& t : p) leaves.push_back(tape.leaf(t));
        Value loss = f(tape, leaves);
        double v = tape.val(loss).data[0];
        if (!std::isfinite(v)) throw numeric_error("grad_check: non-finite loss");
        return v;
    };

    // one reverse pass for the analytic gradients
    Tape tape;
    std::vector<Value> leaves;
    for (const auto& t : params) leaves.push_back(tape.leaf(t));
    Value loss = f(tape, leaves);
    tape.backward(loss);

    double max_rel = 0.0;
    std::vector<Tensor> work = params;
    for (size_t pi = 0; pi < params.size(); pi++) {
        const size_t n = params[pi].numel();
        if (n == 0) continue;
        // distinct coordinate sample via partial Fisher-Yates
        std::vector<size_t> coords(n);
        for (size_t i = 0; i < n; i++) coords[i] = i;
        std::mt19937_64 rng(derive_seed(seed, pi));
        size_t take = std::min(samples_per_tensor, n);
        for (size_t i = 0; i < take; i++) {
            size_t j = i + static_cast<size_t>(rng() % (n - i));
            std::swap(coords[i], coords[j]);
        }
        for (size_t i = 0; i < take; i++) {
            size_t ci = coords[i];
            double saved = work[pi].data[ci];
            work[pi].data[ci] = saved + eps;
            double up = eval(work);
            work[pi].data[ci] = saved - eps;
            double down = eval(work);
            work[pi].data[ci] = saved;
            double numeric = (up - down) / (2.0 * eps);
            double analytic = tape.grad(leaves[pi]).data[ci];
            if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
                throw numeric_error("grad_check: non-finite gradient at tensor " +
                                    std::to_string(pi) + " coord " + std::to_string(ci));
            }
            double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace ocrmt
