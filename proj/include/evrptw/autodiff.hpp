// Dense-tensor tape with reverse-mode differentiation.
//
// Covers the operations the policy network needs and nothing more: 2-D
// row-major double tensors, bias-style broadcasting only, one backward pass
// per tape. Leaves reference external storage so parameters are never copied
// onto a tape.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace evrptw::ad {

struct Value {
    int rows = 0, cols = 0;
    std::vector<double> a;

    Value() = default;
    Value(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    static Value scalar(double v) {
        Value x(1, 1);
        x.a[0] = v;
        return x;
    }
    static Value row(std::vector<double> v) {
        Value x;
        x.rows = 1;
        x.cols = static_cast<int>(v.size());
        x.a = std::move(v);
        return x;
    }

    int size() const { return rows * cols; }
    double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
    bool same_shape(const Value& o) const { return rows == o.rows && cols == o.cols; }

    bool finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// C += A * B, row-major; explicit fma keeps results identical across builds.
inline void matmul_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<std::size_t>(i) * k;
        double* crow = C + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double a = arow[kk];
            if (a == 0.0) continue;
            const double* brow = B + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] = std::fma(a, brow[j], crow[j]);
        }
    }
}

// C += A * B^T
inline void matmul_acc_bt(const double* A, const double* Bt, double* C, int m, int k, int n) {
    // C is m x n, A is m x k, Bt is n x k
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<std::size_t>(i) * k;
        double* crow = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = Bt + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc = std::fma(arow[kk], brow[kk], acc);
            crow[j] += acc;
        }
    }
}

// C += A^T * B
inline void matmul_acc_at(const double* At, const double* B, double* C, int m, int k, int n) {
    // C is m x n, At is k x m, B is k x n
    for (int kk = 0; kk < k; ++kk) {
        const double* arow = At + static_cast<std::size_t>(kk) * m;
        const double* brow = B + static_cast<std::size_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
            const double a = arow[i];
            if (a == 0.0) continue;
            double* crow = C + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] = std::fma(a, brow[j], crow[j]);
        }
    }
}

class Tape {
    enum class Op : std::uint8_t {
        Leaf,
        Const,
        MatMul,
        Add,
        ScalarMul,
        CMul,
        ConcatCols,
        Relu,
        Tanh,
        Sigmoid,
        SoftmaxMasked,
        Sum,
        Mean,
        Log,
        GatherRows,
        Transpose,
    };

    struct Node {
        Op op;
        int p0 = -1, p1 = -1;
        double k = 0.0;
        Value own;
        const Value* ext = nullptr;          // leaf storage lives outside the tape
        std::vector<int> rows;               // GatherRows selection
        std::vector<std::uint8_t> mask;      // SoftmaxMasked (empty = unmasked)
        const Value& v() const { return ext ? *ext : own; }
    };

public:
    static constexpr double kMaskOffset = -1e9;

    const Value& val(int id) const { return node(id).v(); }

    int leaf(const Value& external) {
        Node n;
        n.op = Op::Leaf;
        n.ext = &external;
        return push(std::move(n));
    }

    int constant(Value v) {
        Node n;
        n.op = Op::Const;
        n.own = std::move(v);
        return push(std::move(n));
    }

    int matmul(int a, int b) {
        const Value& A = val(a);
        const Value& B = val(b);
        if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dimensions differ");
        Node n;
        n.op = Op::MatMul;
        n.p0 = a;
        n.p1 = b;
        n.own = Value(A.rows, B.cols);
        matmul_acc(A.a.data(), B.a.data(), n.own.a.data(), A.rows, A.cols, B.cols);
        return push(std::move(n));
    }

    // Same shape, or bias broadcast of a single row / single column.
    int add(int a, int b) {
        const Value& A = val(a);
        const Value& B = val(b);
        if (!A.same_shape(B) && !broadcastable(A, B) && !broadcastable(B, A))
            throw std::invalid_argument("add: incompatible shapes");
        const bool b_is_bias = !A.same_shape(B) && broadcastable(A, B);
        const Value& full = b_is_bias || A.same_shape(B) ? A : B;
        const Value& bias = &full == &A ? B : A;
        Node n;
        n.op = Op::Add;
        n.p0 = (&full == &A) ? a : b;
        n.p1 = (&full == &A) ? b : a;
        n.own = full;
        if (bias.same_shape(full)) {
            for (int i = 0; i < full.size(); ++i) n.own.a[static_cast<std::size_t>(i)] += bias.a[static_cast<std::size_t>(i)];
        } else if (bias.rows == 1) {
            for (int i = 0; i < full.rows; ++i)
                for (int j = 0; j < full.cols; ++j) n.own.at(i, j) += bias.a[static_cast<std::size_t>(j)];
        } else {
            for (int i = 0; i < full.rows; ++i)
                for (int j = 0; j < full.cols; ++j) n.own.at(i, j) += bias.a[static_cast<std::size_t>(i)];
        }
        return push(std::move(n));
    }

    int scalar_mul(int a, double k) {
        Node n;
        n.op = Op::ScalarMul;
        n.p0 = a;
        n.k = k;
        n.own = val(a);
        for (double& v : n.own.a) v *= k;
        return push(std::move(n));
    }

    int cmul(int a, int b) {
        const Value& A = val(a);
        const Value& B = val(b);
        if (!A.same_shape(B)) throw std::invalid_argument("cmul: shapes differ");
        Node n;
        n.op = Op::CMul;
        n.p0 = a;
        n.p1 = b;
        n.own = A;
        for (int i = 0; i < A.size(); ++i) n.own.a[static_cast<std::size_t>(i)] *= B.a[static_cast<std::size_t>(i)];
        return push(std::move(n));
    }

    int concat_cols(int a, int b) {
        const Value& A = val(a);
        const Value& B = val(b);
        if (A.rows != B.rows) throw std::invalid_argument("concat_cols: row counts differ");
        Node n;
        n.op = Op::ConcatCols;
        n.p0 = a;
        n.p1 = b;
        n.own = Value(A.rows, A.cols + B.cols);
        for (int i = 0; i < A.rows; ++i) {
            for (int j = 0; j < A.cols; ++j) n.own.at(i, j) = A.at(i, j);
            for (int j = 0; j < B.cols; ++j) n.own.at(i, A.cols + j) = B.at(i, j);
        }
        return push(std::move(n));
    }

    int relu(int a) {
        Node n;
        n.op = Op::Relu;
        n.p0 = a;
        n.own = val(a);
        for (double& v : n.own.a) v = v > 0.0 ? v : 0.0;
        return push(std::move(n));
    }

    int tanh_(int a) {
        Node n;
        n.op = Op::Tanh;
        n.p0 = a;
        n.own = val(a);
        for (double& v : n.own.a) v = std::tanh(v);
        return push(std::move(n));
    }

    int sigmoid(int a) {
        Node n;
        n.op = Op::Sigmoid;
        n.p0 = a;
        n.own = val(a);
        for (double& v : n.own.a) v = 1.0 / (1.0 + std::exp(-v));
        return push(std::move(n));
    }

    // Row-wise softmax over the last axis; masked entries get an additive
    // -1e9 before normalization, which underflows their probability to 0.
    int softmax_masked(int a, const std::vector<std::uint8_t>* mask = nullptr) {
        const Value& A = val(a);
        if (mask && static_cast<int>(mask->size()) != A.cols)
            throw std::invalid_argument("softmax_masked: mask length != cols");
        Node n;
        n.op = Op::SoftmaxMasked;
        n.p0 = a;
        if (mask) n.mask = *mask;
        n.own = Value(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < A.cols; ++j) {
                const double logit = A.at(i, j) + offset(n.mask, j);
                if (logit > mx) mx = logit;
            }
            double sum = 0.0;
            for (int j = 0; j < A.cols; ++j) {
                const double ev = std::exp(A.at(i, j) + offset(n.mask, j) - mx);
                n.own.at(i, j) = ev;
                sum += ev;
            }
            for (int j = 0; j < A.cols; ++j) n.own.at(i, j) /= sum;
        }
        return push(std::move(n));
    }

    int sum(int a) { return reduce(a, Op::Sum); }
    int mean(int a) { return reduce(a, Op::Mean); }

    int log_(int a) {
        Node n;
        n.op = Op::Log;
        n.p0 = a;
        n.own = val(a);
        for (double& v : n.own.a) v = std::log(v);
        return push(std::move(n));
    }

    int gather_rows(int a, std::vector<int> rows) {
        const Value& A = val(a);
        for (int r : rows)
            if (r < 0 || r >= A.rows) throw std::out_of_range("gather_rows: row out of range");
        Node n;
        n.op = Op::GatherRows;
        n.p0 = a;
        n.own = Value(static_cast<int>(rows.size()), A.cols);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (int j = 0; j < A.cols; ++j) n.own.at(static_cast<int>(i), j) = A.at(rows[i], j);
        n.rows = std::move(rows);
        return push(std::move(n));
    }

    int transpose(int a) {
        const Value& A = val(a);
        Node n;
        n.op = Op::Transpose;
        n.p0 = a;
        n.own = Value(A.cols, A.rows);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) n.own.at(j, i) = A.at(i, j);
        return push(std::move(n));
    }

    // Reverse pass from a scalar node. One shot per tape; a second call is a
    // contract violation.
    void backward(int loss, double seed = 1.0) {
        if (backward_done_) throw std::logic_error("backward already run on this tape");
        const Value& L = val(loss);
        if (L.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
        backward_done_ = true;
        grads_.assign(nodes_.size(), Value());
        grad_ref(loss) = Value::scalar(seed);
        for (int id = loss; id >= 0; --id) {
            if (grads_[static_cast<std::size_t>(id)].size() == 0) continue;
            pull(id);
        }
        // untouched leaves report zero gradients
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].op == Op::Leaf && grads_[i].size() == 0)
                grads_[i] = Value(nodes_[i].v().rows, nodes_[i].v().cols);
        }
    }

    bool backward_done() const { return backward_done_; }

    const Value& grad(int id) const {
        if (!backward_done_) throw std::logic_error("grad queried before backward");
        return grads_.at(static_cast<std::size_t>(id));
    }

    std::size_t size() const { return nodes_.size(); }

private:
    static bool broadcastable(const Value& full, const Value& bias) {
        return (bias.rows == 1 && bias.cols == full.cols) ||
               (bias.cols == 1 && bias.rows == full.rows);
    }

    static double offset(const std::vector<std::uint8_t>& mask, int j) {
        if (mask.empty() || mask[static_cast<std::size_t>(j)]) return 0.0;
        return kMaskOffset;
    }

    int reduce(int a, Op op) {
        Node n;
        n.op = op;
        n.p0 = a;
        double s = 0.0;
        for (double v : val(a).a) s += v;
        if (op == Op::Mean) s /= static_cast<double>(val(a).size());
        n.own = Value::scalar(s);
        return push(std::move(n));
    }

    const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Value& grad_ref(int id) {
        Value& g = grads_[static_cast<std::size_t>(id)];
        if (g.size() == 0) {
            const Value& v = node(id).v();
            g = Value(v.rows, v.cols);
        }
        return g;
    }

    void pull(int id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const Value& g = grads_[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::Leaf:
            case Op::Const:
                return;
            case Op::MatMul: {
                const Value& A = val(n.p0);
                const Value& B = val(n.p1);
                matmul_acc_bt(g.a.data(), B.a.data(), grad_ref(n.p0).a.data(), A.rows, B.cols, A.cols);
                matmul_acc_at(A.a.data(), g.a.data(), grad_ref(n.p1).a.data(), B.rows, A.rows, B.cols);
                return;
            }
            case Op::Add: {
                Value& g0 = grad_ref(n.p0);
                for (int i = 0; i < g.size(); ++i) g0.a[static_cast<std::size_t>(i)] += g.a[static_cast<std::size_t>(i)];
                Value& g1 = grad_ref(n.p1);
                const Value& bias = val(n.p1);
                if (bias.same_shape(n.own)) {
                    for (int i = 0; i < g.size(); ++i) g1.a[static_cast<std::size_t>(i)] += g.a[static_cast<std::size_t>(i)];
                } else if (bias.rows == 1) {
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) g1.a[static_cast<std::size_t>(j)] += g.at(i, j);
                } else {
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) g1.a[static_cast<std::size_t>(i)] += g.at(i, j);
                }
                return;
            }
            case Op::ScalarMul: {
                Value& g0 = grad_ref(n.p0);
                for (int i = 0; i < g.size(); ++i)
                    g0.a[static_cast<std::size_t>(i)] = std::fma(n.k, g.a[static_cast<std::size_t>(i)], g0.a[static_cast<std::size_t>(i)]);
                return;
            }
            case Op::CMul: {
                const Value& A = val(n.p0);
                const Value& B = val(n.p1);
                Value& g0 = grad_ref(n.p0);
                Value& g1 = grad_ref(n.p1);
                for (int i = 0; i < g.size(); ++i) {
                    const auto k = static_cast<std::size_t>(i);
                    g0.a[k] = std::fma(B.a[k], g.a[k], g0.a[k]);
                    g1.a[k] = std::fma(A.a[k], g.a[k], g1.a[k]);
                }
                return;
            }
            case Op::ConcatCols: {
                const Value& A = val(n.p0);
                Value& g0 = grad_ref(n.p0);
                Value& g1 = grad_ref(n.p1);
                for (int i = 0; i < g.rows; ++i) {
                    for (int j = 0; j < A.cols; ++j) g0.at(i, j) += g.at(i, j);
                    for (int j = A.cols; j < g.cols; ++j) g1.at(i, j - A.cols) += g.at(i, j);
                }
                return;
            }
            case Op::Relu: {
                const Value& A = val(n.p0);
                Value& g0 = grad_ref(n.p0);
                for (int i = 0; i < g.size(); ++i) {
                    const auto k = static_cast<std::size_t>(i);
                    if (A.a[k] > 0.0) g0.a[k] += g.a[k];
                }
                return;
            }
            case Op::Tanh: {
                Value& g0 = grad_ref(n.p0);
                for (int i = 0; i < g.size(); ++i) {
                    const auto k = static_cast<std::size_t>(i);
                    const double y = n.own.a[k];
                    g0.a[k] = std::fma((1.0 - y * y), g.a[k], g0.a[k]);
                }
                return;
            }
            case Op::Sigmoid: {
                Value& g0 = grad_ref(n.p0);
                for (int i = 0; i < g.size(); ++i) {
                    const auto k = static_cast<std::size_t>(i);
                    const double y = n.own.a[k];
                    g0.a[k] = std::fma(y * (1.0 - y), g.a[k], g0.a[k]);
                }
                return;
            }
            case Op::SoftmaxMasked: {
                Value& g0 = grad_ref(n.p0);
                for (int i = 0; i < g.rows; ++i) {
                    double dot = 0.0;
                    for (int j = 0; j < g.cols; ++j) dot = std::fma(g.at(i, j), n.own.at(i, j), dot);
                    for (int j = 0; j < g.cols; ++j)
                        g0.at(i, j) = std::fma(n.own.at(i, j), g.at(i, j) - dot, g0.at(i, j));
                }
                return;
            }
            case Op::Sum: {
                Value& g0 = grad_ref(n.p0);
                for (double& v : g0.a) v += g.a[0];
                return;
            }
            case Op::Mean: {
                Value& g0 = grad_ref(n.p0);
                const double s = g.a[0] / static_cast<double>(g0.size());
                for (double& v : g0.a) v += s;
                return;
            }
            case Op::Log: {
                const Value& A = val(n.p0);
                Value& g0 = grad_ref(n.p0);
                for (int i = 0; i < g.size(); ++i) {
                    const auto k = static_cast<std::size_t>(i);
                    g0.a[k] += g.a[k] / A.a[k];
                }
                return;
            }
            case Op::GatherRows: {
                Value& g0 = grad_ref(n.p0);
                for (std::size_t i = 0; i < n.rows.size(); ++i)
                    for (int j = 0; j < g.cols; ++j) g0.at(n.rows[i], j) += g.at(static_cast<int>(i), j);
                return;
            }
            case Op::Transpose: {
                Value& g0 = grad_ref(n.p0);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) g0.at(j, i) += g.at(i, j);
                return;
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<Value> grads_;
    bool backward_done_ = false;
};

inline double global_norm(const std::vector<const Value*>& grads) {
    double sq = 0.0;
    for (const Value* g : grads)
        for (double v : g->a) sq = std::fma(v, v, sq);
    return std::sqrt(sq);
}

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm; returns the pre-clip norm.
inline double clip_global_norm(std::vector<Value*>& grads, double max_norm) {
    double sq = 0.0;
    for (Value* g : grads)
        for (double v : g->a) sq = std::fma(v, v, sq);
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (Value* g : grads)
            for (double& v : g->a) v *= scale;
    }
    return norm;
}

}  // namespace evrptw::ad
