#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "diffsat/common.hpp"

namespace diffsat {

// Dense row-major float32 tensor. Long reductions (segment sums, means,
// normalization statistics, losses) accumulate in double; matmuls accumulate
// in float32 for vectorization.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0f);
    }
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape)) throw Error("tensor data/shape mismatch");
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, float v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }
    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0) throw Error("negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int cols() const { return shape.empty() ? 1 : shape.back(); }
    int rows() const { return cols() == 0 ? 0 : static_cast<int>(numel() / cols()); }

    float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

using NodeId = int;

// Grouped product with optional per-entry complement: used for the clause
// unsatisfiedness score u_c = prod (1 - q_i) over positive literals times
// prod q_i over negated ones. Entries of one group must be contiguous.
struct GroupProductIndex {
    std::vector<int> offsets;              // num_groups + 1
    std::vector<int> src;                  // row into the value tensor, per entry
    std::vector<std::uint8_t> complement;  // 1: use (1 - v), 0: use v
    int num_groups = 0;
};

// Constants for the training loss: per-variable reverse-step targets.
//   mix        = alpha_t * x_t + (1 - alpha_t)/K          (n x 2)
//   x0         = clean target distribution                (n x 2)
//   abar_prev  = cumulative survival at step t-1          (n x 1)
// The node computes both the target and predicted step posteriors with
// identical arithmetic, so a perfect prediction yields exactly zero loss.
struct PosteriorKlTarget {
    Tensor x0;
    Tensor mix;
    Tensor abar_prev;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::int64_t checked = 0;
    std::string worst;  // "node <id> [flat index]"
};

class Tape {
public:
    enum class Op {
        kInput,
        kMatmul,
        kAdd,
        kSub,
        kMul,
        kAddRowVec,
        kConcat,
        kRelu,
        kTanh,
        kSigmoid,
        kSoftmax,
        kLayerNorm,
        kSegmentSum,
        kGatherRows,
        kGroupProduct,
        kMeanAll,
        kPosteriorKl,
    };

    NodeId input(Tensor t, bool requires_grad = false) {
        Node n;
        n.op = Op::kInput;
        n.val = std::move(t);
        n.requires_grad = requires_grad;
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.cols() != B.rows())
            throw Error("matmul: inner dimensions " + std::to_string(A.cols()) + " vs " +
                        std::to_string(B.rows()));
        return push(make(Op::kMatmul, {a, b}, Tensor({A.rows(), B.cols()})));
    }

    NodeId add(NodeId a, NodeId b) { return ew(Op::kAdd, a, b); }
    NodeId sub(NodeId a, NodeId b) { return ew(Op::kSub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return ew(Op::kMul, a, b); }

    NodeId add_rowvec(NodeId x, NodeId row) {
        const Tensor& X = val(x);
        const Tensor& R = val(row);
        if (R.numel() != X.cols()) throw Error("add_rowvec: row width mismatch");
        return push(make(Op::kAddRowVec, {x, row}, Tensor(X.shape)));
    }

    NodeId concat(NodeId a, NodeId b) { return concat_impl({a, b}); }
    NodeId concat(NodeId a, NodeId b, NodeId c) { return concat_impl({a, b, c}); }

    NodeId relu(NodeId x) { return unary(Op::kRelu, x); }
    NodeId tanh(NodeId x) { return unary(Op::kTanh, x); }
    NodeId sigmoid(NodeId x) { return unary(Op::kSigmoid, x); }
    NodeId softmax(NodeId x) { return unary(Op::kSoftmax, x); }

    NodeId layernorm(NodeId x, double eps = 1e-5) {
        NodeId id = unary(Op::kLayerNorm, x);
        nodes_[id].eps = eps;
        return id;
    }

    NodeId segment_sum(NodeId values, std::shared_ptr<const std::vector<int>> ids,
                       int num_segments) {
        const Tensor& V = val(values);
        if (static_cast<int>(ids->size()) != V.rows())
            throw Error("segment_sum: one id per row required");
        for (int s : *ids)
            if (s < 0 || s >= num_segments) throw Error("segment_sum: id out of range");
        Node n = make(Op::kSegmentSum, {values}, Tensor({num_segments, V.cols()}));
        n.seg_ids = std::move(ids);
        return push(std::move(n));
    }

    NodeId gather_rows(NodeId values, std::shared_ptr<const std::vector<int>> idx) {
        const Tensor& V = val(values);
        for (int r : *idx)
            if (r < 0 || r >= V.rows()) throw Error("gather_rows: index out of range");
        Node n = make(Op::kGatherRows, {values}, Tensor({static_cast<int>(idx->size()), V.cols()}));
        n.gather_idx = std::move(idx);
        return push(std::move(n));
    }

    NodeId group_product(NodeId values, std::shared_ptr<const GroupProductIndex> idx) {
        const Tensor& V = val(values);
        if (V.cols() != 1) throw Error("group_product: values must have one column");
        for (int r : idx->src)
            if (r < 0 || r >= V.rows()) throw Error("group_product: index out of range");
        Node n = make(Op::kGroupProduct, {values}, Tensor({idx->num_groups, 1}));
        n.group_idx = std::move(idx);
        return push(std::move(n));
    }

    NodeId mean_all(NodeId x) { return push(make(Op::kMeanAll, {x}, Tensor({1}))); }

    NodeId posterior_kl(NodeId xhat, std::shared_ptr<const PosteriorKlTarget> target) {
        const Tensor& X = val(xhat);
        if (X.cols() != 2 || !X.same_shape(target->x0) || !X.same_shape(target->mix) ||
            target->abar_prev.numel() != X.rows())
            throw Error("posterior_kl: shape mismatch");
        Node n = make(Op::kPosteriorKl, {xhat}, Tensor({1}));
        n.kl_target = std::move(target);
        return push(std::move(n));
    }

    const Tensor& value(NodeId id) const { return nodes_[id].val; }
    const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
    std::size_t size() const { return nodes_.size(); }

    void set_value(NodeId id, Tensor t) {
        if (nodes_[id].op != Op::kInput) throw Error("set_value: not an input node");
        if (!nodes_[id].val.same_shape(t)) throw Error("set_value: shape mismatch");
        nodes_[id].val = std::move(t);
    }

    // Re-runs every forward computation in construction (topological) order.
    void recompute() {
        for (auto& n : nodes_)
            if (n.op != Op::kInput) eval(n);
    }

    void backward(NodeId loss) {
        if (nodes_[loss].val.numel() != 1) throw Error("backward: loss must be scalar");
        for (auto& n : nodes_) {
            if (n.requires_grad) {
                n.grad = Tensor(n.val.shape);
            } else {
                n.grad = Tensor();
            }
        }
        if (!nodes_[loss].requires_grad)
            throw Error("backward: loss does not depend on any differentiable input");
        nodes_[loss].grad.data[0] = 1.0f;
        for (NodeId id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.requires_grad || n.op == Op::kInput) continue;
            backprop(n);
        }
    }

private:
    struct Node {
        Op op = Op::kInput;
        std::array<NodeId, 3> in{-1, -1, -1};
        int nin = 0;
        Tensor val;
        Tensor grad;
        bool requires_grad = false;
        double eps = 1e-5;
        std::shared_ptr<const std::vector<int>> seg_ids;
        int num_segments = 0;
        std::shared_ptr<const std::vector<int>> gather_idx;
        std::shared_ptr<const GroupProductIndex> group_idx;
        std::shared_ptr<const PosteriorKlTarget> kl_target;
    };

    std::vector<Node> nodes_;

    const Tensor& val(NodeId id) const {
        if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) throw Error("bad node id");
        return nodes_[id].val;
    }

    Node make(Op op, std::initializer_list<NodeId> ins, Tensor out) {
        Node n;
        n.op = op;
        n.nin = static_cast<int>(ins.size());
        int i = 0;
        for (NodeId id : ins) {
            n.in[i++] = id;
            n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
        }
        n.val = std::move(out);
        return n;
    }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        Node& added = nodes_.back();
        if (added.op == Op::kSegmentSum) added.num_segments = added.val.shape[0];
        if (added.op != Op::kInput) eval(added);
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    NodeId unary(Op op, NodeId x) { return push(make(op, {x}, Tensor(val(x).shape))); }

    NodeId ew(Op op, NodeId a, NodeId b) {
        if (!val(a).same_shape(val(b))) throw Error("elementwise: shape mismatch");
        return push(make(op, {a, b}, Tensor(val(a).shape)));
    }

    NodeId concat_impl(std::initializer_list<NodeId> ins) {
        int rows = -1, cols = 0;
        for (NodeId id : ins) {
            const Tensor& t = val(id);
            if (rows < 0) rows = t.rows();
            if (t.rows() != rows) throw Error("concat: row count mismatch");
            cols += t.cols();
        }
        Node n;
        n.op = Op::kConcat;
        n.nin = static_cast<int>(ins.size());
        int i = 0;
        for (NodeId id : ins) {
            n.in[i++] = id;
            n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
        }
        n.val = Tensor({rows, cols});
        return push(std::move(n));
    }

    // ------------------------------------------------------------------
    // forward kernels
    // ------------------------------------------------------------------

    void eval(Node& n) {
        switch (n.op) {
            case Op::kInput: return;
            case Op::kMatmul: {
                const Tensor& A = nodes_[n.in[0]].val;
                const Tensor& B = nodes_[n.in[1]].val;
                matmul_nn(A.data.data(), B.data.data(), n.val.data.data(), A.rows(), A.cols(),
                          B.cols());
                return;
            }
            case Op::kAdd:
            case Op::kSub:
            case Op::kMul: {
                const auto& a = nodes_[n.in[0]].val.data;
                const auto& b = nodes_[n.in[1]].val.data;
                auto& o = n.val.data;
                if (n.op == Op::kAdd)
                    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
                else if (n.op == Op::kSub)
                    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
                else
                    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
                return;
            }
            case Op::kAddRowVec: {
                const Tensor& X = nodes_[n.in[0]].val;
                const auto& r = nodes_[n.in[1]].val.data;
                int C = X.cols();
                for (int i = 0; i < X.rows(); ++i)
                    for (int j = 0; j < C; ++j)
                        n.val.data[static_cast<std::size_t>(i) * C + j] =
                            X.data[static_cast<std::size_t>(i) * C + j] + r[j];
                return;
            }
            case Op::kConcat: {
                int C = n.val.cols();
                int off = 0;
                for (int k = 0; k < n.nin; ++k) {
                    const Tensor& t = nodes_[n.in[k]].val;
                    int tc = t.cols();
                    for (int i = 0; i < t.rows(); ++i)
                        for (int j = 0; j < tc; ++j)
                            n.val.data[static_cast<std::size_t>(i) * C + off + j] =
                                t.data[static_cast<std::size_t>(i) * tc + j];
                    off += tc;
                }
                return;
            }
            case Op::kRelu: {
                const auto& x = nodes_[n.in[0]].val.data;
                for (std::size_t i = 0; i < x.size(); ++i)
                    n.val.data[i] = x[i] > 0.0f ? x[i] : 0.0f;
                return;
            }
            case Op::kTanh: {
                const auto& x = nodes_[n.in[0]].val.data;
                for (std::size_t i = 0; i < x.size(); ++i) n.val.data[i] = std::tanh(x[i]);
                return;
            }
            case Op::kSigmoid: {
                const auto& x = nodes_[n.in[0]].val.data;
                for (std::size_t i = 0; i < x.size(); ++i)
                    n.val.data[i] = 1.0f / (1.0f + std::exp(-x[i]));
                return;
            }
            case Op::kSoftmax: {
                const Tensor& X = nodes_[n.in[0]].val;
                int C = X.cols();
                for (int i = 0; i < X.rows(); ++i) {
                    const float* x = X.data.data() + static_cast<std::size_t>(i) * C;
                    float* o = n.val.data.data() + static_cast<std::size_t>(i) * C;
                    float mx = x[0];
                    for (int j = 1; j < C; ++j) mx = std::max(mx, x[j]);
                    double sum = 0.0;
                    for (int j = 0; j < C; ++j) sum += std::exp(static_cast<double>(x[j] - mx));
                    for (int j = 0; j < C; ++j)
                        o[j] = static_cast<float>(std::exp(static_cast<double>(x[j] - mx)) / sum);
                }
                return;
            }
            case Op::kLayerNorm: {
                const Tensor& X = nodes_[n.in[0]].val;
                int C = X.cols();
                for (int i = 0; i < X.rows(); ++i) {
                    const float* x = X.data.data() + static_cast<std::size_t>(i) * C;
                    float* o = n.val.data.data() + static_cast<std::size_t>(i) * C;
                    double mean = 0.0;
                    for (int j = 0; j < C; ++j) mean += x[j];
                    mean /= C;
                    double var = 0.0;
                    for (int j = 0; j < C; ++j) var += (x[j] - mean) * (x[j] - mean);
                    var /= C;
                    double inv = 1.0 / std::sqrt(var + n.eps);
                    for (int j = 0; j < C; ++j) o[j] = static_cast<float>((x[j] - mean) * inv);
                }
                return;
            }
            case Op::kSegmentSum: {
                const Tensor& V = nodes_[n.in[0]].val;
                const auto& ids = *n.seg_ids;
                int C = V.cols();
                scratch_.assign(n.val.data.size(), 0.0);
                for (int e = 0; e < V.rows(); ++e) {
                    const float* src = V.data.data() + static_cast<std::size_t>(e) * C;
                    double* dst = scratch_.data() + static_cast<std::size_t>(ids[e]) * C;
                    for (int j = 0; j < C; ++j) dst[j] += src[j];
                }
                for (std::size_t i = 0; i < n.val.data.size(); ++i)
                    n.val.data[i] = static_cast<float>(scratch_[i]);
                return;
            }
            case Op::kGatherRows: {
                const Tensor& V = nodes_[n.in[0]].val;
                const auto& idx = *n.gather_idx;
                int C = V.cols();
                for (std::size_t e = 0; e < idx.size(); ++e)
                    std::copy_n(V.data.data() + static_cast<std::size_t>(idx[e]) * C, C,
                                n.val.data.data() + e * C);
                return;
            }
            case Op::kGroupProduct: {
                const Tensor& V = nodes_[n.in[0]].val;
                const auto& g = *n.group_idx;
                for (int gi = 0; gi < g.num_groups; ++gi) {
                    double prod = 1.0;
                    for (int e = g.offsets[gi]; e < g.offsets[gi + 1]; ++e) {
                        double v = V.data[g.src[e]];
                        prod *= g.complement[e] ? 1.0 - v : v;
                    }
                    n.val.data[gi] = static_cast<float>(prod);
                }
                return;
            }
            case Op::kMeanAll: {
                const auto& x = nodes_[n.in[0]].val.data;
                double sum = 0.0;
                for (float v : x) sum += v;
                n.val.data[0] = static_cast<float>(sum / static_cast<double>(x.size()));
                return;
            }
            case Op::kPosteriorKl: {
                const Tensor& X = nodes_[n.in[0]].val;
                const auto& tgt = *n.kl_target;
                int R = X.rows();
                double total = 0.0;
                for (int i = 0; i < R; ++i) {
                    double s = tgt.abar_prev.data[i];
                    double off = (1.0 - s) / 2.0;
                    double p[2], q[2];
                    row_posterior(tgt.mix, tgt.x0, i, s, off, p);
                    row_posterior(tgt.mix, X, i, s, off, q);
                    for (int k = 0; k < 2; ++k) {
                        if (p[k] <= 0.0) continue;
                        total += p[k] * (std::log(clamp_prob(p[k])) - std::log(clamp_prob(q[k])));
                    }
                }
                n.val.data[0] = static_cast<float>(total / std::max(1, R));
                return;
            }
        }
    }

    static double clamp_prob(double v) { return std::min(std::max(v, 1e-8), 1.0); }

    static void row_posterior(const Tensor& mix, const Tensor& x, int row, double s, double off,
                              double out[2]) {
        double t0 = mix.at(row, 0) * (s * x.at(row, 0) + off);
        double t1 = mix.at(row, 1) * (s * x.at(row, 1) + off);
        double z = t0 + t1;
        out[0] = t0 / z;
        out[1] = t1 / z;
    }

    // Row-major matmul, NN layout. The accumulator is a fixed-width local
    // tile so the compiler keeps the running row of C in vector registers;
    // accumulation order over k is identical for every tile width, so results
    // do not depend on kTileCols as long as N <= kTileCols (true for all
    // shapes the model emits).
    static constexpr int kTileCols = 64;

    template <bool Accumulate>
    static void matmul_nn_impl(const float* A, const float* B, float* C, int M, int K, int N) {
        for (int j0 = 0; j0 < N; j0 += kTileCols) {
            const int w = std::min(kTileCols, N - j0);
            for (int i = 0; i < M; ++i) {
                float acc[kTileCols];
                for (int j = 0; j < w; ++j) acc[j] = 0.0f;
                const float* a = A + static_cast<std::size_t>(i) * K;
                const float* b = B + j0;
                if (w == kTileCols) {
                    for (int k = 0; k < K; ++k) {
                        const float av = a[k];
                        const float* br = b + static_cast<std::size_t>(k) * N;
                        for (int j = 0; j < kTileCols; ++j) acc[j] += av * br[j];
                    }
                } else {
                    for (int k = 0; k < K; ++k) {
                        const float av = a[k];
                        const float* br = b + static_cast<std::size_t>(k) * N;
                        for (int j = 0; j < w; ++j) acc[j] += av * br[j];
                    }
                }
                float* c = C + static_cast<std::size_t>(i) * N + j0;
                if constexpr (Accumulate)
                    for (int j = 0; j < w; ++j) c[j] += acc[j];
                else
                    for (int j = 0; j < w; ++j) c[j] = acc[j];
            }
        }
    }

    static void matmul_nn(const float* A, const float* B, float* C, int M, int K, int N) {
        matmul_nn_impl<false>(A, B, C, M, K, N);
    }

    // X (R x C) -> out (C x R), blocked for cache-friendly strides.
    static void transpose_into(const float* X, int R, int C, std::vector<float>& out) {
        out.resize(static_cast<std::size_t>(R) * C);
        constexpr int B = 32;
        for (int i0 = 0; i0 < R; i0 += B)
            for (int j0 = 0; j0 < C; j0 += B) {
                int imax = std::min(i0 + B, R), jmax = std::min(j0 + B, C);
                for (int i = i0; i < imax; ++i)
                    for (int j = j0; j < jmax; ++j)
                        out[static_cast<std::size_t>(j) * R + i] =
                            X[static_cast<std::size_t>(i) * C + j];
            }
    }

    // ------------------------------------------------------------------
    // backward kernels; each accumulates into the input gradients
    // ------------------------------------------------------------------

    bool wants(NodeId id) const { return id >= 0 && nodes_[id].requires_grad; }

    void backprop(Node& n) {
        const Tensor& gy = n.grad;
        switch (n.op) {
            case Op::kInput: return;
            case Op::kMatmul: {
                Node& na = nodes_[n.in[0]];
                Node& nb = nodes_[n.in[1]];
                int M = na.val.rows(), K = na.val.cols(), N = nb.val.cols();
                if (wants(n.in[0])) {
                    // dA += gy . B^T
                    transpose_into(nb.val.data.data(), K, N, scratch_f_);
                    matmul_nn_impl<true>(gy.data.data(), scratch_f_.data(),
                                         na.grad.data.data(), M, N, K);
                }
                if (wants(n.in[1])) {
                    // dB += A^T . gy
                    transpose_into(na.val.data.data(), M, K, scratch_f_);
                    matmul_nn_impl<true>(scratch_f_.data(), gy.data.data(),
                                         nb.grad.data.data(), K, M, N);
                }
                return;
            }
            case Op::kAdd:
            case Op::kSub: {
                float sign = n.op == Op::kSub ? -1.0f : 1.0f;
                if (wants(n.in[0])) {
                    auto& g = nodes_[n.in[0]].grad.data;
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy.data[i];
                }
                if (wants(n.in[1])) {
                    auto& g = nodes_[n.in[1]].grad.data;
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * gy.data[i];
                }
                return;
            }
            case Op::kMul: {
                if (wants(n.in[0])) {
                    auto& g = nodes_[n.in[0]].grad.data;
                    const auto& b = nodes_[n.in[1]].val.data;
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy.data[i] * b[i];
                }
                if (wants(n.in[1])) {
                    auto& g = nodes_[n.in[1]].grad.data;
                    const auto& a = nodes_[n.in[0]].val.data;
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy.data[i] * a[i];
                }
                return;
            }
            case Op::kAddRowVec: {
                int R = n.val.rows(), C = n.val.cols();
                if (wants(n.in[0])) {
                    auto& g = nodes_[n.in[0]].grad.data;
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy.data[i];
                }
                if (wants(n.in[1])) {
                    auto& g = nodes_[n.in[1]].grad.data;
                    for (int j = 0; j < C; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < R; ++i)
                            acc += gy.data[static_cast<std::size_t>(i) * C + j];
                        g[j] += static_cast<float>(acc);
                    }
                }
                return;
            }
            case Op::kConcat: {
                int C = n.val.cols();
                int off = 0;
                for (int k = 0; k < n.nin; ++k) {
                    Node& src = nodes_[n.in[k]];
                    int tc = src.val.cols();
                    if (wants(n.in[k])) {
                        for (int i = 0; i < src.val.rows(); ++i)
                            for (int j = 0; j < tc; ++j)
                                src.grad.data[static_cast<std::size_t>(i) * tc + j] +=
                                    gy.data[static_cast<std::size_t>(i) * C + off + j];
                    }
                    off += tc;
                }
                return;
            }
            case Op::kRelu: {
                if (!wants(n.in[0])) return;
                const auto& x = nodes_[n.in[0]].val.data;
                auto& g = nodes_[n.in[0]].grad.data;
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x[i] > 0.0f) g[i] += gy.data[i];
                return;
            }
            case Op::kTanh: {
                if (!wants(n.in[0])) return;
                auto& g = nodes_[n.in[0]].grad.data;
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += gy.data[i] * (1.0f - n.val.data[i] * n.val.data[i]);
                return;
            }
            case Op::kSigmoid: {
                if (!wants(n.in[0])) return;
                auto& g = nodes_[n.in[0]].grad.data;
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += gy.data[i] * n.val.data[i] * (1.0f - n.val.data[i]);
                return;
            }
            case Op::kSoftmax: {
                if (!wants(n.in[0])) return;
                int R = n.val.rows(), C = n.val.cols();
                auto& g = nodes_[n.in[0]].grad.data;
                for (int i = 0; i < R; ++i) {
                    const float* y = n.val.data.data() + static_cast<std::size_t>(i) * C;
                    const float* gr = gy.data.data() + static_cast<std::size_t>(i) * C;
                    double dot = 0.0;
                    for (int j = 0; j < C; ++j) dot += static_cast<double>(y[j]) * gr[j];
                    for (int j = 0; j < C; ++j)
                        g[static_cast<std::size_t>(i) * C + j] +=
                            static_cast<float>(y[j] * (gr[j] - dot));
                }
                return;
            }
            case Op::kLayerNorm: {
                if (!wants(n.in[0])) return;
                const Tensor& X = nodes_[n.in[0]].val;
                int R = n.val.rows(), C = n.val.cols();
                auto& g = nodes_[n.in[0]].grad.data;
                for (int i = 0; i < R; ++i) {
                    const float* x = X.data.data() + static_cast<std::size_t>(i) * C;
                    const float* y = n.val.data.data() + static_cast<std::size_t>(i) * C;
                    const float* gr = gy.data.data() + static_cast<std::size_t>(i) * C;
                    double mean = 0.0;
                    for (int j = 0; j < C; ++j) mean += x[j];
                    mean /= C;
                    double var = 0.0;
                    for (int j = 0; j < C; ++j) var += (x[j] - mean) * (x[j] - mean);
                    var /= C;
                    double inv = 1.0 / std::sqrt(var + n.eps);
                    double gmean = 0.0, gymean = 0.0;
                    for (int j = 0; j < C; ++j) {
                        gmean += gr[j];
                        gymean += static_cast<double>(gr[j]) * y[j];
                    }
                    gmean /= C;
                    gymean /= C;
                    for (int j = 0; j < C; ++j)
                        g[static_cast<std::size_t>(i) * C + j] +=
                            static_cast<float>(inv * (gr[j] - gmean - y[j] * gymean));
                }
                return;
            }
            case Op::kSegmentSum: {
                if (!wants(n.in[0])) return;
                Node& src = nodes_[n.in[0]];
                const auto& ids = *n.seg_ids;
                int C = n.val.cols();
                for (int e = 0; e < src.val.rows(); ++e) {
                    const float* gr = gy.data.data() + static_cast<std::size_t>(ids[e]) * C;
                    float* g = src.grad.data.data() + static_cast<std::size_t>(e) * C;
                    for (int j = 0; j < C; ++j) g[j] += gr[j];
                }
                return;
            }
            case Op::kGatherRows: {
                if (!wants(n.in[0])) return;
                Node& src = nodes_[n.in[0]];
                const auto& idx = *n.gather_idx;
                int C = n.val.cols();
                scratch_.assign(src.val.data.size(), 0.0);
                for (std::size_t e = 0; e < idx.size(); ++e) {
                    const float* gr = gy.data.data() + e * C;
                    double* dst = scratch_.data() + static_cast<std::size_t>(idx[e]) * C;
                    for (int j = 0; j < C; ++j) dst[j] += gr[j];
                }
                for (std::size_t i = 0; i < src.grad.data.size(); ++i)
                    src.grad.data[i] += static_cast<float>(scratch_[i]);
                return;
            }
            case Op::kGroupProduct: {
                if (!wants(n.in[0])) return;
                Node& src = nodes_[n.in[0]];
                const auto& gidx = *n.group_idx;
                const auto& v = src.val.data;
                scratch_.assign(src.val.data.size(), 0.0);
                std::vector<double> factors, prefix, suffix;
                for (int gi = 0; gi < gidx.num_groups; ++gi) {
                    int begin = gidx.offsets[gi], end = gidx.offsets[gi + 1];
                    int len = end - begin;
                    if (len == 0) continue;
                    factors.assign(len, 0.0);
                    for (int e = 0; e < len; ++e) {
                        double x = v[gidx.src[begin + e]];
                        factors[e] = gidx.complement[begin + e] ? 1.0 - x : x;
                    }
                    prefix.assign(len, 1.0);
                    suffix.assign(len, 1.0);
                    for (int e = 1; e < len; ++e) prefix[e] = prefix[e - 1] * factors[e - 1];
                    for (int e = len - 2; e >= 0; --e) suffix[e] = suffix[e + 1] * factors[e + 1];
                    double go = gy.data[gi];
                    for (int e = 0; e < len; ++e) {
                        double d = go * prefix[e] * suffix[e];
                        scratch_[gidx.src[begin + e]] += gidx.complement[begin + e] ? -d : d;
                    }
                }
                for (std::size_t i = 0; i < src.grad.data.size(); ++i)
                    src.grad.data[i] += static_cast<float>(scratch_[i]);
                return;
            }
            case Op::kMeanAll: {
                if (!wants(n.in[0])) return;
                Node& src = nodes_[n.in[0]];
                float g = gy.data[0] / static_cast<float>(src.val.numel());
                for (auto& v : src.grad.data) v += g;
                return;
            }
            case Op::kPosteriorKl: {
                if (!wants(n.in[0])) return;
                Node& src = nodes_[n.in[0]];
                const Tensor& X = src.val;
                const auto& tgt = *n.kl_target;
                int R = X.rows();
                double gout = gy.data[0] / std::max(1, R);
                for (int i = 0; i < R; ++i) {
                    double s = tgt.abar_prev.data[i];
                    double off = (1.0 - s) / 2.0;
                    double p[2], q[2];
                    row_posterior(tgt.mix, tgt.x0, i, s, off, p);
                    row_posterior(tgt.mix, X, i, s, off, q);
                    double z = tgt.mix.at(i, 0) * (s * X.at(i, 0) + off) +
                               tgt.mix.at(i, 1) * (s * X.at(i, 1) + off);
                    double dldq[2];
                    for (int k = 0; k < 2; ++k)
                        dldq[k] = (p[k] > 0.0 && q[k] >= 1e-8) ? -p[k] / q[k] : 0.0;
                    double mixdot = dldq[0] * q[0] + dldq[1] * q[1];
                    for (int k = 0; k < 2; ++k) {
                        double dqt = (dldq[k] - mixdot) / z;
                        src.grad.at(i, k) +=
                            static_cast<float>(gout * dqt * tgt.mix.at(i, k) * s);
                    }
                }
                return;
            }
        }
    }

    std::vector<double> scratch_;
    std::vector<float> scratch_f_;
};

// Central-difference gradient check over the given parameter nodes. The
// relative error uses max(|analytic|, |numeric|, 1) as the scale so that
// near-zero entries compare absolutely.
inline GradCheckReport check_gradients(Tape& tape, NodeId loss, std::span<const NodeId> params,
                                       double h = 1e-3) {
    tape.recompute();
    tape.backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (NodeId p : params) analytic.push_back(tape.grad(p));

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        NodeId p = params[pi];
        Tensor base = tape.value(p);
        for (std::size_t i = 0; i < base.data.size(); ++i) {
            Tensor plus = base, minus = base;
            plus.data[i] += static_cast<float>(h);
            minus.data[i] -= static_cast<float>(h);
            // Use the step actually representable in float32.
            double span = static_cast<double>(plus.data[i]) - static_cast<double>(minus.data[i]);
            tape.set_value(p, plus);
            tape.recompute();
            double lp = tape.value(loss).data[0];
            tape.set_value(p, minus);
            tape.recompute();
            double lm = tape.value(loss).data[0];
            tape.set_value(p, base);
            double numeric = (lp - lm) / span;
            double a = analytic[pi].data[i];
            double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = "node " + std::to_string(p) + " [" + std::to_string(i) + "]";
            }
        }
    }
    tape.recompute();
    return report;
}

}  // namespace diffsat
