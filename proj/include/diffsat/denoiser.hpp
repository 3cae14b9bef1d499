#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "diffsat/cnf.hpp"
#include "diffsat/common.hpp"
#include "diffsat/diffusion.hpp"
#include "diffsat/tensor.hpp"

namespace diffsat {

struct ModelConfig {
    int dim = 64;        // hidden width of variable and clause states
    int iters = 32;      // recurrent message-passing rounds, weights shared
    int timesteps = 32;  // diffusion steps the model was trained for
    std::uint64_t seed = 0;
};

// The recurrent denoiser's parameters, in a fixed named order so that
// checkpoints, the optimizer state, and tape registration all agree.
struct DenoiserModel {
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor>> params;

    Tensor& param(std::string_view name) {
        for (auto& [k, v] : params)
            if (k == name) return v;
        throw Error("unknown parameter " + std::string(name));
    }
    const Tensor& param(std::string_view name) const {
        return const_cast<DenoiserModel*>(this)->param(name);
    }
    std::int64_t num_params() const {
        std::int64_t total = 0;
        for (const auto& [k, v] : params) total += v.numel();
        return total;
    }
};

namespace detail {

// Variable input features: the noisy state (2 columns) plus the noise
// embedding (8 columns).
inline constexpr int kInputCols = 2 + 8;

inline std::vector<std::pair<std::string, std::vector<int>>> param_shapes(int d) {
    int dc = 2 * d + 1;           // clause update input: [state, messages, unsat]
    int dv = 2 * d + kInputCols;  // variable update input: [state, messages, features]
    return {
        {"noise.w", {4, 8}},
        {"input.w", {kInputCols, d}},
        {"input.b", {1, d}},
        {"query.w", {d, 1}},
        {"query.b", {1, 1}},
        {"msg_vc_pos.w", {d, d}},
        {"msg_vc_neg.w", {d, d}},
        {"clause_mlp.w1", {dc, d}},
        {"clause_mlp.b1", {1, d}},
        {"clause_mlp.w2", {d, d}},
        {"clause_mlp.b2", {1, d}},
        {"msg_cv_pos.w", {d, d}},
        {"msg_cv_neg.w", {d, d}},
        {"var_mlp.w1", {dv, d}},
        {"var_mlp.b1", {1, d}},
        {"var_mlp.w2", {d, d}},
        {"var_mlp.b2", {1, d}},
        {"out.w", {d, 2}},
        {"out.b", {1, 2}},
    };
}

}  // namespace detail

// Weight matrices are uniform in +-sqrt(6 / (fan_in + fan_out)); biases zero.
inline DenoiserModel init_model(const ModelConfig& config) {
    if (config.dim < 2 || config.dim % 2 != 0) throw Error("model dim must be even and >= 2");
    if (config.iters < 1) throw Error("model iters must be >= 1");
    DenoiserModel m;
    m.config = config;
    Rng rng(config.seed);
    for (const auto& [name, shape] : detail::param_shapes(config.dim)) {
        Tensor t(shape);
        if (name.ends_with(".b")) {
            m.params.emplace_back(name, std::move(t));
            continue;
        }
        double bound = std::sqrt(6.0 / (shape[0] + shape[1]));
        for (auto& v : t.data) v = static_cast<float>((2.0 * rng.uniform01() - 1.0) * bound);
        m.params.emplace_back(name, std::move(t));
    }
    return m;
}

// Precomputed edge layout for message passing: polarity-split edge lists plus
// the clause-grouped index used for the unsatisfiedness product.
struct GraphIndex {
    int num_vars = 0;
    int num_clauses = 0;
    std::shared_ptr<const std::vector<int>> pos_var, pos_clause;
    std::shared_ptr<const std::vector<int>> neg_var, neg_clause;
    std::shared_ptr<const GroupProductIndex> unsat;
};

inline GraphIndex build_graph_index(const FactorGraph& fg) {
    GraphIndex gi;
    gi.num_vars = fg.num_vars;
    gi.num_clauses = fg.num_clauses;
    auto pos_var = std::make_shared<std::vector<int>>();
    auto pos_clause = std::make_shared<std::vector<int>>();
    auto neg_var = std::make_shared<std::vector<int>>();
    auto neg_clause = std::make_shared<std::vector<int>>();
    for (const auto& e : fg.edges) {
        if (e.polarity > 0) {
            pos_var->push_back(e.var);
            pos_clause->push_back(e.clause);
        } else {
            neg_var->push_back(e.var);
            neg_clause->push_back(e.clause);
        }
    }
    // Clause-grouped CSR over all edges; groups must be contiguous, so
    // counting-sort the edges by clause.
    auto unsat = std::make_shared<GroupProductIndex>();
    unsat->num_groups = fg.num_clauses;
    unsat->offsets.assign(fg.num_clauses + 1, 0);
    for (const auto& e : fg.edges) ++unsat->offsets[e.clause + 1];
    for (int c = 0; c < fg.num_clauses; ++c) unsat->offsets[c + 1] += unsat->offsets[c];
    unsat->src.resize(fg.edges.size());
    unsat->complement.resize(fg.edges.size());
    std::vector<int> cursor(unsat->offsets.begin(), unsat->offsets.end() - 1);
    for (const auto& e : fg.edges) {
        int slot = cursor[e.clause]++;
        unsat->src[slot] = e.var;
        // A positive literal satisfied with probability q contributes (1 - q)
        // to the clause staying unsatisfied.
        unsat->complement[slot] = e.polarity > 0 ? 1 : 0;
    }
    gi.pos_var = std::move(pos_var);
    gi.pos_clause = std::move(pos_clause);
    gi.neg_var = std::move(neg_var);
    gi.neg_clause = std::move(neg_clause);
    gi.unsat = std::move(unsat);
    return gi;
}

inline GraphIndex build_graph_index(const CnfFormula& f) {
    return build_graph_index(build_factor_graph(f));
}

// Feature map of the noise level, one row per variable:
// [abar, abar^2, sin(2 pi abar), cos(2 pi abar)].
inline Tensor noise_feature_rows(std::span<const double> abar) {
    Tensor t({static_cast<int>(abar.size()), 4});
    for (std::size_t i = 0; i < abar.size(); ++i) {
        double a = abar[i];
        t.at(static_cast<int>(i), 0) = static_cast<float>(a);
        t.at(static_cast<int>(i), 1) = static_cast<float>(a * a);
        t.at(static_cast<int>(i), 2) = static_cast<float>(std::sin(2.0 * std::numbers::pi * a));
        t.at(static_cast<int>(i), 3) = static_cast<float>(std::cos(2.0 * std::numbers::pi * a));
    }
    return t;
}

// Parameter nodes registered on a tape, in model order.
struct TapeModel {
    const DenoiserModel* model = nullptr;
    std::vector<NodeId> ids;

    NodeId at(std::string_view name) const {
        for (std::size_t i = 0; i < model->params.size(); ++i)
            if (model->params[i].first == name) return ids[i];
        throw Error("unknown parameter " + std::string(name));
    }
};

inline TapeModel register_params(Tape& tape, const DenoiserModel& m, bool requires_grad) {
    TapeModel tm;
    tm.model = &m;
    tm.ids.reserve(m.params.size());
    for (const auto& [name, t] : m.params) tm.ids.push_back(tape.input(t, requires_grad));
    return tm;
}

// One recurrent forward pass: R rounds of variable->clause and
// clause->variable messages with polarity-specific projections, a query head
// whose per-clause unsatisfiedness score feeds the clause update, and
// layer-normalized residual MLP updates. Returns the (num_vars, 2) softmax
// output node.
inline NodeId denoiser_forward(Tape& tape, const TapeModel& tm, const GraphIndex& gi,
                               const Tensor& x_t, const Tensor& noise_rows, int iters) {
    if (x_t.rows() != gi.num_vars || x_t.cols() != 2)
        throw Error("denoiser_forward: x_t must be (num_vars, 2)");
    if (noise_rows.rows() != gi.num_vars || noise_rows.cols() != 4)
        throw Error("denoiser_forward: noise features must be (num_vars, 4)");
    int d = tm.model->config.dim;

    NodeId x_in = tape.input(x_t);
    NodeId nf = tape.input(noise_rows);
    NodeId emb = tape.matmul(nf, tm.at("noise.w"));
    NodeId feats = tape.concat(x_in, emb);  // (n, 10)
    NodeId v_state =
        tape.tanh(tape.add_rowvec(tape.matmul(feats, tm.at("input.w")), tm.at("input.b")));
    NodeId c_state = tape.input(Tensor({gi.num_clauses, d}));

    auto mlp = [&](std::string_view prefix, NodeId in) {
        std::string p(prefix);
        NodeId h = tape.relu(
            tape.add_rowvec(tape.matmul(in, tm.at(p + ".w1")), tm.at(p + ".b1")));
        return tape.add_rowvec(tape.matmul(h, tm.at(p + ".w2")), tm.at(p + ".b2"));
    };

    for (int r = 0; r < iters; ++r) {
        NodeId q = tape.sigmoid(
            tape.add_rowvec(tape.matmul(v_state, tm.at("query.w")), tm.at("query.b")));
        NodeId unsat = tape.group_product(q, gi.unsat);  // (m, 1)

        // Projecting the shared state once and gathering the projected rows is
        // row-for-row the same arithmetic as projecting per edge, at the cost
        // of one matmul over nodes instead of one over edges.
        NodeId to_c_pos = tape.segment_sum(
            tape.gather_rows(tape.matmul(v_state, tm.at("msg_vc_pos.w")), gi.pos_var),
            gi.pos_clause, gi.num_clauses);
        NodeId to_c_neg = tape.segment_sum(
            tape.gather_rows(tape.matmul(v_state, tm.at("msg_vc_neg.w")), gi.neg_var),
            gi.neg_clause, gi.num_clauses);
        NodeId c_in = tape.concat(c_state, tape.add(to_c_pos, to_c_neg), unsat);
        c_state = tape.layernorm(tape.add(c_state, mlp("clause_mlp", c_in)));

        NodeId to_v_pos = tape.segment_sum(
            tape.gather_rows(tape.matmul(c_state, tm.at("msg_cv_pos.w")), gi.pos_clause),
            gi.pos_var, gi.num_vars);
        NodeId to_v_neg = tape.segment_sum(
            tape.gather_rows(tape.matmul(c_state, tm.at("msg_cv_neg.w")), gi.neg_clause),
            gi.neg_var, gi.num_vars);
        NodeId v_in = tape.concat(v_state, tape.add(to_v_pos, to_v_neg), feats);
        v_state = tape.layernorm(tape.add(v_state, mlp("var_mlp", v_in)));
    }

    return tape.softmax(tape.add_rowvec(tape.matmul(v_state, tm.at("out.w")), tm.at("out.b")));
}

// Inference entry point used by the reverse sampler.
inline CategoricalState denoise(const DenoiserModel& m, const GraphIndex& gi,
                                const CategoricalState& x_t, double alpha_bar) {
    Tensor x({x_t.num_vars, 2}, std::vector<float>(x_t.p.begin(), x_t.p.end()));
    std::vector<double> abar(static_cast<std::size_t>(x_t.num_vars), alpha_bar);
    Tape tape;
    TapeModel tm = register_params(tape, m, false);
    NodeId out = denoiser_forward(tape, tm, gi, x, noise_feature_rows(abar), m.config.iters);
    const Tensor& y = tape.value(out);
    CategoricalState r(x_t.num_vars);
    for (std::size_t i = 0; i < r.p.size(); ++i) r.p[i] = y.data[i];
    return r;
}

// Functor adapting a trained model to the reverse sampler's denoiser
// interface.
class ModelDenoiser {
public:
    ModelDenoiser(const DenoiserModel& model, GraphIndex gi)
        : model_(&model), gi_(std::move(gi)) {}

    CategoricalState operator()(const CnfFormula&, const CategoricalState& x_t,
                                double alpha_bar) const {
        return denoise(*model_, gi_, x_t, alpha_bar);
    }

private:
    const DenoiserModel* model_;
    GraphIndex gi_;
};

// ---------------------------------------------------------------------------
// Checkpoints: magic "DSAT", version, (dim, iters, timesteps), then named
// tensor records (name, rank, shape, float32 little-endian payload).
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'A', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw Error("truncated checkpoint");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline std::string serialize_checkpoint(
    const DenoiserModel& m, std::span<const std::pair<std::string, Tensor>> extra = {}) {
    std::string out(detail::kCheckpointMagic, 4);
    detail::put_u32(out, detail::kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(m.config.dim));
    detail::put_u32(out, static_cast<std::uint32_t>(m.config.iters));
    detail::put_u32(out, static_cast<std::uint32_t>(m.config.timesteps));
    detail::put_u32(out, static_cast<std::uint32_t>(m.params.size() + extra.size()));
    auto record = [&out](const std::string& name, const Tensor& t) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int dim : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(dim));
        for (float v : t.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            detail::put_u32(out, bits);
        }
    };
    for (const auto& [name, t] : m.params) record(name, t);
    for (const auto& [name, t] : extra) record(name, t);
    return out;
}

inline DenoiserModel deserialize_checkpoint(
    const std::string& bytes, std::vector<std::pair<std::string, Tensor>>* extra = nullptr,
    const ModelConfig* expect = nullptr) {
    detail::ByteReader r{bytes};
    if (r.bytes(4) != std::string(detail::kCheckpointMagic, 4))
        throw Error("bad checkpoint magic (not a model checkpoint)");
    std::uint32_t version = r.u32();
    if (version != detail::kCheckpointVersion)
        throw Error("unsupported checkpoint version " + std::to_string(version));
    ModelConfig config;
    config.dim = static_cast<int>(r.u32());
    config.iters = static_cast<int>(r.u32());
    config.timesteps = static_cast<int>(r.u32());
    if (expect) {
        config = *expect;  // caller-pinned config; records must fit it
    }
    std::uint32_t count = r.u32();

    DenoiserModel m = init_model(config);
    std::vector<bool> seen(m.params.size(), false);
    for (std::uint32_t rec = 0; rec < count; ++rec) {
        std::string name = r.bytes(r.u32());
        std::uint32_t rank = r.u32();
        if (rank > 8) throw Error("checkpoint tensor " + name + ": implausible rank");
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (auto& dim : shape) {
            std::uint32_t raw = r.u32();
            if (raw > 100'000'000u)
                throw Error("checkpoint tensor " + name + ": implausible dimension");
            dim = static_cast<int>(raw);
            numel *= static_cast<std::size_t>(dim);
        }
        r.need(numel * 4);  // reject corrupted headers before allocating
        Tensor t(shape);
        for (std::size_t i = 0; i < numel; ++i) {
            std::uint32_t bits = r.u32();
            std::memcpy(&t.data[i], &bits, 4);
        }
        bool matched = false;
        for (std::size_t i = 0; i < m.params.size(); ++i) {
            if (m.params[i].first != name) continue;
            if (m.params[i].second.shape != t.shape) {
                auto fmt = [](const std::vector<int>& s) {
                    std::string o = "(";
                    for (std::size_t k = 0; k < s.size(); ++k)
                        o += (k ? "," : "") + std::to_string(s[k]);
                    return o + ")";
                };
                throw Error("checkpoint tensor " + name + ": shape " + fmt(t.shape) +
                            " does not match expected " + fmt(m.params[i].second.shape));
            }
            m.params[i].second = std::move(t);
            seen[i] = true;
            matched = true;
            break;
        }
        if (!matched) {
            if (extra) extra->emplace_back(std::move(name), std::move(t));
        }
    }
    for (std::size_t i = 0; i < m.params.size(); ++i)
        if (!seen[i]) throw Error("checkpoint missing tensor " + m.params[i].first);
    return m;
}

inline void save_checkpoint(const DenoiserModel& m, const std::string& path,
                            std::span<const std::pair<std::string, Tensor>> extra = {}) {
    std::string bytes = serialize_checkpoint(m, extra);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw Error("cannot write checkpoint " + path);
    std::size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
    int rc = std::fclose(f);
    if (written != bytes.size() || rc != 0) throw Error("short write on checkpoint " + path);
}

inline DenoiserModel load_checkpoint(const std::string& path,
                                     std::vector<std::pair<std::string, Tensor>>* extra = nullptr,
                                     const ModelConfig* expect = nullptr) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw Error("cannot open checkpoint " + path);
    std::string bytes;
    char buf[1 << 16];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) bytes.append(buf, n);
    std::fclose(f);
    return deserialize_checkpoint(bytes, extra, expect);
}

}  // namespace diffsat
