#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffsat/cnf.hpp"
#include "diffsat/common.hpp"
#include "diffsat/dataset.hpp"
#include "diffsat/denoiser.hpp"
#include "diffsat/diffusion.hpp"
#include "diffsat/tensor.hpp"

namespace diffsat {

struct TrainExample {
    CnfFormula formula;
    Assignment solution;
};

enum class SolutionMode {
    kFirst,    // deterministic: first enumerated solution
    kUniform,  // uniform draw from the enumerated set
};

inline SolutionMode parse_solution_mode(const std::string& s) {
    if (s == "first") return SolutionMode::kFirst;
    if (s == "uniform") return SolutionMode::kUniform;
    throw Error("unknown solution mode: " + s + " (expected first|uniform)");
}

// Builds training pairs from a loaded dataset, skipping instances without
// known solutions (unsatisfiable or never enumerated).
inline std::vector<TrainExample> make_training_set(const std::vector<LoadedInstance>& instances,
                                                   SolutionMode mode, std::uint64_t seed) {
    std::vector<TrainExample> out;
    Rng rng(mix64(seed ^ 0x7261696e736574ull));
    for (const auto& inst : instances) {
        if (inst.solutions.empty()) continue;
        const Assignment& sol = mode == SolutionMode::kFirst
                                    ? inst.solutions.front()
                                    : inst.solutions[rng.below(inst.solutions.size())];
        out.push_back({inst.formula, sol});
    }
    return out;
}

// A block-diagonal merge of several noised training instances. Variable and
// clause indices of instance i are offset by the sizes of instances < i.
struct Batch {
    int num_instances = 0;
    int total_vars = 0;
    int total_clauses = 0;
    std::vector<int> var_offset;  // size num_instances + 1
    std::vector<int> t;           // per instance
    GraphIndex index;
    Tensor x0;          // (total_vars, 2) one-hot clean assignments
    Tensor xt;          // (total_vars, 2) one-hot noised states
    Tensor noise_rows;  // (total_vars, 4) noise features of abar_t
    std::shared_ptr<const PosteriorKlTarget> target;
};

// Packs the longest prefix of `examples` whose total variable count fits
// max_vars (always at least one), drawing t uniformly from {1..T} and the
// noised state from the forward kernel, per instance in order.
inline Batch make_batch(std::span<const TrainExample> examples, const NoiseSchedule& schedule,
                        Rng& rng, int max_vars) {
    if (examples.empty()) throw Error("make_batch: no examples");
    if (examples.front().formula.num_vars > max_vars)
        throw Error("make_batch: instance with " +
                    std::to_string(examples.front().formula.num_vars) +
                    " variables exceeds max_vars " + std::to_string(max_vars));

    Batch b;
    FactorGraph merged;
    std::vector<double> abar_rows;
    std::vector<float> x0_rows, xt_rows, mix_rows, abar_prev_rows;
    b.var_offset.push_back(0);
    for (const auto& ex : examples) {
        int n = ex.formula.num_vars;
        if (b.num_instances > 0 && b.total_vars + n > max_vars) break;
        int voff = b.total_vars;
        int coff = b.total_clauses;
        FactorGraph fg = build_factor_graph(ex.formula);
        for (const auto& e : fg.edges)
            merged.edges.push_back({e.var + voff, e.clause + coff, e.polarity});

        int t = rng.uniform_int(1, schedule.T);
        double abar = schedule.alpha_bar[t];
        double abar_prev = schedule.alpha_bar[t - 1];
        double alpha_t = schedule.alpha[t];
        CategoricalState x0 = CategoricalState::one_hot(ex.solution);
        CategoricalState xt = q_sample(x0, abar, rng);
        for (int i = 0; i < n; ++i) {
            abar_rows.push_back(abar);
            abar_prev_rows.push_back(static_cast<float>(abar_prev));
            for (int k = 0; k < 2; ++k) {
                x0_rows.push_back(static_cast<float>(x0.prob(i, k)));
                xt_rows.push_back(static_cast<float>(xt.prob(i, k)));
                mix_rows.push_back(
                    static_cast<float>(alpha_t * xt.prob(i, k) + (1.0 - alpha_t) / kNumClasses));
            }
        }
        b.t.push_back(t);
        b.num_instances += 1;
        b.total_vars += n;
        b.total_clauses += ex.formula.num_clauses();
        b.var_offset.push_back(b.total_vars);
    }
    merged.num_vars = b.total_vars;
    merged.num_clauses = b.total_clauses;
    b.index = build_graph_index(merged);
    b.x0 = Tensor({b.total_vars, 2}, std::move(x0_rows));
    b.xt = Tensor({b.total_vars, 2}, std::move(xt_rows));
    b.noise_rows = noise_feature_rows(abar_rows);
    auto target = std::make_shared<PosteriorKlTarget>();
    target->x0 = b.x0;
    target->mix = Tensor({b.total_vars, 2}, std::move(mix_rows));
    target->abar_prev = Tensor({b.total_vars, 1}, std::move(abar_prev_rows));
    b.target = std::move(target);
    return b;
}

// Mean-over-variables KL between the true and predicted reverse-step
// posteriors (forward only; see train_step for the differentiated version).
inline double batch_loss(const DenoiserModel& model, const Batch& b) {
    enable_flush_to_zero();
    tune_allocator();
    Tape tape;
    TapeModel tm = register_params(tape, model, false);
    NodeId xhat = denoiser_forward(tape, tm, b.index, b.xt, b.noise_rows, model.config.iters);
    NodeId loss = tape.posterior_kl(xhat, b.target);
    return tape.value(loss).data[0];
}

// ---------------------------------------------------------------------------
// AdaBelief
// ---------------------------------------------------------------------------

struct OptConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-16;
};

struct OptState {
    OptConfig config;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;  // first moment, per parameter tensor
    std::vector<std::vector<double>> s;  // belief (centered second) moment
};

inline OptState make_opt_state(const DenoiserModel& model, OptConfig config = {}) {
    OptState st;
    st.config = config;
    st.m.reserve(model.params.size());
    st.s.reserve(model.params.size());
    for (const auto& [name, t] : model.params) {
        st.m.emplace_back(t.data.size(), 0.0);
        st.s.emplace_back(t.data.size(), 0.0);
    }
    return st;
}

// One element-wise update. `step_now` is the 1-based step used for bias
// correction; moments are kept in double so trajectories are deterministic.
inline void adabelief_update(std::span<float> theta, std::span<const float> grad,
                             std::vector<double>& m, std::vector<double>& s,
                             const OptConfig& c, std::int64_t step_now) {
    if (theta.size() != grad.size() || theta.size() != m.size() || theta.size() != s.size())
        throw Error("adabelief_update: size mismatch");
    double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step_now));
    double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step_now));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double g = grad[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        double diff = g - m[i];
        s[i] = c.beta2 * s[i] + (1.0 - c.beta2) * diff * diff + c.eps;
        double mhat = m[i] / bc1;
        double shat = s[i] / bc2;
        theta[i] = static_cast<float>(theta[i] - c.lr * mhat / (std::sqrt(shat) + c.eps));
    }
}

inline void adabelief_step(DenoiserModel& model, const std::vector<const Tensor*>& grads,
                           OptState& st) {
    if (grads.size() != model.params.size()) throw Error("adabelief_step: gradient count");
    st.step += 1;
    for (std::size_t i = 0; i < grads.size(); ++i)
        adabelief_update(model.params[i].second.data, grads[i]->data, st.m[i], st.s[i], st.config,
                         st.step);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    int steps = 20000;
    int max_vars = 2000;
    int t_steps = 128;  // training-time schedule length
    std::uint64_t seed = 0;
    std::string checkpoint_path;  // empty: no checkpointing
    std::string log_path;         // empty: no metrics log
    int log_interval = 100;
    int checkpoint_interval = 1000;
    OptConfig opt;
    double clip_norm = 0.0;  // 0 disables gradient clipping
};

struct TrainResult {
    std::int64_t steps_done = 0;
    double last_logged_loss = 0.0;
};

// Optimizer state serialized next to the model parameters inside the same
// checkpoint ("opt.m.*", "opt.s.*", "meta.step").
inline std::vector<std::pair<std::string, Tensor>> opt_to_records(const DenoiserModel& model,
                                                                 const OptState& st) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const auto& [name, t] = model.params[i];
        Tensor m(t.shape), s(t.shape);
        for (std::size_t j = 0; j < t.data.size(); ++j) {
            m.data[j] = static_cast<float>(st.m[i][j]);
            s.data[j] = static_cast<float>(st.s[i][j]);
        }
        out.emplace_back("opt.m." + name, std::move(m));
        out.emplace_back("opt.s." + name, std::move(s));
    }
    out.emplace_back("meta.step", Tensor::scalar(static_cast<float>(st.step)));
    return out;
}

inline OptState opt_from_records(const DenoiserModel& model,
                                 const std::vector<std::pair<std::string, Tensor>>& records,
                                 OptConfig config = {}) {
    OptState st = make_opt_state(model, config);
    auto find = [&](const std::string& name) -> const Tensor* {
        for (const auto& [k, t] : records)
            if (k == name) return &t;
        return nullptr;
    };
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const auto& [name, t] = model.params[i];
        const Tensor* m = find("opt.m." + name);
        const Tensor* s = find("opt.s." + name);
        if (!m || !s) continue;
        if (m->shape != t.shape || s->shape != t.shape)
            throw Error("optimizer state shape mismatch for " + name);
        for (std::size_t j = 0; j < t.data.size(); ++j) {
            st.m[i][j] = m->data[j];
            st.s[i][j] = s->data[j];
        }
    }
    if (const Tensor* step = find("meta.step"))
        st.step = static_cast<std::int64_t>(std::llround(step->data[0]));
    return st;
}

// One optimize step on a prepared batch; returns the batch loss.
inline double train_step(DenoiserModel& model, const Batch& batch, OptState& opt,
                         double clip_norm = 0.0) {
    enable_flush_to_zero();
    tune_allocator();
    Tape tape;
    TapeModel tm = register_params(tape, model, true);
    NodeId xhat =
        denoiser_forward(tape, tm, batch.index, batch.xt, batch.noise_rows, model.config.iters);
    NodeId loss = tape.posterior_kl(xhat, batch.target);
    tape.backward(loss);

    std::vector<const Tensor*> grads;
    grads.reserve(tm.ids.size());
    for (NodeId id : tm.ids) grads.push_back(&tape.grad(id));

    std::vector<Tensor> clipped;
    if (clip_norm > 0.0) {
        double sq = 0.0;
        for (const Tensor* g : grads)
            for (float v : g->data) sq += static_cast<double>(v) * v;
        double norm = std::sqrt(sq);
        if (norm > clip_norm) {
            double scale = clip_norm / norm;
            clipped.reserve(grads.size());
            for (const Tensor* g : grads) {
                Tensor c = *g;
                for (auto& v : c.data) v = static_cast<float>(v * scale);
                clipped.push_back(std::move(c));
            }
            grads.clear();
            for (const Tensor& c : clipped) grads.push_back(&c);
        }
    }
    adabelief_step(model, grads, opt);
    return tape.value(loss).data[0];
}

inline TrainResult train_loop(const std::vector<TrainExample>& dataset, DenoiserModel& model,
                              const TrainConfig& cfg, OptState* opt_in = nullptr) {
    if (dataset.empty()) throw Error("train_loop: empty dataset");
    NoiseSchedule schedule = make_schedule(cfg.t_steps);
    model.config.timesteps = cfg.t_steps;
    OptState local = make_opt_state(model, cfg.opt);
    OptState& opt = opt_in ? *opt_in : local;

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path, std::ios::app);
        if (!log) throw Error("cannot write training log " + cfg.log_path);
    }

    // Resume reseeds the selection stream from the step counter so a resumed
    // run does not replay the same batches.
    Rng rng(mix64(cfg.seed ^ 0x747261696eull) ^ static_cast<std::uint64_t>(opt.step));
    auto start = std::chrono::steady_clock::now();
    double interval_sum = 0.0;
    int interval_count = 0;
    TrainResult result;
    result.steps_done = opt.step;

    auto checkpoint = [&]() {
        if (cfg.checkpoint_path.empty()) return;
        auto extras = opt_to_records(model, opt);
        save_checkpoint(model, cfg.checkpoint_path, extras);
    };

    std::vector<TrainExample> picked;
    while (opt.step < cfg.steps) {
        picked.clear();
        int total = 0;
        while (true) {
            const TrainExample& ex = dataset[rng.below(dataset.size())];
            if (!picked.empty() && total + ex.formula.num_vars > cfg.max_vars) break;
            picked.push_back(ex);
            total += ex.formula.num_vars;
            if (total >= cfg.max_vars) break;
        }
        Batch batch = make_batch(picked, schedule, rng, cfg.max_vars);
        double loss = train_step(model, batch, opt, cfg.clip_norm);
        interval_sum += loss;
        interval_count += 1;

        if (opt.step % cfg.log_interval == 0 || opt.step == cfg.steps) {
            double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            result.last_logged_loss = interval_sum / interval_count;
            if (log) {
                nlohmann::json rec;
                rec["step"] = opt.step;
                rec["loss"] = result.last_logged_loss;
                rec["sec"] = secs;
                log << rec.dump() << "\n" << std::flush;
            }
            interval_sum = 0.0;
            interval_count = 0;
        }
        if (opt.step % cfg.checkpoint_interval == 0) checkpoint();
    }
    checkpoint();
    result.steps_done = opt.step;
    return result;
}

}  // namespace diffsat
