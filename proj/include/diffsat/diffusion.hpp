#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "diffsat/cnf.hpp"
#include "diffsat/common.hpp"

namespace diffsat {

inline constexpr int kNumClasses = 2;  // False, True
inline constexpr double kProbEps = 1e-8;

// Noise schedule abar_t = 1 - sqrt(t/T), with alpha_t = abar_t / abar_{t-1}
// and beta_t = 1 - alpha_t.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha_bar;  // indexed 0..T, alpha_bar[0] = 1
    std::vector<double> alpha;      // indexed 1..T ([0] unused)
    std::vector<double> beta;       // indexed 1..T ([0] unused)
};

inline NoiseSchedule make_schedule(int T) {
    if (T < 1) throw Error("schedule requires T >= 1");
    NoiseSchedule s;
    s.T = T;
    s.alpha_bar.resize(T + 1);
    s.alpha.resize(T + 1, 0.0);
    s.beta.resize(T + 1, 0.0);
    for (int t = 0; t <= T; ++t)
        s.alpha_bar[t] = 1.0 - std::sqrt(static_cast<double>(t) / T);
    s.alpha_bar[0] = 1.0;
    s.alpha_bar[T] = 0.0;
    for (int t = 1; t <= T; ++t) {
        s.alpha[t] = s.alpha_bar[t] / s.alpha_bar[t - 1];
        s.beta[t] = 1.0 - s.alpha[t];
    }
    return s;
}

// Per-variable probability pairs over {False, True}.
struct CategoricalState {
    int num_vars = 0;
    std::vector<double> p;  // [2i] = P(var i = False), [2i+1] = P(var i = True)

    CategoricalState() = default;
    explicit CategoricalState(int n) : num_vars(n), p(2 * n, 0.0) {}

    static CategoricalState uniform(int n) {
        CategoricalState s(n);
        for (auto& v : s.p) v = 0.5;
        return s;
    }

    static CategoricalState one_hot(const Assignment& a) {
        CategoricalState s(a.size());
        for (int i = 0; i < a.size(); ++i) s.p[2 * i + (a.value(i) ? 1 : 0)] = 1.0;
        return s;
    }

    double prob(int var, int k) const { return p[2 * var + k]; }
    double& prob(int var, int k) { return p[2 * var + k]; }
    double prob_true(int var) const { return p[2 * var + 1]; }

    bool is_one_hot() const {
        for (int i = 0; i < num_vars; ++i)
            if ((p[2 * i] != 0.0 && p[2 * i] != 1.0) || p[2 * i] + p[2 * i + 1] != 1.0)
                return false;
        return true;
    }

    Assignment argmax() const {
        Assignment a(num_vars);
        for (int i = 0; i < num_vars; ++i) a.set(i, p[2 * i + 1] > p[2 * i]);
        return a;
    }
};

// Draws x_t ~ C(abar * x0 + (1 - abar)/K) independently per variable.
inline CategoricalState q_sample(const CategoricalState& x0, double alpha_bar, Rng& rng) {
    CategoricalState out(x0.num_vars);
    for (int i = 0; i < x0.num_vars; ++i) {
        double p_true = alpha_bar * x0.prob(i, 1) + (1.0 - alpha_bar) / kNumClasses;
        out.p[2 * i + (rng.bernoulli(p_true) ? 1 : 0)] = 1.0;
    }
    return out;
}

// One-step categorical draw from arbitrary per-variable probabilities.
inline Assignment sample_categorical(const CategoricalState& s, Rng& rng) {
    Assignment a(s.num_vars);
    for (int i = 0; i < s.num_vars; ++i) a.set(i, rng.bernoulli(s.prob_true(i)));
    return a;
}

// Reverse-step distribution parameters:
//   theta ~ [alpha_t x_t + (1-alpha_t)/K] . [abar_{t-1} x0 + (1-abar_{t-1})/K]
// normalized per variable. x0 may be soft (a network estimate). The epsilon
// floor engages only if a row underflows to zero, which cannot happen for
// valid inputs; exact normalization is preserved otherwise.
inline CategoricalState posterior(const CategoricalState& x_t, const CategoricalState& x0,
                                  int t, const NoiseSchedule& s) {
    if (t < 1 || t > s.T) throw Error("posterior: step out of range");
    if (x_t.num_vars != x0.num_vars) throw Error("posterior: variable count mismatch");
    double alpha_t = s.alpha[t];
    double abar_prev = s.alpha_bar[t - 1];
    CategoricalState out(x_t.num_vars);
    for (int i = 0; i < x_t.num_vars; ++i) {
        double th[kNumClasses];
        double sum = 0.0;
        for (int k = 0; k < kNumClasses; ++k) {
            double a = alpha_t * x_t.prob(i, k) + (1.0 - alpha_t) / kNumClasses;
            double b = abar_prev * x0.prob(i, k) + (1.0 - abar_prev) / kNumClasses;
            th[k] = a * b;
            sum += th[k];
        }
        if (sum <= 0.0) {
            for (int k = 0; k < kNumClasses; ++k) th[k] = std::max(th[k], kProbEps);
            sum = th[0] + th[1];
        }
        for (int k = 0; k < kNumClasses; ++k) out.prob(i, k) = th[k] / sum;
    }
    return out;
}

// Total KL divergence sum_i sum_k p_ik (ln p_ik - ln q_ik), with probabilities
// clamped to [eps, 1] inside the logarithms.
inline double kl_categorical(const CategoricalState& p, const CategoricalState& q) {
    if (p.num_vars != q.num_vars) throw Error("kl: variable count mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < p.p.size(); ++i) {
        double pk = p.p[i];
        if (pk == 0.0) continue;
        double lp = std::log(std::min(std::max(pk, kProbEps), 1.0));
        double lq = std::log(std::min(std::max(q.p[i], kProbEps), 1.0));
        total += pk * (lp - lq);
    }
    return total;
}

inline double kl_categorical_mean(const CategoricalState& p, const CategoricalState& q) {
    return kl_categorical(p, q) / std::max(1, p.num_vars);
}

// ---------------------------------------------------------------------------
// Reverse sampling
// ---------------------------------------------------------------------------

enum class ReverseMode {
    kStochastic,  // x_{t-1} sampled from the posterior
    kArgmaxStep,  // x_{t-1} = per-variable argmax of the posterior
};

struct SampleTrace {
    std::vector<Assignment> step_argmax;  // index 0 is step T, last is step 1
    std::vector<std::uint8_t> step_valid;
    Assignment final;                  // argmax of the step-1 estimate
    std::optional<int> first_valid;    // step t of the first valid argmax (T..1)
};

// Runs the reverse chain from t = T down to 1. The denoiser receives the
// current one-hot state and the scalar abar_t and returns per-variable
// probabilities of the clean assignment.
template <class Denoiser>
SampleTrace reverse_sample(const CnfFormula& formula, Denoiser&& denoiser,
                           const NoiseSchedule& s, Rng& rng,
                           ReverseMode mode = ReverseMode::kStochastic) {
    enable_flush_to_zero();
    tune_allocator();
    const int n = formula.num_vars;
    SampleTrace trace;
    trace.step_argmax.reserve(s.T);
    trace.step_valid.reserve(s.T);

    CategoricalState x_t(n);
    for (int i = 0; i < n; ++i) x_t.p[2 * i + (rng.bernoulli(0.5) ? 1 : 0)] = 1.0;

    for (int t = s.T; t >= 1; --t) {
        CategoricalState xhat0 = denoiser(formula, x_t, s.alpha_bar[t]);
        if (xhat0.num_vars != n) throw Error("denoiser output size mismatch");
        Assignment guess = xhat0.argmax();
        bool valid = evaluate(formula, guess).satisfied;
        if (valid && !trace.first_valid) trace.first_valid = t;
        trace.step_argmax.push_back(guess);
        trace.step_valid.push_back(valid ? 1 : 0);
        if (t == 1) {
            trace.final = std::move(guess);
            break;
        }
        CategoricalState post = posterior(x_t, xhat0, t, s);
        if (mode == ReverseMode::kStochastic) {
            x_t = CategoricalState::one_hot(sample_categorical(post, rng));
        } else {
            x_t = CategoricalState::one_hot(post.argmax());
        }
    }
    return trace;
}

}  // namespace diffsat
