// Independent reference implementations used to pin expected values in tests.
// Everything here is deliberately brute force: truth-table scans, explicit
// Bayes sums, O(v^3) triangle counting.  None of it shares code with the
// library under test beyond the basic data types.
#pragma once

#include <diffsat/cnf.hpp>
#include <diffsat/diffusion.hpp>
#include <diffsat/instance_gen.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracles {

// Truth-table scan over all 2^n assignments, in the same order the library's
// enumerator reports: variable 0 is the most significant bit and False sorts
// before True, so plain integer order 0..2^n-1 matches.
inline diffsat::Assignment assignment_from_index(std::uint64_t a, int n) {
    diffsat::Assignment out(n);
    for (int i = 0; i < n; ++i)
        out.set(i, ((a >> (n - 1 - i)) & 1u) != 0);
    return out;
}

inline bool satisfies(const diffsat::CnfFormula& f, const diffsat::Assignment& a) {
    for (const auto& clause : f.clauses) {
        bool sat = false;
        for (auto lit : clause) {
            bool val = a.value(lit.var());
            if (lit.negated() ? !val : val) {
                sat = true;
                break;
            }
        }
        if (!sat) return false;
    }
    return true;
}

inline std::vector<diffsat::Assignment> all_solutions(const diffsat::CnfFormula& f) {
    std::vector<diffsat::Assignment> out;
    const std::uint64_t total = std::uint64_t{1} << f.num_vars;
    for (std::uint64_t a = 0; a < total; ++a) {
        diffsat::Assignment cand = assignment_from_index(a, f.num_vars);
        if (satisfies(f, cand)) out.push_back(std::move(cand));
    }
    return out;
}

// Uniform random formula with clauses of width 1..3.  Literals within a
// clause use distinct variables so no clause is tautological or degenerate.
inline diffsat::CnfFormula random_formula(int num_vars, int num_clauses, diffsat::Rng& rng) {
    std::vector<std::vector<int>> clauses;
    clauses.reserve(num_clauses);
    for (int c = 0; c < num_clauses; ++c) {
        int width = static_cast<int>(rng.uniform_int(1, std::min(3, num_vars)));
        std::vector<int> vars;
        while (static_cast<int>(vars.size()) < width) {
            int v = static_cast<int>(rng.uniform_int(0, num_vars - 1));
            bool dup = false;
            for (int u : vars) dup |= (u == v);
            if (!dup) vars.push_back(v);
        }
        std::vector<int> clause;
        for (int v : vars) {
            int d = v + 1;
            clause.push_back(rng.bernoulli(0.5) ? -d : d);
        }
        clauses.push_back(std::move(clause));
    }
    return diffsat::make_formula(num_vars, clauses);
}

// Single-variable backward posterior computed as an explicit Bayes sum over
// the latent previous-step value.  The step kernel q(x_t | x_{t-1}) mixes the
// previous value with uniform noise; the marginal kernel q(x_{t-1} | x_0)
// comes from the cumulative retention product recomputed here from scratch.
//
// xt and x0 are probability rows over {False, True}; xt may be soft, in which
// case the step-kernel factor is evaluated at the expected indicator.
inline void bayes_posterior(const double xt[2], const double x0[2], int t,
                            const diffsat::NoiseSchedule& s, double out[2]) {
    // Recompute alpha_bar independently from the schedule definition.
    auto abar = [&](int step) -> double {
        if (step <= 0) return 1.0;
        if (step >= s.T) return 0.0;
        return 1.0 - std::sqrt(static_cast<double>(step) / s.T);
    };
    const double a_t = (t >= 1) ? abar(t) / abar(t - 1) : 1.0;
    const double abar_prev = abar(t - 1);
    double w[2];
    double z = 0.0;
    for (int k = 0; k < 2; ++k) {
        const double step_kernel = a_t * xt[k] + (1.0 - a_t) * 0.5;
        const double marginal = abar_prev * x0[k] + (1.0 - abar_prev) * 0.5;
        w[k] = step_kernel * marginal;
        z += w[k];
    }
    if (z <= 0.0) {
        out[0] = out[1] = 0.5;
        return;
    }
    out[0] = w[0] / z;
    out[1] = w[1] / z;
}

// KL divergence between two 2-way categoricals with the same clamping rule
// the library documents: probabilities are clamped to [1e-8, 1] inside the
// logs and exact zeros in p contribute nothing.
inline double kl2(const double p[2], const double q[2]) {
    double kl = 0.0;
    for (int k = 0; k < 2; ++k) {
        if (p[k] <= 0.0) continue;
        double pc = std::min(std::max(p[k], 1e-8), 1.0);
        double qc = std::min(std::max(q[k], 1e-8), 1.0);
        kl += p[k] * (std::log(pc) - std::log(qc));
    }
    return kl;
}

// O(v^3) triangle count straight from the definition.
inline int count_triangles_brute(const diffsat::GraphSpec& g) {
    int count = 0;
    for (int a = 0; a < g.v; ++a)
        for (int b = a + 1; b < g.v; ++b)
            for (int c = b + 1; c < g.v; ++c)
                if (g.has_edge(a, b) && g.has_edge(a, c) && g.has_edge(b, c)) ++count;
    return count;
}

}  // namespace oracles
