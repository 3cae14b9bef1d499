#pragma once

#include <cstdint>
#include <vector>

#include "diffsat/cnf.hpp"
#include "diffsat/common.hpp"
#include "diffsat/diffusion.hpp"

namespace diffsat {

struct EnumerateResult {
    std::vector<Assignment> solutions;  // lexicographic, False < True
    bool truncated = false;
};

namespace detail {

// Backtracking enumerator over variables 1..n in order, False branch first,
// with unit propagation. Decision order makes the output lexicographic:
// forced variables have a unique consistent value, so propagation prunes
// without reordering.
class Enumerator {
public:
    Enumerator(const CnfFormula& f, std::int64_t cap)
        : formula_(f), cap_(cap), assign_(f.num_vars, kUnset),
          num_true_(f.num_clauses(), 0), num_unassigned_(f.num_clauses()) {
        occurrences_.resize(f.num_vars);
        for (int ci = 0; ci < f.num_clauses(); ++ci) {
            num_unassigned_[ci] = static_cast<int>(f.clauses[ci].size());
            for (Lit l : f.clauses[ci])
                occurrences_[l.var()].push_back({ci, l.negated()});
        }
    }

    EnumerateResult run() {
        EnumerateResult result;
        // empty clause list: every assignment satisfies
        bool ok = true;
        for (int ci = 0; ci < formula_.num_clauses() && ok; ++ci)
            if (formula_.clauses[ci].empty()) ok = false;
        if (ok) search(0, result);
        return result;
    }

private:
    static constexpr std::int8_t kUnset = -1;

    struct Occurrence {
        int clause;
        bool negated;
    };

    // Returns false on conflict; trail records assignments for undo. All
    // counters are updated even on conflict so that undo stays symmetric.
    bool assign(int var, bool value, std::vector<int>& trail) {
        assign_[var] = value ? 1 : 0;
        trail.push_back(var);
        bool ok = true;
        for (const auto& occ : occurrences_[var]) {
            bool lit_true = (value != occ.negated);
            if (lit_true) num_true_[occ.clause]++;
            num_unassigned_[occ.clause]--;
            if (num_true_[occ.clause] == 0 && num_unassigned_[occ.clause] == 0)
                ok = false;
        }
        return ok;
    }

    void undo(std::vector<int>& trail, std::size_t mark) {
        while (trail.size() > mark) {
            int var = trail.back();
            trail.pop_back();
            bool value = assign_[var] == 1;
            for (const auto& occ : occurrences_[var]) {
                bool lit_true = (value != occ.negated);
                if (lit_true) num_true_[occ.clause]--;
                num_unassigned_[occ.clause]++;
            }
            assign_[var] = kUnset;
        }
    }

    // Propagates unit clauses watching the newly added trail suffix.
    bool propagate(std::vector<int>& trail, std::size_t from) {
        for (std::size_t qi = from; qi < trail.size(); ++qi) {
            for (const auto& occ : occurrences_[trail[qi]]) {
                int ci = occ.clause;
                if (num_true_[ci] > 0 || num_unassigned_[ci] != 1) continue;
                for (Lit l : formula_.clauses[ci]) {
                    if (assign_[l.var()] != kUnset) continue;
                    if (!assign(l.var(), !l.negated(), trail)) return false;
                    break;
                }
            }
        }
        return true;
    }

    // Returns false once the cap is hit.
    bool search(int var, EnumerateResult& result) {
        while (var < formula_.num_vars && assign_[var] != kUnset) ++var;
        if (var == formula_.num_vars) {
            if (static_cast<std::int64_t>(result.solutions.size()) >= cap_) {
                result.truncated = true;
                return false;
            }
            Assignment a(formula_.num_vars);
            for (int i = 0; i < formula_.num_vars; ++i) a.set(i, assign_[i] == 1);
            result.solutions.push_back(std::move(a));
            return true;
        }
        for (bool value : {false, true}) {
            std::vector<int> trail;
            if (assign(var, value, trail) && propagate(trail, 0)) {
                if (!search(var + 1, result)) {
                    undo(trail, 0);
                    return false;
                }
            }
            undo(trail, 0);
        }
        return true;
    }

    const CnfFormula& formula_;
    std::int64_t cap_;
    std::vector<std::int8_t> assign_;
    std::vector<int> num_true_;
    std::vector<int> num_unassigned_;
    std::vector<std::vector<Occurrence>> occurrences_;
};

}  // namespace detail

// All satisfying assignments in lexicographic order, up to cap. Intended for
// small instances; this is the test oracle standing in for an external
// solver/sampler pipeline.
inline EnumerateResult enumerate_solutions(const CnfFormula& f, std::int64_t cap = 100000) {
    if (cap < 1) throw Error("cap must be positive");
    return detail::Enumerator(f, cap).run();
}

inline Assignment sample_solution(const std::vector<Assignment>& solutions, Rng& rng) {
    if (solutions.empty()) throw Error("cannot sample from an empty solution set");
    return solutions[rng.below(solutions.size())];
}

// Bayes-optimal denoiser given the full solution set: posterior over
// solutions under the per-variable survival likelihood
//   P(x_t,i | x0 = s) = abar * 1{x_t,i = s_i} + (1 - abar)/K
// with a uniform prior, reduced to per-variable marginals.
inline CategoricalState exact_denoiser(const std::vector<Assignment>& solutions,
                                       const CategoricalState& x_t, double alpha_bar) {
    if (solutions.empty()) throw Error("exact_denoiser needs a non-empty solution set");
    const int n = x_t.num_vars;
    const double match = alpha_bar + (1.0 - alpha_bar) / kNumClasses;
    const double mismatch = (1.0 - alpha_bar) / kNumClasses;

    CategoricalState out(n);
    double total = 0.0;
    for (const auto& s : solutions) {
        double w = 1.0;
        for (int i = 0; i < n; ++i) {
            bool agrees = x_t.prob(i, s.value(i) ? 1 : 0) == 1.0;
            w *= agrees ? match : mismatch;
        }
        total += w;
        for (int i = 0; i < n; ++i) out.prob(i, s.value(i) ? 1 : 0) += w;
    }
    if (total <= 0.0) {
        // alpha_bar = 1 with x_t off the solution set; fall back to uniform prior
        for (const auto& s : solutions)
            for (int i = 0; i < n; ++i) out.prob(i, s.value(i) ? 1 : 0) += 1.0;
        total = static_cast<double>(solutions.size());
    }
    for (auto& v : out.p) v /= total;
    return out;
}

// Adapter matching the reverse_sample denoiser signature.
class ExactDenoiser {
public:
    explicit ExactDenoiser(std::vector<Assignment> solutions)
        : solutions_(std::move(solutions)) {}

    CategoricalState operator()(const CnfFormula&, const CategoricalState& x_t,
                                double alpha_bar) const {
        return exact_denoiser(solutions_, x_t, alpha_bar);
    }

    const std::vector<Assignment>& solutions() const { return solutions_; }

private:
    std::vector<Assignment> solutions_;
};

}  // namespace diffsat
