#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "diffsat/cnf.hpp"
#include "diffsat/common.hpp"
#include "diffsat/denoiser.hpp"
#include "diffsat/diffusion.hpp"
#include "diffsat/enumerate.hpp"

namespace diffsat {

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
    int count = 0;
};

// Sample standard deviation (n - 1); zero for fewer than two values.
inline MeanStd mean_std(std::span<const double> xs) {
    MeanStd r;
    r.count = static_cast<int>(xs.size());
    if (xs.empty()) return r;
    double sum = 0.0;
    for (double x : xs) sum += x;
    r.mean = sum / r.count;
    if (r.count < 2) return r;
    double sq = 0.0;
    for (double x : xs) sq += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(sq / (r.count - 1));
    return r;
}

// ---------------------------------------------------------------------------
// Batched model sampling. Chains are merged block-diagonally so one denoiser
// forward serves every chain per diffusion step, while each chain consumes an
// independent RNG stream; results are bit-identical to running the chains one
// at a time.
// ---------------------------------------------------------------------------

struct SampleRequest {
    const CnfFormula* formula = nullptr;
    std::uint64_t stream = 0;  // per-chain RNG stream index
};

namespace detail {

inline std::vector<SampleTrace> sample_chunk(const DenoiserModel& model,
                                             std::span<const SampleRequest> reqs,
                                             const NoiseSchedule& schedule, std::uint64_t seed,
                                             ReverseMode mode) {
    const int chains = static_cast<int>(reqs.size());
    std::vector<int> offset(chains + 1, 0);
    FactorGraph merged;
    for (int c = 0; c < chains; ++c) {
        const CnfFormula& f = *reqs[c].formula;
        FactorGraph fg = build_factor_graph(f);
        int voff = offset[c];
        int coff = merged.num_clauses;
        for (const auto& e : fg.edges)
            merged.edges.push_back({e.var + voff, e.clause + coff, e.polarity});
        merged.num_clauses += f.num_clauses();
        offset[c + 1] = voff + f.num_vars;
    }
    merged.num_vars = offset[chains];
    GraphIndex index = build_graph_index(merged);

    std::vector<Rng> rngs;
    rngs.reserve(chains);
    std::vector<CategoricalState> x(chains);
    std::vector<SampleTrace> traces(chains);
    for (int c = 0; c < chains; ++c) {
        rngs.push_back(Rng::stream(seed, reqs[c].stream));
        int n = reqs[c].formula->num_vars;
        x[c] = CategoricalState(n);
        for (int i = 0; i < n; ++i) x[c].p[2 * i + (rngs[c].bernoulli(0.5) ? 1 : 0)] = 1.0;
        traces[c].step_argmax.reserve(schedule.T);
        traces[c].step_valid.reserve(schedule.T);
    }

    const int N = merged.num_vars;
    Tensor xt({N, 2});
    std::vector<double> abar_rows(static_cast<std::size_t>(N));
    for (int t = schedule.T; t >= 1; --t) {
        for (int c = 0; c < chains; ++c)
            for (int i = 0; i < x[c].num_vars; ++i)
                for (int k = 0; k < 2; ++k)
                    xt.at(offset[c] + i, k) = static_cast<float>(x[c].prob(i, k));
        std::fill(abar_rows.begin(), abar_rows.end(), schedule.alpha_bar[t]);

        Tape tape;
        TapeModel tm = register_params(tape, model, false);
        NodeId out =
            denoiser_forward(tape, tm, index, xt, noise_feature_rows(abar_rows), model.config.iters);
        const Tensor& y = tape.value(out);

        for (int c = 0; c < chains; ++c) {
            const CnfFormula& f = *reqs[c].formula;
            int n = f.num_vars;
            CategoricalState xhat(n);
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < 2; ++k) xhat.prob(i, k) = y.at(offset[c] + i, k);
            Assignment guess = xhat.argmax();
            bool valid = evaluate(f, guess).satisfied;
            if (valid && !traces[c].first_valid) traces[c].first_valid = t;
            traces[c].step_argmax.push_back(guess);
            traces[c].step_valid.push_back(valid ? 1 : 0);
            if (t == 1) {
                traces[c].final = std::move(guess);
                continue;
            }
            CategoricalState post = posterior(x[c], xhat, t, schedule);
            if (mode == ReverseMode::kStochastic)
                x[c] = CategoricalState::one_hot(sample_categorical(post, rngs[c]));
            else
                x[c] = CategoricalState::one_hot(post.argmax());
        }
    }
    return traces;
}

}  // namespace detail

inline std::vector<SampleTrace> sample_many(const DenoiserModel& model,
                                            std::span<const SampleRequest> reqs,
                                            const NoiseSchedule& schedule, std::uint64_t seed,
                                            ReverseMode mode = ReverseMode::kStochastic,
                                            int max_batch_vars = 2048) {
    std::vector<SampleTrace> out;
    out.reserve(reqs.size());
    std::size_t begin = 0;
    while (begin < reqs.size()) {
        std::size_t end = begin;
        int total = 0;
        while (end < reqs.size()) {
            int n = reqs[end].formula->num_vars;
            if (end > begin && total + n > max_batch_vars) break;
            total += n;
            ++end;
        }
        auto chunk = detail::sample_chunk(model, reqs.subspan(begin, end - begin), schedule, seed,
                                          mode);
        for (auto& t : chunk) out.push_back(std::move(t));
        begin = end;
    }
    return out;
}

// Per-draw reverse diffusion with the enumeration-backed Bayes denoiser.
inline std::vector<SampleTrace> oracle_sample_traces(const CnfFormula& f,
                                                     const std::vector<Assignment>& solutions,
                                                     const NoiseSchedule& schedule, int count,
                                                     std::uint64_t seed,
                                                     std::uint64_t stream_base = 0,
                                                     ReverseMode mode = ReverseMode::kStochastic) {
    ExactDenoiser denoiser(solutions);
    std::vector<SampleTrace> out;
    out.reserve(count);
    for (int j = 0; j < count; ++j) {
        Rng rng = Rng::stream(seed, stream_base + static_cast<std::uint64_t>(j));
        out.push_back(reverse_sample(f, denoiser, schedule, rng, mode));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Samplers: a common interface over "draw final assignments for instance i".
// ---------------------------------------------------------------------------

class SolutionSampler {
public:
    virtual ~SolutionSampler() = default;
    virtual std::vector<Assignment> draw(const CnfFormula& f, int instance_idx,
                                         std::uint64_t stream_base, int count) = 0;
    // One draw per formula; overridden where cross-instance batching helps.
    virtual std::vector<Assignment> draw_group(const std::vector<const CnfFormula*>& fs,
                                               std::uint64_t stream_base) {
        std::vector<Assignment> out;
        out.reserve(fs.size());
        for (std::size_t i = 0; i < fs.size(); ++i)
            out.push_back(draw(*fs[i], static_cast<int>(i), stream_base + i, 1).front());
        return out;
    }
};

class ModelSampler final : public SolutionSampler {
public:
    ModelSampler(const DenoiserModel& model, NoiseSchedule schedule, std::uint64_t seed,
                 ReverseMode mode = ReverseMode::kStochastic, int max_batch_vars = 2048)
        : model_(&model),
          schedule_(std::move(schedule)),
          seed_(seed),
          mode_(mode),
          max_batch_vars_(max_batch_vars) {}

    std::vector<Assignment> draw(const CnfFormula& f, int, std::uint64_t stream_base,
                                 int count) override {
        std::vector<SampleRequest> reqs(count);
        for (int j = 0; j < count; ++j) reqs[j] = {&f, stream_base + static_cast<std::uint64_t>(j)};
        return finals(sample_many(*model_, reqs, schedule_, seed_, mode_, max_batch_vars_));
    }

    std::vector<Assignment> draw_group(const std::vector<const CnfFormula*>& fs,
                                       std::uint64_t stream_base) override {
        std::vector<SampleRequest> reqs(fs.size());
        for (std::size_t i = 0; i < fs.size(); ++i) reqs[i] = {fs[i], stream_base + i};
        return finals(sample_many(*model_, reqs, schedule_, seed_, mode_, max_batch_vars_));
    }

private:
    static std::vector<Assignment> finals(std::vector<SampleTrace> traces) {
        std::vector<Assignment> out;
        out.reserve(traces.size());
        for (auto& t : traces) out.push_back(std::move(t.final));
        return out;
    }

    const DenoiserModel* model_;
    NoiseSchedule schedule_;
    std::uint64_t seed_;
    ReverseMode mode_;
    int max_batch_vars_;
};

// Reverse diffusion steered by the enumeration oracle instead of a model.
class OracleDiffusionSampler final : public SolutionSampler {
public:
    OracleDiffusionSampler(const std::vector<std::vector<Assignment>>& solutions_per_instance,
                           NoiseSchedule schedule, std::uint64_t seed)
        : solutions_(&solutions_per_instance), schedule_(std::move(schedule)), seed_(seed) {}

    std::vector<Assignment> draw(const CnfFormula& f, int instance_idx,
                                 std::uint64_t stream_base, int count) override {
        auto traces = oracle_sample_traces(f, (*solutions_)[instance_idx], schedule_, count, seed_,
                                           stream_base);
        std::vector<Assignment> out;
        out.reserve(traces.size());
        for (auto& t : traces) out.push_back(std::move(t.final));
        return out;
    }

private:
    const std::vector<std::vector<Assignment>>* solutions_;
    NoiseSchedule schedule_;
    std::uint64_t seed_;
};

// Ideal baseline: finals drawn uniformly from the enumerated solution set.
class UniformOracleSampler final : public SolutionSampler {
public:
    UniformOracleSampler(const std::vector<std::vector<Assignment>>& solutions_per_instance,
                         std::uint64_t seed)
        : solutions_(&solutions_per_instance), seed_(seed) {}

    std::vector<Assignment> draw(const CnfFormula&, int instance_idx, std::uint64_t stream_base,
                                 int count) override {
        const auto& sols = (*solutions_)[instance_idx];
        if (sols.empty()) throw Error("uniform oracle: no solutions for instance");
        std::vector<Assignment> out;
        out.reserve(count);
        for (int j = 0; j < count; ++j) {
            Rng rng = Rng::stream(seed_, stream_base + static_cast<std::uint64_t>(j));
            out.push_back(sample_solution(sols, rng));
        }
        return out;
    }

private:
    const std::vector<std::vector<Assignment>>* solutions_;
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct AccuracyReport {
    MeanStd pct_solved;           // over runs
    std::vector<double> per_run;  // percent of instances solved in each run
};

// An instance counts as solved in a run iff any diffusion step's argmax of
// the clean-assignment estimate satisfies it (first_valid set in the trace).
template <class TraceFn>  // TraceFn(instance_idx, run) -> SampleTrace
AccuracyReport eval_accuracy(const std::vector<CnfFormula>& instances, int runs, TraceFn&& fn) {
    if (instances.empty()) throw Error("eval_accuracy: no instances");
    if (runs < 1) throw Error("eval_accuracy: runs must be >= 1");
    AccuracyReport report;
    for (int r = 0; r < runs; ++r) {
        int solved = 0;
        for (std::size_t i = 0; i < instances.size(); ++i) {
            SampleTrace trace = fn(static_cast<int>(i), r);
            if (trace.first_valid) ++solved;
        }
        report.per_run.push_back(100.0 * solved / static_cast<double>(instances.size()));
    }
    report.pct_solved = mean_std(report.per_run);
    return report;
}

inline AccuracyReport eval_accuracy_model(const DenoiserModel& model,
                                          const std::vector<CnfFormula>& instances,
                                          const NoiseSchedule& schedule, int runs,
                                          std::uint64_t seed, int max_batch_vars = 2048) {
    if (instances.empty()) throw Error("eval_accuracy: no instances");
    if (runs < 1) throw Error("eval_accuracy: runs must be >= 1");
    AccuracyReport report;
    for (int r = 0; r < runs; ++r) {
        std::vector<SampleRequest> reqs(instances.size());
        for (std::size_t i = 0; i < instances.size(); ++i)
            reqs[i] = {&instances[i],
                       static_cast<std::uint64_t>(r) * instances.size() + i};
        auto traces = sample_many(model, reqs, schedule, seed, ReverseMode::kStochastic,
                                  max_batch_vars);
        int solved = 0;
        for (const auto& t : traces)
            if (t.first_valid) ++solved;
        report.per_run.push_back(100.0 * solved / static_cast<double>(instances.size()));
    }
    report.pct_solved = mean_std(report.per_run);
    return report;
}

struct UniquenessReport {
    MeanStd unique_pct;                // over instances: 100 * distinct valid / N
    std::vector<double> per_instance;
    std::vector<int> valid_per_instance;
    std::vector<int> distinct_per_instance;
    std::int64_t total_samples = 0;
    std::int64_t invalid_samples = 0;  // diagnostic; invalid draws are filtered
};

inline UniquenessReport eval_uniqueness(SolutionSampler& sampler,
                                        const std::vector<CnfFormula>& instances,
                                        int samples_per_instance) {
    if (samples_per_instance < 1) throw Error("eval_uniqueness: need at least one sample");
    UniquenessReport report;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const CnfFormula& f = instances[i];
        std::uint64_t base = i * static_cast<std::uint64_t>(samples_per_instance);
        auto finals = sampler.draw(f, static_cast<int>(i), base, samples_per_instance);
        std::set<Assignment> distinct;
        int valid = 0;
        for (const auto& a : finals) {
            ++report.total_samples;
            if (evaluate(f, a).satisfied) {
                ++valid;
                distinct.insert(a);
            } else {
                ++report.invalid_samples;
            }
        }
        report.per_instance.push_back(100.0 * static_cast<double>(distinct.size()) /
                                      samples_per_instance);
        report.valid_per_instance.push_back(valid);
        report.distinct_per_instance.push_back(static_cast<int>(distinct.size()));
    }
    report.unique_pct = mean_std(report.per_instance);
    return report;
}

struct AgreementPair {
    int instance = 0;
    int rep = 0;
    double pct = 0.0;
};

struct AgreementReport {
    MeanStd agreement_pct;  // over (instance, repetition) pairs
    std::vector<AgreementPair> pairs;
    int skipped = 0;  // pairs where two valid samples were not found in budget
};

// Per instance and repetition, draws until two valid samples are found
// (within the retry budget) and scores the percentage of identically
// assigned variables.
inline AgreementReport eval_agreement(SolutionSampler& sampler,
                                      const std::vector<CnfFormula>& instances, int reps = 10,
                                      int retry_budget = 20) {
    AgreementReport report;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const CnfFormula& f = instances[i];
        for (int rep = 0; rep < reps; ++rep) {
            std::uint64_t base =
                (i * static_cast<std::uint64_t>(reps) + rep) * static_cast<std::uint64_t>(retry_budget);
            std::vector<Assignment> valid;
            int used = 0;
            while (static_cast<int>(valid.size()) < 2 && used < retry_budget) {
                int want = std::min(2 - static_cast<int>(valid.size()), retry_budget - used);
                auto draws = sampler.draw(f, static_cast<int>(i), base + used, want);
                used += want;
                for (auto& a : draws)
                    if (evaluate(f, a).satisfied) valid.push_back(std::move(a));
            }
            if (valid.size() < 2) {
                ++report.skipped;
                continue;
            }
            int equal = 0;
            for (int v = 0; v < f.num_vars; ++v)
                if (valid[0].value(v) == valid[1].value(v)) ++equal;
            report.pairs.push_back(
                {static_cast<int>(i), rep, 100.0 * equal / static_cast<double>(f.num_vars)});
        }
    }
    std::vector<double> pcts;
    pcts.reserve(report.pairs.size());
    for (const auto& p : report.pairs) pcts.push_back(p.pct);
    report.agreement_pct = mean_std(pcts);
    return report;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct TimingRow {
    std::string family;
    int n = 0;
    int m = 0;
    int batch = 0;
    double sec_per_sample = 0.0;
};

inline constexpr const char* kTimingCsvHeader = "family,n,m,batch,sec_per_sample";

// Each group is sampled in one batch; per-sample time is the group wall-clock
// divided by the group size.
template <class BatchFn>  // BatchFn(group_idx, formulas) -> void
std::vector<TimingRow> eval_timing(const std::vector<std::vector<CnfFormula>>& groups,
                                   const std::string& family, BatchFn&& sample_group) {
    std::vector<TimingRow> rows;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& group = groups[g];
        if (group.empty()) throw Error("eval_timing: empty group");
        std::vector<const CnfFormula*> fs;
        fs.reserve(group.size());
        for (const auto& f : group) fs.push_back(&f);
        auto begin = std::chrono::steady_clock::now();
        sample_group(static_cast<int>(g), fs);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
        rows.push_back({family, group.front().num_vars, group.front().num_clauses(),
                        static_cast<int>(group.size()), secs / group.size()});
    }
    return rows;
}

inline void write_timing_csv(std::ostream& out, std::span<const TimingRow> rows) {
    out << kTimingCsvHeader << "\n";
    for (const auto& r : rows)
        out << r.family << ',' << r.n << ',' << r.m << ',' << r.batch << ','
            << r.sec_per_sample << "\n";
}

inline void write_timing_csv(const std::string& path, std::span<const TimingRow> rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    write_timing_csv(out, rows);
}

}  // namespace diffsat
