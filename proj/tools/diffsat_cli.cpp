// diffsat command-line tool: instance generation, solution enumeration,
// training, diffusion sampling, and evaluation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffsat/diffsat.hpp"

namespace {

using namespace diffsat;

std::uint64_t instance_seed(std::uint64_t seed, int index) {
    return mix64(mix64(seed) + static_cast<std::uint64_t>(index));
}

void note_seed(std::uint64_t seed) { std::cerr << "diffsat: seed=" << seed << "\n"; }

struct Range {
    int lo = 0;
    int hi = 0;
};

Range parse_range(const std::string& text) {
    auto pos = text.find("..");
    try {
        if (pos == std::string::npos) {
            int v = std::stoi(text);
            return {v, v};
        }
        Range r{std::stoi(text.substr(0, pos)), std::stoi(text.substr(pos + 2))};
        if (r.lo > r.hi) throw Error("range lower bound exceeds upper bound: " + text);
        return r;
    } catch (const std::invalid_argument&) {
        throw Error("malformed range: " + text + " (expected A..B)");
    } catch (const std::out_of_range&) {
        throw Error("range out of bounds: " + text);
    }
}

// --------------------------------------------------------------------------
// gen
// --------------------------------------------------------------------------

struct GenCommon {
    std::string range_text;
    std::string out_dir;
    int count = 1;
    std::uint64_t seed = 0;
    int cap = 100000;
    bool no_solutions = false;
};

void run_gen_3sat(const GenCommon& g, const std::string& mode_text) {
    note_seed(g.seed);
    Range r = parse_range(g.range_text);
    bool threshold = mode_text == "threshold";
    double ratio = 0.0;
    if (!threshold) {
        if (!mode_text.starts_with("ratio:"))
            throw Error("unknown mode: " + mode_text + " (expected threshold or ratio:R)");
        ratio = std::stod(mode_text.substr(6));
        if (ratio <= 0.0) throw Error("ratio must be positive");
    }

    Rng sizes(mix64(g.seed ^ 0x67656e33736174ull));
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < g.count; ++i) {
        int n = r.lo == r.hi ? r.lo : sizes.uniform_int(r.lo, r.hi);
        std::uint64_t s = instance_seed(g.seed, i);
        CnfFormula f = threshold ? gen_3sat_threshold(n, s) : gen_3sat_ratio(n, ratio, s);
        std::string stem = instance_stem("3sat", n, i);
        ManifestEntry e{stem + ".cnf", f.num_vars, f.num_clauses(), -1, false};
        if (g.no_solutions) {
            write_instance_files(g.out_dir, stem, f, nullptr, false);
        } else {
            EnumerateResult res = enumerate_solutions(f, g.cap);
            write_instance_files(g.out_dir, stem, f, &res.solutions, res.truncated);
            e.solutions = static_cast<std::int64_t>(res.solutions.size());
            e.truncated = res.truncated;
        }
        entries.push_back(std::move(e));
    }
    write_manifest(g.out_dir, "3sat", g.seed, threshold ? "threshold" : mode_text, entries);
    std::cout << "wrote " << g.count << " instances to " << g.out_dir << "\n";
}

void run_gen_clique(const GenCommon& g) {
    note_seed(g.seed);
    Range r = parse_range(g.range_text);
    Rng sizes(mix64(g.seed ^ 0x67656e636c6971ull));
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < g.count; ++i) {
        int v = r.lo == r.hi ? r.lo : sizes.uniform_int(r.lo, r.hi);
        GraphSpec graph = gen_er_graph(v, instance_seed(g.seed, i));
        auto [f, map] = encode_3clique(graph);
        std::string stem = instance_stem("clique", v, i);
        ManifestEntry e{stem + ".cnf", f.num_vars, f.num_clauses(), -1, false};
        if (g.no_solutions) {
            write_instance_files(g.out_dir, stem, f, nullptr, false);
        } else {
            EnumerateResult res = enumerate_solutions(f, g.cap);
            write_instance_files(g.out_dir, stem, f, &res.solutions, res.truncated);
            e.solutions = static_cast<std::int64_t>(res.solutions.size());
            e.truncated = res.truncated;
        }
        entries.push_back(std::move(e));
    }
    write_manifest(g.out_dir, "clique", g.seed, "er", entries);
    std::cout << "wrote " << g.count << " instances to " << g.out_dir << "\n";
}

// --------------------------------------------------------------------------
// enumerate
// --------------------------------------------------------------------------

void run_enumerate(const std::string& cnf_path, int cap, const std::string& out_path) {
    CnfFormula f = parse_dimacs_file(cnf_path);
    EnumerateResult res = enumerate_solutions(f, cap);
    if (out_path.empty()) {
        write_solutions(res.solutions, f.num_vars, std::cout, res.truncated);
    } else {
        write_solutions_file(res.solutions, f.num_vars, out_path, res.truncated);
    }
    std::cerr << "diffsat: " << res.solutions.size() << " solutions"
              << (res.truncated ? " (truncated)" : "") << "\n";
}

// --------------------------------------------------------------------------
// train
// --------------------------------------------------------------------------

struct TrainArgs {
    std::string data_dir;
    int steps = 20000;
    int t_steps = 128;
    int dim = 64;
    int iters = 32;
    std::string solution_mode = "first";
    std::uint64_t seed = 0;
    std::string ckpt;
    std::string log;
    int max_vars = 2000;
    double clip = 0.0;
    bool resume = false;
    int log_interval = 100;
    int ckpt_interval = 1000;
};

void run_train(const TrainArgs& a) {
    note_seed(a.seed);
    auto instances = load_dataset_dir(a.data_dir);
    auto examples = make_training_set(instances, parse_solution_mode(a.solution_mode), a.seed);
    if (examples.empty())
        throw Error("no training examples in " + a.data_dir +
                    " (instances need non-empty .solutions files)");

    DenoiserModel model;
    OptState opt;
    if (a.resume && !a.ckpt.empty() && std::filesystem::exists(a.ckpt)) {
        std::vector<std::pair<std::string, Tensor>> extras;
        model = load_checkpoint(a.ckpt, &extras);
        opt = opt_from_records(model, extras);
        std::cerr << "diffsat: resumed from " << a.ckpt << " at step " << opt.step << "\n";
    } else {
        ModelConfig mc;
        mc.dim = a.dim;
        mc.iters = a.iters;
        mc.timesteps = a.t_steps;
        mc.seed = a.seed;
        model = init_model(mc);
        opt = make_opt_state(model);
    }

    TrainConfig cfg;
    cfg.steps = a.steps;
    cfg.max_vars = a.max_vars;
    cfg.t_steps = a.t_steps;
    cfg.seed = a.seed;
    cfg.checkpoint_path = a.ckpt;
    cfg.log_path = a.log;
    cfg.clip_norm = a.clip;
    cfg.log_interval = a.log_interval;
    cfg.checkpoint_interval = a.ckpt_interval;
    TrainResult res = train_loop(examples, model, cfg, &opt);
    std::cout << "trained to step " << res.steps_done << ", last logged loss "
              << res.last_logged_loss << "\n";
}

// --------------------------------------------------------------------------
// sample
// --------------------------------------------------------------------------

struct SampleArgs {
    std::string ckpt;
    std::string cnf;
    int samples = 100;
    int t_steps = 0;  // 0: checkpoint default (128 with --oracle)
    std::uint64_t seed = 0;
    bool oracle = false;
    int cap = 100000;
};

void run_sample(const SampleArgs& a) {
    note_seed(a.seed);
    CnfFormula f = parse_dimacs_file(a.cnf);
    std::vector<SampleTrace> traces;
    if (a.oracle) {
        int T = a.t_steps > 0 ? a.t_steps : 128;
        EnumerateResult res = enumerate_solutions(f, a.cap);
        if (res.solutions.empty()) throw Error("formula is unsatisfiable; nothing to sample");
        traces = oracle_sample_traces(f, res.solutions, make_schedule(T), a.samples, a.seed);
    } else {
        if (a.ckpt.empty()) throw Error("--ckpt is required unless --oracle is given");
        DenoiserModel model = load_checkpoint(a.ckpt);
        int T = a.t_steps > 0 ? a.t_steps : model.config.timesteps;
        std::vector<SampleRequest> reqs(a.samples);
        for (int j = 0; j < a.samples; ++j) reqs[j] = {&f, static_cast<std::uint64_t>(j)};
        traces = sample_many(model, reqs, make_schedule(T), a.seed);
    }
    std::vector<Assignment> valid;
    std::set<Assignment> distinct;
    for (const auto& t : traces) {
        if (evaluate(f, t.final).satisfied) {
            valid.push_back(t.final);
            distinct.insert(t.final);
        }
    }
    std::cout << "c sampled " << traces.size() << " valid " << valid.size() << " distinct "
              << distinct.size() << "\n";
    write_solutions(valid, f.num_vars, std::cout);
}

// --------------------------------------------------------------------------
// eval
// --------------------------------------------------------------------------

std::vector<CnfFormula> formulas_of(const std::vector<LoadedInstance>& instances) {
    std::vector<CnfFormula> out;
    out.reserve(instances.size());
    for (const auto& inst : instances) out.push_back(inst.formula);
    return out;
}

std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    return out;
}

struct EvalArgs {
    std::string ckpt;
    std::string data_dir;
    std::string csv;
    int t_steps = 0;
    std::uint64_t seed = 0;
    int runs = 5;
    int samples = 100;
    int reps = 10;
    int retry_budget = 20;
    int max_batch_vars = 2048;
    bool argmax_step = false;
    bool uniform_oracle = false;
    std::vector<int> sizes = {20, 40, 60, 80, 100};
    int batch = 4;
    int dim = 64;
    int iters = 32;
};

DenoiserModel eval_model(const EvalArgs& a, bool allow_fresh = false) {
    if (!a.ckpt.empty()) return load_checkpoint(a.ckpt);
    if (!allow_fresh) throw Error("--ckpt is required");
    std::cerr << "diffsat: no checkpoint given, timing an untrained model\n";
    ModelConfig mc;
    mc.dim = a.dim;
    mc.iters = a.iters;
    mc.timesteps = a.t_steps > 0 ? a.t_steps : 16;
    mc.seed = a.seed;
    return init_model(mc);
}

void run_eval_accuracy(const EvalArgs& a) {
    note_seed(a.seed);
    DenoiserModel model = eval_model(a);
    int T = a.t_steps > 0 ? a.t_steps : model.config.timesteps;
    auto formulas = formulas_of(load_dataset_dir(a.data_dir));
    AccuracyReport rep = eval_accuracy_model(model, formulas, make_schedule(T), a.runs, a.seed,
                                             a.max_batch_vars);
    std::cout << "accuracy: " << rep.pct_solved.mean << " +- " << rep.pct_solved.std << " over "
              << a.runs << " runs (" << formulas.size() << " instances, T=" << T << ")\n";
    if (!a.csv.empty()) {
        auto out = open_csv(a.csv);
        out << "run,pct_solved\n";
        for (std::size_t r = 0; r < rep.per_run.size(); ++r)
            out << r << ',' << rep.per_run[r] << "\n";
    }
}

void run_eval_diversity(const EvalArgs& a) {
    note_seed(a.seed);
    DenoiserModel model = eval_model(a);
    int T = a.t_steps > 0 ? a.t_steps : model.config.timesteps;
    auto instances = load_dataset_dir(a.data_dir);
    auto formulas = formulas_of(instances);
    ModelSampler sampler(model, make_schedule(T), a.seed,
                         a.argmax_step ? ReverseMode::kArgmaxStep : ReverseMode::kStochastic,
                         a.max_batch_vars);
    UniquenessReport rep = eval_uniqueness(sampler, formulas, a.samples);
    std::cout << "uniqueness: " << rep.unique_pct.mean << " +- " << rep.unique_pct.std << " ("
              << a.samples << " samples/instance, " << rep.invalid_samples << "/"
              << rep.total_samples << " invalid)\n";
    if (!a.csv.empty()) {
        auto out = open_csv(a.csv);
        out << "instance,n,m,samples,valid,distinct,unique_pct\n";
        for (std::size_t i = 0; i < formulas.size(); ++i)
            out << instances[i].stem << ',' << formulas[i].num_vars << ','
                << formulas[i].num_clauses() << ',' << a.samples << ','
                << rep.valid_per_instance[i] << ',' << rep.distinct_per_instance[i] << ','
                << rep.per_instance[i] << "\n";
    }
}

void run_eval_agreement(const EvalArgs& a) {
    note_seed(a.seed);
    auto instances = load_dataset_dir(a.data_dir);
    auto formulas = formulas_of(instances);
    std::unique_ptr<SolutionSampler> sampler;
    DenoiserModel model;
    NoiseSchedule schedule;
    std::vector<std::vector<Assignment>> solutions;
    if (a.uniform_oracle) {
        solutions.reserve(instances.size());
        for (const auto& inst : instances) {
            if (inst.solutions.empty())
                throw Error("uniform-oracle agreement needs .solutions for every instance (" +
                            inst.stem + " has none)");
            solutions.push_back(inst.solutions);
        }
        sampler = std::make_unique<UniformOracleSampler>(solutions, a.seed);
    } else {
        model = eval_model(a);
        int T = a.t_steps > 0 ? a.t_steps : model.config.timesteps;
        schedule = make_schedule(T);
        sampler = std::make_unique<ModelSampler>(model, schedule, a.seed,
                                                 ReverseMode::kStochastic, a.max_batch_vars);
    }
    AgreementReport rep = eval_agreement(*sampler, formulas, a.reps, a.retry_budget);
    std::cout << "agreement: " << rep.agreement_pct.mean << " +- " << rep.agreement_pct.std
              << " over " << rep.pairs.size() << " pairs (" << rep.skipped << " skipped)\n";
    if (!a.csv.empty()) {
        auto out = open_csv(a.csv);
        out << "instance,rep,agreement_pct\n";
        for (const auto& p : rep.pairs)
            out << instances[p.instance].stem << ',' << p.rep << ',' << p.pct << "\n";
    }
}

void run_eval_timing(const EvalArgs& a) {
    note_seed(a.seed);
    DenoiserModel model = eval_model(a, /*allow_fresh=*/true);
    int T = a.t_steps > 0 ? a.t_steps : model.config.timesteps;
    NoiseSchedule schedule = make_schedule(T);

    std::vector<std::vector<CnfFormula>> groups;
    for (std::size_t g = 0; g < a.sizes.size(); ++g) {
        std::vector<CnfFormula> group;
        for (int i = 0; i < a.batch; ++i)
            group.push_back(gen_3sat_threshold(
                a.sizes[g], instance_seed(a.seed, static_cast<int>(g) * a.batch + i)));
        groups.push_back(std::move(group));
    }
    auto rows = eval_timing(groups, "3sat", [&](int g, const std::vector<const CnfFormula*>& fs) {
        std::vector<SampleRequest> reqs(fs.size());
        for (std::size_t i = 0; i < fs.size(); ++i)
            reqs[i] = {fs[i], static_cast<std::uint64_t>(g) * a.batch + i};
        sample_many(model, reqs, schedule, a.seed, ReverseMode::kStochastic, a.max_batch_vars);
    });
    if (a.csv.empty()) {
        write_timing_csv(std::cout, rows);
    } else {
        write_timing_csv(a.csv, rows);
        std::cout << "wrote timing for " << rows.size() << " sizes to " << a.csv << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diverse SAT solution sampling via categorical denoising diffusion"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker cap (runs are currently single-threaded)");

    // gen
    auto* gen = app.add_subcommand("gen", "Generate instance datasets");
    gen->require_subcommand(1);
    GenCommon g3, gc;
    std::string mode_text = "threshold";
    auto* gen3 = gen->add_subcommand("3sat", "Random 3-SAT instances");
    gen3->add_option("--vars", g3.range_text, "Variable count or range A..B")->required();
    gen3->add_option("--mode", mode_text, "threshold or ratio:R");
    gen3->add_option("--count", g3.count, "Number of instances");
    gen3->add_option("--seed", g3.seed, "Master seed");
    gen3->add_option("--out", g3.out_dir, "Output directory")->required();
    gen3->add_option("--cap", g3.cap, "Solution enumeration cap");
    gen3->add_flag("--no-solutions", g3.no_solutions, "Skip solution enumeration");
    gen3->callback([&] { run_gen_3sat(g3, mode_text); });

    auto* genc = gen->add_subcommand("clique", "3-Clique SAT encodings of random graphs");
    genc->add_option("--vertices", gc.range_text, "Vertex count or range A..B")->required();
    genc->add_option("--count", gc.count, "Number of instances");
    genc->add_option("--seed", gc.seed, "Master seed");
    genc->add_option("--out", gc.out_dir, "Output directory")->required();
    genc->add_option("--cap", gc.cap, "Solution enumeration cap");
    genc->add_flag("--no-solutions", gc.no_solutions, "Skip solution enumeration");
    genc->callback([&] { run_gen_clique(gc); });

    // enumerate
    std::string enum_cnf, enum_out;
    int enum_cap = 100000;
    auto* enu = app.add_subcommand("enumerate", "Enumerate all solutions of a CNF file");
    enu->add_option("--cnf", enum_cnf, "DIMACS CNF file")->required();
    enu->add_option("--cap", enum_cap, "Stop after this many solutions");
    enu->add_option("--out", enum_out, "Output .solutions file (default: stdout)");
    enu->callback([&] { run_enumerate(enum_cnf, enum_cap, enum_out); });

    // train
    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Train the denoiser on a dataset directory");
    tr->add_option("--data", ta.data_dir, "Dataset directory")->required();
    tr->add_option("--steps", ta.steps, "Total optimization steps");
    tr->add_option("--t-steps", ta.t_steps, "Diffusion steps of the training schedule");
    tr->add_option("--dim", ta.dim, "Hidden dimension");
    tr->add_option("--iters", ta.iters, "Recurrent iterations");
    tr->add_option("--solution-mode", ta.solution_mode, "first or uniform");
    tr->add_option("--seed", ta.seed, "Seed");
    tr->add_option("--ckpt", ta.ckpt, "Checkpoint path");
    tr->add_option("--log", ta.log, "Metrics log path (JSON lines)");
    tr->add_option("--max-vars", ta.max_vars, "Batch size in variables");
    tr->add_option("--clip", ta.clip, "Gradient clipping norm (0 disables)");
    tr->add_flag("--resume", ta.resume, "Resume from --ckpt if it exists");
    tr->add_option("--log-interval", ta.log_interval, "Steps between log records");
    tr->add_option("--ckpt-interval", ta.ckpt_interval, "Steps between checkpoints");
    tr->callback([&] { run_train(ta); });

    // sample
    SampleArgs sa;
    auto* sm = app.add_subcommand("sample", "Sample solutions for one CNF file");
    sm->add_option("--ckpt", sa.ckpt, "Model checkpoint");
    sm->add_option("--cnf", sa.cnf, "DIMACS CNF file")->required();
    sm->add_option("--samples", sa.samples, "Number of samples");
    sm->add_option("--t-steps", sa.t_steps, "Diffusion steps (default: checkpoint value)");
    sm->add_option("--seed", sa.seed, "Seed");
    sm->add_flag("--oracle", sa.oracle, "Use the exact enumeration-backed denoiser");
    sm->add_option("--cap", sa.cap, "Enumeration cap for --oracle");
    sm->callback([&] { run_sample(sa); });

    // eval
    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Evaluation metrics");
    ev->require_subcommand(1);
    auto add_common = [&](CLI::App* sub, bool needs_data) {
        sub->add_option("--ckpt", ea.ckpt, "Model checkpoint");
        if (needs_data) sub->add_option("--data", ea.data_dir, "Dataset directory")->required();
        sub->add_option("--csv", ea.csv, "CSV output path");
        sub->add_option("--t-steps", ea.t_steps, "Diffusion steps (default: checkpoint value)");
        sub->add_option("--seed", ea.seed, "Seed");
        sub->add_option("--max-batch-vars", ea.max_batch_vars, "Sampling batch size in variables");
    };
    auto* ev_acc = ev->add_subcommand("accuracy", "Percent of instances solved at any step");
    add_common(ev_acc, true);
    ev_acc->add_option("--runs", ea.runs, "Independent evaluation runs");
    ev_acc->callback([&] { run_eval_accuracy(ea); });

    auto* ev_div = ev->add_subcommand("diversity", "Percent of unique valid solutions");
    add_common(ev_div, true);
    ev_div->add_option("--samples", ea.samples, "Samples per instance");
    ev_div->add_flag("--argmax-step", ea.argmax_step,
                     "Deterministic argmax reverse steps (baseline)");
    ev_div->callback([&] { run_eval_diversity(ea); });

    auto* ev_agr = ev->add_subcommand("agreement", "Pairwise variable agreement of two samples");
    add_common(ev_agr, true);
    ev_agr->add_option("--reps", ea.reps, "Sample pairs per instance");
    ev_agr->add_option("--retry-budget", ea.retry_budget, "Draws allowed per pair");
    ev_agr->add_flag("--uniform-oracle", ea.uniform_oracle,
                     "Draw uniformly from enumerated solutions instead of the model");
    ev_agr->callback([&] { run_eval_agreement(ea); });

    auto* ev_tim = ev->add_subcommand("timing", "Per-sample wall-clock over a size sweep");
    add_common(ev_tim, false);
    ev_tim->add_option("--sizes", ea.sizes, "Variable counts to sweep")->delimiter(',');
    ev_tim->add_option("--batch", ea.batch, "Instances per size");
    ev_tim->add_option("--dim", ea.dim, "Hidden dimension when no checkpoint is given");
    ev_tim->add_option("--iters", ea.iters, "Iterations when no checkpoint is given");
    ev_tim->callback([&] { run_eval_timing(ea); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "diffsat: error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
