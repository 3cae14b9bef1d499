#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "diffsat/common.hpp"

namespace diffsat {

// Literal over 0-based variables, encoded minisat-style as 2*var + sign bit.
// DIMACS 1-based signed integers appear only at I/O boundaries.
struct Lit {
    int code = -1;

    static Lit make(int var, bool negated) { return Lit{var * 2 + (negated ? 1 : 0)}; }

    static Lit from_dimacs(int d) {
        return make(std::abs(d) - 1, d < 0);
    }

    int var() const { return code >> 1; }
    bool negated() const { return code & 1; }
    int polarity() const { return negated() ? -1 : +1; }
    int to_dimacs() const { return negated() ? -(var() + 1) : var() + 1; }
    Lit operator~() const { return Lit{code ^ 1}; }

    auto operator<=>(const Lit&) const = default;
};

using Clause = std::vector<Lit>;

struct Assignment {
    std::vector<std::uint8_t> values;

    Assignment() = default;
    explicit Assignment(int n) : values(n, 0) {}

    int size() const { return static_cast<int>(values.size()); }
    bool value(int var) const { return values[var] != 0; }
    void set(int var, bool v) { values[var] = v ? 1 : 0; }

    bool operator==(const Assignment&) const = default;
    auto operator<=>(const Assignment&) const = default;
};

// Canonicalizes one clause in place: duplicate literals are dropped, a
// tautological +-pair is an error, literal order is otherwise preserved.
inline void canonicalize_clause(Clause& c, int num_vars, int line = 0) {
    if (c.empty()) throw ParseError("empty clause", line);
    Clause out;
    for (Lit l : c) {
        if (l.var() < 0 || l.var() >= num_vars)
            throw ParseError("literal out of range: " + std::to_string(l.to_dimacs()), line);
        bool dup = false;
        for (Lit o : out) {
            if (o == l) { dup = true; break; }
            if (o == ~l)
                throw ParseError("tautological clause on variable " + std::to_string(l.var() + 1), line);
        }
        if (!dup) out.push_back(l);
    }
    c = std::move(out);
}

struct CnfFormula {
    int num_vars = 0;
    std::vector<Clause> clauses;

    int num_clauses() const { return static_cast<int>(clauses.size()); }

    std::size_t num_literals() const {
        std::size_t n = 0;
        for (const auto& c : clauses) n += c.size();
        return n;
    }

    bool operator==(const CnfFormula&) const = default;
};

// Builds a formula from DIMACS-style signed literal lists; canonicalizes.
inline CnfFormula make_formula(int num_vars, const std::vector<std::vector<int>>& dimacs_clauses) {
    if (num_vars < 0) throw Error("negative variable count");
    CnfFormula f;
    f.num_vars = num_vars;
    for (const auto& dc : dimacs_clauses) {
        Clause c;
        for (int d : dc) {
            if (d == 0) throw Error("literal 0 inside clause");
            c.push_back(Lit::from_dimacs(d));
        }
        canonicalize_clause(c, num_vars);
        f.clauses.push_back(std::move(c));
    }
    return f;
}

struct EvalResult {
    bool satisfied = false;
    int unsat_count = 0;
};

inline EvalResult evaluate(const CnfFormula& f, const Assignment& a) {
    if (a.size() != f.num_vars)
        throw Error("assignment length " + std::to_string(a.size()) +
                    " does not match variable count " + std::to_string(f.num_vars));
    EvalResult r;
    for (const auto& c : f.clauses) {
        bool sat = false;
        for (Lit l : c) {
            if (a.value(l.var()) != l.negated()) { sat = true; break; }
        }
        if (!sat) r.unsat_count++;
    }
    r.satisfied = (r.unsat_count == 0);
    return r;
}

// Bipartite variable-clause adjacency with polarity-typed edges.
struct FactorGraph {
    struct Edge {
        int var;
        int clause;
        int polarity;  // +1 positive literal, -1 negated
        bool operator==(const Edge&) const = default;
    };

    int num_vars = 0;
    int num_clauses = 0;
    std::vector<Edge> edges;
};

inline FactorGraph build_factor_graph(const CnfFormula& f) {
    FactorGraph g;
    g.num_vars = f.num_vars;
    g.num_clauses = f.num_clauses();
    g.edges.reserve(f.num_literals());
    for (int ci = 0; ci < f.num_clauses(); ++ci)
        for (Lit l : f.clauses[ci])
            g.edges.push_back({l.var(), ci, l.polarity()});
    return g;
}

// ---------------------------------------------------------------------------
// DIMACS CNF
// ---------------------------------------------------------------------------

inline CnfFormula parse_dimacs(std::istream& in) {
    CnfFormula f;
    bool have_header = false;
    int declared_clauses = 0;
    int line_no = 0;
    Clause current;
    int current_start_line = 0;

    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tok;
        if (!(ls >> tok)) continue;  // blank
        if (tok == "c" || (tok.size() > 1 && tok[0] == 'c')) continue;
        if (tok == "p") {
            if (have_header) throw ParseError("duplicate header", line_no);
            std::string fmt;
            int n = -1, m = -1;
            if (!(ls >> fmt >> n >> m) || fmt != "cnf" || n < 0 || m < 0)
                throw ParseError("malformed header, expected 'p cnf <vars> <clauses>'", line_no);
            std::string rest;
            if (ls >> rest) throw ParseError("trailing tokens after header", line_no);
            f.num_vars = n;
            declared_clauses = m;
            have_header = true;
            continue;
        }
        if (!have_header) throw ParseError("clause before 'p cnf' header", line_no);
        // clause tokens; a clause may span lines and ends at literal 0
        ls.clear();
        ls.str(line);
        int d;
        while (ls >> d) {
            if (d == 0) {
                if (current.empty()) throw ParseError("empty clause", line_no);
                canonicalize_clause(current, f.num_vars, current_start_line);
                f.clauses.push_back(std::move(current));
                current.clear();
            } else {
                if (std::abs(d) > f.num_vars)
                    throw ParseError("literal out of range: " + std::to_string(d), line_no);
                if (current.empty()) current_start_line = line_no;
                current.push_back(Lit::from_dimacs(d));
            }
        }
        if (!ls.eof()) throw ParseError("invalid token in clause", line_no);
    }
    if (!have_header) throw ParseError("missing 'p cnf' header", line_no);
    if (!current.empty())
        throw ParseError("unterminated final clause (missing 0)", current_start_line);
    if (f.num_clauses() != declared_clauses)
        throw ParseError("clause count " + std::to_string(f.num_clauses()) +
                             " does not match declared " + std::to_string(declared_clauses),
                         line_no);
    return f;
}

inline CnfFormula parse_dimacs(const std::string& text) {
    std::istringstream in(text);
    return parse_dimacs(in);
}

inline CnfFormula parse_dimacs_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return parse_dimacs(in);
}

inline void write_dimacs(const CnfFormula& f, std::ostream& out) {
    out << "p cnf " << f.num_vars << ' ' << f.num_clauses() << '\n';
    for (const auto& c : f.clauses) {
        for (Lit l : c) out << l.to_dimacs() << ' ';
        out << "0\n";
    }
}

inline std::string write_dimacs(const CnfFormula& f) {
    std::ostringstream out;
    write_dimacs(f, out);
    return out.str();
}

inline void write_dimacs_file(const CnfFormula& f, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    write_dimacs(f, out);
}

// ---------------------------------------------------------------------------
// Solution files: one assignment per line as signed literals covering every
// variable, 0-terminated; 'c' lines are ignored.
// ---------------------------------------------------------------------------

inline void write_solutions(std::span<const Assignment> solutions, int num_vars,
                            std::ostream& out, bool truncated = false) {
    if (truncated) out << "c truncated\n";
    for (const auto& a : solutions) {
        if (a.size() != num_vars) throw Error("solution length mismatch");
        for (int v = 0; v < num_vars; ++v) out << (a.value(v) ? v + 1 : -(v + 1)) << ' ';
        out << "0\n";
    }
}

inline std::vector<Assignment> parse_solutions(std::istream& in, int num_vars,
                                               bool* truncated = nullptr) {
    if (truncated) *truncated = false;
    std::vector<Assignment> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string first;
        if (!(ls >> first)) continue;
        if (first[0] == 'c') {
            std::string word;
            if (truncated && (ls >> word) && word == "truncated") *truncated = true;
            continue;
        }
        ls.clear();
        ls.seekg(0);
        Assignment a(num_vars);
        std::vector<bool> seen(num_vars, false);
        int d;
        bool terminated = false;
        while (ls >> d) {
            if (terminated) throw ParseError("tokens after terminating 0", line_no);
            if (d == 0) { terminated = true; continue; }
            int v = std::abs(d) - 1;
            if (v >= num_vars) throw ParseError("literal out of range: " + std::to_string(d), line_no);
            if (seen[v]) throw ParseError("variable " + std::to_string(v + 1) + " repeated", line_no);
            seen[v] = true;
            a.set(v, d > 0);
        }
        if (!ls.eof()) throw ParseError("invalid token in solution", line_no);
        if (!terminated) throw ParseError("missing terminating 0", line_no);
        if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }))
            throw ParseError("solution does not cover all variables", line_no);
        out.push_back(std::move(a));
    }
    return out;
}

inline std::vector<Assignment> parse_solutions_file(const std::string& path, int num_vars,
                                                    bool* truncated = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return parse_solutions(in, num_vars, truncated);
}

inline void write_solutions_file(std::span<const Assignment> solutions, int num_vars,
                                 const std::string& path, bool truncated = false) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    write_solutions(solutions, num_vars, out, truncated);
}

}  // namespace diffsat
