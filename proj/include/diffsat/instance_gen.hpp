#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "diffsat/cnf.hpp"
#include "diffsat/common.hpp"

namespace diffsat {

// Clause count at the 3-SAT satisfiability threshold, rounded to the nearest
// integer with ties up.
inline int threshold_clause_count(int n) {
    if (n < 3) throw Error("threshold_clause_count requires n >= 3");
    double raw = 4.258 * n + 58.26 * std::pow(static_cast<double>(n), -2.0 / 3.0);
    return static_cast<int>(std::floor(raw + 0.5));
}

namespace detail {

inline CnfFormula gen_3sat_m(int n, int m, Rng& rng) {
    // 8 sign patterns per 3-subset of variables; asking for more distinct
    // clauses than exist would loop forever.
    std::int64_t distinct =
        8ll * n * (n - 1) * (n - 2) / 6;
    if (m > distinct)
        throw Error("requested " + std::to_string(m) + " clauses but only " +
                    std::to_string(distinct) + " distinct 3-literal clauses exist for n = " +
                    std::to_string(n));
    CnfFormula f;
    f.num_vars = n;
    std::set<std::array<int, 3>> seen;  // sorted signed-literal keys
    while (f.num_clauses() < m) {
        int v[3];
        v[0] = static_cast<int>(rng.below(n));
        do v[1] = static_cast<int>(rng.below(n)); while (v[1] == v[0]);
        do v[2] = static_cast<int>(rng.below(n)); while (v[2] == v[0] || v[2] == v[1]);
        std::array<int, 3> key;
        for (int i = 0; i < 3; ++i) {
            bool neg = rng.bernoulli(0.5);
            key[i] = neg ? -(v[i] + 1) : v[i] + 1;
        }
        std::sort(key.begin(), key.end(),
                  [](int a, int b) { return std::abs(a) < std::abs(b); });
        if (!seen.insert(key).second) continue;  // duplicate clause, resample
        Clause c;
        for (int d : key) c.push_back(Lit::from_dimacs(d));
        f.clauses.push_back(std::move(c));
    }
    return f;
}

}  // namespace detail

// Random 3-SAT at the satisfiability threshold. Deterministic in the seed.
inline CnfFormula gen_3sat_threshold(int n, std::uint64_t seed) {
    if (n < 3) throw Error("gen_3sat requires n >= 3");
    Rng rng(mix64(seed));
    return detail::gen_3sat_m(n, threshold_clause_count(n), rng);
}

// Random 3-SAT with a fixed clause/variable ratio.
inline CnfFormula gen_3sat_ratio(int n, double ratio, std::uint64_t seed) {
    if (n < 3) throw Error("gen_3sat requires n >= 3");
    int m = static_cast<int>(std::floor(ratio * n + 0.5));
    if (m < 1) throw Error("ratio * n must be >= 1");
    Rng rng(mix64(seed));
    return detail::gen_3sat_m(n, m, rng);
}

// ---------------------------------------------------------------------------
// 3-Clique: Erdos-Renyi graphs encoded as "place one vertex in each of three
// slots; slot vertices must be pairwise adjacent".
// ---------------------------------------------------------------------------

struct GraphSpec {
    int v = 0;
    double p = 0.0;
    std::vector<std::pair<int, int>> edges;  // 0-based, first < second

    bool has_edge(int a, int b) const {
        if (a > b) std::swap(a, b);
        return std::binary_search(edges.begin(), edges.end(), std::make_pair(a, b));
    }

    int count_triangles() const {
        int count = 0;
        for (int a = 0; a < v; ++a)
            for (int b = a + 1; b < v; ++b) {
                if (!has_edge(a, b)) continue;
                for (int c = b + 1; c < v; ++c)
                    if (has_edge(a, c) && has_edge(b, c)) ++count;
            }
        return count;
    }
};

// Edge probability tuned so that a graph has only a few expected triangles.
inline double clique_edge_probability(int v) {
    if (v < 4) throw Error("clique_edge_probability requires v >= 4");
    double denom = static_cast<double>(v) * (2.0 - 3.0 * v + static_cast<double>(v) * v);
    double p = std::cbrt(3.0 / denom);
    return std::min(p, 1.0);
}

inline GraphSpec gen_er_graph(int v, std::uint64_t seed) {
    GraphSpec g;
    g.v = v;
    g.p = clique_edge_probability(v);
    Rng rng(mix64(seed ^ 0xE5D6A9E1B0C4F372ull));
    for (int a = 0; a < v; ++a)
        for (int b = a + 1; b < v; ++b)
            if (rng.bernoulli(g.p)) g.edges.emplace_back(a, b);
    return g;
}

// Slot-major mapping between (slot, vertex) and SAT variables 0..3v-1.
struct CliqueEncodingMap {
    int v = 0;

    int num_vars() const { return 3 * v; }
    int var_of(int slot, int vertex) const { return slot * v + vertex; }
    int slot_of(int var) const { return var / v; }
    int vertex_of(int var) const { return var % v; }
};

// Clauses: (a) each slot holds some vertex; (b) each slot holds at most one
// vertex; (c) vertices in distinct slots are distinct and adjacent.
inline std::pair<CnfFormula, CliqueEncodingMap> encode_3clique(const GraphSpec& g) {
    CliqueEncodingMap map{g.v};
    CnfFormula f;
    f.num_vars = map.num_vars();
    for (int slot = 0; slot < 3; ++slot) {
        Clause at_least_one;
        for (int u = 0; u < g.v; ++u)
            at_least_one.push_back(Lit::make(map.var_of(slot, u), false));
        f.clauses.push_back(std::move(at_least_one));
    }
    for (int slot = 0; slot < 3; ++slot)
        for (int u = 0; u < g.v; ++u)
            for (int w = u + 1; w < g.v; ++w)
                f.clauses.push_back({Lit::make(map.var_of(slot, u), true),
                                     Lit::make(map.var_of(slot, w), true)});
    for (int si = 0; si < 3; ++si)
        for (int sj = si + 1; sj < 3; ++sj)
            for (int u = 0; u < g.v; ++u)
                for (int w = 0; w < g.v; ++w) {
                    if (u != w && g.has_edge(u, w)) continue;
                    f.clauses.push_back({Lit::make(map.var_of(si, u), true),
                                         Lit::make(map.var_of(sj, w), true)});
                }
    return {std::move(f), map};
}

// Recovers the slot vertices from a satisfying assignment (0-based vertices).
inline std::array<int, 3> decode_clique(const CliqueEncodingMap& map, const Assignment& a) {
    if (a.size() != map.num_vars()) throw Error("assignment length mismatch");
    std::array<int, 3> triple{};
    for (int slot = 0; slot < 3; ++slot) {
        int found = -1;
        for (int u = 0; u < map.v; ++u) {
            if (!a.value(map.var_of(slot, u))) continue;
            if (found >= 0)
                throw Error("slot " + std::to_string(slot + 1) + " holds multiple vertices");
            found = u;
        }
        if (found < 0) throw Error("slot " + std::to_string(slot + 1) + " holds no vertex");
        triple[slot] = found;
    }
    return triple;
}

}  // namespace diffsat
