#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffsat/cnf.hpp"
#include "diffsat/common.hpp"

namespace diffsat {

// One on-disk instance: "<stem>.cnf" plus an optional "<stem>.solutions"
// sibling produced by enumeration (or supplied externally).
struct LoadedInstance {
    std::string stem;  // file name without extension
    CnfFormula formula;
    std::vector<Assignment> solutions;
    bool has_solutions = false;
    bool truncated = false;
};

inline std::string instance_stem(const std::string& family, int size, int index) {
    return family + "_" + std::to_string(size) + "_" + std::to_string(index);
}

inline void write_instance_files(const std::filesystem::path& dir, const std::string& stem,
                                 const CnfFormula& f, const std::vector<Assignment>* solutions,
                                 bool truncated) {
    std::filesystem::create_directories(dir);
    write_dimacs_file(f, (dir / (stem + ".cnf")).string());
    if (solutions)
        write_solutions_file(*solutions, f.num_vars, (dir / (stem + ".solutions")).string(),
                             truncated);
}

// Loads every *.cnf in the directory, sorted by file name so that dataset
// order is stable across platforms.
inline std::vector<LoadedInstance> load_dataset_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw Error("dataset directory not found: " + dir.string());
    std::vector<std::filesystem::path> cnfs;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".cnf")
            cnfs.push_back(entry.path());
    std::sort(cnfs.begin(), cnfs.end(),
              [](const auto& a, const auto& b) { return a.filename() < b.filename(); });

    std::vector<LoadedInstance> out;
    out.reserve(cnfs.size());
    for (const auto& path : cnfs) {
        LoadedInstance inst;
        inst.stem = path.stem().string();
        inst.formula = parse_dimacs_file(path.string());
        auto sol_path = path;
        sol_path.replace_extension(".solutions");
        if (std::filesystem::exists(sol_path)) {
            inst.solutions =
                parse_solutions_file(sol_path.string(), inst.formula.num_vars, &inst.truncated);
            inst.has_solutions = true;
        }
        out.push_back(std::move(inst));
    }
    return out;
}

// Manifest: one JSON file describing how a dataset directory was produced.
struct ManifestEntry {
    std::string file;
    int vars = 0;
    int clauses = 0;
    std::int64_t solutions = -1;  // -1: not enumerated
    bool truncated = false;
};

inline void write_manifest(const std::filesystem::path& dir, const std::string& family,
                           std::uint64_t seed, const std::string& mode,
                           const std::vector<ManifestEntry>& entries) {
    nlohmann::json j;
    j["family"] = family;
    j["seed"] = seed;
    j["mode"] = mode;
    j["count"] = entries.size();
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json je;
        je["file"] = e.file;
        je["vars"] = e.vars;
        je["clauses"] = e.clauses;
        if (e.solutions >= 0) {
            je["solutions"] = e.solutions;
            je["truncated"] = e.truncated;
        }
        j["entries"].push_back(std::move(je));
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw Error("cannot write manifest in " + dir.string());
    out << j.dump(2) << "\n";
}

}  // namespace diffsat
