#pragma once

// Config files: INI-style sections [model], [potential], [disorder],
// [initial], [grid], [experiment]. Unknown sections or keys are errors.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spinchaos/model.hpp"

namespace spinchaos {

struct ExperimentConfig {
    ModelParams model;
    bool initial_given = false;

    std::string kind = "simulate"; // rate | concentration | universality |
                                   // averaged-vs-quenched | kernel-check |
                                   // u0-exact | solve-limit | simulate
    std::vector<int> n_grid;
    int n_disorder = 100;
    int n_replicas = 100;
    int n_inner = 500;
    int n_paths = 10000;
    int k_max = 1;
    std::vector<double> times;
    std::string observable = "path-average";
    double clip = 2.0;
    double tol = 1e-2;
    int max_iter = 20;
    double damping = 0.5;
    std::string dynamics = "quenched"; // for the simulate experiment

    std::uint64_t seed = 1;
    std::string out = "out";
    std::string format = "csv"; // ensemble dump format: csv | binary
    int threads = 0;
};

namespace detail {

struct IniData {
    // section -> (key -> value), insertion order preserved per section
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
};

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline IniData parse_ini(std::istream& in) {
    IniData data;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config line " + std::to_string(lineno) + ": bad section");
            section = trim(line.substr(1, line.size() - 2));
            data.sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw std::runtime_error("config line " + std::to_string(lineno) + ": key outside section");
        data.sections[section].emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return data;
}

inline double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw std::runtime_error("config: bad numeric value for " + key + ": '" + v + "'");
    }
}

inline long long to_int(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw std::runtime_error("config: bad integer value for " + key + ": '" + v + "'");
    }
}

inline std::vector<double> to_double_list(const std::string& v, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item), key));
    return out;
}

inline std::vector<int> to_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(trim(item), key)));
    return out;
}

} // namespace detail

inline PotentialKind parse_potential_kind(const std::string& v) {
    if (v == "logbarrier") return PotentialKind::LogBarrier;
    if (v == "zero") return PotentialKind::Zero;
    if (v == "custom") return PotentialKind::Custom;
    throw std::runtime_error("config: unknown potential kind '" + v + "'");
}
inline DisorderKind parse_disorder_kind(const std::string& v) {
    if (v == "gaussian") return DisorderKind::Gaussian;
    if (v == "rademacher") return DisorderKind::Rademacher;
    if (v == "uniform-unit-var") return DisorderKind::UniformUnitVar;
    if (v == "centered-beta") return DisorderKind::CenteredBeta;
    throw std::runtime_error("config: unknown disorder kind '" + v + "'");
}
inline InitialKind parse_initial_kind(const std::string& v) {
    if (v == "point-mass-zero") return InitialKind::PointMassZero;
    if (v == "uniform-symmetric") return InitialKind::UniformSymmetric;
    if (v == "iid-custom") return InitialKind::IidCustom;
    throw std::runtime_error("config: unknown initial kind '" + v + "'");
}

inline ExperimentConfig parse_config(std::istream& in) {
    using detail::to_double;
    using detail::to_double_list;
    using detail::to_int;
    using detail::to_int_list;

    const auto ini = detail::parse_ini(in);
    ExperimentConfig cfg;
    bool grid_steps_given = false;
    int grid_steps = 200;

    for (const auto& [section, kvs] : ini.sections) {
        if (section == "model") {
            for (const auto& [k, v] : kvs) {
                if (k == "beta") cfg.model.beta = to_double(v, k);
                else if (k == "big_a") cfg.model.big_a = to_double(v, k);
                else if (k == "horizon") cfg.model.horizon = to_double(v, k);
                else if (k == "n_particles") cfg.model.n_particles = static_cast<int>(to_int(v, k));
                else throw std::runtime_error("config: unknown key [model] " + k);
            }
        } else if (section == "potential") {
            for (const auto& [k, v] : kvs) {
                if (k == "kind") cfg.model.potential.kind = parse_potential_kind(v);
                else if (k == "c_lip") cfg.model.potential.c_lip = to_double(v, k);
                else if (k == "table_x") cfg.model.potential.table_x = to_double_list(v, k);
                else if (k == "dconvex") cfg.model.potential.dconvex = to_double_list(v, k);
                else if (k == "dlipschitz") cfg.model.potential.dlipschitz = to_double_list(v, k);
                else throw std::runtime_error("config: unknown key [potential] " + k);
            }
        } else if (section == "disorder") {
            for (const auto& [k, v] : kvs) {
                if (k == "kind") cfg.model.disorder.kind = parse_disorder_kind(v);
                else if (k == "t2_constant") cfg.model.disorder.t2_constant = to_double(v, k);
                else throw std::runtime_error("config: unknown key [disorder] " + k);
            }
        } else if (section == "initial") {
            cfg.initial_given = true;
            for (const auto& [k, v] : kvs) {
                if (k == "kind") cfg.model.initial.kind = parse_initial_kind(v);
                else if (k == "half_width") cfg.model.initial.half_width = to_double(v, k);
                else if (k == "chaotic_constant") cfg.model.initial.chaotic_constant = to_double(v, k);
                else if (k == "poincare_constant") cfg.model.initial.poincare_constant = to_double(v, k);
                else if (k == "probs") cfg.model.initial.probs = to_double_list(v, k);
                else if (k == "quantiles") cfg.model.initial.quantiles = to_double_list(v, k);
                else throw std::runtime_error("config: unknown key [initial] " + k);
            }
        } else if (section == "grid") {
            for (const auto& [k, v] : kvs) {
                if (k == "n_steps") { grid_steps = static_cast<int>(to_int(v, k)); grid_steps_given = true; }
                else throw std::runtime_error("config: unknown key [grid] " + k);
            }
        } else if (section == "experiment") {
            for (const auto& [k, v] : kvs) {
                if (k == "kind") cfg.kind = v;
                else if (k == "n_grid") cfg.n_grid = to_int_list(v, k);
                else if (k == "n_disorder") cfg.n_disorder = static_cast<int>(to_int(v, k));
                else if (k == "n_replicas") cfg.n_replicas = static_cast<int>(to_int(v, k));
                else if (k == "n_inner") cfg.n_inner = static_cast<int>(to_int(v, k));
                else if (k == "n_paths") cfg.n_paths = static_cast<int>(to_int(v, k));
                else if (k == "k_max") cfg.k_max = static_cast<int>(to_int(v, k));
                else if (k == "times") cfg.times = to_double_list(v, k);
                else if (k == "observable") cfg.observable = v;
                else if (k == "clip") cfg.clip = to_double(v, k);
                else if (k == "tol") cfg.tol = to_double(v, k);
                else if (k == "max_iter") cfg.max_iter = static_cast<int>(to_int(v, k));
                else if (k == "damping") cfg.damping = to_double(v, k);
                else if (k == "dynamics") cfg.dynamics = v;
                else if (k == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(v, k));
                else if (k == "out") cfg.out = v;
                else if (k == "format") cfg.format = v;
                else if (k == "threads") cfg.threads = static_cast<int>(to_int(v, k));
                else throw std::runtime_error("config: unknown key [experiment] " + k);
            }
        } else {
            throw std::runtime_error("config: unknown section [" + section + "]");
        }
    }

    if (!cfg.initial_given)
        cfg.model.initial = default_initial_law(cfg.model.potential, cfg.model.big_a);
    cfg.model.grid = TimeGrid(cfg.model.horizon, grid_steps);
    (void)grid_steps_given;

    // replica-count floor for the statistical experiments
    const bool statistical = cfg.kind == "rate" || cfg.kind == "concentration" ||
                             cfg.kind == "universality" || cfg.kind == "averaged-vs-quenched";
    if (statistical && cfg.n_replicas < 100)
        throw std::runtime_error("config: statistical experiments need n_replicas >= 100");
    for (std::size_t i = 0; i + 1 < cfg.n_grid.size(); ++i)
        if (cfg.n_grid[i] >= cfg.n_grid[i + 1])
            throw std::runtime_error("config: n_grid must be strictly increasing");
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path);
    return parse_config(f);
}

} // namespace spinchaos
