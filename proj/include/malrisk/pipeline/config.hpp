#pragma once

// Run configuration: key = value text files plus command-line overrides.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "malrisk/caviar.hpp"
#include "malrisk/em.hpp"
#include "malrisk/error.hpp"
#include "malrisk/sim.hpp"

namespace malrisk::pipeline {

enum class WindowPolicy { Rolling, Expanding };

struct ModelSpec {
    QuantileKind quantile = QuantileKind::AS;
    EsKind es = EsKind::Multiplicative;
    ModelKind kind() const { return {quantile, es}; }
    std::string label() const { return std::string(to_string(quantile)) + "-" + to_string(es); }
};

struct RunConfig {
    std::filesystem::path input;
    std::vector<std::string> columns;
    std::vector<double> tau{0.05};
    ModelSpec model;
    std::vector<ModelSpec> compare;  // extra models for backtest comparisons
    WindowPolicy window = WindowPolicy::Rolling;
    std::size_t window_width = 0;  // 0: T - out_of_sample
    std::size_t out_of_sample = 368;
    std::size_t refit_every = 4;
    std::filesystem::path output_dir = "malrisk_out";
    std::uint64_t seed = 1;
    double tau_tilde = 0.05;
    bool percent_returns = true;
    int threads = 0;  // 0: hardware concurrency
    // EM overrides
    int n_starts = 5;
    double tol = 1e-5;
    int max_iterations = 500;
    // simulation
    std::size_t sim_T = 1500;
    std::size_t sim_p = 3;
    std::string sim_family = "normal";
    double sim_df = 5.0;
    int sim_B = 0;  // > 0 runs a Monte Carlo study
    int sim_replication = 0;

    /// Quantile levels expanded to p assets (a single value is broadcast).
    QuantileLevels levels(std::size_t p) const {
        if (tau.size() == 1) return QuantileLevels::constant(p, tau[0]);
        if (tau.size() != p)
            throw ValidationError("config: tau has " + std::to_string(tau.size()) + " entries for " + std::to_string(p) +
                                  " assets");
        return QuantileLevels(tau);
    }

    EMConfig em() const {
        EMConfig c;
        c.n_starts = n_starts;
        c.tol = tol;
        c.max_iterations = max_iterations;
        c.seed = seed;
        return c;
    }

    void validate() const {
        if (tau.empty()) throw ValidationError("config: tau is empty");
        for (double t : tau)
            if (!(t > 0.0 && t < 0.5)) throw ValidationError("config: tau entries must lie in (0, 0.5)");
        if (!(tau_tilde > 0.0 && tau_tilde <= 0.5)) throw ValidationError("config: tau_tilde must lie in (0, 0.5]");
        if (out_of_sample < 1) throw ValidationError("config: oos must be positive");
        if (refit_every < 1) throw ValidationError("config: refit_every must be positive");
        if (n_starts < 1) throw ValidationError("config: n_starts must be positive");
        if (!(tol > 0.0)) throw ValidationError("config: tol must be positive");
        if (max_iterations < 1) throw ValidationError("config: max_iterations must be positive");
        if (sim_p < 1) throw ValidationError("config: sim_p must be positive");
        if (threads < 0) throw ValidationError("config: threads must be non-negative");
    }
};

namespace detail {

inline std::string trim_copy(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= v.size()) {
        const auto pos = v.find(',', start);
        const std::string item = trim_copy(v.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (!item.empty()) out.push_back(item);
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ValidationError("config: cannot parse " + key + " = '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, std::string v) {
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ValidationError("config: " + key + " must be true or false, got '" + v + "'");
}

inline ModelSpec parse_model(const std::string& s) {
    const auto dash = s.find('-');
    if (dash == std::string::npos) throw ValidationError("config: model '" + s + "' must look like SPEC-ES, e.g. as-mult");
    return {parse_quantile_kind(s.substr(0, dash)), parse_es_kind(s.substr(dash + 1))};
}

}  // namespace detail

/// Applies one key/value pair; unknown keys are validation errors.
inline void apply_setting(RunConfig& c, const std::string& key_in, const std::string& value_in) {
    const std::string key = detail::trim_copy(key_in), v = detail::trim_copy(value_in);
    using detail::parse_number;
    try {
        if (key == "input") c.input = v;
        else if (key == "columns") c.columns = detail::split_list(v);
        else if (key == "tau") {
            c.tau.clear();
            for (const auto& s : detail::split_list(v)) c.tau.push_back(parse_number<double>(key, s));
        } else if (key == "spec") c.model.quantile = parse_quantile_kind(v);
        else if (key == "es") c.model.es = parse_es_kind(v);
        else if (key == "compare") {
            c.compare.clear();
            for (const auto& s : detail::split_list(v)) c.compare.push_back(detail::parse_model(s));
        } else if (key == "window") {
            if (v == "rolling") c.window = WindowPolicy::Rolling;
            else if (v == "expanding") c.window = WindowPolicy::Expanding;
            else throw ValidationError("config: window must be rolling or expanding, got '" + v + "'");
        } else if (key == "window_width") c.window_width = parse_number<std::size_t>(key, v);
        else if (key == "oos") c.out_of_sample = parse_number<std::size_t>(key, v);
        else if (key == "refit_every") c.refit_every = parse_number<std::size_t>(key, v);
        else if (key == "output") c.output_dir = v;
        else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
        else if (key == "tau_tilde") c.tau_tilde = parse_number<double>(key, v);
        else if (key == "percent_returns") c.percent_returns = detail::parse_bool(key, v);
        else if (key == "threads") c.threads = parse_number<int>(key, v);
        else if (key == "n_starts") c.n_starts = parse_number<int>(key, v);
        else if (key == "tol") c.tol = parse_number<double>(key, v);
        else if (key == "max_iterations") c.max_iterations = parse_number<int>(key, v);
        else if (key == "sim_T") c.sim_T = parse_number<std::size_t>(key, v);
        else if (key == "sim_p") c.sim_p = parse_number<std::size_t>(key, v);
        else if (key == "sim_family") {
            parse_error_family(v);
            c.sim_family = v;
        } else if (key == "sim_df") c.sim_df = parse_number<double>(key, v);
        else if (key == "sim_B") c.sim_B = parse_number<int>(key, v);
        else if (key == "sim_replication") c.sim_replication = parse_number<int>(key, v);
        else throw ValidationError("config: unknown key '" + key + "'");
    } catch (const DomainError& e) {
        throw ValidationError(std::string("config: ") + key + ": " + e.what());
    }
}

/// Reads `key = value` lines; `#` starts a comment.
inline void load_config_file(RunConfig& c, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path.string());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (detail::trim_copy(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError(path.string() + ":" + std::to_string(n) + ": expected key = value");
        try {
            apply_setting(c, line.substr(0, eq), line.substr(eq + 1));
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

/// Flat key/value echo of the configuration, for the run manifest.
inline std::map<std::string, std::string> describe(const RunConfig& c) {
    auto join = [](const auto& xs, auto f) {
        std::string s;
        for (const auto& x : xs) s += (s.empty() ? "" : ",") + f(x);
        return s;
    };
    auto num = [](double x) {
        char b[32];
        std::snprintf(b, sizeof b, "%.10g", x);
        return std::string(b);
    };
    std::map<std::string, std::string> m;
    m["input"] = c.input.string();
    m["columns"] = join(c.columns, [](const std::string& s) { return s; });
    m["tau"] = join(c.tau, num);
    m["spec"] = to_string(c.model.quantile);
    m["es"] = to_string(c.model.es);
    m["compare"] = join(c.compare, [](const ModelSpec& s) { return s.label(); });
    m["window"] = c.window == WindowPolicy::Rolling ? "rolling" : "expanding";
    m["window_width"] = std::to_string(c.window_width);
    m["oos"] = std::to_string(c.out_of_sample);
    m["refit_every"] = std::to_string(c.refit_every);
    m["seed"] = std::to_string(c.seed);
    m["tau_tilde"] = num(c.tau_tilde);
    m["percent_returns"] = c.percent_returns ? "true" : "false";
    m["n_starts"] = std::to_string(c.n_starts);
    m["tol"] = num(c.tol);
    m["max_iterations"] = std::to_string(c.max_iterations);
    m["sim_T"] = std::to_string(c.sim_T);
    m["sim_p"] = std::to_string(c.sim_p);
    m["sim_family"] = c.sim_family;
    m["sim_df"] = num(c.sim_df);
    m["sim_B"] = std::to_string(c.sim_B);
    m["sim_replication"] = std::to_string(c.sim_replication);
    return m;
}

}  // namespace malrisk::pipeline
