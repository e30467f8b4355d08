#pragma once

// Report tables (scores, backtests, model comparisons, portfolio runs) and
// their emission as CSV files plus a JSON run manifest.

#include <Eigen/Dense>
#include <boost/version.hpp>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "malrisk/error.hpp"
#include "malrisk/mal.hpp"
#include "malrisk/pipeline/config.hpp"
#include "malrisk/pipeline/io.hpp"
#include "malrisk/pipeline/rolling.hpp"
#include "malrisk/portfolio.hpp"
#include "malrisk/scoring.hpp"
#include "malrisk/version.hpp"

namespace malrisk::pipeline {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row) {
        if (row.size() != header.size()) throw Error("Table: row width does not match header");
        rows.push_back(std::move(row));
    }
    bool empty() const { return rows.empty(); }
};

inline void write_csv(const std::filesystem::path& path, const Table& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    if (!out) throw Error("write failed for " + path.string());
}

inline std::string fmt(double v) { return format_number(v); }
inline std::string fmt(bool b) { return b ? "1" : "0"; }

// ---- forecast tables ----

inline Table forecast_table(const RollingResult& r) {
    Table t{{"model", "t", "date", "asset", "var", "es", "y", "hit"}, {}};
    for (std::size_t i = 0; i < r.periods(); ++i)
        for (std::size_t j = 0; j < r.assets.size(); ++j) {
            const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
            t.add({r.model.label(), std::to_string(r.index[i]), r.dates[i], r.assets[j], fmt(r.var(a, b)),
                   fmt(r.es(a, b)), fmt(r.y(a, b)), r.y(a, b) < r.var(a, b) ? "1" : "0"});
        }
    return t;
}

/// Long format for VaR/ES path figures.
inline Table path_long_table(const RollingResult& r) {
    Table t{{"model", "date", "asset", "series", "value"}, {}};
    for (std::size_t i = 0; i < r.periods(); ++i)
        for (std::size_t j = 0; j < r.assets.size(); ++j) {
            const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
            t.add({r.model.label(), r.dates[i], r.assets[j], "var", fmt(r.var(a, b))});
            t.add({r.model.label(), r.dates[i], r.assets[j], "es", fmt(r.es(a, b))});
            t.add({r.model.label(), r.dates[i], r.assets[j], "y", fmt(r.y(a, b))});
        }
    return t;
}

// ---- scores ----

struct ScoreSeries {
    std::vector<double> s_mal;                 // joint
    std::vector<double> s_al_sum;              // joint
    std::vector<std::vector<double>> s_al;     // per asset
    std::vector<std::vector<double>> s_fzn;    // per asset
    std::vector<std::vector<double>> s_fz0;    // per asset
};

inline ScoreSeries score_series(const RollingResult& r) {
    const std::size_t p = r.assets.size();
    ScoreSeries s;
    s.s_al.assign(p, {});
    s.s_fzn.assign(p, {});
    s.s_fz0.assign(p, {});
    const MALConstraints con = MALConstraints::from(r.tau);
    const auto recs = r.records();
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const Eigen::MatrixXd sigma = assemble_sigma(r.psi[i], con);
        s.s_mal.push_back(s_mal(recs[i], sigma));
        s.s_al_sum.push_back(s_al_sum(recs[i]));
        for (std::size_t j = 0; j < p; ++j) {
            const auto b = static_cast<Eigen::Index>(j);
            const double q = recs[i].var[b], e = recs[i].es[b], y = recs[i].y[b];
            s.s_al[j].push_back(s_al(q, e, y, r.tau[j]));
            s.s_fzn[j].push_back(s_fzn(q, e, y, r.tau[j]));
            s.s_fz0[j].push_back(s_fz0(q, e, y, r.tau[j]));
        }
    }
    return s;
}

inline double mean_of(const std::vector<double>& v) {
    double a = 0.0;
    for (double x : v) a += x;
    return v.empty() ? 0.0 : a / static_cast<double>(v.size());
}

inline Table score_table(const RollingResult& r, const ScoreSeries& s) {
    Table t{{"model", "asset", "rule", "mean_score", "n"}, {}};
    const std::string n = std::to_string(r.periods());
    t.add({r.model.label(), "joint", "S_MAL", fmt(mean_of(s.s_mal)), n});
    t.add({r.model.label(), "joint", "S_AL_sum", fmt(mean_of(s.s_al_sum)), n});
    for (std::size_t j = 0; j < r.assets.size(); ++j) {
        t.add({r.model.label(), r.assets[j], "S_AL", fmt(mean_of(s.s_al[j])), n});
        t.add({r.model.label(), r.assets[j], "S_FZN", fmt(mean_of(s.s_fzn[j])), n});
        t.add({r.model.label(), r.assets[j], "S_FZ0", fmt(mean_of(s.s_fz0[j])), n});
    }
    return t;
}

// ---- backtests ----

inline std::vector<std::pair<std::string, TestReport>> backtests(const RollingResult& r) {
    std::vector<std::pair<std::string, TestReport>> out;
    for (std::size_t j = 0; j < r.assets.size(); ++j) {
        const auto b = static_cast<Eigen::Index>(j);
        const std::vector<double> y(r.y.col(b).data(), r.y.col(b).data() + r.y.rows());
        const std::vector<double> q(r.var.col(b).data(), r.var.col(b).data() + r.var.rows());
        const std::vector<double> d(r.delta.col(b).data(), r.delta.col(b).data() + r.delta.rows());
        const auto hits = hit_sequence(y, q);
        const double tau = r.tau[j];
        // a test that cannot run on this many periods is reported as degenerate
        auto guarded = [&](const char* name, auto&& run) {
            try {
                out.emplace_back(r.assets[j], run());
            } catch (const DomainError&) {
                TestReport rep;
                rep.name = name;
                rep.statistic = std::numeric_limits<double>::quiet_NaN();
                rep.degenerate = true;
                out.emplace_back(r.assets[j], rep);
            }
        };
        guarded("LR_uc", [&] { return lr_uc(hits, tau); });
        guarded("LR_cc", [&] { return lr_cc(hits, tau); });
        guarded("DQ", [&] { return dq_test(hits, q, tau); });
        guarded("U_ES", [&] { return es_tests(y, q, d, tau).u_es; });
        guarded("C_ES", [&] { return es_tests(y, q, d, tau).c_es; });
    }
    return out;
}

inline Table backtest_table(const RollingResult& r) {
    Table t{{"model", "asset", "test", "statistic", "critical_value", "p_value", "reject", "df", "degenerate",
             "low_power", "hit_rate"},
            {}};
    for (const auto& [asset, rep] : backtests(r)) {
        std::size_t j = 0;
        while (r.assets[j] != asset) ++j;
        const auto b = static_cast<Eigen::Index>(j);
        const double hr = (r.y.col(b).array() < r.var.col(b).array()).cast<double>().mean();
        t.add({r.model.label(), asset, rep.name, fmt(rep.statistic), fmt(rep.critical_value),
               rep.p_value ? fmt(*rep.p_value) : "NA", fmt(rep.reject), std::to_string(rep.df), fmt(rep.degenerate),
               fmt(rep.low_power), fmt(hr)});
    }
    return t;
}

// ---- model comparison ----

struct Comparison {
    Table dm;
    Table differential;  // long format, one row per period and pair
};

/// Pairwise Diebold-Mariano on the joint MAL score.
inline Comparison compare_models(const std::vector<RollingResult>& runs, const std::vector<ScoreSeries>& scores) {
    Comparison c{{{"model_a", "model_b", "score", "mean_diff", "statistic", "p_value", "reject", "degenerate"}, {}},
                 {{"date", "pair", "score", "value"}, {}}};
    for (std::size_t a = 0; a < runs.size(); ++a)
        for (std::size_t b = 0; b < runs.size(); ++b) {
            if (a == b) continue;
            const TestReport rep = dm_test(scores[a].s_mal, scores[b].s_mal);
            std::vector<double> d(scores[a].s_mal.size());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = scores[a].s_mal[i] - scores[b].s_mal[i];
            c.dm.add({runs[a].model.label(), runs[b].model.label(), "S_MAL", fmt(mean_of(d)), fmt(rep.statistic),
                      rep.p_value ? fmt(*rep.p_value) : "NA", fmt(rep.reject), fmt(rep.degenerate)});
            if (a < b) {
                const std::string pair = runs[a].model.label() + " vs " + runs[b].model.label();
                for (std::size_t i = 0; i < d.size(); ++i) c.differential.add({runs[a].dates[i], pair, "S_MAL", fmt(d[i])});
            }
        }
    return c;
}

// ---- portfolio ----

struct PortfolioPeriod {
    std::string date;
    Eigen::VectorXd weights;
    double tau_star = 0.0;
    double var = 0.0, es = 0.0;
    double realized = 0.0;
    double wealth = 1.0;
    bool feasible = true;
    std::string message;
};

struct PortfolioRun {
    std::vector<PortfolioPeriod> periods;
    PerformanceStats stats;
    int infeasible = 0;
};

/// Period-by-period SMV allocation; infeasible periods keep the previous
/// weights (equal weights before the first success).
inline PortfolioRun portfolio_run(const RollingResult& r, double tau_tilde, bool percent_returns,
                                  const SmvOptions& opt = {}) {
    const auto p = static_cast<Eigen::Index>(r.assets.size());
    PortfolioRun run;
    std::optional<Eigen::VectorXd> prev;
    double wealth = 1.0;
    std::vector<double> realized;
    Eigen::MatrixXd wh(static_cast<Eigen::Index>(r.periods()), p);
    for (std::size_t i = 0; i < r.periods(); ++i) {
        const MALParams st = r.state(i);
        PortfolioPeriod pp;
        pp.date = r.dates[i];
        if (p == 1 && std::abs(r.tau[0] - tau_tilde) > 1e-12)
            throw ValidationError("portfolio: with one asset tau_tilde must equal tau");
        const AllocationResult a = smv_weights(st, tau_tilde, prev, opt);
        if (a.feasible) {
            pp.weights = a.weights;
            pp.tau_star = a.tau_star_achieved;
            pp.var = a.var;
            pp.es = a.es;
            prev = a.weights;
        } else {
            ++run.infeasible;
            pp.feasible = false;
            pp.message = a.message;
            pp.weights = prev ? *prev : Eigen::VectorXd(Eigen::VectorXd::Constant(p, 1.0 / static_cast<double>(p)));
            const ALParams al = linear_combine(pp.weights, st);
            const PortfolioRisk risk = al_tail_risk(al, tau_tilde);
            pp.tau_star = al.tau_star;
            pp.var = risk.var;
            pp.es = risk.es;
        }
        pp.realized = pp.weights.dot(r.y.row(static_cast<Eigen::Index>(i)).transpose());
        wealth *= 1.0 + (percent_returns ? pp.realized / 100.0 : pp.realized);
        pp.wealth = wealth;
        realized.push_back(pp.realized);
        wh.row(static_cast<Eigen::Index>(i)) = pp.weights.transpose();
        run.periods.push_back(std::move(pp));
    }
    run.stats = performance_stats(realized, wh);
    return run;
}

inline Table portfolio_table(const RollingResult& r, const PortfolioRun& run) {
    Table t{{"date"}, {}};
    for (const auto& a : r.assets) t.header.push_back("w_" + a);
    for (const char* h : {"tau_star", "var", "es", "realized", "wealth", "feasible"}) t.header.emplace_back(h);
    for (const auto& pp : run.periods) {
        std::vector<std::string> row{pp.date};
        for (Eigen::Index j = 0; j < pp.weights.size(); ++j) row.push_back(fmt(pp.weights[j]));
        for (double v : {pp.tau_star, pp.var, pp.es, pp.realized, pp.wealth}) row.push_back(fmt(v));
        row.push_back(fmt(pp.feasible));
        t.add(std::move(row));
    }
    return t;
}

// ---- emission ----

struct ReportBundle {
    std::string command;
    std::map<std::string, std::string> config;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, Table>> tables;  // file stem -> table
    nlohmann::ordered_json summary = nlohmann::ordered_json::object();
    nlohmann::ordered_json timings = nlohmann::ordered_json::object();
    std::vector<std::string> warnings;
};

inline nlohmann::ordered_json versions() {
    nlohmann::ordered_json v;
    v["malrisk"] = kVersion;
    v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    v["boost"] = BOOST_LIB_VERSION;
#if defined(__clang__)
    v["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    v["compiler"] = std::string("gcc ") + __VERSION__;
#else
    v["compiler"] = "unknown";
#endif
    return v;
}

/// Manifest content; `with_timings` false gives the reproducible part.
inline nlohmann::ordered_json manifest(const ReportBundle& b, bool with_timings = true) {
    nlohmann::ordered_json m;
    m["tool"] = "malrisk";
    m["command"] = b.command;
    m["seed"] = b.seed;
    m["versions"] = versions();
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : b.config) cfg[k] = v;
    m["config"] = cfg;
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const auto& [stem, table] : b.tables)
        files.push_back({{"file", stem + ".csv"}, {"rows", table.rows.size()}});
    m["outputs"] = files;
    m["summary"] = b.summary;
    m["warnings"] = b.warnings;
    if (with_timings) m["timings"] = b.timings;
    return m;
}

/// Writes every table as `<stem>.csv` and `manifest.json` into `dir`.
inline std::vector<std::filesystem::path> emit_reports(const ReportBundle& b, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    for (const auto& [stem, table] : b.tables) {
        const auto path = dir / (stem + ".csv");
        write_csv(path, table);
        written.push_back(path);
    }
    const auto mpath = dir / "manifest.json";
    std::ofstream out(mpath, std::ios::binary);
    if (!out) throw Error("cannot write " + mpath.string());
    out << manifest(b).dump(2) << '\n';
    if (!out) throw Error("write failed for " + mpath.string());
    written.push_back(mpath);
    return written;
}

}  // namespace malrisk::pipeline
