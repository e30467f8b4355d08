// malrisk command-line driver: stats, fit, forecast, backtest, portfolio, simulate.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "malrisk/malrisk.hpp"

namespace {

using namespace malrisk;
using namespace malrisk::pipeline;

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> settings;  // key=value
    std::map<std::string, std::string> flags;
    bool quiet = false;
};

void add_common(CLI::App* app, CommonArgs& a) {
    app->add_option("-c,--config", a.config_file, "key = value configuration file");
    app->add_option("-s,--set", a.settings, "override a configuration key (key=value), repeatable");
    app->add_flag("-q,--quiet", a.quiet, "suppress progress output");
    const std::vector<std::pair<std::string, std::string>> keys = {
        {"--input", "input"},         {"--columns", "columns"},   {"--tau", "tau"},
        {"--spec", "spec"},           {"--es", "es"},             {"--compare", "compare"},
        {"--window", "window"},       {"--window-width", "window_width"},
        {"--oos", "oos"},             {"--refit-every", "refit_every"},
        {"--output", "output"},       {"--seed", "seed"},         {"--tau-tilde", "tau_tilde"},
        {"--n-starts", "n_starts"},   {"--tol", "tol"},           {"--max-iterations", "max_iterations"},
        {"--threads", "threads"},     {"--percent-returns", "percent_returns"},
        {"--sim-T", "sim_T"},         {"--sim-p", "sim_p"},       {"--sim-family", "sim_family"},
        {"--sim-df", "sim_df"},       {"--sim-B", "sim_B"},       {"--sim-replication", "sim_replication"},
    };
    for (const auto& [flag, key] : keys) {
        const std::string k = key;
        app->add_option_function<std::string>(flag, [&a, k](const std::string& v) { a.flags[k] = v; },
                                              "sets config key '" + k + "'");
    }
}

RunConfig build_config(const CommonArgs& a) {
    RunConfig c;
    if (!a.config_file.empty()) load_config_file(c, a.config_file);
    for (const auto& [k, v] : a.flags) apply_setting(c, k, v);
    for (const auto& s : a.settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
        apply_setting(c, s.substr(0, eq), s.substr(eq + 1));
    }
    c.validate();
    return c;
}

ReturnTable load_input(const RunConfig& c) {
    if (c.input.empty()) throw ValidationError("no input file given (use --input or input = ... in the config)");
    return load_returns(c.input, c.columns);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ReportBundle new_bundle(const std::string& cmd, const RunConfig& c) {
    ReportBundle b;
    b.command = cmd;
    b.config = describe(c);
    b.seed = c.seed;
    return b;
}

void finish(ReportBundle& b, const RunConfig& c, std::chrono::steady_clock::time_point t0, bool quiet) {
    b.timings["total_seconds"] = seconds_since(t0);
    const auto files = emit_reports(b, c.output_dir);
    if (!quiet)
        for (const auto& f : files) std::cerr << "wrote " << f.string() << '\n';
}

RollingProgress progress_printer(bool quiet, const std::string& label) {
    if (quiet) return {};
    return [label](std::size_t done, std::size_t total) {
        if (done % 25 == 0 || done == total) std::cerr << label << ": " << done << "/" << total << " forecasts\n";
    };
}

Table window_table(const std::vector<RollingResult>& runs) {
    Table t{{"model", "t", "date", "loglik", "iterations", "failed", "message"}, {}};
    for (const auto& r : runs)
        for (const auto& e : r.events)
            t.add({r.model.label(), std::to_string(e.t), e.date, fmt(e.loglik), std::to_string(e.iterations),
                   fmt(e.failed), e.message.empty() ? "" : "\"" + e.message + "\""});
    return t;
}

double fit_seconds(const RollingResult& r) {
    double s = 0.0;
    for (const auto& e : r.events) s += e.seconds;
    return s;
}

void note_failures(ReportBundle& b, const RollingResult& r) {
    for (const auto& e : r.events)
        if (e.failed) b.warnings.push_back(r.model.label() + " " + e.date + ": " + e.message);
}

nlohmann::ordered_json hit_rates(const RollingResult& r) {
    nlohmann::ordered_json h = nlohmann::ordered_json::object();
    for (std::size_t j = 0; j < r.assets.size(); ++j) {
        const auto b = static_cast<Eigen::Index>(j);
        h[r.assets[j]] = (r.y.col(b).array() < r.var.col(b).array()).cast<double>().mean();
    }
    return h;
}

// ---- subcommands ----

int cmd_stats(const CommonArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig c = build_config(a);
    const ReturnTable data = load_input(c);
    const SummaryStats s = summary_stats(data.values, data.columns);
    Table st{{"asset", "n", "mean", "median", "sd", "min", "max", "skewness", "kurtosis", "jarque_bera", "jb_p_value",
              "ljung_box_sq4", "lb_p_value"},
             {}};
    for (const auto& x : s.assets)
        st.add({x.name, std::to_string(x.n), fmt(x.mean), fmt(x.median), fmt(x.sd), fmt(x.min), fmt(x.max),
                fmt(x.skewness), fmt(x.kurtosis), fmt(x.jarque_bera), fmt(x.jb_p_value), fmt(x.ljung_box),
                fmt(x.lb_p_value)});
    Table corr{{"asset"}, {}};
    for (const auto& n : data.columns) corr.header.push_back(n);
    for (Eigen::Index i = 0; i < s.correlation.rows(); ++i) {
        std::vector<std::string> row{data.columns[static_cast<std::size_t>(i)]};
        for (Eigen::Index j = 0; j < s.correlation.cols(); ++j) row.push_back(fmt(s.correlation(i, j)));
        corr.add(std::move(row));
    }
    ReportBundle b = new_bundle("stats", c);
    b.tables = {{"summary_stats", st}, {"correlation", corr}};
    b.summary["rows"] = data.rows();
    b.summary["assets"] = data.columns;
    finish(b, c, t0, a.quiet);
    return 0;
}

int cmd_fit(const CommonArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig c = build_config(a);
    const ReturnTable data = load_input(c);
    const QuantileLevels tau = c.levels(static_cast<std::size_t>(data.cols()));
    EMConfig em = c.em();
    if (!a.quiet)
        em.progress = [](int s, int it, double l) {
            if (it % 10 == 0) std::fprintf(stderr, "start %d iteration %d loglik %.6f\n", s, it, l);
        };
    const FitResult fr = fit(data.values, tau, c.model.kind(), em);
    Table params{{"asset", "parameter", "value"}, {}};
    const auto names = parameter_names(c.model.kind());
    for (std::size_t j = 0; j < fr.phi_hat.dim(); ++j) {
        const auto v = natural_parameters(fr.phi_hat.assets[j]);
        for (std::size_t k = 0; k < v.size(); ++k) params.add({data.columns[j], names[k], fmt(v[k])});
        params.add({data.columns[j], "q0", fmt(fr.phi_hat.assets[j].q0)});
    }
    Table psi{{"asset"}, {}};
    for (const auto& n : data.columns) psi.header.push_back(n);
    for (Eigen::Index i = 0; i < fr.phi_hat.psi.rows(); ++i) {
        std::vector<std::string> row{data.columns[static_cast<std::size_t>(i)]};
        for (Eigen::Index j = 0; j < fr.phi_hat.psi.cols(); ++j) row.push_back(fmt(fr.phi_hat.psi(i, j)));
        psi.add(std::move(row));
    }
    Table paths{{"date", "asset", "series", "value"}, {}};
    for (std::size_t j = 0; j < fr.paths.size(); ++j)
        for (std::size_t t = 0; t < data.dates.size(); ++t) {
            paths.add({data.dates[t], data.columns[j], "var", fmt(fr.paths[j].quantile[t])});
            paths.add({data.dates[t], data.columns[j], "es", fmt(fr.paths[j].es[t])});
        }
    Table trace{{"iteration", "loglik"}, {}};
    for (std::size_t i = 0; i < fr.loglik_trace.size(); ++i) trace.add({std::to_string(i), fmt(fr.loglik_trace[i])});
    ReportBundle b = new_bundle("fit", c);
    b.tables = {{"parameters", params}, {"psi", psi}, {"fitted_paths_long", paths}, {"loglik_trace", trace}};
    b.summary["model"] = c.model.label();
    b.summary["loglik"] = fr.loglik;
    b.summary["iterations"] = fr.iterations;
    b.summary["converged"] = fr.converged;
    b.summary["best_start"] = fr.start_index;
    b.summary["failed_starts"] = fr.failed_starts;
    b.timings["fit_seconds"] = seconds_since(t0);
    finish(b, c, t0, a.quiet);
    return 0;
}

int cmd_forecast(const CommonArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig c = build_config(a);
    const ReturnTable data = load_input(c);
    const RollingResult r = rolling_forecast(data, c, c.model, progress_printer(a.quiet, c.model.label()));
    ReportBundle b = new_bundle("forecast", c);
    b.tables = {{"forecasts", forecast_table(r)}, {"paths_long", path_long_table(r)}, {"windows", window_table({r})}};
    b.summary["model"] = c.model.label();
    b.summary["periods"] = r.periods();
    b.summary["hit_rate"] = hit_rates(r);
    note_failures(b, r);
    b.timings["fit_seconds"] = fit_seconds(r);
    finish(b, c, t0, a.quiet);
    return 0;
}

int cmd_backtest(const CommonArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig c = build_config(a);
    const ReturnTable data = load_input(c);
    std::vector<ModelSpec> models{c.model};
    for (const auto& m : c.compare)
        if (m.label() != c.model.label()) models.push_back(m);
    std::vector<RollingResult> runs;
    std::vector<ScoreSeries> scores;
    Table fc{{}, {}}, sc{{}, {}}, bt{{}, {}};
    ReportBundle b = new_bundle("backtest", c);
    for (const auto& m : models) {
        runs.push_back(rolling_forecast(data, c, m, progress_printer(a.quiet, m.label())));
        scores.push_back(score_series(runs.back()));
        const Table f = forecast_table(runs.back()), s = score_table(runs.back(), scores.back()),
                    t = backtest_table(runs.back());
        if (fc.header.empty()) fc.header = f.header, sc.header = s.header, bt.header = t.header;
        fc.rows.insert(fc.rows.end(), f.rows.begin(), f.rows.end());
        sc.rows.insert(sc.rows.end(), s.rows.begin(), s.rows.end());
        bt.rows.insert(bt.rows.end(), t.rows.begin(), t.rows.end());
        note_failures(b, runs.back());
        b.summary["hit_rate"][m.label()] = hit_rates(runs.back());
        b.timings["fit_seconds"][m.label()] = fit_seconds(runs.back());
    }
    b.tables = {{"forecasts", fc}, {"scores", sc}, {"backtests", bt}, {"windows", window_table(runs)}};
    Table paths{{}, {}};
    for (const auto& r : runs) {
        const Table p = path_long_table(r);
        if (paths.header.empty()) paths.header = p.header;
        paths.rows.insert(paths.rows.end(), p.rows.begin(), p.rows.end());
    }
    b.tables.emplace_back("paths_long", paths);
    if (runs.size() > 1) {
        const Comparison cmp = compare_models(runs, scores);
        b.tables.emplace_back("dm_tests", cmp.dm);
        b.tables.emplace_back("score_differential_long", cmp.differential);
    }
    for (const auto& r : runs)
        for (std::size_t j = 0; j < r.assets.size(); ++j)
            if (r.tau[j] * static_cast<double>(r.periods()) < 5.0)
                b.warnings.push_back(r.model.label() + " " + r.assets[j] +
                                     ": fewer than 5 expected violations; ES backtests have low power");
    finish(b, c, t0, a.quiet);
    return 0;
}

int cmd_portfolio(const CommonArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig c = build_config(a);
    const ReturnTable data = load_input(c);
    const RollingResult r = rolling_forecast(data, c, c.model, progress_printer(a.quiet, c.model.label()));
    const PortfolioRun run = portfolio_run(r, c.tau_tilde, c.percent_returns);
    ReportBundle b = new_bundle("portfolio", c);
    b.tables = {{"portfolio", portfolio_table(r, run)}, {"forecasts", forecast_table(r)}, {"windows", window_table({r})}};
    b.summary["model"] = c.model.label();
    b.summary["tau_tilde"] = c.tau_tilde;
    b.summary["sharpe"] = run.stats.sharpe;
    b.summary["hhi"] = run.stats.hhi;
    b.summary["infeasible_periods"] = run.infeasible;
    b.summary["final_wealth"] = run.periods.empty() ? 1.0 : run.periods.back().wealth;
    for (const auto& pp : run.periods)
        if (!pp.feasible) b.warnings.push_back(pp.date + ": " + pp.message + "; previous weights kept");
    note_failures(b, r);
    b.timings["fit_seconds"] = fit_seconds(r);
    finish(b, c, t0, a.quiet);
    return 0;
}

int cmd_simulate(const CommonArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig c = build_config(a);
    SimScenario sc;
    sc.family = parse_error_family(c.sim_family);
    sc.df = c.sim_df;
    sc.T = c.sim_T;
    sc.kind = c.model.kind();
    sc.truth = reference_truth(sc.kind, c.sim_p);
    sc.tau = c.levels(c.sim_p);
    sc.seed = c.seed;
    ReportBundle b = new_bundle("simulate", c);
    if (c.sim_B > 0) {
        sc.B = c.sim_B;
        const StudyResult s = run_study(sc, c.em(), c.threads > 0 ? c.threads : malrisk::detail::default_threads());
        Table t{{"parameter", "truth", "mean_estimate", "bias_pct", "rmse"}, {}};
        for (const auto& p : s.parameters) t.add({p.name, fmt(p.truth), fmt(p.mean_estimate), fmt(p.bias_pct), fmt(p.rmse)});
        const auto& l = s.l1_aggregate;
        t.add({l.name, fmt(l.truth), fmt(l.mean_estimate), fmt(l.bias_pct), fmt(l.rmse)});
        b.tables = {{"study", t}};
        b.summary["replications"] = s.replications;
        b.summary["failed"] = s.failed;
        b.summary["median_iterations"] = s.median_iterations;
        b.warnings = s.failures;
        b.timings["median_fit_seconds"] = s.median_seconds;
    } else {
        const Simulated sim = generate_full(sc, c.sim_replication);
        ReturnTable tab;
        tab.dates = weekly_dates(static_cast<std::size_t>(sim.y.rows()));
        for (std::size_t j = 0; j < c.sim_p; ++j) tab.columns.push_back("asset" + std::to_string(j + 1));
        tab.values = sim.y;
        std::error_code ec;
        std::filesystem::create_directories(c.output_dir, ec);
        write_returns(c.output_dir / "returns.csv", tab);
        Table truth{{"date", "asset", "series", "value"}, {}};
        for (Eigen::Index t = 0; t < sim.y.rows(); ++t)
            for (Eigen::Index j = 0; j < sim.y.cols(); ++j) {
                truth.add({tab.dates[static_cast<std::size_t>(t)], tab.columns[static_cast<std::size_t>(j)], "var",
                           fmt(sim.quantile(t, j))});
                truth.add({tab.dates[static_cast<std::size_t>(t)], tab.columns[static_cast<std::size_t>(j)], "es",
                           fmt(sim.es(t, j))});
            }
        b.tables = {{"truth_paths_long", truth}};
        b.summary["returns_file"] = "returns.csv";
        b.summary["rows"] = sim.y.rows();
    }
    finish(b, c, t0, a.quiet);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint VaR/ES estimation, forecasting, backtesting and SMV portfolios"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(malrisk::kVersion));
    CommonArgs args;
    struct Sub {
        const char* name;
        const char* help;
        int (*run)(const CommonArgs&);
    };
    const Sub subs[] = {
        {"stats", "summary statistics of the return panel", cmd_stats},
        {"fit", "full-sample EM fit", cmd_fit},
        {"forecast", "rolling one-step-ahead VaR/ES forecasts", cmd_forecast},
        {"backtest", "forecasts plus scores, backtests and model comparisons", cmd_backtest},
        {"portfolio", "rolling SMV portfolio allocation", cmd_portfolio},
        {"simulate", "simulate data from the reference design or run a Monte Carlo study", cmd_simulate},
    };
    std::vector<std::pair<CLI::App*, int (*)(const CommonArgs&)>> handlers;
    for (const auto& s : subs) {
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        add_common(sub, args);
        handlers.emplace_back(sub, s.run);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }
    try {
        for (const auto& [sub, run] : handlers)
            if (sub->parsed()) return run(args);
    } catch (const malrisk::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const malrisk::DomainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const malrisk::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
