#pragma once

// Rolling-window estimation and one-step-ahead (VaR, ES) forecasting.

#include <Eigen/Dense>
#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "malrisk/caviar.hpp"
#include "malrisk/em.hpp"
#include "malrisk/error.hpp"
#include "malrisk/mal.hpp"
#include "malrisk/pipeline/config.hpp"
#include "malrisk/pipeline/io.hpp"
#include "malrisk/scoring.hpp"

namespace malrisk::pipeline {

struct WindowEvent {
    std::size_t t = 0;  // index into the full series of the forecast target
    std::string date;
    bool refit = false;
    bool failed = false;
    std::string message;
    double loglik = 0.0;
    int iterations = 0;
    double seconds = 0.0;
};

struct RollingResult {
    ModelSpec model;
    std::vector<std::string> assets;
    QuantileLevels tau;
    std::vector<std::size_t> index;  // full-series row of each out-of-sample period
    std::vector<std::string> dates;
    Eigen::MatrixXd y, var, es, delta;  // out-of-sample x p
    std::vector<Eigen::MatrixXd> psi;   // fitted correlation used at each period
    std::vector<WindowEvent> events;

    std::size_t periods() const { return dates.size(); }

    std::vector<ForecastRecord> records() const {
        std::vector<ForecastRecord> out;
        out.reserve(periods());
        for (std::size_t i = 0; i < periods(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            out.push_back({static_cast<long>(index[i]), y.row(r).transpose(), var.row(r).transpose(),
                           es.row(r).transpose(), tau});
        }
        return out;
    }

    /// MAL state for period i: location VaR, scale -tau ES, fitted correlation.
    MALParams state(std::size_t i) const {
        const auto r = static_cast<Eigen::Index>(i);
        return MALParams::make(var.row(r).transpose(), delta.row(r).transpose(), psi[i], tau);
    }
};

struct OneStepForecast {
    Eigen::VectorXd var, es;
};

/// Forecast for the period after `window` from parameters phi (q0/x0 are
/// re-anchored on the window).
inline OneStepForecast one_step_forecast(ParameterSet phi, const Eigen::MatrixXd& window, const QuantileLevels& tau) {
    const Eigen::Index p = window.cols();
    if (static_cast<Eigen::Index>(phi.dim()) != p) throw DomainError("one_step_forecast: dimension mismatch");
    if (window.rows() < 1) throw DomainError("one_step_forecast: empty window");
    malrisk::detail::reanchor(phi, window, tau);
    OneStepForecast f{Eigen::VectorXd(p), Eigen::VectorXd(p)};
    std::vector<double> q, es, d, x;
    for (Eigen::Index j = 0; j < p; ++j) {
        const AssetModel& a = phi.assets[static_cast<std::size_t>(j)];
        const auto col = malrisk::detail::column(window, j);
        const bool ar = a.es.kind == EsKind::Autoregressive;
        const auto st = malrisk::detail::fill_path(a.caviar, a.es, col, tau[static_cast<std::size_t>(j)], a.q0, q, es, d,
                                          ar ? &x : nullptr);
        if (!st.ok()) throw NumericError("one_step_forecast: asset " + std::to_string(j) + ": " + malrisk::detail::describe(st.fault));
        const OneStep s = forecast_next(a.caviar, a.es, q.back(), col.back(), ar ? x.back() : 0.0);
        f.var[j] = s.var;
        f.es[j] = s.es;
    }
    return f;
}

using RollingProgress = std::function<void(std::size_t done, std::size_t total)>;

inline RollingResult rolling_forecast(const ReturnTable& data, const RunConfig& cfg, const ModelSpec& model,
                                      const RollingProgress& progress = {}) {
    cfg.validate();
    const auto T = static_cast<std::size_t>(data.rows());
    const auto p = static_cast<std::size_t>(data.cols());
    if (cfg.out_of_sample >= T)
        throw ValidationError("rolling_forecast: out-of-sample length " + std::to_string(cfg.out_of_sample) +
                              " must be below the series length " + std::to_string(T));
    const std::size_t t0 = T - cfg.out_of_sample;
    const std::size_t width = cfg.window_width == 0 ? t0 : cfg.window_width;
    if (width > t0) throw ValidationError("rolling_forecast: window_width exceeds the data before the first forecast");
    const std::size_t need = 10 * free_parameter_count(model.kind(), p) + 1;
    if (width < need)
        throw ValidationError("rolling_forecast: estimation window of " + std::to_string(width) + " rows is below the " +
                              std::to_string(need) + " required for this model");
    RollingResult out;
    out.model = model;
    out.assets = data.columns;
    out.tau = cfg.levels(p);
    const auto n = static_cast<Eigen::Index>(cfg.out_of_sample);
    out.y.resize(n, static_cast<Eigen::Index>(p));
    out.var = out.es = out.delta = out.y;
    const EMConfig base_cfg = cfg.em();
    std::optional<ParameterSet> phi;
    for (std::size_t i = 0; i < cfg.out_of_sample; ++i) {
        const std::size_t t = t0 + i;
        const std::size_t start = cfg.window == WindowPolicy::Rolling ? t - width : 0;
        const Eigen::MatrixXd window = data.values.middleRows(static_cast<Eigen::Index>(start),
                                                              static_cast<Eigen::Index>(t - start));
        WindowEvent ev;
        ev.t = t;
        ev.date = data.dates[t];
        if (!phi || i % cfg.refit_every == 0) {
            ev.refit = true;
            const auto c0 = std::chrono::steady_clock::now();
            try {
                FitResult fr;
                if (!phi) {
                    fr = fit(window, out.tau, model.kind(), base_cfg);
                } else {
                    EMConfig warm = base_cfg;
                    warm.n_starts = 1;
                    fr = fit(window, out.tau, model.kind(), warm, phi);
                }
                phi = fr.phi_hat;
                ev.loglik = fr.loglik;
                ev.iterations = fr.iterations;
            } catch (const Error& e) {
                if (!phi) throw NumericError("rolling_forecast: first window fit failed: " + std::string(e.what()));
                ev.failed = true;
                ev.message = std::string("fit failed, parameters carried forward: ") + e.what();
            }
            ev.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count();
        }
        const OneStepForecast f = one_step_forecast(*phi, window, out.tau);
        const auto r = static_cast<Eigen::Index>(i);
        out.y.row(r) = data.values.row(static_cast<Eigen::Index>(t));
        out.var.row(r) = f.var.transpose();
        out.es.row(r) = f.es.transpose();
        for (std::size_t j = 0; j < p; ++j)
            out.delta(r, static_cast<Eigen::Index>(j)) = -out.tau[j] * f.es[static_cast<Eigen::Index>(j)];
        out.psi.push_back(phi->psi);
        out.index.push_back(t);
        out.dates.push_back(data.dates[t]);
        if (ev.refit) out.events.push_back(std::move(ev));
        if (progress) progress(i + 1, cfg.out_of_sample);
    }
    return out;
}

}  // namespace malrisk::pipeline
