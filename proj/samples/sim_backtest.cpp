// Simulate a 2-asset panel, produce rolling VaR/ES forecasts and backtest them.
#include <cstdio>

#include "malrisk/malrisk.hpp"

int main() {
    using namespace malrisk;
    using namespace malrisk::pipeline;

    SimScenario sc;
    sc.kind = ModelKind{QuantileKind::SAV, EsKind::Multiplicative};
    sc.truth = reference_truth(sc.kind, 2);
    sc.tau = QuantileLevels::constant(2, 0.05);
    sc.T = 700;
    const Simulated sim = generate_full(sc, 0);

    ReturnTable data;
    data.dates = weekly_dates(sc.T);
    data.columns = {"a", "b"};
    data.values = sim.y;

    RunConfig cfg;
    cfg.model = ModelSpec{QuantileKind::SAV, EsKind::Multiplicative};
    cfg.out_of_sample = 200;
    cfg.refit_every = 50;
    cfg.n_starts = 2;
    const RollingResult r = rolling_forecast(data, cfg, cfg.model, {});

    for (const auto& [asset, rep] : backtests(r))
        std::printf("%-3s %-6s stat %8.4f  cv %6.3f  %s\n", asset.c_str(), rep.name.c_str(), rep.statistic,
                    rep.critical_value, rep.reject ? "reject" : "ok");
    const ScoreSeries s = score_series(r);
    std::printf("mean joint score over %zu periods: %.5f\n", r.periods(), mean_of(s.s_mal));
    return 0;
}
