#include <cmath>

#include "malrisk/caviar.hpp"
#include "test_util.hpp"

using namespace malrisk;

namespace {
CaviarSpec spec(QuantileKind k, double w, double e, std::vector<double> b) {
    CaviarSpec s;
    s.kind = k;
    s.omega = w;
    s.eta = e;
    s.beta = std::move(b);
    return s;
}
}  // namespace

TEST(QuantileStep, Examples) {
    EXPECT_NEAR(quantile_step(spec(QuantileKind::SAV, -0.2, 0.85, {-0.1}), -2.0, 1.0), -2.0, 1e-15);
    const CaviarSpec as = spec(QuantileKind::AS, -0.3, 0.7, {-0.1, 0.05});
    EXPECT_NEAR(quantile_step(as, -1.5, 0.0), -0.3 + 0.7 * -1.5, 1e-15);
    EXPECT_NEAR(quantile_step(as, -1.5, -2.0), -0.3 + 0.7 * -1.5 + 0.05 * 2.0, 1e-15);
    EXPECT_NEAR(quantile_step(as, -1.5, 3.0), -0.3 + 0.7 * -1.5 - 0.1 * 3.0, 1e-15);
    const CaviarSpec ig = spec(QuantileKind::IG, 0.2, 0.6, {0.2});
    EXPECT_NEAR(quantile_step(ig, -1.0, 2.0), -std::sqrt(0.2 + 0.6 + 0.8), 1e-15);
}

TEST(QuantileStep, IgRadicandError) {
    EXPECT_THROW(quantile_step(spec(QuantileKind::IG, -5.0, 0.1, {0.1}), -1.0, 0.5), NumericError);
}

TEST(QuantileStep, WrongBetaCount) {
    EXPECT_THROW(quantile_step(spec(QuantileKind::AS, -0.1, 0.5, {0.1}), -1.0, 0.5), DomainError);
}

TEST(QuantilePath, FixedPointAndClosedForm) {
    const std::vector<double> y{0.3, -1.0, 2.0, 0.5, -0.7, 1.1, 0.0, -2.0};
    const auto flat = quantile_path(spec(QuantileKind::SAV, -0.4, 0.0, {0.0}), y, -3.0);
    EXPECT_EQ(flat[0], -3.0);
    for (std::size_t t = 1; t < y.size(); ++t) EXPECT_EQ(flat[t], -0.4);

    const double w = -0.2, e = 0.85, q0 = -1.7;
    const auto q = quantile_path(spec(QuantileKind::SAV, w, e, {0.0}), y, q0);
    for (std::size_t t = 0; t < y.size(); ++t) {
        const double et = std::pow(e, static_cast<double>(t));
        EXPECT_NEAR(q[t], w * (1.0 - et) / (1.0 - e) + et * q0, 1e-14);
    }
}

TEST(QuantilePath, GoldenFiles) {
    const auto j = testutil::load("caviar_golden.json");
    const std::vector<double> y = testutil::stdvec(j["y"]);
    const double tau = j["tau"];
    for (const auto& c : j["cases"]) {
        const std::string k = c["kind"];
        const CaviarSpec s = spec(parse_quantile_kind(k), c["omega"], c["eta"], testutil::stdvec(c["beta"]));
        const auto q = quantile_path(s, y, c["q0"]);
        const auto gq = testutil::stdvec(c["quantile"]);
        ASSERT_EQ(q.size(), gq.size());
        for (std::size_t t = 0; t < q.size(); ++t) EXPECT_NEAR(q[t], gq[t], 1e-12) << k << " t=" << t;

        const auto em = es_path_multiplicative(q, c["gamma0"]);
        const auto gem = testutil::stdvec(c["es_mult"]);
        for (std::size_t t = 0; t < q.size(); ++t) EXPECT_NEAR(em[t], gem[t], 1e-12);

        const auto g = testutil::stdvec(c["gamma"]);
        const ArEsPath ar = es_path_ar(q, y, {g[0], g[1], g[2]}, c["x0"]);
        const auto gea = testutil::stdvec(c["es_ar"]), gx = testutil::stdvec(c["x_ar"]);
        for (std::size_t t = 0; t < q.size(); ++t) {
            EXPECT_NEAR(ar.es[t], gea[t], 1e-12) << k << " t=" << t;
            EXPECT_NEAR(ar.x[t], gx[t], 1e-12);
        }

        // fused path agrees with the pieces
        EsLink link;
        link.kind = EsKind::Autoregressive;
        link.gamma = {g[0], g[1], g[2]};
        link.x0 = c["x0"];
        const RiskPath rp = risk_path(s, link, y, tau, c["q0"]);
        const auto gd = testutil::stdvec(c["delta_ar"]);
        for (std::size_t t = 0; t < q.size(); ++t) EXPECT_NEAR(rp.delta[t], gd[t], 1e-12);
    }
}

TEST(EsPath, MultiplicativeExamples) {
    const std::vector<double> q{-1.0, -2.0, -0.5};
    const auto es0 = es_path_multiplicative(q, 0.0);
    for (std::size_t t = 0; t < q.size(); ++t) EXPECT_NEAR(es0[t], 2.0 * q[t], 1e-15);
    const auto es_lim = es_path_multiplicative(q, -40.0);
    for (std::size_t t = 0; t < q.size(); ++t) {
        EXPECT_LE(es_lim[t], q[t]);
        EXPECT_NEAR(es_lim[t], q[t], 1e-15);
    }
    EXPECT_NEAR(es_path_multiplicative(std::vector<double>{-2.0}, -1.1)[0], -2.0 * (1.0 + std::exp(-1.1)), 1e-14);
    EXPECT_NEAR(es_path_multiplicative(std::vector<double>{-2.0}, -1.1)[0], -2.66574, 1e-5);
    EXPECT_THROW(es_path_multiplicative(std::vector<double>{-1.0, 0.0}, 0.0), NumericError);
}

TEST(EsPath, ArDegenerateAndNoViolations) {
    const std::vector<double> q{-1.0, -1.1, -1.2, -1.0};
    const std::vector<double> y{-2.0, -3.0, 0.5, -1.5};
    const ArEsPath z = es_path_ar(q, y, {0.0, 0.0, 0.0}, 0.0);
    for (std::size_t t = 0; t < q.size(); ++t) EXPECT_EQ(z.es[t], q[t]);

    const std::vector<double> calm{0.1, 0.2, 0.0, 0.3};
    const ArEsPath c = es_path_ar(q, calm, {0.05, 0.12, 0.8}, 0.4);
    for (std::size_t t = 0; t < q.size(); ++t) {
        EXPECT_EQ(c.x[t], 0.4);
        EXPECT_NEAR(c.es[t], q[t] - 0.4, 1e-15);
    }
    EXPECT_THROW(es_path_ar(q, calm, {-0.1, 0.0, 0.0}, 0.0), DomainError);
}

TEST(DeltaFromEs, Examples) {
    EXPECT_NEAR(delta_from_es(std::vector<double>{-3.0}, 0.05)[0], 0.15, 1e-15);
    EXPECT_THROW(delta_from_es(std::vector<double>{-1.0, 0.2}, 0.05, 0.2), NumericError);
}

TEST(ForecastNext, ExtendsThePath) {
    const auto j = testutil::load("caviar_golden.json");
    const std::vector<double> y = testutil::stdvec(j["y"]);
    const double tau = j["tau"];
    const CaviarSpec s = spec(QuantileKind::SAV, -0.2, 0.85, {-0.1});
    EsLink link;
    link.gamma0 = -1.1;
    const std::vector<double> head(y.begin(), y.end() - 1);
    const RiskPath full = risk_path(s, link, y, tau, -1.5);
    const RiskPath part = risk_path(s, link, head, tau, -1.5);
    const OneStep f = forecast_next(s, link, part.quantile.back(), head.back(), 0.0);
    EXPECT_NEAR(f.var, full.quantile.back(), 1e-14);
    EXPECT_NEAR(f.es, full.es.back(), 1e-14);
    EXPECT_LE(f.es, f.var);
}

TEST(InitialState, UsesLeadingSegment) {
    std::vector<double> y(200);
    for (std::size_t t = 0; t < y.size(); ++t) y[t] = static_cast<double>(t % 50) - 25.0;
    const PathAnchor a = initial_state(y, 0.1);
    // first 50 observations are -25..24; linear-interpolated 10% quantile = -25 + 4.9
    EXPECT_NEAR(a.q0, -20.1, 1e-12);
    EXPECT_GT(a.x0, 0.0);
    EXPECT_THROW(initial_state(std::vector<double>{}, 0.1), DomainError);
}
