"""Reference summary statistics (scipy / statsmodels), AL tail risk by
quadrature and SMV objectives by a dense search over the constraint curve."""
import json
import math
import pathlib

import numpy as np
from scipy import integrate, optimize, stats
from statsmodels.stats.diagnostic import acorr_ljungbox

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "stats_portfolio.json"
rng = np.random.default_rng(3)


def summary(x):
    x = np.asarray(x, float)
    jb = stats.jarque_bera(x)
    lb = acorr_ljungbox(x ** 2, lags=[4], return_df=True)
    return {"mean": x.mean(), "median": float(np.median(x)), "sd": x.std(ddof=1),
            "skewness": float(stats.skew(x)), "kurtosis": float(stats.kurtosis(x, fisher=False)),
            "jarque_bera": float(jb.statistic), "jb_p_value": float(jb.pvalue),
            "ljung_box": float(lb["lb_stat"].iloc[0]), "lb_p_value": float(lb["lb_pvalue"].iloc[0])}


five = [1.0, -2.0, 0.5, 3.0, -1.5]
panel = rng.normal(0, 1, size=(40, 3)) @ np.array([[1, 0.5, 0.2], [0, 1, 0.3], [0, 0, 1]])
stats_out = {"five": {"x": five, **summary(five)},
             "panel": {"y": panel.tolist(), "assets": [summary(panel[:, j]) for j in range(3)],
                       "correlation": np.corrcoef(panel.T).tolist()}}


def al_quantile(u, mu, tau, d):
    return mu + d / (1 - tau) * math.log(u / tau) if u <= tau else mu - d / tau * math.log((1 - u) / (1 - tau))


def tail(mu, tau, d, level):
    q = al_quantile(level, mu, tau, d)
    es = integrate.quad(lambda u: al_quantile(u, mu, tau, d), 0, level, points=[min(tau, level)], limit=200)[0] / level
    return {"mu": mu, "tau_star": tau, "delta": d, "level": level, "var": q, "es": es}


risk = [tail(0.3, 0.2, 1.5, 0.05), tail(0.3, 0.05, 1.5, 0.2), tail(-1.0, 0.1, 0.7, 0.1), tail(0.0, 0.5, 2.0, 0.5),
        tail(-0.4, 0.03, 0.2, 0.01)]


def skew(t):
    return (1 - 2 * t) / (t * (1 - t))


def lam(t):
    return math.sqrt(2 / (t * (1 - t)))


def smv_grid(mu, delta, psi, tau, tau_tilde):
    d = np.asarray(delta)
    lm = np.array([lam(t) for t in tau])
    M = np.outer(d * lm, d * lm) * np.asarray(psi)
    a = d * np.array([skew(t) for t in tau])
    target = 1 - 2 * tau_tilde

    def resid(b):
        g = b @ a
        return g / math.sqrt(2 * (b @ M @ b) + g * g) - target

    best = (math.inf, None)
    grid2 = np.linspace(-4, 4, 801)
    for b1 in np.linspace(-4, 4, 801):
        bs = lambda b2: np.array([b1, b2, 1 - b1 - b2])
        h = np.array([resid(bs(b2)) for b2 in grid2])
        for i in np.nonzero(np.sign(h[:-1]) != np.sign(h[1:]))[0]:
            b2 = optimize.brentq(lambda z: resid(bs(z)), grid2[i], grid2[i + 1], xtol=1e-14)
            b = bs(b2)
            v = b @ M @ b
            if v < best[0]:
                best = (v, b)
    # polish on the manifold
    cons = [{"type": "eq", "fun": lambda b: b.sum() - 1}, {"type": "eq", "fun": resid}]
    r = optimize.minimize(lambda b: b @ M @ b, best[1], constraints=cons, method="SLSQP",
                          options={"ftol": 1e-15, "maxiter": 500})
    b = r.x if r.success and r.fun <= best[0] + 1e-12 else best[1]
    return {"mu": mu, "delta": delta, "psi": psi, "tau": tau, "tau_tilde": tau_tilde,
            "objective": float(b @ M @ b), "weights": b.tolist(), "grid_objective": float(best[0])}


psi_b = [[1, 0.3, 0.7], [0.3, 1, 0.5], [0.7, 0.5, 1]]
smv = [smv_grid([-2.0, -1.5, -2.5], [0.1, 0.08, 0.12], psi_b, [0.05, 0.1, 0.05], tt) for tt in (0.05, 0.08)]
smv.append(smv_grid([-1.0, -1.2, -0.8], [0.3, 0.2, 0.25], psi_b, [0.1, 0.1, 0.1], 0.1))

OUT.write_text(json.dumps({"stats": stats_out, "tail_risk": risk, "smv": smv}, indent=1))
print(f"wrote {OUT}")
print(stats_out["five"])
for s in smv:
    print(s["tau_tilde"], s["objective"], s["grid_objective"], s["weights"])
