"""Reference backtest statistics and scores, written from the textbook
definitions with numpy / scipy / statsmodels on stored random series."""
import json
import math
import pathlib

import numpy as np
import statsmodels.api as sm
from scipy import stats

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "backtests.json"
rng = np.random.default_rng(99)


def xlogy(x, y):
    return 0.0 if x == 0 else x * math.log(y)


def lr_uc(h, tau):
    n1 = int(h.sum()); n = len(h); n0 = n - n1
    pi = n1 / n
    return max(0.0, -2 * ((n1 * math.log(tau) + n0 * math.log(1 - tau)) - (xlogy(n1, pi) + xlogy(n0, 1 - pi))))


def lr_ind(h):
    pairs = list(zip(h[:-1], h[1:]))
    n = {(a, b): sum(1 for p in pairs if p == (a, b)) for a in (0, 1) for b in (0, 1)}
    p01 = n[0, 1] / (n[0, 0] + n[0, 1]) if n[0, 0] + n[0, 1] else 0.0
    p11 = n[1, 1] / (n[1, 0] + n[1, 1]) if n[1, 0] + n[1, 1] else 0.0
    p = (n[0, 1] + n[1, 1]) / len(pairs)
    lm = xlogy(n[0, 0], 1 - p01) + xlogy(n[0, 1], p01) + xlogy(n[1, 0], 1 - p11) + xlogy(n[1, 1], p11)
    li = xlogy(n[0, 0] + n[1, 0], 1 - p) + xlogy(n[0, 1] + n[1, 1], p)
    return max(0.0, -2 * (li - lm))


def dq(h, tau, lags=4):
    dep = h[lags:] - tau
    x = np.column_stack([np.ones(len(dep))] + [h[lags - k:len(h) - k] - tau for k in range(1, lags + 1)])
    fit = sm.OLS(dep, x).fit()
    b = fit.params[1:]
    cov = tau * (1 - tau) * np.linalg.inv(x.T @ x)[1:, 1:]
    return float(b @ np.linalg.solve(cov, b))


def al_cdf(y, mu, tau, d):
    return tau * math.exp((1 - tau) / d * (y - mu)) if y <= mu else 1 - (1 - tau) * math.exp(-tau / d * (y - mu))


def es_stats(y, var, delta, tau, lags=4):
    u = np.array([al_cdf(a, b, tau, c) for a, b, c in zip(y, var, delta)])
    h = np.where(u <= tau, (tau - u) / tau, 0.0)
    T = len(h)
    sd0 = math.sqrt(tau * (1 / 3 - tau / 4))
    u_es = math.sqrt(T) * (h.mean() - tau / 2) / sd0
    c = h - tau / 2
    g0 = (c @ c) / T
    c_es = T * sum(((c[k:] @ c[:-k]) / (T - k) / g0) ** 2 for k in range(1, lags + 1))
    return u_es, c_es


def dm(a, b):
    d = np.asarray(a) - np.asarray(b)
    T = len(d)
    L = int(math.floor(T ** (1 / 3) + 1e-12))
    e = d - d.mean()
    g = lambda k: (e[k:] @ e[:T - k]) / T
    lrv = g(0) + 2 * sum((1 - k / (L + 1)) * g(k) for k in range(1, L + 1))
    return d.mean() / math.sqrt(lrv / T)


def s_fzn(q, es, y, tau):
    hit = 1.0 if y < q else 0.0
    return (hit - tau) * q / (2 * tau * math.sqrt(-es)) - (hit * y / tau - es) / (2 * math.sqrt(-es)) + math.sqrt(-es)


def s_fz0(q, es, y, tau):
    hit = 1.0 if y < q else 0.0
    return hit * (y - q) / (tau * es) + q / es + math.log(-es) - 1


def s_al(q, es, y, tau):
    hit = 1.0 if y < q else 0.0
    return -math.log((tau - 1) / es) - (y - q) * (tau - hit) / (tau * es)


series = []
for k, (T, tau, miscal) in enumerate([(368, 0.05, 1.0), (368, 0.05, 1.6), (250, 0.1, 0.8), (500, 0.01, 1.3)]):
    var = -1.6 - 0.4 * np.abs(np.sin(np.arange(T) / 9.0))
    delta = 0.05 + 0.02 * np.cos(np.arange(T) / 13.0)
    y = rng.normal(0, 1, size=T) * miscal
    if k == 1:
        y[1:] += 0.6 * y[:-1]  # serial dependence
    h = (y < var).astype(int)
    u_es, c_es = es_stats(y, var, delta, tau)
    series.append({"tau": tau, "y": y.tolist(), "var": var.tolist(), "delta": delta.tolist(),
                   "lr_uc": lr_uc(h, tau), "lr_cc": lr_uc(h, tau) + lr_ind(h), "dq": dq(h, tau),
                   "u_es": u_es, "c_es": c_es,
                   "lr_uc_p": float(stats.chi2.sf(lr_uc(h, tau), 1))})

a = rng.normal(0, 1, size=300)
b = a + rng.normal(0.1, 0.5, size=300)
b[1:] += 0.3 * (b[:-1] - a[:-1])
dm_case = {"a": a.tolist(), "b": b.tolist(), "statistic": dm(a, b), "p_value": float(stats.norm.cdf(dm(a, b)))}

scores = []
for _ in range(40):
    tau = float(rng.choice([0.01, 0.05, 0.1, 0.25]))
    q = -abs(rng.normal(1.5, 0.5))
    es = q - abs(rng.normal(0.5, 0.3))
    y = rng.normal(q, 1.0)
    scores.append({"tau": tau, "q": q, "es": es, "y": y, "s_fzn": s_fzn(q, es, y, tau),
                   "s_fz0": s_fz0(q, es, y, tau), "s_al": s_al(q, es, y, tau)})

OUT.write_text(json.dumps({"series": series, "dm": dm_case, "scores": scores}, indent=1))
print(f"wrote {OUT}")
for s in series:
    print({k: round(v, 4) for k, v in s.items() if k in ("lr_uc", "lr_cc", "dq", "u_es", "c_es")})
print("dm", dm_case["statistic"])
