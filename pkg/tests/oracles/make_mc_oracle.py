"""Plain Monte Carlo reference values for the normal and t distribution functions.

Run once; the output is committed as tests/data/mc_oracle.json.  Uses only
numpy so that it shares no code with the package.
"""

import json
from pathlib import Path

import numpy as np

N_MC = 10**7
CHUNK = 10**6


def random_corr(rng, d):
    a = rng.normal(size=(d, d + 2))
    s = a @ a.T
    s /= np.sqrt(np.outer(np.diag(s), np.diag(s)))
    np.fill_diagonal(s, 1.0)
    return s


def mc_cdf(rng, upper, corr, df=None):
    L = np.linalg.cholesky(corr)
    d = len(upper)
    hits = 0
    for _ in range(N_MC // CHUNK):
        z = rng.standard_normal((CHUNK, d)) @ L.T
        if df is not None:
            z /= np.sqrt(rng.chisquare(df, size=(CHUNK, 1)) / df)
        hits += int(np.all(z <= upper, axis=1).sum())
    p = hits / N_MC
    return p, float(np.sqrt(p * (1 - p) / N_MC))


def main():
    rng = np.random.default_rng(271828)
    cases = []
    for kind in ("mvn", "mvt"):
        for d in (2, 3, 4):
            for _ in range(20):
                corr = random_corr(rng, d)
                upper = rng.uniform(-1.5, 2.0, size=d)
                df = float(rng.uniform(2.0, 15.0)) if kind == "mvt" else None
                p, se = mc_cdf(rng, upper, corr, df)
                cases.append({"kind": kind, "upper": upper.tolist(), "corr": corr.tolist(),
                              "df": df, "p": p, "se": se})
    special = []
    corr3 = np.full((3, 3), 0.5)
    np.fill_diagonal(corr3, 1.0)
    p, se = mc_cdf(rng, np.zeros(3), corr3)
    special.append({"name": "mvn3_equi_half_origin", "kind": "mvn", "upper": [0.0] * 3,
                    "corr": corr3.tolist(), "df": None, "p": p, "se": se})
    p, se = mc_cdf(rng, np.array([0.5, 0.5]), np.eye(2), 5.0)
    special.append({"name": "mvt2_indep_df5", "kind": "mvt", "upper": [0.5, 0.5],
                    "corr": np.eye(2).tolist(), "df": 5.0, "p": p, "se": se})

    # normalisation of the tilted Dirichlet density with alpha = (2, 2.5, 30):
    # uniform points on the simplex, area 1/2 in the (w1, w2) chart
    from math import lgamma

    a = np.array([2.0, 2.5, 30.0])
    tot = 0.0
    tot2 = 0.0
    for _ in range(N_MC // CHUNK):
        w = rng.dirichlet(np.ones(3), size=CHUNK)
        s = w @ a
        logh = (lgamma(a.sum() + 1) - np.log(3) - 4 * np.log(s)
                + sum(np.log(a[j]) - lgamma(a[j]) + (a[j] - 1) * np.log(a[j] * w[:, j] / s)
                      for j in range(3)))
        h = 0.5 * np.exp(logh)
        tot += h.sum()
        tot2 += (h**2).sum()
    mean = tot / N_MC
    se = float(np.sqrt((tot2 / N_MC - mean**2) / N_MC))
    special.append({"name": "td_2_2.5_30_mass", "p": mean, "se": se})

    out = Path(__file__).resolve().parents[1] / "data" / "mc_oracle.json"
    out.write_text(json.dumps({"n_mc": N_MC, "cases": cases, "special": special}, indent=1) + "\n")


if __name__ == "__main__":
    main()
