"""Regenerate stats_fixtures.json with scipy reference values.

    python3 crates/core/tests/fixtures/gen_stats_fixtures.py

Output is deterministic for a given numpy/scipy version.
"""

import json
from pathlib import Path

import numpy as np
import scipy
from scipy import stats

rng = np.random.default_rng(20240611)


def sample(n):
    kind = rng.integers(3)
    if kind == 0:  # binary outcomes, like delivery counts
        return rng.integers(0, 2, n).astype(float)
    if kind == 1:
        return rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 10), n)
    return rng.exponential(rng.uniform(0.5, 3), n).round(2)


def welch_df(a, b):
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    return (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))


welch = []
while len(welch) < 100:
    a, b = sample(rng.integers(2, 120)), sample(rng.integers(2, 120))
    if a.var() == 0 and b.var() == 0:
        continue
    r = stats.ttest_ind(a, b, equal_var=False)
    welch.append(
        {"a": a.tolist(), "b": b.tolist(), "t": float(r.statistic), "df": float(welch_df(a, b)), "p": float(r.pvalue)}
    )

anova = []
while len(anova) < 100:
    groups = [sample(rng.integers(2, 60)) for _ in range(rng.integers(2, 6))]
    if sum(((g - g.mean()) ** 2).sum() for g in groups) == 0:
        continue
    r = stats.f_oneway(*groups)
    anova.append(
        {
            "groups": [g.tolist() for g in groups],
            "f": float(r.statistic),
            "df_between": len(groups) - 1,
            "df_within": sum(len(g) for g in groups) - len(groups),
            "p": float(r.pvalue),
        }
    )

out = Path(__file__).with_name("stats_fixtures.json")
out.write_text(json.dumps({"scipy": scipy.__version__, "welch": welch, "anova": anova}, indent=1) + "\n")
print(f"wrote {out}")
