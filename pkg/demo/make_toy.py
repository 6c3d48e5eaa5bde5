"""Regenerate demo/toy.csv (committed for convenience; run from repo root).

A diamond pattern graph over (y, x1, x2): either covariate can go
missing, and rows missing both are reachable through either branch.
Missingness depends on y and the still-observed covariate, so the
complete cases are a biased subsample by construction.
"""

from pathlib import Path

import numpy as np

from seqbalance import from_arrays

HERE = Path(__file__).parent
N = 500
SEED = 20260614


def main() -> None:
    rng = np.random.default_rng(SEED)
    x1 = rng.normal(0.0, 1.0, N)
    x2 = rng.normal(0.0, 1.0, N)
    eta = 0.8 + 1.2 * x1 - 0.9 * x2
    y = (rng.uniform(size=N) < 1.0 / (1.0 + np.exp(-eta))).astype(float)

    values = np.column_stack([y, x1, x2])
    # per-pattern log odds against staying complete
    lo_110 = -1.1 + 0.8 * y - 0.5 * x1  # x2 missing
    lo_101 = -1.3 - 0.6 * y + 0.4 * x2  # x1 missing
    lo_100 = -1.8 + 0.5 * y  # both missing
    odds = np.column_stack([np.exp(lo_110), np.exp(lo_101), np.exp(lo_100)])
    denom = 1.0 + odds.sum(axis=1)
    probs = np.column_stack([np.ones(N), odds]) / denom[:, None]

    bits = {0: (1, 1, 1), 1: (1, 1, 0), 2: (1, 0, 1), 3: (1, 0, 0)}
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    draw = (rng.uniform(size=N)[:, None] > cum).sum(axis=1)
    mask = np.array([bits[i] for i in draw], dtype=bool)

    ds = from_arrays(
        values=np.where(mask, values, np.nan),
        mask=mask,
        column_names=["y", "x1", "x2"],
        column_kinds=["discrete", "continuous", "continuous"],
    )
    ds.to_csv(HERE / "toy.csv")
    counts = {str(p): c for p, c in sorted(ds.pattern_counts().items(), key=lambda kv: str(kv[0]))}
    print(f"wrote {HERE / 'toy.csv'}: {N} rows, patterns {counts}")


if __name__ == "__main__":
    main()
