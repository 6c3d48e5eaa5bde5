"""Shared fixtures: reference graph topologies and small datasets."""

from __future__ import annotations

import numpy as np
import pytest

from seqbalance import Pattern, build_graph, ccmv_graph, from_arrays
from seqbalance.simulate import (
    ccmv_study_graph,
    default_study_graph,
    pruned_study_graph,
)


@pytest.fixture
def g_ccmv3():
    """d=3: every incomplete pattern hangs off the complete one."""
    return ccmv_graph(3, ["111", "110", "101", "010", "100"])


@pytest.fixture
def g_chain3():
    """d=3 single chain 111 -> 110 -> 100."""
    return build_graph(3, [("111", "110"), ("110", "100")])


@pytest.fixture
def g_twopath3():
    """d=3: 100 is reachable directly and through 110."""
    return build_graph(3, [("111", "110"), ("110", "100"), ("111", "100")])


@pytest.fixture
def g_forked3():
    """d=3 five-node graph where 100 and 010 each have two parents."""
    return build_graph(
        3,
        [
            ("111", "110"),
            ("111", "101"),
            ("110", "010"),
            ("110", "100"),
            ("101", "100"),
            ("111", "010"),
        ],
    )


@pytest.fixture
def g_forked3_type2(g_forked3):
    return build_graph(
        3,
        [(str(s), str(r)) for s, r in g_forked3.edges],
        coeff_type={"010": "type2", "100": "type2", "110": "type2", "101": "type2"},
    )


@pytest.fixture
def g_forked3_type3(g_forked3):
    return build_graph(
        3,
        [(str(s), str(r)) for s, r in g_forked3.edges],
        coeff_type={"010": "type3", "100": "type3", "110": "type3", "101": "type3"},
        type3_constants={
            "110": {"111": 1.0},
            "101": {"111": 1.0},
            "010": {"110": 0.5, "111": 0.5},
            "100": {"110": 0.5, "101": 0.5},
        },
    )


@pytest.fixture
def g_study():
    return default_study_graph()


@pytest.fixture
def g_study_pruned():
    return pruned_study_graph()


@pytest.fixture
def g_study_ccmv():
    return ccmv_study_graph()


def make_masked_dataset(
    rng: np.random.Generator,
    n: int,
    graph,
    odds_scale: float = 0.5,
    names=None,
):
    """Small synthetic dataset whose patterns all come from the graph.

    Column 0 is binary, the rest continuous.  Pattern assignment is a
    simple multinomial from random per-node log odds, enough structure
    for fitting tests without the full study generator.
    """
    d = graph.d
    x = rng.uniform(-2.0, 2.0, size=(n, d - 1))
    y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-(0.3 + x[:, 0])))).astype(float)
    values = np.column_stack([y, x])
    nodes = sorted(graph.nodes, key=str)
    logits = np.column_stack(
        [
            np.zeros(n)
            if p == graph.source
            else rng.normal(0.0, odds_scale)
            + odds_scale * values[:, list(p.observed_indices)].sum(axis=1) * 0.2
            for p in nodes
        ]
    )
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    draw = (rng.uniform(size=n)[:, None] > cum).sum(axis=1)
    mask = np.array([nodes[i].bits for i in draw], dtype=bool)
    if names is None:
        names = ["y"] + [f"x{j}" for j in range(1, d)]
    return from_arrays(
        values=np.where(mask, values, np.nan),
        mask=mask,
        column_names=names,
        column_kinds=["discrete"] + ["continuous"] * (d - 1),
    )


@pytest.fixture
def small_forked_dataset(g_forked3):
    rng = np.random.default_rng(42)
    ds = make_masked_dataset(rng, 600, g_forked3)
    assert ds.complete_rows.size > 50
    return ds
