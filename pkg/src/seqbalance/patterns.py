"""Missingness patterns and the directed graphs imposed on them.

A pattern is a fixed-length vector of 0/1 indicators, one per data
coordinate, with 1 meaning observed.  A pattern graph is a DAG over a set
of patterns whose unique source is the fully observed pattern and whose
edges only point from a pattern to one that observes strictly less.  The
graph encodes which donor patterns identify each partially observed one,
and each non-source node carries a mixture-coefficient type that controls
how contributions from multiple parents are combined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from .errors import GraphError

COEFF_TYPES = ("type1", "type2", "type3")


@dataclass(frozen=True)
class Pattern:
    """An observation pattern: ``bits[j] == 1`` means coordinate j is observed."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.bits:
            raise GraphError("pattern must have at least one coordinate")
        if any(b not in (0, 1) for b in self.bits):
            raise GraphError(f"pattern bits must be 0 or 1, got {self.bits!r}")

    @classmethod
    def parse(cls, text: str) -> "Pattern":
        stripped = text.strip()
        if not stripped or any(c not in "01" for c in stripped):
            raise GraphError(f"cannot parse pattern from {text!r}: expected a 0/1 string")
        return cls(tuple(int(c) for c in stripped))

    @classmethod
    def complete(cls, d: int) -> "Pattern":
        return cls((1,) * d)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def n_observed(self) -> int:
        return sum(self.bits)

    @property
    def observed_indices(self) -> tuple[int, ...]:
        return tuple(j for j, b in enumerate(self.bits) if b)

    def observes(self, j: int) -> bool:
        return self.bits[j] == 1

    def is_complete(self) -> bool:
        return all(b == 1 for b in self.bits)

    def dominates(self, other: "Pattern") -> bool:
        """Strict partial order: observes a proper superset of coordinates."""
        if len(self) != len(other):
            raise GraphError("patterns of different length are not comparable")
        return self != other and all(a >= b for a, b in zip(self.bits, other.bits))


def parse_pattern(text: str) -> Pattern:
    return Pattern.parse(text)


@dataclass(frozen=True)
class Path:
    """A directed path of distinct patterns starting at the complete pattern."""

    vertices: tuple[Pattern, ...]

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def target(self) -> Pattern:
        return self.vertices[-1]


@dataclass
class ValidationReport:
    """Outcome of the regularity check, one message per violation."""

    violations: list[str] = field(default_factory=list)

    @property
    def is_regular(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.is_regular:
            return "graph is regular"
        return "\n".join(self.violations)


@dataclass(frozen=True)
class PatternGraph:
    """A DAG over patterns with per-node mixture-coefficient types.

    ``coeff_type`` holds explicit declarations only; nodes without one
    default to type1.  ``type3_constants`` maps each type3 node to its
    fixed parent weights.
    """

    d: int
    nodes: frozenset[Pattern]
    edges: frozenset[tuple[Pattern, Pattern]]
    coeff_type: Mapping[Pattern, str] = field(default_factory=dict)
    type3_constants: Mapping[Pattern, Mapping[Pattern, float]] = field(default_factory=dict)

    @property
    def source(self) -> Pattern:
        return Pattern.complete(self.d)

    @cached_property
    def _parent_map(self) -> dict[Pattern, tuple[Pattern, ...]]:
        out: dict[Pattern, list[Pattern]] = {r: [] for r in self.nodes}
        for s, r in self.edges:
            out[r].append(s)
        return {r: tuple(sorted(ps, key=str)) for r, ps in out.items()}

    @cached_property
    def _child_map(self) -> dict[Pattern, tuple[Pattern, ...]]:
        out: dict[Pattern, list[Pattern]] = {r: [] for r in self.nodes}
        for s, r in self.edges:
            out[s].append(r)
        return {s: tuple(sorted(cs, key=str)) for s, cs in out.items()}

    def parents(self, r: Pattern) -> tuple[Pattern, ...]:
        try:
            return self._parent_map[r]
        except KeyError:
            raise GraphError(f"pattern {r} is not a node of this graph") from None

    def children(self, s: Pattern) -> tuple[Pattern, ...]:
        try:
            return self._child_map[s]
        except KeyError:
            raise GraphError(f"pattern {s} is not a node of this graph") from None

    def coeff_type_of(self, r: Pattern) -> str:
        return self.coeff_type.get(r, "type1")

    @property
    def non_source_nodes(self) -> tuple[Pattern, ...]:
        return tuple(r for r in sorted(self.nodes, key=str) if r != self.source)

    def validate(self) -> ValidationReport:
        """Check regularity; returns every violation rather than the first."""
        report = ValidationReport()
        add = report.violations.append

        for r in self.nodes:
            if len(r) != self.d:
                add(f"node {r} has length {len(r)}, expected {self.d}")
        for s, r in sorted(self.edges, key=lambda e: (str(e[0]), str(e[1]))):
            if s not in self.nodes or r not in self.nodes:
                add(f"edge {s}->{r} references a pattern that is not a node")
                continue
            if not s.dominates(r):
                add(
                    f"edge {s}->{r} violates the partial order: "
                    "the tail must observe a strict superset of the head"
                )

        complete = self.source
        if complete not in self.nodes:
            add(f"complete pattern {complete} is missing from the node set")
        roots = [r for r in sorted(self.nodes, key=str) if not self._parent_map.get(r)]
        for r in roots:
            if r != complete:
                add(f"node {r} has no parents but is not the complete pattern")

        cycle = self._find_cycle()
        if cycle:
            add("cycle found: " + " -> ".join(str(p) for p in cycle))

        reachable = self._reachable_from_source()
        for r in sorted(self.nodes, key=str):
            if r != complete and r not in reachable:
                add(f"node {r} is not reachable from the complete pattern")

        for r in sorted(self.nodes, key=str):
            ct = self.coeff_type.get(r)
            if ct is not None and ct not in COEFF_TYPES:
                add(f"node {r} declares unknown coefficient type {ct!r}")
            if self.coeff_type_of(r) == "type3" and r != complete:
                self._check_type3_constants(r, add)
        for r in sorted(self.type3_constants, key=str):
            if self.coeff_type_of(r) != "type3":
                add(f"node {r} carries type3 constants but is not declared type3")

        return report

    def _check_type3_constants(self, r: Pattern, add) -> None:
        consts = self.type3_constants.get(r)
        if consts is None:
            add(f"type3 node {r} is missing its parent constants")
            return
        parents = set(self._parent_map.get(r, ()))
        given = set(consts)
        if given != parents:
            add(
                f"type3 constants for {r} must cover exactly its parents "
                f"{sorted(map(str, parents))}, got {sorted(map(str, given))}"
            )
            return
        vals = list(consts.values())
        if any(v < 0 for v in vals):
            add(f"type3 constants for {r} must be nonnegative")
        if abs(sum(vals) - 1.0) > 1e-9:
            add(f"type3 constants for {r} must sum to 1, got {sum(vals)!r}")

    def _find_cycle(self) -> tuple[Pattern, ...] | None:
        WHITE, GRAY, BLACK = 0, 1, 2
        color = {r: WHITE for r in self.nodes}
        stack: list[Pattern] = []

        def visit(u: Pattern) -> tuple[Pattern, ...] | None:
            color[u] = GRAY
            stack.append(u)
            for v in self._child_map.get(u, ()):
                if v not in color:
                    continue
                if color[v] == GRAY:
                    i = stack.index(v)
                    return tuple(stack[i:] + [v])
                if color[v] == WHITE:
                    found = visit(v)
                    if found:
                        return found
            stack.pop()
            color[u] = BLACK
            return None

        for u in sorted(self.nodes, key=str):
            if color[u] == WHITE:
                found = visit(u)
                if found:
                    return found
        return None

    def _reachable_from_source(self) -> set[Pattern]:
        seen: set[Pattern] = set()
        if self.source not in self.nodes:
            return seen
        frontier = [self.source]
        seen.add(self.source)
        while frontier:
            u = frontier.pop()
            for v in self._child_map.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    frontier.append(v)
        return seen

    def enumerate_paths(self, r: Pattern) -> list[Path]:
        """All directed paths from the complete pattern to ``r``.

        Returned in lexicographic order of the vertex sequence; for the
        complete pattern itself the single trivial path is returned.
        Iterative stack walk; children are pushed in reverse sorted order
        so the smaller branch is always explored first.
        """
        if r not in self.nodes:
            raise GraphError(f"pattern {r} is not a node of this graph")
        out: list[Path] = []
        stack: list[list[Pattern]] = [[self.source]]
        while stack:
            trail = stack.pop()
            head = trail[-1]
            if head == r:
                out.append(Path(tuple(trail)))
                continue
            for child in reversed(self._child_map.get(head, ())):
                # the partial order forbids revisits, so no seen-set is needed
                stack.append(trail + [child])
        return out

    def processing_order(self) -> list[Pattern]:
        """Non-source nodes ordered by observed count descending, ties by string."""
        return sorted(
            (r for r in self.nodes if r != self.source),
            key=lambda r: (-r.n_observed, str(r)),
        )


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise GraphError(msg)


def graph_from_dict(obj: dict) -> PatternGraph:
    """Build a graph from the plain-dict JSON form (no regularity check)."""
    _require(isinstance(obj, dict), "graph document must be a JSON object")
    _require("d" in obj, "graph document is missing 'd'")
    d = obj["d"]
    _require(isinstance(d, int) and d >= 1, f"'d' must be a positive integer, got {d!r}")
    raw_nodes = obj.get("nodes")
    _require(isinstance(raw_nodes, list) and raw_nodes, "graph document needs a non-empty 'nodes' list")

    nodes: list[Pattern] = []
    for item in raw_nodes:
        p = Pattern.parse(str(item))
        _require(len(p) == d, f"node {p} has length {len(p)}, expected d={d}")
        nodes.append(p)
    node_set = frozenset(nodes)
    _require(len(node_set) == len(nodes), "duplicate nodes in graph document")

    edges: list[tuple[Pattern, Pattern]] = []
    for item in obj.get("edges", []):
        _require(
            isinstance(item, (list, tuple)) and len(item) == 2,
            f"edge entries must be [tail, head] pairs, got {item!r}",
        )
        s, r = Pattern.parse(str(item[0])), Pattern.parse(str(item[1]))
        _require(s in node_set, f"edge tail {s} is not a node")
        _require(r in node_set, f"edge head {r} is not a node")
        edges.append((s, r))

    coeff_type: dict[Pattern, str] = {}
    for key, val in (obj.get("coeff_type") or {}).items():
        p = Pattern.parse(str(key))
        _require(p in node_set, f"coeff_type key {p} is not a node")
        _require(
            val in COEFF_TYPES,
            f"coeff_type for {p} must be one of {COEFF_TYPES}, got {val!r}",
        )
        coeff_type[p] = val

    constants: dict[Pattern, dict[Pattern, float]] = {}
    for key, mapping in (obj.get("type3_constants") or {}).items():
        p = Pattern.parse(str(key))
        _require(p in node_set, f"type3_constants key {p} is not a node")
        _require(isinstance(mapping, dict), f"type3_constants for {p} must be an object")
        constants[p] = {
            Pattern.parse(str(parent)): float(v) for parent, v in mapping.items()
        }

    return PatternGraph(
        d=d,
        nodes=node_set,
        edges=frozenset(edges),
        coeff_type=coeff_type,
        type3_constants=constants,
    )


def graph_to_dict(g: PatternGraph) -> dict:
    obj: dict = {
        "d": g.d,
        "nodes": [str(r) for r in sorted(g.nodes, key=str)],
        "edges": [
            [str(s), str(r)]
            for s, r in sorted(g.edges, key=lambda e: (str(e[0]), str(e[1])))
        ],
    }
    if g.coeff_type:
        obj["coeff_type"] = {str(r): t for r, t in sorted(g.coeff_type.items(), key=lambda kv: str(kv[0]))}
    if g.type3_constants:
        obj["type3_constants"] = {
            str(r): {str(s): v for s, v in sorted(consts.items(), key=lambda kv: str(kv[0]))}
            for r, consts in sorted(g.type3_constants.items(), key=lambda kv: str(kv[0]))
        }
    return obj


def load_graph(path) -> PatternGraph:
    """Read a pattern graph from a JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise GraphError(f"cannot read graph file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GraphError(f"graph file {path} is not valid JSON: {exc}") from exc
    return graph_from_dict(obj)


def save_graph(g: PatternGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_dict(g), fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_graph(
    d: int,
    edges: Iterable[tuple[str, str]],
    coeff_type: Mapping[str, str] | None = None,
    type3_constants: Mapping[str, Mapping[str, float]] | None = None,
    extra_nodes: Iterable[str] = (),
) -> PatternGraph:
    """Convenience constructor from edge strings; nodes are inferred."""
    parsed_edges = [(Pattern.parse(s), Pattern.parse(r)) for s, r in edges]
    nodes = {p for e in parsed_edges for p in e}
    nodes.add(Pattern.complete(d))
    nodes.update(Pattern.parse(n) for n in extra_nodes)
    return PatternGraph(
        d=d,
        nodes=frozenset(nodes),
        edges=frozenset(parsed_edges),
        coeff_type={Pattern.parse(k): v for k, v in (coeff_type or {}).items()},
        type3_constants={
            Pattern.parse(k): {Pattern.parse(s): float(v) for s, v in consts.items()}
            for k, consts in (type3_constants or {}).items()
        },
    )


def ccmv_graph(d: int, nodes: Iterable[str]) -> PatternGraph:
    """Graph in which every incomplete pattern's sole parent is the complete one."""
    complete = Pattern.complete(d)
    parsed = [Pattern.parse(n) for n in nodes]
    edges = frozenset((complete, r) for r in parsed if r != complete)
    return PatternGraph(d=d, nodes=frozenset(parsed) | {complete}, edges=edges)
