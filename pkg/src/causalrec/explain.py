"""Potential-influence paths over a learned graph and the counterfactual
explanation search.

A potential-influence (PI) path keeps its endpoints dependent when every node
on the path is conditioned on: each internal node must be an unshielded
collider between its path neighbors (a single edge qualifies trivially).  The
PI tree collects, per node, the shortest such path from the recommendation;
candidate explanation sets are drawn from it by radius, probed against the
model in order of mean distance, and the first set that flips the top-1 to an
acceptable replacement is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations
from typing import Iterable, Mapping

from .citest import PartialCorrelationCiTester, correlation_from_attention
from .discovery import DiscoveryConfig, learn_pag
from .models import ModelInterface, Session
from .pag import GraphError, NodeId, Pag

# sentinel for "derive the replacement pool from the original top-k slate"
TOP_K_POOL = "top-k"

NO_EXPLANATION_HINT = (
    "no explanation set changed the recommendation at this significance level; "
    "rerun with a larger alpha to admit a denser graph"
)


class ModelQueryError(RuntimeError):
    """A model query failed while probing a candidate explanation set."""

    def __init__(self, candidate: tuple[str, ...], cause: Exception):
        super().__init__(f"model query failed for candidate set {list(candidate)}: {cause}")
        self.candidate = candidate


@dataclass(frozen=True)
class PiTree:
    """Per-node shortest PI-path depth from the root, with one representative
    parent per node (ties resolved to the lowest node index)."""

    root: NodeId
    depth: Mapping[NodeId, int]
    parent: Mapping[NodeId, NodeId | None]

    @property
    def nodes(self) -> tuple[NodeId, ...]:
        return tuple(sorted(self.depth))

    @property
    def members(self) -> tuple[NodeId, ...]:
        return tuple(n for n in self.nodes if n != self.root)

    def depth_of(self, node: NodeId) -> int:
        return self.depth[node]


@dataclass(frozen=True)
class PiSet:
    """Candidate explanation set: ``radius`` members, each reachable from the
    root along a PI-path that stays inside the set."""

    members: frozenset[NodeId]
    radius: int

    def __post_init__(self):
        if len(self.members) != self.radius:
            raise ValueError(f"set size {len(self.members)} != radius {self.radius}")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(n.label for n in sorted(self.members))


@dataclass(frozen=True)
class ProbeRecord:
    """One model query: the removed items, the resulting top item, and
    whether it was accepted as a counterfactual."""

    removed: tuple[str, ...]
    top_item: str | None
    accepted: bool


@dataclass(frozen=True)
class ExplanationResult:
    explanation: PiSet | None
    alternative: str | None
    forward_passes: int
    pag: Pag | None = None
    probe_log: tuple[ProbeRecord, ...] = ()
    hint: str | None = None

    def __post_init__(self):
        if (self.explanation is None) != (self.alternative is None):
            raise ValueError("explanation and alternative must be both set or both empty")

    @property
    def found(self) -> bool:
        return self.explanation is not None

    def to_json_dict(self) -> dict:
        return {
            "explanation": list(self.explanation.labels) if self.explanation else [],
            "alternative": self.alternative,
            "radius": self.explanation.radius if self.explanation else None,
            "forward_passes": self.forward_passes,
            "pag": self.pag.to_text() if self.pag is not None else None,
            "hint": self.hint,
        }


def is_pi_path(g: Pag, path: Iterable[NodeId], *, allow_circle_heads: bool = False) -> bool:
    """True iff every internal node of the path is an unshielded collider
    between its neighbors on the path."""
    seq = tuple(path)
    if len(seq) < 2 or len(set(seq)) != len(seq):
        raise GraphError("path must contain at least two distinct nodes")
    for a, b in zip(seq, seq[1:]):
        if not g.adjacent(a, b):
            raise GraphError(f"consecutive path nodes {a.label}, {b.label} are not adjacent")
    return all(
        g.is_unshielded_collider(u, v, w, allow_circle_heads=allow_circle_heads)
        for u, v, w in zip(seq, seq[1:], seq[2:])
    )


def build_pi_tree(g: Pag, root: NodeId, *, allow_circle_heads: bool = False) -> PiTree:
    """Breadth-first search over simple PI-paths from the root.

    A node enters the tree at the length of its shortest PI-path; when
    several such paths arrive in the same level, the parent with the lowest
    index is kept.  The frontier holds whole paths because whether a path can
    be extended depends on its final two nodes and on the nodes it already
    visited; this is exponential in pathological dense graphs but cheap at
    session scale.
    """
    depth: dict[NodeId, int] = {root: 0}
    parent: dict[NodeId, NodeId | None] = {root: None}
    frontier: list[tuple[NodeId, ...]] = [(root,)]
    level = 0
    while frontier:
        level += 1
        next_frontier: list[tuple[NodeId, ...]] = []
        discovered: dict[NodeId, set[NodeId]] = {}
        for path in frontier:
            v = path[-1]
            u = path[-2] if len(path) >= 2 else None
            for w in g.neighbors(v):
                if w in path:
                    continue
                if u is not None and not g.is_unshielded_collider(
                    u, v, w, allow_circle_heads=allow_circle_heads
                ):
                    continue
                next_frontier.append(path + (w,))
                if w not in depth:
                    discovered.setdefault(w, set()).add(v)
        for w, parents in discovered.items():
            depth[w] = level
            parent[w] = min(parents)
        frontier = next_frontier
    return PiTree(root=root, depth=depth, parent=parent)


def _reachable_within(
    g: Pag, root: NodeId, members: frozenset[NodeId], allow_circle_heads: bool
) -> set[NodeId]:
    """Members reachable from the root along simple PI-paths whose non-root
    nodes all lie inside ``members``."""
    reached: set[NodeId] = set()
    stack: list[tuple[NodeId, ...]] = [(root,)]
    while stack:
        path = stack.pop()
        v = path[-1]
        u = path[-2] if len(path) >= 2 else None
        for w in g.neighbors(v):
            if w in path or w not in members:
                continue
            if u is not None and not g.is_unshielded_collider(
                u, v, w, allow_circle_heads=allow_circle_heads
            ):
                continue
            reached.add(w)
            stack.append(path + (w,))
    return reached


def enumerate_pi_sets(
    tree: PiTree, g: Pag, r: int, *, allow_circle_heads: bool = False
) -> list[PiSet]:
    """All valid size-r candidate sets, in probe order.

    Candidates are drawn from tree nodes that temporally precede the root;
    a set qualifies when each member is PI-reachable without leaving the set.
    Sets are ordered by ascending total tree depth, then by recency of the
    positions they contain (later positions first), then lexicographically.
    """
    if r < 1:
        raise ValueError(f"radius must be >= 1, got {r}")
    candidates = [n for n in tree.members if n.index < tree.root.index]
    scored: list[tuple[tuple, PiSet]] = []
    for combo in combinations(candidates, r):
        members = frozenset(combo)
        if _reachable_within(g, tree.root, members, allow_circle_heads) != members:
            continue
        indices = sorted((n.index for n in combo), reverse=True)
        key = (
            sum(tree.depth_of(n) for n in combo),
            tuple(-i for i in indices),
            tuple(sorted(n.index for n in combo)),
        )
        scored.append((key, PiSet(members, r)))
    scored.sort(key=lambda kv: kv[0])
    return [ps for _, ps in scored]


def find_explanation(
    g: Pag,
    model: ModelInterface,
    session: Session,
    recommendation: str,
    pool: set[str] | None = None,
    *,
    allow_circle_heads: bool = False,
) -> ExplanationResult:
    """Probe candidate sets radius by radius and return the first whose
    removal changes the top-1 (to a pool member, when a pool is given).

    ``pool=None`` accepts any changed top-1; an explicitly empty pool can
    never be satisfied.  The result counts one forward pass per probe; the
    caller owns the query that produced ``recommendation`` in the first
    place.
    """
    root = g.node_by_label(recommendation)
    tree = build_pi_tree(g, root, allow_circle_heads=allow_circle_heads)
    probes: list[ProbeRecord] = []
    for r in range(1, len(session)):
        for candidate in enumerate_pi_sets(tree, g, r, allow_circle_heads=allow_circle_heads):
            removed = candidate.labels
            reduced = session.without(removed)
            try:
                top_item = model.recommend(reduced, 1)[0][0]
            except Exception as e:
                raise ModelQueryError(removed, e) from e
            accepted = top_item != recommendation and (pool is None or top_item in pool)
            probes.append(ProbeRecord(removed, top_item, accepted))
            if accepted:
                return ExplanationResult(
                    explanation=candidate,
                    alternative=top_item,
                    forward_passes=len(probes),
                    probe_log=tuple(probes),
                )
    return ExplanationResult(
        explanation=None,
        alternative=None,
        forward_passes=len(probes),
        probe_log=tuple(probes),
        hint=NO_EXPLANATION_HINT,
    )


def explain_session(
    session: Session,
    model: ModelInterface,
    *,
    alpha: float = 0.05,
    k: int = 5,
    pool: set[str] | str | None = TOP_K_POOL,
    effective_n: int | None = None,
    config: DiscoveryConfig | None = None,
    allow_circle_heads: bool = False,
) -> ExplanationResult:
    """End-to-end pipeline for one session.

    Gets the model's top-k, rebuilds attention over the session with the
    top-1 appended, turns it into a correlation matrix, learns the graph,
    and searches for a minimal explanation set.  The returned forward-pass
    count covers the initial recommendation query plus every probe.
    """
    if len(session) < 2:
        raise ValueError("need at least two session items to explain a recommendation")
    top = model.recommend(session, k)
    recommendation = top[0][0]
    if pool == TOP_K_POOL:
        pool_set: set[str] | None = {item for item, _ in top[1:]}
    else:
        pool_set = pool  # type: ignore[assignment]
    extended = session.extended(recommendation)
    attention = model.attention(extended)
    corr = correlation_from_attention(attention, effective_sample_size=effective_n)
    cfg = config if config is not None else DiscoveryConfig(alpha=alpha)
    if cfg.max_cond_size is None:
        cap = min(len(extended.items) - 2, corr.effective_sample_size - 4)
        cfg = replace(cfg, max_cond_size=max(0, cap))
    tester = PartialCorrelationCiTester(corr, cfg.alpha)
    nodes = [NodeId(i, label) for i, label in enumerate(extended.items)]
    g, _ = learn_pag(tester, nodes, cfg)
    inner = find_explanation(
        g, model, session, recommendation, pool_set, allow_circle_heads=allow_circle_heads
    )
    initial = ProbeRecord(removed=(), top_item=recommendation, accepted=False)
    return replace(
        inner,
        forward_passes=inner.forward_passes + 1,
        pag=g,
        probe_log=(initial,) + inner.probe_log,
    )
