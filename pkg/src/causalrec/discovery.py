"""Constraint-based structure learning over session tokens.

Given a conditional-independence test and a significance level, this module
learns a partial ancestral graph: skeleton search with growing conditioning
sets, unshielded-collider orientation, an optional possible-d-sep refinement
pass, and orientation rules applied to a fixed point.  Every scan order is
lexicographic by node index, so runs are reproducible; mark refinement is
monotone (circles may become arrows or tails, never the reverse).

Sessions are independent: nothing here shares mutable state, so separate
sessions may be learned in parallel.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

from .pag import EdgeMark, NodeId, Pag, SepsetTable

# independence test over matrix indices: (i, j, conditioning set) -> bool
CiFunction = Callable[[int, int, tuple[int, ...]], bool]

ARROW = EdgeMark.ARROW
TAIL = EdgeMark.TAIL
CIRCLE = EdgeMark.CIRCLE


@dataclass(frozen=True)
class DiscoveryConfig:
    """Knobs for the learner.

    ``max_cond_size=None`` lets the caller derive a cap from the effective
    sample size; ``possible_dsep="auto"`` runs the refinement pass only when
    collider orientation produced a bidirected edge.
    """

    alpha: float = 0.05
    max_cond_size: int | None = None
    rule_set: str = "core"
    possible_dsep: bool | str = "auto"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.max_cond_size is not None and self.max_cond_size < 0:
            raise ValueError("max_cond_size must be non-negative")
        if self.rule_set not in ("core", "extended"):
            raise ValueError(f"unknown rule_set {self.rule_set!r}")
        if self.possible_dsep not in (True, False, "auto"):
            raise ValueError(f"possible_dsep must be True, False or 'auto'")


def learn_skeleton(
    ci: CiFunction, nodes: Sequence[NodeId], cfg: DiscoveryConfig
) -> tuple[Pag, SepsetTable]:
    """Prune the complete graph by testing conditioning sets of growing size.

    For each still-adjacent pair (scanned lexicographically) and each size k,
    subsets are drawn from the current adjacencies of either endpoint; the
    first separating set found removes the edge and is recorded.
    """
    g = Pag.complete(nodes)
    sepsets = SepsetTable()
    cap = cfg.max_cond_size if cfg.max_cond_size is not None else max(0, len(nodes) - 2)
    ordered = g.nodes
    k = 0
    while True:
        for x, y in combinations(ordered, 2):
            if not g.adjacent(x, y):
                continue
            pool_x = tuple(n.index for n in g.neighbors(x) if n != y)
            pool_y = tuple(n.index for n in g.neighbors(y) if n != x)
            seen: set[tuple[int, ...]] = set()
            separated = False
            for pool in (pool_x, pool_y):
                if separated or len(pool) < k:
                    continue
                for zs in combinations(pool, k):
                    if zs in seen:
                        continue
                    seen.add(zs)
                    if ci(x.index, y.index, zs):
                        g.remove_edge(x, y)
                        sepsets.put(x.index, y.index, zs)
                        separated = True
                        break
        if k >= cap:
            break
        largest_pool = 0
        for x, y in combinations(ordered, 2):
            if g.adjacent(x, y):
                largest_pool = max(
                    largest_pool,
                    len(g.neighbors(x)) - 1,
                    len(g.neighbors(y)) - 1,
                )
        if largest_pool <= k:
            break
        k += 1
    return g, sepsets


def orient_colliders(g: Pag, sepsets: SepsetTable) -> Pag:
    """Put arrowheads at v for every unshielded triple u *-* v *-* w whose
    separating set for (u, w) does not contain v."""
    for v in g.nodes:
        nbrs = g.neighbors(v)
        for u, w in combinations(nbrs, 2):
            if g.adjacent(u, w):
                continue
            if not sepsets.contains(v.index, u.index, w.index):
                g.set_mark(u, v, ARROW)
                g.set_mark(w, v, ARROW)
    return g


# -- orientation rules ---------------------------------------------------------


def _rule_r1(g: Pag, sepsets: SepsetTable) -> bool:
    # [R1] a *-> b o-* c with a, c non-adjacent  =>  a *-> b -> c
    changed = False
    for b in g.nodes:
        nbrs = g.neighbors(b)
        heads = [a for a in nbrs if g.mark_at(a, b) == ARROW]
        circles = [c for c in nbrs if g.mark_at(c, b) == CIRCLE]
        for a in heads:
            for c in circles:
                if a == c or g.adjacent(a, c):
                    continue
                if g.mark_at(c, b) != CIRCLE:  # may have been oriented this pass
                    continue
                g.set_mark(c, b, TAIL)
                g.set_mark(b, c, ARROW)
                changed = True
    return changed


def _rule_r2(g: Pag, sepsets: SepsetTable) -> bool:
    # [R2] a -> b *-> c  or  a *-> b -> c, with a *-o c  =>  a *-> c
    changed = False
    for a in g.nodes:
        for c in g.neighbors(a):
            if g.mark_at(a, c) != CIRCLE:
                continue
            for b in g.neighbors(a):
                if b == c or not g.adjacent(b, c):
                    continue
                chain1 = (
                    g.mark_at(a, b) == ARROW
                    and g.mark_at(b, a) == TAIL
                    and g.mark_at(b, c) == ARROW
                )
                chain2 = (
                    g.mark_at(a, b) == ARROW
                    and g.mark_at(b, c) == ARROW
                    and g.mark_at(c, b) == TAIL
                )
                if chain1 or chain2:
                    g.set_mark(a, c, ARROW)
                    changed = True
                    break
    return changed


def _rule_r3(g: Pag, sepsets: SepsetTable) -> bool:
    # [R3] a *-> b <-* c, a *-o v o-* c, a, c non-adjacent, v *-o b  =>  v *-> b
    changed = False
    for b in g.nodes:
        nbrs_b = g.neighbors(b)
        for v in nbrs_b:
            if g.mark_at(v, b) != CIRCLE:
                continue
            shared = [
                n
                for n in nbrs_b
                if n != v
                and g.mark_at(n, b) == ARROW
                and g.adjacent(n, v)
                and g.mark_at(n, v) == CIRCLE
            ]
            for a, c in combinations(shared, 2):
                if not g.adjacent(a, c):
                    g.set_mark(v, b, ARROW)
                    changed = True
                    break
    return changed


def _is_parent(g: Pag, x: NodeId, y: NodeId) -> bool:
    return (
        g.adjacent(x, y)
        and g.mark_at(x, y) == ARROW
        and g.mark_at(y, x) == TAIL
    )


def _find_discriminating_source(
    g: Pag, a: NodeId, b: NodeId, c: NodeId
) -> tuple[NodeId, ...] | None:
    """Search for d completing a discriminating path <d, ..., a, b, c> for b.

    Every node strictly between d and b must be a collider on the path and a
    parent of c; d itself must be non-adjacent to c.  Returns the path from d
    to b or None.
    """
    # depth-first over simple partial paths <front, ..., a, b>
    stack: list[tuple[NodeId, ...]] = [(a, b)]
    while stack:
        path = stack.pop()
        front = path[0]
        for w in reversed(g.neighbors(front)):
            if w in path or w == c:
                continue
            if g.mark_at(w, front) != ARROW:  # need arrowhead into the collider
                continue
            if not g.adjacent(w, c):
                return (w,) + path
            if _is_parent(g, w, c) and g.mark_at(front, w) == ARROW:
                stack.append((w,) + path)
    return None


def _rule_r4(g: Pag, sepsets: SepsetTable) -> bool:
    # [R4] discriminating path <d, ..., a, b, c> with b o-* c:
    #      b in sepset(d, c)  =>  b -> c;  otherwise  a <-> b <-> c
    changed = False
    for b in g.nodes:
        for c in g.neighbors(b):
            if g.mark_at(c, b) != CIRCLE:
                continue
            starts = [
                a
                for a in g.neighbors(b)
                if a != c and g.mark_at(b, a) == ARROW and _is_parent(g, a, c)
            ]
            for a in starts:
                found = _find_discriminating_source(g, a, b, c)
                if found is None:
                    continue
                d = found[0]
                if sepsets.contains(b.index, d.index, c.index):
                    g.set_mark(c, b, TAIL)
                    g.set_mark(b, c, ARROW)
                else:
                    g.set_mark(a, b, ARROW)
                    g.set_mark(b, a, ARROW)
                    g.set_mark(b, c, ARROW)
                    g.set_mark(c, b, ARROW)
                changed = True
                break
    return changed


def _possibly_directed(g: Pag, u: NodeId, v: NodeId) -> bool:
    # edge u *-* v traversable from u to v: no arrowhead back at u, no tail at v
    return g.mark_at(v, u) != ARROW and g.mark_at(u, v) != TAIL


def _uncovered_pd_first_steps(g: Pag, a: NodeId, target: NodeId) -> set[NodeId]:
    """First nodes of uncovered possibly-directed paths from a to target."""
    firsts: set[NodeId] = set()
    for e in g.neighbors(a):
        if e == target:
            if _possibly_directed(g, a, e):
                firsts.add(e)
            continue
        if not _possibly_directed(g, a, e):
            continue
        stack: list[tuple[NodeId, ...]] = [(a, e)]
        hit = False
        while stack and not hit:
            path = stack.pop()
            u, v = path[-2], path[-1]
            for w in g.neighbors(v):
                if w in path or not _possibly_directed(g, v, w) or g.adjacent(u, w):
                    continue
                if w == target:
                    hit = True
                    break
                stack.append(path + (w,))
        if hit:
            firsts.add(e)
    return firsts


def _rule_r8(g: Pag, sepsets: SepsetTable) -> bool:
    # [R8] a o-> c and a -> b -> c  =>  a -> c
    changed = False
    for a in g.nodes:
        for c in g.neighbors(a):
            if g.mark_at(c, a) != CIRCLE or g.mark_at(a, c) != ARROW:
                continue
            for b in g.neighbors(a):
                if b != c and _is_parent(g, a, b) and _is_parent(g, b, c):
                    g.set_mark(c, a, TAIL)
                    changed = True
                    break
    return changed


def _rule_r9(g: Pag, sepsets: SepsetTable) -> bool:
    # [R9] a o-> c with an uncovered possibly-directed path <a, e, ..., c>
    #      whose first node e is non-adjacent to c  =>  a -> c
    changed = False
    for a in g.nodes:
        for c in g.neighbors(a):
            if g.mark_at(c, a) != CIRCLE or g.mark_at(a, c) != ARROW:
                continue
            firsts = _uncovered_pd_first_steps(g, a, c)
            if any(e != c and not g.adjacent(e, c) for e in firsts):
                g.set_mark(c, a, TAIL)
                changed = True
    return changed


def _rule_r10(g: Pag, sepsets: SepsetTable) -> bool:
    # [R10] a o-> c, b -> c <- d, uncovered possibly-directed paths a..b and
    #       a..d starting at non-adjacent distinct nodes  =>  a -> c
    changed = False
    for a in g.nodes:
        for c in g.neighbors(a):
            if g.mark_at(c, a) != CIRCLE or g.mark_at(a, c) != ARROW:
                continue
            parents = [p for p in g.neighbors(c) if p != a and _is_parent(g, p, c)]
            fired = False
            for b, d in combinations(parents, 2):
                firsts_b = _uncovered_pd_first_steps(g, a, b)
                firsts_d = _uncovered_pd_first_steps(g, a, d)
                for e in sorted(firsts_b):
                    for f in sorted(firsts_d):
                        if e != f and not g.adjacent(e, f):
                            g.set_mark(c, a, TAIL)
                            changed = True
                            fired = True
                            break
                    if fired:
                        break
                if fired:
                    break
    return changed


_CORE_RULES = (_rule_r1, _rule_r2, _rule_r3, _rule_r4)
_EXTENDED_RULES = _CORE_RULES + (_rule_r8, _rule_r9, _rule_r10)


def apply_orientation_rules(g: Pag, sepsets: SepsetTable, cfg: DiscoveryConfig) -> Pag:
    """Run the configured rule set to a fixed point (deterministic scans)."""
    rules = _CORE_RULES if cfg.rule_set == "core" else _EXTENDED_RULES
    changed = True
    while changed:
        changed = False
        for rule in rules:
            changed |= rule(g, sepsets)
    return g


# -- possible-d-sep refinement ---------------------------------------------------


def possible_dsep_set(g: Pag, x: NodeId) -> list[NodeId]:
    """Nodes reachable from x along paths whose every inner triple is either
    a collider or part of a triangle (a conservative superset is fine: extra
    candidates only cost extra tests)."""
    reached: set[NodeId] = set()
    seen_states: set[tuple[int, int]] = set()
    queue: deque[tuple[NodeId, NodeId]] = deque()
    for n in g.neighbors(x):
        queue.append((x, n))
        seen_states.add((x.index, n.index))
        reached.add(n)
    while queue:
        u, v = queue.popleft()
        for w in g.neighbors(v):
            if w == u or (v.index, w.index) in seen_states:
                continue
            collider = g.mark_at(u, v) == ARROW and g.mark_at(w, v) == ARROW
            triangle = g.adjacent(u, w)
            if collider or triangle:
                seen_states.add((v.index, w.index))
                reached.add(w)
                queue.append((v, w))
    reached.discard(x)
    return sorted(reached)


def _refine_with_possible_dsep(
    ci: CiFunction, g: Pag, sepsets: SepsetTable, cap: int
) -> bool:
    pds = {n: possible_dsep_set(g, n) for n in g.nodes}
    removed = False
    for x, y, _, _ in list(g.edges()):
        pool_x = tuple(n.index for n in pds[x] if n not in (x, y))
        pool_y = tuple(n.index for n in pds[y] if n not in (x, y))
        seen: set[tuple[int, ...]] = set()
        separated = False
        for k in range(1, cap + 1):
            for pool in (pool_x, pool_y):
                if separated or len(pool) < k:
                    continue
                for zs in combinations(pool, k):
                    if zs in seen:
                        continue
                    seen.add(zs)
                    if ci(x.index, y.index, zs):
                        g.remove_edge(x, y)
                        sepsets.put(x.index, y.index, zs)
                        separated = True
                        removed = True
                        break
            if separated:
                break
    return removed


def _reset_to_circles(g: Pag) -> Pag:
    fresh = Pag(g.nodes)
    for x, y, _, _ in g.edges():
        fresh.add_edge(x, y, CIRCLE, CIRCLE)
    return fresh


def learn_pag(
    ci: CiFunction, nodes: Sequence[NodeId], cfg: DiscoveryConfig
) -> tuple[Pag, SepsetTable]:
    """Full pipeline: skeleton, colliders, optional possible-d-sep
    refinement with re-orientation, then orientation rules."""
    g, sepsets = learn_skeleton(ci, nodes, cfg)
    orient_colliders(g, sepsets)
    run_pds = cfg.possible_dsep is True or (
        cfg.possible_dsep == "auto" and g.any_bidirected()
    )
    if run_pds:
        cap = cfg.max_cond_size if cfg.max_cond_size is not None else max(0, len(nodes) - 2)
        if _refine_with_possible_dsep(ci, g, sepsets, cap):
            g = _reset_to_circles(g)
            orient_colliders(g, sepsets)
    apply_orientation_rules(g, sepsets, cfg)
    return g, sepsets
