"""Attention-ranking baseline, benchmark harness, and summary emission.

The baseline ranks session items by the attention weight the recommendation
token puts on them and grows a removal set greedily in that order, querying
the model after each addition.  The harness runs both methods per session,
records replacement positions, set sizes and forward passes, and writes
CSV tables plus self-contained SVG bar charts.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .explain import ExplanationResult, PiSet, ProbeRecord, explain_session
from .models import ModelInterface, SemRecommender, Session, random_sem_spec
from .pag import NodeId

METHOD_CAUSAL = "causal"
METHOD_ATTENTION = "attention"
OUTSIDE_BIN = "outside"


def attention_baseline(
    model: ModelInterface,
    session: Session,
    recommendation: str,
    pool: set[str] | None = None,
) -> ExplanationResult:
    """Greedy removal in descending attention-weight order.

    Items are ranked by the recommendation token's attention row (ties go to
    the more recent position); the removal set grows one item at a time until
    the top-1 changes to an acceptable replacement or only one session item
    would remain.  Forward passes count the initial recommendation query plus
    one per probe.
    """
    extended = session.extended(recommendation)
    attention = model.attention(extended)
    row = attention.values[-1]
    ranked = sorted(
        ((float(row[i]), i, item) for i, item in enumerate(session.items)),
        key=lambda t: (-t[0], -t[1]),
    )
    probes: list[ProbeRecord] = [ProbeRecord((), recommendation, False)]
    removed: list[str] = []
    for _, _, item in ranked[: len(session) - 1]:
        removed.append(item)
        reduced = session.without(removed)
        top_item = model.recommend(reduced, 1)[0][0]
        accepted = top_item != recommendation and (pool is None or top_item in pool)
        ordered = tuple(it for it in session.items if it in removed)
        probes.append(ProbeRecord(ordered, top_item, accepted))
        if accepted:
            members = frozenset(
                NodeId(session.items.index(it), it) for it in removed
            )
            return ExplanationResult(
                explanation=PiSet(members, len(removed)),
                alternative=top_item,
                forward_passes=len(probes),
                probe_log=tuple(probes),
            )
    return ExplanationResult(
        explanation=None,
        alternative=None,
        forward_passes=len(probes),
        probe_log=tuple(probes),
    )


@dataclass(frozen=True)
class EvalRecord:
    session_id: str
    method: str
    found: bool
    size: int | None
    position: int | None
    forward_passes: int | None
    error: str | None = None


def _position_in(item: str | None, original_top_k: Sequence[str]) -> int | None:
    if item is None:
        return None
    try:
        return original_top_k.index(item) + 1
    except ValueError:
        return None


def _record(sid: str, method: str, result: ExplanationResult, top_items: Sequence[str]) -> EvalRecord:
    return EvalRecord(
        session_id=sid,
        method=method,
        found=result.found,
        size=result.explanation.radius if result.found else None,
        position=_position_in(result.alternative, top_items),
        forward_passes=result.forward_passes,
    )


def eval_run(
    models: Sequence[ModelInterface],
    sessions: Sequence[Session],
    k: int = 5,
    alpha: float = 0.05,
    *,
    session_ids: Sequence[str] | None = None,
    effective_n: int | None = None,
    pool_from_top_k: bool = True,
    workers: int = 1,
) -> list[EvalRecord]:
    """Run both methods on every (model, session) pair.

    Per-session failures become error records instead of aborting the run.
    Records are sorted by (session id, method), so the output is canonical
    regardless of worker scheduling.
    """
    if len(models) != len(sessions):
        raise ValueError("need exactly one model per session")
    ids = list(session_ids) if session_ids is not None else [f"s{i:03d}" for i in range(len(sessions))]
    if len(ids) != len(sessions):
        raise ValueError("need exactly one id per session")

    def run_case(case: tuple[str, ModelInterface, Session]) -> list[EvalRecord]:
        sid, model, session = case
        out: list[EvalRecord] = []
        try:
            top = model.recommend(session, k)
        except Exception as e:
            err = f"{type(e).__name__}: {e}"
            return [
                EvalRecord(sid, METHOD_CAUSAL, False, None, None, None, error=err),
                EvalRecord(sid, METHOD_ATTENTION, False, None, None, None, error=err),
            ]
        top_items = [item for item, _ in top]
        recommendation = top_items[0]
        pool = set(top_items[1:]) if pool_from_top_k else None
        try:
            causal = explain_session(
                session,
                model,
                alpha=alpha,
                k=k,
                pool=pool,
                effective_n=effective_n,
            )
            out.append(_record(sid, METHOD_CAUSAL, causal, top_items))
        except Exception as e:
            out.append(
                EvalRecord(sid, METHOD_CAUSAL, False, None, None, None, error=f"{type(e).__name__}: {e}")
            )
        try:
            attn = attention_baseline(model, session, recommendation, pool)
            out.append(_record(sid, METHOD_ATTENTION, attn, top_items))
        except Exception as e:
            out.append(
                EvalRecord(sid, METHOD_ATTENTION, False, None, None, None, error=f"{type(e).__name__}: {e}")
            )
        return out

    cases = list(zip(ids, models, sessions))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            chunks = list(pool_exec.map(run_case, cases))
    else:
        chunks = [run_case(c) for c in cases]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r.session_id, r.method))
    return records


@dataclass
class EvalSummary:
    """Aggregates for the comparison tables and charts."""

    k: int
    n_sessions: int
    histogram: dict[str, dict[str, int]]
    relative_gain: list[tuple[str, float | None]]
    sizes_sorted: dict[str, list[int]]
    size_diff: list[tuple[str, int]]
    paired_mean_size: dict[str, float | None]
    paired_mean_position: dict[str, float | None]
    mean_forward_passes: dict[str, float | None]
    forward_pass_ratio: float | None
    found_counts: dict[str, int]
    error_counts: dict[str, int]


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def summarize(records: Sequence[EvalRecord], k: int) -> EvalSummary:
    """Digest the record list; histogram totals equal found counts per
    method, and size differences are attention minus causal (positive values
    favor the causal method)."""
    if not records:
        raise ValueError("no records to summarize")
    methods = (METHOD_CAUSAL, METHOD_ATTENTION)
    by_session: dict[str, dict[str, EvalRecord]] = {}
    for r in records:
        by_session.setdefault(r.session_id, {})[r.method] = r

    bins = [str(p) for p in range(2, k + 1)] + [OUTSIDE_BIN]
    histogram = {m: {b: 0 for b in bins} for m in methods}
    for r in records:
        if r.found:
            b = str(r.position) if r.position is not None else OUTSIDE_BIN
            histogram[r.method][b] += 1

    relative_gain: list[tuple[str, float | None]] = []
    for b in bins:
        a = histogram[METHOD_ATTENTION][b]
        c = histogram[METHOD_CAUSAL][b]
        relative_gain.append((b, (c - a) / a if a > 0 else None))

    sizes_sorted = {
        m: sorted(
            (r.size for r in records if r.method == m and r.found and r.size is not None),
            reverse=True,
        )
        for m in methods
    }

    size_diff: list[tuple[str, int]] = []
    paired_sizes: dict[str, list[float]] = {m: [] for m in methods}
    paired_positions: dict[str, list[float]] = {m: [] for m in methods}
    for sid in sorted(by_session):
        pair = by_session[sid]
        ca, at = pair.get(METHOD_CAUSAL), pair.get(METHOD_ATTENTION)
        if ca is None or at is None or not (ca.found and at.found):
            continue
        size_diff.append((sid, at.size - ca.size))
        paired_sizes[METHOD_CAUSAL].append(ca.size)
        paired_sizes[METHOD_ATTENTION].append(at.size)
        if ca.position is not None and at.position is not None:
            paired_positions[METHOD_CAUSAL].append(ca.position)
            paired_positions[METHOD_ATTENTION].append(at.position)

    mean_fp = {
        m: _mean([r.forward_passes for r in records if r.method == m and r.forward_passes is not None])
        for m in methods
    }
    ratio = None
    if mean_fp[METHOD_CAUSAL] and mean_fp[METHOD_ATTENTION]:
        ratio = mean_fp[METHOD_ATTENTION] / mean_fp[METHOD_CAUSAL]

    return EvalSummary(
        k=k,
        n_sessions=len(by_session),
        histogram=histogram,
        relative_gain=relative_gain,
        sizes_sorted=sizes_sorted,
        size_diff=size_diff,
        paired_mean_size={m: _mean(paired_sizes[m]) for m in methods},
        paired_mean_position={m: _mean(paired_positions[m]) for m in methods},
        mean_forward_passes=mean_fp,
        forward_pass_ratio=ratio,
        found_counts={m: sum(1 for r in records if r.method == m and r.found) for m in methods},
        error_counts={m: sum(1 for r in records if r.method == m and r.error) for m in methods},
    )


# -- output emission -----------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_records_csv(path: Path, records: Sequence[EvalRecord]) -> None:
    _write_csv(
        path,
        ["session_id", "method", "found", "size", "position", "forward_passes", "error"],
        [
            [r.session_id, r.method, int(r.found), r.size, r.position, r.forward_passes, r.error or ""]
            for r in records
        ],
    )


def write_summary_outputs(out_dir: str | Path, records: Sequence[EvalRecord], summary: EvalSummary) -> list[Path]:
    """Emit the CSV tables and SVG charts; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit_csv(name: str, header: list[str], rows: list[list]) -> None:
        p = out / name
        _write_csv(p, header, rows)
        written.append(p)

    def emit_svg(name: str, content: str) -> None:
        p = out / name
        p.write_text(content, encoding="utf-8")
        written.append(p)

    p = out / "records.csv"
    write_records_csv(p, records)
    written.append(p)

    bins = [b for b, _ in summary.relative_gain]
    emit_csv(
        "positions_hist.csv",
        ["position", METHOD_CAUSAL, METHOD_ATTENTION],
        [[b, summary.histogram[METHOD_CAUSAL][b], summary.histogram[METHOD_ATTENTION][b]] for b in bins],
    )
    emit_csv("position_gain.csv", ["position", "relative_gain"], [[b, g] for b, g in summary.relative_gain])
    max_len = max(len(summary.sizes_sorted[METHOD_CAUSAL]), len(summary.sizes_sorted[METHOD_ATTENTION]), 1)
    emit_csv(
        "sizes_sorted.csv",
        ["rank", METHOD_CAUSAL, METHOD_ATTENTION],
        [
            [
                i + 1,
                summary.sizes_sorted[METHOD_CAUSAL][i] if i < len(summary.sizes_sorted[METHOD_CAUSAL]) else None,
                summary.sizes_sorted[METHOD_ATTENTION][i] if i < len(summary.sizes_sorted[METHOD_ATTENTION]) else None,
            ]
            for i in range(max_len)
        ],
    )
    emit_csv(
        "size_diff.csv",
        ["session_id", "attention_minus_causal"],
        [[sid, d] for sid, d in summary.size_diff],
    )
    emit_csv(
        "summary.csv",
        ["metric", METHOD_CAUSAL, METHOD_ATTENTION],
        [
            ["sessions", summary.n_sessions, summary.n_sessions],
            ["found", summary.found_counts[METHOD_CAUSAL], summary.found_counts[METHOD_ATTENTION]],
            ["errors", summary.error_counts[METHOD_CAUSAL], summary.error_counts[METHOD_ATTENTION]],
            ["paired_mean_size", summary.paired_mean_size[METHOD_CAUSAL], summary.paired_mean_size[METHOD_ATTENTION]],
            [
                "paired_mean_position",
                summary.paired_mean_position[METHOD_CAUSAL],
                summary.paired_mean_position[METHOD_ATTENTION],
            ],
            [
                "mean_forward_passes",
                summary.mean_forward_passes[METHOD_CAUSAL],
                summary.mean_forward_passes[METHOD_ATTENTION],
            ],
            ["forward_pass_ratio_attention_over_causal", summary.forward_pass_ratio, summary.forward_pass_ratio],
        ],
    )

    emit_svg(
        "positions_hist.svg",
        grouped_bar_svg(
            "Replacement position in original top-k",
            bins,
            [
                (METHOD_CAUSAL, [float(summary.histogram[METHOD_CAUSAL][b]) for b in bins]),
                (METHOD_ATTENTION, [float(summary.histogram[METHOD_ATTENTION][b]) for b in bins]),
            ],
        ),
    )
    emit_svg(
        "position_gain.svg",
        grouped_bar_svg(
            "Relative session-count gain per position (causal vs attention)",
            bins,
            [("gain", [g if g is not None else 0.0 for _, g in summary.relative_gain])],
        ),
    )
    n_rank = max_len
    emit_svg(
        "sizes_sorted.svg",
        grouped_bar_svg(
            "Explanation set sizes (sorted per method)",
            [str(i + 1) for i in range(n_rank)],
            [
                (
                    m,
                    [
                        float(summary.sizes_sorted[m][i]) if i < len(summary.sizes_sorted[m]) else 0.0
                        for i in range(n_rank)
                    ],
                )
                for m in (METHOD_CAUSAL, METHOD_ATTENTION)
            ],
        ),
    )
    emit_svg(
        "size_diff.svg",
        grouped_bar_svg(
            "Per-session size difference (attention - causal)",
            [sid for sid, _ in summary.size_diff] or ["none"],
            [("difference", [float(d) for _, d in summary.size_diff] or [0.0])],
        ),
    )
    return written


_SERIES_COLORS = ("#4878d0", "#ee854a", "#6acc64", "#d65f5f")


def grouped_bar_svg(
    title: str,
    categories: Sequence[str],
    series: Sequence[tuple[str, Sequence[float]]],
    width: int = 720,
    height: int = 400,
) -> str:
    """Self-contained grouped bar chart; no plotting dependency."""
    margin_l, margin_r, margin_t, margin_b = 60, 20, 50, 60
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    values = [v for _, vals in series for v in vals] or [0.0]
    v_min = min(0.0, min(values))
    v_max = max(0.0, max(values))
    if v_max == v_min:
        v_max = v_min + 1.0
    span = v_max - v_min

    def y_of(v: float) -> float:
        return margin_t + plot_h * (1.0 - (v - v_min) / span)

    n_cat = max(1, len(categories))
    group_w = plot_w / n_cat
    bar_w = group_w * 0.8 / max(1, len(series))

    buf = io.StringIO()
    buf.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
    )
    buf.write(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>\n')
    zero_y = y_of(0.0)
    buf.write(
        f'<line x1="{margin_l}" y1="{zero_y:.2f}" x2="{width - margin_r}" y2="{zero_y:.2f}" stroke="#333"/>\n'
    )
    buf.write(
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" y2="{margin_t + plot_h}" stroke="#333"/>\n'
    )
    for tick in (v_min, (v_min + v_max) / 2, v_max):
        ty = y_of(tick)
        buf.write(
            f'<text x="{margin_l - 6}" y="{ty:.2f}" text-anchor="end" dominant-baseline="middle">{tick:.4g}</text>\n'
        )
    label_step = max(1, n_cat // 24)
    for ci, cat in enumerate(categories):
        x0 = margin_l + ci * group_w + group_w * 0.1
        for si, (_, vals) in enumerate(series):
            v = float(vals[ci]) if ci < len(vals) else 0.0
            top = min(y_of(v), zero_y)
            h = abs(y_of(v) - zero_y)
            color = _SERIES_COLORS[si % len(_SERIES_COLORS)]
            buf.write(
                f'<rect x="{x0 + si * bar_w:.2f}" y="{top:.2f}" width="{bar_w:.2f}" '
                f'height="{h:.2f}" fill="{color}"/>\n'
            )
        if ci % label_step == 0:
            buf.write(
                f'<text x="{margin_l + (ci + 0.5) * group_w:.2f}" y="{height - margin_b + 16}" '
                f'text-anchor="middle">{cat}</text>\n'
            )
    for si, (name, _) in enumerate(series):
        color = _SERIES_COLORS[si % len(_SERIES_COLORS)]
        lx = margin_l + 10 + si * 140
        buf.write(f'<rect x="{lx}" y="{height - 24}" width="12" height="12" fill="{color}"/>\n')
        buf.write(f'<text x="{lx + 18}" y="{height - 14}">{name}</text>\n')
    buf.write("</svg>\n")
    return buf.getvalue()


# -- synthetic benchmark ---------------------------------------------------------


def synthetic_benchmark(
    seed: int, n_sessions: int = 100, k: int = 5
) -> tuple[list[str], list[SemRecommender], list[Session]]:
    """Seeded structural-model sessions for the comparison harness.

    Each session gets its own random catalog: the first items are the
    session (their index order is the temporal order), the rest are
    candidates for recommendation.  Sessions are long and sparsely
    connected, and every catalog carries at least one latent confounder;
    that is the regime where graph-guided search pays off over greedy
    attention ranking.
    """
    root = np.random.SeedSequence(seed)
    ids, models, sessions = [], [], []
    for i, child in enumerate(root.spawn(n_sessions)):
        rng = np.random.default_rng(child)
        n_sess = int(rng.integers(10, 15))
        n_cand = int(rng.integers(max(7, k + 2), max(10, k + 5)))
        n_lat = int(rng.integers(1, 4))
        spec = random_sem_spec(
            rng,
            n_observed=n_sess + n_cand,
            n_latent=n_lat,
            edge_prob=0.12,
        )
        model = SemRecommender(spec, value_seed=int(rng.integers(0, 2**31 - 1)))
        ids.append(f"s{i:03d}")
        models.append(model)
        sessions.append(Session(model.catalog[:n_sess]))
    return ids, models, sessions
