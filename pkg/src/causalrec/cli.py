"""Command-line entry point.

Subcommands: ``simulate`` (emit a synthetic catalog and trace), ``discover``
(learn and print a graph), ``explain`` (counterfactual explanation for one
session), ``eval`` (two-method benchmark with CSV/SVG output).  Exit codes:
0 success, 2 no explanation found, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .citest import PartialCorrelationCiTester, correlation_from_attention
from .discovery import DiscoveryConfig, learn_pag
from .explain import explain_session
from .evaluate import eval_run, summarize, synthetic_benchmark, write_summary_outputs
from .models import (
    IpcModelClient,

    SemRecommender,
    SemSpec,
    Session,
    TinyAttentionModel,
    TraceModel,
    TraceSession,
    attention_from_covariance,
    random_sem_spec,
    read_trace,
    sem_covariance,
    write_trace,
)
from .pag import NodeId

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_EXPLANATION = 2


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trace", help="trace file recorded from a model")
    p.add_argument("--session-id", help="session id inside the trace (default: first)")
    p.add_argument("--serve", help="command serving the live-model stdio protocol")
    p.add_argument("--sem", help="structural-model spec JSON file")
    p.add_argument("--tiny-weights", help="weights JSON for the built-in tiny model")
    p.add_argument("--session", help="comma-separated session items (sem/tiny models)")
    p.add_argument("--heads", default="mean", help="head aggregation: mean or an index")
    p.add_argument("--seed", type=int, default=0, help="value seed for the sem model")


def _heads_mode(raw: str):
    return raw if raw == "mean" else int(raw)


def _resolve_model_session(args) -> tuple[object, Session]:
    sources = [s for s in (args.trace, args.sem, args.tiny_weights) if s]
    if len(sources) != 1:
        raise ValueError("choose exactly one of --trace, --sem, --tiny-weights")
    if args.trace:
        sessions = read_trace(args.trace)
        sid = args.session_id or sorted(sessions)[0]
        if sid not in sessions:
            raise ValueError(f"session {sid!r} not found in trace")
        ipc = IpcModelClient(args.serve) if args.serve else None
        model = TraceModel(sessions[sid], ipc=ipc)
        return model, model.base_session
    if args.sem:
        with open(args.sem, "r", encoding="utf-8") as f:
            spec = SemSpec.from_json_dict(json.load(f))
        model = SemRecommender(spec, value_seed=args.seed)
        if args.session:
            items = tuple(args.session.split(","))
        else:
            keep = len(model.catalog) - 6
            if keep < 2:
                raise ValueError("catalog too small for a default session; pass --session")
            items = model.catalog[:keep]
        return model, Session(items)
    model = TinyAttentionModel(args.tiny_weights, heads=_heads_mode(args.heads))
    if not args.session:
        raise ValueError("--tiny-weights requires --session")
    return model, Session(tuple(args.session.split(",")))


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    spec = random_sem_spec(
        rng, n_observed=args.observed, n_latent=args.latent, edge_prob=args.edge_prob
    )
    out = _out_dir(args)
    with open(out / "semspec.json", "w", encoding="utf-8") as f:
        json.dump(spec.to_json_dict(), f, indent=2)
    model = SemRecommender(spec, value_seed=args.seed)
    keep = max(2, len(model.catalog) - max(6, args.top_k + 1))
    base_items = model.catalog[:keep]
    traces = []
    for s in range(args.sessions):
        m = SemRecommender(spec, value_seed=args.seed + s)
        session = Session(base_items)
        top = m.recommend(session, args.top_k)
        extended = session.extended(top[0][0])
        att = m.attention(extended)
        variants = {}
        from itertools import combinations

        for size in range(1, args.variants_size + 1):
            for combo in combinations(base_items, size):
                if len(base_items) - size < 1:
                    continue
                reduced = session.without(combo)
                variants[frozenset(combo)] = tuple(m.recommend(reduced, args.top_k))
        traces.append(
            TraceSession(
                session_id=f"s{s:03d}",
                items=base_items,
                top_k=tuple(top),
                attention=att.values,
                includes_recommendation=True,
                synthetic_factor=True,
                variants=variants,
            )
        )
    write_trace(str(out / "trace.jsonl"), traces)
    print(f"wrote {out / 'semspec.json'} and {out / 'trace.jsonl'} ({args.sessions} sessions)")
    return EXIT_OK


def _discovery_config(args, n_tokens: int, effective_n: int) -> DiscoveryConfig:
    cfg = DiscoveryConfig(alpha=args.alpha, rule_set=args.rule_set)
    cap = min(n_tokens - 2, effective_n - 4)
    return replace(cfg, max_cond_size=max(0, cap))


def cmd_discover(args) -> int:
    if args.sem:
        with open(args.sem, "r", encoding="utf-8") as f:
            spec = SemSpec.from_json_dict(json.load(f))
        sigma = sem_covariance(spec)
        attention = attention_from_covariance(sigma)
        labels = list(spec.observed_names)
    elif args.trace:
        sessions = read_trace(args.trace)
        sid = args.session_id or sorted(sessions)[0]
        trace = sessions[sid]
        model = TraceModel(trace)
        extended = trace.items + (
            (trace.top_k[0][0],) if trace.includes_recommendation else ()
        )
        attention = model.attention(Session(extended))
        labels = list(extended)
    else:
        raise ValueError("discover needs --sem or --trace")
    corr = correlation_from_attention(attention, effective_sample_size=args.effective_n)
    cfg = _discovery_config(args, len(labels), corr.effective_sample_size)
    tester = PartialCorrelationCiTester(corr, cfg.alpha)
    nodes = [NodeId(i, lab) for i, lab in enumerate(labels)]
    g, _ = learn_pag(tester, nodes, cfg)
    out = _out_dir(args)
    (out / "pag.txt").write_text(g.to_text(), encoding="utf-8")
    if args.dot:
        (out / "pag.dot").write_text(g.to_dot(), encoding="utf-8")
    if args.dump_correlation:
        lines = [",".join(labels)]
        for row in corr.values:
            lines.append(",".join(repr(float(v)) for v in row))
        (out / "correlation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    sys.stdout.write(g.to_text())
    return EXIT_OK


def cmd_explain(args) -> int:
    model, session = _resolve_model_session(args)
    pool = None if args.no_pool else "top-k"
    result = explain_session(
        session,
        model,  # type: ignore[arg-type]
        alpha=args.alpha,
        k=args.top_k,
        pool=pool,
        effective_n=args.effective_n,
        config=DiscoveryConfig(alpha=args.alpha, rule_set=args.rule_set),
        allow_circle_heads=args.permissive_paths,
    )
    doc = result.to_json_dict()
    doc["session"] = list(session.items)
    out = _out_dir(args)
    (out / "result.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(doc, indent=2))
    return EXIT_OK if result.found else EXIT_NO_EXPLANATION


def cmd_eval(args) -> int:
    ids, models, sessions = synthetic_benchmark(args.seed, n_sessions=args.sessions, k=args.top_k)
    records = eval_run(
        models,
        sessions,
        k=args.top_k,
        alpha=args.alpha,
        session_ids=ids,
        effective_n=args.effective_n,
        workers=args.workers,
    )
    summary = summarize(records, args.top_k)
    written = write_summary_outputs(_out_dir(args), records, summary)
    for p in written:
        print(f"wrote {p}")
    print(
        f"found: causal {summary.found_counts['causal']}/{summary.n_sessions}, "
        f"attention {summary.found_counts['attention']}/{summary.n_sessions}; "
        f"mean forward passes: causal {summary.mean_forward_passes['causal']:.2f}, "
        f"attention {summary.mean_forward_passes['attention']:.2f}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalrec",
        description="Session-specific causal graphs from recommender attention, "
        "with counterfactual explanation search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="emit a synthetic catalog spec and trace file")
    p_sim.add_argument("--observed", type=int, default=12)
    p_sim.add_argument("--latent", type=int, default=2)
    p_sim.add_argument("--edge-prob", type=float, default=0.35)
    p_sim.add_argument("--sessions", type=int, default=3)
    p_sim.add_argument("--variants-size", type=int, default=2)
    p_sim.add_argument("--top-k", type=int, default=5)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out-dir", default="out")
    p_sim.set_defaults(func=cmd_simulate)

    p_disc = sub.add_parser("discover", help="learn a graph and write its text form")
    p_disc.add_argument("--sem", help="structural-model spec JSON")
    p_disc.add_argument("--trace", help="trace file")
    p_disc.add_argument("--session-id")
    p_disc.add_argument("--alpha", type=float, default=0.05)
    p_disc.add_argument("--rule-set", choices=["core", "extended"], default="core")
    p_disc.add_argument("--effective-n", type=int, default=None)
    p_disc.add_argument("--dot", action="store_true", help="also write DOT")
    p_disc.add_argument(
        "--dump-correlation", action="store_true", help="debug: also write correlation.csv"
    )
    p_disc.add_argument("--out-dir", default="out")
    p_disc.set_defaults(func=cmd_discover)

    p_exp = sub.add_parser("explain", help="find a counterfactual explanation set")
    _add_model_args(p_exp)
    p_exp.add_argument("--alpha", type=float, default=0.05)
    p_exp.add_argument("--rule-set", choices=["core", "extended"], default="core")
    p_exp.add_argument("--top-k", type=int, default=5)
    p_exp.add_argument("--effective-n", type=int, default=None)
    p_exp.add_argument("--no-pool", action="store_true", help="accept any changed top-1")
    p_exp.add_argument(
        "--permissive-paths",
        action="store_true",
        help="treat circle marks as possible arrowheads on influence paths",
    )
    p_exp.add_argument("--out-dir", default="out")
    p_exp.set_defaults(func=cmd_explain)

    p_eval = sub.add_parser("eval", help="run the two-method benchmark")
    p_eval.add_argument("--sessions", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--alpha", type=float, default=0.05)
    p_eval.add_argument("--top-k", type=int, default=5)
    p_eval.add_argument("--effective-n", type=int, default=400)
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--out-dir", default="out")
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return EXIT_ERROR
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
