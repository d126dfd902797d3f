"""Recommender contract and its built-in implementations.

Three interchangeable models satisfy the same behavioral contract
(deterministic top-k recommendation plus attention over an extended session):

* ``SemRecommender`` - a linear-Gaussian structural-model catalog with
  analytic covariance, so counterfactual behavior has an exact ground truth;
* ``TinyAttentionModel`` - a minimal embedding + single self-attention layer
  forward pass with masked-position prediction;
* ``TraceModel`` - replays a recorded trace file, optionally forwarding
  unseen queries to an external process over a newline-delimited JSON
  protocol on standard streams.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence, TextIO

import numpy as np

from .citest import AttentionMatrix, aggregate_heads

TRACE_SCHEMA = "trace-v1"


class OutOfVocabularyError(ValueError):
    """A session item is missing from the model vocabulary."""


class TraceError(ValueError):
    """Trace file violates the schema or its dimensional invariants."""


class VariantUnavailableError(TraceError):
    """The trace has no precomputed answer for the requested removal set
    and no live endpoint is attached."""


class IpcTransportError(RuntimeError):
    """The external model process closed, desynced, or spoke malformed JSON."""


class IpcRemoteError(RuntimeError):
    """The external model process answered with an error object."""


@dataclass(frozen=True)
class Session:
    """Ordered user-item interactions; position index is temporal order."""

    items: tuple[str, ...]

    def __post_init__(self):
        if not self.items:
            raise ValueError("session must be non-empty")
        if len(set(self.items)) != len(self.items):
            raise ValueError("session items must be unique")

    def __len__(self) -> int:
        return len(self.items)

    def without(self, removed: Iterable[str]) -> "Session":
        gone = set(removed)
        unknown = gone - set(self.items)
        if unknown:
            raise ValueError(f"cannot remove items not in session: {sorted(unknown)}")
        return Session(tuple(it for it in self.items if it not in gone))

    def extended(self, recommendation: str) -> "Session":
        return Session(self.items + (recommendation,))


class ModelInterface(Protocol):
    """Deterministic recommender with inspectable attention.

    ``recommend`` returns k (item, score) pairs in descending score order and
    never returns items already in the session.  ``attention`` returns the
    last-layer, head-aggregated attention matrix over the given token
    sequence (typically the session with the recommendation appended).
    Identical inputs must give identical outputs.
    """

    def recommend(self, session: Session, k: int) -> list[tuple[str, float]]: ...

    def attention(self, session: Session) -> AttentionMatrix: ...


# -- linear-Gaussian structural model -----------------------------------------


@dataclass(frozen=True)
class SemSpec:
    """Linear-Gaussian structural model over observed and latent variables.

    Variables are indexed 0..n-1 in topological (temporal) order; edges point
    from lower to higher index.  ``latent`` lists the indices marginalized
    out of every observable quantity.
    """

    n_vars: int
    latent: tuple[int, ...]
    edges: tuple[tuple[int, int, float], ...]
    noise_variances: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if self.n_vars < 1:
            raise ValueError("need at least one variable")
        if len(self.noise_variances) != self.n_vars:
            raise ValueError("one noise variance per variable required")
        if any(v <= 0 for v in self.noise_variances):
            raise ValueError("noise variances must be positive")
        seen = set()
        for (src, dst, w) in self.edges:
            if not (0 <= src < self.n_vars and 0 <= dst < self.n_vars):
                raise ValueError(f"edge ({src},{dst}) out of range")
            if src >= dst:
                raise ValueError(f"edge ({src},{dst}) violates topological order")
            if not np.isfinite(w):
                raise ValueError(f"edge ({src},{dst}) has non-finite weight")
            if (src, dst) in seen:
                raise ValueError(f"duplicate edge ({src},{dst})")
            seen.add((src, dst))
        if any(not 0 <= i < self.n_vars for i in self.latent):
            raise ValueError("latent index out of range")

    @property
    def observed(self) -> tuple[int, ...]:
        lat = set(self.latent)
        return tuple(i for i in range(self.n_vars) if i not in lat)

    def var_name(self, i: int) -> str:
        return f"H{i}" if i in self.latent else f"X{i}"

    @property
    def observed_names(self) -> tuple[str, ...]:
        return tuple(self.var_name(i) for i in self.observed)

    def to_json_dict(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "latent": list(self.latent),
            "edges": [[s, d, w] for (s, d, w) in self.edges],
            "noise_variances": list(self.noise_variances),
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SemSpec":
        return cls(
            n_vars=int(d["n_vars"]),
            latent=tuple(int(i) for i in d["latent"]),
            edges=tuple((int(s), int(t), float(w)) for s, t, w in d["edges"]),
            noise_variances=tuple(float(v) for v in d["noise_variances"]),
            seed=int(d.get("seed", 0)),
        )


def random_sem_spec(
    rng: np.random.Generator,
    n_observed: int,
    n_latent: int,
    edge_prob: float = 0.35,
    weight_range: tuple[float, float] = (0.4, 0.9),
    var_range: tuple[float, float] = (0.8, 1.2),
    latent_min_children: int = 2,
) -> SemSpec:
    """Random acyclic spec; latents get at least ``latent_min_children``
    observed children (a latent with fewer marginalizes away invisibly)."""
    n = n_observed + n_latent
    latent = tuple(sorted(rng.choice(np.arange(n - 2), size=n_latent, replace=False).tolist())) if n_latent else ()
    lat = set(latent)
    edges = []
    for src in range(n):
        for dst in range(src + 1, n):
            if dst in lat:
                continue  # latents are exogenous confounders here
            if src in lat:
                continue  # latent children chosen below
            if rng.random() < edge_prob:
                w = rng.uniform(*weight_range) * (1 if rng.random() < 0.5 else -1)
                edges.append((src, dst, float(w)))
    for h in latent:
        candidates = [j for j in range(h + 1, n) if j not in lat]
        n_children = min(len(candidates), max(latent_min_children, 2))
        chosen = rng.choice(np.array(candidates), size=n_children, replace=False) if candidates else []
        for dst in sorted(int(c) for c in np.atleast_1d(chosen)):
            w = rng.uniform(*weight_range) * (1 if rng.random() < 0.5 else -1)
            edges.append((h, dst, float(w)))
    variances = tuple(float(v) for v in rng.uniform(*var_range, size=n))
    return SemSpec(
        n_vars=n,
        latent=latent,
        edges=tuple(sorted(edges)),
        noise_variances=variances,
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def sem_covariance(spec: SemSpec, variables: Sequence[int] | None = None) -> np.ndarray:
    """Analytic covariance of the structural model, restricted to
    ``variables`` (default: all observed variables, in index order)."""
    n = spec.n_vars
    w = np.zeros((n, n))
    for (src, dst, weight) in spec.edges:
        w[src, dst] = weight
    total = np.linalg.inv(np.eye(n) - w.T)  # acyclic, so always invertible
    sigma = total @ np.diag(spec.noise_variances) @ total.T
    idx = np.array(spec.observed if variables is None else tuple(variables), dtype=int)
    return sigma[np.ix_(idx, idx)]


def attention_from_covariance(sigma: np.ndarray) -> AttentionMatrix:
    """Lower-triangular factor A with A A^T = sigma.

    Feeding it through the attention-to-correlation construction reproduces
    the correlation of sigma exactly, which makes it the analytic
    ground-truth channel.  The factor is not row-stochastic and is flagged
    accordingly.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as e:
        raise ValueError("covariance matrix is not positive definite") from e
    return AttentionMatrix(chol, row_stochastic=False)


class SemRecommender:
    """Catalog recommender backed by a structural model.

    One realized sample of all observed variables is drawn at construction.
    The score of a candidate item is its conditional mean given the realized
    values of the session items, so removal counterfactuals can be verified
    against an exhaustive oracle.
    """

    def __init__(self, spec: SemSpec, value_seed: int | None = None):
        self.spec = spec
        self.catalog = spec.observed_names
        self._index = {name: i for i, name in enumerate(self.catalog)}
        self._sigma = sem_covariance(spec)
        rng = np.random.default_rng(spec.seed if value_seed is None else value_seed)
        self._values = self._sample(rng)

    def _sample(self, rng: np.random.Generator) -> np.ndarray:
        n = self.spec.n_vars
        parents: dict[int, list[tuple[int, float]]] = {i: [] for i in range(n)}
        for (src, dst, w) in self.spec.edges:
            parents[dst].append((src, w))
        full = np.zeros(n)
        for i in range(n):  # index order is topological
            full[i] = sum(w * full[p] for p, w in parents[i]) + rng.normal(
                0.0, np.sqrt(self.spec.noise_variances[i])
            )
        return full[np.array(self.spec.observed, dtype=int)]

    def item_value(self, item: str) -> float:
        return float(self._values[self._index[item]])

    def _check_items(self, items: Iterable[str]) -> list[int]:
        out = []
        for it in items:
            if it not in self._index:
                raise OutOfVocabularyError(f"item {it!r} not in catalog")
            out.append(self._index[it])
        return out

    def recommend(self, session: Session, k: int) -> list[tuple[str, float]]:
        s_idx = self._check_items(session.items)
        candidates = [i for i in range(len(self.catalog)) if i not in set(s_idx)]
        if len(candidates) < k:
            raise ValueError(f"catalog has only {len(candidates)} candidates, need k={k}")
        sig_ss = self._sigma[np.ix_(s_idx, s_idx)]
        sig_cs = self._sigma[np.ix_(candidates, s_idx)]
        weights = np.linalg.solve(sig_ss, self._values[s_idx])
        scores = sig_cs @ weights
        ranked = sorted(
            zip(candidates, scores), key=lambda cs: (-cs[1], self.catalog[cs[0]])
        )
        return [(self.catalog[i], float(s)) for i, s in ranked[:k]]

    def attention(self, session: Session) -> AttentionMatrix:
        idx = self._check_items(session.items)
        obs = np.array(self.spec.observed, dtype=int)
        sub = sem_covariance(self.spec, variables=obs[idx])
        return attention_from_covariance(sub)


# -- tiny forward-pass attention model ----------------------------------------

MASK_TOKEN = "[MASK]"


def generate_tiny_weights(
    vocab: Sequence[str], dim: int = 8, n_heads: int = 1, max_len: int = 32, seed: int = 0
) -> dict:
    """Random weights for the toy attention recommender, as plain lists."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)

    def mat():
        return (rng.standard_normal((dim, dim)) * scale).tolist()

    return {
        "dim": dim,
        "vocab": list(vocab),
        "embeddings": (rng.standard_normal((len(vocab), dim)) * scale).tolist(),
        "mask_embedding": (rng.standard_normal(dim) * scale).tolist(),
        "positional": (rng.standard_normal((max_len, dim)) * (scale / 2)).tolist(),
        "heads": [{"wq": mat(), "wk": mat(), "wv": mat()} for _ in range(n_heads)],
    }


class TinyAttentionModel:
    """Embedding table, one self-attention layer, masked-position scoring.

    The next item is predicted at an appended mask token; the abductive
    attention matrix is computed over the given tokens with no mask appended.
    """

    def __init__(self, weights: dict | str, heads: str | int = "mean"):
        if isinstance(weights, str):
            with open(weights, "r", encoding="utf-8") as f:
                weights = json.load(f)
        self.vocab: list[str] = list(weights["vocab"])
        self._vocab_index = {v: i for i, v in enumerate(self.vocab)}
        self.dim = int(weights["dim"])
        self.emb = np.array(weights["embeddings"], dtype=np.float64)
        self.mask_emb = np.array(weights["mask_embedding"], dtype=np.float64)
        self.pos = np.array(weights["positional"], dtype=np.float64)
        self.heads_cfg = heads
        self._wq = [np.array(h["wq"], dtype=np.float64) for h in weights["heads"]]
        self._wk = [np.array(h["wk"], dtype=np.float64) for h in weights["heads"]]
        self._wv = [np.array(h["wv"], dtype=np.float64) for h in weights["heads"]]

    @property
    def n_heads(self) -> int:
        return len(self._wq)

    def _embed(self, items: Sequence[str], with_mask: bool) -> np.ndarray:
        rows = []
        for it in items:
            if it not in self._vocab_index:
                raise OutOfVocabularyError(f"item {it!r} not in vocabulary")
            rows.append(self.emb[self._vocab_index[it]])
        if with_mask:
            rows.append(self.mask_emb)
        x = np.array(rows)
        if len(rows) > self.pos.shape[0]:
            raise ValueError(f"sequence length {len(rows)} exceeds positional table")
        return x + self.pos[: len(rows)]

    def _attention_stack(self, x: np.ndarray) -> np.ndarray:
        heads = []
        for wq, wk in zip(self._wq, self._wk):
            logits = (x @ wq) @ (x @ wk).T / np.sqrt(self.dim)
            logits = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            heads.append(e / e.sum(axis=1, keepdims=True))
        return np.array(heads)

    def _forward(self, items: Sequence[str], with_mask: bool) -> tuple[np.ndarray, np.ndarray]:
        x = self._embed(items, with_mask)
        stack = self._attention_stack(x)
        contexts = np.array([a @ (x @ wv) for a, wv in zip(stack, self._wv)])
        return aggregate_heads(stack, self.heads_cfg), contexts.mean(axis=0)

    def recommend(self, session: Session, k: int) -> list[tuple[str, float]]:
        _, ctx = self._forward(session.items, with_mask=True)
        logits = self.emb @ ctx[-1]
        exclude = set(session.items)
        ranked = sorted(
            ((self.vocab[i], float(logits[i])) for i in range(len(self.vocab)) if self.vocab[i] not in exclude),
            key=lambda ns: (-ns[1], ns[0]),
        )
        if len(ranked) < k:
            raise ValueError(f"vocabulary has only {len(ranked)} candidates, need k={k}")
        return ranked[:k]

    def attention(self, session: Session) -> AttentionMatrix:
        agg, _ = self._forward(session.items, with_mask=False)
        return AttentionMatrix(agg)


# -- trace files ---------------------------------------------------------------


@dataclass
class TraceSession:
    """One recorded session: inputs, top-k answer, attention, and optional
    precomputed removal variants."""

    session_id: str
    items: tuple[str, ...]
    top_k: tuple[tuple[str, float], ...]
    attention: np.ndarray
    includes_recommendation: bool = True
    synthetic_factor: bool = False
    variants: dict[frozenset[str], tuple[tuple[str, float], ...]] = field(default_factory=dict)

    def validate(self) -> None:
        expected = len(self.items) + (1 if self.includes_recommendation else 0)
        mat = np.asarray(self.attention, dtype=np.float64)
        if mat.shape != (expected, expected):
            raise TraceError(
                f"session {self.session_id}: attention shape {mat.shape} does not match "
                f"{expected} tokens"
            )
        AttentionMatrix(mat, row_stochastic=not self.synthetic_factor)
        if not self.top_k:
            raise TraceError(f"session {self.session_id}: empty top-k")
        for it, _ in self.top_k:
            if it in self.items:
                raise TraceError(f"session {self.session_id}: top-k contains session item {it!r}")
        for removed in self.variants:
            if not removed <= set(self.items):
                raise TraceError(
                    f"session {self.session_id}: variant removes unknown items {sorted(removed)}"
                )


def _session_to_json(s: TraceSession) -> dict:
    return {
        "id": s.session_id,
        "items": list(s.items),
        "top_k": [[it, sc] for it, sc in s.top_k],
        "attention": np.asarray(s.attention).tolist(),
        "includes_recommendation": s.includes_recommendation,
        "synthetic_factor": s.synthetic_factor,
        "variants": [
            {"removed": sorted(removed), "top_k": [[it, sc] for it, sc in tk]}
            for removed, tk in sorted(s.variants.items(), key=lambda kv: sorted(kv[0]))
        ],
    }


def _session_from_json(d: dict) -> TraceSession:
    try:
        s = TraceSession(
            session_id=str(d["id"]),
            items=tuple(str(x) for x in d["items"]),
            top_k=tuple((str(it), float(sc)) for it, sc in d["top_k"]),
            attention=np.array(d["attention"], dtype=np.float64),
            includes_recommendation=bool(d.get("includes_recommendation", True)),
            synthetic_factor=bool(d.get("synthetic_factor", False)),
            variants={
                frozenset(str(x) for x in v["removed"]): tuple(
                    (str(it), float(sc)) for it, sc in v["top_k"]
                )
                for v in d.get("variants", [])
            },
        )
    except (KeyError, TypeError) as e:
        raise TraceError(f"malformed trace session object: {e}") from e
    s.validate()
    return s


def write_trace(path: str, sessions: Iterable[TraceSession]) -> None:
    """Line-delimited JSON: a schema header line, then one session per line."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"schema": TRACE_SCHEMA}) + "\n")
        for s in sessions:
            s.validate()
            f.write(json.dumps(_session_to_json(s)) + "\n")


def read_trace(path: str) -> dict[str, TraceSession]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        try:
            schema = json.loads(header).get("schema")
        except json.JSONDecodeError as e:
            raise TraceError("trace header is not valid JSON") from e
        if schema != TRACE_SCHEMA:
            raise TraceError(f"unsupported trace schema {schema!r}")
        sessions: dict[str, TraceSession] = {}
        for line in f:
            if not line.strip():
                continue
            s = _session_from_json(json.loads(line))
            if s.session_id in sessions:
                raise TraceError(f"duplicate session id {s.session_id!r}")
            sessions[s.session_id] = s
    return sessions


class TraceModel:
    """Replays one trace session through the model interface.

    Counterfactual queries are answered from precomputed variants when
    present, otherwise forwarded to an attached live endpoint; with neither,
    an explicit unavailable error is raised rather than a silent guess.
    """

    def __init__(self, trace: TraceSession, ipc: "IpcModelClient | None" = None):
        trace.validate()
        self.trace = trace
        self.ipc = ipc

    @property
    def base_session(self) -> Session:
        return Session(self.trace.items)

    def _removed_for(self, session: Session) -> frozenset[str]:
        removed = frozenset(self.trace.items) - frozenset(session.items)
        derived = tuple(it for it in self.trace.items if it not in removed)
        if derived != session.items:
            raise TraceError(
                f"session {session.items} is not an ordered removal variant of the "
                f"traced session {self.trace.items}"
            )
        return removed

    def recommend(self, session: Session, k: int) -> list[tuple[str, float]]:
        removed = self._removed_for(session)
        if not removed:
            stored = self.trace.top_k
        else:
            stored = self.trace.variants.get(removed)
            if stored is None:
                if self.ipc is not None:
                    resp = self.ipc.request({"op": "recommend", "items": list(session.items), "k": k})
                    return [(str(it), float(sc)) for it, sc in resp["top_k"]]
                raise VariantUnavailableError(
                    f"no precomputed variant for removal {sorted(removed)} and no live endpoint"
                )
        if k > len(stored):
            raise TraceError(f"trace stores top-{len(stored)}, cannot answer k={k}")
        return [(it, sc) for it, sc in stored[:k]]

    def attention(self, session: Session) -> AttentionMatrix:
        expected = self.trace.items + ((self.trace.top_k[0][0],) if self.trace.includes_recommendation else ())
        if session.items == expected:
            return AttentionMatrix(self.trace.attention, row_stochastic=not self.trace.synthetic_factor)
        if self.ipc is not None:
            resp = self.ipc.request({"op": "attention", "items": list(session.items)})
            return AttentionMatrix(np.array(resp["matrix"], dtype=np.float64))
        raise VariantUnavailableError(
            "trace stores attention only for the recorded extended session; "
            "attach a live endpoint for other token sequences"
        )


# -- newline-delimited JSON model protocol -------------------------------------


class IpcModelClient:
    """Client for the stdio model protocol: one JSON object per line, one
    request in flight at a time.

    Requests: {"op": "recommend", "items": [...], "k": n} and
    {"op": "attention", "items": [...]}.  Responses carry "top_k" or
    "matrix", or an "error" string.
    """

    def __init__(self, command: str | Sequence[str]):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lock = threading.Lock()

    def request(self, payload: dict) -> dict:
        with self._lock:
            if self._proc.poll() is not None:
                raise IpcTransportError("model process has exited")
            try:
                self._proc.stdin.write(json.dumps(payload) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as e:
                raise IpcTransportError("model process closed its input") from e
            line = self._proc.stdout.readline()
        if line == "":
            raise IpcTransportError("model process closed the stream mid-request")
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as e:
            raise IpcTransportError(f"malformed response line: {line!r}") from e
        if "error" in resp:
            raise IpcRemoteError(str(resp["error"]))
        return resp

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "IpcModelClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve_model(model: ModelInterface, in_stream: TextIO, out_stream: TextIO) -> None:
    """Expose a model over the stdio protocol; used to loop a built-in model
    back into the engine for tests and tooling.

    Malformed requests produce an error object and the loop continues; end of
    input shuts the loop down cleanly.
    """
    for line in in_stream:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            op = req["op"]
            if op == "recommend":
                top = model.recommend(Session(tuple(req["items"])), int(req.get("k", 5)))
                resp = {"top_k": [[it, sc] for it, sc in top]}
            elif op == "attention":
                mat = model.attention(Session(tuple(req["items"])))
                resp = {"matrix": mat.values.tolist()}
            else:
                resp = {"error": f"unknown op {op!r}"}
        except Exception as e:  # protocol error object, keep serving
            resp = {"error": f"{type(e).__name__}: {e}"}
        out_stream.write(json.dumps(resp) + "\n")
        out_stream.flush()
