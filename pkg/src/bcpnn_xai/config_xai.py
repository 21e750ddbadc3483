"""Design-time audit artifacts: ontology document, efficiency, fidelity, rho sweep."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata, spearmanr

from .core import Network, NetworkConfig
from .errors import ConfigurationError, InvariantViolation, SchemaError
from .explain.structure import global_importance
from .learning import accuracy, train

ONTOLOGY_VERSION = 1
TIE_HANDLING = "average ranks; usage aggregated as sum over hidden hypercolumns of active-connection usage"


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def memory_window_statement(tau_zi: float, tau_zj: float) -> str:
    """Plain-language reading of the z-trace time constants."""
    slow = max(tau_zi, tau_zj)
    return (
        f"Presynaptic evidence is integrated with a {tau_zi:g} ms time constant and postsynaptic "
        f"activity with {tau_zj:g} ms; inputs older than about {3 * slow:g} ms retain under 5% "
        f"of their influence, so co-activations further apart than that are not associated."
    )


@dataclass(frozen=True)
class OntologyDocument:
    """Immutable, digest-stamped declaration of what the model can represent.

    ``content`` is canonical JSON of the declared fields; the digest is its
    SHA-256 and does not cover the timestamp.
    """

    content: str
    digest: str
    timestamp: Optional[str] = None

    @property
    def data(self) -> dict:
        return json.loads(self.content)

    def to_json(self) -> str:
        doc = {"digest": self.digest, "ontology": self.data, "timestamp": self.timestamp}
        return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "OntologyDocument":
        doc = json.loads(text)
        content = _canonical(doc["ontology"]).decode("utf-8")
        out = cls(content, hashlib.sha256(content.encode("utf-8")).hexdigest(), doc.get("timestamp"))
        if out.digest != doc.get("digest"):
            raise SchemaError("ontology digest does not match its content", [])
        return out


def emit_ontology(config: NetworkConfig, labels=None, purpose: str = "", timestamp: Optional[str] = None,
                  spiking: bool = False) -> OntologyDocument:
    """Serialise the declared architecture before any data is seen.

    ``labels`` optionally overrides the input attributes as a sequence of
    ``(name, [state labels])`` pairs, one per input hypercolumn, each with
    exactly as many state labels as the hypercolumn has minicolumns.
    """
    names, states = list(config.input_names), [list(s) for s in config.input_states]
    if labels is not None:
        labels = list(labels.items()) if isinstance(labels, dict) else list(labels)
        if len(labels) != config.n_input_hc:
            raise ConfigurationError(
                f"{len(labels)} attribute labels for {config.n_input_hc} input hypercolumns"
            )
        names, states = [], []
        for i, (name, st) in enumerate(labels):
            if len(st) != config.input_sizes[i]:
                raise ConfigurationError(
                    f"attribute {name!r} lists {len(st)} states but its hypercolumn has "
                    f"{config.input_sizes[i]} minicolumns"
                )
            names.append(str(name))
            states.append([str(s) for s in st])
    cfg = config.to_dict()
    cfg["input"] = [{"name": n, "states": s} for n, s in zip(names, states)]
    content = {
        "version": ONTOLOGY_VERSION,
        "purpose": str(purpose),
        "attributes": [
            {"name": n, "n_states": len(s), "states": s} for n, s in zip(names, states)
        ],
        "outputs": [
            {"name": n, "n_states": len(s), "states": list(s)}
            for n, s in zip(config.hidden_names, config.hidden_states)
        ],
        "connectivity": [
            {"input": names[i], "hidden": config.hidden_names[j], "active": bool(config.connectivity[i, j])}
            for i in range(config.n_input_hc)
            for j in range(config.n_hidden_hc)
        ],
        "plasticity_threshold": cfg["plasticity_threshold"],
        "trace_time_constant": cfg["trace_time_constant"],
        "config": cfg,
    }
    if spiking:
        tzi, tzj = config.z_time_constants
        content["temporal_scope"] = {
            "tau_zi_ms": tzi,
            "tau_zj_ms": tzj,
            "statement": memory_window_statement(tzi, tzj),
        }
    text = _canonical(content).decode("utf-8")
    return OntologyDocument(text, hashlib.sha256(text.encode("utf-8")).hexdigest(), timestamp)


@dataclass
class EfficiencyScore:
    """Minicolumn differentiation per hidden hypercolumn.

    ``closest_pair`` is the smallest L1 distance between two minicolumns of
    a hypercolumn; it is reported alongside but does not drive flagging.
    """

    per_hypercolumn: np.ndarray
    mean: float
    flagged: list
    threshold: float
    closest_pair: np.ndarray = field(default_factory=lambda: np.zeros(0))


def differentiation(weight_block: np.ndarray) -> float:
    """``(1 / (M (M-1))) * sum_{k != k'} ||w_k - w_k'||_1`` over columns of the block."""
    W = np.asarray(weight_block, dtype=np.float64)
    M = W.shape[1]
    total = 0.0
    for k in range(M):
        for kk in range(M):
            if k != kk:
                total += float(np.abs(W[:, k] - W[:, kk]).sum())
    return total / (M * (M - 1))


def _closest(W: np.ndarray) -> float:
    M = W.shape[1]
    return min(float(np.abs(W[:, a] - W[:, b]).sum()) for a in range(M) for b in range(a + 1, M))


def efficiency(model: Network, threshold: float = 0.05) -> EfficiencyScore:
    """Diff per hidden HC over its active incoming weights; flag below ``threshold * median``."""
    cfg = model.config
    w = model.weights
    ho = cfg.hidden_offsets
    in_hc = cfg.input_hc_of_unit
    diffs, closest = [], []
    for j in range(cfg.n_hidden_hc):
        rows = model.traces.mask[in_hc, j]
        block = w.pmi[rows, ho[j]:ho[j + 1]]
        diffs.append(differentiation(block))
        closest.append(_closest(block))
    diffs = np.array(diffs)
    cut = threshold * float(np.median(diffs))
    flagged = [int(j) for j in np.flatnonzero(diffs < cut)]
    return EfficiencyScore(diffs, float(diffs.mean()), flagged, float(threshold), np.array(closest))


@dataclass
class FidelityScore:
    cf: float
    expert_ranking: list
    usage_ranking: list
    usage: dict
    tie_handling: str = TIE_HANDLING


def fidelity(expert_ranking: Sequence[str], model: Network) -> FidelityScore:
    """Rank agreement between an expert's attribute order and learned usage.

    ``expert_ranking`` lists attribute labels, most important first; labels
    must match the model's declared input names exactly.
    """
    names = list(model.config.input_names)
    expert = [str(e) for e in expert_ranking]
    unknown = [e for e in expert if e not in names]
    if unknown:
        raise SchemaError(f"expert ranking names unknown attributes {unknown}", [(e, "unknown") for e in unknown])
    if len(set(expert)) != len(expert):
        raise SchemaError("expert ranking repeats an attribute", [])
    if len(expert) < 2:
        raise ConfigurationError("need at least two ranked attributes")
    agg = global_importance(model).aggregate()
    usage = {n: float(agg[i]) for i, n in enumerate(names)}
    expert_score = [-float(p) for p in range(len(expert))]
    usage_score = [usage[e] for e in expert]
    if len(set(usage_score)) == 1:
        cf = math.nan
    else:
        cf = float(spearmanr(expert_score, usage_score).statistic)
    by_usage = sorted(expert, key=lambda n: (-usage[n], names.index(n)))
    return FidelityScore(cf, expert, by_usage, usage)


def rank_vector(values) -> np.ndarray:
    return rankdata(np.asarray(values, dtype=np.float64))


@dataclass
class SweepPoint:
    rho: float
    seed: int
    accuracy: float
    active_connections: int
    graph_size: float
    swaps: int


@dataclass
class ParetoCurve:
    points: list
    seeds: list
    epochs: int
    monotone: bool = True

    def rows(self) -> list:
        return [
            [p.rho, p.seed, p.accuracy, p.active_connections, p.graph_size, p.swaps] for p in self.points
        ]


def explanation_graph_size(model: Network) -> float:
    """Mean number of active incoming connections with positive usage per hidden HC."""
    g = global_importance(model)
    counts = np.zeros(model.config.n_hidden_hc)
    for e in g.edges:
        if e.active and e.usage > 0:
            counts[e.hidden_hc] += 1
    return float(counts.mean())


def _sweep_cell(args) -> SweepPoint:
    config_dict, X, labels, rho, seed, epochs, mode, X_eval, y_eval = args
    config = NetworkConfig.from_dict(config_dict)
    model = Network.initial(config, seed=seed, noise=0.0 if mode == "supervised" else 0.1)
    res = train(model, X, labels, epochs=epochs, mode=mode, seed=seed, rho=rho)
    acc = accuracy(model, X_eval, y_eval) if y_eval is not None else math.nan
    return SweepPoint(
        float(rho), int(seed), float(acc), int(model.traces.mask.sum()), explanation_graph_size(model),
        len(res.events),
    )


def rho_sweep(config: NetworkConfig, X, labels, rho_grid: Sequence[float], seeds: Sequence[int],
              epochs: int = 1, mode: str = "supervised", jobs: int = 1, eval_set=None) -> ParetoCurve:
    """Train one model per (rho, seed) cell; points come back in grid order.

    Accuracy is measured on ``eval_set = (X, labels)`` if given, otherwise on
    the training data.  After the run the connection count must be
    non-increasing in rho for every seed.
    """
    grid = [float(r) for r in rho_grid]
    if any(not r > 1.0 for r in grid):
        raise ConfigurationError("every rho must exceed 1")
    X_eval, y_eval = eval_set if eval_set is not None else (X, labels)
    cells = [
        (config.to_dict(), X, labels, r, int(s), int(epochs), mode, X_eval, y_eval)
        for r in sorted(grid)
        for s in seeds
    ]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            points = list(ex.map(_sweep_cell, cells))
    else:
        points = [_sweep_cell(c) for c in cells]
    monotone = True
    for s in seeds:
        counts = [p.active_connections for p in points if p.seed == s]
        if any(b > a for a, b in zip(counts, counts[1:])):
            monotone = False
    if not monotone:
        raise InvariantViolation("active connection count increased with rho")
    return ParetoCurve(points, [int(s) for s in seeds], int(epochs), monotone)
