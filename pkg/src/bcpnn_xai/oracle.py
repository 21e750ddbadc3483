"""Brute-force validators used as ground truth on desk-scale instances.

Nothing here calls the engine's numerical routines (support computation,
softmax, trace updates).  Oracles only read the model's bias and weight
values and recompute everything else with plain loops and counting, so an
agreement between the two is evidence rather than a tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, SizeCapError

SHAPLEY_MAX_HC = 12
COALITION_SEMANTICS = "absent hypercolumn = its contribution removed (additive game)"


@dataclass
class OracleResult:
    name: str
    engine: np.ndarray
    oracle: np.ndarray
    abs_error: float = field(init=False)
    rel_error: float = field(init=False)

    def __post_init__(self):
        e = np.asarray(self.engine, dtype=np.float64)
        o = np.asarray(self.oracle, dtype=np.float64)
        finite = np.isfinite(e) & np.isfinite(o)
        same_inf = (e == o) & ~finite
        with np.errstate(invalid="ignore"):
            diff = np.where(finite, np.abs(e - o), np.where(same_inf, 0.0, np.inf))
        self.abs_error = float(diff.max(initial=0.0))
        scale = np.maximum(np.abs(o), 1e-300)
        self.rel_error = float(np.where(finite, diff / scale, diff).max(initial=0.0))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "engine": np.asarray(self.engine).tolist(),
            "oracle": np.asarray(self.oracle).tolist(),
            "abs_error": self.abs_error,
            "rel_error": self.rel_error,
        }


def _hc_contributions(model, x, unit: int) -> list:
    """Plain-loop evidence of every input hypercolumn for one hidden unit."""
    cfg = model.config
    w = model.weights
    contrib = []
    pos = 0
    for i, M in enumerate(cfg.input_sizes):
        total = 0.0
        if w.unit_mask[pos, unit]:
            for m in range(M):
                total += float(x[pos + m]) * float(w.pmi[pos + m, unit])
        pos += M
        contrib.append(total)
    return contrib


def exact_shapley(model, x, target: int) -> np.ndarray:
    """Exact Shapley values of the input hypercolumns for hidden unit ``target``.

    The game is ``v(S) = b + sum of contributions of hypercolumns in S`` with
    absent hypercolumns simply dropped; all ``2^H`` coalitions are enumerated.
    """
    H = model.config.n_input_hc
    if H > SHAPLEY_MAX_HC:
        raise SizeCapError(f"exact Shapley enumeration capped at {SHAPLEY_MAX_HC} hypercolumns, got {H}")
    contrib = _hc_contributions(model, np.asarray(x, dtype=np.float64), target)
    bias = float(model.weights.bias[target])

    def value(coalition_bits: int) -> float:
        v = bias
        for i in range(H):
            if coalition_bits >> i & 1:
                v += contrib[i]
        return v

    values = [value(s) for s in range(1 << H)]
    fact = [math.factorial(n) for n in range(H + 1)]
    shap = np.zeros(H)
    for i in range(H):
        acc = 0.0
        for s in range(1 << H):
            if s >> i & 1:
                continue
            size = bin(s).count("1")
            weight = fact[size] * fact[H - size - 1] / fact[H]
            acc += weight * (values[s | (1 << i)] - values[s])
        shap[i] = acc
    return shap


@dataclass
class CountingEstimate:
    p_pre: np.ndarray
    p_post: np.ndarray
    p_joint: np.ndarray
    weights: np.ndarray
    bias: np.ndarray
    n: int


def counting_estimator(input_states, hidden_states, input_sizes: Sequence[int],
                       hidden_sizes: Sequence[int], alpha: float = 1.0) -> CountingEstimate:
    """Laplace-smoothed frequency estimates and the log-PMI weights they imply.

    ``input_states`` is an (n, H_inp) integer array of categorical states,
    ``hidden_states`` an (n, H_hid) array.
    """
    A = np.asarray(input_states, dtype=np.int64)
    B = np.asarray(hidden_states, dtype=np.int64)
    if B.ndim == 1:
        B = B[:, None]
    n = len(A)
    io = np.concatenate([[0], np.cumsum(input_sizes)]).astype(int)
    ho = np.concatenate([[0], np.cumsum(hidden_sizes)]).astype(int)
    c_pre = np.zeros(io[-1])
    c_post = np.zeros(ho[-1])
    c_joint = np.zeros((io[-1], ho[-1]))
    for a_row, b_row in zip(A, B):
        ua = io[:-1] + a_row
        ub = ho[:-1] + b_row
        c_pre[ua] += 1
        c_post[ub] += 1
        for u in ua:
            c_joint[u, ub] += 1
    p_pre = np.empty_like(c_pre)
    for i, M in enumerate(input_sizes):
        p_pre[io[i]:io[i + 1]] = (c_pre[io[i]:io[i + 1]] + alpha) / (n + alpha * M)
    p_post = np.empty_like(c_post)
    for j, M in enumerate(hidden_sizes):
        p_post[ho[j]:ho[j + 1]] = (c_post[ho[j]:ho[j + 1]] + alpha) / (n + alpha * M)
    p_joint = np.empty_like(c_joint)
    for i, Mi in enumerate(input_sizes):
        for j, Mj in enumerate(hidden_sizes):
            blk = (slice(io[i], io[i + 1]), slice(ho[j], ho[j + 1]))
            p_joint[blk] = (c_joint[blk] + alpha) / (n + alpha * Mi * Mj)
    weights = np.log(p_joint / np.outer(p_pre, p_post))
    return CountingEstimate(p_pre, p_post, p_joint, weights, np.log(p_post), n)


def empirical_mi(a, b) -> float:
    """Plug-in mutual information (nats) between two categorical sample streams."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise ConfigurationError("streams must have equal length")
    n = len(a)
    joint: dict = {}
    ca: dict = {}
    cb: dict = {}
    for u, v in zip(a.tolist(), b.tolist()):
        joint[(u, v)] = joint.get((u, v), 0) + 1
        ca[u] = ca.get(u, 0) + 1
        cb[v] = cb.get(v, 0) + 1
    mi = 0.0
    for (u, v), c in joint.items():
        mi += c / n * math.log(c * n / (ca[u] * cb[v]))
    return max(mi, 0.0)


def _oracle_support(model, X, unit: int) -> np.ndarray:
    """Support of one hidden unit for every row of X, from raw weight values."""
    w = model.weights
    col = np.where(w.unit_mask[:, unit], w.pmi[:, unit], 0.0)
    return float(w.bias[unit]) + (np.asarray(X) * col).sum(axis=-1)


def _oracle_winner(model, X, j: int) -> np.ndarray:
    cfg = model.config
    ho = cfg.hidden_offsets
    cols = np.stack([_oracle_support(model, X, u) for u in range(ho[j], ho[j + 1])], axis=-1)
    return np.argmax(cols, axis=-1)


def random_tv_perturbations(x, input_sizes, radius: float, n: int, rng: np.random.Generator,
                            strict: bool = True) -> np.ndarray:
    """Random points within total-variation ``radius`` of ``x``.

    Mass moves only inside each hypercolumn.  Half of the samples are dense
    (towards a random point of the simplex product), half sparse (one
    donor/recipient pair in one hypercolumn), with the norm drawn uniformly
    below the radius.  Returns an (n, N) array.
    """
    x = np.asarray(x, dtype=np.float64)
    io = np.concatenate([[0], np.cumsum(input_sizes)]).astype(int)
    out = np.empty((n, len(x)))
    for s in range(n):
        if math.isinf(radius):
            r = math.inf
        else:
            r = rng.uniform(0.0, radius)
            if strict and r >= radius:
                r = np.nextafter(radius, 0.0)
        if s % 2 == 0:
            target = np.concatenate([rng.dirichlet(np.ones(M)) for M in input_sizes])
            d = target - x
            tv = 0.5 * np.abs(d).sum()
            t = 1.0 if tv == 0 else min(1.0, r / tv)
            out[s] = x + t * d
        else:
            y = x.copy()
            i = rng.integers(len(input_sizes))
            a, b = io[i], io[i + 1]
            donor, recip = rng.choice(np.arange(a, b), size=2, replace=False)
            q = min(y[donor], r)
            y[donor] -= q
            y[recip] += q
            out[s] = y
    return np.clip(out, 0.0, None)


def sampled_flip_check(model, x, j: int, delta: float, n: int, seed: int = 0) -> float:
    """Fraction of ``n`` random TV-bounded perturbations (norm < delta) that flip HC ``j``."""
    if delta <= 0:
        return 0.0
    rng = np.random.Generator(np.random.Philox(seed))
    cfg = model.config
    base = _oracle_winner(model, np.asarray(x)[None, :], j)[0]
    P = random_tv_perturbations(x, cfg.input_sizes, delta, n, rng)
    flipped = _oracle_winner(model, P, j) != base
    return float(np.mean(flipped))


def tv_distance(x, y, input_sizes) -> float:
    """Sum over hypercolumns of half the L1 distance."""
    return 0.5 * float(np.abs(np.asarray(x) - np.asarray(y)).sum())


def winner_of(model, x, j: int) -> int:
    return int(_oracle_winner(model, np.asarray(x)[None, :], j)[0])


# --------------------------------------------------------------------------
# Cross-layer attribution by explicit path enumeration


def enumerate_leaf_totals(stack, x, target_hc: int, target_k: int, absolute: bool = False) -> np.ndarray:
    """Sum of share products over every root-to-input path, by enumeration.

    Each hidden hypercolumn along a path is expanded at its winning
    minicolumn; shares at a node are its per-input-HC evidence divided by the
    sum of absolute evidence.  Result is scaled by the root's absolute
    evidence so that it is in nats.
    """
    layers = stack.layers
    acts = []
    inp = np.asarray(x, dtype=np.float64)
    for layer in layers:
        cfg = layer.config
        units = []
        for u in range(cfg.n_hidden):
            units.append(_hc_contributions(layer, inp, u))
        sup = np.array([layer.weights.bias[u] + sum(units[u]) for u in range(cfg.n_hidden)])
        post = np.empty_like(sup)
        ho = cfg.hidden_offsets
        win = []
        for j in range(cfg.n_hidden_hc):
            seg = sup[ho[j]:ho[j + 1]]
            e = [math.exp(v - max(seg)) for v in seg]
            z = sum(e)
            post[ho[j]:ho[j + 1]] = [v / z for v in e]
            win.append(int(np.argmax(seg)))
        acts.append((units, win, ho))
        inp = post

    def shares(level: int, unit: int) -> list:
        contrib = acts[level][0][unit]
        tot = sum(abs(c) for c in contrib)
        if tot == 0:
            return [0.0] * len(contrib)
        return [(abs(c) if absolute else c) / tot for c in contrib]

    L = len(layers)
    n_leaf = layers[0].config.n_input_hc
    totals = np.zeros(n_leaf)
    root_unit = acts[L - 1][2][target_hc] + target_k

    def walk(level: int, unit: int, product: float):
        sh = shares(level, unit)
        for i, s in enumerate(sh):
            if level == 0:
                totals[i] += product * s
            else:
                _, win, ho = acts[level - 1]
                walk(level - 1, ho[i] + win[i], product * s)

    walk(L - 1, root_unit, 1.0)
    scale = sum(abs(c) for c in acts[L - 1][0][root_unit])
    return totals * scale


# --------------------------------------------------------------------------
# Synthetic categorical tasks with closed-form ground truth


@dataclass
class SyntheticTask:
    """Naive-Bayes generative model: class prior and per-class state tables.

    ``tables[i][c]`` is the distribution of attribute ``i`` given class ``c``.
    """

    prior: np.ndarray
    tables: list
    attribute_names: tuple = ()
    state_names: tuple = ()
    class_names: tuple = ()
    label_name: str = "label"

    def __post_init__(self):
        self.prior = np.asarray(self.prior, dtype=np.float64)
        self.tables = [np.asarray(t, dtype=np.float64) for t in self.tables]
        C = len(self.prior)
        if not np.isclose(self.prior.sum(), 1.0):
            raise ConfigurationError("class prior must sum to 1")
        for t in self.tables:
            if t.shape[0] != C or not np.allclose(t.sum(axis=1), 1.0):
                raise ConfigurationError("each table row must be a distribution per class")
        if not self.attribute_names:
            self.attribute_names = tuple(f"f{i}" for i in range(len(self.tables)))
        if not self.state_names:
            self.state_names = tuple(tuple(f"s{m}" for m in range(t.shape[1])) for t in self.tables)
        if not self.class_names:
            self.class_names = tuple(f"c{c}" for c in range(C))

    @property
    def sizes(self) -> tuple:
        return tuple(t.shape[1] for t in self.tables)

    @property
    def n_classes(self) -> int:
        return len(self.prior)

    def sample(self, n: int, seed: int):
        """Return ``(states, labels)``; identical for identical seeds."""
        rng = np.random.Generator(np.random.Philox(seed))
        labels = rng.choice(self.n_classes, size=n, p=self.prior)
        states = np.empty((n, len(self.tables)), dtype=np.int64)
        u = rng.random((n, len(self.tables)))
        for i, t in enumerate(self.tables):
            cdf = np.cumsum(t, axis=1)
            cdf[:, -1] = 1.0
            states[:, i] = (u[:, i][:, None] >= cdf[labels]).sum(axis=1)
        return states, labels

    def joint(self, i: int) -> np.ndarray:
        """Exact (class, state) joint table of attribute ``i``."""
        return self.prior[:, None] * self.tables[i]

    def mutual_information(self, i: int) -> float:
        """Closed-form I(attribute i; class) in nats."""
        pj = self.joint(i)
        pc = pj.sum(axis=1, keepdims=True)
        ps = pj.sum(axis=0, keepdims=True)
        nz = pj > 0
        return float(np.sum(pj[nz] * np.log((pj / (pc * ps))[nz])))


def fruit_task(noise: float = 0.0) -> SyntheticTask:
    """Colour/Shape/Size attributes over four fruits.

    With probability ``noise`` an attribute is resampled uniformly.
    """
    colours = ("red", "yellow", "green")
    shapes = ("round", "elongated", "oval")
    sizes = ("small", "medium", "large")
    fruits = ("apple", "banana", "lemon", "watermelon")
    table = {
        "apple": ("red", "round", "medium"),
        "banana": ("yellow", "elongated", "medium"),
        "lemon": ("yellow", "oval", "small"),
        "watermelon": ("green", "round", "large"),
    }
    tables = []
    for a, states in enumerate((colours, shapes, sizes)):
        t = np.full((4, 3), noise / 3)
        for c, f in enumerate(fruits):
            t[c, states.index(table[f][a])] += 1 - noise
        tables.append(t)
    return SyntheticTask(
        prior=np.full(4, 0.25),
        tables=tables,
        attribute_names=("Colour", "Shape", "Size"),
        state_names=(colours, shapes, sizes),
        class_names=fruits,
        label_name="fruit",
    )


def graded_task(n_features: int = 6, n_classes: int = 3, n_states: int = 3,
                noise_levels: Optional[Sequence[float]] = None) -> SyntheticTask:
    """Attributes whose informativeness about the class decreases with index.

    Attribute ``i`` copies a class-specific state with probability
    ``1 - noise_i`` and is uniform otherwise.
    """
    if noise_levels is None:
        noise_levels = np.linspace(0.1, 0.95, n_features)
    tables = []
    for nz in noise_levels:
        t = np.full((n_classes, n_states), nz / n_states)
        for c in range(n_classes):
            t[c, c % n_states] += 1 - nz
        tables.append(t)
    return SyntheticTask(prior=np.full(n_classes, 1.0 / n_classes), tables=tables)


def prototype_task(n_features: int = 8, n_classes: int = 4, n_states: int = 4,
                   noise: float = 0.15, seed: int = 0) -> SyntheticTask:
    """Each class has a random prototype state per attribute, kept w.p. ``1 - noise``."""
    rng = np.random.Generator(np.random.Philox(seed))
    tables = []
    for _ in range(n_features):
        protos = rng.integers(n_states, size=n_classes)
        t = np.full((n_classes, n_states), noise / n_states)
        t[np.arange(n_classes), protos] += 1 - noise
        tables.append(t)
    return SyntheticTask(prior=np.full(n_classes, 1.0 / n_classes), tables=tables)
