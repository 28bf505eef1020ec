"""Linear SVM with hinge loss, plus one-vs-all and one-vs-one multiclass.

The binary solver minimizes

    0.5 * ||w||^2 + C * sum_i max(0, 1 - y_i * w.x_i)

by coordinate-wise optimization of the dual (one box-constrained
quadratic per sample) while maintaining the primal vector
w = sum_i alpha_i y_i x_i.  Coordinates are visited in a freshly
shuffled order every epoch, drawn from a seeded generator, so training
is deterministic for a fixed seed.  An optional bias is realised as an
appended constant-1 feature, which keeps the objective in the exact
form above.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatch,
    MalformedFile,
    SingleClassData,
    SkippedClassWarning,
)
from .features import FeatureMatrix, fmt_float

MODEL_MAGIC = "OTSVM1"

# Cross-validated trade-off presets, per dataset family.
C_PRESETS = {
    "voc2007": 0.2,
    "mit67": 2.0,
    "birds": 2.0,
    "flowers": 2.0,
    "h3d": 0.2,
    "uiucatt": 0.2,
    "voc2007_companion": 5.0,
}


@dataclass(frozen=True)
class SolverConfig:
    C: float
    tol: float = 1e-8
    max_epochs: int = 10000
    bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.C <= 0 or self.tol <= 0 or self.max_epochs < 1:
            raise ValueError("C, tol must be positive; max_epochs >= 1")


@dataclass(frozen=True)
class BinaryModel:
    """Trained weight vector; last component is the bias weight if any."""

    w: np.ndarray
    C_used: float
    objective_value: float
    bias: bool

    def __post_init__(self):
        object.__setattr__(
            self, "w", np.asarray(self.w, dtype=np.float64)
        )

    @property
    def input_dim(self) -> int:
        return self.w.size - 1 if self.bias else self.w.size


@dataclass(frozen=True)
class MulticlassModel:
    """One-vs-all ('ova') or one-vs-one ('ovo') bundle of binary models.

    ``models`` is keyed by class index for ova and by an (i, j) index
    pair with i < j for ovo, where the lower-indexed class is the +1
    side of the pair's binary problem.
    """

    strategy: str
    classes: tuple
    models: dict
    bias: bool

    def __post_init__(self):
        if self.strategy not in ("ova", "ovo"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        k = len(self.classes)
        if k < 2:
            raise ValueError("need at least two classes")
        if self.strategy == "ovo" and len(self.models) != k * (k - 1) // 2:
            raise ValueError(
                f"one-vs-one needs {k * (k - 1) // 2} pair models, "
                f"got {len(self.models)}"
            )

    @property
    def input_dim(self) -> int:
        return next(iter(self.models.values())).input_dim


def _as_xy(x, y):
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 2 or ya.shape != (xa.shape[0],):
        raise DimMismatch(
            f"expected (n, d) features with n labels, got {xa.shape} "
            f"and {ya.shape}"
        )
    if not np.all(np.abs(ya) == 1.0):
        raise ValueError("labels must be +1 or -1")
    return xa, ya


def objective(w, x, y, C: float) -> float:
    """Regularized hinge objective of ``w`` on already-augmented data."""
    xa, ya = _as_xy(x, y)
    wa = np.asarray(w, dtype=np.float64)
    if wa.shape != (xa.shape[1],):
        raise DimMismatch(
            f"w has dim {wa.shape}, features have dim {xa.shape[1]}"
        )
    margins = ya * (xa @ wa)
    return float(0.5 * wa @ wa + C * np.maximum(0.0, 1.0 - margins).sum())


def _augment_bias(xa: np.ndarray) -> np.ndarray:
    return np.hstack([xa, np.ones((xa.shape[0], 1))])


def train_binary(x, y, cfg: SolverConfig) -> BinaryModel:
    """Solve the binary problem to within ``cfg.tol`` of the optimum.

    Convergence is certified by the duality gap: training stops once
    the hinge objective of the maintained primal vector exceeds the
    dual lower bound by at most ``tol * (1 + |objective|)``, so the
    returned objective is within that margin of the global optimum.
    """
    xa, ya = _as_xy(x, y)
    if np.all(ya == ya[0]):
        raise SingleClassData("training data contains a single class")
    if cfg.bias:
        xa = _augment_bias(xa)
    n = xa.shape[0]
    xy = xa * ya[:, None]
    qdiag = np.einsum("ij,ij->i", xy, xy)
    c = float(cfg.C)

    w = np.zeros(xa.shape[1])
    alpha = np.zeros(n)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.max_epochs):
        max_pg = 0.0
        for i in rng.permutation(n):
            row = xy[i]
            g = float(row @ w) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= c:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg != 0.0:
                max_pg = max(max_pg, abs(pg))
                if qdiag[i] > 0.0:
                    new = min(max(a - g / qdiag[i], 0.0), c)
                else:
                    # Zero sample: hinge is constant, dual linear in alpha.
                    new = c if g < 0.0 else 0.0
                if new != a:
                    alpha[i] = new
                    w += (new - a) * row
        if max_pg < 1e-12:
            break
        margins = xy @ w
        primal = 0.5 * float(w @ w) + c * float(
            np.maximum(0.0, 1.0 - margins).sum()
        )
        dual_bound = float(alpha.sum()) - 0.5 * float(w @ w)
        if primal - dual_bound <= cfg.tol * (1.0 + abs(primal)):
            break
    obj = objective(w, xa, ya, c)
    return BinaryModel(w=w, C_used=c, objective_value=obj, bias=cfg.bias)


def decision(model: BinaryModel, x) -> float:
    """Raw linear score w.x (+ bias weight when enabled)."""
    a = np.asarray(x, dtype=np.float64)
    if a.shape != (model.input_dim,):
        raise DimMismatch(
            f"vector dim {a.shape} does not match model dim "
            f"{model.input_dim}"
        )
    if model.bias:
        return float(model.w[:-1] @ a + model.w[-1])
    return float(model.w @ a)


def _label_sets(labels) -> dict:
    out = {}
    for fid, val in labels.items():
        if isinstance(val, (set, frozenset, list, tuple)):
            out[fid] = frozenset(val)
        else:
            out[fid] = frozenset([val])
    return out


def _ordered_rows(features: FeatureMatrix, labels: dict):
    missing = [fid for fid in features.ids if fid not in labels]
    if missing:
        raise ValueError(f"unlabeled feature ids, e.g. {missing[0]!r}")
    return features.values, [labels[fid] for fid in features.ids]


def train_one_vs_all(features: FeatureMatrix, labels, cfg: SolverConfig
                     ) -> MulticlassModel:
    """One binary model per class: members vs everything else.

    Multi-label samples are positives for every class they carry.
    Degenerate subproblems (a class with no positives or no negatives
    among the rows) are skipped with a :class:`SkippedClassWarning`.
    """
    sets = _label_sets(labels)
    x, row_labels = _ordered_rows(features, sets)
    classes = tuple(sorted({c for s in row_labels for c in s}))
    if len(classes) < 2:
        raise SingleClassData("one-vs-all needs at least two classes")
    models = {}
    for ci, cls in enumerate(classes):
        y = np.asarray(
            [1.0 if cls in s else -1.0 for s in row_labels]
        )
        try:
            models[ci] = train_binary(x, y, cfg)
        except SingleClassData:
            warnings.warn(
                f"class {cls!r} has a degenerate subproblem; skipped",
                SkippedClassWarning,
                stacklevel=2,
            )
    return MulticlassModel("ova", classes, models, cfg.bias)


def train_one_vs_one(features: FeatureMatrix, labels, cfg: SolverConfig
                     ) -> MulticlassModel:
    """K(K-1)/2 pairwise models over single-label data."""
    sets = _label_sets(labels)
    for fid, s in sets.items():
        if len(s) != 1:
            raise ValueError(
                f"one-vs-one needs single-label data; id {fid!r} has "
                f"{len(s)} labels"
            )
    x, row_labels = _ordered_rows(features, sets)
    flat = [next(iter(s)) for s in row_labels]
    classes = tuple(sorted(set(flat)))
    if len(classes) < 2:
        raise SingleClassData("one-vs-one needs at least two classes")
    index = {c: i for i, c in enumerate(classes)}
    row_idx = np.asarray([index[c] for c in flat])
    models = {}
    for i in range(len(classes)):
        for j in range(i + 1, len(classes)):
            mask = (row_idx == i) | (row_idx == j)
            y = np.where(row_idx[mask] == i, 1.0, -1.0)
            models[(i, j)] = train_binary(x[mask], y, cfg)
    return MulticlassModel("ovo", classes, models, cfg.bias)


def predict_ovo_from_scores(model: MulticlassModel, pair_scores: dict):
    """Vote with precomputed per-pair decision values.

    Each pair model votes for its predicted side (a zero score counts
    for the +1 side, i.e. the lower-indexed class).  Ties on votes are
    broken by the larger sum of absolute winning margins, then by class
    order.
    """
    if model.strategy != "ovo":
        raise ValueError("vote prediction requires a one-vs-one model")
    k = len(model.classes)
    votes = np.zeros(k, dtype=np.int64)
    margin = np.zeros(k)
    for (i, j) in sorted(pair_scores):
        s = float(pair_scores[(i, j)])
        winner = i if s >= 0.0 else j
        votes[winner] += 1
        margin[winner] += abs(s)
    best_votes = votes.max()
    tied = np.flatnonzero(votes == best_votes)
    if tied.size > 1:
        best_margin = margin[tied].max()
        tied = tied[margin[tied] == best_margin]
    return model.classes[int(tied[0])]


def predict_ovo(model: MulticlassModel, x):
    """Voted label for one input vector."""
    scores = {
        key: decision(m, x) for key, m in model.models.items()
    }
    return predict_ovo_from_scores(model, scores)


def ova_scores(model: MulticlassModel, x) -> np.ndarray:
    """Per-class decision values; skipped classes score NaN."""
    if model.strategy != "ova":
        raise ValueError("per-class scores require a one-vs-all model")
    out = np.full(len(model.classes), np.nan)
    for ci, m in model.models.items():
        out[ci] = decision(m, x)
    return out


def format_model_key(strategy: str, key) -> str:
    return str(key) if strategy == "ova" else f"{key[0]},{key[1]}"


def _parse_key(strategy: str, text: str, k: int):
    try:
        if strategy == "ova":
            key = int(text)
            if not 0 <= key < k:
                raise ValueError
            return key
        i_s, j_s = text.split(",")
        i, j = int(i_s), int(j_s)
        if not (0 <= i < j < k):
            raise ValueError
        return (i, j)
    except ValueError:
        raise MalformedFile(f"bad model key {text!r}") from None


def save_model(model: MulticlassModel, path) -> None:
    """Text persistence; weights keep full round-trip precision."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(MODEL_MAGIC + "\n")
        fh.write(
            f"{model.strategy}\t{len(model.classes)}\t"
            f"{1 if model.bias else 0}\n"
        )
        for cls in model.classes:
            fh.write(cls + "\n")
        for key in sorted(model.models):
            m = model.models[key]
            fields = [
                format_model_key(model.strategy, key),
                fmt_float(m.C_used),
                fmt_float(m.objective_value),
            ] + [fmt_float(v) for v in m.w]
            fh.write("\t".join(fields) + "\n")


def load_model(path) -> MulticlassModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != MODEL_MAGIC:
        raise MalformedFile(f"{path}: bad model header")
    try:
        strategy, k_s, bias_s = lines[1].split("\t")
        k = int(k_s)
        bias = bool(int(bias_s))
    except (IndexError, ValueError):
        raise MalformedFile(f"{path}: bad strategy line") from None
    if strategy not in ("ova", "ovo") or k < 2:
        raise MalformedFile(f"{path}: bad strategy line")
    if len(lines) < 2 + k:
        raise MalformedFile(f"{path}: truncated class list")
    classes = tuple(lines[2 : 2 + k])
    models = {}
    dim = None
    for line in lines[2 + k :]:
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 4:
            raise MalformedFile(f"{path}: truncated model line")
        key = _parse_key(strategy, parts[0], k)
        if key in models:
            raise MalformedFile(f"{path}: duplicate model key {parts[0]!r}")
        try:
            c_used = float(parts[1])
            obj = float(parts[2])
            w = np.asarray([float(v) for v in parts[3:]])
        except ValueError:
            raise MalformedFile(f"{path}: non-numeric model line") from None
        if dim is None:
            dim = w.size
        elif w.size != dim:
            raise MalformedFile(f"{path}: inconsistent weight dimensions")
        models[key] = BinaryModel(w, c_used, obj, bias)
    if not models:
        raise MalformedFile(f"{path}: no model lines")
    try:
        return MulticlassModel(strategy, classes, models, bias)
    except ValueError as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
