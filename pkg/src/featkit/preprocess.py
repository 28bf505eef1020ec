"""Vector normalization and the PCA-whitening feature chain.

The retrieval-side processing of a raw descriptor v is

    l2_normalize -> PCA projection -> whitening -> l2_normalize
    -> signed power transform

fitted once on a reference corpus and then applied to any vector of the
same input dimension.  Covariance uses the population (1/n) convention
throughout, which is what the whitening identity-covariance checks assume.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ClampedDimensionWarning,
    DimMismatch,
    FeatkitError,
    MalformedFile,
    RankDeficientWarning,
)
from .features import FeatureMatrix, fmt_float

PCAW_MAGIC = "PCAW1"


def l2_normalize(v) -> np.ndarray:
    """Scale to unit Euclidean length; the zero vector passes unchanged."""
    a = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return a.copy()
    return a / norm


def l2_normalize_rows(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    return a / np.where(norms == 0.0, 1.0, norms)


def signed_power(v, p: float) -> np.ndarray:
    """Component-wise sign(x) * |x|**p; p=1 is the identity."""
    if p <= 0:
        raise ValueError("power must be positive")
    a = np.asarray(v, dtype=np.float64)
    return np.sign(a) * np.abs(a) ** p


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for the retrieval feature chain."""

    pca_dim: int = 500
    power: float = 2.0
    epsilon: float = 1e-10

    def __post_init__(self):
        if self.pca_dim < 1:
            raise ValueError("pca_dim must be at least 1")
        if self.power <= 0 or self.epsilon <= 0:
            raise ValueError("power and epsilon must be positive")


@dataclass(frozen=True)
class PcaWhitenModel:
    """Mean, principal directions, and eigenvalues of a fitted basis.

    ``components`` rows are orthonormal and ordered by non-increasing
    eigenvalue; the sign convention makes each row's largest-magnitude
    entry positive so fits are reproducible.
    """

    mean: np.ndarray        # (dim_in,)
    components: np.ndarray  # (k, dim_in)
    eigenvalues: np.ndarray  # (k,) non-negative, non-increasing
    epsilon: float = 1e-10

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        comps = np.asarray(self.components, dtype=np.float64)
        eigs = np.asarray(self.eigenvalues, dtype=np.float64)
        if mean.ndim != 1 or comps.ndim != 2 or eigs.ndim != 1:
            raise ValueError("bad model array shapes")
        if comps.shape != (eigs.size, mean.size):
            raise ValueError("components shape inconsistent with mean/eigs")
        if eigs.size < 1 or eigs.size > mean.size:
            raise ValueError("need 1 <= k <= dim_in components")
        if np.any(eigs < 0) or np.any(np.diff(eigs) > 0):
            raise ValueError("eigenvalues must be non-negative, sorted")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "eigenvalues", eigs)

    @property
    def k(self) -> int:
        return self.eigenvalues.size

    @property
    def dim_in(self) -> int:
        return self.mean.size


def pca_fit(x, k: int, epsilon: float = 1e-10) -> PcaWhitenModel:
    """Fit the top-k principal directions of ``x`` (rows are samples).

    Requires n >= 2 and k <= min(n - 1, d).  If fewer than k eigenvalues
    exceed ``epsilon`` the model is truncated to the usable count and a
    :class:`RankDeficientWarning` is emitted.
    """
    a = x.values if isinstance(x, FeatureMatrix) else np.asarray(x, float)
    if a.ndim != 2 or a.shape[0] < 2:
        raise ValueError("pca_fit needs a 2-D matrix with n >= 2 rows")
    n, d = a.shape
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(
            f"k={k} outside valid range 1..{min(n - 1, d)} for {n}x{d} data"
        )
    mean = a.mean(axis=0)
    centered = a - mean
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    eigs = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    usable = int(np.count_nonzero(eigs > epsilon))
    if usable < k:
        if usable == 0:
            raise FeatkitError(
                "all eigenvalues below epsilon; data has no usable variance"
            )
        warnings.warn(
            f"only {usable} of {k} eigenvalues exceed epsilon; "
            f"model truncated",
            RankDeficientWarning,
            stacklevel=2,
        )
        eigs, comps = eigs[:usable], comps[:usable]
    return PcaWhitenModel(mean, comps, eigs, epsilon)


def pca_whiten_apply(model: PcaWhitenModel, v) -> np.ndarray:
    """Project onto the fitted basis and scale to unit variance per axis."""
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (model.dim_in,):
        raise DimMismatch(
            f"vector dim {a.shape} does not match model dim {model.dim_in}"
        )
    proj = model.components @ (a - model.mean)
    return proj / np.sqrt(model.eigenvalues + model.epsilon)


def retrieval_pipeline_fit(x, cfg: PipelineConfig = PipelineConfig()
                           ) -> PcaWhitenModel:
    """Fit the chain's basis on the L2-normalized rows of ``x``.

    ``cfg.pca_dim`` is clamped to min(n - 1, d) with a warning, so small
    corpora still fit.
    """
    a = x.values if isinstance(x, FeatureMatrix) else np.asarray(x, float)
    if a.ndim != 2 or a.shape[0] < 2:
        raise ValueError("pipeline fit needs a 2-D matrix with n >= 2 rows")
    n, d = a.shape
    k = min(cfg.pca_dim, n - 1, d)
    if k < cfg.pca_dim:
        warnings.warn(
            f"pca_dim {cfg.pca_dim} clamped to {k} for {n}x{d} data",
            ClampedDimensionWarning,
            stacklevel=2,
        )
    return pca_fit(l2_normalize_rows(a), k, cfg.epsilon)


def retrieval_pipeline_apply(model: PcaWhitenModel, cfg: PipelineConfig,
                             v) -> np.ndarray:
    """Full chain for one vector; output has dimension ``model.k``."""
    z = l2_normalize(v)
    if z.shape != (model.dim_in,):
        raise DimMismatch(
            f"vector dim {z.shape} does not match model dim {model.dim_in}"
        )
    z = pca_whiten_apply(model, z)
    z = l2_normalize(z)
    return signed_power(z, cfg.power)


def dump_pca_model_text(model: PcaWhitenModel) -> str:
    """Text serialization; floats keep full round-trip precision."""
    lines = [
        PCAW_MAGIC,
        f"{model.k}\t{model.dim_in}\t{fmt_float(model.epsilon)}",
        "\t".join(fmt_float(v) for v in model.mean),
    ]
    lines += ["\t".join(fmt_float(v) for v in row) for row in model.components]
    lines.append("\t".join(fmt_float(v) for v in model.eigenvalues))
    return "\n".join(lines) + "\n"


def parse_pca_model_text(text: str, source="<text>") -> PcaWhitenModel:
    lines = text.split("\n")
    if not lines or lines[0] != PCAW_MAGIC:
        raise MalformedFile(f"{source}: bad model header")
    try:
        k_s, d_s, eps_s = lines[1].split("\t")
        k, d, eps = int(k_s), int(d_s), float(eps_s)
    except (IndexError, ValueError):
        raise MalformedFile(f"{source}: bad model size line") from None
    if len(lines) < 3 + k + 1:
        raise MalformedFile(f"{source}: truncated model")
    try:
        mean = np.asarray([float(v) for v in lines[2].split("\t")])
        comps = np.asarray(
            [[float(v) for v in lines[3 + i].split("\t")] for i in range(k)]
        )
        eigs = np.asarray([float(v) for v in lines[3 + k].split("\t")])
    except ValueError:
        raise MalformedFile(f"{source}: non-numeric model row") from None
    if mean.size != d or comps.shape != (k, d) or eigs.size != k:
        raise MalformedFile(f"{source}: model shapes inconsistent")
    try:
        return PcaWhitenModel(mean, comps, eigs, eps)
    except ValueError as exc:
        raise MalformedFile(f"{source}: {exc}") from exc


def save_pca_model(model: PcaWhitenModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_pca_model_text(model))


def load_pca_model(path) -> PcaWhitenModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_pca_model_text(fh.read(), path)
