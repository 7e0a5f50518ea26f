"""Dirichlet representation of a classifier output and its uncertainty measures.

Single-input functions take a :class:`DirichletParams`. The ``batch_*`` helpers
operate on an ``(n, K)`` array of concentrations and back the grid / evaluation
paths, where calling the scalar API per row would be needlessly slow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .special import digamma, log_gamma

LOGIT_CLAMP = 30.0


@dataclass(frozen=True)
class DirichletParams:
    alpha: np.ndarray
    precision: float = field(init=False)

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64)
        if a.ndim != 1 or a.size < 2:
            raise ValueError("alpha must be a vector with K >= 2 entries")
        if not np.all(np.isfinite(a)) or np.any(a <= 0.0):
            raise ValueError("concentration parameters must be finite and > 0")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "precision", float(a.sum()))

    @property
    def k(self) -> int:
        return int(self.alpha.size)


@dataclass(frozen=True)
class Categorical:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be >= 0 and sum to 1")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class UncertaintyVector:
    max_p: float
    entropy: float
    mutual_information: float
    differential_entropy: float
    precision: float
    epkl: float

    def as_dict(self) -> dict[str, float]:
        return {
            "max_p": self.max_p,
            "entropy": self.entropy,
            "mi": self.mutual_information,
            "precision": self.precision,
            "epkl": self.epkl,
            "dent": self.differential_entropy,
        }


def alpha_from_logits(z) -> np.ndarray:
    """exp of clamped logits; works on a vector or an ``(n, K)`` batch."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(np.isnan(z)):
        raise ValueError("logits contain NaN")
    return np.exp(np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP))


def from_logits(z) -> DirichletParams:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise ValueError("logit vector must have K >= 2 entries")
    return DirichletParams(alpha_from_logits(z))


# --- vectorised kernels over the last axis ---------------------------------


def batch_entropy(alpha: np.ndarray) -> np.ndarray:
    a0 = alpha.sum(axis=-1, keepdims=True)
    p = alpha / a0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def batch_mutual_information(alpha: np.ndarray) -> np.ndarray:
    a0 = alpha.sum(axis=-1, keepdims=True)
    p = alpha / a0
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(p > 0.0, np.log(p), 0.0)
    terms = p * (digamma(alpha + 1.0) - digamma(a0 + 1.0) - logp)
    return np.maximum(terms.sum(axis=-1), 0.0)


def batch_differential_entropy(alpha: np.ndarray) -> np.ndarray:
    a0 = alpha.sum(axis=-1)
    psi_a0 = np.asarray(digamma(a0))[..., None]
    return (
        log_gamma(alpha).sum(axis=-1)
        - log_gamma(a0)
        - ((alpha - 1.0) * (digamma(alpha) - psi_a0)).sum(axis=-1)
    )


def batch_measures(alpha: np.ndarray) -> dict[str, np.ndarray]:
    """All six measures for an ``(n, K)`` concentration array."""
    alpha = np.asarray(alpha, dtype=np.float64)
    a0 = alpha.sum(axis=-1)
    k = alpha.shape[-1]
    return {
        "max_p": alpha.max(axis=-1) / a0,
        "entropy": batch_entropy(alpha),
        "mi": batch_mutual_information(alpha),
        "precision": a0,
        "epkl": (k - 1) / a0,
        "dent": batch_differential_entropy(alpha),
    }


# --- single-input API ------------------------------------------------------


def mean(d: DirichletParams) -> Categorical:
    return Categorical(d.alpha / d.precision)


def max_p(d: DirichletParams) -> float:
    return float(d.alpha.max() / d.precision)


def expected_entropy(d: DirichletParams) -> float:
    """Shannon entropy of the expected categorical alpha / alpha0."""
    return float(batch_entropy(d.alpha))


def mutual_information(d: DirichletParams) -> float:
    """Mutual information between the label and the categorical under Dir(alpha).

    Clamped at zero from below to absorb rounding.
    """
    return float(batch_mutual_information(d.alpha))


def differential_entropy(d: DirichletParams) -> float:
    return float(batch_differential_entropy(d.alpha))


def epkl(d: DirichletParams) -> float:
    """Expected pairwise KL between categorical draws; equals (K-1)/alpha0."""
    return (d.k - 1) / d.precision


def kl_raw(p_alpha: np.ndarray, q_alpha: np.ndarray) -> np.ndarray:
    """Unclamped KL(Dir(p) || Dir(q)) over the last axis, no validation."""
    p0 = p_alpha.sum(axis=-1)
    q0 = q_alpha.sum(axis=-1)
    return (
        log_gamma(p0)
        - log_gamma(p_alpha).sum(axis=-1)
        - log_gamma(q0)
        + log_gamma(q_alpha).sum(axis=-1)
        + ((p_alpha - q_alpha) * (digamma(p_alpha) - np.asarray(digamma(p0))[..., None])).sum(axis=-1)
    )


def dirichlet_kl(p: DirichletParams, q: DirichletParams) -> float:
    """KL(Dir(p) || Dir(q)) in closed form, clamped at zero."""
    if p.k != q.k:
        raise ValueError(f"dimension mismatch: K={p.k} vs K={q.k}")
    if np.array_equal(p.alpha, q.alpha):
        # the closed form leaves ~1e-15 of rounding behind
        return 0.0
    return max(float(kl_raw(p.alpha, q.alpha)), 0.0)


def all_measures(z) -> UncertaintyVector:
    d = from_logits(z)
    m = batch_measures(d.alpha[None, :])
    return UncertaintyVector(
        max_p=float(m["max_p"][0]),
        entropy=float(m["entropy"][0]),
        mutual_information=float(m["mi"][0]),
        differential_entropy=float(m["dent"][0]),
        precision=float(m["precision"][0]),
        epkl=float(m["epkl"][0]),
    )


def measures_from_alpha(alpha) -> UncertaintyVector:
    d = DirichletParams(alpha)
    return UncertaintyVector(
        max_p=max_p(d),
        entropy=expected_entropy(d),
        mutual_information=mutual_information(d),
        differential_entropy=differential_entropy(d),
        precision=d.precision,
        epkl=epkl(d),
    )
