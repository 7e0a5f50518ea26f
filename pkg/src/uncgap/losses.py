"""Training objectives and their gradients with respect to the logits.

Every loss returns the batch mean and ``grad_logits``, the gradient of that
mean with respect to each row of ``z`` (so rows are already divided by the
batch size). Logits are never clamped here.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dirichlet import kl_raw
from .special import digamma, log_softmax, sigmoid, trigamma

FAMILIES = ("proposed", "rkl", "fkl", "cross_entropy")


@dataclass(frozen=True)
class LossConfig:
    family: str = "proposed"
    lambda_in: float = 0.5
    lambda_out: float = 1.0 / 3.0 - 0.5
    gamma: float = 1.0
    beta_in_correct: float = 100.0
    beta_in_incorrect: float = 1.0
    beta_out: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.family in ("rkl", "fkl"):
            for name in ("beta_in_correct", "beta_in_incorrect", "beta_out"):
                if not getattr(self, name) > 0:
                    raise ValueError(f"{name} must be > 0")

    @classmethod
    def from_tau(cls, tau: float, **kw) -> "LossConfig":
        """RKL config whose flat OOD target is tau + 1 per class."""
        return cls(family="rkl", beta_out=tau + 1.0, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBatchResult:
    loss: float
    grad_logits: np.ndarray


def _check(z, y=None):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("logits must be a (batch, K) matrix")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    if y is None:
        return z, None
    y = np.asarray(y)
    if y.shape != (z.shape[0],):
        raise ValueError("labels must have one entry per logit row")
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise ValueError(f"label out of range [0, {z.shape[1]})")
    return z, y.astype(np.int64)


def _precision_reg(z, lam):
    # -(lam/K) sum_c sigmoid(z_c), per row, and its gradient
    k = z.shape[1]
    s = sigmoid(z)
    return -(lam / k) * s.sum(axis=1), -(lam / k) * s * (1.0 - s)


def proposed_in_loss(z, y, lambda_in: float) -> LossBatchResult:
    """Cross-entropy minus the (lambda_in / K)-weighted sigmoid precision term."""
    z, y = _check(z, y)
    n = z.shape[0]
    logp = log_softmax(z)
    rows = np.arange(n)
    reg, dreg = _precision_reg(z, lambda_in)
    per_row = -logp[rows, y] + reg
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    grad += dreg
    return LossBatchResult(float(per_row.mean()), grad / n)


def proposed_out_loss(z, lambda_out: float) -> LossBatchResult:
    """Cross-entropy against the uniform target plus the precision term."""
    z, _ = _check(z)
    n, k = z.shape
    logp = log_softmax(z)
    reg, dreg = _precision_reg(z, lambda_out)
    per_row = -logp.mean(axis=1) + reg
    grad = np.exp(logp) - 1.0 / k + dreg
    return LossBatchResult(float(per_row.mean()), grad / n)


def cross_entropy_loss(z, y) -> LossBatchResult:
    return proposed_in_loss(z, y, 0.0)


def in_domain_target(y: np.ndarray, k: int, cfg: LossConfig) -> np.ndarray:
    beta = np.full((y.shape[0], k), cfg.beta_in_incorrect, dtype=np.float64)
    beta[np.arange(y.shape[0]), y] = cfg.beta_in_correct
    return beta


def _rkl(z, beta) -> LossBatchResult:
    n = z.shape[0]
    alpha = np.exp(z)
    a0 = alpha.sum(axis=1)
    b0 = beta.sum(axis=1)
    per_row = np.maximum(kl_raw(alpha, beta), 0.0)
    # dKL/dalpha_j = (alpha_j - beta_j) psi'(alpha_j) - (alpha0 - beta0) psi'(alpha0)
    dalpha = (alpha - beta) * trigamma(alpha) - ((a0 - b0) * trigamma(a0))[:, None]
    return LossBatchResult(float(per_row.mean()), alpha * dalpha / n)


def _fkl(z, beta) -> LossBatchResult:
    n = z.shape[0]
    alpha = np.exp(z)
    a0 = alpha.sum(axis=1)
    b0 = beta.sum(axis=1)
    per_row = np.maximum(kl_raw(beta, alpha), 0.0)
    dalpha = digamma(alpha) - digamma(a0)[:, None] - (digamma(beta) - digamma(b0)[:, None])
    return LossBatchResult(float(per_row.mean()), alpha * dalpha / n)


def rkl_in_loss(z, y, cfg: LossConfig) -> LossBatchResult:
    """Reverse KL from the model Dirichlet to the label-dependent target."""
    z, y = _check(z, y)
    return _rkl(z, in_domain_target(y, z.shape[1], cfg))


def rkl_out_loss(z, cfg: LossConfig) -> LossBatchResult:
    z, _ = _check(z)
    return _rkl(z, np.full_like(z, cfg.beta_out))


def fkl_in_loss(z, y, cfg: LossConfig) -> LossBatchResult:
    """Forward KL: the target Dirichlet is the first argument."""
    z, y = _check(z, y)
    return _fkl(z, in_domain_target(y, z.shape[1], cfg))


def fkl_out_loss(z, cfg: LossConfig) -> LossBatchResult:
    z, _ = _check(z)
    return _fkl(z, np.full_like(z, cfg.beta_out))


def _empty(k: int) -> LossBatchResult:
    return LossBatchResult(0.0, np.zeros((0, k)))


def combined_loss(z_in, y_in, z_out, cfg: LossConfig) -> tuple[LossBatchResult, LossBatchResult]:
    """In-domain and OOD results for one step.

    The training objective is ``in.loss + cfg.gamma * out.loss``; the OOD
    gradient is already multiplied by ``gamma``. For ``cross_entropy`` the OOD
    batch is ignored (it may be empty).
    """
    z_in = np.asarray(z_in, dtype=np.float64)
    k = z_in.shape[1]
    if z_in.shape[0] == 0:
        raise ValueError("in-domain batch is empty")
    z_out = np.asarray(z_out, dtype=np.float64).reshape(-1, k)
    if cfg.family == "cross_entropy":
        r_in = cross_entropy_loss(z_in, y_in)
        out = _empty(k) if z_out.shape[0] == 0 else LossBatchResult(0.0, np.zeros_like(z_out))
        return r_in, out
    if z_out.shape[0] == 0:
        raise ValueError(f"family {cfg.family!r} needs a non-empty OOD batch")
    if cfg.family == "proposed":
        r_in = proposed_in_loss(z_in, y_in, cfg.lambda_in)
        r_out = proposed_out_loss(z_out, cfg.lambda_out)
    elif cfg.family == "rkl":
        r_in = rkl_in_loss(z_in, y_in, cfg)
        r_out = rkl_out_loss(z_out, cfg)
    else:
        r_in = fkl_in_loss(z_in, y_in, cfg)
        r_out = fkl_out_loss(z_out, cfg)
    r_out.grad_logits = cfg.gamma * r_out.grad_logits
    return r_in, r_out


def objective(r_in: LossBatchResult, r_out: LossBatchResult, cfg: LossConfig) -> float:
    return r_in.loss + cfg.gamma * r_out.loss
