"""Detection metrics, calibration error, and the representation-gap KL."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import GridSpec, LabeledDataset, make_grid
from .dirichlet import alpha_from_logits, batch_measures
from .network import MlpModel

MEASURES = ("max_p", "entropy", "mi", "precision", "epkl", "dent")

# +1: larger value means more uncertain (more OOD-like); -1: smaller does.
ORIENTATION = {"mi": 1, "entropy": 1, "epkl": 1, "max_p": -1, "precision": -1, "dent": -1}

GRID_HEADER = ("x0", "x1") + MEASURES


class GroupTooSmall(ValueError):
    def __init__(self, group: str, size: int, need: int = 3):
        self.group = group
        super().__init__(f"group {group!r} has {size} members, need >= {need}")


@dataclass
class ScoredPopulation:
    """Scores where larger means more positive-like."""

    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        self.positives = np.asarray(self.positives, dtype=np.float64).ravel()
        self.negatives = np.asarray(self.negatives, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(self.positives)) and np.all(np.isfinite(self.negatives))):
            raise ValueError("scores must be finite")


def _tie_groups(pop: ScoredPopulation):
    # distinct thresholds in descending order, with per-group positive/negative counts
    scores = np.concatenate([pop.positives, pop.negatives])
    is_pos = np.concatenate([np.ones(pop.positives.size, np.int64), np.zeros(pop.negatives.size, np.int64)])
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    p = is_pos[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    tp = np.add.reduceat(p, starts)
    size = np.diff(np.r_[starts, s.size])
    return tp, size - tp


def auroc(pop: ScoredPopulation) -> float:
    """Mann-Whitney AUROC with ties counted one half."""
    n_pos, n_neg = pop.positives.size, pop.negatives.size
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs non-empty positive and negative populations")
    tp, fp = _tie_groups(pop)
    # negatives strictly below each group = all negatives not yet seen
    neg_below = n_neg - np.cumsum(fp)
    greater = int(np.sum(tp * neg_below))
    ties = int(np.sum(tp * fp))
    return (greater + 0.5 * ties) / (n_pos * n_neg)


def aupr(pop: ScoredPopulation) -> float:
    """Step-wise area under the precision-recall curve, positives = class of interest."""
    n_pos = pop.positives.size
    if n_pos == 0:
        raise ValueError("AUPR needs a non-empty positive population")
    tp, fp = _tie_groups(pop)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(fp)
    precision = ctp / (ctp + cfp)
    recall_step = tp / n_pos
    return float(np.sum(recall_step * precision))


def rms_calibration_error(confidences, correct, n_bins: int = 15) -> float:
    """Root-mean-square calibration error over equal-count confidence bins."""
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    corr = np.asarray(correct, dtype=bool).ravel()
    if conf.shape != corr.shape:
        raise ValueError("confidences and correct differ in length")
    if n_bins < 1 or conf.size < n_bins:
        raise ValueError(f"need n >= n_bins >= 1 (n={conf.size}, n_bins={n_bins})")
    # secondary key makes bin membership independent of input order under ties
    order = np.lexsort((corr, conf))
    conf, corr = conf[order], corr[order].astype(np.float64)
    total = 0.0
    for c, a in zip(np.array_split(conf, n_bins), np.array_split(corr, n_bins)):
        total += c.size * (c.mean() - a.mean()) ** 2
    return float(np.sqrt(total / conf.size))


@dataclass(frozen=True)
class GaussianFit2D:
    mean: np.ndarray
    covariance: np.ndarray


def fit_gaussian_2d(points) -> GaussianFit2D:
    """Sample mean and (n-1) covariance plus a small ridge on the diagonal.

    The ridge is ``1e-9 * max(trace / 2, 1)`` so that a degenerate cloud still
    yields a positive-definite covariance.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    if pts.shape[0] < 3:
        raise ValueError(f"need at least 3 points, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    mu = pts.mean(axis=0)
    d = pts - mu
    cov = d.T @ d / (pts.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    cov += 1e-9 * max(np.trace(cov) / 2.0, 1.0) * np.eye(2)
    return GaussianFit2D(mu, cov)


def gaussian_kl(from_: GaussianFit2D, to: GaussianFit2D) -> float:
    """KL divergence *from* ``from_`` *to* ``to``, i.e. ``KL(to || from_)``.

    0.5 * [tr(S1^-1 S2) - d + ln(det S1 / det S2) + (m1 - m2)^T S1^-1 (m1 - m2)]
    with ``(m1, S1) = from_`` and ``(m2, S2) = to``.
    """
    d = from_.mean.size
    try:
        chol1 = np.linalg.cholesky(from_.covariance)
        chol2 = np.linalg.cholesky(to.covariance)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc
    inv1 = np.linalg.inv(from_.covariance)
    diff = from_.mean - to.mean
    logdet1 = 2.0 * np.sum(np.log(np.diag(chol1)))
    logdet2 = 2.0 * np.sum(np.log(np.diag(chol2)))
    kl = 0.5 * (np.trace(inv1 @ to.covariance) - d + logdet1 - logdet2 + diff @ inv1 @ diff)
    return max(float(kl), 0.0)


def gap_features(max_p, dent) -> np.ndarray:
    """(Max.P, log(-D.Ent)) pairs; -D.Ent is floored at 1e-12."""
    return np.column_stack([np.asarray(max_p, float), np.log(np.maximum(-np.asarray(dent, float), 1e-12))])


def gap_kl(correct_pts, miss_pts, ood_pts) -> tuple[float, float]:
    """Gap from the misclassified and the correct group to the OOD group.

    Each is ``gaussian_kl(group_fit, ood_fit)``, i.e. ``KL(ood || group)``.
    Returns ``(gap_kl_miss, gap_kl_correct)``.
    """
    for name, pts in (("correct", correct_pts), ("misclassified", miss_pts), ("ood", ood_pts)):
        if len(pts) < 3:
            raise GroupTooSmall(name, len(pts))
    ood = fit_gaussian_2d(ood_pts)
    return gaussian_kl(fit_gaussian_2d(miss_pts), ood), gaussian_kl(fit_gaussian_2d(correct_pts), ood)


# --- model-level evaluation --------------------------------------------------


def _threads() -> int:
    env = os.environ.get("UNCGAP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def model_measures(model: MlpModel, x, chunk: int = 4096) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Logits and all measures for every row of ``x``; chunks may run in parallel."""
    x = np.asarray(x, dtype=np.float64)
    bounds = [(i, min(i + chunk, x.shape[0])) for i in range(0, x.shape[0], chunk)] or [(0, 0)]

    def work(b):
        z = model.logits(x[b[0]:b[1]])
        return z, batch_measures(alpha_from_logits(z))

    workers = min(_threads(), len(bounds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    z = np.concatenate([p[0] for p in parts])
    meas = {k: np.concatenate([p[1][k] for p in parts]) for k in MEASURES}
    return z, meas


def uncertainty_scores(meas: dict[str, np.ndarray], name: str) -> np.ndarray:
    return ORIENTATION[name] * meas[name]


def detection_scores(meas_pos, meas_neg) -> dict[str, dict[str, float]]:
    out = {}
    for name in MEASURES:
        pop = ScoredPopulation(uncertainty_scores(meas_pos, name), uncertainty_scores(meas_neg, name))
        out[name] = {"auroc": auroc(pop), "aupr": aupr(pop)}
    return out


def representation_gap(model: MlpModel, in_test: LabeledDataset, ood_test: LabeledDataset) -> tuple[float, float]:
    """``(gap_kl_miss, gap_kl_correct)`` for a model on held-out data."""
    z_in, m_in = model_measures(model, in_test.features)
    _, m_ood = model_measures(model, ood_test.features)
    ok = np.argmax(z_in, axis=1) == in_test.labels
    f_in = gap_features(m_in["max_p"], m_in["dent"])
    return gap_kl(f_in[ok], f_in[~ok], gap_features(m_ood["max_p"], m_ood["dent"]))


@dataclass
class DetectionReport:
    accuracy: float
    n_in: int
    n_ood: int
    n_misclassified: int
    ood_detection: dict = field(default_factory=dict)
    misclassification: dict | None = None
    rms_calibration: float | None = None
    gap_kl_miss: float | None = None
    gap_kl_correct: float | None = None
    errors: list[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.errors

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n"


def evaluate(model: MlpModel, in_test: LabeledDataset, ood_test: LabeledDataset, n_bins: int = 15) -> DetectionReport:
    """OOD detection, misclassification detection, calibration and gap KLs.

    Metrics that cannot be computed (e.g. no misclassified examples) are left
    as ``None`` and the reason is appended to ``errors``.
    """
    if len(in_test) == 0:
        raise ValueError("in-domain test set is empty")
    z_in, m_in = model_measures(model, in_test.features)
    ok = np.argmax(z_in, axis=1) == in_test.labels
    rep = DetectionReport(float(ok.mean()), len(in_test), len(ood_test), int((~ok).sum()))

    if len(ood_test):
        _, m_ood = model_measures(model, ood_test.features)
        rep.ood_detection = detection_scores(m_ood, m_in)
        conf = np.concatenate([m_in["max_p"], m_ood["max_p"]])
        corr = np.concatenate([ok, np.zeros(len(ood_test), bool)])
    else:
        m_ood = None
        rep.errors.append("ood test set is empty")
        conf, corr = m_in["max_p"], ok
    if conf.size >= n_bins:
        rep.rms_calibration = rms_calibration_error(conf, corr, n_bins)
    else:
        rep.errors.append(f"fewer samples ({conf.size}) than calibration bins ({n_bins})")

    miss = {k: v[~ok] for k, v in m_in.items()}
    corr_m = {k: v[ok] for k, v in m_in.items()}
    if ok.all() or not ok.any():
        rep.errors.append("misclassification detection needs both correct and misclassified examples")
    else:
        rep.misclassification = detection_scores(miss, corr_m)

    if m_ood is not None:
        f_in = gap_features(m_in["max_p"], m_in["dent"])
        try:
            rep.gap_kl_miss, rep.gap_kl_correct = gap_kl(f_in[ok], f_in[~ok], gap_features(m_ood["max_p"], m_ood["dent"]))
        except GroupTooSmall as exc:
            rep.errors.append(str(exc))
    return rep


def evaluate_grid(model: MlpModel, spec: GridSpec) -> np.ndarray:
    """``(r*r, 8)`` table with columns :data:`GRID_HEADER`."""
    pts = make_grid(spec)
    _, meas = model_measures(model, pts)
    return np.column_stack([pts] + [meas[k] for k in MEASURES])


def write_grid_csv(table: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(GRID_HEADER) + "\n")
        for row in table:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
