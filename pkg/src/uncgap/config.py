"""JSON experiment configuration, presets, and fail-fast validation."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .data import DEFAULT_BOX, DEFAULT_MEANS, DEFAULT_SIGMA_STD, GridSpec
from .losses import FAMILIES, LossConfig
from .network import OptimizerState


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted location of the bad field."""

    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path}: {msg}" if path else msg)


SGD = {"kind": "sgd", "lr": 0.05, "momentum": 0.9}
ADAM = {"kind": "adam", "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8}

DEFAULTS = {
    "data": {
        "means": [list(m) for m in DEFAULT_MEANS],
        "sigma_std": DEFAULT_SIGMA_STD,
        "n_per_class": 200,
        "ood_box": [list(b) for b in DEFAULT_BOX],
        "ood_n": 600,
        "exclusion_radius": None,  # None -> 3 * sigma_std
        "seed": 0,
    },
    "model": {"layer_dims": [2, 50, 50, 3], "seed": 0},
    "loss": {
        "family": "proposed",
        "lambda_in": 0.5,
        "lambda_out": 1.0 / 3.0 - 0.5,
        "gamma": 1.0,
        "beta_in_correct": 100.0,
        "beta_in_incorrect": 1.0,
        "beta_out": 1.0,
    },
    "optimizer": dict(SGD),
    "training": {"epochs": 500, "batch_size": 64, "seed": 0},
    "eval": {
        "grid": {"x_range": [-15.0, 15.0], "y_range": [-13.0, 17.0], "resolution": 100},
        "n_bins": 15,
        "in_test_n": 200,  # per class
        "ood_test_n": 600,
        "seed": 100,
    },
}


def _proposed(lam_in, lam_out):
    return {"loss": {"family": "proposed", "lambda_in": lam_in, "lambda_out": lam_out}, "optimizer": dict(SGD)}


def _kl(family, beta_out=1.0):
    return {
        "loss": {"family": family, "beta_in_correct": 100.0, "beta_in_incorrect": 1.0, "beta_out": beta_out},
        "optimizer": dict(ADAM),
    }


# lambda_out values assume K = 3 (1/#class +- 0.5)
PRESETS = {
    "baseline": {"loss": {"family": "cross_entropy", "lambda_in": 0.0, "lambda_out": 0.0}, "optimizer": dict(SGD)},
    "oe": _proposed(0.0, 0.0),
    "dpn-plus": _proposed(1.5, 1.0 / 3.0 + 0.5),
    "dpn-minus": _proposed(0.5, 1.0 / 3.0 - 0.5),
    "dpn-0-minus": _proposed(0.0, -0.5),
    "dpn-half-0": _proposed(0.5, 0.0),
    "dpn-rev": _kl("rkl"),
    "dpn-fwd": _kl("fkl"),
    "dpn-rev-frac": _kl("rkl", beta_out=0.1),
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown field")
        if isinstance(base[key], dict) and key != "optimizer":
            if not isinstance(val, dict):
                raise ConfigError(where, "expected an object")
            out[key] = _merge(base[key], val, where)
        elif key == "optimizer":
            if not isinstance(val, dict):
                raise ConfigError(where, "expected an object")
            out[key] = copy.deepcopy(val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def apply_preset(cfg: dict, name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[name]
    out = copy.deepcopy(cfg)
    out["loss"] = {**DEFAULTS["loss"], **preset["loss"]}
    out["optimizer"] = dict(preset["optimizer"])
    out["preset"] = name
    return out


def build(raw: dict | None = None, preset: str | None = None) -> dict:
    """Merge ``raw`` over the defaults, apply ``preset`` and validate."""
    raw = dict(raw or {})
    file_preset = raw.pop("preset", None)
    cfg = copy.deepcopy(DEFAULTS)
    if file_preset is not None:
        cfg = apply_preset(cfg, file_preset)
        cfg.pop("preset")
    cfg = _merge(cfg, raw)
    chosen = preset or file_preset
    if preset is not None:
        cfg = apply_preset(cfg, preset)
    if chosen is not None:
        cfg["preset"] = chosen
    validate(cfg)
    return cfg


def load(path, preset: str | None = None) -> dict:
    if path is None:
        return build({}, preset)
    p = Path(path)
    if not p.exists():
        raise ConfigError("", f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{p}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("", f"{p}: top level must be an object")
    return build(raw, preset)


def _num(cfg, path, cond=None, msg="", integer=False):
    node = cfg
    for part in path.split("."):
        node = node[part]
    kinds = (int,) if integer else (int, float)
    if isinstance(node, bool) or not isinstance(node, kinds):
        raise ConfigError(path, f"expected {'an integer' if integer else 'a number'}, got {node!r}")
    if cond is not None and not cond(node):
        raise ConfigError(path, msg)
    return node


def validate(cfg: dict) -> None:
    d = cfg["data"]
    means = d["means"]
    if not isinstance(means, list) or len(means) < 2 or any(not isinstance(m, list) or len(m) != 2 for m in means):
        raise ConfigError("data.means", "expected a list of at least two [x, y] pairs")
    _num(cfg, "data.sigma_std", lambda v: v > 0, "must be > 0")
    _num(cfg, "data.n_per_class", lambda v: v >= 1, "must be >= 1", integer=True)
    _num(cfg, "data.ood_n", lambda v: v >= 0, "must be >= 0", integer=True)
    _num(cfg, "data.seed", integer=True)
    box = d["ood_box"]
    if not isinstance(box, list) or len(box) != 2 or any(not isinstance(b, list) or len(b) != 2 or not b[0] < b[1] for b in box):
        raise ConfigError("data.ood_box", "expected [[xlo, xhi], [ylo, yhi]] with lo < hi")
    if d["exclusion_radius"] is not None:
        _num(cfg, "data.exclusion_radius", lambda v: v >= 0, "must be >= 0")

    dims = cfg["model"]["layer_dims"]
    if not isinstance(dims, list) or len(dims) < 2 or any(isinstance(v, bool) or not isinstance(v, int) or v <= 0 for v in dims):
        raise ConfigError("model.layer_dims", "expected at least two positive integers")
    if dims[0] != 2:
        raise ConfigError("model.layer_dims", "input dimension must be 2 for the synthetic data")
    if dims[-1] != len(means):
        raise ConfigError("model.layer_dims", f"output dimension {dims[-1]} != number of classes {len(means)}")
    _num(cfg, "model.seed", integer=True)

    loss = cfg["loss"]
    if loss["family"] not in FAMILIES:
        raise ConfigError("loss.family", f"must be one of {FAMILIES}")
    for key in ("lambda_in", "lambda_out", "gamma", "beta_in_correct", "beta_in_incorrect", "beta_out"):
        _num(cfg, f"loss.{key}")
    try:
        loss_config(cfg)
    except ValueError as exc:
        raise ConfigError("loss", str(exc)) from None

    opt = cfg["optimizer"]
    if opt.get("kind") not in ("sgd", "adam"):
        raise ConfigError("optimizer.kind", "must be 'sgd' or 'adam'")
    allowed = set(SGD) if opt["kind"] == "sgd" else set(ADAM)
    for key in opt:
        if key not in allowed:
            raise ConfigError(f"optimizer.{key}", f"not a field of the {opt['kind']} optimizer")
    _num(cfg, "optimizer.lr", lambda v: v > 0, "must be > 0")
    try:
        optimizer_state(cfg)
    except ValueError as exc:
        raise ConfigError("optimizer", str(exc)) from None

    _num(cfg, "training.epochs", lambda v: v >= 0, "must be >= 0", integer=True)
    _num(cfg, "training.batch_size", lambda v: v >= 1, "must be >= 1", integer=True)
    _num(cfg, "training.seed", integer=True)

    _num(cfg, "eval.n_bins", lambda v: v >= 1, "must be >= 1", integer=True)
    _num(cfg, "eval.in_test_n", lambda v: v >= 1, "must be >= 1", integer=True)
    _num(cfg, "eval.ood_test_n", lambda v: v >= 0, "must be >= 0", integer=True)
    _num(cfg, "eval.seed", integer=True)
    _num(cfg, "eval.grid.resolution", integer=True)
    try:
        grid_spec(cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError("eval.grid", str(exc)) from None


def loss_config(cfg: dict) -> LossConfig:
    return LossConfig(**cfg["loss"])


def optimizer_state(cfg: dict) -> OptimizerState:
    o = dict(cfg["optimizer"])
    kind = o.pop("kind")
    kw = {"learning_rate": o.pop("lr")}
    kw.update(o)
    return OptimizerState(kind=kind, **kw)


def grid_spec(cfg: dict) -> GridSpec:
    g = cfg["eval"]["grid"]
    return GridSpec(tuple(g["x_range"]), tuple(g["y_range"]), g["resolution"])


def exclusion_radius(cfg: dict) -> float:
    r = cfg["data"]["exclusion_radius"]
    return 3.0 * cfg["data"]["sigma_std"] if r is None else float(r)
