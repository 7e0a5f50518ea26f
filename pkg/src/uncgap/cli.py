"""``uncgap`` command line: gen-data, train, eval, grid, measures.

Exit codes: 0 success, 2 config/input validation, 3 numerical failure,
4 evaluation group failure (report still written, with nulls).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import DataFormatError, GridSpec, LabeledDataset, load_csv, sample_in_domain, sample_ood, save_csv
from .dirichlet import measures_from_alpha
from .evaluation import evaluate, evaluate_grid, write_grid_csv
from .network import TrainingDiverged, init, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_GROUP = 0, 2, 3, 4

log = logging.getLogger("uncgap")


class InputError(Exception):
    pass


def generate(cfg: dict) -> tuple[LabeledDataset, LabeledDataset]:
    """Train and held-out test sets (each in-domain + OOD) for a config."""
    d, e = cfg["data"], cfg["eval"]
    radius = cfgmod.exclusion_radius(cfg)
    train_set = LabeledDataset.concat(
        sample_in_domain(d["n_per_class"], d["means"], d["sigma_std"], d["seed"]),
        sample_ood(d["ood_n"], d["ood_box"], radius, d["means"], d["seed"] + 1),
    )
    test_set = LabeledDataset.concat(
        sample_in_domain(e["in_test_n"], d["means"], d["sigma_std"], e["seed"]),
        sample_ood(e["ood_test_n"], d["ood_box"], radius, d["means"], e["seed"] + 1),
    )
    return train_set, test_set


def cmd_gen_data(args) -> int:
    cfg = cfgmod.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, test_set = generate(cfg)
    save_csv(train_set, out / "train.csv")
    save_csv(test_set, out / "test.csv")
    print(f"wrote {out / 'train.csv'} ({len(train_set)} rows) and {out / 'test.csv'} ({len(test_set)} rows)")
    return EXIT_OK


def _records_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.stem + ".records.csv")


def cmd_train(args) -> int:
    cfg = cfgmod.load(args.config, args.preset)
    data = load_csv(args.data)
    k = cfg["model"]["layer_dims"][-1]
    ind = data.in_domain
    if len(ind) == 0:
        raise InputError(f"{args.data}: no in-domain rows")
    if ind.labels.max() >= k:
        raise InputError(f"{args.data}: label {ind.labels.max()} out of range for K={k}")
    model = init(cfg["model"]["layer_dims"], cfg["model"]["seed"])
    t = cfg["training"]
    trained, records = train(
        model, ind.features, ind.labels, data.ood.features,
        cfgmod.loss_config(cfg), cfgmod.optimizer_state(cfg),
        t["epochs"], t["batch_size"], t["seed"],
    )
    ckpt = Path(args.out)
    save_checkpoint(
        trained, ckpt,
        loss_config=cfg["loss"], optimizer=cfg["optimizer"], seed=cfg["model"]["seed"],
        epochs=t["epochs"], training=t, preset=cfg.get("preset"), config=cfg,
    )
    rec_path = Path(args.records) if args.records else _records_path(ckpt)
    with open(rec_path, "w", newline="") as fh:
        fh.write("epoch,objective,in_loss,out_loss,train_accuracy\n")
        for r in records:
            fh.write(f"{r.epoch},{r.objective:.17g},{r.in_loss:.17g},{r.out_loss:.17g},{r.train_accuracy:.17g}\n")
    final = f", final accuracy {records[-1].train_accuracy:.4f}" if records else ""
    print(f"wrote {ckpt} and {rec_path}{final}")
    return EXIT_OK


def _load_model(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise InputError(f"checkpoint not found: {path}") from None
    except (ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_eval(args) -> int:
    model, doc = _load_model(args.checkpoint)
    data = load_csv(args.data)
    ind, ood = data.in_domain, data.ood
    if len(ind) == 0:
        raise InputError(f"{args.data}: no in-domain rows")
    k = model.n_classes
    if int(ind.labels.max()) + 1 != k:
        raise InputError(f"checkpoint has K={k} but {args.data} has labels 0..{int(ind.labels.max())}")
    n_bins = args.n_bins or doc.get("config", {}).get("eval", {}).get("n_bins", 15)
    rep = evaluate(model, ind, ood, n_bins=n_bins)
    Path(args.out).write_text(rep.to_json())
    print(f"wrote {args.out}: accuracy {rep.accuracy:.4f}")
    if not rep.complete:
        for e in rep.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_GROUP
    return EXIT_OK


def _range(text: str, flag: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise InputError(f"{flag}: expected lo:hi, got {text!r}") from None
    return lo, hi


def cmd_grid(args) -> int:
    model, doc = _load_model(args.checkpoint)
    g = doc.get("config", {}).get("eval", {}).get("grid", cfgmod.DEFAULTS["eval"]["grid"])
    xr = _range(args.x, "--x") if args.x else tuple(g["x_range"])
    yr = _range(args.y, "--y") if args.y else tuple(g["y_range"])
    res = args.res if args.res is not None else g["resolution"]
    try:
        spec = GridSpec(xr, yr, res)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    table = evaluate_grid(model, spec)
    write_grid_csv(table, args.out)
    print(f"wrote {args.out} ({table.shape[0]} rows)")
    return EXIT_OK


def cmd_measures(args) -> int:
    try:
        alpha = [float(v) for v in args.alpha.split(",")]
    except ValueError:
        raise InputError(f"--alpha: expected comma-separated numbers, got {args.alpha!r}") from None
    if len(alpha) < 2 or any(not a > 0 or not np.isfinite(a) for a in alpha):
        raise InputError("--alpha: need at least two finite positive values")
    for name, val in measures_from_alpha(alpha).as_dict().items():
        print(f"{name}: {val:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uncgap", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate train/test CSVs")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train a model and write a checkpoint")
    s.add_argument("--config")
    s.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint JSON path")
    s.add_argument("--records", help="training-record CSV (default: <checkpoint>.records.csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="detection / calibration / gap report")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="held-out CSV with in-domain and OOD rows")
    s.add_argument("--out", required=True)
    s.add_argument("--n-bins", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grid", help="per-point measures on a lattice")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--x", help="lo:hi")
    s.add_argument("--y", help="lo:hi")
    s.add_argument("--res", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("measures", help="uncertainty measures of one Dirichlet")
    s.add_argument("--alpha", required=True, help="comma-separated concentrations")
    s.set_defaults(func=cmd_measures)
    return p


def _join_range_flags(argv: list[str]) -> list[str]:
    # "--x -15:15" would otherwise be parsed as a flag
    out, i = [], 0
    while i < len(argv):
        if argv[i] in ("--x", "--y", "--alpha") and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    argv = _join_range_flags(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (InputError, DataFormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"input error: file not found: {exc.filename}", file=sys.stderr)
    except TrainingDiverged as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
