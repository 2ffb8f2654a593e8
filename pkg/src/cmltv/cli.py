"""Command-line entry point: gen-data, train, eval, predict and sweep."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .config import ConfigError, RunConfig, load_config, parse_overrides
from .data import DataError, Dataset, generate, read_csv, split, write_csv
from .losses import CONTRASTIVE_TERMS
from .metrics import MetricsReport, evaluate, format_table, summarize
from .model import BackboneConfig, load_checkpoint, checkpoint_json
from .training import TrainingError, feasible_grid, predict, sweep_predictions, train, validate_grid

logger = logging.getLogger("cmltv")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_TRAIN = 5


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.paths.data_in:
        return read_csv(cfg.paths.data_in, cfg.paths.schema)
    return generate(cfg.data)


def _backbone(cfg: RunConfig, width: int) -> BackboneConfig:
    return BackboneConfig(input_dim=width, hidden_dims=list(cfg.backbone.hidden_dims), use_batchnorm=cfg.backbone.use_batchnorm)


def _report_text(rows) -> str:
    return format_table(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig) -> Path:
    dataset = generate(cfg.data)
    out = Path(cfg.paths.data_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(f".{out.name}.tmp")
    write_csv(dataset, tmp)
    os.replace(tmp, out)
    meta = dataset.summary()
    meta["generator"] = cfg.to_dict()["data"]
    atomic_write(out.with_suffix(".meta.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    logger.info("wrote %s (%d rows, %d positive)", out, len(dataset), dataset.n_pos)
    return out


def cmd_train(cfg: RunConfig) -> dict:
    """Train ``cfg.repeat`` seeds and write per-seed and aggregate reports."""
    report_dir = Path(cfg.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(report_dir / "config.json", cfg.to_json())
    dataset = _load_dataset(cfg)
    train_set, valid_set, test_set = split(dataset, cfg.split)
    eval_set = test_set if len(test_set) else valid_set
    backbone = _backbone(cfg, dataset.n_features)

    reports = {}
    for i in range(cfg.repeat):
        seed = cfg.train.seed + i
        tcfg = type(cfg.train)(**{**cfg.to_dict()["train"], "seed": seed})
        model, history = train(train_set, valid_set, backbone, cfg.head, tcfg)
        preds = predict(model, eval_set)
        report = evaluate(preds.y_hat, eval_set.ltv)
        label = f"seed_{seed}"
        reports[label] = report
        seed_dir = report_dir / label
        atomic_write(seed_dir / "checkpoint.json", checkpoint_json(model))
        atomic_write(seed_dir / "history.csv", history.to_csv())
        atomic_write(seed_dir / "report.json", report.to_json() + "\n")
        atomic_write(seed_dir / "report.txt", report.to_table(label))
        logger.info("%s: %d epochs, test auc %.4f", label, len(history), report.all["auc"])

    summary = {
        "config": cfg.to_dict(),
        "disabled_terms": list(cfg.train.disabled_terms),
        "eval_split": "test" if len(test_set) else "validation",
        "per_seed": {k: r.to_dict() for k, r in reports.items()},
        "mean_std": summarize(list(reports.values())),
    }
    atomic_write(report_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    mean_rep = MetricsReport(
        all={k: v["mean"] for k, v in summary["mean_std"]["all"].items()},
        positive={k: v["mean"] for k, v in summary["mean_std"]["positive"].items()},
    )
    std_rep = MetricsReport(
        all={k: v["std"] for k, v in summary["mean_std"]["all"].items()},
        positive={k: v["std"] for k, v in summary["mean_std"]["positive"].items()},
    )
    atomic_write(report_dir / "summary.txt", _report_text({**reports, "mean": mean_rep, "std": std_rep}))
    return summary


def cmd_eval(checkpoint: str, data: str, schema: Optional[str] = None, out: Optional[str] = None) -> MetricsReport:
    model = load_checkpoint(checkpoint)
    dataset = read_csv(data, schema)
    _check_width(model, dataset, checkpoint, data)
    report = evaluate(predict(model, dataset).y_hat, dataset.ltv)
    if out:
        atomic_write(out, report.to_json() + "\n")
        atomic_write(Path(out).with_suffix(".txt"), report.to_table("eval"))
    return report


def cmd_predict(checkpoint: str, data: str, out: str, schema: Optional[str] = None) -> Path:
    """Copy the input CSV and append p_hat, y_d, y_l, y_c, y_fused columns."""
    model = load_checkpoint(checkpoint)
    dataset = read_csv(data, schema)
    _check_width(model, dataset, checkpoint, data)
    preds = predict(model, dataset)
    with open(data, newline="") as fh:
        rows = list(csv.reader(fh))
    extra = np.column_stack([preds.p_hat, preds.y_d, preds.y_l, preds.y_c, preds.y_hat])
    lines = [rows[0] + ["p_hat", "y_d", "y_l", "y_c", "y_fused"]]
    lines += [row + [repr(float(v)) for v in vals] for row, vals in zip(rows[1:], extra)]
    text = "".join(",".join(r) + "\n" for r in lines)
    atomic_write(out, text)
    return Path(out)


def cmd_sweep(cfg: RunConfig, grid) -> List[dict]:
    """Train once (first seed) and evaluate the fused prediction on each grid point."""
    grid = validate_grid(grid)
    report_dir = Path(cfg.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(report_dir / "config.json", cfg.to_json())
    dataset = _load_dataset(cfg)
    train_set, valid_set, test_set = split(dataset, cfg.split)
    eval_set = test_set if len(test_set) else valid_set
    model, _ = train(train_set, valid_set, _backbone(cfg, dataset.n_features), cfg.head, cfg.train)
    results = sweep_predictions(predict(model, eval_set), eval_set.ltv, grid)
    points = [{"alpha": a, "beta": b, "report": r.to_dict()} for a, b, r in results]
    atomic_write(report_dir / "sweep.json", json.dumps(points, indent=2, sort_keys=True) + "\n")
    atomic_write(report_dir / "sweep.txt", format_table({f"a={a:g},b={b:g}": r for a, b, r in results}))
    return points


def _check_width(model, dataset, checkpoint, data) -> None:
    want = model.backbone_config.input_dim
    if dataset.n_features != want:
        raise DataError(f"checkpoint {checkpoint} expects {want} features, data {data} has {dataset.n_features}")


# ---------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmltv", description="Multi-view LTV prediction with contrastive losses.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    for name in ("gen-data", "train", "sweep"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run config")
        if name == "train":
            s.add_argument("--no-contrastive", action="store_true", help="disable all four contrastive terms")
        if name == "sweep":
            s.add_argument("--grid", default="0,0.3,0.6", help="comma-separated values for alpha and beta")

    e = sub.add_parser("eval")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--schema")
    e.add_argument("--out")

    pr = sub.add_parser("predict")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--schema")
    pr.add_argument("--out", required=True)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args, rest = _parser().parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    report_dir = None
    try:
        cfg = None
        if args.command in ("gen-data", "train", "sweep"):
            overrides = parse_overrides(rest)
            if getattr(args, "no_contrastive", False):
                base = load_config(args.config, overrides)
                overrides["train.disabled_terms"] = sorted(set(base.train.disabled_terms) | set(CONTRASTIVE_TERMS))
            cfg = load_config(args.config, overrides)
        elif rest:
            raise ConfigError(f"unexpected arguments: {rest}")

        if args.command == "gen-data":
            print(cmd_gen_data(cfg))
        elif args.command == "train":
            report_dir = Path(cfg.paths.report_dir)
            _clear_marker(report_dir)
            summary = cmd_train(cfg)
            print(json.dumps(summary["mean_std"], indent=2, sort_keys=True))
        elif args.command == "sweep":
            report_dir = Path(cfg.paths.report_dir)
            _clear_marker(report_dir)
            values = [float(v) for v in args.grid.split(",") if v.strip()]
            points = cmd_sweep(cfg, feasible_grid(values))
            print(f"{len(points)} grid points written to {report_dir / 'sweep.json'}")
        elif args.command == "eval":
            print(cmd_eval(args.checkpoint, args.data, args.schema, args.out).to_table("eval"), end="")
        elif args.command == "predict":
            print(cmd_predict(args.checkpoint, args.data, args.out, args.schema))
        return EXIT_OK
    except ConfigError as exc:
        return _fail(report_dir, EXIT_CONFIG, f"config error: {exc}")
    except DataError as exc:
        return _fail(report_dir, EXIT_DATA, f"data error: {exc}")
    except OSError as exc:
        return _fail(report_dir, EXIT_IO, f"I/O error: {exc}")
    except TrainingError as exc:
        return _fail(report_dir, EXIT_TRAIN, f"training error: {exc}")
    except ValueError as exc:
        return _fail(report_dir, EXIT_CONFIG, f"invalid input: {exc}")


def _clear_marker(report_dir: Path) -> None:
    marker = report_dir / ".failed"
    if marker.exists():
        marker.unlink()


def _fail(report_dir: Optional[Path], code: int, message: str) -> int:
    print(message, file=sys.stderr)
    if report_dir is not None:
        try:
            report_dir.mkdir(parents=True, exist_ok=True)
            (report_dir / ".failed").write_text(message + "\n")
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
