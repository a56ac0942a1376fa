"""Command-line entry points.

Commands: ``generate-data``, ``train``, ``evaluate``, ``infer``, ``report``.
Failures print one line ``error: <category>: <message>`` to stderr and exit
nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import io as pio
from .errors import ConfigurationError, InputError, PdeclError
from .fields import PROBLEMS, build_dataset, read_dataset, write_dataset
from .oracles import GridSolution
from .problems import make_problem
from .studies import complexity_report, fitted_vs_unfitted_histogram, fit_scaling, interpolation_ablation
from .training import (Model, TrainConfig, evaluate, load_checkpoint, predict_grid, reference_solutions,
                       train)

EXIT_CODES = {"input": 2, "config": 2, "format": 3, "solver": 4, "io": 5, "error": 1}
STUDIES = ("fitted-vs-unfitted", "interpolation", "complexity")
DATA_KEYS = {"problem", "train_size", "test_size", "seed", "grid"}
RUN_KEYS = {"train", "data", "out", "cache"}


def parse_grid(text: str) -> tuple:
    try:
        parts = tuple(int(p) for p in str(text).lower().split("x"))
    except ValueError:
        raise InputError(f"bad grid {text!r}; expected e.g. 50x50") from None
    if not parts or min(parts) < 1:
        raise InputError(f"bad grid {text!r}")
    return parts


def load_yaml(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return data


def check_keys(data: dict, allowed, where: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _write_json(path, obj) -> None:
    pio.atomic_write_bytes(path, (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode())


# ----------------------------------------------------------------------------

def cmd_generate_data(args) -> int:
    cfg = {"problem": "convection", "train_size": 50, "test_size": 5, "seed": 0, "grid": None}
    if args.config:
        data = load_yaml(args.config)
        check_keys(data, DATA_KEYS, args.config)
        cfg.update(data)
    for key in ("problem", "train_size", "test_size", "seed", "grid"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    if cfg["problem"] not in PROBLEMS:
        raise InputError(f"unknown problem {cfg['problem']!r}; valid: {', '.join(PROBLEMS)}")
    grid = None if cfg["grid"] in (None, "") else parse_grid(cfg["grid"])
    sets = []
    if int(cfg["train_size"]) > 0:
        sets.append(build_dataset(cfg["problem"], int(cfg["train_size"]), int(cfg["seed"]), "train", grid))
    if int(cfg["test_size"]) > 0:
        sets.append(build_dataset(cfg["problem"], int(cfg["test_size"]), int(cfg["seed"]), "test", grid))
    if not sets:
        raise InputError("nothing to generate")
    manifest = write_dataset(sets, args.out)
    print(json.dumps({"manifest": str(manifest), "instances": sum(len(s) for s in sets)}))
    return 0


def _train_config(args) -> tuple:
    data = load_yaml(args.config) if args.config else {}
    check_keys(data, RUN_KEYS, args.config or "config")
    tc = dict(data.get("train") or {})
    if args.mode:
        tc["mode"] = args.mode
    if args.steps is not None:
        tc["steps"] = args.steps
    config = TrainConfig.from_dict(tc)
    data_dir = args.data or data.get("data")
    out = args.out or data.get("out")
    if not data_dir or not out:
        raise InputError("both a dataset directory and an output directory are required")
    return config, Path(data_dir), Path(out), args.cache or data.get("cache")


def cmd_train(args) -> int:
    config, data_dir, out, cache = _train_config(args)
    train_set = read_dataset(data_dir, "train")
    if train_set.problem != config.problem:
        raise InputError(f"dataset problem {train_set.problem!r} does not match config {config.problem!r}")
    test_set = refs = None
    if config.eval_every:
        try:
            test_set = read_dataset(data_dir, "test")
        except InputError:
            test_set = None
        if test_set is not None:
            refs = reference_solutions(config.make_problem(), test_set, config.eval_grid, cache)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.ckpt"
    history_path = out / "history.jsonl"
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        if resume.model.config is not None and resume.model.config.to_dict() != {**config.to_dict(), "steps": resume.model.config.steps}:
            raise ConfigurationError("checkpoint was trained with a different configuration")
        resume.model.config = config
        _truncate_history(history_path, resume.step)
    elif history_path.exists():
        history_path.unlink()
    _write_json(out / "config.json", config.to_dict())
    ckpt, history = train(config, train_set, test_set, refs, ckpt_path, history_path, resume,
                          stop_after=args.stop_after)
    last = history.records[-1]["loss"] if len(history) else None
    print(json.dumps({"checkpoint": str(ckpt_path), "step": ckpt.step, "final_loss": last}))
    return 0


def _truncate_history(path: Path, step: int) -> None:
    if not path.exists():
        return
    keep = [r for r in pio.read_records(path) if r["step"] <= step]
    pio.write_records(path, keep)


def _load_model(args, problem_name: str) -> Model:
    if args.pass_through:
        return Model("oracle", make_problem(problem_name))
    if not args.checkpoint:
        raise InputError("a checkpoint is required (or --pass-through)")
    model = load_checkpoint(args.checkpoint).eval_model()
    if model.problem.name != problem_name:
        raise InputError(f"checkpoint is for {model.problem.name!r} but the dataset is {problem_name!r}")
    return model


def _eval_grid(args, model: Model) -> tuple:
    if args.grid:
        return parse_grid(args.grid)
    if model.config is not None:
        return model.config.eval_grid
    return (50, 50)


def cmd_evaluate(args) -> int:
    test_set = read_dataset(args.data, args.split)
    model = _load_model(args, test_set.problem)
    grid = _eval_grid(args, model)
    if len(grid) != 2:
        raise InputError("evaluation grids are two-dimensional")
    problem = model.problem
    cache = args.cache or (Path(args.out) / "oracle_cache")
    refs = reference_solutions(problem, test_set, grid, cache)
    metrics, preds = evaluate(model, test_set, refs, subset_size=args.subset, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = metrics.to_dict()
    per = summary.pop("per_instance")
    _write_json(out / "metrics.json", summary)
    pio.write_records(out / "instances.jsonl", per)
    if args.export_grids:
        gdir = out / "grids"
        gdir.mkdir(exist_ok=True)
        for i, (ref, pred) in enumerate(zip(refs, preds)):
            diff = GridSolution(pred.values - ref.values, ref.axes, problem.name, "model")
            for tag, g in (("target", ref), ("prediction", pred), ("difference", diff)):
                g.save(gdir / f"{i:05d}_{tag}.grd")
                g.export_csv(gdir / f"{i:05d}_{tag}.csv")
    print(json.dumps({"relative_l2_mean": metrics.relative_l2_mean, "relative_l2_std": metrics.relative_l2_std,
                      "instances": len(per)}))
    return 0


def cmd_infer(args) -> int:
    ds = read_dataset(args.data, args.split)
    if not 0 <= args.index < len(ds):
        raise InputError(f"index {args.index} out of range for {len(ds)} instances")
    model = _load_model(args, ds.problem)
    if model.mode == "oracle":
        raise InputError("infer needs a trained checkpoint")
    grid = _eval_grid(args, model)
    axes = model.problem.eval_axes(grid)
    pred = predict_grid(model, ds[args.index], axes, seed=args.seed, subset_size=args.subset)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pred.save(out)
    pred.export_csv(out.with_suffix(".csv"))
    print(json.dumps({"grid": list(pred.grid_shape), "output": str(out)}))
    return 0


def cmd_report(args) -> int:
    if args.study not in STUDIES:
        raise InputError(f"unknown study {args.study!r}; valid: {', '.join(STUDIES)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.study == "complexity":
        grids = [parse_grid(g) for g in (args.grids or args.grid or "1000x1000").split(",")]
        n, N = args.n or 100, args.N or 100
        recs = complexity_report(n, N, grids, measure=not args.no_timing)
        if not args.no_timing:
            recs.append({"fit_scaling": fit_scaling()})
        pio.write_records(out / "complexity.jsonl", recs)
        for r in recs:
            print(json.dumps(r, sort_keys=True))
        return 0
    ds = read_dataset(args.data, args.split)
    model = _load_model(args, ds.problem)
    if model.mode != "hard":
        raise InputError("this study needs a hard-constrained checkpoint")
    phi = ds[args.index]
    problem = model.problem
    if args.study == "fitted-vs-unfitted":
        grid = parse_grid(args.grid or "100x100")
        ref = problem.oracle(phi, grid)
        rep = fitted_vs_unfitted_histogram(model, phi, ref, args.fit_points or 1000, seed=args.seed)
        _write_json(out / "fitted_vs_unfitted.json", rep.summary)
        bins = np.column_stack([rep.bin_edges[:-1], rep.bin_edges[1:], rep.fitted_counts, rep.unfitted_counts])
        np.savetxt(out / "histogram_bins.csv", bins, delimiter=",", fmt="%.17g",
                   header="lower,upper,fitted,unfitted", comments="")
        print(json.dumps(rep.summary, sort_keys=True))
        return 0
    grids = [parse_grid(g) for g in (args.grids or "100x100,1000x1000").split(",")]
    recs = interpolation_ablation(model, phi, args.fit_points or 750, grids, seed=args.seed)
    pio.write_records(out / "interpolation.jsonl", recs)
    for r in recs:
        print(json.dumps(r, sort_keys=True))
    return 0


# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdecl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="sample parameter fields and write a dataset")
    g.add_argument("--config")
    g.add_argument("--problem", choices=PROBLEMS)
    g.add_argument("--train-size", dest="train_size", type=int)
    g.add_argument("--test-size", dest="test_size", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--grid", help="field grid, e.g. 100 or 61x61")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate_data)

    t = sub.add_parser("train", help="train a basis network")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--cache")
    t.add_argument("--mode", choices=("hard", "soft"))
    t.add_argument("--steps", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-after", dest="stop_after", type=int, help=argparse.SUPPRESS)
    t.set_defaults(fn=cmd_train)

    def model_args(q):
        q.add_argument("--checkpoint")
        q.add_argument("--pass-through", dest="pass_through", action="store_true",
                       help="score the reference solutions against themselves")
        q.add_argument("--data", required=True)
        q.add_argument("--split", default="test", choices=("train", "test"))
        q.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("evaluate", help="relative L2 and residual on a dataset split")
    model_args(e)
    e.add_argument("--grid")
    e.add_argument("--subset", type=int, help="points used to fit the weights")
    e.add_argument("--cache", help="reference-solution cache directory")
    e.add_argument("--export-grids", dest="export_grids", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_evaluate)

    i = sub.add_parser("infer", help="solve one instance on a grid")
    model_args(i)
    i.add_argument("--index", type=int, default=0)
    i.add_argument("--grid")
    i.add_argument("--subset", type=int)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_infer)

    r = sub.add_parser("report", help="ablation studies")
    model_args_report = r.add_argument_group("model")
    model_args_report.add_argument("--checkpoint")
    model_args_report.add_argument("--pass-through", dest="pass_through", action="store_true",
                                   help=argparse.SUPPRESS)
    model_args_report.add_argument("--data")
    model_args_report.add_argument("--split", default="test", choices=("train", "test"))
    model_args_report.add_argument("--index", type=int, default=0)
    r.add_argument("--study", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--n", type=int)
    r.add_argument("--N", type=int)
    r.add_argument("--grid")
    r.add_argument("--grids")
    r.add_argument("--fit-points", dest="fit_points", type=int)
    r.add_argument("--no-timing", dest="no_timing", action="store_true")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def _category(exc: BaseException) -> str:
    if isinstance(exc, PdeclError):
        return exc.category
    if isinstance(exc, OSError):
        return "io"
    return "error"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (PdeclError, OSError) as exc:
        cat = _category(exc)
        msg = " ".join(str(exc).split())
        print(f"error: {cat}: {msg}", file=sys.stderr)
        return EXIT_CODES.get(cat, 1)


if __name__ == "__main__":
    sys.exit(main())
