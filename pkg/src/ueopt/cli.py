"""Config-driven command line runner.

Subcommands:

    synth                 write synthetic train/test/prototype caches
    run                   train and evaluate each method x shift x seed
    sweep                 re-run while varying one axis, plot the curves
    report                rebuild the aggregate table from per-run JSONs
    check-grad            compare analytic gradients against finite differences
    extract-passthrough   validate an externally produced EMB1 cache

Typical session:

    ueopt synth --out data --config synth.json
    ueopt run --config run.json --out results
    ueopt sweep --config run.json --axis beta --out sweeps
    ueopt report --out results

Run configs are JSON and echo into the output directory. All outputs are
deterministic for a fixed config and seed list; SVG plots are the one
exception, their source CSVs are not.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .datamodel import (CacheFormatError, EmbeddingCache, ShiftKind, ShiftSpec,
                        load_cache, make_shift_spec, save_cache,
                        select_prototypes, select_training_subset)
from .metrics import EvalReport, curves_to_csv, evaluate, save_report
from .model import ModelState, build_head, save_adapter
from .objectives import METHODS, WEIGHT_FNS, check_gradients
from .synth import SynthConfig, generate, save_synth_config
from .trainer import TrainConfig, train
from .objectives import oracle_weights
from .validation import ValidationError

ZERO_SHOT = "zero-shot"
RUN_METHODS = (ZERO_SHOT,) + METHODS

_SWEEP_DEFAULTS = {
    "beta": [0.2, 0.5, 1.0, 2.0, 5.0],
    "batch_size": [32, 48, 64, 96, 128],
    "weight_fn": list(WEIGHT_FNS),
    "lambda": [round(x, 2) for x in np.linspace(0.05, 0.95, 19)],
}


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ValidationError(f"invalid JSON in {path}: {err}")


def _resolve_shift(obj: dict) -> ShiftSpec:
    """A shift entry is either explicit label lists or kind plus counts."""
    if "L_p" in obj:
        return ShiftSpec.from_json(obj)
    if "kind" in obj:
        return make_shift_spec(
            obj["kind"], obj["n_p"], obj["n_e"],
            obj.get("n_extra_train", 0), obj.get("n_drop_train", 0),
        )
    raise ValidationError(f"cannot interpret shift entry: {sorted(obj)}")


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


class Runner:
    """Holds the loaded caches and executes (method, shift, seed) cells."""

    def __init__(self, config: dict):
        caches = config.get("caches")
        if not caches:
            raise ValidationError("run config needs a 'caches' section")
        for key in ("train", "test", "prototypes"):
            if key not in caches:
                raise ValidationError(f"caches section missing {key!r}")
            if not Path(caches[key]).exists():
                raise ValidationError(f"cache file not found: {caches[key]}")
        self.train_cache = load_cache(caches["train"])
        self.test_cache = load_cache(caches["test"])
        self.prototypes = load_cache(caches["prototypes"])

        raw_shifts = config.get("shifts")
        if raw_shifts is None:
            raw_shifts = [config["shift"]] if "shift" in config else None
        if not raw_shifts:
            raise ValidationError("run config needs 'shift' or 'shifts'")
        self.shifts = [_resolve_shift(s) for s in raw_shifts]

        self.methods = list(config.get("methods", []))
        if not self.methods:
            raise ValidationError("run config needs a non-empty 'methods' list")
        unknown = set(self.methods) - set(RUN_METHODS)
        if unknown:
            raise ValidationError(f"unknown methods {sorted(unknown)}")
        self.seeds = [int(s) for s in config.get("seeds", [0])]
        if not self.seeds:
            raise ValidationError("seed list must be non-empty")
        self.train_cfg = TrainConfig.from_json(config.get("train", {}))
        self.curves = bool(config.get("curves", False))
        self.lambdas = config.get("lambdas")

    def run_cell(self, method: str, spec: ShiftSpec, seed: int):
        """Train (unless zero-shot) and evaluate one cell."""
        protos = select_prototypes(self.prototypes, spec.L_p)
        provenance = {
            "method": method,
            "seed": seed,
            "shift": spec.kind().value,
            "spec": spec.to_json(),
        }
        if method == ZERO_SHOT:
            cfg = replace(self.train_cfg, seed=seed)
            head = build_head(protos, m=cfg.prompt_len, k=cfg.context_dim,
                              tau=cfg.tau, seed=seed)
            k = head.projection.shape[1] // max(cfg.prompt_len, 1)
            state = ModelState.initial(head, m=cfg.prompt_len, k=k)
            log = None
        else:
            cfg = replace(self.train_cfg, seed=seed,
                          loss=replace(self.train_cfg.loss, method=method))
            pool = select_training_subset(self.train_cache, spec)
            weights = None
            if method == "ueo_oracle":
                weights = oracle_weights(pool.labels, spec.L_p)
            state, log = train(pool, protos, cfg, sample_weights=weights)
        report = evaluate(state, self.test_cache, spec,
                          include_curves=self.curves, lambdas=self.lambdas,
                          provenance=provenance)
        return state, report, log


def cmd_run(config: dict, out: Path) -> Path:
    """Execute every cell and write per-run JSON plus the aggregate CSV."""
    runner = Runner(config)
    out.mkdir(parents=True, exist_ok=True)
    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")

    rows = []
    failures = []
    for method in runner.methods:
        for spec in runner.shifts:
            kind = spec.kind().value
            accs, aucs, failed = [], [], False
            for seed in runner.seeds:
                stem = f"{method}__{kind}__s{seed}"
                try:
                    state, report, log = runner.run_cell(method, spec, seed)
                except (ValidationError, ArithmeticError) as err:
                    failed = True
                    failures.append((stem, str(err)))
                    (runs_dir / f"{stem}.json").write_text(
                        json.dumps({"error": str(err)}, indent=2, sort_keys=True) + "\n"
                    )
                    continue
                save_report(runs_dir / f"{stem}.json", report)
                save_adapter(runs_dir / f"{stem}.adapter.json",
                             state.adapter, state.head.seed_u)
                if log is not None:
                    log.to_csv(runs_dir / f"{stem}.train_log.csv")
                if report.os_curve:
                    curves_to_csv(runs_dir / f"{stem}.curves.csv",
                                  report.os_curve, report.hos_curve)
                accs.append(report.acc)
                aucs.append(report.auc)
            if failed or not accs:
                rows.append({"method": method, "shift": kind, "acc": None, "auc": None})
            else:
                mean_auc = None if any(a is None for a in aucs) else float(np.mean(aucs))
                rows.append({"method": method, "shift": kind,
                             "acc": float(np.mean(accs)), "auc": mean_auc})

    _write_aggregate(out / "aggregate.csv", rows)
    for stem, err in failures:
        print(f"FAILED {stem}: {err}", file=sys.stderr)
    return out / "aggregate.csv"


def _write_aggregate(path: Path, rows) -> None:
    lines = ["method,shift,ACC,AUC"]
    for r in rows:
        lines.append(f"{r['method']},{r['shift']},{_fmt(r['acc'])},{_fmt(r['auc'])}")
    path.write_text("\n".join(lines) + "\n")


def _read_aggregate(path: Path):
    rows = []
    lines = path.read_text().strip().splitlines()
    for line in lines[1:]:
        method, shift, acc, auc_v = line.split(",")
        rows.append({"method": method, "shift": shift,
                     "acc": float(acc) if acc else None,
                     "auc": float(auc_v) if auc_v else None})
    return rows


def cmd_sweep(config: dict, axis: str, out: Path) -> Path:
    """Repeat cmd_run across one axis and collect curves.

    The lambda axis is evaluation-side only: models are trained once per
    cell and re-thresholded, so its sweep reuses a single run per value
    grid instead of retraining.
    """
    if axis not in _SWEEP_DEFAULTS:
        raise ValidationError(f"unknown sweep axis {axis!r}")
    values = config.get("values", _SWEEP_DEFAULTS[axis])
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    if axis == "lambda":
        sub = dict(config)
        sub["curves"] = True
        sub["lambdas"] = [float(v) for v in values]
        agg = cmd_run(sub, out / "lambda_run")
        runner_rows = _read_aggregate(agg)
        for r in runner_rows:
            run_files = sorted((out / "lambda_run" / "runs").glob(
                f"{r['method']}__{r['shift']}__s*.json"))
            curves = _mean_curves(run_files)
            if curves is None:
                continue
            for lam, os_val, hos_val in curves:
                rows.append({"axis": axis, "value": lam, "method": r["method"],
                             "shift": r["shift"], "acc": r["acc"], "auc": r["auc"],
                             "os": os_val, "hos": hos_val})
    else:
        for value in values:
            sub = json.loads(json.dumps(config))  # deep copy
            name = f"{axis}_{value}"
            train_cfg = dict(sub.get("train", {}))
            if axis == "batch_size":
                train_cfg["batch_size"] = int(value)
            else:
                loss = dict(train_cfg.get("loss", {}))
                loss[axis] = float(value) if axis == "beta" else value
                train_cfg["loss"] = loss
            sub["train"] = train_cfg
            agg = cmd_run(sub, out / name)
            for r in _read_aggregate(agg):
                rows.append({"axis": axis, "value": value, "method": r["method"],
                             "shift": r["shift"], "acc": r["acc"], "auc": r["auc"],
                             "os": None, "hos": None})

    csv_path = out / f"sweep_{axis}.csv"
    lines = ["axis,value,method,shift,ACC,AUC,OS,HOS"]
    for r in rows:
        lines.append(
            f"{r['axis']},{r['value']},{r['method']},{r['shift']},"
            f"{_fmt(r['acc'])},{_fmt(r['auc'])},{_fmt(r['os'])},{_fmt(r['hos'])}"
        )
    csv_path.write_text("\n".join(lines) + "\n")
    _plot_sweep(rows, axis, out)
    return csv_path


def _mean_curves(run_files):
    """Average OS/HOS curves over seeds; None when no run carried curves."""
    collected = []
    for path in run_files:
        obj = json.loads(path.read_text())
        if "error" in obj or not obj.get("os_curve"):
            continue
        collected.append((obj["os_curve"], obj["hos_curve"]))
    if not collected:
        return None
    lams = [p[0] for p in collected[0][0]]
    os_mat = np.array([[p[1] for p in oc] for oc, _ in collected])
    hos_mat = np.array([[p[1] for p in hc] for _, hc in collected])
    return list(zip(lams, os_mat.mean(axis=0), hos_mat.mean(axis=0)))


def _plot_sweep(rows, axis: str, out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metrics = ("os", "hos") if axis == "lambda" else ("acc", "auc")
    for metric in metrics:
        series = {}
        for r in rows:
            if r[metric] is None:
                continue
            series.setdefault((r["method"], r["shift"]), []).append(
                (float(r["value"]) if not isinstance(r["value"], str) else r["value"],
                 r[metric])
            )
        if not series:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for (method, shift), points in sorted(series.items()):
            xs = [p[0] for p in points]
            ys = [p[1] for p in points]
            if isinstance(xs[0], str):
                ax.plot(range(len(xs)), ys, marker="o", label=f"{method}/{shift}")
                ax.set_xticks(range(len(xs)), xs, rotation=30, ha="right")
            else:
                ax.plot(xs, ys, marker="o", label=f"{method}/{shift}")
        ax.set_xlabel(axis)
        ax.set_ylabel(metric.upper())
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / f"sweep_{axis}_{metric}.svg")
        plt.close(fig)


def _config_cell_order(out: Path):
    """Cell ordering as cmd_run wrote it, recovered from the echoed config."""
    cfg_path = out / "run_config.json"
    if not cfg_path.exists():
        return None
    try:
        config = json.loads(cfg_path.read_text())
        methods = list(config["methods"])
        raw_shifts = config.get("shifts") or [config["shift"]]
        kinds = [_resolve_shift(s).kind().value for s in raw_shifts]
    except (KeyError, ValueError, ValidationError):
        return None
    order = [(m, k) for m in methods for k in kinds]
    return {cell: i for i, cell in enumerate(order)}


def cmd_report(out: Path) -> None:
    """Rebuild aggregate.csv from the per-run JSONs and print it.

    Row order follows the echoed run config when present so the rebuilt
    file is byte-identical to the one cmd_run wrote; unknown cells sort
    alphabetically at the end.
    """
    runs_dir = out / "runs"
    if not runs_dir.is_dir():
        raise ValidationError(f"no runs directory under {out}")
    cells: dict[tuple[str, str], dict[int, EvalReport | None]] = {}
    for path in sorted(runs_dir.glob("*.json")):
        if path.name.endswith(".adapter.json"):
            continue
        stem = path.stem
        try:
            method, kind, seed_part = stem.rsplit("__", 2)
        except ValueError:
            continue
        seed = int(seed_part.lstrip("s"))
        obj = json.loads(path.read_text())
        cells.setdefault((method, kind), {})[seed] = (
            None if "error" in obj else EvalReport.from_json(obj)
        )
    order = _config_cell_order(out)
    if order is None:
        ordered = sorted(cells.items())
    else:
        fallback = len(order)
        ordered = sorted(cells.items(),
                         key=lambda kv: (order.get(kv[0], fallback), kv[0]))
    rows = []
    for (method, kind), by_seed in ordered:
        reports = list(by_seed.values())
        if any(r is None for r in reports):
            rows.append({"method": method, "shift": kind, "acc": None, "auc": None})
            continue
        accs = [r.acc for r in reports]
        aucs = [r.auc for r in reports]
        mean_auc = None if any(a is None for a in aucs) else float(np.mean(aucs))
        rows.append({"method": method, "shift": kind,
                     "acc": float(np.mean(accs)), "auc": mean_auc})
    _write_aggregate(out / "aggregate.csv", rows)
    print((out / "aggregate.csv").read_text(), end="")


def cmd_synth(config: dict, out: Path) -> None:
    cfg = SynthConfig.from_json(config) if config else SynthConfig()
    out.mkdir(parents=True, exist_ok=True)
    train_c, test_c, proto_c = generate(cfg)
    save_cache(out / "train.emb", train_c)
    save_cache(out / "test.emb", test_c)
    save_cache(out / "prototypes.emb", proto_c)
    save_synth_config(out / "synth_config.json", cfg)
    print(f"wrote {out}/train.emb test.emb prototypes.emb "
          f"(n={train_c.n}, d={train_c.d}, classes={len(train_c.class_names)})")


def cmd_check_grad(seed: int, trials: int) -> int:
    report = check_gradients(seed=seed, trials=trials)
    for entry in report.entries:
        status = "ok" if entry.max_rel_err < report.tol else "FAIL"
        print(f"{entry.method:11s} {entry.weight_fn:15s} "
              f"max_rel_err={entry.max_rel_err:.3e}  {status}")
    print(f"overall max_rel_err={report.max_rel_err:.3e} tol={report.tol:g}")
    return 0 if report.ok else 1


def cmd_extract_passthrough(path: Path, spec_path: Path | None) -> int:
    """Validate an EMB1 cache produced outside this package."""
    try:
        cache = load_cache(path)
    except CacheFormatError as err:
        # a malformed file is this command's finding, not an operator error
        print(f"format error: {err}")
        print("invalid")
        return 1
    norms = np.linalg.norm(cache.features, axis=1)
    print(f"{path}: n={cache.n} d={cache.d} classes={len(cache.class_names)}")
    print(f"labels: min={int(cache.labels.min())} max={int(cache.labels.max())}")
    print(f"norms: min={norms.min():.6g} max={norms.max():.6g} "
          f"normalized_flag={cache.normalized}")
    ok = True
    if cache.normalized and (abs(norms.max() - 1) > 1e-3 or abs(norms.min() - 1) > 1e-3):
        print("WARNING: sidecar claims unit norms but features disagree")
        ok = False
    if spec_path is not None:
        spec = ShiftSpec.from_json(_read_json(spec_path))
        present = set(int(l) for l in cache.labels)
        outside = sorted(present - set(spec.L_e))
        if outside:
            print(f"WARNING: labels outside L_e: {outside[:10]}")
            ok = False
        missing = sorted(set(spec.L_u) - present)
        if missing:
            print(f"note: L_u classes absent from cache: {missing[:10]}")
    print("valid" if ok else "invalid")
    return 0 if ok else 1


def _apply_overrides(config: dict, args) -> dict:
    config = dict(config)
    if args.seed:
        config["seeds"] = [int(s) for s in args.seed.split(",")]
    if args.method:
        config["methods"] = args.method.split(",")
    if getattr(args, "shift", None):
        kind = ShiftKind(args.shift)
        resolved = [(_resolve_shift(s), s) for s in config.get("shifts", [])]
        keep = [raw for spec, raw in resolved if spec.kind() == kind]
        if not keep and "shift" in config:
            spec = _resolve_shift(config["shift"])
            keep = [config["shift"]] if spec.kind() == kind else []
        if not keep:
            raise ValidationError(f"no configured shift has kind {kind.value!r}")
        config["shifts"] = keep
        config.pop("shift", None)
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ueopt", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write synthetic caches")
    p_synth.add_argument("--config", help="SynthConfig JSON file")
    p_synth.add_argument("--out", required=True)

    for name in ("run", "sweep"):
        p = sub.add_parser(name, help=f"{name} experiments")
        p.add_argument("--config", required=True, help="RunConfig JSON file")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", help="comma-separated seed list override")
        p.add_argument("--method", help="comma-separated method list override")
        p.add_argument("--shift", choices=[k.value for k in ShiftKind],
                       help="restrict to one shift kind")
        if name == "sweep":
            p.add_argument("--axis", required=True,
                           choices=sorted(_SWEEP_DEFAULTS))

    p_report = sub.add_parser("report", help="rebuild aggregate from run JSONs")
    p_report.add_argument("--out", required=True, help="directory of a previous run")

    p_grad = sub.add_parser("check-grad", help="gradient vs finite differences")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--trials", type=int, default=20)

    p_ext = sub.add_parser("extract-passthrough",
                           help="validate an EMB1 cache produced elsewhere")
    p_ext.add_argument("cache", help="path to the .emb file")
    p_ext.add_argument("--spec", help="optional shift spec JSON to check against")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            cmd_synth(_read_json(args.config) if args.config else {}, Path(args.out))
            return 0
        if args.command == "run":
            config = _apply_overrides(_read_json(args.config), args)
            cmd_run(config, Path(args.out))
            return 0
        if args.command == "sweep":
            config = _apply_overrides(_read_json(args.config), args)
            cmd_sweep(config, args.axis, Path(args.out))
            return 0
        if args.command == "report":
            cmd_report(Path(args.out))
            return 0
        if args.command == "check-grad":
            return cmd_check_grad(args.seed, args.trials)
        if args.command == "extract-passthrough":
            return cmd_extract_passthrough(
                Path(args.cache), Path(args.spec) if args.spec else None)
    except (ValidationError, CacheFormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
