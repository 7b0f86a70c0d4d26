"""Config-driven command-line entry point.

Subcommands: train, predict, cv, sparsity, kernel, preprocess, validate.
Configs are JSON with a closed schema: unknown keys abort the run, since
a silently ignored typo in a prior name would corrupt an experiment.
Exit codes: 0 success, 2 config/validation, 3 data/parse, 4 numerical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import (
    FEATURE,
    MAIN,
    SIMILARITY,
    DatasetSpec,
    EntityType,
    HmfModel,
    Hyperparameters,
    ObservedMatrix,
    SamplerSchedule,
    validate,
)
from .errors import (
    ConfigurationError,
    DataError,
    HmfError,
    NumericalError,
    ParameterError,
)
from .evaluation import cross_validate, make_folds, predicted_matrix, sparsity_experiment
from .gibbs import Diagnostics, DrawMode, PosteriorSummary, run
from .initialization import InitStrategy, initialise_model
from .preprocess import cap, gaussian_kernel, jaccard_kernel, rescale_rows_unit, standardise_columns

__all__ = ["main", "load_matrix", "save_matrix", "load_config", "build_model"]

KIND_CODES = {"R": MAIN, "D": FEATURE, "C": SIMILARITY}

_DEFAULT_FACTORS = 10


# ---------------------------------------------------------------------------
# Matrix files: comma-separated, no header; empty cell or "nan" = unobserved
# ---------------------------------------------------------------------------


def load_matrix(path: str | Path) -> ObservedMatrix:
    """Parse a CSV grid; a cell is observed iff it holds a finite decimal."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read matrix file {path}: {exc}") from exc
    # Strip only the conventional trailing newline: a row of all-masked
    # cells in a one-column matrix is legitimately an empty line.
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError(f"{path}: empty matrix file")
    rows: list[list[float]] = []
    masks: list[list[bool]] = []
    width = None
    for ln, line in enumerate(lines, start=1):
        tokens = line.split(",")
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise DataError(f"{path}: ragged row at line {ln} ({len(tokens)} != {width} cells)")
        vals, obs = [], []
        for col, token in enumerate(tokens, start=1):
            stripped = token.strip()
            if stripped == "" or stripped.lower() == "nan":
                vals.append(0.0)
                obs.append(False)
                continue
            try:
                value = float(stripped)
            except ValueError:
                raise DataError(f"{path}: unparseable token {token!r} at line {ln}, column {col}")
            if not np.isfinite(value):
                raise DataError(f"{path}: non-finite value {token!r} at line {ln}, column {col}")
            vals.append(value)
            obs.append(True)
        rows.append(vals)
        masks.append(obs)
    return ObservedMatrix(values=np.array(rows), mask=np.array(masks))


def save_matrix(matrix: ObservedMatrix, path: str | Path) -> None:
    """Write a matrix with round-trip decimal formatting; unobserved
    cells become empty fields."""
    lines = []
    for i in range(matrix.rows):
        cells = [
            repr(float(matrix.values[i, j])) if matrix.mask[i, j] else ""
            for j in range(matrix.cols)
        ]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _save_dense(values: np.ndarray, path: str | Path) -> None:
    save_matrix(ObservedMatrix.fully_observed(values), path)


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    model: HmfModel
    strategy: InitStrategy
    draw_mode: DrawMode
    echo: dict


def _take(raw: dict, allowed: dict[str, bool], context: str) -> None:
    """Reject unknown keys and missing required ones (True = required)."""
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigurationError(f"{context}: unknown keys {sorted(unknown)}")
    missing = [k for k, required in allowed.items() if required and k not in raw]
    if missing:
        raise ConfigurationError(f"{context}: missing required keys {missing}")


def _enum(value, options, context: str):
    if value not in options:
        raise ConfigurationError(f"{context}: expected one of {sorted(options)}, got {value!r}")
    return value


def load_config(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return raw


def build_model(raw: dict, base_dir: str | Path = ".") -> RunConfig:
    """Deserialise a config into a model, resolving matrix paths relative
    to the config file's directory."""
    base = Path(base_dir)
    _take(
        raw,
        {"entity_types": True, "datasets": True, "hyper": False, "schedule": False,
         "init": False, "draw_mode": False},
        "config",
    )

    hyper_raw = dict(raw.get("hyper", {}))
    _take(hyper_raw, {k: False for k in
                      ("alpha_tau", "beta_tau", "alpha_0", "beta_0", "lambda_private_default")},
          "config.hyper")
    hyper = Hyperparameters(**{k: float(v) for k, v in hyper_raw.items()})

    sched_raw = dict(raw.get("schedule", {}))
    _take(sched_raw, {k: False for k in ("iterations", "burn_in", "thinning", "seed")},
          "config.schedule")
    schedule = SamplerSchedule(**{k: int(v) for k, v in sched_raw.items()})

    init_raw = dict(raw.get("init", {}))
    _take(init_raw, {"shared": False, "private": False}, "config.init")
    strategy = InitStrategy(
        shared=_enum(init_raw.get("shared", "kmeans"),
                     {"expectation", "random", "kmeans"}, "config.init.shared"),
        private=_enum(init_raw.get("private", "leastsquares"),
                      {"expectation", "random", "leastsquares"}, "config.init.private"),
    )
    draw_mode = _enum(raw.get("draw_mode", "elementwise"),
                      {"elementwise", "rowwise"}, "config.draw_mode")

    entity_specs = {}
    for ent_raw in raw["entity_types"]:
        _take(dict(ent_raw), {"name": True, "K": False, "negativity": False},
              "config.entity_types[]")
        name = str(ent_raw["name"])
        if name in entity_specs:
            raise ConfigurationError(f"config.entity_types: duplicate entity {name!r}")
        entity_specs[name] = {
            "K": int(ent_raw.get("K", _DEFAULT_FACTORS)),
            "negativity": _enum(ent_raw.get("negativity", "nonnegative"),
                                {"nonnegative", "real"}, f"entity {name!r} negativity"),
        }

    datasets: list[DatasetSpec] = []
    instances: dict[str, int] = {}
    echo_datasets = []

    def note_instances(entity: str, count: int, context: str) -> None:
        if entity not in entity_specs:
            raise ConfigurationError(f"{context}: unknown entity {entity!r}")
        if instances.setdefault(entity, count) != count:
            raise ConfigurationError(
                f"{context}: entity {entity!r} implied sizes disagree "
                f"({instances[entity]} vs {count})"
            )

    for ds_raw in raw["datasets"]:
        ds_raw = dict(ds_raw)
        _take(
            ds_raw,
            {"name": True, "kind": True, "row_entity": True, "path": True,
             "col_entity": False, "feature_count": False, "importance": False,
             "private_prior": False, "lambda": False, "cp_constrained": False},
            "config.datasets[]",
        )
        name = str(ds_raw["name"])
        ctx = f"dataset {name!r}"
        kind_code = _enum(ds_raw["kind"], set(KIND_CODES), f"{ctx} kind")
        kind = KIND_CODES[kind_code]
        path = str((base / ds_raw["path"]).resolve())
        data = load_matrix(path)
        row_entity = str(ds_raw["row_entity"])
        note_instances(row_entity, data.rows, ctx)
        col_entity = None
        if kind == MAIN:
            if "col_entity" not in ds_raw:
                raise ConfigurationError(f"{ctx}: main (R) datasets need col_entity")
            col_entity = str(ds_raw["col_entity"])
            note_instances(col_entity, data.cols, ctx)
        elif "col_entity" in ds_raw:
            raise ConfigurationError(f"{ctx}: col_entity only applies to R datasets")
        if kind == FEATURE and "feature_count" in ds_raw:
            if int(ds_raw["feature_count"]) != data.cols:
                raise ConfigurationError(
                    f"{ctx}: feature_count {ds_raw['feature_count']} != "
                    f"{data.cols} data columns"
                )
        if kind != FEATURE and "feature_count" in ds_raw:
            raise ConfigurationError(f"{ctx}: feature_count only applies to D datasets")
        lam = ds_raw.get("lambda")
        datasets.append(
            DatasetSpec(
                name=name,
                kind=kind,
                row_entity=row_entity,
                col_entity=col_entity,
                data=data,
                private_prior=_enum(ds_raw.get("private_prior", "gaussian"),
                                    {"exponential", "gaussian"}, f"{ctx} private_prior"),
                private_lambda=None if lam is None else float(lam),
                importance=float(ds_raw.get("importance", 1.0)),
                cp_constrained=bool(ds_raw.get("cp_constrained", False)),
            )
        )
        echo = dict(ds_raw)
        echo["path"] = path
        echo_datasets.append(echo)

    entities = []
    for name, spec in entity_specs.items():
        if name not in instances:
            raise ConfigurationError(f"entity {name!r} is not used by any dataset")
        entities.append(
            EntityType(name=name, instances=instances[name],
                       factors=spec["K"], negativity=spec["negativity"])
        )

    model = HmfModel(entity_types=entities, datasets=datasets,
                     hyper=hyper, schedule=schedule)

    echo_cfg = {
        "entity_types": [
            {"name": e.name, "K": e.factors, "negativity": e.negativity}
            for e in entities
        ],
        "datasets": echo_datasets,
        "hyper": vars(hyper),
        "schedule": vars(schedule),
        "init": {"shared": strategy.shared, "private": strategy.private},
        "draw_mode": draw_mode,
    }
    return RunConfig(model=model, strategy=strategy, draw_mode=draw_mode, echo=echo_cfg)


def _load_run_config(path: str) -> RunConfig:
    return build_model(load_config(path), Path(path).resolve().parent)


def _require_valid(model: HmfModel) -> None:
    report = validate(model)
    if report:
        raise ConfigurationError("invalid model:\n" + "\n".join(f"  - {v}" for v in report))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_validate(args) -> int:
    cfg = _load_run_config(args.config)
    report = validate(cfg.model)
    for violation in report:
        print(violation)
    if report:
        print(f"{len(report)} violation(s)", file=sys.stderr)
        return 2
    print("ok")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    _require_valid(cfg.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    initialise_model(cfg.model, cfg.strategy)
    diagnostics = Diagnostics()
    summary = run(cfg.model, cfg.draw_mode, diagnostics=diagnostics)

    for name, values in summary.factor_means.items():
        _save_dense(values, out / f"factor_{name}.csv")
    for name, values in summary.private_means.items():
        _save_dense(values, out / f"private_{name}.csv")
    (out / "diagnostics.json").write_text(json.dumps({
        "log_joint": diagnostics.log_joint_trace,
        "clamp_count": diagnostics.clamp_count,
        "prior_fallback_count": diagnostics.prior_fallback_count,
        "ard_means": {k: list(v) for k, v in summary.ard_means.items()},
        "noise_means": summary.noise_means,
    }, indent=2), encoding="utf-8")
    (out / "manifest.json").write_text(json.dumps({
        "config": cfg.echo,
        "seed": cfg.model.schedule.seed,
        "retained_draws": summary.retained_draws,
        "draw_mode": cfg.draw_mode,
    }, indent=2), encoding="utf-8")
    print(f"trained; retained {summary.retained_draws} draws -> {out}")
    return 0


def _summary_from_run_dir(run_dir: Path, cfg: RunConfig) -> PosteriorSummary:
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    factor_means = {
        e.name: load_matrix(run_dir / f"factor_{e.name}.csv").values
        for e in cfg.model.entity_types
    }
    private_means = {
        d.name: load_matrix(run_dir / f"private_{d.name}.csv").values
        for d in cfg.model.datasets
    }
    return PosteriorSummary(
        factor_means=factor_means,
        private_means=private_means,
        noise_means={},
        ard_means={},
        retained_draws=int(manifest["retained_draws"]),
    )


def _cmd_predict(args) -> int:
    run_dir = Path(args.run)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{run_dir} has no manifest.json (not a train output?)")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    cfg = build_model(manifest["config"], run_dir)
    target = cfg.model.dataset(args.dataset)
    summary = _summary_from_run_dir(run_dir, cfg)

    if args.cells is not None:
        cells = []
        for ln, line in enumerate(Path(args.cells).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{args.cells}: expected 'row,col' at line {ln}")
            cells.append((int(parts[0]), int(parts[1])))
        cells = np.array(cells, dtype=int).reshape(-1, 2)
    else:
        cells = np.argwhere(~target.data.mask)

    full = predicted_matrix(summary, target)
    if cells.size and (cells.min() < 0 or cells[:, 0].max() >= target.data.rows
                       or cells[:, 1].max() >= target.data.cols):
        raise DataError(f"cell out of bounds for dataset {target.name!r}")
    lines = [f"{r},{c},{repr(float(full[r, c]))}" for r, c in cells]
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_cv(args) -> int:
    cfg = _load_run_config(args.config)
    _require_valid(cfg.model)
    target = cfg.model.dataset(args.dataset)
    mode = {"in": "in_matrix", "out": "out_of_matrix"}[args.mode]
    plan = make_folds(target, mode, args.folds, args.seed)
    result = cross_validate(cfg.model, target, plan, cfg.strategy,
                            cfg.draw_mode, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cv_result.json").write_text(json.dumps({
        "dataset": target.name,
        "mode": mode,
        "folds": args.folds,
        "seed": args.seed,
        "fold_mse": result.fold_mse,
        "mean_mse": result.mean_mse,
    }, indent=2), encoding="utf-8")
    fold_lines = ["fold,mse"] + [f"{f},{repr(m)}" for f, m in enumerate(result.fold_mse)]
    (out / "cv_folds.csv").write_text("\n".join(fold_lines) + "\n", encoding="utf-8")
    print(f"mean mse {result.mean_mse:.6g} over {args.folds} folds -> {out}")
    return 0


def _cmd_sparsity(args) -> int:
    cfg = _load_run_config(args.config)
    _require_valid(cfg.model)
    target = cfg.model.dataset(args.dataset)
    try:
        fractions = [float(tok) for tok in args.fractions.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"--fractions: {exc}") from exc
    if not fractions:
        raise ConfigurationError("--fractions: need at least one fraction")
    result = sparsity_experiment(cfg.model, target, fractions, args.repeats,
                                 cfg.strategy, cfg.draw_mode, threads=args.threads)
    lines = ["fraction,mean_mse,sd"]
    lines += [f"{repr(f)},{repr(m)},{repr(s)}" for f, m, s in result.series]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_kernel(args) -> int:
    matrix = load_matrix(args.infile)
    if args.type == "jaccard":
        kernel = jaccard_kernel(matrix)
    else:
        kernel = gaussian_kernel(matrix, args.sigma2)
    save_matrix(ObservedMatrix(values=kernel.values, mask=kernel.mask), args.out)
    return 0


def _cmd_preprocess(args) -> int:
    matrix = load_matrix(args.infile)
    if args.transpose:
        matrix = ObservedMatrix(values=matrix.values.T.copy(), mask=matrix.mask.T.copy())
    if args.op == "cap":
        if args.ceiling is None:
            raise ConfigurationError("preprocess cap needs --ceiling")
        matrix = cap(matrix, args.ceiling)
    elif args.op == "rescale-rows":
        matrix = rescale_rows_unit(matrix)
    else:
        matrix = standardise_columns(matrix)
    if args.transpose:
        matrix = ObservedMatrix(values=matrix.values.T.copy(), mask=matrix.mask.T.copy())
    save_matrix(matrix, args.out)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    default_threads = int(os.environ.get("HMF_THREADS", "1"))
    parser = argparse.ArgumentParser(
        prog="hmf",
        description="Bayesian hybrid matrix factorisation for data integration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the Gibbs sampler and write posterior means")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("predict", help="reconstruct cells from a trained run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--cells", default=None, help="CSV of row,col pairs (default: all unobserved)")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("cv", help="cross-validate predictions on one dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=["in", "out"], required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=default_threads)
    p.set_defaults(fn=_cmd_cv)

    p = sub.add_parser("sparsity", help="sweep the held-out fraction of one dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--fractions", required=True, help="comma-separated fractions in (0,1)")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=default_threads)
    p.set_defaults(fn=_cmd_sparsity)

    p = sub.add_parser("kernel", help="build a similarity kernel from row vectors")
    p.add_argument("--type", choices=["jaccard", "gaussian"], required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma2", type=float, default=None)
    p.set_defaults(fn=_cmd_kernel)

    p = sub.add_parser("preprocess", help="cap, rescale, or standardise a matrix")
    p.add_argument("--op", choices=["cap", "rescale-rows", "standardise"], required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ceiling", type=float, default=None)
    p.add_argument("--transpose", action="store_true")
    p.set_defaults(fn=_cmd_preprocess)

    p = sub.add_parser("validate", help="check a config against the model invariants")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except (DataError, ParameterError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return 4
    except HmfError as exc:  # pragma: no cover - safety net
        print(f"error[internal]: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
