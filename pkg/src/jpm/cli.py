"""Command-line entry point: ``jpm generate | infer | analyze | fit``.

Exit codes: 0 success, 2 configuration error, 3 missing input, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ._validation import derive_seed
from .cohort import EXPERIMENTS, DEFAULT_VARIANTS, BiomarkerRegistry, GenerationSpec, generate_experiment_suite, parse_variant
from .ebm import Cohort, estimate_distributions, estimate_partial_ranking
from .energy import ConvergenceError, fit_energy
from .inference import InferenceConfig, multi_seed_infer
from .metrics import (
    calibration,
    features,
    ordering_error,
    predict_sharpness,
    separation_sharpness,
    summary_csv,
    tidy_csv,
)
from .rankings import RankingProblem, problem_from_dict
from .sampling import MhConfig

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERICAL = 0, 2, 3, 4

GENERATE_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "master_seed": 0,
    "variants": list(DEFAULT_VARIANTS),
    "experiments": sorted(EXPERIMENTS),
    "sizes": [50, 100, 200],
    "ratios": [0.25, 0.5, 0.75],
    "replicates": 10,
    "n_partials": [2, 4],
    "length_range": [6, 12],
}

INFER_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "master_seed": None,
    "variants": ["none", "pp", "bt", "pl", "mallows"],
    "dispersion": 1.0,
    "iterations": 20_000,
    "burn_in": 500,
    "thinning": 1,
    "n_seeds": 10,
    "use_true_partials": False,
}

ANALYZE_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "master_seed": None,
    "analyses": ["evaluate"],
    "n_random": 1000,
    "n_samples": 1000,
    "generation_iterations": 500,
    "return_mode": "best",
    "variants": list(DEFAULT_VARIANTS),
    "inference_variants": ["bt", "mallows", "pl", "pp"],
    "dispersion": 1.0,
}

ANALYSES = ("calibration", "separation", "sharpness", "features", "evaluate")


class CliError(Exception):
    code = EXIT_CONFIG


class ConfigError(CliError):
    code = EXIT_CONFIG


class MissingInput(CliError):
    code = EXIT_MISSING


# -- configuration -----------------------------------------------------------


def _line_of(text: str, key: str) -> int:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return 1


def _type_ok(value, default) -> bool:
    if default is None:
        return value is None or isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list)
    return isinstance(value, type(default))


def load_config(path: str | None, defaults: dict) -> dict:
    """Merge a JSON config file over ``defaults``; errors name ``file:line``."""
    cfg = dict(defaults)
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"config file not found: {path}")
    text = p.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"{path}:{_line_of(text, 'schema_version')}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )
    for key, value in data.items():
        if key not in defaults:
            raise ConfigError(f"{path}:{_line_of(text, key)}: unknown key {key!r}")
        if not _type_ok(value, defaults[key]):
            raise ConfigError(
                f"{path}:{_line_of(text, key)}: {key!r} must be of type {type(defaults[key]).__name__}, got {value!r}"
            )
        cfg[key] = value
    return cfg


def resolve_seed(flag, cfg_seed) -> int:
    """Flag, then ``JPM_SEED``, then the config value, then 0."""
    if flag is not None:
        return int(flag)
    env = os.environ.get("JPM_SEED")
    if env is not None:
        try:
            return int(env, 0)
        except ValueError:
            raise ConfigError(f"JPM_SEED must be an integer, got {env!r}") from None
    return int(cfg_seed) if cfg_seed is not None else 0


def _csv_list(text: str, cast=str) -> list:
    try:
        return [cast(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad list value {text!r}: {exc}") from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _snapshot(out_dir: Path, command: str, cfg: dict) -> None:
    _write(out_dir / "config.snapshot.json", json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n")


def _load_manifest(path: str) -> tuple[dict, Path]:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.is_file():
        raise MissingInput(f"manifest not found: {p}")
    try:
        return json.loads(p.read_text()), p.parent
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: invalid manifest JSON: {exc.msg}") from None


# -- generate ----------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = load_config(args.config, GENERATE_DEFAULTS)
    for key in ("variants", "experiments", "sizes", "ratios", "replicates"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    cfg["master_seed"] = resolve_seed(args.seed, cfg["master_seed"])
    try:
        for v in cfg["variants"]:
            parse_variant(v)
        spec = GenerationSpec(tuple(cfg["n_partials"]), tuple(cfg["length_range"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    bad = [e for e in cfg["experiments"] if e not in EXPERIMENTS]
    if bad:
        raise ConfigError(f"unknown experiment id(s) {bad}; expected 1..9")
    out = Path(args.out)
    manifest = generate_experiment_suite(
        BiomarkerRegistry.default(),
        cfg["variants"],
        cfg["experiments"],
        cfg["sizes"],
        cfg["ratios"],
        cfg["replicates"],
        cfg["master_seed"],
        out,
        jobs=args.jobs,
        spec=spec,
    )
    _snapshot(out, "generate", cfg)
    print(f"wrote {len(manifest['cells'])} cells to {out / 'manifest.json'}")
    return EXIT_OK


# -- infer -------------------------------------------------------------------


def _variant_file(variant: str) -> str:
    return variant.lower().replace(":", "")


def _infer_cell(task: dict) -> None:
    cell, root, out, cfg, seed = task["cell"], Path(task["root"]), Path(task["out"]), task["cfg"], task["seed"]
    cell_out = out / "cells" / cell["cell_id"]
    pending = [v for v in cfg["variants"] if not (cell_out / f"{_variant_file(v)}.json").exists()]
    if not pending:
        return
    mh = MhConfig.for_inference(
        iterations=cfg["iterations"], burn_in=cfg["burn_in"], thinning=cfg["thinning"], record_chain=True
    )

    source = "true" if cfg["use_true_partials"] else "estimated"
    partial_path = cell_out / "partials.json"
    saved = json.loads(partial_path.read_text()) if partial_path.exists() else None
    if saved is not None and saved["source"] == source:
        partials = saved["partials"]
    elif cfg["use_true_partials"]:
        partials = cell["partials"]
    else:
        partials = []
        for k, rel in enumerate(cell["single"]):
            cohort = Cohort.from_csv((root / rel).read_text())
            pr, _ = estimate_partial_ranking(cohort, mh.replace(seed=derive_seed(seed, 100 + k), record_chain=False))
            partials.append([cohort.biomarkers[i] for i in pr.items])
    _write(partial_path, json.dumps({"source": source, "partials": partials}, indent=2) + "\n")

    problem = RankingProblem.from_labels(partials)
    mixed = Cohort.from_csv((root / cell["mixed"]).read_text()).select(problem.labels)
    dists, _ = estimate_distributions(mixed, mh.replace(seed=derive_seed(seed, 99), record_chain=False))
    for v in pending:
        icfg = InferenceConfig(v, cfg["dispersion"], mh.replace(seed=derive_seed(seed, 200)), cfg["n_seeds"])
        res = multi_seed_infer(mixed, problem, icfg, dists)
        name = _variant_file(v)
        trace_rel = f"{name}_trace.csv"
        _write(cell_out / trace_rel, res.trace.chain_csv())
        payload = {"cell_id": cell["cell_id"], **res.to_dict(trace_rel)}
        _write(cell_out / f"{name}.json", json.dumps(payload, indent=2) + "\n")


def cmd_infer(args) -> int:
    manifest, root = _load_manifest(args.manifest)
    cfg = load_config(args.config, INFER_DEFAULTS)
    overrides = {
        "variants": args.variants,
        "dispersion": args.dispersion,
        "iterations": args.iterations,
        "burn_in": args.burn_in,
        "n_seeds": args.n_seeds,
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if args.use_true_partials:
        cfg["use_true_partials"] = True
    cfg["master_seed"] = resolve_seed(args.seed, cfg["master_seed"] if cfg["master_seed"] is not None else manifest["master_seed"])
    try:
        for v in cfg["variants"]:
            InferenceConfig(v, cfg["dispersion"])
        MhConfig.for_inference(iterations=cfg["iterations"], burn_in=cfg["burn_in"], thinning=cfg["thinning"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cells = manifest["cells"]
    if args.cells:
        wanted = set(args.cells)
        cells = [c for c in cells if c["cell_id"] in wanted]
    for c in cells:
        files = [c["mixed"]] + ([] if cfg["use_true_partials"] else list(c["single"]))
        for rel in files:
            if not (root / rel).is_file():
                raise MissingInput(f"cell {c['cell_id']}: missing cohort file {root / rel}")
    out = Path(args.out) if args.out else root / "results"
    index = {c["cell_id"]: i for i, c in enumerate(manifest["cells"])}
    tasks = [
        {"cell": c, "root": str(root), "out": str(out), "cfg": cfg, "seed": derive_seed(cfg["master_seed"], index[c["cell_id"]])}
        for c in cells
    ]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_infer_cell, tasks))
    else:
        for t in tasks:
            _infer_cell(t)
    _snapshot(out, "infer", {**cfg, "manifest": str(args.manifest)})
    print(f"inferred {len(tasks)} cells into {out}")
    return EXIT_OK


# -- analyze -----------------------------------------------------------------


def _evaluate_rows(manifest: dict, root: Path, results: Path) -> list[tuple]:
    rows = []
    for cell in manifest["cells"]:
        cell_dir = results / "cells" / cell["cell_id"]
        if not cell_dir.is_dir():
            continue
        labels = cell["labels"]
        index = {lab: i for i, lab in enumerate(labels)}
        truth = [index[lab] for lab in cell["aggregate"]]
        stages = None
        for path in sorted(cell_dir.glob("*.json")):
            if path.name == "partials.json":
                continue
            res = json.loads(path.read_text())
            est = [index[lab] for lab in res["best_ranking"]]
            key = (cell["variant"], res["variant"], cell["experiment_id"], cell["replicate"])
            rows.append((*key, "tau", ordering_error(est, truth)))
            if stages is None:
                stages = Cohort.from_csv((root / cell["mixed"]).read_text()).stages
            if stages is not None:
                mae = float(np.mean(np.abs(np.asarray(res["stage_point_estimates"]) - stages)))
                rows.append((*key, "mae", mae))
    return rows


def _cell_problem(cell: dict) -> tuple[RankingProblem, list[int]]:
    problem = RankingProblem.from_labels(cell["partials"])
    return problem, [problem.index_of(lab) for lab in cell["aggregate"]]


def _calibration_rows(manifest: dict, cfg: dict) -> list[tuple]:
    rows = []
    for i, cell in enumerate(manifest["cells"]):
        problem, gt = _cell_problem(cell)
        seed = derive_seed(cfg["master_seed"], i)
        for j, iv in enumerate(cfg["inference_variants"]):
            rng = np.random.default_rng(derive_seed(seed, j))
            rho = calibration(problem, gt, iv, cfg["n_random"], rng, dispersion=cfg["dispersion"])
            rows.append((cell["variant"], iv, cell["experiment_id"], cell["replicate"], "calibration", rho))
    return rows


def _generation_rows(manifest: dict, cfg: dict, metrics: set) -> list[tuple]:
    rows = []
    for i, cell in enumerate(manifest["cells"]):
        problem, _ = _cell_problem(cell)
        seed = derive_seed(cfg["master_seed"], i)
        for j, gv in enumerate(cfg["variants"]):
            variant, dispersion = parse_variant(gv)
            mh = MhConfig(cfg["generation_iterations"], seed=derive_seed(seed, 2 * j), return_mode=cfg["return_mode"])
            rep = separation_sharpness(
                problem, variant, cfg["n_samples"], mh, np.random.default_rng(derive_seed(seed, 2 * j + 1)), dispersion
            )
            key = (gv, gv, cell["experiment_id"], cell["replicate"])
            if "separation" in metrics:
                rows.append((*key, "separation", rep.separation))
            if "sharpness" in metrics:
                rows.append((*key, "sharpness", rep.sharpness))
    return rows


def _feature_rows(manifest: dict, cfg: dict) -> list[tuple]:
    rows = []
    for cell in manifest["cells"]:
        problem, _ = _cell_problem(cell)
        key = (cell["variant"], "", cell["experiment_id"], cell["replicate"])
        if problem.K < 2:
            continue
        f = features(problem)
        for name in ("n_pr", "mean_len", "conflict", "overlap_rate"):
            rows.append((*key, name, getattr(f, name)))
        for gv in cfg["variants"]:
            try:
                pred = predict_sharpness(f, gv)
            except ValueError:
                continue
            rows.append((gv, "", cell["experiment_id"], cell["replicate"], "predicted_sharpness", pred))
    return rows


def cmd_analyze(args) -> int:
    manifest, root = _load_manifest(args.manifest)
    cfg = load_config(args.config, ANALYZE_DEFAULTS)
    if args.analysis:
        cfg["analyses"] = args.analysis
    for key in ("n_random", "n_samples", "generation_iterations", "variants"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    cfg["master_seed"] = resolve_seed(args.seed, cfg["master_seed"] if cfg["master_seed"] is not None else manifest["master_seed"])
    bad = [a for a in cfg["analyses"] if a not in ANALYSES]
    if bad:
        raise ConfigError(f"unknown analysis {bad}; choose from {list(ANALYSES)}")
    if not manifest["cells"]:
        raise MissingInput("manifest lists no cells")
    out = Path(args.out) if args.out else root / "reports"
    results = Path(args.results) if args.results else root / "results"
    analyses = list(dict.fromkeys(cfg["analyses"]))
    reports: dict[str, list[tuple]] = {}
    if "evaluate" in analyses:
        rows = _evaluate_rows(manifest, root, results)
        if not rows:
            raise MissingInput(f"no inference results found under {results}")
        reports["evaluate"] = rows
    if "calibration" in analyses:
        reports["calibration"] = _calibration_rows(manifest, cfg)
    gen = {a for a in analyses if a in ("separation", "sharpness")}
    if gen:
        rows = _generation_rows(manifest, cfg, gen)
        for a in sorted(gen):
            reports[a] = [r for r in rows if r[4] == a]
    if "features" in analyses:
        reports["features"] = _feature_rows(manifest, cfg)
    for name, rows in reports.items():
        _write(out / f"{name}.csv", tidy_csv(rows))
        _write(out / f"{name}_summary.csv", summary_csv(rows))
    _snapshot(out, "analyze", {**cfg, "manifest": str(args.manifest), "results": str(results)})
    print(f"wrote {', '.join(sorted(reports))} reports to {out}")
    return EXIT_OK


# -- fit ---------------------------------------------------------------------


def cmd_fit(args) -> int:
    path = Path(args.partials)
    if not path.is_file():
        raise MissingInput(f"partials file not found: {path}")
    text = path.read_text()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        problem = problem_from_dict(payload)
        v = args.variant.lower()
        rng = np.random.default_rng(resolve_seed(args.seed, 0))
        model = fit_energy(v, problem, dispersion=args.dispersion if v == "mallows" else None, rng=rng)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    text = json.dumps({"items": problem.labels, "model": model.to_dict()}, indent=2) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jpm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic experiment suite")
    g.add_argument("--config", help="JSON config (schema_version 1)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, help="master seed (overrides JPM_SEED and the config)")
    g.add_argument("--variants", type=_csv_list, help="comma list, e.g. pp,bt,pl,mallows:1")
    g.add_argument("--experiments", type=lambda s: _csv_list(s, int))
    g.add_argument("--sizes", type=lambda s: _csv_list(s, int))
    g.add_argument("--ratios", type=lambda s: _csv_list(s, float))
    g.add_argument("--replicates", type=int)
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("infer", help="run baseline and prior-informed inference on a suite")
    i.add_argument("--manifest", required=True, help="manifest.json or its directory")
    i.add_argument("--config")
    i.add_argument("--out", help="results directory (default: <suite>/results)")
    i.add_argument("--seed", type=int)
    i.add_argument("--variants", type=_csv_list, help="comma list from none,pp,bt,pl,mallows")
    i.add_argument("--dispersion", type=float)
    i.add_argument("--iterations", type=int)
    i.add_argument("--burn-in", dest="burn_in", type=int)
    i.add_argument("--n-seeds", dest="n_seeds", type=int)
    i.add_argument("--use-true-partials", action="store_true", help="skip partial-ranking estimation")
    i.add_argument("--cells", type=_csv_list, help="restrict to these cell ids")
    i.add_argument("--jobs", type=int, default=1)
    i.set_defaults(func=cmd_infer)

    a = sub.add_parser("analyze", help="write tidy CSV reports")
    a.add_argument("--manifest", required=True)
    a.add_argument("--results", help="inference results directory (default: <suite>/results)")
    a.add_argument("--config")
    a.add_argument("--out", help="report directory (default: <suite>/reports)")
    a.add_argument("--seed", type=int)
    a.add_argument("--analysis", type=_csv_list, help=f"comma list from {','.join(ANALYSES)}")
    a.add_argument("--n-random", dest="n_random", type=int)
    a.add_argument("--n-samples", dest="n_samples", type=int)
    a.add_argument("--generation-iterations", dest="generation_iterations", type=int)
    a.add_argument("--variants", type=_csv_list)
    a.set_defaults(func=cmd_analyze)

    f = sub.add_parser("fit", help="fit an energy model to partial rankings and dump it as JSON")
    f.add_argument("--partials", required=True, help='JSON with "partials" (label lists) and optional "weights"')
    f.add_argument("--variant", required=True, choices=["pp", "bt", "pl", "mallows"])
    f.add_argument("--dispersion", type=float, default=1.0)
    f.add_argument("--seed", type=int)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"jpm: error: {exc}", file=sys.stderr)
        return exc.code
    except (ConvergenceError, FloatingPointError) as exc:
        print(f"jpm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError) as exc:
        print(f"jpm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"jpm: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
