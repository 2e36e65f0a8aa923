"""Command-line front end.

Every stage reads and writes plain files under ``--out`` and records what it
did in ``manifest.json`` there, so stages can be rerun, resumed or diffed.
``pipeline`` calls the same stage functions in order.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import evalx, report
from .baselines import load_model, save_model
from .dataset import (
    ScreenConfig,
    SurveySchema,
    SynthConfig,
    clean,
    load_csv,
    read_clean_csv,
    synthesize,
    write_clean_csv,
    write_csv,
)
from .errors import BoostlensError, DataError, ModelError
from .explain import base_value, explain_batch, explanation_document, write_explanations_json, write_phi_csv
from .gbt import Ensemble, TrainConfig, train

EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 2, 3, 4
SUBSEED_NAMES = ("data", "folds", "search")
CONFIG_KEYS = {"train", "search", "screen", "correlation_threshold", "normalization", "force_rows"}

RAW_FILE = "survey.csv"
CLEAN_FILE = "clean.csv"
CLEAN_REPORT = "clean_report.json"
MODEL_FILE = "model.json"
SEARCH_FILE = "search.json"
EXPLAIN_FILE = "explanations.json"
MANIFEST = "manifest.json"


class UsageError(BoostlensError):
    pass


def subseed(seed: int, name: str) -> int:
    """Named child seed, stable across platforms and Python versions."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolve_threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("BOOSTLENS_THREADS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"BOOSTLENS_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError(f"--threads must be >= 1, got {value}")
    return value


@dataclass
class RunConfig:
    out: Path
    seed: int = 0
    input: Path | None = None
    model: Path | None = None
    folds: int = 10
    threshold: float = 0.5
    threads: int = 1
    fmt: str = "json"
    interactions: bool = False
    run_id: str = "run"
    search_budget: int = 0
    train: dict = field(default_factory=dict)
    search: dict = field(default_factory=dict)
    screen: dict = field(default_factory=dict)
    correlation_threshold: float = 0.85
    normalization: str = "printed"
    force_rows: list = field(default_factory=lambda: [0])
    synth_config: Path | None = None
    schema: Path | None = None

    @property
    def seeds(self) -> dict[str, int]:
        return {"run": self.seed, **{n: subseed(self.seed, n) for n in SUBSEED_NAMES}}

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "seed": self.seed})

    def search_space(self) -> evalx.SearchSpace:
        d = dict(self.search)
        if self.search_budget:
            d["budget"] = self.search_budget
        return evalx.SearchSpace.from_dict(d)


def load_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(out=Path(args.out))
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: not valid JSON ({exc})") from exc
        unknown = set(d) - CONFIG_KEYS
        if unknown:
            raise UsageError(f"{path}: unknown config key(s) {sorted(unknown)}")
        for k, v in d.items():
            setattr(cfg, k, v)
    for attr in ("seed", "folds", "threshold", "interactions", "run_id", "search_budget"):
        v = getattr(args, attr)
        if v is not None:
            setattr(cfg, attr, v)
    cfg.fmt = args.format or "json"
    for attr in ("input", "model", "synth_config", "schema"):
        v = getattr(args, attr)
        setattr(cfg, attr, Path(v) if v else None)
    cfg.threads = resolve_threads(args.threads)
    if cfg.folds < 2:
        raise UsageError(f"--folds must be >= 2, got {cfg.folds}")
    if not 0 <= cfg.threshold <= 1:
        raise UsageError(f"--threshold must lie in [0, 1], got {cfg.threshold}")
    if cfg.search_budget < 0:
        raise UsageError("--search-budget must be >= 0")
    return cfg


# ------------------------------------------------------------------ manifest


class Manifest:
    """Per-stage record of inputs, settings, seeds and artifact checksums.

    Paths are stored relative to the output directory (inputs elsewhere by
    file name) and nothing time-dependent is written, so identical runs give
    identical manifests.
    """

    def __init__(self, out: Path):
        self.path = out / MANIFEST
        self.doc = {"format": "boostlens-manifest", "version": 1, "stages": {}}
        if self.path.is_file():
            try:
                self.doc = json.loads(self.path.read_text())
            except json.JSONDecodeError as exc:
                raise DataError(f"{self.path}: corrupt manifest ({exc})") from exc

    def record(self, stage: str, cfg: RunConfig, inputs: list[Path], artifacts: list[Path], settings: dict) -> None:
        out = cfg.out
        self.doc["seeds"] = cfg.seeds
        self.doc["stages"][stage] = {
            "inputs": {_label(p, out): sha256_file(p) for p in inputs},
            "settings": settings,
            "artifacts": {_label(p, out): sha256_file(p) for p in artifacts},
        }
        self.path.write_text(json.dumps(self.doc, indent=2, sort_keys=True) + "\n")


def _label(path: Path, out: Path) -> str:
    try:
        return path.resolve().relative_to(out.resolve()).as_posix()
    except ValueError:
        return path.name


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required (pass --input/--model)")
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    return path


def _dump(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path


# ------------------------------------------------------------------ stages


def stage_synth(cfg: RunConfig) -> Path:
    synth = SynthConfig.load(cfg.synth_config) if cfg.synth_config else SynthConfig()
    schema = SurveySchema.load(cfg.schema) if cfg.schema else None
    seed = cfg.seeds["data"]
    dataset = synthesize(synth, seed=seed, schema=schema)
    path = cfg.out / RAW_FILE
    write_csv(dataset, path)
    inputs = [p for p in (cfg.synth_config, cfg.schema) if p]
    Manifest(cfg.out).record("synth", cfg, inputs, [path], {"synth": synth.to_dict(), "seed": seed})
    return path


def stage_clean(cfg: RunConfig, raw: Path | None = None) -> Path:
    raw = _require(raw or cfg.input, "raw survey file")
    schema = SurveySchema.load(cfg.schema) if cfg.schema else None
    screen = ScreenConfig.from_dict(cfg.screen)
    result = clean(load_csv(raw, schema), screen, cfg.correlation_threshold)
    path = cfg.out / CLEAN_FILE
    write_clean_csv(result.matrix, result.labels, path)
    rep = _dump(cfg.out / CLEAN_REPORT, result.report())
    settings = {"screen": {**screen.__dict__, "rules": list(screen.rules)}, "correlation_threshold": cfg.correlation_threshold}
    Manifest(cfg.out).record("clean", cfg, [raw] + ([cfg.schema] if cfg.schema else []), [path, rep], settings)
    return path


def stage_train(cfg: RunConfig, data: Path | None = None) -> Path:
    data = _require(data or cfg.input, "cleaned feature file")
    matrix, labels = read_clean_csv(data)
    artifacts = []
    config = cfg.train_config()
    settings: dict = {"search_budget": cfg.search_budget}
    if cfg.search_budget:
        space = cfg.search_space()
        found = evalx.random_search(matrix.values, labels, space, cfg.folds, cfg.seeds["search"], cfg.threads)
        config = found.best.replace(seed=cfg.seed)
        artifacts.append(_dump(cfg.out / SEARCH_FILE, found.to_dict()))
        settings["search_seed"] = cfg.seeds["search"]
    model = train(matrix.values, labels, config, list(matrix.names))
    path = cfg.out / MODEL_FILE
    save_model(model, path)
    settings["train"] = config.to_dict()
    Manifest(cfg.out).record("train", cfg, [data], [path, *artifacts], settings)
    return path


def _load_ensemble(path: Path) -> Ensemble:
    model = load_model(_require(path, "model file"))
    if not isinstance(model, Ensemble):
        raise ModelError(f"{path}: expected a boosted-tree model")
    return model


def stage_eval(cfg: RunConfig, data: Path | None = None, model_path: Path | None = None) -> Path:
    data = _require(data or cfg.input, "cleaned feature file")
    model_path = model_path or cfg.model
    model = _load_ensemble(model_path)
    matrix, labels = read_clean_csv(data)
    config = model.config or cfg.train_config()
    rep = evalx.kfold_cv(
        matrix.values, labels, cfg.folds, config, "gbt", cfg.seeds["folds"], cfg.threshold, cfg.threads
    )
    path = cfg.out / f"cv.{cfg.fmt}"
    if cfg.fmt == "json":
        _dump(path, rep.to_dict())
    else:
        path.write_text(evalx.report_csv(rep))
    settings = {"folds": cfg.folds, "threshold": cfg.threshold, "fold_seed": cfg.seeds["folds"]}
    Manifest(cfg.out).record("eval", cfg, [data, model_path], [path], settings)
    return path


def stage_compare(cfg: RunConfig, data: Path | None = None, model_path: Path | None = None) -> Path:
    data = _require(data or cfg.input, "cleaned feature file")
    matrix, labels = read_clean_csv(data)
    inputs = [data]
    model_path = model_path or cfg.model
    config = cfg.train_config()
    if model_path:
        model = _load_ensemble(model_path)
        config = model.config or config
        inputs.append(model_path)
    reports = evalx.compare_models(matrix.values, labels, cfg.folds, cfg.seeds["folds"], config, cfg.threads, cfg.threshold)
    table = evalx.comparison_table(reports)
    path = cfg.out / f"compare.{cfg.fmt}"
    if cfg.fmt == "json":
        _dump(path, {"table": table, "reports": {m: r.to_dict() for m, r in reports.items()}})
    else:
        path.write_text(evalx.table_csv(table))
    settings = {"folds": cfg.folds, "threshold": cfg.threshold, "fold_seed": cfg.seeds["folds"]}
    Manifest(cfg.out).record("compare", cfg, inputs, [path], settings)
    return path


def stage_explain(cfg: RunConfig, data: Path | None = None, model_path: Path | None = None) -> Path:
    data = _require(data or cfg.input, "cleaned feature file")
    model_path = model_path or cfg.model
    model = _load_ensemble(model_path)
    matrix, labels = read_clean_csv(data)
    expl = explain_batch(model, matrix.values, cfg.interactions, cfg.normalization, cfg.threads)
    doc = explanation_document(
        expl, matrix.names, matrix.values, labels, matrix.row_ids, base_value(model, matrix.values)
    )
    path = cfg.out / EXPLAIN_FILE
    write_explanations_json(doc, path)
    artifacts = [path]
    if cfg.fmt == "csv":
        csv_path = cfg.out / "phi.csv"
        write_phi_csv(doc, csv_path)
        artifacts.append(csv_path)
    settings = {"interactions": cfg.interactions, "normalization": cfg.normalization}
    Manifest(cfg.out).record("explain", cfg, [data, model_path], artifacts, settings)
    return path


def stage_report(cfg: RunConfig, explanations: Path | None = None) -> list[Path]:
    explanations = _require(explanations or cfg.input, "explanations file")
    batch = report.ExplanationBatch.load(explanations)
    written = report.write_report(batch, cfg.out, cfg.run_id, cfg.fmt, cfg.force_rows)
    settings = {"run_id": cfg.run_id, "format": cfg.fmt, "force_rows": cfg.force_rows}
    Manifest(cfg.out).record("report", cfg, [explanations], written, settings)
    return written


def stage_pipeline(cfg: RunConfig) -> None:
    raw = cfg.input if cfg.input else stage_synth(cfg)
    data = stage_clean(cfg, raw)
    model = stage_train(cfg, data)
    stage_eval(cfg, data, model)
    stage_compare(cfg, data, model)
    explanations = stage_explain(cfg, data, model)
    stage_report(cfg, explanations)


STAGES = {
    "synth": stage_synth,
    "clean": stage_clean,
    "train": stage_train,
    "eval": stage_eval,
    "explain": stage_explain,
    "report": stage_report,
    "compare": stage_compare,
    "pipeline": stage_pipeline,
}


# ------------------------------------------------------------------ argv


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--input", help="stage input file")
    common.add_argument("--model", help="model JSON (eval, explain, compare)")
    common.add_argument("--seed", type=int, help="run seed (default 0)")
    common.add_argument("--folds", type=int, help="cross-validation folds (default 10)")
    common.add_argument("--threshold", type=float, help="classification threshold (default 0.5)")
    common.add_argument("--threads", type=int, help="worker cap; falls back to BOOSTLENS_THREADS, then 1")
    common.add_argument("--format", choices=("json", "csv"), help="tabular output format (default json)")
    common.add_argument("--interactions", action="store_true", default=None, help="also compute interaction values")
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--synth-config", help="synthetic generator JSON (synth, pipeline)")
    common.add_argument("--schema", help="survey schema JSON")
    common.add_argument("--search-budget", type=int, help="random-search trials before training (0 = off)")
    common.add_argument("--run-id", help="prefix for report files (default 'run')")

    parser = argparse.ArgumentParser(prog="boostlens", description="Boosted-tree trust modelling with Shapley explanations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common])
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    try:
        cfg = load_run_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        STAGES[args.command](cfg)
    except UsageError as exc:
        print(f"boostlens: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"boostlens: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DataError, BoostlensError) as exc:
        print(f"boostlens: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"boostlens: data error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
