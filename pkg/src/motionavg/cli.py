"""Command-line entry point: generate datasets, run the pipeline, analyze chirality.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O or input-format
error, 4 every graph in the pipeline failed.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .chirality import RepairConfig, edge_rotation_errors, repair_graph, transfer_matrix
from .errors import ConfigError, GenerationFailed, MotionAveragingError, ParseError
from .evaluation import CSV_HEADER, evaluate_dataset, histogram
from .graph_io import parse_graphs, serialize_graphs, serialize_poses
from .pipeline import StageConfig, run_graph
from .robust import RobustLoss
from .rotavg import SOLVERS, RotAvgConfig
from .synth import NoiseModel, SceneConfig, apply_noise, generate_scene
from .transavg import TransAvgConfig

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ALL_FAILED = 0, 2, 3, 4


@dataclasses.dataclass(frozen=True)
class RunConfig:
    dataset_size: int = 100
    seed: int = 0
    with_boxes: bool = False
    solver: str = "iterative"
    align_translations: bool = True


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    scene: SceneConfig = SceneConfig()
    noise: NoiseModel = NoiseModel()
    repair: RepairConfig = RepairConfig()
    rotavg: RotAvgConfig = RotAvgConfig()
    transavg: TransAvgConfig = TransAvgConfig()
    run: RunConfig = RunConfig()


# section -> config class; each field's default type drives value parsing
_SECTIONS = {
    "scene": SceneConfig,
    "noise": NoiseModel,
    "repair": RepairConfig,
    "rotavg": RotAvgConfig,
    "transavg": TransAvgConfig,
    "run": RunConfig,
}
_SCENE_SEED_FROM_RUN = ("seed",)  # per-graph seeds come from [run] seed


def _parse_value(cls, name: str, raw: str):
    default = next(f for f in dataclasses.fields(cls) if f.name == name).default
    raw = raw.strip()
    if isinstance(default, RobustLoss):
        return RobustLoss.parse(raw)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(float(v) for v in raw.split(","))
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:  # optional integer such as the rotation anchor
        return None if raw.lower() in ("", "none") else int(raw)
    return raw


def load_config(path: str | None) -> PipelineConfig:
    """
    Read a ``key = value`` config with sections [scene] [noise] [repair]
    [rotavg] [transavg] [run]. Missing keys keep their defaults.

    Raises:
        ConfigError: unknown section or key, or a value that does not parse.
        OSError: the file cannot be read.
    """
    if path is None:
        return PipelineConfig()
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        try:
            parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
    parts = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTIONS[section]
        known = {f.name for f in dataclasses.fields(cls)}
        if section == "scene":
            known -= set(_SCENE_SEED_FROM_RUN)
        kwargs = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                kwargs[key] = _parse_value(cls, key, raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
        try:
            parts[section] = cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    cfg = PipelineConfig(**parts)
    if cfg.run.solver not in SOLVERS:
        raise ConfigError(f"[run] solver must be one of {SOLVERS}")
    return cfg


def _config_echo(cfg: PipelineConfig) -> dict:
    def plain(obj):
        out = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            out[f.name] = str(v) if isinstance(v, RobustLoss) else (list(v) if isinstance(v, tuple) else v)
        return out

    return {name: plain(getattr(cfg, name)) for name in _SECTIONS}


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8", newline="\n")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def graph_seeds(seed: int, k: int) -> tuple[int, int]:
    """Independent (scene, noise) seeds for the k-th graph of a dataset."""
    scene, noise = np.random.SeedSequence([seed, k]).generate_state(2)
    return int(scene), int(noise)


def generate_dataset(cfg: PipelineConfig) -> tuple[list, dict]:
    graphs, seeds = [], []
    for k in range(cfg.run.dataset_size):
        s_scene, s_noise = graph_seeds(cfg.run.seed, k)
        clean = generate_scene(dataclasses.replace(cfg.scene, seed=s_scene), with_boxes=cfg.run.with_boxes)
        graphs.append((f"g{k:05d}", apply_noise(clean, cfg.noise, s_noise)))
        seeds.append({"scene": s_scene, "noise": s_noise})
    conn = np.array([g.connectivity for _, g in graphs])
    manifest = {
        "seed": cfg.run.seed,
        "graph_count": len(graphs),
        "config": _config_echo(cfg),
        "connectivity": {"mean": float(conn.mean()), "min": float(conn.min()), "max": float(conn.max())},
        "edges_per_graph_mean": float(np.mean([len(g.edges) for _, g in graphs])),
        "graph_seeds": seeds,
    }
    return graphs, manifest


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if cfg.run.dataset_size <= 0:
        raise ConfigError("dataset size must be positive")
    try:
        graphs, manifest = generate_dataset(cfg)
    except GenerationFailed as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "dataset.graphs", serialize_graphs(graphs))
    _write(out / "manifest.json", _dumps(manifest))
    return EXIT_OK


def _read_graphs(path: str) -> list:
    with open(path, encoding="utf-8") as fh:
        return parse_graphs(fh.read())


def _run_all(graphs, stage: StageConfig, jobs: int):
    gs = [g for _, g in graphs]
    if jobs <= 1 or len(gs) < 2:
        return [run_graph(g, stage) for g in gs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map keeps input order whatever the completion order
        return list(pool.map(run_graph, gs, [stage] * len(gs)))


def _edge_errors(graphs, runs):
    before, after = [], []
    for (_, g), run in zip(graphs, runs):
        if run.repaired is None or g.ground_truth is None:
            continue
        before += edge_rotation_errors(g)
        after += edge_rotation_errors(run.repaired)
    return before, after


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    graphs = _read_graphs(args.inp)
    if not graphs:
        raise ParseError("input holds no graphs")
    solver = args.rotavg or cfg.run.solver
    stage = StageConfig(cfg.repair, cfg.rotavg, cfg.transavg, solver, args.skip_repair)
    runs = _run_all(graphs, stage, args.jobs)
    names = [n for n, _ in graphs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "predictions.poses", serialize_poses(zip(names, (r.poses for r in runs))))

    has_gt = all(g.ground_truth is not None for _, g in graphs)
    if has_gt:
        report = evaluate_dataset([g for _, g in graphs], [r.poses for r in runs],
                                  cfg.run.align_translations, [r.reason for r in runs])
        _write(out / "report.csv", report.to_csv())
        _write(out / "report.json", report.to_json())
        _write(out / "per_graph.csv", report.per_graph_csv(names))
    else:
        print("warning: input lacks ground truth; skipping the metrics report", file=sys.stderr)
        lines = ["graph,status,reason"] + [f"{n},{r.status},{r.reason}" for n, r in zip(names, runs)]
        _write(out / "per_graph.csv", "\n".join(lines) + "\n")

    if args.diagnostics:
        _write(out / "traces.json", _dumps({n: r.traces() for n, r in zip(names, runs)}))
        before, after = _edge_errors(graphs, runs)
        if has_gt and not args.skip_repair:
            _write(out / "transfer_matrix.csv", transfer_matrix(before, after).to_csv())

    if args.compare and has_gt:
        other = dataclasses.replace(stage, skip_repair=not stage.skip_repair)
        other_runs = _run_all(graphs, other, args.jobs)
        other_report = evaluate_dataset([g for _, g in graphs], [r.poses for r in other_runs],
                                        cfg.run.align_translations)
        rows = {stage.skip_repair: report, other.skip_repair: other_report}
        lines = ["variant," + CSV_HEADER]
        for skip, label in ((False, "repaired"), (True, "skip_repair")):
            lines.append(label + "," + ",".join("%.6f" % v for v in rows[skip].row()))
        _write(out / "comparison.csv", "\n".join(lines) + "\n")

    if not any(r.status == "ok" for r in runs):
        print("error: every graph failed", file=sys.stderr)
        return EXIT_ALL_FAILED
    return EXIT_OK


def cmd_analyze_chirality(args) -> int:
    cfg = load_config(args.config)
    graphs = _read_graphs(args.inp)
    if not graphs:
        raise ParseError("input holds no graphs")
    missing = [n for n, g in graphs if g.ground_truth is None]
    if missing:
        raise ConfigError(f"chirality analysis needs ground truth; missing in {missing[0]}")
    before, after = [], []
    per_graph = []
    for name, g in graphs:
        repaired, rep = repair_graph(g, cfg.repair)
        eb, ea = edge_rotation_errors(g), edge_rotation_errors(repaired)
        before += eb
        after += ea
        per_graph.append({"graph": name, "method": rep.method, "changed_edges": rep.changed,
                          "cost_before": rep.cost_before, "cost_after": rep.cost_after})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for label, errs in (("before", before), ("after", after)):
        for scale, suffix in (("linear", ""), ("log10", "_log")):
            h = histogram(errs, 5.0, 180.0, scale)
            _write(out / f"histogram_{label}{suffix}.csv", h.to_csv())
    tm = transfer_matrix(before, after)
    _write(out / "transfer_matrix.csv", tm.to_csv())
    _write(out / "transfer_matrix.json", tm.to_json() + "\n")
    b, a = np.asarray(before), np.asarray(after)
    summary = {
        "edges": len(before),
        "fraction_above_160_before": float(np.mean(b > 160.0)) if len(b) else None,
        "fraction_above_160_after": float(np.mean(a > 160.0)) if len(a) else None,
        "mass_moved_above_160_to_below_30": tm.mass_moved(160.0, 30.0),
        "graphs": per_graph,
    }
    _write(out / "summary.json", _dumps(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motionavg", description="Motion averaging on small view graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("pipeline", help="repair, average rotations and translations, evaluate")
    r.add_argument("--config")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--skip-repair", action="store_true")
    r.add_argument("--rotavg", choices=SOLVERS)
    r.add_argument("--diagnostics", action="store_true")
    r.add_argument("--compare", action="store_true", help="also run the opposite repair setting")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_pipeline)

    a = sub.add_parser("analyze-chirality", help="edge-error histograms and transfer matrix")
    a.add_argument("--config")
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze_chirality)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MotionAveragingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED


if __name__ == "__main__":
    sys.exit(main())
