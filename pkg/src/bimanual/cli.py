"""Command-line entry point: train, eval, plot and inspect-spaces."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import spaces
from .envsim.hands import DOM, FAC, get_hand
from .envsim.state import Phase
from .envsim.tasks import ConfigError
from .rl import PpoConfig, load_checkpoint
from .trainer import (
    METRIC_COLUMNS,
    TrainingError,
    TrainRunConfig,
    evaluate,
    evaluate_grasp,
    format_csv,
    train_phase,
    train_two_phase,
    two_phase_rollout,
)

OUTPUT_ENV = "BIMANUAL_OUTPUT"
log = logging.getLogger("bimanual")


class CliError(Exception):
    def __init__(self, message: str, status: int = 2):
        super().__init__(message)
        self.status = status


def _key_lines(node, prefix: str = "", out: dict | None = None) -> dict[str, int]:
    """Map dotted key paths of a YAML mapping to 1-based line numbers."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _key_lines(v, path, out)
    return out


def _line_for(lines: dict[str, int], path: str) -> int | None:
    while path:
        if path in lines:
            return lines[path]
        if path in ("task", "variant", "phase") or "." not in path:
            # task-level keys may live under task_overrides
            alt = f"task_overrides.{path}"
            if alt in lines:
                return lines[alt]
        path = path.rsplit(".", 1)[0] if "." in path else ""
    return None


def parse_config_text(text: str, source: str = "<config>") -> tuple[TrainRunConfig, dict]:
    try:
        tree = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as err:
        # prefer where the offending construct starts over where parsing gave up
        mark = getattr(err, "context_mark", None) or getattr(err, "problem_mark", None)
        where = f":{mark.line + 1}" if mark is not None else ""
        raise CliError(f"{source}{where}: could not parse config: {err}") from None
    tree = tree or {}
    if not isinstance(tree, dict):
        raise CliError(f"{source}: top level must be a mapping")
    lines = _key_lines(node)
    try:
        cfg = config_from_tree(tree)
        cfg.task_spec()
    except ConfigError as err:
        path = err.path
        if path and path not in lines and f"task_overrides.{path}" in lines:
            path = f"task_overrides.{path}"
        line = _line_for(lines, path)
        where = f":{line}" if line else ""
        raise CliError(f"{source}{where}: {path}: {str(err).split(': ', 1)[-1]}") from None
    return cfg, tree


def config_from_tree(tree: dict) -> TrainRunConfig:
    fields = {f.name: f for f in dataclasses.fields(TrainRunConfig)}
    kw = {}
    for key, value in tree.items():
        if key not in fields:
            raise ConfigError(key, "unknown key")
        if key == "ppo":
            if not isinstance(value, dict):
                raise ConfigError("ppo", "expected a mapping")
            ppo_fields = {f.name for f in dataclasses.fields(PpoConfig)}
            for k in value:
                if k not in ppo_fields:
                    raise ConfigError(f"ppo.{k}", "unknown key")
            try:
                value = PpoConfig(**value)
            except (TypeError, ValueError) as err:
                raise ConfigError("ppo", str(err)) from None
        elif key in ("pi_hidden", "v_hidden"):
            if not isinstance(value, list) or not all(isinstance(x, int) and x > 0 for x in value):
                raise ConfigError(key, "expected a list of positive integers")
            value = tuple(value)
        elif key == "task_overrides":
            if not isinstance(value, dict):
                raise ConfigError(key, "expected a mapping")
        else:
            default = fields[key].default
            if isinstance(default, bool) and not isinstance(value, bool):
                raise ConfigError(key, f"expected true/false, got {value!r}")
            if isinstance(default, int) and not isinstance(default, bool):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(key, f"expected an integer, got {value!r}")
            if isinstance(default, float) and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(key, f"expected a number, got {value!r}")
            if isinstance(default, str) and not isinstance(value, str):
                raise ConfigError(key, f"expected a string, got {value!r}")
        kw[key] = value
    return TrainRunConfig(**kw)


def blob_hash(data: bytes) -> str:
    """Content hash in the style of a git blob id."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV, "runs"))


def _unique_run_dir(root: Path, base: str) -> tuple[str, Path]:
    run_id, k = base, 1
    while (root / run_id).exists():
        k += 1
        run_id = f"{base}-{k}"
    return run_id, root / run_id


def _overrides(pairs: list[str]) -> dict:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise CliError(f"--set expects key=value, got {p!r}")
        key, val = p.split("=", 1)
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(val)
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def run_train(config_path, overrides: dict | None = None, out_root: str | None = None) -> int:
    path = Path(config_path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    raw = path.read_bytes()
    _, tree = parse_config_text(raw.decode(), str(path))
    if overrides:
        tree = _merge(tree, overrides)
    try:
        cfg = config_from_tree(tree)
        cfg.task_spec()
    except ConfigError as err:
        raise CliError(f"override {err}") from None

    root = output_root(out_root)
    digest = blob_hash(raw)
    run_id, run_dir = _unique_run_dir(root, f"{cfg.task}-{cfg.variant}-{cfg.phase}-s{cfg.seed}-{digest[:8]}")
    run_dir.mkdir(parents=True)
    (run_dir / "config.yaml").write_bytes(raw)
    manifest = {
        "run_id": run_id,
        "config_file": str(path),
        "config_hash": digest,
        "overrides": overrides or {},
        "seed": cfg.seed,
        "resolved": _jsonable(dataclasses.asdict(cfg)),
        "layout": {
            "config": "config.yaml",
            "metrics": "metrics.csv",
            "eval": "eval.csv",
            "checkpoints": "checkpoints/",
        },
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("run %s -> %s", run_id, run_dir)
    try:
        if cfg.phase == "combined":
            res = train_two_phase(cfg, run_dir)
            (run_dir / "metrics.csv").write_text(format_csv(res.rows, METRIC_COLUMNS))
        else:
            train_phase(cfg, run_dir, kind=cfg.phase)
    except TrainingError as err:
        raise CliError(f"training aborted: {err}", status=1) from None
    print(run_dir)
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def run_eval(run_dir, episodes: int = 100, seed: int = 0) -> int:
    run_dir = Path(run_dir)
    man_path = run_dir / "manifest.json"
    if not man_path.is_file():
        raise CliError(f"no manifest.json in {run_dir}")
    manifest = json.loads(man_path.read_text())
    cfg, _ = parse_config_text((run_dir / "config.yaml").read_text(), str(run_dir / "config.yaml"))
    cfg = config_from_tree(_merge(_tree_of(cfg), manifest.get("overrides", {})))
    task = cfg.task_spec()
    ck = run_dir / "checkpoints"
    if cfg.phase == "combined":
        grasp = {FAC: load_checkpoint(ck / "policy_grasp_facilitating_final.ckpt")["model"]}
        if task.dominant_holds:
            grasp[DOM] = load_checkpoint(ck / "policy_grasp_dominant_final.ckpt")["model"]
        inter = load_checkpoint(ck / "policy_interaction_final.ckpt")["model"]
        succ = two_phase_rollout(grasp, inter, task, cfg.variant, episodes, seed)
        report = {"success_rate": float(np.mean(succ)), "episodes": episodes, "successes": int(succ.sum())}
    else:
        model = load_checkpoint(ck / "policy_final.ckpt")["model"]
        if cfg.phase == "grasp":
            rep = evaluate_grasp(model, task, FAC if cfg.grasp_hand == "facilitating" else DOM, episodes, seed)
        else:
            start = Phase.ACQUISITION if cfg.phase == "monolithic" else Phase.INTERACTION
            rep = evaluate(model, task, cfg.variant, episodes, seed, start)
        report = dataclasses.asdict(rep)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _tree_of(cfg: TrainRunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["pi_hidden"] = list(cfg.pi_hidden)
    d["v_hidden"] = list(cfg.v_hidden)
    return d


def read_metrics(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != METRIC_COLUMNS:
        raise CliError(f"{path}: expected columns {','.join(METRIC_COLUMNS)}, got {','.join(rows[0]) if rows else 'nothing'}")
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(METRIC_COLUMNS))
    return {c: data[:, i] for i, c in enumerate(METRIC_COLUMNS)}


def _label_for(spec: str) -> tuple[str, Path]:
    if "=" in spec and not Path(spec).exists():
        label, p = spec.split("=", 1)
        return label, Path(p)
    p = Path(spec)
    man = p.parent / "manifest.json"
    if man.is_file():
        return json.loads(man.read_text())["resolved"]["variant"], p
    return p.stem, p


def aggregate_curves(metrics: list[str], column: str = "success_rate") -> dict[str, tuple]:
    """Group metrics files by label; per label return (env_steps, mean, std) over the runs."""
    groups: dict[str, list[dict]] = {}
    for spec in metrics:
        label, path = _label_for(spec)
        if not path.is_file():
            raise CliError(f"metrics file not found: {path}")
        groups.setdefault(label, []).append(read_metrics(path))
    out = {}
    for label, runs in groups.items():
        n = min(len(r["env_steps"]) for r in runs)
        ys = np.stack([r[column][:n] for r in runs])
        out[label] = (runs[0]["env_steps"][:n], ys.mean(axis=0), ys.std(axis=0))
    return out


def run_plot(metrics: list[str], out, column: str = "success_rate") -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curves = aggregate_curves(metrics, column)
    plt.rcParams["svg.hashsalt"] = "bimanual"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (x, mean, std) in curves.items():
        (line,) = ax.plot(x, mean, label=label)
        ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.25, linewidth=0)
    ax.set_xlabel("environment steps")
    ax.set_ylabel(column.replace("_", " "))
    ax.legend()
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(out)
    return 0


def spaces_table() -> list[dict]:
    rows = []
    for name, hand, vels, prev in (("shadow", "shadow", True, True), ("allegro", "allegro", False, False)):
        h = get_hand(hand)
        for v in spaces.PolicyVariant:
            obs, act = spaces.space_dims(v, h, vels, prev)
            rows.append({"hand": name, "variant": v.value, "obs_dim": obs, "act_dim": act})
    return rows


def run_inspect(as_json: bool = False) -> int:
    rows = spaces_table()
    if as_json:
        print(json.dumps(rows, indent=2))
        return 0
    print(f"{'hand':<8} {'variant':<12} {'obs':>5} {'act':>5}")
    for r in rows:
        print(f"{r['hand']:<8} {r['variant']:<12} {r['obs_dim']:>5} {r['act_dim']:>5}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bimanual", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="train a policy from a YAML config")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./runs)")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    e = sub.add_parser("eval", help="evaluate the final policy of a run directory")
    e.add_argument("run_dir")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="learning curves (mean and std band per label) to SVG")
    pl.add_argument("metrics", nargs="+", help="metrics CSV files, optionally LABEL=path")
    pl.add_argument("--out", required=True)
    pl.add_argument("--column", default="success_rate", choices=METRIC_COLUMNS[1:])

    i = sub.add_parser("inspect-spaces", help="observation and action sizes per variant and hand")
    i.add_argument("--json", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.cmd == "train":
            ov = _overrides(args.set)
            if args.seed is not None:
                ov["seed"] = args.seed
            return run_train(args.config, ov, args.out)
        if args.cmd == "eval":
            return run_eval(args.run_dir, args.episodes, args.seed)
        if args.cmd == "plot":
            return run_plot(args.metrics, args.out, args.column)
        return run_inspect(args.json)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.status


if __name__ == "__main__":
    sys.exit(main())
