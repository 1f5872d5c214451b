"""Manifest-driven batch front end.

Subcommands: simulate, suppress, evaluate, sweep, correlate.  Every
command is deterministic given its inputs and seed; per-entry failures
are recorded and reported without aborting the batch, and the exit
status is nonzero when any entry failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .activity import DEFAULT_THRESHOLD_DB, classify, echo_reference
from .audio import SceneComponents, atomic_write_bytes, load_wav, save_wav
from .framing import make_grid
from .metrics import (
    CLAMP_DB,
    METRIC_CONDITIONS,
    METRIC_NAMES,
    MetricReport,
    aggregate,
    evaluate_scene,
)
from .simulate import SceneSpec, generate_scene, load_scene, save_scene
from .stats import ScoreTable, correlate_table
from .suppressor import SuppressorConfig, beta_schedule, oracle_suppress

SEED_ENV_VAR = "RES_EVAL_SEED"

_COMPONENT_KEYS = ("s", "x", "y", "w", "m", "y_hat", "e", "s_hat")


@dataclass
class ManifestEntry:
    id: str
    paths: dict[str, str]
    tags: dict = field(default_factory=dict)

    def require(self, keys) -> None:
        missing = [k for k in keys if k not in self.paths]
        if missing:
            raise ValueError(f"entry {self.id!r} is missing paths: {', '.join(missing)}")

    def load_components(self, keys=None) -> SceneComponents:
        wanted = self.paths if keys is None else {k: self.paths[k] for k in keys if k in self.paths}
        loaded = {name: load_wav(path) for name, path in wanted.items()}
        return SceneComponents(**loaded)


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    threshold_db: float = DEFAULT_THRESHOLD_DB
    clamp_db: float = CLAMP_DB

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.id in seen:
                raise ValueError(f"duplicate entry id {entry.id!r}")
            seen.add(entry.id)

    @classmethod
    def from_json(cls, path) -> "Manifest":
        base = os.path.dirname(os.path.abspath(path))
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict) or "entries" not in raw:
            raise ValueError(f"{path}: manifest must be an object with an 'entries' list")
        options = raw.get("options", {})
        entries = []
        for idx, item in enumerate(raw["entries"]):
            if "id" not in item:
                raise ValueError(f"{path}: entry {idx} has no 'id'")
            paths = {}
            for key in _COMPONENT_KEYS:
                if item.get(key):
                    p = item[key]
                    paths[key] = p if os.path.isabs(p) else os.path.join(base, p)
            entries.append(ManifestEntry(id=str(item["id"]), paths=paths, tags=item.get("tags", {})))
        return cls(
            entries=entries,
            threshold_db=float(options.get("threshold_db", DEFAULT_THRESHOLD_DB)),
            clamp_db=float(options.get("clamp_db", CLAMP_DB)),
        )

    def write_json(self, path) -> None:
        items = []
        for entry in self.entries:
            item = {"id": entry.id, **entry.paths}
            if entry.tags:
                item["tags"] = entry.tags
            items.append(item)
        blob = json.dumps(
            {"options": {"threshold_db": self.threshold_db, "clamp_db": self.clamp_db},
             "entries": items},
            indent=2, sort_keys=True) + "\n"
        atomic_write_bytes(path, blob.encode())


def manifest_from_scenes(scenes_dir) -> Manifest:
    """Build a manifest from a directory of scene subdirectories."""
    names = sorted(
        d for d in os.listdir(scenes_dir)
        if os.path.isfile(os.path.join(scenes_dir, d, "scene.json"))
    )
    if not names:
        raise ValueError(f"{scenes_dir}: no scene directories (missing scene.json sidecars)")
    wav_names = {
        "s": "s.wav", "x": "x.wav", "y": "y.wav", "w": "w.wav",
        "m": "m.wav", "y_hat": "yhat.wav", "e": "e.wav", "s_hat": "shat.wav",
    }
    entries = []
    for name in names:
        scene_dir = os.path.join(scenes_dir, name)
        with open(os.path.join(scene_dir, "scene.json")) as fh:
            sidecar = json.load(fh)
        paths = {}
        for key, fname in wav_names.items():
            p = os.path.join(scene_dir, fname)
            if os.path.exists(p):
                paths[key] = p
        tags = dict(sidecar.get("spec", {}))
        for key, value in sidecar.get("achieved", {}).items():
            tags[f"achieved_{key}"] = value
        entries.append(ManifestEntry(id=name, paths=paths, tags=tags))
    return Manifest(entries=entries)


def _resolve_manifest(args) -> Manifest:
    if getattr(args, "manifest", None):
        manifest = Manifest.from_json(args.manifest)
    elif getattr(args, "scenes", None):
        manifest = manifest_from_scenes(args.scenes)
    else:
        raise ValueError("need --manifest or --scenes")
    if not manifest.entries:
        raise ValueError("no entries")
    if getattr(args, "threshold_db", None) is not None:
        manifest.threshold_db = args.threshold_db
    if getattr(args, "clamp_db", None) is not None:
        manifest.clamp_db = args.clamp_db
    return manifest


def _default_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"{SEED_ENV_VAR}={env!r} is not an integer") from None
    return 0


def _map_entries(fn, items, jobs: int):
    """Apply fn over items with bounded parallelism, preserving order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_scene_specs(path, count: int, seed: int) -> list[SceneSpec]:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: scene spec must be a JSON object")
    list_fields = {}
    scalar = {}
    for key, value in raw.items():
        if isinstance(value, list):
            if not value:
                raise ValueError(f"field {key!r} is an empty list")
            list_fields[key] = value
        else:
            scalar[key] = value
    specs = []
    for i in range(count):
        data = dict(scalar)
        for key, values in list_fields.items():
            data[key] = values[i % len(values)]
        data["seed"] = seed + i
        specs.append(SceneSpec.from_dict(data))
    return specs


def _simulate_one(task):
    spec, scene_dir = task
    save_scene(generate_scene(spec), spec, scene_dir)


def cmd_simulate(args) -> int:
    seed = _default_seed(args)
    specs = _load_scene_specs(args.spec, args.count, seed)
    os.makedirs(args.out, exist_ok=True)
    tasks = [
        (spec, os.path.join(args.out, f"scene_{i:04d}")) for i, spec in enumerate(specs)
    ]
    _map_entries(_simulate_one, tasks, args.jobs)
    print(f"simulate: wrote {len(specs)} scenes to {args.out}")
    return 0


def _suppress_one(task):
    entry, beta, floor, out_path = task
    try:
        entry.require(("s", "e"))
        components = entry.load_components(("s", "e"))
        s_hat = oracle_suppress(components.e, components.s, SuppressorConfig(beta=beta, floor=floor))
        save_wav(s_hat, out_path)
        return entry.id, out_path, None
    except Exception as exc:  # per-entry isolation
        return entry.id, out_path, f"{type(exc).__name__}: {exc}"


def cmd_suppress(args) -> int:
    manifest = _resolve_manifest(args)
    if args.alpha is not None:
        beta = beta_schedule([args.alpha])[0]
    else:
        beta = args.beta
    out_dir = args.out
    tasks = []
    for entry in manifest.entries:
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            out_path = os.path.join(out_dir, f"{entry.id}.shat.wav")
        elif "e" in entry.paths:
            out_path = os.path.join(os.path.dirname(entry.paths["e"]), "shat.wav")
        else:
            out_path = ""
        tasks.append((entry, beta, args.floor, out_path))
    results = _map_entries(_suppress_one, tasks, args.jobs)
    errors = {}
    for entry, (eid, out_path, err) in zip(manifest.entries, results):
        if err is None:
            entry.paths["s_hat"] = out_path
        else:
            errors[eid] = err
            print(f"suppress: {eid}: {err}", file=sys.stderr)
    if out_dir:
        manifest.write_json(os.path.join(out_dir, "manifest.json"))
    print(f"suppress: beta={beta:g}, {len(manifest.entries) - len(errors)} ok, {len(errors)} failed")
    return 1 if errors else 0


def _evaluate_one(task):
    entry, threshold_db, clamp_db = task
    try:
        entry.require(("s", "e", "s_hat"))
        components = entry.load_components()
        grid = make_grid(len(components.s))
        mask = classify(components.s, echo_reference(components), grid, threshold_db)
        report = evaluate_scene(components, mask, clamp_db)
        return entry.id, report, None
    except Exception as exc:
        return entry.id, None, f"{type(exc).__name__}: {exc}"


def _pooled_aggregates(reports: dict[str, MetricReport]) -> dict:
    pooled = {}
    for name in METRIC_NAMES:
        chunks = [rep.values[name] for rep in reports.values()]
        if not chunks:
            continue
        values = np.concatenate(chunks)
        agg = aggregate(values, _condition_of(name))
        if agg is not None:
            pooled[name] = {
                "condition": agg.condition,
                "mean": agg.mean,
                "std": agg.std,
                "count": agg.count,
            }
    return pooled


def _condition_of(name: str) -> str:
    cond = METRIC_CONDITIONS[name]
    return cond.value if cond else "all"


def cmd_evaluate(args) -> int:
    manifest = _resolve_manifest(args)
    os.makedirs(args.out, exist_ok=True)
    tasks = [(entry, manifest.threshold_db, manifest.clamp_db) for entry in manifest.entries]
    results = _map_entries(_evaluate_one, tasks, args.jobs)
    reports = {}
    errors = {}
    for eid, report, err in results:
        if err is None:
            reports[eid] = report
            report.write_csv(os.path.join(args.out, f"frames_{eid}.csv"))
        else:
            errors[eid] = err
            print(f"evaluate: {eid}: {err}", file=sys.stderr)

    payload = {
        "threshold_db": manifest.threshold_db,
        "clamp_db": manifest.clamp_db,
        "n_entries": len(manifest.entries),
        "n_failed": len(errors),
        "metrics": _pooled_aggregates(reports),
        "per_utterance": {
            eid: rep.to_json_dict()["aggregates"] for eid, rep in sorted(reports.items())
        },
        "errors": errors,
    }
    blob = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(os.path.join(args.out, "report.json"), blob.encode())
    print(f"evaluate: {len(reports)} ok, {len(errors)} failed -> {args.out}")
    return 1 if errors else 0


def _load_scene_for_sweep(entry, threshold_db):
    components = entry.load_components()
    grid = make_grid(len(components.s))
    mask = classify(components.s, echo_reference(components), grid, threshold_db)
    return components, mask


def cmd_sweep(args) -> int:
    alphas = [float(a) for a in args.alphas.split(",") if a.strip() != ""]
    if not alphas:
        raise ValueError("empty alpha list")
    betas = beta_schedule(alphas)

    tmp_ctx = None
    if args.spec:
        seed = _default_seed(args)
        specs = _load_scene_specs(args.spec, args.count, seed)
        if args.scenes_dir:
            scenes_dir = args.scenes_dir
        else:
            import tempfile

            tmp_ctx = tempfile.TemporaryDirectory(prefix="reseval-sweep-")
            scenes_dir = tmp_ctx.name
        os.makedirs(scenes_dir, exist_ok=True)
        for i, spec in enumerate(specs):
            save_scene(generate_scene(spec), spec, os.path.join(scenes_dir, f"scene_{i:04d}"))
        args.scenes = scenes_dir
        args.manifest = None
    manifest = _resolve_manifest(args)

    loaded = []
    for entry in manifest.entries:
        entry.require(("s", "e"))
        components, mask = _load_scene_for_sweep(entry, manifest.threshold_db)
        group = entry.tags.get(args.group_by) if args.group_by else None
        if args.group_by and group is None:
            raise ValueError(f"entry {entry.id!r} has no tag {args.group_by!r}")
        loaded.append((entry.id, group, components, mask))

    groups = sorted({g for _, g, _, _ in loaded}, key=lambda v: (str(type(v)), v))
    rows = []
    for group in groups:
        members = [item for item in loaded if item[1] == group]
        for alpha, beta in zip(alphas, betas):
            pooled = {name: [] for name in METRIC_NAMES}
            for _, _, components, mask in members:
                s_hat = oracle_suppress(
                    components.e, components.s, SuppressorConfig(beta=beta, floor=args.floor)
                )
                scene = SceneComponents(**{**components.present(), "s_hat": s_hat})
                report = evaluate_scene(scene, mask, manifest.clamp_db)
                for name in METRIC_NAMES:
                    pooled[name].append(report.values[name])
            row = {"alpha": alpha, "beta": beta, "n_scenes": len(members)}
            if args.group_by:
                row[args.group_by] = group
            for name in METRIC_NAMES:
                agg = aggregate(np.concatenate(pooled[name]), _condition_of(name))
                row[f"{name}_mean"] = agg.mean if agg else ""
                row[f"{name}_std"] = agg.std if agg else ""
            rows.append(row)

    columns = ([args.group_by] if args.group_by else []) + ["alpha", "beta", "n_scenes"]
    for name in METRIC_NAMES:
        columns += [f"{name}_mean", f"{name}_std"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(row.get(c, "")) for c in columns])
    atomic_write_bytes(args.out, buf.getvalue().encode())
    if tmp_ctx is not None:
        tmp_ctx.cleanup()
    print(f"sweep: {len(rows)} rows -> {args.out}")
    return 0


def _csv_cell(value) -> str:
    if value == "":
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_correlate(args) -> int:
    table = ScoreTable.from_csv(args.table)
    results = []
    if args.group_by:
        column = table.column(args.group_by)
        groups = sorted({v for v in column if v is not None})
        for group in groups:
            rows = tuple(r for r, v in zip(table.rows, column) if v == group)
            sub = ScoreTable(columns=table.columns, rows=rows, id_column=table.id_column)
            res = correlate_table(sub, args.metric_col, args.score_col)
            results.append((group, res))
    else:
        results.append((None, correlate_table(table, args.metric_col, args.score_col)))

    for group, res in results:
        prefix = f"{args.group_by}={group} " if group is not None else ""
        print(f"{prefix}pcc={res.pcc:.6f} srcc={res.srcc:.6f} n={res.n}")
    if args.out:
        payload = {
            "metric_col": args.metric_col,
            "score_col": args.score_col,
            "groups": [
                {"group": group, "pcc": res.pcc, "srcc": res.srcc, "n": res.n}
                for group, res in results
            ],
        }
        blob = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        atomic_write_bytes(args.out, blob.encode())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reseval",
        description="Residual-echo suppression evaluation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic scenes from a spec file")
    p.add_argument("--spec", required=True, help="JSON scene spec (fields may be lists, cycled per scene)")
    p.add_argument("--out", required=True, help="output directory for scene subdirectories")
    p.add_argument("--count", type=int, default=1, help="number of scenes")
    p.add_argument("--seed", type=int, default=None, help=f"base seed (default ${SEED_ENV_VAR} or 0)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("suppress", help="run the reference suppressor over a batch")
    p.add_argument("--manifest", help="manifest JSON")
    p.add_argument("--scenes", help="directory of scene subdirectories")
    p.add_argument("--beta", type=float, default=1.0, help="over-suppression factor (>= 1)")
    p.add_argument("--alpha", type=float, default=None, help="tradeoff weight mapped to beta")
    p.add_argument("--floor", type=float, default=0.02, help="spectral gain floor")
    p.add_argument("--out", help="output directory (default: shat.wav beside each scene's e.wav)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_suppress)

    p = sub.add_parser("evaluate", help="compute metric reports over a batch")
    p.add_argument("--manifest", help="manifest JSON")
    p.add_argument("--scenes", help="directory of scene subdirectories")
    p.add_argument("--out", required=True, help="output directory for frame CSVs and report.json")
    p.add_argument("--threshold-db", type=float, default=None, dest="threshold_db",
                   help=f"activity threshold (default {DEFAULT_THRESHOLD_DB})")
    p.add_argument("--clamp-db", type=float, default=None, dest="clamp_db",
                   help=f"metric clamp bound (default {CLAMP_DB})")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="tradeoff table over an alpha sweep")
    p.add_argument("--spec", help="JSON scene spec to simulate scenes from")
    p.add_argument("--count", type=int, default=20, help="scenes to simulate with --spec")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scenes-dir", dest="scenes_dir", help="keep simulated scenes here")
    p.add_argument("--manifest", help="manifest JSON (alternative to --spec)")
    p.add_argument("--scenes", help="scene directory (alternative to --spec)")
    p.add_argument("--alphas", required=True, help="comma-separated ascending alphas")
    p.add_argument("--out", required=True, help="output CSV table")
    p.add_argument("--floor", type=float, default=0.02)
    p.add_argument("--group-by", dest="group_by", help="tag/sidecar field to group rows by")
    p.add_argument("--threshold-db", type=float, default=None, dest="threshold_db")
    p.add_argument("--clamp-db", type=float, default=None, dest="clamp_db")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("correlate", help="PCC/SRCC between two score-table columns")
    p.add_argument("--table", required=True, help="CSV score table")
    p.add_argument("--metric-col", required=True, dest="metric_col")
    p.add_argument("--score-col", required=True, dest="score_col")
    p.add_argument("--group-by", dest="group_by", help="column to group by")
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(func=cmd_correlate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        message = exc.args[0] if exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
