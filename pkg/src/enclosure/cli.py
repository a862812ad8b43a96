"""Command-line entry point.

Usage::

    enclosure forward     CONFIG [--probe N] [--threads N]
    enclosure indicator   CONFIG [--probe N] [--threads N]
    enclosure reconstruct CONFIG [--threads N]
    enclosure validate    SUITE [--config CONFIG] [--seed N]

Every run writes ``config.resolved.yaml`` into the output directory; running
the same subcommand on that file reproduces the run. ``ENCLOSURE_OUTPUT_DIR``
overrides ``outputs.dir``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, dump_resolved, load_config
from .fields import FieldError, make_surface_patches
from .geometry import GeometryError
from .indicator import IndicatorError, InsufficientData
from .laplace import TransformError
from .probe import OverlapError, SingularPoint
from .reconstruct import (
    NoUsableProbes,
    ProbePlan,
    solver_config,
    run_plan,
    run_probe,
    scene_grid,
)
from .validation import SUITES, run_suite
from .wave import (
    ProbeIntersectsSurface,
    ProbeOutsideGrid,
    RecorderTap,
    SnapshotPolicy,
    SolverError,
    free_space_oracle,
    run,
)

log = logging.getLogger("enclosure")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VALIDATION = 4

_CONFIG_ERRORS = (ConfigError, FieldError, GeometryError, OverlapError,
                  ProbeOutsideGrid, ProbeIntersectsSurface, ValueError)
_NUMERICAL_ERRORS = (SolverError, TransformError, IndicatorError, NoUsableProbes,
                     SingularPoint, FloatingPointError)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _prepare(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(dump_resolved(cfg))
    return out


def _pick_probe(cfg: RunConfig, index: int):
    if not cfg.probes:
        raise ConfigError("at least one probe is required", "probes", source=cfg.source)
    if not 0 <= index < len(cfg.probes):
        raise ConfigError(f"probe index {index} out of range (have {len(cfg.probes)})",
                          "probes", source=cfg.source)
    return cfg.probes[index]


def cmd_forward(cfg: RunConfig, probe_index: int = 0) -> int:
    """One forward solve: surface traces, optional snapshots, run report."""
    probe = _pick_probe(cfg, probe_index)
    scene = cfg.scene
    T = cfg.time_policy.resolve(scene, probe)
    grid = scene_grid(scene, probe)
    patches = make_surface_patches(scene.surface, grid, scene.patch_resolution)
    shape = scene.obstacle.shape if scene.obstacle is not None else None
    patches.validate(grid, shape, scene.sponge.thickness)
    solver = solver_config(scene, grid, T, with_obstacle=True)

    out = _prepare(cfg)
    n_rec = min(cfg.record_nodes, len(patches))
    nodes = np.unique(np.round(np.linspace(0, len(patches) - 1, n_rec)).astype(int))
    points = patches.positions[nodes]
    tap = RecorderTap(grid, points, keep=True)
    snaps = None
    if cfg.snapshot_every > 0:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        snaps = SnapshotPolicy(cfg.snapshot_every, str(snap_dir))
    report = run(solver, probe, [tap], snaps, surface=scene.surface)
    log.info("forward: %d steps in %.1fs", report.steps, report.wall_time)

    with open(out / "nodes.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["node_id", "x", "y", "z", "nx", "ny", "nz", "weight"])
        for i in nodes:
            wr.writerow([int(i), *map(repr, map(float, patches.positions[i])),
                         *map(repr, map(float, patches.normals[i])), repr(float(patches.weights[i]))])
    t, u = tap.series() if tap.times else (np.zeros(0), np.zeros((0, len(nodes))))
    with open(out / "recordings.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", *[f"node_{int(i)}" for i in nodes]])
        for k in range(len(t)):
            wr.writerow([repr(float(t[k])), *map(repr, map(float, u[k]))])

    payload = report.to_dict()
    payload.pop("wall_time")
    payload["probe"] = {"center": list(probe.center), "radius": probe.radius,
                        "amplitude": probe.amplitude}
    payload["recorded_nodes"] = len(nodes)
    if scene.obstacle is None and len(t):
        exact = np.stack([free_space_oracle(p, t, probe) for p in points], axis=1)
        norm = np.sqrt(np.sum(exact**2, axis=0))
        live = norm > 0
        err = np.sqrt(np.sum((u - exact) ** 2, axis=0))[live] / norm[live]
        payload["oracle"] = {"max_rel_l2_error": float(err.max()) if err.size else None,
                             "nodes_compared": int(live.sum())}
        if err.size:
            print(f"free-space oracle: max relative L2 error {err.max():.4g} over {err.size} nodes")
        else:
            print("free-space oracle: no recorded node reached by the wave")
    _write_json(out / "run_report.json", payload)
    print(f"forward: {report.steps} steps to T={T:.6g}; outputs in {out}")
    return EXIT_OK


def cmd_indicator(cfg: RunConfig, probe_index: int = 0) -> int:
    """Forward solve, Laplace transform, indicator series and distance fit."""
    if cfg.scene.obstacle is None:
        raise ConfigError("indicator needs an obstacle", "scene.obstacle", source=cfg.source)
    probe = _pick_probe(cfg, probe_index)
    out = _prepare(cfg)
    rec = run_probe(cfg.scene, probe, cfg.taus, cfg.time_policy,
                    subtract_reference=cfg.subtract_reference)
    if rec.transform is None:
        raise SolverError(rec.error or "no transform produced")
    series = rec.series
    series.write_csv(out / "indicator.csv")
    payload = series.summary()
    payload["probe"] = rec.to_dict()
    payload["d_hat"] = rec.d_hat
    payload["error"] = rec.error
    payload["half_log_rate"] = [
        {"tau": e.tau, "value": None if not np.isfinite(e.log_abs_I) else e.log_abs_I / (2.0 * e.tau)}
        for e in series.entries]
    _write_json(out / "fit.json", payload)
    if rec.d_hat is not None:
        print(f"indicator: verdict {series.verdict.value}, d_hat = {rec.d_hat:.6g} "
              f"(T={rec.T:.6g})")
    else:
        naive = [e.naive_d for e in series.entries if e.naive_d is not None]
        tail = f"; naive estimate {naive[-1]:.6g}" if naive else ""
        kind = "insufficient data" if rec.error and InsufficientData.__name__ in rec.error else "no fit"
        print(f"indicator: verdict {series.verdict.value}, {kind}{tail} ({rec.error})")
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig) -> int:
    """All probes, carving, and metrics against the configured obstacle."""
    if cfg.scene.obstacle is None:
        raise ConfigError("reconstruct needs an obstacle to simulate", "scene.obstacle",
                          source=cfg.source)
    if not cfg.probes:
        raise ConfigError("at least one probe is required", "probes", source=cfg.source)
    out = _prepare(cfg)
    plan = ProbePlan(cfg.scene, cfg.probes, cfg.taus, cfg.time_policy, cfg.region_h, cfg.safety)
    truth = cfg.scene.obstacle.shape if cfg.score else None
    result = run_plan(plan, truth)
    result.write(out)
    m = result.metrics
    usable = sum(r.usable for r in result.records)
    print(f"reconstruct: {usable}/{len(result.records)} probes usable; outputs in {out}")
    if m:
        print(f"  median rel error {m['median_rel_error']:.4g}, contains truth {m['contains_truth']}, "
              f"Hausdorff {m['hausdorff']:.4g}")
    return EXIT_OK


def cmd_validate(suite: str, seed: int, out_dir: Path | None) -> int:
    rep = run_suite(suite, seed=seed)
    payload = rep.to_dict()
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"validate_{suite}.json").write_text(text + "\n")
    return EXIT_OK if rep.passed else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enclosure", description=__doc__.split("\n\n")[0])
    parser.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("forward", "one forward solve with surface recordings"),
                           ("indicator", "indicator series and distance fit for one probe"),
                           ("reconstruct", "all probes and region carving")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", type=Path)
        if name != "reconstruct":
            p.add_argument("--probe", type=int, default=0, help="probe index (default 0)")
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p = sub.add_parser("validate", help="run an oracle or property suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--config", type=Path, default=None, help="take seed and output dir from here")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    return parser


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    import numba

    if n < 1:
        raise ConfigError("--threads must be >= 1", "--threads")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads(args.threads)
        if args.command == "validate":
            seed, out_dir = 0, None
            if args.config is not None:
                cfg = load_config(args.config)
                seed, out_dir = cfg.seed, _prepare(cfg)
            if args.seed is not None:
                seed = args.seed
            return cmd_validate(args.suite, seed, out_dir)
        cfg = load_config(args.config)
        if args.command == "forward":
            return cmd_forward(cfg, args.probe)
        if args.command == "indicator":
            return cmd_indicator(cfg, args.probe)
        return cmd_reconstruct(cfg)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
