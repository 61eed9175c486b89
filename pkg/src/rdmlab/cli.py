"""Command-line front end: ``rdm <kind> --config FILE`` and ``rdm replay MANIFEST``.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure,
4 inconclusive statistics, 5 replay divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .config import (
    KINDS,
    ConfigError,
    ExperimentConfig,
    config_differences,
    load_config,
    parse_config_text,
    resolve_config,
)
from .experiments import InconclusiveError, run_experiment
from .grid import SolverError
from .manifest import MANIFEST_NAME, ExperimentManifest, atomic_write_text, sha256_bytes, sha256_file

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INCONCLUSIVE, EXIT_DIVERGED = 0, 2, 3, 4, 5
ENV_OUT = "RDM_OUT_DIR"
ENV_WORKERS = "RDM_WORKERS"

log = logging.getLogger("rdmlab")


def resolve_workers(flag: int | None) -> int:
    if flag is not None:
        value = flag
    elif os.environ.get(ENV_WORKERS):
        try:
            value = int(os.environ[ENV_WORKERS])
        except ValueError:
            raise ConfigError(f"{ENV_WORKERS} must be an integer") from None
    else:
        value = os.cpu_count() or 1
    if value < 1:
        raise ConfigError("workers must be at least 1")
    return value


def resolve_out_dir(flag: str | None, kind: str) -> Path:
    if flag:
        return Path(flag)
    if os.environ.get(ENV_OUT):
        return Path(os.environ[ENV_OUT])
    return Path("runs") / kind


def execute(cfg: ExperimentConfig, out_dir: Path, workers: int) -> tuple[ExperimentManifest, bool]:
    """Run the experiment and write its files plus the manifest atomically."""
    start = time.perf_counter()
    outcome = run_experiment(cfg, workers)
    out_dir.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name, text in sorted(outcome.files.items()):
        data = text.encode("utf-8")
        atomic_write_text(out_dir / name, text)
        digests[name] = sha256_bytes(data)
    manifest = ExperimentManifest(
        kind=cfg.kind,
        master_seed=cfg.seed,
        config=cfg.to_dict(),
        outputs=digests,
        summary=outcome.summary,
        status="inconclusive" if outcome.inconclusive else "ok",
        code_version=__version__,
        wall_clock_seconds=round(time.perf_counter() - start, 3),
    )
    atomic_write_text(out_dir / MANIFEST_NAME, manifest.to_json())
    return manifest, outcome.inconclusive


@dataclass
class ReplayReport:
    files: dict[str, str] = field(default_factory=dict)
    causes: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def identical(self) -> bool:
        return all(v == "identical" for v in self.files.values())

    def lines(self) -> list[str]:
        out = [f"warning: {w}" for w in self.warnings]
        out += [f"{name}: {status}" for name, status in sorted(self.files.items())]
        out += [f"cause: {c}" for c in self.causes]
        return out


def replay(manifest_path: Path, workers: int = 1) -> ReplayReport:
    """Re-execute a manifest and compare every output with the files beside it."""
    manifest_path = Path(manifest_path)
    try:
        manifest = ExperimentManifest.load(manifest_path)
    except (OSError, ValueError, TypeError) as err:
        raise ConfigError(f"cannot read manifest {manifest_path}: {err}") from None
    run_dir = manifest_path.parent
    missing = [name for name in manifest.outputs if not (run_dir / name).is_file()]
    if missing:
        raise ConfigError(f"manifest references missing files: {', '.join(sorted(missing))}")
    report = ReplayReport()
    if manifest.code_version != __version__:
        report.warnings.append(f"code version {manifest.code_version} differs from running {__version__}")
    cfg = resolve_config(manifest.config)
    outcome = run_experiment(cfg, workers)
    for name in sorted(manifest.outputs):
        fresh = outcome.files.get(name)
        on_disk = (run_dir / name).read_bytes()
        if fresh is None:
            report.files[name] = "divergent (not produced on replay)"
        elif fresh.encode("utf-8") == on_disk:
            report.files[name] = "identical"
        else:
            report.files[name] = "divergent"
    for name in manifest.outputs:
        if sha256_file(run_dir / name) != manifest.outputs[name]:
            report.causes.append(f"{name} was modified after the run (digest mismatch)")
    if not report.identical:
        recorded = run_dir / "config.toml"
        if recorded.is_file():
            try:
                original = parse_config_text(recorded.read_text()).to_dict()
                report.causes.extend(config_differences(original, cfg.to_dict()))
            except ConfigError:
                report.causes.append("recorded config.toml is unreadable")
        if not report.causes:
            report.causes.append("same configuration, different results: code or environment changed")
    return report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdm", description="Random displacement model experiments.")
    parser.add_argument("--version", action="version", version=f"rdmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", type=Path, help="TOML config; defaults apply when omitted")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help=f"output directory (env {ENV_OUT}; default runs/<kind>)")
        p.add_argument("--workers", type=int, help=f"worker processes (env {ENV_WORKERS}; default all CPUs)")
    r = sub.add_parser("replay", help="re-execute a manifest and diff its outputs")
    r.add_argument("manifest", type=Path)
    r.add_argument("--workers", type=int)
    return parser


def _load(args) -> ExperimentConfig:
    if args.seed is not None and args.seed < 0:
        raise ConfigError("seed must be nonnegative")
    if args.config is None:
        return resolve_config({"kind": args.command}, seed=args.seed)
    cfg = load_config(args.config, seed=args.seed)
    if cfg.kind != args.command:
        raise ConfigError(f"config is for {cfg.kind!r}, command is {args.command!r}")
    return cfg


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = _build_parser().parse_args(argv)
    try:
        workers = resolve_workers(args.workers)
        if args.command == "replay":
            report = replay(args.manifest, workers)
            for line in report.lines():
                print(line)
            return EXIT_OK if report.identical else EXIT_DIVERGED
        cfg = _load(args)
        out_dir = resolve_out_dir(args.out, cfg.kind)
        manifest, inconclusive = execute(cfg, out_dir, workers)
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_CONFIG
    except SolverError as err:
        log.error("solver error: %s", err)
        return EXIT_SOLVER
    except InconclusiveError as err:
        log.error("inconclusive: %s", err)
        return EXIT_INCONCLUSIVE
    log.info("wrote %s (%d files)", out_dir / MANIFEST_NAME, len(manifest.outputs))
    if inconclusive:
        log.warning("statistics inconclusive; see summary.json")
        return EXIT_INCONCLUSIVE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
