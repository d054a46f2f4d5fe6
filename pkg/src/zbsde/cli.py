"""Command-line entry point: ``zbsde CONFIG [options]``.

CONFIG is a path to a TOML run configuration or the name of a bundled one
(``zbsde --list-configs`` prints them). Scientific negatives such as a
violated constraint are findings and exit 0; an experiment that raises makes
the exit status 1, an unusable configuration 2 and an unwritable output
directory 3.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from collections import Counter
from importlib import resources
from pathlib import Path

from . import _backend
from .config import RunConfig, load_config
from .errors import ZBsdeError
from .reporting import versions, write_csv, write_summary, write_svg
from .runner import Runner

__all__ = ["main", "bundled_configs", "resolve_config", "run"]

EXIT_OK, EXIT_EXPERIMENT, EXIT_CONFIG, EXIT_OUTPUT = 0, 1, 2, 3
log = logging.getLogger("zbsde")


def bundled_configs() -> list[str]:
    root = resources.files("zbsde") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def resolve_config(name: str) -> Path:
    """A filesystem path, or the bundled config of that name."""
    p = Path(name)
    if p.exists():
        return p
    stem = name[:-4] if name.endswith(".cfg") else name
    if stem in bundled_configs():
        return Path(str(resources.files("zbsde") / "configs" / f"{stem}.cfg"))
    return p


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zbsde", description=__doc__.split("\n\n")[0])
    ap.add_argument("config", nargs="?", help="config path or bundled config name")
    ap.add_argument("--output-dir", help="override output_dir")
    ap.add_argument("--paths", type=int, help="override mc.n_paths")
    ap.add_argument("--seed", type=int, help="override mc.seed")
    ap.add_argument("--workers", type=int, help="override mc.workers (threads for path generation)")
    ap.add_argument("--no-figures", action="store_true", help="skip SVG output")
    ap.add_argument("--backend", choices=("cython", "python"),
                    help="kernel backend (default: compiled when available)")
    ap.add_argument("--list-configs", action="store_true", help="print bundled config names")
    ap.add_argument("-q", "--quiet", action="store_true", help="only log errors")
    return ap


def _prepare_output(path: Path) -> str | None:
    """Create ``path`` and probe it for writing; returns an error message or None."""
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".zbsde-write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        return f"output directory {path} is not writable: {exc.strerror or exc}"
    return None


def _file_names(outcomes) -> dict:
    counts = Counter(o.name for o in outcomes)
    return {o.index: o.name if counts[o.name] == 1 else f"{o.name}_{o.index}" for o in outcomes}


def run(cfg: RunConfig, out_dir: Path, figures: bool = True, config_path: str | None = None) -> int:
    """Run every experiment, write artifacts into ``out_dir``, return the exit code."""
    err = _prepare_output(out_dir)
    if err:
        log.error(err)
        return EXIT_OUTPUT
    start = time.perf_counter()
    outcomes = Runner(cfg).run()
    names = _file_names(outcomes)
    entries = []
    for o in outcomes:
        files = []
        if o.table:
            files.append(write_csv(out_dir / f"{names[o.index]}.csv", o.table).name)
        if figures and o.figure is not None and o.status == "ok":
            files.append(write_svg(out_dir / f"{names[o.index]}.svg", o.figure).name)
        entries.append({"index": o.index, "name": o.name, "status": o.status,
                        "seconds": o.seconds, "files": files, "result": o.summary,
                        "error": o.error})
    failed = any(o.status != "ok" for o in outcomes)
    write_summary(out_dir / "summary.json", {
        "status": "error" if failed else "ok",
        "config_path": config_path, "config": cfg.model_dump(mode="json"),
        "seed": cfg.mc.seed, "n_paths": cfg.mc.n_paths, "workers": cfg.mc.workers,
        "wall_clock_seconds": time.perf_counter() - start, "versions": versions(),
        "experiments": entries,
    })
    return EXIT_EXPERIMENT if failed else EXIT_OK


def _fail_early(out_dir: Path | None, exc: Exception, config_path) -> int:
    log.error("%s: %s", type(exc).__name__, exc)
    if out_dir is not None and _prepare_output(out_dir) is None:
        write_summary(out_dir / "summary.json", {
            "status": "error", "config_path": config_path, "config": None,
            "error": {"type": type(exc).__name__, "message": str(exc)},
            "versions": versions(), "experiments": []})
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.list_configs:
        print("\n".join(bundled_configs()))
        return EXIT_OK
    if args.config is None:
        _build_parser().error("a config path or bundled config name is required")
    if args.backend:
        _backend.use_backend(args.backend)
    overrides = {}
    if args.paths is not None:
        overrides["mc.n_paths"] = args.paths
    if args.seed is not None:
        overrides["mc.seed"] = args.seed
    if args.workers is not None:
        overrides["mc.workers"] = args.workers
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    path = resolve_config(args.config)
    try:
        cfg = load_config(path, overrides)
    except (ZBsdeError, ValueError) as exc:
        out = Path(args.output_dir) if args.output_dir else None
        return _fail_early(out, exc, str(path))
    return run(cfg, Path(cfg.output_dir), not args.no_figures, str(path))


if __name__ == "__main__":
    sys.exit(main())
