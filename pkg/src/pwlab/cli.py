"""Command-line front end: ``pwlab {bell,two-time,semi,pointer-sweep,check}``.

Exit codes: 0 success, 1 runtime failure (including an unwritable output
directory), 2 usage or schema error, 3 physically invalid config, 4 a
check or scenario verdict failed.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import KINDS, PhysicsError, SchemaError, default_config, loads

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_PHYSICS, EXIT_CHECK = 0, 1, 2, 3, 4


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _formats(text: str) -> list[str]:
    from .reporting import FORMATS

    fmts = [f.strip() for f in text.split(",") if f.strip()]
    bad = [f for f in fmts if f not in FORMATS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown format(s) {', '.join(bad)}; choose from {', '.join(FORMATS)}")
    return fmts


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _tol(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError("expected NAME=VALUE")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario config (JSON)")
    common.add_argument("--seed", type=_u64, help="override ensemble.seed (u64)")
    common.add_argument("--out", type=Path, default=Path("pwlab-out"), help="output directory")
    common.add_argument("--format", type=_formats, default=["json"], dest="formats",
                        help="comma-separated subset of json,csv,svg (JSON is always written)")
    env_threads = os.environ.get("PWLAB_THREADS", "1")
    common.add_argument("--threads", type=_positive, default=int(env_threads) if env_threads.isdigit() else 1,
                        help="worker threads for sweeps (default: $PWLAB_THREADS or 1)")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = argparse.ArgumentParser(prog="pwlab", description="Pilot-wave interferometry lab.")
    p.add_argument("--version", action="version", version=f"pwlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {"bell": "two-particle interferometer: coincidences and CHSH",
             "two-time": "two-time joint law and signalling witness",
             "semi": "semi-interferometer trajectory ensemble",
             "pointer-sweep": "bounce fraction against pointer speed"}
    for kind in KINDS:
        sub.add_parser(kind, parents=[common], help=helps[kind])
    chk = sub.add_parser("check", parents=[common], help="run the invariant and oracle suite")
    chk.add_argument("--tol", type=_tol, action="append", default=[], metavar="NAME=VALUE",
                     help="override one check's tolerance (repeatable)")
    chk.add_argument("--full", action="store_true", help="include the continuum scenario checks (minutes)")
    chk.add_argument("--list", action="store_true", help="list check names and exit")
    return p


def _load(args, kind):
    if args.config is None:
        cfg = default_config(kind)
    else:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise SchemaError(f"cannot read config: {exc}") from exc
        cfg = loads(text, kind)
    if args.seed is not None:
        cfg.ensemble.seed = args.seed
    return cfg


def _run_scenario(args, log) -> int:
    from . import experiments as ex
    from .reporting import RunManifest, emit_results

    cfg = _load(args, args.command)
    manifest = RunManifest.for_config(cfg)
    log(f"pwlab {args.command}: config {manifest.config_hash[:12]}, seed {cfg.ensemble.seed}")
    if args.command == "bell":
        result = ex.run_bell(cfg)
    elif args.command == "two-time":
        result = ex.run_two_time(cfg)
    elif args.command == "semi":
        result = ex.run_semi(cfg)
    else:
        result = ex.run_pointer_sweep(cfg, threads=args.threads)
    manifest.finish(result.verdicts)
    files = emit_results(args.command, result, args.formats, args.out, manifest)
    for name, ok in sorted(result.verdicts.items()):
        log(f"  {'PASS' if ok else 'FAIL'}  {name}")
    log(f"wrote {len(files)} file(s) to {args.out}")
    return EXIT_OK if manifest.passed else EXIT_CHECK


def _run_check(args, log) -> int:
    from .checks import CHECK_NAMES, CHECKS, run_checks
    from .reporting import RunManifest, dumps

    if args.list:
        for c in CHECKS:
            print(f"{c.name}  {c.op} {c.tol:g}{'  (full)' if c.full else ''}")
        return EXIT_OK
    overrides = dict(args.tol)
    unknown = sorted(set(overrides) - set(CHECK_NAMES))
    if unknown:
        print(f"pwlab check: unknown check name(s): {', '.join(unknown)}", file=sys.stderr)
        return EXIT_USAGE
    spec = json.dumps({"full": args.full, "tol": overrides}, sort_keys=True)
    manifest = RunManifest(hashlib.sha256(spec.encode()).hexdigest(), 0)

    def progress(r):
        log(f"  {'PASS' if r.passed else 'FAIL'}  {r.name}: {r.value:.3g} {r.op} {r.tol:g}  ({r.seconds:.1f}s)")

    results = run_checks(overrides, full=args.full, progress=progress)
    manifest.finish({r.name: r.passed for r in results})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "check.json").write_text(dumps({"checks": results}))
    (out / "manifest.json").write_text(dumps(manifest))
    failed = [r.name for r in results if not r.passed]
    log(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_CHECK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)

    def log(msg):
        if not args.quiet:
            print(msg, file=sys.stderr)

    try:
        if args.command == "check":
            return _run_check(args, log)
        return _run_scenario(args, log)
    except SchemaError as exc:
        print(f"pwlab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PhysicsError as exc:
        print(f"pwlab: invalid physics config: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except OSError as exc:
        print(f"pwlab: cannot write output: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level runtime failure
        print(f"pwlab: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
