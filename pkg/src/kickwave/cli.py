"""Command line entry point.

    kickwave <subcommand> --config FILE [--seed N] [--out DIR] [--workers K]
    kickwave verify [--manifest PATH] [--criteria 1,2,...] [--out DIR] [--workers K]

Exit codes: 0 ok, 2 untrusted results (or failed criteria / digest drift),
1 errors. ``KICKWAVE_OUT`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
from pathlib import Path as FsPath

from . import io, manifest, runner
from .config import EXPERIMENTS, ConfigError, from_dict, load_yaml

log = logging.getLogger("kickwave")

EXIT_OK, EXIT_ERROR, EXIT_UNTRUSTED = 0, 1, 2
DEFAULT_OUT = "kickwave-out"


def _criteria(text: str):
    try:
        nums = sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad criteria list {text!r}") from None
    return nums


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kickwave", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENTS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--seed", type=int, help="first seed; keeps the configured seed count")
        p.add_argument("--out", help=f"output directory (default ./{DEFAULT_OUT}/{kind})")
        p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("verify", help="run the acceptance battery, optionally replaying a manifest")
    p.add_argument("--manifest", help="manifest.json (or its directory) to replay and compare")
    p.add_argument("--config", help="accepted for symmetry; ignored")
    p.add_argument("--criteria", type=_criteria, help="comma separated criterion numbers (default all)")
    p.add_argument("--skip-battery", action="store_true", help="only replay the manifest")
    p.add_argument("--seed", type=int, help="unused; the battery has fixed seeds")
    p.add_argument("--out", help=f"output directory (default ./{DEFAULT_OUT}/verify)")
    p.add_argument("--workers", type=int, default=1)
    return ap


def _load_for(kind: str, path: str):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    data, marks = load_yaml(text)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    exp = data.setdefault("experiment", {})
    if not isinstance(exp, dict):
        raise ConfigError("must be a mapping", "experiment", marks.get("experiment"))
    given = exp.setdefault("kind", kind)
    if given != kind:
        raise ConfigError(f"config is for {given!r}, not {kind!r}", "experiment.kind",
                          marks.get("experiment.kind"))
    return from_dict(data, marks)


def _run_experiment(args) -> int:
    cfg = _load_for(args.command, args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = runner.output_dir(args.out or FsPath(DEFAULT_OUT) / args.command)
    man = runner.run(cfg, io.ensure_dir(out), args.workers)
    print(f"{args.command}: {len(man['outputs'])} outputs in {out}; status {man['status']}"
          + (f" ({', '.join(man['flags'])})" if man["flags"] else ""))
    return EXIT_UNTRUSTED if runner.untrusted(man) else EXIT_OK


def _verify(args) -> int:
    from .acceptance import run_battery
    out = io.ensure_dir(runner.output_dir(args.out or FsPath(DEFAULT_OUT) / "verify"))
    code = EXIT_OK
    report = {}
    if args.manifest:
        old = manifest.load(args.manifest)
        with tempfile.TemporaryDirectory(dir=out) as tmp:
            new, diff = runner.replay(old, tmp, args.workers)
        same = manifest.same(old, new)
        print(f"replay: {'identical' if same else 'DIFFERS'}"
              + (f"; differing outputs: {', '.join(diff)}" if diff else ""))
        report["replay"] = {"identical": same, "differing_outputs": diff}
        if not same:
            code = EXIT_UNTRUSTED
    if not args.skip_battery:
        results = run_battery(args.criteria, args.workers, echo=print)
        report["criteria"] = [{"number": r.number, "name": r.name, "passed": r.passed,
                               "details": r.details, "seconds": r.seconds, "limit": r.limit}
                              for r in results]
        failed = [r.number for r in results if not r.passed]
        print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
        if failed:
            code = EXIT_UNTRUSTED
    io.write_json(out / "verify_report.json", report)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse uses 2 for usage errors; 2 is reserved for untrusted results here
        return EXIT_OK if e.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ValueError("--workers must be at least 1")
        if args.command == "verify":
            return _verify(args)
        return _run_experiment(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
    except (OSError, ValueError, RuntimeError, KeyError) as e:
        log.debug("failure", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
