"""Experiment manifests: output digests bound to the resolved config and its seeds."""

from __future__ import annotations

import json
import platform
from pathlib import Path as FsPath

from . import __version__
from .io import dumps_json, file_digest

MANIFEST_NAME = "manifest.json"

# keys that legitimately differ between replays and are left out of comparisons
VOLATILE = ("runtime",)


def build(cfg, outputs, flags, out_dir, runtime: dict) -> dict:
    out_dir = FsPath(out_dir)
    digests = {str(FsPath(p).relative_to(out_dir)): file_digest(p) for p in outputs}
    return {
        "schema_version": 1,
        "experiment": cfg.kind,
        "config": cfg.canonical(),
        "config_hash": cfg.hash(),
        "seeds": list(cfg.seeds),
        "code_version": __version__,
        "outputs": dict(sorted(digests.items())),
        "flags": sorted(flags),
        "status": "flagged" if flags else "ok",
        "runtime": {**runtime, "python": platform.python_version()},
    }


def write(manifest: dict, out_dir) -> FsPath:
    path = FsPath(out_dir) / MANIFEST_NAME
    path.write_text(dumps_json(manifest), encoding="utf-8")
    return path


def load(path) -> dict:
    path = FsPath(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def stable_part(manifest: dict) -> dict:
    return {k: v for k, v in manifest.items() if k not in VOLATILE}


def same(a: dict, b: dict) -> bool:
    """Equal up to the volatile runtime block."""
    return stable_part(a) == stable_part(b)


def digest_mismatches(manifest: dict, out_dir) -> list[str]:
    """Output files whose current digest differs from the manifest (or are missing)."""
    out_dir = FsPath(out_dir)
    bad = []
    for name, dig in manifest["outputs"].items():
        p = out_dir / name
        if not p.exists() or file_digest(p) != dig:
            bad.append(name)
    return bad
