"""Compare the compiled and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times each kernel on both backends, checks the outputs agree bit for bit, and
ends with a full ``evolve`` step loop under each backend (run in a subprocess,
since the backend is fixed at import time).
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from kickwave import kernels


def _inputs(rng):
    n = 1 << 16
    V = rng.normal(size=n).cumsum() * 0.05 + 0.5 * (np.arange(n) * 2.0**-6 - 512) ** 2 * 0.01
    ctr = rng.integers(0, 2**32, size=(4, 1 << 18), dtype=np.uint32)
    key = rng.integers(0, 2**32, size=(2, 1 << 18), dtype=np.uint32)
    xs = np.arange(n) * 2.0**-6 - 512.0
    m = 2000
    eta = rng.uniform(-512, 512, m)
    xi = rng.uniform(0, 1, m)
    kappa = rng.uniform(0, 1, m)
    return {
        "lower_envelope (N=65536)": lambda b: kernels.lower_envelope(V, 2.0**-6, backend=b),
        "philox4x32 (262144 blocks)": lambda b: kernels.philox4x32(*ctr, *key, backend=b),
        "splat_bumps (2000 bumps, order 2)": lambda b: kernels.splat_bumps(xs, 2.0**-6, eta, xi, kappa, 2,
                                                                         backend=b),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if a is None:
        return b is None
    return np.array_equal(a, b)


_EVOLVE = """
import time
from kickwave.environment import Environment, EnvironmentConfig
from kickwave.hopf_lax import EvolveParams, linear_profile, evolve
from kickwave.minimizers import DomainPolicy
env = Environment(EnvironmentConfig(master_seed=3))
W0 = linear_profile(DomainPolicy().grid(0.0, 64), -64, 0.0)
t = time.perf_counter()
evolve(env, W0, 0, EvolveParams(p=1.0))
print(time.perf_counter() - t)
"""


def _evolve_time(backend):
    env = dict(os.environ, KICKWAVE_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", _EVOLVE], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)
    if kernels.BACKEND != "compiled":
        sys.exit("compiled backend not built; run pip install -e . first")
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in _inputs(rng).items():
        same = _same(fn("compiled"), fn("pure"))
        t = {b: min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in ("compiled", "pure")}
        rows.append({"kernel": name, "compiled_s": t["compiled"], "pure_s": t["pure"],
                     "speedup": t["pure"] / t["compiled"], "identical": bool(same)})
    t = {b: _evolve_time(b) for b in ("compiled", "pure")}
    rows.append({"kernel": "evolve 64 steps (N=33793)", "compiled_s": t["compiled"], "pure_s": t["pure"],
                 "speedup": t["pure"] / t["compiled"], "identical": None})
    w = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{w}}  {'compiled':>10}  {'pure':>10}  {'speedup':>8}  identical")
    for r in rows:
        print(f"{r['kernel']:<{w}}  {r['compiled_s']:10.4f}  {r['pure_s']:10.4f}  {r['speedup']:7.1f}x  "
              f"{'-' if r['identical'] is None else r['identical']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
