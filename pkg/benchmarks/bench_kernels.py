"""Time the compiled kernels against the pure-Python fallback.

Each case runs the same public entry point under both backends, checks the
outputs are bit-identical, and reports the median wall time.

    python benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from forestagb import _kernels
from forestagb.grid import GeoRef, Polygon, coverage_weights
from forestagb.learners import GbmParams, RfParams, SvrParams, fit_gbm, fit_rf, fit_svr
from forestagb.reference import TrainingTable


def _table(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = 100 + 30 * X[:, 0] - 20 * X[:, 1] * X[:, 2] + rng.normal(0, 5, n)
    return TrainingTable.from_arrays(X, y)


def case_rf(quick):
    t = _table(300 if quick else 1000, 10)
    m = fit_rf(t, RfParams(num_trees=10 if quick else 50, seed=1))
    return m.predict_array(t.X)


def case_gbm(quick):
    t = _table(500 if quick else 2000, 10)
    m = fit_gbm(t, GbmParams(num_rounds=20 if quick else 100, seed=1))
    return m.predict_array(t.X)


def case_svr(quick):
    t = _table(150 if quick else 600, 6)
    m = fit_svr(t, SvrParams(c=10.0, sigma=0.2))
    return m.predict_array(t.X)


def case_coverage(quick):
    ref = GeoRef(400, 400, 0.0, 0.0, 30.0)
    out = []
    for k in range(5 if quick else 40):
        poly = Polygon.regular(2000.0 + 191.7 * k, 3000.0 + 77.3 * k, 700.0, 64)
        w = coverage_weights(poly, ref)
        out.append(w.fractions)
    return np.concatenate([o.ravel() for o in out])


CASES = {"rf_fit_predict": case_rf, "gbm_fit_predict": case_gbm,
         "svr_smo": case_svr, "coverage_clip": case_coverage}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="small problem sizes")
    args = ap.parse_args(argv)

    backends = list(_kernels.available())
    if "cython" not in backends:
        print("compiled kernels not built; timing the Python fallback only", file=sys.stderr)
    print(f"{'case':18s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}  identical")
    ok = True
    for name, fn in CASES.items():
        times, outs = {}, {}
        for b in backends:
            _kernels.use(b)
            ts = []
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                outs[b] = fn(args.quick)
                ts.append(time.perf_counter() - t0)
            times[b] = statistics.median(ts)
        same = all(np.array_equal(outs[backends[0]], outs[b]) for b in backends)
        ok &= same
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:18s}" + "".join(f"{times[b]:11.3f}s" for b in backends) + f"{speed:9.1f}x  {same}")
    _kernels.use(backends[-1])
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
