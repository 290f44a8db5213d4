"""Wall-time benchmarks: covariance backends and compiled vs numpy kernels."""

import gc
import time
from dataclasses import dataclass

import numpy as np

from . import _backend
from .belief import Backend, init_belief
from .kalman import filter_step
from .obsmodel import Minibatch, TwoTowerModel


@dataclass(frozen=True)
class Timing:
    label: str
    n: int
    seconds: float
    cov_scalars: int = 0


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _filter_problem(n, m, backend, seed):
    rng = np.random.default_rng(seed)
    belief = init_belief(n, 1.0, backend)
    H = rng.standard_normal((m, n)) / np.sqrt(n)
    r = rng.standard_normal(m)
    return belief, H, r, np.eye(m)


def time_filter_step(n, m=10, backend=Backend.FULL, repeats=5, seed=0):
    belief, H, r, R = _filter_problem(n, m, backend, seed)
    scalars = belief.cov.size

    def run():
        filter_step(belief, H, r, R, q=1e-4)

    run()  # warm-up
    seconds = _median_time(run, repeats)
    gc.collect()
    return Timing(Backend.parse(backend).value, n, seconds, scalars)


def loglog_slope(ns, seconds):
    """Least-squares slope of log(time) against log(n)."""
    return float(np.polyfit(np.log(ns), np.log(seconds), 1)[0])


def bench_backends(ns=(100, 1000, 10000), m=10, repeats=5, full_max_n=None):
    """Per-step time of both backends over ``ns``.

    Full steps above ``full_max_n`` are skipped (an n = 1e4 Full covariance
    alone is 800 MB). Large Full sizes use a single timed repeat.
    """
    rows = []
    for backend in (Backend.DIAGONAL, Backend.FULL):
        for n in ns:
            if backend is Backend.FULL and full_max_n is not None and n > full_max_n:
                continue
            reps = repeats if backend is Backend.DIAGONAL or n <= 2000 else 1
            rows.append(time_filter_step(n, m, backend, reps))
    return rows


def slopes(rows):
    out = {}
    for label in sorted({r.label for r in rows}):
        sel = [r for r in rows if r.label == label]
        if len(sel) >= 2:
            out[label] = loglog_slope([r.n for r in sel], [r.seconds for r in sel])
    return out


def _kernel_cases(seed=0):
    rng = np.random.default_rng(seed)
    model = TwoTowerModel.random(32, 16, 2, rng=rng)
    batch = Minibatch(rng.standard_normal((10, 32)), rng.standard_normal((10, 32)), np.arange(10))
    theta = model.init_theta(rng) + 0.1 * rng.standard_normal(model.n)
    jac_args = (
        batch.image_feats, batch.text_feats, model.frozen_image_proj, model.frozen_text_proj,
        *model.unpack(theta),
    )
    n = 10000
    H = rng.standard_normal((10, n))
    d = rng.uniform(0.5, 2.0, n)
    G = rng.standard_normal((10, n))
    HS = H * d
    big = _filter_problem(100000, 10, Backend.DIAGONAL, seed)
    return {
        "pair_jacobian (m=10, n=192)": lambda: _backend.kernels.pair_jacobian(*jac_args),
        "model output + Jacobian": lambda: model.output_and_jacobian(batch, theta),
        "scaled_gram (m=10, n=1e4)": lambda: _backend.kernels.scaled_gram(H, d),
        "diag_downdate (m=10, n=1e4)": lambda: _backend.kernels.diag_downdate(d, HS, G, 1.0, 1e-12),
        "Diagonal filter_step (n=1e5)": lambda: filter_step(*big, q=1e-4),
    }


def bench_kernels(repeats=50, seed=0):
    """``{case: {"compiled": s, "python": s}}``; compiled is absent if not built."""
    cases = _kernel_cases(seed)
    kinds = ["python"] + (["compiled"] if _backend.HAVE_COMPILED else [])
    results = {name: {} for name in cases}
    for kind in kinds:
        with _backend.use_kernels(kind):
            for name, fn in cases.items():
                fn()
                results[name][kind] = _median_time(fn, repeats)
    return results


def format_report(rows, kernel_results=None):
    lines = ["backend\tn\tms_per_step\tcov_scalars"]
    for r in rows:
        lines.append(f"{r.label}\t{r.n}\t{1e3 * r.seconds:.3f}\t{r.cov_scalars}")
    for label, s in slopes(rows).items():
        lines.append(f"# {label} log-log slope: {s:.3f}")
    if kernel_results:
        lines.append("kernel\tpython_us\tcompiled_us\tspeedup")
        for name, t in kernel_results.items():
            py = t["python"]
            comp = t.get("compiled")
            if comp is None:
                lines.append(f"{name}\t{1e6 * py:.1f}\t-\t-")
            else:
                lines.append(f"{name}\t{1e6 * py:.1f}\t{1e6 * comp:.1f}\t{py / comp:.2f}x")
    return "\n".join(lines)
