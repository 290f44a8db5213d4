"""Training runs, metrics output and parameter sweeps."""

import csv
import io
import itertools
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, SingularMatrixError
from ..kalman import KalmanOptimizer, StepReport, step
from ..obsmodel import batch_loss, clip_loss_gradient, target_output
from .checkpoint import load_checkpoint, save_checkpoint
from .config import format_config
from .data import (
    STREAM_CORRUPT,
    STREAM_EPOCH,
    STREAM_OOD_POSITIONS,
    STREAM_THETA,
    corrupt_batch,
    gen_synthetic_pairs,
    retrieval_accuracy,
    stream,
)

log = logging.getLogger(__name__)

CSV_HEADER = ["step", "loss", "residual_norm", "d_M", "lambda", "r_trace", "step_norm", "ood_flag"]
DIVERGENCE_NORM = 1e6


def sgd_baseline_step(theta, model, batch, lr):
    """theta - lr * grad of the contrastive loss on ``batch``. lr = 0 returns a copy of theta."""
    if not (math.isfinite(lr) and lr >= 0):
        raise InvalidArgumentError(f"learning rate must be >= 0, got {lr}")
    if lr == 0:
        return np.array(theta, dtype=np.float64)
    return np.asarray(theta) - lr * clip_loss_gradient(model, batch, theta)


def batch_schedule(config, n_train):
    """Deterministic list of (index array, is_ood) for every step of the run.

    Each epoch is a seeded permutation cut into full batches (the partial
    tail is dropped). OOD batches are placed at exactly
    round(ood_fraction * total) seeded positions.
    """
    m = config.batch_size
    per_epoch = n_train // m
    schedule = []
    for epoch in range(config.epochs):
        perm = stream(config.seed, STREAM_EPOCH, epoch).permutation(n_train)
        schedule.extend(perm[b * m:(b + 1) * m] for b in range(per_epoch))
    total = len(schedule)
    n_ood = int(round(config.ood_fraction * total))
    ood = np.zeros(total, dtype=bool)
    if n_ood:
        ood[stream(config.seed, STREAM_OOD_POSITIONS).choice(total, n_ood, replace=False)] = True
    return list(zip(schedule, ood))


def make_batch(config, dataset, idx, is_ood, k):
    batch = dataset.train.batch(idx)
    if is_ood:
        seed = np.random.SeedSequence([config.seed, STREAM_CORRUPT, k])
        batch = corrupt_batch(batch, config.ood_severity, config.ood_mode, seed)
    return batch


def make_optimizer(config, theta0):
    return KalmanOptimizer.create(
        theta0,
        config.batch_size,
        sigma0=config.sigma0,
        backend=config.backend,
        q=config.q,
        alpha=config.alpha,
        beta=config.beta,
        epsilon=config.epsilon,
        rhat_method=config.rhat_method,
        lambda_scope=config.lambda_scope,
    )


@dataclass
class RunResult:
    config: object
    reports: list
    final_accuracy: float
    initial_accuracy: float
    steps: int
    diverged: bool
    wall_ms: float
    optimizer: object = None
    theta: np.ndarray = None
    accuracy_trace: list = field(default_factory=list)

    def steps_to_accuracy(self, threshold):
        """First step (1-based) whose post-step accuracy reaches ``threshold``, else None."""
        for k, acc in self.accuracy_trace:
            if acc >= threshold:
                return k
        return None


def _sgd_report(k, model, batch, theta_before, theta_after):
    r = target_output(batch.m) - model.output(batch, theta_before)
    nan = float("nan")
    return StepReport(
        step=k,
        loss=batch_loss(model, batch, theta_before),
        residual_norm=float(np.linalg.norm(r)),
        d_M=nan,
        lam=nan,
        r_trace=nan,
        step_norm=float(np.linalg.norm(theta_after - theta_before)),
        ood_fraction=batch.ood_fraction,
    )


def run_experiment(
    config,
    out_dir=None,
    *,
    resume=None,
    max_steps=None,
    checkpoint_path=None,
    eval_every=0,
):
    """Train per ``config`` and optionally write ``metrics.csv`` / ``summary.txt``.

    ``resume`` names a checkpoint; the run continues from its step counter
    on the same deterministic schedule. ``max_steps`` stops early (the
    run counts as complete, not diverged). ``eval_every`` > 0 records test
    accuracy every that many steps in ``accuracy_trace``.
    """
    start = time.perf_counter()
    dataset = gen_synthetic_pairs(config)
    model = dataset.model(config.rank, config.tau)
    theta0 = model.init_theta(stream(config.seed, STREAM_THETA))
    schedule = batch_schedule(config, len(dataset.train))

    opt, theta, first = None, theta0, 0
    if config.optimizer == "Kalman":
        if resume is not None:
            opt = load_checkpoint(resume, expect_backend=config.backend)
            if opt.n != model.n or opt.m != config.batch_size:
                raise InvalidArgumentError(
                    f"checkpoint dimensions n={opt.n}, m={opt.m} do not match the configured run"
                )
            first = opt.belief.step
        else:
            opt = make_optimizer(config, theta0)
        theta = opt.mean
    elif resume is not None:
        raise InvalidArgumentError("only Kalman runs can be resumed from a checkpoint")

    initial_accuracy = retrieval_accuracy(model, theta0, dataset.test)
    last = len(schedule) if max_steps is None else min(len(schedule), first + max_steps)
    reports, trace, diverged = [], [], False
    for k in range(first, last):
        idx, is_ood = schedule[k]
        batch = make_batch(config, dataset, idx, is_ood, k)
        try:
            if opt is not None:
                new_opt, report = step(opt, model, batch)
                new_theta = new_opt.mean
            else:
                new_theta = sgd_baseline_step(theta, model, batch, config.lr)
                report = _sgd_report(k + 1, model, batch, theta, new_theta)
                new_opt = None
        except (SingularMatrixError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("step %d aborted: %s", k + 1, exc)
            diverged = True
            break
        reports.append(report)
        if not math.isfinite(report.loss) or not np.all(np.isfinite(new_theta)) or (
            np.linalg.norm(new_theta) > DIVERGENCE_NORM
        ):
            diverged = True
            break
        opt, theta = new_opt, new_theta
        if eval_every and (k + 1) % eval_every == 0:
            trace.append((k + 1, retrieval_accuracy(model, theta, dataset.test)))

    final_accuracy = float("nan") if diverged else retrieval_accuracy(model, theta, dataset.test)
    result = RunResult(
        config=config,
        reports=reports,
        final_accuracy=final_accuracy,
        initial_accuracy=initial_accuracy,
        steps=len(reports),
        diverged=diverged,
        wall_ms=(time.perf_counter() - start) * 1e3,
        optimizer=opt,
        theta=theta,
        accuracy_trace=trace,
    )
    if out_dir is not None:
        write_outputs(result, out_dir)
    if checkpoint_path is not None and opt is not None and not diverged:
        save_checkpoint(opt, checkpoint_path)
    return result


def _cell(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def metrics_csv(reports):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in reports:
        writer.writerow([
            r.step, _cell(r.loss), _cell(r.residual_norm), _cell(r.d_M), _cell(r.lam),
            _cell(r.r_trace), _cell(r.step_norm), r.ood_flag,
        ])
    return buf.getvalue()


def write_outputs(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "metrics.csv")
    try:
        with open(csv_path, "w", newline="") as fh:
            fh.write(metrics_csv(result.reports))
        with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
            fh.write("# accuracy: nearest-text retrieval (cosine) on the held-out synthetic split\n")
            fh.write(format_config(result.config))
            fh.write(f"initial_accuracy = {result.initial_accuracy!r}\n")
            fh.write(f"final_accuracy = {result.final_accuracy!r}\n")
            fh.write(f"steps = {result.steps}\n")
            fh.write(f"diverged = {str(result.diverged).lower()}\n")
            fh.write(f"wall_ms = {result.wall_ms:.1f}\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {out_dir}: {exc}") from exc


def run_seeds(config, seeds, **kwargs):
    return [run_experiment(config.with_overrides(seed=s), **kwargs) for s in seeds]


def median_accuracy(results):
    """Median final accuracy; diverged runs count as 0."""
    return float(np.median([0.0 if r.diverged else r.final_accuracy for r in results]))


@dataclass
class SweepCell:
    params: dict
    results: list

    @property
    def median(self):
        return median_accuracy(self.results)

    @property
    def diverged(self):
        return sum(r.diverged for r in self.results)

    @property
    def accuracies(self):
        return [r.final_accuracy for r in self.results]


def sweep(base, grid, seeds=(0, 1, 2, 3, 4)):
    """Cross product over ``grid`` ({key: [values]}), each cell over ``seeds``."""
    keys = list(grid)
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, values))
        cfg = base.with_overrides(**params)
        cells.append(SweepCell(params, run_seeds(cfg, seeds)))
        log.info("sweep cell %s -> median %.4f", params, cells[-1].median)
    return cells


def sweep_table(cells, row_key, col_key=None):
    """Text grid of median accuracies: one row per ``row_key`` value, one column per ``col_key`` value."""
    rows = sorted({c.params[row_key] for c in cells})
    cols = sorted({c.params[col_key] for c in cells}) if col_key else [None]
    lookup = {(c.params[row_key], c.params.get(col_key) if col_key else None): c for c in cells}
    header = [row_key] + ([f"{col_key}={v}" for v in cols] if col_key else ["accuracy"])
    lines = ["\t".join(header)]
    for rv in rows:
        out = [str(rv)]
        for cv in cols:
            cell = lookup.get((rv, cv))
            if cell is None:
                out.append("-")
            elif cell.diverged > len(cell.results) // 2:
                out.append("Diverge")
            else:
                out.append(f"{100 * cell.median:.2f}")
        lines.append("\t".join(out))
    return "\n".join(lines)


def sweep_csv(cells):
    keys = list(cells[0].params) if cells else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(keys + ["median_accuracy", "diverged", "accuracies"])
    for c in cells:
        writer.writerow(
            [c.params[k] for k in keys]
            + [repr(c.median), c.diverged, " ".join(repr(a) for a in c.accuracies)]
        )
    return buf.getvalue()
