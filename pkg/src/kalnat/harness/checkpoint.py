"""Plain-text optimizer checkpoints.

::

    KALNAT-CKPT v1
    backend=Full n=192 m=10 step=60 q=... alpha=... beta=... epsilon=... rhat_method=... lambda_scope=...
    <mean: n floats>
    <cov: n*n floats (Full) or n floats (Diagonal)>
    <R: m*m floats>

Floats are written with 17 significant digits, which round-trips every
IEEE double exactly.
"""

import os

import numpy as np

from ..belief import Backend, GaussianBelief, ProcessNoise
from ..errors import CheckpointFormatError, InvalidArgumentError
from ..kalman import KalmanOptimizer
from ..robust import LambdaScope, NoiseState, RhatMethod, RobustConfig, parse_enum

MAGIC = "KALNAT-CKPT v1"
_REQUIRED = ("backend", "n", "m", "step")


def _fmt(values):
    return " ".join("%.17g" % v for v in np.asarray(values).ravel())


def save_checkpoint(opt, path):
    b, noise = opt.belief, opt.noise
    header = (
        f"backend={b.backend.value} n={b.n} m={noise.m} step={b.step} "
        f"q={opt.process.q:.17g} alpha={opt.robust.alpha:.17g} beta={noise.beta:.17g} "
        f"epsilon={noise.epsilon:.17g} rhat_method={noise.method.value} "
        f"lambda_scope={opt.robust.lambda_scope.value}"
    )
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(MAGIC + "\n")
        fh.write(header + "\n")
        fh.write(_fmt(b.mean) + "\n")
        fh.write(_fmt(b.cov) + "\n")
        fh.write(_fmt(noise.R) + "\n")


def _parse_header(line):
    fields = {}
    for token in line.split():
        if "=" not in token:
            raise CheckpointFormatError(f"malformed header token {token!r}", field="header")
        key, value = token.split("=", 1)
        fields[key] = value
    for key in _REQUIRED:
        if key not in fields:
            raise CheckpointFormatError(f"header is missing {key!r}", field=key)
    return fields


def _int_field(fields, key):
    try:
        value = int(fields[key])
    except ValueError:
        raise CheckpointFormatError(f"{key} is not an integer: {fields[key]!r}", field=key) from None
    if value < 0:
        raise CheckpointFormatError(f"{key} must be nonnegative", field=key)
    return value


def _floats(line, expected, field):
    try:
        values = np.array([float(tok) for tok in line.split()], dtype=np.float64)
    except ValueError:
        raise CheckpointFormatError(f"{field} contains a non-numeric token", field=field) from None
    if values.size != expected:
        raise CheckpointFormatError(
            f"{field} has {values.size} values, expected {expected}", field=field
        )
    return values


def load_checkpoint(path, expect_backend=None):
    """Read a checkpoint; ``expect_backend`` guards against loading into the wrong run."""
    try:
        with open(path) as fh:
            lines = fh.read().split("\n")
    except UnicodeDecodeError:
        raise CheckpointFormatError("file is not text", field="magic") from None
    if not lines or lines[0] != MAGIC:
        raise CheckpointFormatError(f"bad magic line (expected {MAGIC!r})", field="magic")
    if len(lines) < 6 or lines[5] != "" or any(lines[6:]):
        present = ("header", "mean", "cov", "R")[: max(0, min(len(lines), 5) - 1)]
        missing = [f for f in ("header", "mean", "cov", "R") if f not in present]
        raise CheckpointFormatError(
            f"truncated or malformed checkpoint (missing {', '.join(missing) or 'trailing newline'})",
            field=missing[0] if missing else "R",
        )
    fields = _parse_header(lines[1])
    try:
        backend = Backend.parse(fields["backend"])
    except InvalidArgumentError:
        raise CheckpointFormatError(f"unknown backend {fields['backend']!r}", field="backend") from None
    if expect_backend is not None and Backend.parse(expect_backend) is not backend:
        raise CheckpointFormatError(
            f"backend mismatch: checkpoint holds {backend.value}, run is configured for "
            f"{Backend.parse(expect_backend).value}",
            field="backend",
        )
    n, m, step = (_int_field(fields, k) for k in ("n", "m", "step"))
    if n < 1 or m < 1:
        raise CheckpointFormatError("n and m must be positive", field="n" if n < 1 else "m")
    mean = _floats(lines[2], n, "mean")
    cov_size = n * n if backend is Backend.FULL else n
    cov = _floats(lines[3], cov_size, "cov")
    R = _floats(lines[4], m * m, "R").reshape(m, m)
    if backend is Backend.FULL:
        cov = cov.reshape(n, n)

    try:
        hyper = {
            "q": float(fields.get("q", 0.0)),
            "alpha": float(fields.get("alpha", 0.0)),
            "beta": float(fields.get("beta", 0.98)),
            "epsilon": float(fields.get("epsilon", 1e-3)),
        }
        method = parse_enum(RhatMethod, fields.get("rhat_method", RhatMethod.FIRST_ORDER.value))
        scope = parse_enum(LambdaScope, fields.get("lambda_scope", LambdaScope.ALG1.value))
        return KalmanOptimizer(
            GaussianBelief(mean, cov, backend, step),
            NoiseState(R, hyper["beta"], hyper["epsilon"], method),
            ProcessNoise(hyper["q"]),
            RobustConfig(hyper["alpha"], scope),
        )
    except (ValueError, InvalidArgumentError) as exc:
        raise CheckpointFormatError(f"invalid checkpoint contents: {exc}", field="header") from None
