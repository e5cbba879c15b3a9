"""Gauss-Bernoulli measurement instances and Poisson bootstrap weights."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class SignalPrior:
    """Each signal coordinate is N(0, 1) with probability ``rho``, else 0."""

    rho: float
    nonzero_variance: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise InvalidArgument(f"rho must lie in (0, 1), got {self.rho}")
        if self.nonzero_variance != 1.0:
            raise InvalidArgument("nonzero_variance is fixed at 1")

    @property
    def second_moment(self) -> float:
        return self.rho * self.nonzero_variance


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    x_matrix: np.ndarray
    y: np.ndarray
    w0: np.ndarray
    delta: float

    @property
    def m(self) -> int:
        return self.x_matrix.shape[0]

    @property
    def n(self) -> int:
        return self.x_matrix.shape[1]

    @property
    def alpha(self) -> float:
        return self.m / self.n


@dataclass(frozen=True, eq=False)
class BootstrapWeights:
    c: np.ndarray
    mu_b: float

    @property
    def ratios(self) -> np.ndarray:
        """Per-sample data weights c / mu_b."""
        return self.c / self.mu_b


def sample_instance(n: int, alpha: float, delta: float, prior: SignalPrior,
                    seed: int) -> ProblemInstance:
    """Draw ``y = X w0 + eps`` with X entries of variance 1/n.

    Draw order (X, then w0 support, w0 values, then noise) is part of the
    reproducibility contract.
    """
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    if not alpha > 0.0:
        raise InvalidArgument(f"alpha must be > 0, got {alpha}")
    if not delta >= 0.0:
        raise InvalidArgument(f"delta must be >= 0, got {delta}")
    m = int(round(alpha * n))
    if m == 0:
        raise InvalidArgument(f"round(alpha * n) = 0 for alpha={alpha}, n={n}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, n)) / math.sqrt(n)
    support = rng.random(n) < prior.rho
    w0 = np.where(support, rng.standard_normal(n), 0.0)
    y = x @ w0
    if delta > 0.0:
        y = y + math.sqrt(delta) * rng.standard_normal(m)
    return ProblemInstance(x, y, w0, float(delta))


def sample_bootstrap_weights(m: int, mu_b: float, seed) -> BootstrapWeights:
    if m < 1:
        raise InvalidArgument(f"m must be >= 1, got {m}")
    if not (mu_b > 0.0 and math.isfinite(mu_b)):
        raise InvalidArgument(f"mu_b must be finite and > 0, got {mu_b}")
    rng = np.random.default_rng(seed)
    return BootstrapWeights(rng.poisson(mu_b, size=m), float(mu_b))


# Instance bundle: a directory holding meta.json plus raw little-endian
# float64 files x.f64 (M*N, row-major), y.f64 (M) and w0.f64 (N).

def save_instance(instance: ProblemInstance, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {"schema_version": 1, "m": instance.m, "n": instance.n,
            "delta": instance.delta, "dtype": "<f8", "x_order": "row-major"}
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for name, arr in (("x", instance.x_matrix), ("y", instance.y), ("w0", instance.w0)):
        np.ascontiguousarray(arr, dtype="<f8").tofile(path / f"{name}.f64")
    return path


def load_instance(path) -> ProblemInstance:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    m, n = meta["m"], meta["n"]
    x = np.fromfile(path / "x.f64", dtype="<f8").reshape(m, n)
    y = np.fromfile(path / "y.f64", dtype="<f8")
    w0 = np.fromfile(path / "w0.f64", dtype="<f8")
    if y.size != m or w0.size != n:
        raise InvalidArgument(f"bundle at {path} has inconsistent sizes")
    return ProblemInstance(x, y, w0, float(meta["delta"]))
