"""Multi-solver experiments: bootstrap GAMP ensembles compared against AMPR."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ampr import SolverOptions
from .gamp import run_gamp_batch
from .scalar_kernels import DenoiserParams
from .synthetic_data import ProblemInstance, sample_bootstrap_weights

BOOTSTRAP_STREAM = 1


def bootstrap_seed(seed: int, k: int) -> list[int]:
    """Seed of the k-th bootstrap realization, independent of the instance stream."""
    return [seed, BOOTSTRAP_STREAM, k]


@dataclass(frozen=True, eq=False)
class BootstrapEnsemble:
    """Aggregates over K GAMP runs on Poisson-resampled weights.

    ``first_r`` is the unbiased estimate h/qhat of realization 0.
    """

    count: int
    mean_r: np.ndarray
    mean_w: np.ndarray
    mean_w_sq: np.ndarray
    first_r: np.ndarray
    first_qhat: float
    converged: int
    max_iters: int


def _run_chunk(instance, params, mu_b, seed, ks, opts):
    r = np.stack([sample_bootstrap_weights(instance.m, mu_b, bootstrap_seed(seed, k)).ratios
                  for k in ks], axis=1)
    batch = run_gamp_batch(instance, params, r, opts)
    rg = batch.h / batch.qhat
    return (rg.sum(axis=1), batch.w_hat.sum(axis=1), (batch.w_hat ** 2).sum(axis=1),
            rg[:, 0], float(batch.qhat[0]), int(batch.converged.sum()), int(batch.iters.max()))


def bootstrap_ensemble(instance: ProblemInstance, params: DenoiserParams, mu_b: float,
                       count: int, seed: int, opts: SolverOptions = SolverOptions(),
                       batch_size: int = 256, threads: int = 1) -> BootstrapEnsemble:
    """Run GAMP on ``count`` bootstrap realizations and average the outputs.

    Chunks are summed in index order, so the result does not depend on
    ``threads``.
    """
    chunks = [range(s, min(s + batch_size, count)) for s in range(0, count, batch_size)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ks: _run_chunk(instance, params, mu_b, seed, ks, opts),
                                  chunks))
    else:
        parts = [_run_chunk(instance, params, mu_b, seed, ks, opts) for ks in chunks]
    sum_r = np.zeros(instance.n)
    sum_w = np.zeros(instance.n)
    sum_w2 = np.zeros(instance.n)
    for pr, pw, pw2, *_ in parts:
        sum_r += pr
        sum_w += pw
        sum_w2 += pw2
    first = parts[0]
    return BootstrapEnsemble(count, sum_r / count, sum_w / count, sum_w2 / count,
                             first[3], first[4], sum(p[5] for p in parts),
                             max(p[6] for p in parts))
