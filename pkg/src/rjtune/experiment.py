"""Replicated sampler runs over a grid of (A, tau): MADs and the global measure."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .diagnostics import (Mads, ReplicateEstimates, Truth, global_measure, mad_metrics,
                          sample_mode)
from .errors import BudgetExceededError
from .rjmcmc import MoveConfig, run_chain
from .rng import RngHandle, stream_index
from .target import TargetSpec, kmax_for

# rough per-iteration cost of the compiled kernel, seconds
_COST_FIXED = 1.5e-7
_COST_PER_COORD = 1.5e-8

CSV_HEADER = ("A", "tau", "MAD_k", "MAD_mu", "MAD_sigma", "global_measure")


@dataclass
class CellResult:
    A: float
    tau: float
    estimates: ReplicateEstimates
    mads: Mads
    global_measure: float
    flags: list = field(default_factory=list)


@dataclass
class ExperimentResult:
    n: int
    mu: float
    sigma: float
    A_list: list
    tau_grid: list
    replicates: int
    iterations: int
    burn_in: int
    seed: int
    cells: list

    def rows(self) -> list:
        return [(c.A, c.tau, c.mads.k, c.mads.mu, c.mads.sigma, c.global_measure)
                for c in self.cells]

    def cell(self, A: float, tau: float) -> CellResult:
        for c in self.cells:
            if c.A == A and c.tau == tau:
                return c
        raise KeyError((A, tau))

    def curve(self, A: float, column: str) -> np.ndarray:
        """Values of one CSV column along the tau grid for a given ``A``."""
        j = CSV_HEADER.index(column)
        return np.array([r[j] for r in self.rows() if r[0] == A])

    def metadata(self) -> dict:
        return {
            "package_version": __version__,
            "numpy_version": np.__version__,
            "config": {
                "n": self.n, "mu": self.mu, "sigma": self.sigma, "A_list": self.A_list,
                "tau_grid": self.tau_grid, "replicates": self.replicates,
                "iterations": self.iterations, "burn_in": self.burn_in,
                "ell": 2.38 * self.sigma, "proposal": "same_as_f",
            },
            "seed": self.seed,
            "stream_layout": "stream = (A_index * len(tau_grid) + tau_index) * replicates + replicate",
            "flags": {f"{c.A}/{c.tau}": c.flags for c in self.cells if c.flags},
        }


def estimate_cost(n: int, A_list, tau_grid, replicates: int, iterations: int,
                  workers: int = 1) -> float:
    """Rough wall-clock estimate in seconds."""
    dim = n + kmax_for(n) / 2.0
    per_iter = sum(_COST_FIXED + _COST_PER_COORD * t * dim for t in tau_grid) * len(A_list)
    return per_iter * replicates * iterations / max(workers, 1)


def _cell_task(args) -> tuple:
    n, mu, sigma, A, tau, reps, iterations, burn_in, seed, first_stream, init = args
    target = TargetSpec.build(n, mu, sigma, astar=A / 2.0)
    cfg = MoveConfig(tau, A, 2.38 * sigma)
    k_hat = np.empty(len(reps), np.int64)
    mu_hat = np.empty(len(reps))
    sd_hat = np.empty(len(reps))
    for j, r in enumerate(reps):
        tr = run_chain(target, cfg, init, iterations, burn_in, RngHandle(seed, first_stream + r))
        k_hat[j] = sample_mode(tr.k)
        mu_hat[j] = tr.x1.mean()
        sd_hat[j] = tr.x1.std(ddof=1) if tr.x1.size > 1 else 0.0
    return k_hat, mu_hat, sd_hat


def run_experiment(n: int = 20, mu: float = 0.0, sigma: float = 1.0,
                   A_list: Sequence[float] = (2.0, 5.0, 25.0),
                   tau_grid: Sequence[float] = tuple(np.round(np.arange(0.1, 0.95, 0.1), 10)),
                   replicates: int = 100, iterations: int = 20_000, burn_in: int = 0,
                   seed: int = 0, workers: int = 1, budget_seconds: Optional[float] = None,
                   override_budget: bool = False, init: str = "from_target") -> ExperimentResult:
    """For each ``(A, tau)`` run ``replicates`` independent chains with ``q = f`` and
    ``ell = 2.38 sigma``, and reduce them to MADs and the global measure.

    Chain ``r`` of cell ``(i, j)`` uses stream ``(i * len(tau_grid) + j) * replicates + r``
    of ``seed``, so results do not depend on ``workers``.
    """
    A_list = [float(a) for a in A_list]
    tau_grid = [float(t) for t in tau_grid]
    if not A_list or not tau_grid:
        raise ValueError("A_list and tau_grid must be non-empty")
    if replicates < 2:
        raise ValueError("need at least two replicates")
    if budget_seconds is not None and not override_budget:
        est = estimate_cost(n, A_list, tau_grid, replicates, iterations, workers)
        if est > budget_seconds:
            raise BudgetExceededError(
                f"estimated {est:.0f}s exceeds the budget of {budget_seconds:.0f}s; "
                f"raise the budget or override it")
    sizes = (len(A_list), len(tau_grid), replicates)
    # split each cell into a few chunks so workers stay busy
    chunks = max(1, min(replicates, 4 * max(workers, 1) // max(len(A_list) * len(tau_grid), 1)))
    bounds = np.linspace(0, replicates, chunks + 1).astype(int)
    tasks = []
    for i, A in enumerate(A_list):
        for j, tau in enumerate(tau_grid):
            base = stream_index(i, j, 0, sizes=sizes)
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                tasks.append((n, mu, sigma, A, tau, range(lo, hi), iterations, burn_in,
                              seed, base, init))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_cell_task, tasks))
    else:
        parts = [_cell_task(t) for t in tasks]

    truth = Truth(TargetSpec.build(n, mu, sigma).prior.modes, mu, sigma)
    cells = []
    for c in range(len(A_list) * len(tau_grid)):
        block = parts[c * chunks:(c + 1) * chunks]
        est = ReplicateEstimates(*(np.concatenate([b[m] for b in block]) for m in range(3)))
        gm, flags = global_measure(est, truth)
        A, tau = A_list[c // len(tau_grid)], tau_grid[c % len(tau_grid)]
        cells.append(CellResult(A, tau, est, mad_metrics(est, truth), gm, flags))
    return ExperimentResult(n, mu, sigma, A_list, tau_grid, replicates, iterations, burn_in,
                            seed, cells)


def smooth3(values: Sequence[float]) -> np.ndarray:
    """Centred 3-point moving average; the end points average their two neighbours' window."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    for i in range(v.size):
        out[i] = v[max(i - 1, 0):i + 2].mean()
    return out


def smoothed_argmin(taus: Sequence[float], values: Sequence[float]) -> float:
    return float(np.asarray(taus)[int(np.argmin(smooth3(values)))])


def default_workers() -> int:
    return os.cpu_count() or 1

