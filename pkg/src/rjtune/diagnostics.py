"""Trace statistics, autocorrelation, and replicate error metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .target import ModelPrior, TargetSpec

MIN_IAT_LENGTH = 1000


@dataclass
class RunSummary:
    k_mode_hat: int
    mu_hat: float
    sigma_hat: float
    acceptance: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)


def sample_mode(k: np.ndarray) -> int:
    """Most frequent value; ties go to the smallest."""
    k = np.asarray(k, dtype=np.int64)
    return int(np.bincount(k).argmax())


def summarize(trace, prior: ModelPrior, with_ess: bool = True) -> RunSummary:
    """Sample mode of ``K`` and sample mean / standard deviation (``N - 1``) of ``X_1``."""
    k = np.asarray(trace.k)
    x1 = np.asarray(trace.x1, dtype=float)
    if k.size == 0:
        raise ValueError("cannot summarise an empty trace")
    mode = sample_mode(k)
    if not prior.in_support(mode):
        raise ValueError(f"trace visits k={mode} outside 1..{prior.kmax}")
    sigma = float(x1.std(ddof=1)) if x1.size > 1 else 0.0
    s = RunSummary(mode, float(x1.mean()), sigma)
    if hasattr(trace, "counts"):
        from .rjmcmc import MoveKind
        s.acceptance = {kind.label: trace.acceptance_rate(kind) for kind in MoveKind}
    if with_ess and k.size >= MIN_IAT_LENGTH:
        for name, series in (("k", k), ("x1", x1)):
            try:
                s.ess[name] = k.size / integrated_autocorrelation_time(series)
            except ValueError:
                s.ess[name] = math.nan
    return s


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance at all lags, via FFT."""
    n = x.size
    d = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def empirical_acf(series, max_lag: int) -> np.ndarray:
    """Autocorrelations at lags ``0..max_lag``, normalised by the lag-0 autocovariance."""
    x = np.asarray(series, dtype=float)
    if not 0 <= max_lag < x.size:
        raise ValueError(f"max_lag must lie in 0..{x.size - 1}, got {max_lag}")
    c = _autocov(x)
    if not c[0] > 0:
        raise ValueError("autocorrelation undefined for a constant series")
    return c[: max_lag + 1] / c[0]


def integrated_autocorrelation_time(series) -> float:
    """``1 + 2 sum_s rho(s)``, truncated by Geyer's initial positive sequence.

    Consecutive pairs ``rho(2m) + rho(2m+1)`` are summed while positive.
    """
    x = np.asarray(series, dtype=float)
    if x.size < MIN_IAT_LENGTH:
        raise ValueError(f"need at least {MIN_IAT_LENGTH} values, got {x.size}")
    c = _autocov(x)
    if not c[0] > 0:
        raise ValueError("autocorrelation undefined for a constant series")
    rho = c / c[0]
    pairs = rho[: 2 * (rho.size // 2)].reshape(-1, 2).sum(axis=1)
    neg = np.flatnonzero(pairs <= 0)
    stop = neg[0] if neg.size else pairs.size
    return float(max(-1.0 + 2.0 * pairs[:stop].sum(), 1e-12))


def effective_sample_size(series) -> float:
    x = np.asarray(series)
    return x.size / integrated_autocorrelation_time(x)


def mean_standard_error(series) -> float:
    """Standard error of the mean of a correlated series (IAT-inflated)."""
    x = np.asarray(series, dtype=float)
    if x.size < MIN_IAT_LENGTH:
        return float(x.std(ddof=1) / math.sqrt(x.size))
    if not x.std() > 0:
        return 0.0
    return float(x.std(ddof=1) * math.sqrt(integrated_autocorrelation_time(x) / x.size))


@dataclass(frozen=True)
class Truth:
    """True posterior mode set of ``K`` and mean / sd of each ``X_i``."""

    modes: tuple
    mu: float
    sigma: float

    @classmethod
    def for_target(cls, target: TargetSpec) -> "Truth":
        d = target.density
        if not d.is_normal:
            raise ValueError("truth is only known in closed form for a normal f")
        return cls(tuple(target.prior.modes), d.mu, d.sigma)

    def k_deviation(self, k_hat) -> np.ndarray:
        k_hat = np.asarray(k_hat)
        return np.min([np.abs(k_hat - m) for m in self.modes], axis=0)


@dataclass
class ReplicateEstimates:
    k_hat: np.ndarray
    mu_hat: np.ndarray
    sigma_hat: np.ndarray

    def __post_init__(self) -> None:
        self.k_hat = np.asarray(self.k_hat, dtype=np.int64)
        self.mu_hat = np.asarray(self.mu_hat, dtype=float)
        self.sigma_hat = np.asarray(self.sigma_hat, dtype=float)
        if not (self.k_hat.shape == self.mu_hat.shape == self.sigma_hat.shape):
            raise ValueError("replicate arrays must have equal lengths")

    @classmethod
    def from_summaries(cls, summaries: Sequence[RunSummary]) -> "ReplicateEstimates":
        return cls([s.k_mode_hat for s in summaries], [s.mu_hat for s in summaries],
                   [s.sigma_hat for s in summaries])

    def __len__(self) -> int:
        return self.k_hat.size

    def deviations(self, truth: Truth) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Absolute deviations; ``K`` measured to the nearest mode."""
        return (truth.k_deviation(self.k_hat).astype(float),
                np.abs(self.mu_hat - truth.mu), np.abs(self.sigma_hat - truth.sigma))


@dataclass(frozen=True)
class Mads:
    k: float
    mu: float
    sigma: float


def mad_metrics(estimates: ReplicateEstimates, truth: Truth) -> Mads:
    if len(estimates) < 2:
        raise ValueError("need at least two replicates")
    dk, dm, ds = estimates.deviations(truth)
    return Mads(float(dk.mean()), float(dm.mean()), float(ds.mean()))


def _l1_over_l2(d: np.ndarray) -> Optional[float]:
    n = d.size
    l2 = math.sqrt(float(np.sum(d * d)) / (n - 1))
    if l2 == 0.0:
        return None
    return float(np.sum(d)) / n / l2


def global_measure(estimates: ReplicateEstimates, truth: Truth) -> tuple[float, list]:
    """Standardised MAD combination: ``r_K + (r_mu + r_sigma) / 2``.

    Each ``r`` is the mean absolute deviation over the root of the sum of squared
    deviations divided by ``N - 1``. A block whose deviations are all zero
    contributes 0 and is listed in the returned flags.
    """
    if len(estimates) < 2:
        raise ValueError("need at least two replicates")
    flags = []
    parts = []
    for name, d in zip(("k", "mu", "sigma"), estimates.deviations(truth)):
        r = _l1_over_l2(d)
        if r is None:
            flags.append(f"zero_deviation_{name}")
            r = 0.0
        parts.append(r)
    return parts[0] + 0.5 * (parts[1] + parts[2]), flags
