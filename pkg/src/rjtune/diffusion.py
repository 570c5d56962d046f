"""Limiting diffusions of the rescaled chain and the efficiency criterion for ``tau``.

In the large-``n`` limit, ``(K - kmax/2) / sqrt(n)`` behaves as an
Ornstein-Uhlenbeck process with rate ``theta1 = (1 - tau) / (A + 1)``, and a
single coordinate as a Langevin diffusion for ``f`` run at speed
``speed2 = 2 tau ell^2 Phi(-ell sqrt(roughness) / 2)``. Time is measured in
units of ``n`` iterations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import signal, stats
from scipy.special import ndtr

from .constants import SPEED_CONSTANT
from .diagnostics import integrated_autocorrelation_time, mean_standard_error
from .errors import NumericalGuardError
from .rjmcmc import MoveConfig, MoveKind, run_chain
from .rng import RngLike, as_generator
from .target import DensitySpec, ModelPrior, TargetSpec
from .tuning import optimal_tau_closed_form

#: below this many support points the lattice of ``K / sqrt(n)`` is flagged as coarse
COARSE_LATTICE = 15

# iterations recorded at a time by the chain-mode marginal check
_CHAIN_CHUNK = 1_000_000


@dataclass(frozen=True)
class DiffusionSpec:
    tau: float
    A: float
    ell: float
    density: DensitySpec

    @classmethod
    def from_config(cls, cfg: MoveConfig, density: DensitySpec) -> "DiffusionSpec":
        return cls(cfg.tau, cfg.A, cfg.ell, density)

    @property
    def theta1(self) -> float:
        return (1.0 - self.tau) / (self.A + 1.0)

    @property
    def speed2(self) -> float:
        u = self.density.roughness()
        return 2.0 * self.tau * self.ell**2 * float(ndtr(-self.ell * math.sqrt(u) / 2.0))

    def __post_init__(self) -> None:
        if not 0 < self.theta1 < 0.5:
            raise ValueError(f"theta1={self.theta1} outside (0, 1/2)")
        if not self.speed2 > 0:
            raise ValueError("speed measure must be positive")


def acf_z1(spec: DiffusionSpec, s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("lag must be non-negative")
    out = np.exp(-spec.theta1 * s)
    return float(out) if out.ndim == 0 else out


def acf_z2_normal(tau: float, ell: float, upsilon: float, sigma: float, s):
    """ACF of the parameter component for ``f = N(mu, sigma^2)``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("lag must be non-negative")
    speed = 2.0 * tau * ell**2 * float(ndtr(-ell * math.sqrt(upsilon) / 2.0))
    out = np.exp(-speed / (2.0 * sigma**2) * s)
    return float(out) if out.ndim == 0 else out


def inefficiency(tau: float, A: float, strict: bool = False) -> float:
    """Integrated sum of both ACFs (normal ``f``, optimal ``ell``).

    Equals ``(A + 1) / (1 - tau) + 1 / (tau c)``. At ``tau`` in ``{0, 1}`` the
    integral diverges: ``inf`` is returned, or ``ValueError`` raised if ``strict``.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if tau in (0.0, 1.0):
        if strict:
            raise ValueError("inefficiency diverges at tau = 0 and tau = 1")
        return math.inf
    return (A + 1.0) / (1.0 - tau) + 1.0 / (tau * SPEED_CONSTANT)


@dataclass
class Figure1Tables:
    inefficiency: list  # rows (A, tau, inefficiency)
    tau_star: list      # rows (A, tau_star)


def figure1_curves(A_list: Sequence[float], tau_grid: Sequence[float],
                   A_range: Optional[Sequence[float]] = None) -> Figure1Tables:
    """Inefficiency against ``tau`` for each ``A``, and the optimal ``tau`` against ``A``."""
    grid = [float(t) for t in tau_grid]
    if not grid or any(not 0.0 < t < 1.0 for t in grid):
        raise ValueError("tau grid must be non-empty and inside the open interval (0, 1)")
    if A_range is None:
        A_range = np.linspace(2.0, 100.0, 197)
    rows = [(float(A), t, inefficiency(t, A)) for A in A_list for t in grid]
    stars = [(float(A), optimal_tau_closed_form(A)) for A in A_range]
    return Figure1Tables(rows, stars)


@dataclass
class DiffusionPath:
    t: np.ndarray
    z1: np.ndarray
    z2: np.ndarray


def _ar1(phi: float, start: float, innovations: np.ndarray) -> np.ndarray:
    """``w[0] = start``, ``w[i+1] = phi w[i] + e[i]``."""
    rest, _ = signal.lfilter([1.0], [1.0, -phi], innovations, zi=[phi * start])
    return np.concatenate([[start], rest])


def simulate_diffusion(spec: DiffusionSpec, horizon: float, dt: float, rng: RngLike = None,
                       exact_z1: bool = True) -> DiffusionPath:
    """Simulate both limiting components from stationarity on a grid of step ``dt``.

    ``Z1`` uses the exact Gaussian transition unless ``exact_z1=False``.
    ``Z2`` is always Euler-Maruyama: ``dZ = (speed2 / 2) (log f)'(Z) dt + sqrt(speed2) dB``.
    """
    if not dt > 0 or not horizon >= dt:
        raise ValueError("need dt > 0 and horizon >= dt")
    th, sp = spec.theta1, spec.speed2
    if dt * th > 0.5:
        raise NumericalGuardError(f"dt*theta1 = {dt * th:.3g} > 0.5; reduce dt")
    f = spec.density
    if f.is_normal and dt * sp / (2.0 * f.sigma**2) > 0.5:
        raise NumericalGuardError("dt too large for the Euler step of the parameter component")
    gen = as_generator(rng)
    steps = int(round(horizon / dt))
    z1_0 = gen.standard_normal()
    z2_0 = float(f.sample(gen, 1)[0])
    e1 = gen.standard_normal(steps)
    e2 = gen.standard_normal(steps)

    if exact_z1:
        phi = math.exp(-th * dt)
        z1 = _ar1(phi, z1_0, math.sqrt(1.0 - phi * phi) * e1)
    else:
        z1 = _ar1(1.0 - th * dt, z1_0, math.sqrt(2.0 * th * dt) * e1)

    noise = math.sqrt(sp * dt) * e2
    if f.is_normal:
        phi2 = 1.0 - sp * dt / (2.0 * f.sigma**2)
        z2 = f.mu + _ar1(phi2, z2_0 - f.mu, noise)
    else:
        z2 = np.empty(steps + 1)
        z2[0] = z2_0
        drift = 0.5 * sp * dt
        for i in range(steps):
            z2[i + 1] = z2[i] + drift * f.d_log_f(z2[i]) + noise[i]
    return DiffusionPath(np.arange(steps + 1) * dt, z1, z2)


# -- finite-n checks of the limits ---------------------------------------------

def lattice_ks_exact(prior: ModelPrior) -> tuple[float, float]:
    """KS distance to N(0, 1) of the exact law of ``(K - kmax/2) / sqrt(n)``.

    Returns ``(raw, jittered)``: the lattice law itself, and the law of
    ``(K - U - kmax/2) / sqrt(n)`` with ``U ~ U(0, 1)`` (piecewise-linear CDF).
    """
    p = prior.pmf()
    h = 1.0 / math.sqrt(prior.n)
    pts = (prior.support - prior.kmax / 2.0) * h
    cdf = np.cumsum(p)
    before = np.concatenate([[0.0], cdf[:-1]])
    phi = ndtr(pts)
    raw = max(np.max(np.abs(cdf - phi)), np.max(np.abs(before - phi)))
    # jittered: linear from `before` at pts - h to `cdf` at pts
    w = np.linspace(0.0, 1.0, 201)
    z = (pts[:, None] - h) + h * w[None, :]
    lin = before[:, None] + (cdf - before)[:, None] * w[None, :]
    jit = np.max(np.abs(lin - ndtr(z)))
    jit = max(jit, ndtr(pts[0] - h), 1.0 - ndtr(pts[-1]))
    return float(raw), float(jit)


@dataclass
class Z1MarginalReport:
    n: int
    kmax: int
    mode: str
    draws: int
    ks_raw: float
    ks_jittered: float
    ks_raw_exact: float
    ks_jittered_exact: float
    ess: float = math.nan
    histogram: list = field(default_factory=list)  # rows (lo, hi, observed, normal)
    flags: list = field(default_factory=list)


def limit_check_z1_marginal(target: TargetSpec, cfg: Optional[MoveConfig], iterations: int,
                            rng: RngLike = None, mode: str = "chain") -> Z1MarginalReport:
    """Compare the marginal of ``(K - kmax/2) / sqrt(n)`` with N(0, 1).

    ``mode="chain"`` runs the sampler from stationarity and keeps ``K`` every
    ``n`` iterations; ``mode="exact"`` draws ``iterations`` values of ``K``
    directly from ``p_n`` (no sampler error). The jittered statistic spreads
    each lattice point uniformly over ``(K - 1, K]`` before comparing.
    """
    gen = as_generator(rng)
    prior = target.prior
    n = prior.n
    if mode == "chain":
        if cfg is None:
            raise ValueError("chain mode needs a MoveConfig")
        # run in chunks (multiples of n) and keep only the thinned model index
        chunk = n * max(1, _CHAIN_CHUNK // n)
        state, parts, done = "from_target", [], 0
        while done < iterations:
            size = min(chunk, iterations - done)
            tr = run_chain(target, cfg, state, size, 0, gen)
            parts.append(tr.k[n - 1::n])
            state, done = tr.final_state, done + size
        k = np.concatenate(parts)
    elif mode == "exact":
        k = prior.sample(gen, iterations)
    else:
        raise ValueError(f"mode must be 'chain' or 'exact', got {mode!r}")
    if k.size < 2:
        raise ValueError(f"only {k.size} draws; increase iterations")
    h = 1.0 / math.sqrt(n)
    z_raw = (k - prior.kmax / 2.0) * h
    z_jit = z_raw - gen.random(k.size) * h
    raw_exact, jit_exact = lattice_ks_exact(prior)
    edges = np.arange(-4.0, 4.01, 0.5)
    counts, _ = np.histogram(z_jit, bins=edges)
    expected = np.diff(ndtr(edges))
    hist = [(float(lo), float(hi), float(c) / k.size, float(e))
            for lo, hi, c, e in zip(edges[:-1], edges[1:], counts, expected)]
    flags = ["lattice_too_coarse"] if prior.kmax < COARSE_LATTICE else []
    ess = float(k.size)
    if mode == "chain":
        try:
            ess = k.size / integrated_autocorrelation_time(k)
        except ValueError:
            ess = math.nan
    return Z1MarginalReport(
        n, prior.kmax, mode, int(k.size),
        float(stats.kstest(z_raw, "norm").statistic),
        float(stats.kstest(z_jit, "norm").statistic),
        raw_exact, jit_exact, ess, hist, flags)


def exact_birth_acceptance(target: TargetSpec, A: float) -> float:
    """Stationary mean of the birth acceptance probability at finite ``n``.

    ``sum_k p(k) E_q[min(1, f(U) p(k+1) / (q(U) p(k) A))]``, with the inner
    expectation by quadrature when ``q != f``.
    """
    from scipy import integrate

    p = target.prior.pmf()
    ratios = np.append(p[1:] / p[:-1], 0.0)
    if target.proposal.same_as_f:
        inner = np.minimum(1.0, ratios / A)
    else:
        f, q = target.density, target.q

        def one(r):
            if r == 0.0:
                return 0.0
            g = lambda u: min(math.exp(q.log_f(u)), math.exp(f.log_f(u)) * r / A)
            return integrate.quad(g, -np.inf, np.inf, epsabs=1e-13, limit=200)[0]

        inner = np.array([one(r) for r in ratios])
    return float(np.dot(p, inner))


@dataclass
class BirthRateReport:
    n: int
    A: float
    births: int
    estimate: float
    se: float
    indicator_rate: float
    limit: float
    finite_n_exact: float

    @property
    def z_score(self) -> float:
        return (self.estimate - self.limit) / self.se if self.se > 0 else math.inf

    @property
    def distance(self) -> float:
        return abs(self.estimate - self.limit)


def limit_check_birth_rate(target: TargetSpec, cfg: MoveConfig, iterations: int,
                           rng: RngLike = None) -> BirthRateReport:
    """Mean birth acceptance probability from a stationary chain, against ``1/A``.

    The estimate averages the acceptance probabilities of all proposed births
    (not the 0/1 outcomes); its standard error accounts for autocorrelation.
    """
    tr = run_chain(target, cfg, "from_target", iterations, 0, rng)
    births = tr.move_kind == MoveKind.BIRTH
    probs = np.exp(np.minimum(tr.log_accept_ratio[births], 0.0))
    if probs.size < 2:
        raise ValueError("too few birth proposals; increase iterations")
    return BirthRateReport(
        target.n, cfg.A, int(probs.size), float(probs.mean()), mean_standard_error(probs),
        float(tr.accepted[births].mean()), 1.0 / cfg.A, exact_birth_acceptance(target, cfg.A))
