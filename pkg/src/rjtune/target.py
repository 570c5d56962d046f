"""Product-form target distributions over a nested family of models.

The joint density of ``(K, X^K)`` is ``p_n(k) * prod_{i=1}^{n+k} f(x_i)``, where
``p_n`` is a symmetric, unimodal (or bimodal) PMF on ``{1, ..., kmax}`` with
``kmax = floor(sqrt(n) * log(n))``. Everything is kept in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import numpy as np
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)

NORMAL = "normal"
CUSTOM = "custom"


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("density evaluated at a non-finite point")


@dataclass(frozen=True)
class DensitySpec:
    """One-dimensional, strictly positive density ``f``.

    Use :meth:`normal` or :meth:`custom` rather than the raw constructor.
    Custom densities supply vectorised callables and their roughness
    ``E[((log f)'(X))^2]``; the roughness is not derivable in general.
    """

    family: str
    mu: float = 0.0
    sigma: float = 1.0
    log_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    d_log_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    upsilon: Optional[float] = None

    def __post_init__(self) -> None:
        if self.family == NORMAL:
            if not (self.sigma > 0 and math.isfinite(self.sigma)):
                raise ValueError(f"normal density needs sigma > 0, got {self.sigma}")
            if not math.isfinite(self.mu):
                raise ValueError(f"normal density needs a finite mu, got {self.mu}")
        elif self.family == CUSTOM:
            if self.log_density is None or self.d_log_density is None or self.sampler is None:
                raise ValueError("custom density needs log_density, d_log_density and sampler")
            if self.upsilon is not None and not self.upsilon > 0:
                raise ValueError(f"roughness must be positive, got {self.upsilon}")
        else:
            raise ValueError(f"unknown density family {self.family!r}")

    @classmethod
    def normal(cls, mu: float = 0.0, sigma: float = 1.0) -> "DensitySpec":
        return cls(NORMAL, float(mu), float(sigma))

    @classmethod
    def custom(
        cls,
        log_density: Callable[[np.ndarray], np.ndarray],
        d_log_density: Callable[[np.ndarray], np.ndarray],
        sampler: Callable[[np.random.Generator, int], np.ndarray],
        upsilon: Optional[float] = None,
    ) -> "DensitySpec":
        return cls(CUSTOM, log_density=log_density, d_log_density=d_log_density,
                   sampler=sampler, upsilon=upsilon)

    @property
    def is_normal(self) -> bool:
        return self.family == NORMAL

    def log_f(self, x):
        """Log-density, elementwise. Rejects non-finite input."""
        arr = np.asarray(x, dtype=float)
        _check_finite(arr)
        if self.is_normal:
            z = (arr - self.mu) / self.sigma
            out = -0.5 * LOG_2PI - math.log(self.sigma) - 0.5 * z * z
        else:
            out = np.asarray(self.log_density(arr), dtype=float)
        return float(out) if out.ndim == 0 else out

    def d_log_f(self, x):
        """Derivative of the log-density, elementwise."""
        arr = np.asarray(x, dtype=float)
        _check_finite(arr)
        if self.is_normal:
            out = -(arr - self.mu) / self.sigma**2
        else:
            out = np.asarray(self.d_log_density(arr), dtype=float)
        return float(out) if out.ndim == 0 else out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.is_normal:
            return self.mu + self.sigma * rng.standard_normal(size)
        return np.asarray(self.sampler(rng, size), dtype=float)

    def roughness(self) -> float:
        """``E[((log f)'(X))^2]``: ``1/sigma^2`` for a normal, supplied otherwise."""
        if self.is_normal:
            return 1.0 / self.sigma**2
        if self.upsilon is None:
            raise ValueError("custom density has no roughness; supply upsilon "
                             "or use estimate_roughness()")
        return float(self.upsilon)

    def to_dict(self) -> dict:
        if not self.is_normal:
            raise ValueError("custom densities cannot be serialised")
        return {"family": NORMAL, "mu": self.mu, "sigma": self.sigma}


def estimate_roughness(density: DensitySpec, rng: np.random.Generator,
                       draws: int = 1_000_000) -> tuple[float, float]:
    """Monte Carlo estimate of the roughness and its standard error."""
    x = density.sample(rng, draws)
    g2 = np.square(density.d_log_f(x))
    return float(g2.mean()), float(g2.std(ddof=1) / math.sqrt(draws))


def validate_roughness(density: DensitySpec, rng: np.random.Generator,
                       draws: int = 1_000_000, n_se: float = 3.0) -> float:
    """Check a custom density's supplied roughness against a Monte Carlo estimate.

    Returns the estimate. Raises ``ValueError`` if the supplied value lies outside
    ``n_se`` standard errors of it.
    """
    est, se = estimate_roughness(density, rng, draws)
    if density.upsilon is not None and abs(density.upsilon - est) > n_se * se:
        raise ValueError(f"supplied roughness {density.upsilon} disagrees with "
                         f"Monte Carlo estimate {est:.6g} +/- {se:.2g}")
    return est


@dataclass(frozen=True)
class ProposalSpec:
    """Birth-move proposal ``q`` with bound ``f/q <= astar``; ``A = 2 * astar``.

    ``density=None`` means ``q = f``. ``astar`` may exceed the true bound on
    purpose: with ``q = f`` this emulates a poorer proposal through ``A`` alone.
    """

    density: Optional[DensitySpec] = None
    astar: float = 1.0

    def __post_init__(self) -> None:
        if not self.astar >= 1.0:
            raise ValueError(f"Astar must be >= 1, got {self.astar}")

    @property
    def A(self) -> float:
        return 2.0 * self.astar

    @property
    def same_as_f(self) -> bool:
        return self.density is None

    def q(self, f: DensitySpec) -> DensitySpec:
        return f if self.density is None else self.density

    def to_dict(self) -> dict:
        if self.density is None:
            return {"mode": "same_as_f", "Astar": self.astar}
        return {"mode": "custom", "Astar": self.astar, **self.density.to_dict()}


def sup_normal_ratio(f: DensitySpec, q: DensitySpec) -> float:
    """``sup_x f(x)/q(x)`` for two normal densities (``inf`` when unbounded)."""
    if not (f.is_normal and q.is_normal):
        raise ValueError("closed form only available for normal f and q")
    sf, sq = f.sigma, q.sigma
    if sq < sf or (sq == sf and f.mu != q.mu):
        return math.inf
    if sq == sf:
        return 1.0
    # log f/q is a concave quadratic in x; maximise it directly.
    a = 0.5 / sf**2 - 0.5 / sq**2
    b = f.mu / sf**2 - q.mu / sq**2
    c = 0.5 * q.mu**2 / sq**2 - 0.5 * f.mu**2 / sf**2 + math.log(sq / sf)
    return math.exp(c + b * b / (4.0 * a))


def kmax_for(n: int) -> int:
    return int(math.floor(math.sqrt(n) * math.log(n)))


@dataclass(frozen=True)
class ModelPrior:
    """The PMF ``p_n`` on ``{1, ..., kmax}``.

    ``log_pmf[k - 1]`` holds ``log p_n(k)``. For odd ``kmax`` the single mode
    sits at ``(kmax + 1) / 2``; for even ``kmax`` the modes are ``kmax / 2`` and
    ``kmax / 2 + 1``. Away from the mode(s) each step multiplies by
    ``a_{k,n} = 1 - |k - kmax/2| / n``.
    """

    n: int
    kmax: int = field(init=False)
    modes: tuple[int, ...] = field(init=False)
    log_pmf: np.ndarray = field(init=False, repr=False)
    log_normalizer: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 7:
            raise ValueError(f"n must be an integer >= 7, got {self.n}")
        n = int(self.n)
        kmax = kmax_for(n)
        if kmax % 2:
            modes = ((kmax + 1) // 2,)
        else:
            modes = (kmax // 2, kmax // 2 + 1)
        # unnormalised log p_n, built outward from the (lower) mode
        logp = np.zeros(kmax)
        lo, hi = modes[0], modes[-1]
        for k in range(hi, kmax):
            logp[k] = logp[k - 1] + self.log_a(k, n, kmax)
        for k in range(lo, 1, -1):
            logp[k - 2] = logp[k - 1] + self.log_a(k - 1, n, kmax)
        lz = float(logsumexp(logp))
        logp -= lz
        logp.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "kmax", kmax)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "log_pmf", logp)
        object.__setattr__(self, "log_normalizer", lz)

    @staticmethod
    def log_a(k: int, n: int, kmax: int) -> float:
        return math.log1p(-abs(k - kmax / 2.0) / n)

    @property
    def parity(self) -> str:
        return "odd" if self.kmax % 2 else "even"

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, self.kmax + 1)

    def in_support(self, k: int) -> bool:
        return 1 <= k <= self.kmax

    def pmf(self) -> np.ndarray:
        return np.exp(self.log_pmf)

    def log_p(self, k: int) -> float:
        return float(self.log_pmf[k - 1]) if self.in_support(k) else -math.inf

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        return rng.choice(self.support, size=size, p=self.pmf())

    def mode_distance(self, k) -> np.ndarray:
        """Distance from ``k`` to the nearest mode."""
        k = np.asarray(k)
        return np.min([np.abs(k - m) for m in self.modes], axis=0)


def log_pn_ratio(prior: ModelPrior, k_from: int, k_to: int) -> float:
    """``log(p_n(k_to) / p_n(k_from))`` for neighbouring models.

    Evaluated from the ``a_{k,n}`` recursion, not from the normalised table.
    Returns ``-inf`` when ``k_to`` falls off the support.
    """
    if not prior.in_support(k_from):
        raise ValueError(f"k_from={k_from} outside support 1..{prior.kmax}")
    if abs(k_to - k_from) != 1:
        raise ValueError(f"models must be neighbours, got {k_from} -> {k_to}")
    if not prior.in_support(k_to):
        return -math.inf
    k = min(k_from, k_to)
    # log p(k+1)/p(k): decay to the right of the lower mode, growth below it
    up = ModelPrior.log_a(k, prior.n, prior.kmax)
    if k + 1 <= prior.modes[0]:
        up = -up
    return up if k_to > k_from else -up


def pn_table(prior: ModelPrior) -> np.ndarray:
    """Normalised ``p_n(1), ..., p_n(kmax)``."""
    return prior.pmf()


@dataclass(frozen=True)
class TargetSpec:
    prior: ModelPrior
    density: DensitySpec
    proposal: ProposalSpec = ProposalSpec()

    @classmethod
    def build(cls, n: int, mu: float = 0.0, sigma: float = 1.0,
              astar: float = 1.0, q: Optional[DensitySpec] = None) -> "TargetSpec":
        """Normal ``f`` target; ``q`` defaults to ``f``."""
        return cls(ModelPrior(n), DensitySpec.normal(mu, sigma), ProposalSpec(q, astar))

    @property
    def n(self) -> int:
        return self.prior.n

    @property
    def kmax(self) -> int:
        return self.prior.kmax

    @property
    def q(self) -> DensitySpec:
        return self.proposal.q(self.density)

    def dim(self, k: int) -> int:
        return self.prior.n + k

    def log_f_sum(self, x) -> float:
        return float(np.sum(self.density.log_f(np.asarray(x, dtype=float))))

    def log_joint(self, k: int, x) -> float:
        if not self.prior.in_support(k):
            raise ValueError(f"k={k} outside support 1..{self.kmax}")
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim(k),):
            raise ValueError(f"model {k} needs a vector of length n+k={self.dim(k)}, "
                             f"got shape {x.shape}")
        return self.prior.log_p(k) + self.log_f_sum(x)

    def to_dict(self) -> dict:
        return {"n": self.n, "density": self.density.to_dict(),
                "proposal": self.proposal.to_dict()}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "TargetSpec":
        """Inverse of :meth:`to_dict`. Unknown keys are rejected."""
        _reject_unknown(doc, {"n", "density", "proposal"}, "target")
        if "n" not in doc:
            raise ValueError("target.n is required")
        dens = dict(doc.get("density", {}))
        _reject_unknown(dens, {"family", "mu", "sigma"}, "target.density")
        if dens.get("family", NORMAL) != NORMAL:
            raise ValueError("target.density.family: only 'normal' can be configured")
        f = DensitySpec.normal(dens.get("mu", 0.0), dens.get("sigma", 1.0))
        prop = dict(doc.get("proposal", {}))
        _reject_unknown(prop, {"mode", "Astar", "family", "mu", "sigma"}, "target.proposal")
        mode = prop.get("mode", "same_as_f")
        astar = float(prop.get("Astar", 1.0))
        if mode == "same_as_f":
            extra = set(prop) - {"mode", "Astar"}
            if extra:
                raise ValueError(f"target.proposal: {sorted(extra)} only allowed with mode 'custom'")
            q = None
        elif mode == "custom":
            if prop.get("family", NORMAL) != NORMAL:
                raise ValueError("target.proposal.family: only 'normal' can be configured")
            q = DensitySpec.normal(prop.get("mu", 0.0), prop.get("sigma", 1.0))
        else:
            raise ValueError(f"target.proposal.mode: expected 'same_as_f' or 'custom', got {mode!r}")
        return cls(ModelPrior(int(doc["n"])), f, ProposalSpec(q, astar))


def _reject_unknown(doc: Mapping[str, Any], allowed: set, where: str) -> None:
    extra = set(doc) - allowed
    if extra:
        raise ValueError(f"{where}: unknown keys {sorted(extra)}")
