"""Reversible jump kernel: random-walk update, birth and death moves.

Each iteration draws ``U ~ U(0, 1)`` and attempts

* an update of all ``n + k`` coordinates, ``Y ~ N(x, ell^2 / (n + k) I)``, when ``U <= g1``,
* a birth (append ``u ~ q``) when ``g1 < U <= g1 + g2``,
* a death (drop the last coordinate) otherwise,

with ``g = (tau, (1 - tau) A / (A + 1), (1 - tau) / (A + 1))``. The acceptance
uniform is always drawn, even when the ratio is known to exceed one, so the
random stream does not depend on acceptance outcomes.

Normal ``f`` and ``q`` run through a compiled loop; anything else falls back to
:func:`step`. Both paths consume the generator in the same order, so a given
seed produces the same chain either way.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numba
import numpy as np

from .rng import RngLike, as_generator
from .target import LOG_2PI, TargetSpec

REFRESH_EVERY = 10_000


class MoveKind(enum.IntEnum):
    UPDATE = 0
    BIRTH = 1
    DEATH = 2

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class MoveConfig:
    tau: float
    A: float
    ell: float

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not (self.A >= 2.0 and math.isfinite(self.A)):
            raise ValueError(f"A must be a finite value >= 2, got {self.A}")
        if not (self.ell > 0.0 and math.isfinite(self.ell)):
            raise ValueError(f"ell must be positive, got {self.ell}")

    @classmethod
    def for_target(cls, target: TargetSpec, tau: float,
                   ell: Optional[float] = None) -> "MoveConfig":
        """Config using the target's ``A`` and, by default, ``ell = 2.38 / sqrt(roughness)``."""
        if ell is None:
            ell = 2.38 / math.sqrt(target.density.roughness())
        return cls(tau, target.proposal.A, ell)

    @property
    def g(self) -> tuple[float, float, float]:
        t, a = self.tau, self.A
        return (t, (1.0 - t) * a / (a + 1.0), (1.0 - t) / (a + 1.0))

    def replace(self, **kw) -> "MoveConfig":
        d = {"tau": self.tau, "A": self.A, "ell": self.ell}
        d.update(kw)
        return MoveConfig(**d)


@dataclass(frozen=True)
class ChainState:
    k: int
    x: np.ndarray
    log_density_sum: float

    @classmethod
    def at(cls, target: TargetSpec, k: int, x) -> "ChainState":
        x = np.array(x, dtype=float)
        target.log_joint(k, x)  # validates k and the dimension
        return cls(int(k), x, target.log_f_sum(x))

    @classmethod
    def from_target(cls, target: TargetSpec, rng: RngLike) -> "ChainState":
        """Exact draw from the target: ``K ~ p_n``, then ``X ~ f`` i.i.d."""
        gen = as_generator(rng)
        k = int(target.prior.sample(gen))
        return cls.at(target, k, target.density.sample(gen, target.dim(k)))

    @classmethod
    def cold_start(cls, target: TargetSpec) -> "ChainState":
        """Lower mode of ``p_n`` with every coordinate at the mode of ``f``."""
        k = target.prior.modes[0]
        loc = target.density.mu if target.density.is_normal else 0.0
        return cls.at(target, k, np.full(target.dim(k), loc))

    def refreshed(self, target: TargetSpec) -> "ChainState":
        return ChainState(self.k, self.x, target.log_f_sum(self.x))


@dataclass(frozen=True)
class StepOutcome:
    move_kind: MoveKind
    proposed: bool
    accepted: bool
    log_accept_ratio: float


# -- acceptance ratios (log space) -------------------------------------------

def update_log_ratio(target: TargetSpec, x, y) -> float:
    return target.log_f_sum(y) - target.log_f_sum(x)


def _log_f_over_q(target: TargetSpec, u: float) -> float:
    if target.proposal.same_as_f:
        return 0.0
    return target.density.log_f(u) - target.q.log_f(u)


def birth_log_ratio(target: TargetSpec, cfg: MoveConfig, k: int, u: float) -> float:
    """``log[f(u) p(k+1) g3 / (q(u) p(k) g2)]``; ``g3/g2 = 1/A``."""
    if k >= target.kmax:
        return -math.inf
    dp = target.prior.log_p(k + 1) - target.prior.log_p(k)
    return _log_f_over_q(target, u) + dp - math.log(cfg.A)


def death_log_ratio(target: TargetSpec, cfg: MoveConfig, k: int, x_last: float) -> float:
    """``log[q(x_last) p(k-1) g2 / (f(x_last) p(k) g3)]``; ``-inf`` at ``k = 1``."""
    if k <= 1:
        return -math.inf
    dp = target.prior.log_p(k - 1) - target.prior.log_p(k)
    return -_log_f_over_q(target, x_last) + dp + math.log(cfg.A)


def accept_probability(log_ratio: float) -> float:
    return 1.0 if log_ratio >= 0.0 else math.exp(log_ratio)


def _accept(ua: float, log_ratio: float) -> bool:
    # strict: a ratio of exactly zero can never be accepted, even if ua == 0
    return ua < math.exp(min(log_ratio, 0.0))


# -- single moves ------------------------------------------------------------

def update_move(target: TargetSpec, cfg: MoveConfig, state: ChainState,
                rng: RngLike) -> tuple[ChainState, StepOutcome]:
    gen = as_generator(rng)
    m = target.dim(state.k)
    z = gen.standard_normal(m)
    y = state.x + (cfg.ell / math.sqrt(m)) * z
    new_sum = target.log_f_sum(y)
    lr = new_sum - state.log_density_sum
    ok = _accept(gen.random(), lr)
    out = StepOutcome(MoveKind.UPDATE, True, ok, lr)
    return (ChainState(state.k, y, new_sum) if ok else state), out


def birth_move(target: TargetSpec, cfg: MoveConfig, state: ChainState,
               rng: RngLike) -> tuple[ChainState, StepOutcome]:
    gen = as_generator(rng)
    u = float(target.q.sample(gen, 1)[0])
    lr = birth_log_ratio(target, cfg, state.k, u)
    ok = _accept(gen.random(), lr)
    out = StepOutcome(MoveKind.BIRTH, True, ok, lr)
    if not ok:
        return state, out
    x = np.append(state.x, u)
    return ChainState(state.k + 1, x, state.log_density_sum + target.density.log_f(u)), out


def death_move(target: TargetSpec, cfg: MoveConfig, state: ChainState,
               rng: RngLike) -> tuple[ChainState, StepOutcome]:
    gen = as_generator(rng)
    x_last = float(state.x[-1])
    lr = death_log_ratio(target, cfg, state.k, x_last)
    ok = _accept(gen.random(), lr)
    out = StepOutcome(MoveKind.DEATH, True, ok, lr)
    if not ok:
        return state, out
    new_sum = state.log_density_sum - target.density.log_f(x_last)
    return ChainState(state.k - 1, state.x[:-1].copy(), new_sum), out


def step(target: TargetSpec, cfg: MoveConfig, state: ChainState,
         rng: RngLike) -> tuple[ChainState, StepOutcome]:
    """One iteration. Rejections return ``state`` itself."""
    gen = as_generator(rng)
    g1, g2, _ = cfg.g
    u = gen.random()
    if u <= g1:
        return update_move(target, cfg, state, gen)
    if u <= g1 + g2:
        return birth_move(target, cfg, state, gen)
    return death_move(target, cfg, state, gen)


def reversibility_identity_check(target: TargetSpec, cfg: MoveConfig, k: int,
                                 x, u: float) -> float:
    """Detailed-balance residual for the birth ``(k, x) -> (k+1, (x, u))`` and its reverse.

    Compares ``log[pi(k, x) g2 q(u) a_birth]`` with ``log[pi(k+1, (x, u)) g3 a_death]``.
    """
    if not (target.prior.in_support(k) and target.prior.in_support(k + 1)):
        raise ValueError(f"k={k} and k+1 must both lie in 1..{target.kmax}")
    x = np.asarray(x, dtype=float)
    _, g2, g3 = cfg.g
    log_birth = birth_log_ratio(target, cfg, k, u)
    log_death = death_log_ratio(target, cfg, k + 1, u)
    lhs = (target.log_joint(k, x) + math.log(g2) + target.q.log_f(u)
           + min(0.0, log_birth))
    rhs = (target.log_joint(k + 1, np.append(x, u)) + math.log(g3)
           + min(0.0, log_death))
    return abs(lhs - rhs)


# -- chains ------------------------------------------------------------------

@dataclass
class ChainTrace:
    """Post burn-in record of a chain.

    ``k[i]``, ``x1[i]`` are the state after iteration ``i``; ``k0`` is the model
    index before the first recorded iteration. ``counts[kind] = (proposed, accepted)``.
    """

    k: np.ndarray
    x1: np.ndarray
    move_kind: np.ndarray
    accepted: np.ndarray
    log_accept_ratio: np.ndarray
    counts: np.ndarray
    k0: int
    kmax: int
    burn_in: int
    final_state: ChainState
    snapshots: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.k)

    @property
    def k_before(self) -> np.ndarray:
        return np.concatenate([[self.k0], self.k[:-1]]).astype(np.int64)

    def proposed(self, kind: MoveKind) -> int:
        return int(self.counts[kind, 0])

    def accepted_count(self, kind: MoveKind) -> int:
        return int(self.counts[kind, 1])

    def acceptance_rate(self, kind: MoveKind, exclude_boundary: bool = False) -> float:
        """Accepted / proposed. ``exclude_boundary`` drops births at ``kmax``
        and deaths at ``k = 1``, which can never be accepted."""
        if not exclude_boundary or kind == MoveKind.UPDATE:
            p = self.proposed(kind)
            return self.accepted_count(kind) / p if p else math.nan
        mask = self.move_kind == kind
        if kind == MoveKind.DEATH:
            mask &= self.k_before > 1
        else:
            mask &= self.k_before < self.kmax
        p = np.count_nonzero(mask)
        return np.count_nonzero(mask & self.accepted) / p if p else math.nan

    def switch_rate(self) -> float:
        """Accepted births plus deaths per iteration (how often ``K`` moves)."""
        if not self.iterations:
            return math.nan
        moved = self.counts[MoveKind.BIRTH, 1] + self.counts[MoveKind.DEATH, 1]
        return float(moved) / self.iterations

    def death_auto_accept_violations(self) -> int:
        """Deaths proposed at ``k > 1`` that were rejected."""
        d = (self.move_kind == MoveKind.DEATH) & (self.k_before > 1)
        return int(np.count_nonzero(d & ~self.accepted))

    def summary(self) -> dict:
        out = {"iterations": self.iterations, "burn_in": self.burn_in, "moves": {}}
        for kind in MoveKind:
            out["moves"][kind.label] = {
                "proposed": self.proposed(kind),
                "accepted": self.accepted_count(kind),
            }
        out["switch_rate"] = self.switch_rate()
        return out


@numba.njit(cache=True)
def _normal_chain(gen, x, k, logsum, n, log_pmf, mu, sigma, q_same, mq, sq,
                  g1, g12, log_A, ell, iters, start_iter, refresh_every,
                  record, k_out, x1_out, kind_out, acc_out, lr_out, counts):
    kmax = log_pmf.shape[0]
    cf = -0.5 * LOG_2PI - math.log(sigma)
    hf = 0.5 / (sigma * sigma)
    cq = -0.5 * LOG_2PI - math.log(sq)
    hq = 0.5 / (sq * sq)
    for it in range(iters):
        g = start_iter + it
        if refresh_every > 0 and g > 0 and g % refresh_every == 0:
            ss = 0.0
            for i in range(n + k):
                d = x[i] - mu
                ss += d * d
            logsum = (n + k) * cf - hf * ss
        m = n + k
        u = gen.random()
        if u <= g1:
            kind = 0
            z = gen.standard_normal(m)
            y = x[:m] + (ell / math.sqrt(m)) * z
            ss = 0.0
            for i in range(m):
                d = y[i] - mu
                ss += d * d
            new_sum = m * cf - hf * ss
            lr = new_sum - logsum
            ok = gen.random() < math.exp(min(lr, 0.0))
            if ok:
                x[:m] = y
                logsum = new_sum
        elif u <= g12:
            kind = 1
            zq = gen.standard_normal()
            if q_same:
                uu = mu + sigma * zq
                lfq = 0.0
            else:
                uu = mq + sq * zq
                lfq = (cf - hf * (uu - mu) ** 2) - (cq - hq * (uu - mq) ** 2)
            if k >= kmax:
                lr = -np.inf
            else:
                lr = lfq + log_pmf[k] - log_pmf[k - 1] - log_A
            ok = gen.random() < math.exp(min(lr, 0.0))
            if ok:
                x[m] = uu
                k += 1
                logsum += cf - hf * (uu - mu) ** 2
        else:
            kind = 2
            xl = x[m - 1]
            if k <= 1:
                lr = -np.inf
            else:
                if q_same:
                    lfq = 0.0
                else:
                    lfq = (cf - hf * (xl - mu) ** 2) - (cq - hq * (xl - mq) ** 2)
                lr = -lfq + log_pmf[k - 2] - log_pmf[k - 1] + log_A
            ok = gen.random() < math.exp(min(lr, 0.0))
            if ok:
                k -= 1
                logsum -= cf - hf * (xl - mu) ** 2
        counts[kind, 0] += 1
        if ok:
            counts[kind, 1] += 1
        if record:
            k_out[it] = k
            x1_out[it] = x[0]
            kind_out[it] = kind
            acc_out[it] = ok
            lr_out[it] = lr
    return k, logsum


def _compiled_ok(target: TargetSpec) -> bool:
    return target.density.is_normal and target.q.is_normal


class _Runner:
    """Advances one chain in place, through the compiled loop or :func:`step`."""

    def __init__(self, target, cfg, state, gen, engine, refresh_every):
        if engine not in ("auto", "compiled", "python"):
            raise ValueError(f"unknown engine {engine!r}")
        if engine == "compiled" and not _compiled_ok(target):
            raise ValueError("compiled engine needs normal f and q")
        self.compiled = engine != "python" and _compiled_ok(target)
        self.target, self.cfg, self.gen = target, cfg, gen
        self.refresh_every = refresh_every
        self.iter = 0
        if self.compiled:
            self.buf = np.empty(target.n + target.kmax)
            self.buf[: state.x.size] = state.x
            self.k, self.logsum = state.k, state.log_density_sum
        else:
            self.state = state

    def advance(self, iters, counts, record=None):
        t, c = self.target, self.cfg
        if self.compiled:
            g1, g2, _ = c.g
            q = t.q
            if record is None:
                e_i, e_f, e_b = np.empty(0, np.int64), np.empty(0), np.empty(0, np.bool_)
                record = (e_i, e_f, np.empty(0, np.int8), e_b, e_f)
                rec = False
            else:
                rec = True
            self.k, self.logsum = _normal_chain(
                self.gen, self.buf, self.k, self.logsum, t.n, t.prior.log_pmf,
                t.density.mu, t.density.sigma, t.proposal.same_as_f, q.mu, q.sigma,
                g1, g1 + g2, math.log(c.A), c.ell, iters, self.iter,
                self.refresh_every, rec, *record, counts)
        else:
            for it in range(iters):
                g = self.iter + it
                if self.refresh_every > 0 and g > 0 and g % self.refresh_every == 0:
                    self.state = self.state.refreshed(t)
                self.state, out = step(t, c, self.state, self.gen)
                counts[out.move_kind, 0] += 1
                counts[out.move_kind, 1] += out.accepted
                if record is not None:
                    record[0][it] = self.state.k
                    record[1][it] = self.state.x[0]
                    record[2][it] = out.move_kind
                    record[3][it] = out.accepted
                    record[4][it] = out.log_accept_ratio
        self.iter += iters

    def current(self) -> ChainState:
        if self.compiled:
            return ChainState(int(self.k), self.buf[: self.target.n + self.k].copy(),
                              float(self.logsum))
        return self.state

    @property
    def current_k(self) -> int:
        return int(self.k) if self.compiled else self.state.k


def initial_state(target: TargetSpec, init: Union[ChainState, str],
                  gen: np.random.Generator) -> ChainState:
    if isinstance(init, ChainState):
        if not target.prior.in_support(init.k) or init.x.shape != (target.dim(init.k),):
            raise ValueError(f"initial state has k={init.k} and {init.x.size} coordinates; "
                             f"expected 1 <= k <= {target.kmax} and n+k coordinates")
        return init
    if init == "from_target":
        return ChainState.from_target(target, gen)
    if init == "cold":
        return ChainState.cold_start(target)
    raise ValueError(f"init must be a ChainState, 'from_target' or 'cold', got {init!r}")


def run_chain(target: TargetSpec, cfg: MoveConfig, init: Union[ChainState, str] = "from_target",
              iterations: int = 10_000, burn_in: int = 0, rng: RngLike = None,
              snapshot_every: int = 0, engine: str = "auto",
              refresh_every: int = REFRESH_EVERY) -> ChainTrace:
    """Run ``iterations`` steps in total and record the last ``iterations - burn_in``.

    ``init="from_target"`` draws the starting point exactly from the target;
    ``"cold"`` starts at the mode. ``snapshot_every > 0`` stores full-state
    copies ``(iteration, k, x)`` every that many recorded iterations.
    """
    if burn_in < 0 or iterations < burn_in:
        raise ValueError(f"need iterations >= burn_in >= 0, got {iterations=}, {burn_in=}")
    gen = as_generator(rng)
    state = initial_state(target, init, gen)
    runner = _Runner(target, cfg, state, gen, engine, refresh_every)

    counts = np.zeros((3, 2), dtype=np.int64)
    if burn_in:
        runner.advance(burn_in, counts)
    k0 = runner.current_k

    m = iterations - burn_in
    rec = (np.empty(m, np.int64), np.empty(m), np.empty(m, np.int8),
           np.empty(m, np.bool_), np.empty(m))
    counts = np.zeros((3, 2), dtype=np.int64)
    snaps = []
    chunk = snapshot_every if snapshot_every > 0 else max(m, 1)
    done = 0
    while done < m:
        size = min(chunk, m - done)
        runner.advance(size, counts, tuple(a[done:done + size] for a in rec))
        done += size
        if snapshot_every > 0 and size == chunk:
            s = runner.current()
            snaps.append((done, s.k, s.x))
    return ChainTrace(rec[0], rec[1], rec[2], rec[3], rec[4], counts, k0, target.kmax, burn_in,
                      runner.current(), snaps)
