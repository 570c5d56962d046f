"""Tuning rules for the scale ``ell`` and the update probability ``tau``."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

from scipy.special import ndtr

from .constants import ELL_OPT, OPTIMAL_UPDATE_RATE, SPEED_CONSTANT
from .rjmcmc import MoveConfig, MoveKind, initial_state, run_chain
from .rng import RngLike, as_generator
from .target import TargetSpec

#: switch-move acceptance rates below this are flagged as "very small"
LOW_RATE = 0.05


def optimal_ell(upsilon: float) -> float:
    if not upsilon > 0:
        raise ValueError(f"roughness must be positive, got {upsilon}")
    return ELL_OPT / math.sqrt(upsilon)


def asymptotic_update_rate(ell: float, upsilon: float) -> float:
    """Limiting acceptance rate of update moves, ``2 Phi(-ell sqrt(upsilon) / 2)``."""
    if not (ell > 0 and upsilon > 0):
        raise ValueError("ell and upsilon must be positive")
    return 2.0 * float(ndtr(-ell * math.sqrt(upsilon) / 2.0))


def optimal_tau_closed_form(A: float) -> float:
    """Minimiser over ``tau`` of the limiting inefficiency (normal ``f``, optimal ``ell``).

    ``1 / (1 + sqrt(c (A + 1)))`` with ``c = 2.38^2 Phi(-1.19)``.
    """
    if not A > 0:
        raise ValueError(f"A must be positive, got {A}")
    if A < 2:
        warnings.warn(f"A={A} < 2 cannot arise from a bound f/q <= A/2 with A/2 >= 1",
                      stacklevel=2)
    return 1.0 / (1.0 + math.sqrt(SPEED_CONSTANT * (A + 1.0)))


def tau_from_rate(rate: float, tau_current: float) -> float:
    """Rate-based rule: ``r = rate / (1 - tau)``, then ``tau = 1 / (1 + sqrt(1/r))``.

    ``rate`` is the fraction of iterations in which ``K`` moved.
    """
    if not 0.0 < tau_current < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau_current}")
    r = rate / (1.0 - tau_current)
    if not rate > 0:
        raise ValueError(f"switch rate must be positive, got {rate}")
    if r >= 1.0:
        raise ValueError(f"switch rate {rate} is inconsistent with tau={tau_current}: "
                         f"it cannot exceed 1 - tau")
    return 1.0 / (1.0 + math.sqrt(1.0 / r))


@dataclass
class TuneReport:
    ell: float
    update_rate: float
    iterations: int
    evaluations: list = field(default_factory=list)
    switch_rate: Optional[float] = None
    acceptance: dict = field(default_factory=dict)
    A_used: Optional[float] = None
    A_estimate: Optional[float] = None
    tau_closed_form: Optional[float] = None
    tau_rate_rule: Optional[float] = None
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    def table(self) -> str:
        def fmt(v):
            return "-" if v is None else f"{v:.4f}" if isinstance(v, float) else str(v)
        rows = [("ell", self.ell), ("update acceptance", self.update_rate),
                ("switch rate", self.switch_rate)]
        rows += [(f"{k} acceptance", v) for k, v in self.acceptance.items()]
        rows += [("A used", self.A_used), ("A estimate", self.A_estimate),
                 ("tau (closed form)", self.tau_closed_form),
                 ("tau (rate rule)", self.tau_rate_rule),
                 ("iterations", self.iterations),
                 ("flags", ", ".join(self.flags) or "none")]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {fmt(v)}" for name, v in rows)


def _proposals_needed(tolerance: float) -> int:
    # worst-case binomial variance 1/4; standard error below tolerance / 2
    return math.ceil(0.25 / (tolerance / 2.0) ** 2)


def tune_ell(target: TargetSpec, cfg_base: MoveConfig, rate_target: float = OPTIMAL_UPDATE_RATE,
             tolerance: float = 0.02, budget: int = 2_000_000, rng: RngLike = None,
             init="from_target", max_steps: int = 60) -> tuple[float, TuneReport]:
    """Find ``ell`` whose update acceptance rate matches ``rate_target``.

    The rate is decreasing in ``ell``: bracket by doubling or halving from
    ``2.38 / sqrt(roughness)``, then bisect on ``log ell``. Each evaluation
    continues the same chain, discards its first 10% and counts only update
    proposals. ``budget`` caps the total number of iterations.
    """
    ell, report, _ = _tune_ell(target, cfg_base, rate_target, tolerance, budget, rng,
                               init, max_steps)
    return ell, report


def _tune_ell(target, cfg_base, rate_target, tolerance, budget, rng, init, max_steps):
    if not 0.0 < rate_target < 1.0:
        raise ValueError(f"rate_target must lie in (0, 1), got {rate_target}")
    if not tolerance > 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")
    gen = as_generator(rng)
    state = initial_state(target, init, gen)
    per_eval = math.ceil(_proposals_needed(tolerance) / cfg_base.tau)
    per_eval += math.ceil(per_eval / 9)  # burn-in is 10% of each evaluation
    used = 0
    evals = []

    def measure(ell):
        nonlocal state, used
        if used + per_eval > budget:
            return None
        tr = run_chain(target, cfg_base.replace(ell=ell), state, per_eval,
                       per_eval // 10, gen)
        used += per_eval
        state = tr.final_state
        rate = tr.acceptance_rate(MoveKind.UPDATE)
        evals.append((ell, rate, tr.proposed(MoveKind.UPDATE)))
        return rate

    try:
        ell0 = optimal_ell(target.density.roughness())
    except ValueError:
        ell0 = 1.0
    flags = []
    best = None

    def consider(ell, rate):
        nonlocal best
        if best is None or abs(rate - rate_target) < abs(best[1] - rate_target):
            best = (ell, rate)

    r0 = measure(ell0)
    if r0 is None:
        raise ValueError(f"budget {budget} is smaller than one rate evaluation ({per_eval})")
    consider(ell0, r0)
    lo = hi = None
    if r0 >= rate_target:
        lo, ell, r = ell0, ell0, r0
        for _ in range(max_steps):
            ell *= 2.0
            r = measure(ell)
            if r is None:
                break
            consider(ell, r)
            if r < rate_target:
                hi = ell
                break
            lo = ell
    else:
        hi, ell = ell0, ell0
        for _ in range(max_steps):
            ell /= 2.0
            r = measure(ell)
            if r is None:
                break
            consider(ell, r)
            if r >= rate_target:
                lo = ell
                break
            hi = ell
    if lo is None or hi is None:
        flags.append("budget_exhausted_before_bracket")
        warnings.warn("tune_ell: no bracket found within budget; returning best iterate",
                      stacklevel=2)
    else:
        for _ in range(max_steps):
            if abs(best[1] - rate_target) <= tolerance / 2.0 or hi / lo < 1.01:
                break
            mid = math.sqrt(lo * hi)
            r = measure(mid)
            if r is None:
                flags.append("budget_exhausted")
                break
            consider(mid, r)
            if r >= rate_target:
                lo = mid
            else:
                hi = mid
    if abs(best[1] - rate_target) > tolerance:
        flags.append("rate_outside_tolerance")
    report = TuneReport(ell=best[0], update_rate=best[1], iterations=used,
                        evaluations=evals, A_used=cfg_base.A, flags=flags)
    return best[0], report, state


def trial_run_tune(target: TargetSpec, cfg_init: MoveConfig, budget: int = 2_000_000,
                   rng: RngLike = None, A_known: bool = True,
                   rate_target: float = OPTIMAL_UPDATE_RATE,
                   tolerance: float = 0.02) -> TuneReport:
    """Trial run: tune ``ell``, then measure move rates and recommend ``tau``.

    Half the budget goes to :func:`tune_ell`, the rest to a measurement run at
    the tuned scale (10% burn-in). With ``A_known=False`` the constant is
    estimated as ``1 / birth acceptance``, which is only justified when the
    birth acceptance is roughly constant, and the report is flagged.
    """
    gen = as_generator(rng)
    ell, rep, state = _tune_ell(target, cfg_init, rate_target, tolerance, budget // 2, gen,
                                "from_target", 60)
    cfg = cfg_init.replace(ell=ell)
    rest = budget - rep.iterations
    tr = run_chain(target, cfg, state, rest, rest // 10, gen)

    acc = {kind.label: tr.acceptance_rate(kind, exclude_boundary=True) for kind in MoveKind}
    rep.acceptance = acc
    rep.update_rate = acc["update"]
    birth_all = tr.acceptance_rate(MoveKind.BIRTH)
    rep.iterations += rest
    rep.switch_rate = tr.switch_rate()
    if birth_all > 0 and math.isfinite(birth_all):
        rep.A_estimate = 1.0 / birth_all
    if A_known:
        rep.tau_closed_form = optimal_tau_closed_form(cfg.A)
    elif rep.A_estimate is not None:
        rep.flags.append("A_estimated_from_birth_rate")
        with warnings.catch_warnings():
            # a noisy estimate just below 2 is expected when the true A is 2
            warnings.simplefilter("ignore")
            rep.tau_closed_form = optimal_tau_closed_form(max(rep.A_estimate, 1e-12))
    try:
        rep.tau_rate_rule = tau_from_rate(rep.switch_rate, cfg.tau)
    except ValueError:
        rep.flags.append("switch_rate_unusable")
    for kind in ("birth", "death"):
        if not acc[kind] >= LOW_RATE:
            rep.flags.append(f"low_{kind}_acceptance")
    if abs(rep.update_rate - rate_target) > tolerance:
        rep.flags.append("update_rate_off_target")
    return rep
