"""Polynomial stepsize schedules and their summability diagnostics.

A schedule is a triple of decaying sequences

    alpha_n  = alpha_scale * (n + 1) ** (-alpha_exp)
    beta_n   = beta_scale  * (n + 1) ** (-beta_exp)
    lambda_n = lambda_scale * (n + 1) ** (-lambda_exp)

where ``alpha`` drives the signed server update, ``beta`` the directional
averaging, and ``lambda`` the two-point perturbation radius (zeroth-order
modes only).  ``check_stepsize_assumptions`` translates the standard
summability requirements for almost-sure convergence into inequalities on
the exponents; ``preset`` builds the named schedules used by the rate
experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

FIRST_ORDER = "first_order"
ZEROTH_DECOUPLED = "zeroth_decoupled"
ZEROTH_COUPLED = "zeroth_coupled"
MODES = (FIRST_ORDER, ZEROTH_DECOUPLED, ZEROTH_COUPLED)

PRESET_NAMES = ("fo_thm6", "zo_decoupled_thm8", "zo_coupled_thm8", "remark_example")

# Boundary exponents (e.g. 2*b == 1 exactly) count as violations of the
# finiteness conditions and as passes of the divergence conditions; the
# comparison tolerance keeps that rule stable under float rounding.
_EXP_TOL = 1e-12


@dataclass(frozen=True)
class ScheduleSpec:
    """Validated polynomial schedule.

    All scales are positive except ``lambda_scale``, which may be zero in
    first-order mode (``lambda_n`` is reported as 0.0 there regardless).
    """

    alpha_scale: float
    alpha_exp: float
    beta_scale: float
    beta_exp: float
    mode: str = FIRST_ORDER
    lambda_scale: float = 0.0
    lambda_exp: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if not self.alpha_scale > 0:
            raise ValueError("alpha_scale must be positive")
        if not self.beta_scale > 0:
            raise ValueError("beta_scale must be positive")
        if not 0 < self.alpha_exp <= 1:
            raise ValueError("alpha_exp must lie in (0, 1]")
        if not 0 < self.beta_exp <= 1:
            raise ValueError("beta_exp must lie in (0, 1]")
        if self.lambda_exp < 0:
            raise ValueError("lambda_exp must be nonnegative")
        if self.lambda_scale < 0:
            raise ValueError("lambda_scale must be nonnegative")
        if self.mode != FIRST_ORDER and not self.lambda_scale > 0:
            raise ValueError("zeroth-order modes require a positive lambda_scale")

    @property
    def zeroth_order(self) -> bool:
        return self.mode != FIRST_ORDER


def schedule_at(spec: ScheduleSpec, n: int) -> tuple[float, float, float]:
    """Return (alpha_n, beta_n, lambda_n) for event index n >= 0.

    Example:
        >>> s = ScheduleSpec(alpha_scale=2.0, alpha_exp=0.5, beta_scale=1.0, beta_exp=0.5)
        >>> schedule_at(s, 3)[0]
        1.0
    """
    if n < 0:
        raise ValueError("event index must be nonnegative")
    base = float(n + 1)
    alpha = spec.alpha_scale * base ** (-spec.alpha_exp)
    beta = spec.beta_scale * base ** (-spec.beta_exp)
    if spec.mode == FIRST_ORDER:
        lam = 0.0
    else:
        lam = spec.lambda_scale * base ** (-spec.lambda_exp)
    return alpha, beta, lam


# ---------------------------------------------------------------------------
# Summability checks
# ---------------------------------------------------------------------------

_CONDITION_TEXT = {
    "alpha_sum_diverges": "sum of alpha_n must diverge (requires alpha_exp <= 1)",
    "beta_sum_diverges": "sum of beta_n must diverge (requires beta_exp <= 1)",
    "squares_summable": "sum of alpha_n^2 + beta_n^2 must be finite "
    "(requires 2*alpha_exp > 1 and 2*beta_exp > 1)",
    "ratio_vanishes": "alpha_n / beta_n must vanish (requires alpha_exp > beta_exp)",
    "alpha_sq_over_beta_summable": "sum of alpha_n^2 / beta_n must be finite "
    "(requires 2*alpha_exp - beta_exp > 1)",
    "beta_sq_over_lambda_sq_summable": "sum of beta_n^2 / lambda_n^2 must be finite "
    "(requires 2*beta_exp - 2*lambda_exp > 1)",
    "beta_lambda_summable": "sum of beta_n * lambda_n must be finite "
    "(requires beta_exp + lambda_exp > 1)",
}


@dataclass(frozen=True)
class AssumptionReport:
    """Per-condition verdicts for the almost-sure convergence stepsize rules.

    The two lambda conditions are None in first_order mode (not applicable).
    ``satisfied`` is True iff every applicable condition holds; ``violations``
    lists the names of failed conditions in a fixed order.
    """

    alpha_sum_diverges: bool
    beta_sum_diverges: bool
    squares_summable: bool
    ratio_vanishes: bool
    alpha_sq_over_beta_summable: bool
    beta_sq_over_lambda_sq_summable: bool | None
    beta_lambda_summable: bool | None
    satisfied: bool
    violations: tuple[str, ...]

    def describe_violations(self) -> list[str]:
        return [_CONDITION_TEXT[name] for name in self.violations]


def check_stepsize_assumptions(spec: ScheduleSpec) -> AssumptionReport:
    """Check the exponent inequalities behind the summability assumptions.

    Divergence conditions pass at equality; finiteness conditions fail at
    equality (the boundary series diverge).
    """
    a, b, p = spec.alpha_exp, spec.beta_exp, spec.lambda_exp
    flags: dict[str, bool | None] = {
        "alpha_sum_diverges": a <= 1 + _EXP_TOL,
        "beta_sum_diverges": b <= 1 + _EXP_TOL,
        "squares_summable": (2 * a > 1 + _EXP_TOL) and (2 * b > 1 + _EXP_TOL),
        "ratio_vanishes": a > b + _EXP_TOL,
        "alpha_sq_over_beta_summable": 2 * a - b > 1 + _EXP_TOL,
    }
    if spec.zeroth_order:
        flags["beta_sq_over_lambda_sq_summable"] = 2 * b - 2 * p > 1 + _EXP_TOL
        flags["beta_lambda_summable"] = b + p > 1 + _EXP_TOL
    else:
        flags["beta_sq_over_lambda_sq_summable"] = None
        flags["beta_lambda_summable"] = None

    violations = tuple(name for name, ok in flags.items() if ok is False)
    return AssumptionReport(
        satisfied=not violations,
        violations=violations,
        **flags,  # type: ignore[arg-type]
    )


# ---------------------------------------------------------------------------
# Named presets
# ---------------------------------------------------------------------------


def preset(
    name: str,
    *,
    m: int = 1,
    n_workers: int = 1,
    eps: float | None = None,
    eps1: float | None = None,
    eps2: float | None = None,
    lambda_scale: float = 1.0,
) -> ScheduleSpec:
    """Build one of the named rate-experiment schedules.

    ``fo_thm6`` and the two ``zo_*`` presets carry a 1/(m*n_workers) scale on
    alpha and beta; ``remark_example`` keeps unit scales.  The epsilon knobs
    shift the alpha (and, for the coupled preset, beta) exponents inside
    their admissible open ranges.

    Args:
        name: one of ``PRESET_NAMES``.
        m: directions per worker (for the 1/(m*N) scale).
        n_workers: worker count N (for the 1/(m*N) scale).
        eps: exponent shift for ``fo_thm6`` (default 0.05, range (0, 1/4))
            and ``zo_decoupled_thm8`` (default 0.05, range (0, 1/6)).
        eps1/eps2: exponent shifts for ``zo_coupled_thm8``
            (defaults 0.1 / 0.05, require 0 < eps2 < eps1 < 1/2).
        lambda_scale: perturbation-radius scale for the zeroth-order presets.
    """
    if m < 1 or n_workers < 1:
        raise ValueError("m and n_workers must be positive integers")
    scale = 1.0 / (m * n_workers)

    if name == "fo_thm6":
        e = 0.05 if eps is None else eps
        if not 0 < e < 0.25:
            raise ValueError("fo_thm6 requires eps in (0, 1/4)")
        return ScheduleSpec(
            alpha_scale=scale,
            alpha_exp=0.75 + e,
            beta_scale=scale,
            beta_exp=0.5,
            mode=FIRST_ORDER,
        )
    if name == "zo_decoupled_thm8":
        e = 0.05 if eps is None else eps
        if not 0 < e < 1 / 6:
            raise ValueError("zo_decoupled_thm8 requires eps in (0, 1/6)")
        return ScheduleSpec(
            alpha_scale=scale,
            alpha_exp=5 / 6 + e,
            beta_scale=scale,
            beta_exp=2 / 3,
            mode=ZEROTH_DECOUPLED,
            lambda_scale=lambda_scale,
            lambda_exp=1 / 6,
        )
    if name == "zo_coupled_thm8":
        e1 = 0.1 if eps1 is None else eps1
        e2 = 0.05 if eps2 is None else eps2
        if not 0 < e2 < e1 < 0.5:
            raise ValueError("zo_coupled_thm8 requires 0 < eps2 < eps1 < 1/2")
        return ScheduleSpec(
            alpha_scale=scale,
            alpha_exp=0.5 + e1,
            beta_scale=scale,
            beta_exp=e2,
            mode=ZEROTH_COUPLED,
            lambda_scale=lambda_scale,
            lambda_exp=0.5,
        )
    if name == "remark_example":
        return ScheduleSpec(
            alpha_scale=1.0,
            alpha_exp=0.91,
            beta_scale=1.0,
            beta_exp=0.8,
            mode=ZEROTH_DECOUPLED,
            lambda_scale=lambda_scale,
            lambda_exp=0.25,
        )
    raise ValueError(f"unknown preset {name!r}, expected one of {PRESET_NAMES}")


if __name__ == "__main__":
    for nm in PRESET_NAMES:
        sp = preset(nm)
        rep = check_stepsize_assumptions(sp)
        print(f"{nm}: a={sp.alpha_exp:.4f} b={sp.beta_exp:.4f} p={sp.lambda_exp:.4f} "
              f"satisfied={rep.satisfied} violations={rep.violations}")
