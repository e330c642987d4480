"""Per-instance pose-shape estimation by damped nonlinear least squares.

The optimization state is initialized from the measurement hypotheses
(yaw and log-extent guesses, 2D box, optional crop depth) and polished
with Levenberg-Marquardt on the stacked weighted residuals.  Energy is
monotone over accepted steps by construction; rejected trial steps only
raise the damping.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import (
    EnergyConfig,
    Measurement,
    Variables,
    ablation_config,
    stacked_residuals,
    total_energy,
)
from .geometry import BehindCameraError, wrap_angle
from .shape import MorphableModel

_BLOCK_SLICES = {
    "theta": slice(0, 1),
    "T": slice(1, 4),
    "sigma": slice(4, 7),
    "alpha": slice(7, None),
}

_DAMPING_MIN = 1e-12
_DAMPING_MAX = 1e12


class InitializationError(ValueError):
    """The measurement does not pin down a usable starting translation."""


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 50
    ftol: float = 1e-8  # relative energy decrease, against max(E, 1)
    xtol: float = 1e-10  # relative step size
    damping_init: float = 1e-3
    freeze: tuple = ()  # any of "theta", "T", "sigma", "alpha"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not (self.ftol > 0 and self.xtol > 0 and self.damping_init > 0):
            raise ValueError("tolerances and damping must be positive")
        unknown = set(self.freeze) - set(_BLOCK_SLICES)
        if unknown:
            raise ValueError(f"unknown freeze blocks {sorted(unknown)}")


@dataclass(frozen=True)
class RefineResult:
    vars: Variables
    converged: bool
    iterations: int
    final_energy: float
    breakdown: dict
    reason: str
    energy_path: np.ndarray  # accepted energies, starting at the initial one


def initialize(meas: Measurement, model: MorphableModel) -> Variables:
    """Starting point from hypotheses: the translation is back-projected
    through the 2D box center, at the measured depth when available and
    otherwise at the ground-plane intersection of that ray."""
    cam = meas.cam
    direction = np.array(
        [
            (meas.box2d.tx - cam.cx) / cam.fx,
            (meas.box2d.ty - cam.cy) / cam.fy,
            1.0,
        ]
    )
    if meas.depth_zb is not None:
        T = direction * meas.depth_zb
    else:
        slope = float(meas.ground.N @ direction)
        if abs(slope) < 1e-12:
            raise InitializationError(
                "box-center ray is parallel to the ground plane and no depth is available"
            )
        s = 1.0 / slope
        if s <= 0:
            raise InitializationError(
                "box-center ray meets the ground plane behind the camera"
            )
        T = direction * s
    return Variables(
        theta=meas.theta0,
        T=T,
        sigma=meas.sigma0.copy(),
        alpha=np.zeros(model.n_basis),
    )


def _free_indices(dim: int, freeze) -> np.ndarray:
    mask = np.ones(dim, dtype=bool)
    for name in freeze:
        mask[_BLOCK_SLICES[name]] = False
    return np.flatnonzero(mask)


def _evaluate(x, n_alpha, meas, model, cfg):
    """Residual stack at x, or None when the point is not evaluable."""
    vars = Variables.from_vector(x, n_alpha)
    # Trial steps may wander into overflow/degenerate territory; those
    # points are rejected below, so the intermediate warnings are noise.
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            r, J = stacked_residuals(vars, meas, model, cfg, with_grad=True)
    except BehindCameraError:
        return None
    if not np.all(np.isfinite(r)) or not np.all(np.isfinite(J)):
        return None
    return r, J


def _result_at(x, n_alpha, meas, model, cfg, converged, iterations, reason, path):
    final = Variables.from_vector(x, n_alpha)
    final = Variables(
        theta=wrap_angle(final.theta), T=final.T, sigma=final.sigma, alpha=final.alpha
    )
    energy, breakdown = total_energy(final, meas, model, cfg)
    return RefineResult(
        vars=final,
        converged=converged,
        iterations=iterations,
        final_energy=energy,
        breakdown=breakdown,
        reason=reason,
        energy_path=np.asarray(path),
    )


def refine(
    meas: Measurement,
    model: MorphableModel,
    cfg: EnergyConfig | None = None,
    opts: SolverOptions | None = None,
    initial: Variables | None = None,
) -> RefineResult:
    """Levenberg-Marquardt minimization of the enabled energy terms.

    Trial steps solve the damped normal equations; the damping is
    multiplied by 10 when a trial fails to decrease the energy and
    halved on acceptance.  Frozen blocks keep their initial values.
    """
    cfg = cfg or EnergyConfig()
    opts = opts or SolverOptions()
    start = initial if initial is not None else initialize(meas, model)
    n_alpha = start.alpha.size
    x = start.to_vector()
    free = _free_indices(x.size, opts.freeze)

    evaluated = _evaluate(x, n_alpha, meas, model, cfg)
    if evaluated is None:
        raise InitializationError("initial point is not evaluable (behind camera)")
    r, J = evaluated
    energy = float(r @ r)
    path = [energy]

    if r.size == 0 or free.size == 0:
        return _result_at(x, n_alpha, meas, model, cfg, True, 0, "nothing to optimize", path)

    lam = opts.damping_init
    iterations = 0
    converged = False
    reason = "max_iterations"
    while iterations < opts.max_iterations:
        iterations += 1
        Jf = J[:, free]
        H = Jf.T @ Jf
        g = Jf.T @ r
        try:
            dx = np.linalg.solve(H + lam * np.eye(free.size), -g)
        except np.linalg.LinAlgError:
            lam = min(lam * 10.0, _DAMPING_MAX)
            continue
        x_trial = x.copy()
        x_trial[free] += dx
        trial = _evaluate(x_trial, n_alpha, meas, model, cfg)
        small_step = np.linalg.norm(dx) <= opts.xtol * (np.linalg.norm(x[free]) + opts.xtol)
        if trial is not None and float(trial[0] @ trial[0]) < energy:
            new_energy = float(trial[0] @ trial[0])
            drop = energy - new_energy
            x, (r, J) = x_trial, trial
            energy = new_energy
            path.append(energy)
            lam = max(lam * 0.5, _DAMPING_MIN)
            if drop <= opts.ftol * max(energy, 1.0):
                converged, reason = True, "ftol"
                break
            if small_step:
                converged, reason = True, "xtol"
                break
        else:
            lam = min(lam * 10.0, _DAMPING_MAX)
            if small_step:
                # no decrease available within resolvable step size
                converged, reason = True, "xtol"
                break
    return _result_at(x, n_alpha, meas, model, cfg, converged, iterations, reason, path)


def refine_ablation(
    meas: Measurement,
    model: MorphableModel,
    variant: str,
    opts: SolverOptions | None = None,
    base: EnergyConfig | None = None,
    initial: Variables | None = None,
) -> RefineResult:
    """Run one rung of the term-ablation ladder; v1 skips optimization.

    Rungs above v2 warm-start from the previous rung's solution (a
    coarse-to-fine schedule: box+ground first, then landmarks+shape,
    then measured depth), so each added term polishes rather than
    re-solves from scratch.  Passing `initial` overrides the cascade
    and starts the requested rung there directly.
    """
    cfg = ablation_config(variant, base)
    if variant == "v1":
        start = initial if initial is not None else initialize(meas, model)
        x = start.to_vector()
        return _result_at(
            x, start.alpha.size, meas, model, cfg, True, 0, "initialization only", [0.0]
        )
    if initial is None and variant in ("v3", "v4"):
        prev = {"v3": "v2", "v4": "v3"}[variant]
        initial = refine_ablation(meas, model, prev, opts=opts, base=base).vars
    return refine(meas, model, cfg=cfg, opts=opts, initial=initial)
