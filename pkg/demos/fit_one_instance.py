"""Refine a single noisy instance and compare against its ground truth.

Shows the initialization error, the refined error, the per-term energy
breakdown, and the accepted-energy path of the solver.
"""
import numpy as np

from vehicle3d import (
    CAR_MODEL,
    STANDARD_NOISE,
    SceneParams,
    generate_scene,
    refine,
    wrap_angle,
)
from vehicle3d.refine import initialize


def errors(vars, truth):
    dT = np.linalg.norm(vars.T - truth.T)
    dtheta = np.degrees(abs(((vars.theta - truth.theta) + np.pi) % (2 * np.pi) - np.pi))
    dsize = np.max(np.abs(np.exp(vars.sigma) - np.exp(truth.sigma)))
    return dT, dtheta, dsize


scene, measurements, _ = generate_scene(
    SceneParams(n_instances=1), STANDARD_NOISE, seed=7
)
truth, true_coeffs = scene.instances[0]
meas = measurements[0]

start = initialize(meas, CAR_MODEL)
result = refine(meas, CAR_MODEL)

print(f"ground truth: z = {truth.T[2]:.1f} m, yaw = {np.degrees(wrap_angle(truth.theta)):.0f} deg")
for name, vars in (("initialization", start), ("refined", result.vars)):
    dT, dtheta, dsize = errors(vars, truth)
    print(f"{name:>14}: |dT| = {dT:.2f} m, |dyaw| = {dtheta:.1f} deg, |dsize| = {dsize:.2f} m")

print(f"\nconverged = {result.converged} ({result.reason}) after {result.iterations} iterations")
print("energy breakdown at the solution:")
for term, value in sorted(result.breakdown.items()):
    print(f"  {term:>5}: {value:.4f}")
path = result.energy_path
print(f"energy path: {path[0]:.1f} -> {path[min(2, len(path) - 1)]:.1f} -> ... -> {path[-1]:.4f}")
print(f"fitted shape coefficients: {np.round(result.vars.alpha, 3)} "
      f"(truth {np.round(true_coeffs.alpha, 3)})")
print("shape stays near the prior mean: a single distant view constrains pose and "
      "size far better than intra-class shape")
