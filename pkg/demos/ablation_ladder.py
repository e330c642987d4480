"""Run the four-variant term ablation on a small benchmark.

v1 keeps the initialization, v2 optimizes box + ground-plane consistency,
v3 adds landmarks and the shape prior, v4 adds measured depth.  Upper
rungs warm-start from the rung below.  Expect each metric to improve
down the ladder; small per-seed wobble on the last link is normal at
this sample size.
"""
from vehicle3d import (
    ABLATION_VARIANTS,
    CAR_MODEL,
    KITTI_CAMERA,
    STANDARD_NOISE,
    SceneParams,
    alp,
    ap_3d,
    ap_bev,
    generate_scene,
    pose_to_label,
    refine_ablation,
)

params = SceneParams(n_instances=5)
frames = 100

per_variant = {v: [] for v in ABLATION_VARIANTS}
for index in range(frames):
    _, measurements, labels = generate_scene(params, STANDARD_NOISE, [777, index])
    gts = tuple(labels)
    for variant in ABLATION_VARIANTS:
        dets = []
        for meas in measurements:
            result = refine_ablation(meas, CAR_MODEL, variant)
            score = 1.0 / (1.0 + result.final_energy)
            dets.append(pose_to_label(result.vars.pose(), KITTI_CAMERA, score=score))
        per_variant[variant].append((tuple(dets), gts))

print(f"{frames} frames x {params.n_instances} instances, moderate difficulty\n")
header = f"{'':8}" + "".join(f"{v:>8}" for v in ABLATION_VARIANTS)
print(header)
for name, fn in (
    ("ALP@1m", lambda fr: alp(fr, 1.0, "moderate")),
    ("3D@.25", lambda fr: ap_3d(fr, 0.25, "moderate")),
    ("BEV@.5", lambda fr: ap_bev(fr, 0.5, "moderate")),
):
    row = [fn(per_variant[v]) for v in ABLATION_VARIANTS]
    print(f"{name:8}" + "".join(f"{x:8.1f}" for x in row))
