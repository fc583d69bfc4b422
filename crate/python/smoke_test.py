"""End-to-end smoke test of the asyncbev Python module.

Build and install first:  pip install --no-build-isolation -e crates/python
Run:                      python3 python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import asyncbev


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL {what}")
    print(f"ok   {what}")


def main():
    # 2 m/s east for 0.25 s moves 0.5 m; z stays put
    [(x, y, z, vx, vy)] = asyncbev.compensate_radar([(10.0, 1.0, 0.5, 2.0, 0.0)], 1_000_000, 1_250_000)
    check(math.isclose(x, 10.5) and y == 1.0 and z == 0.5 and (vx, vy) == (2.0, 0.0), "compensate_radar")
    try:
        asyncbev.compensate_radar([], 2, 1)
        check(False, "compensate_radar rejects t_cam < t_radar")
    except asyncbev.AsyncBevError:
        check(True, "compensate_radar rejects t_cam < t_radar")

    a = asyncbev.Pose(5.0, -2.0, 0.0, 0.3)
    b = asyncbev.Pose(1.0, 4.0, 0.0, -1.1)
    there = asyncbev.retarget_points([(3.0, 4.0, 1.0)], a, b)
    back = asyncbev.retarget_points(there, b, a)
    check(all(math.isclose(u, v, abs_tol=1e-9) for u, v in zip(back[0], (3.0, 4.0, 1.0))), "retarget round trip")

    scenario = asyncbev.Scenario(seed=7, duration_s=6.0)
    gt = scenario.gt_bev(3_000_000)
    check(gt.shape == (200, 200) and gt.occupied() > 0, "ground-truth grid")
    check(asyncbev.iou(gt, gt) == 1.0, "iou of identical grids")

    with tempfile.TemporaryDirectory() as tmp:
        log_dir = Path(tmp) / "log"
        log = asyncbev.CaptureLog.simulate(str(log_dir), seed=7, duration_s=6.0)
        check(log.violations() == [], "fresh log has no violations")
        check(len(asyncbev.CaptureLog.read(str(log_dir)).keyframes()) == 12, "read back 12 keyframes")

        variant = log.build_variant("radar", 360, compensate=True)
        check(variant.keyframes[0] == 2, "first two keyframes dropped")
        check(abs(variant.mean_achieved_latency_us - 360_000) < 40_000, "achieved latency near target")
        check(len(variant.points(variant.keyframes[0])) > 0, "variant frame has radar points")
        variant.write(str(Path(tmp) / "variant"))
        check(asyncbev.DatasetVariant.read(str(Path(tmp) / "variant")).keyframes == variant.keyframes, "variant round trip")

        sweep = log.sweep(jobs=2)
        rows = sweep.rows
        check(len(rows) == 21, "sweep has 21 rows")
        check(0.0 < sweep.camera_only_iou < 1.0, "camera-only baseline in (0, 1)")
        check(sweep.csv().startswith("modality,target_latency_us"), "csv header")
        for r in rows:
            if r.target_latency_us == 0:
                check(r.degradation == 0.0, f"sync degradation is zero ({r.modality}, comp={r.compensate})")

    print("smoke test passed")


if __name__ == "__main__":
    main()
