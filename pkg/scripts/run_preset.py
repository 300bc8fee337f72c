"""Synthesize gains from simulated data for one or more presets and compare with the oracle.

    python3 scripts/run_preset.py a4d a4d-mixed
"""

import argparse
import time

import numpy as np

from mflqr.config import PRESET_EXPERIMENTS, preset_config
from mflqr.lti import add_noise, simulate
from mflqr.riccati import format_gain, lqr
from mflqr.synth import compare_gains, synthesize


def run(name: str, noise: bool = False) -> None:
    cfg = preset_config(name)
    sys_ = cfg.lti_system()
    traj = simulate(sys_, cfg.input_signal(), cfg.x0(), cfg.sampling.T, cfg.sampling.dt)
    if noise:
        traj = add_noise(traj, cfg.noise_spec())
    oracle = lqr(sys_.A, sys_.B, cfg.weights(), cfg.tracking_spec())

    t0 = time.perf_counter()
    res = synthesize(traj, cfg.synthesis_spec(), cfg.solver_options())
    elapsed = time.perf_counter() - t0
    cmp = compare_gains(res.gains.K, res.gains.F, oracle, sys_, cfg.weights())

    print(f"== {name}: {traj.N} samples at dt={traj.dt:g}, {elapsed:.1f}s, "
          f"{res.solve.status.value} after {res.solve.inner_iterations} inner steps")
    print("K oracle\n" + format_gain(oracle.K))
    print("K synthesized\n" + format_gain(res.gains.K))
    if oracle.F is not None:
        print("F oracle     ", np.round(oracle.F.ravel(), 4))
        print("F synthesized", np.round(res.gains.F.ravel(), 4))
    print(f"max|dK|={cmp.max_abs_diff_K:.4f}  max|dF|={cmp.max_abs_diff_F}  "
          f"J/J*={cmp.cost_ratio}  stable={cmp.both_stable}")
    for w in res.warnings:
        print("warning:", w)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("presets", nargs="*", default=["a4d"], choices=sorted(PRESET_EXPERIMENTS))
    ap.add_argument("--noise", action="store_true", help="add the preset's measurement noise")
    args = ap.parse_args()
    for name in args.presets:
        run(name, args.noise)
