"""Regulator synthesis on random stable plants.

Prints, per seed, the plant size, the gain error against the Riccati oracle at
each sampling period and the residual of the oracle pair on the data, which
should roughly halve when dt halves.
"""

import argparse

import numpy as np

from mflqr import presets
from mflqr.constraints import DecisionVector, SynthesisSpec, Variant, residual_regulator
from mflqr.lti import chirp_input, sample_and_hold, simulate
from mflqr.riccati import Weights, lqr
from mflqr.synth import synthesize


def main():
    ap = argparse.ArgumentParser(description="random regulator sweep")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--dt", type=float, nargs="+", default=[0.02, 0.01, 0.005])
    ap.add_argument("--hold", choices=["zoh", "continuous"], default="zoh")
    args = ap.parse_args()

    print("seed n m " + " ".join(f"dK@{dt:g}" for dt in args.dt) + "  oracle-residual")
    for seed in range(args.seeds):
        s, chirps, x0 = presets.random_stable(np.random.default_rng(seed))
        w = Weights(np.eye(s.n), np.eye(s.m))
        g = lqr(s.A, s.B, w)
        spec = SynthesisSpec(Variant.REGULATOR, w)
        dks, res = [], []
        for dt in args.dt:
            u = chirp_input(chirps)
            if args.hold == "zoh":
                u = sample_and_hold(u, dt)
            traj = simulate(s, u, x0, 20.0, dt)
            dks.append(np.max(np.abs(synthesize(traj, spec).gains.K - g.K)))
            dv = DecisionVector(L=np.linalg.cholesky(g.P).T, K=g.K, X=traj.Y)
            res.append(np.max(np.abs(residual_regulator(dv, traj, spec))))
        print(f"{seed:4d} {s.n} {s.m} " + " ".join(f"{d:.4f}" for d in dks)
              + "  " + " ".join(f"{r:.2e}" for r in res))


if __name__ == "__main__":
    main()
