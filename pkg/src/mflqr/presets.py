"""Built-in plant models and excitation tables for the A-4D and B-747 experiments.

A-4D state is ``[beta, phi, p, r]`` with inputs ``[delta_a, delta_r]``; the
mixed-model plant appends first-order aileron/rudder actuator states.
B-747 state is ``[beta, r, p, phi]`` with rudder input.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .lti import ChirpSpec, LtiSystem

G_FT_S2 = 32.174

# lateral-directional dimensional derivatives, 35,000 ft, Mach 0.6
A4D_DERIVATIVES = {
    "U0": 577.0,
    "Y_beta": -60.386, "Y_p": 0.0, "Y_r": 0.0, "Y_da": -0.4783, "Y_dr": 10.459,
    "L_beta": -17.557, "L_p": -0.761, "L_r": 0.475, "L_da": 8.170, "L_dr": 4.168,
    "N_beta": 6.35, "N_p": -0.025138, "N_r": -0.2468, "N_da": 0.5703, "N_dr": -3.16,
}

A4D_ACTUATOR_TAU = (0.05, 0.1)

# (psi, f0, f1, c) per input channel; c as tabulated
A4D_CHIRPS = {
    "model-free": [(0.01, 0.1, 0.8, 0.01), (0.015, 0.1, 0.5, 0.0133)],
    "mixed": [(0.01, 0.2, 0.4, 0.0067), (-0.015, 0.1, 0.5, 0.0267)],
}


def a4d_matrices(g: float = G_FT_S2, d: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    d = A4D_DERIVATIVES if d is None else d
    U0 = d["U0"]
    A = np.array([
        [d["Y_beta"] / U0, g / U0, d["Y_p"] / U0, d["Y_r"] / U0 - 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [d["L_beta"], 0.0, d["L_p"], d["L_r"]],
        [d["N_beta"], 0.0, d["N_p"], d["N_r"]],
    ])
    B = np.array([
        [d["Y_da"] / U0, d["Y_dr"] / U0],
        [0.0, 0.0],
        [d["L_da"], d["L_dr"]],
        [d["N_da"], d["N_dr"]],
    ])
    return A, B


def actuator_matrices(tau=A4D_ACTUATOR_TAU) -> tuple[np.ndarray, np.ndarray]:
    tau = np.asarray(tau, dtype=float)
    return np.diag(-1.0 / tau), np.diag(1.0 / tau)


def augment_with_actuators(A, B, A_hat, B_hat) -> tuple[np.ndarray, np.ndarray]:
    """Joint plant ``z = [x; gamma]`` where the actuator states drive the original inputs."""
    n, pa = A.shape[0], A_hat.shape[0]
    At = np.block([[A, B], [np.zeros((pa, n)), A_hat]])
    Bt = np.vstack([np.zeros((n, B_hat.shape[1])), B_hat])
    return At, Bt


def a4d(g: float = G_FT_S2) -> LtiSystem:
    return LtiSystem(*a4d_matrices(g))


def a4d_mixed(g: float = G_FT_S2, tau=A4D_ACTUATOR_TAU) -> LtiSystem:
    A, B = a4d_matrices(g)
    return LtiSystem(*augment_with_actuators(A, B, *actuator_matrices(tau)))


def b747() -> LtiSystem:
    A = np.array([
        [-0.0558, -0.9968, 0.0802, 0.0415],
        [0.598, -0.115, -0.0318, 0.0],
        [-3.05, 0.388, -0.4650, 0.0],
        [0.0, 0.0805, 1.0, 0.0],
    ])
    B = np.array([[0.00729], [-0.475], [0.153], [0.0]])
    return LtiSystem(A, B)


def a4d_chirps(case: str = "model-free", T: float = 30.0, use_table_c: bool = True) -> list[ChirpSpec]:
    """Excitation for each input channel; ``use_table_c=False`` derives c = (f1 - f0)/T instead."""
    return [ChirpSpec(psi=psi, f0=f0, f1=f1, T=T, c=c if use_table_c else None)
            for psi, f0, f1, c in A4D_CHIRPS[case]]


def b747_chirps(T: float = 30.0) -> list[ChirpSpec]:
    return [ChirpSpec(psi=1e-4, f0=1e-4, f1=7e-2, T=T)]


def random_stable(
    rng: np.random.Generator,
    n_range=(2, 4),
    m_range=(1, 2),
    margin=(0.5, 1.5),
    max_gramian_cond: float = 1e3,
    T: float = 20.0,
    f1_max: float = 2.0,
) -> tuple[LtiSystem, list[ChirpSpec], np.ndarray]:
    """Random stable plant with one unit chirp per input and a random initial state.

    A is Gaussian, shifted so its spectral abscissa is ``-U(margin)``. Draws whose
    controllability Gramian is worse conditioned than ``max_gramian_cond`` are
    rejected: nearly uncontrollable directions cannot be excited, so no
    data-driven method can pin their gains down.
    """
    while True:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        m = int(rng.integers(m_range[0], m_range[1] + 1))
        A = rng.normal(size=(n, n))
        A -= (np.linalg.eigvals(A).real.max() + rng.uniform(*margin)) * np.eye(n)
        B = rng.normal(size=(n, m))
        if np.linalg.cond(solve_continuous_lyapunov(A, -B @ B.T)) <= max_gramian_cond:
            break
    chirps = [ChirpSpec(1.0, rng.uniform(0.05, 0.2), f1_max * rng.uniform(0.7, 1.0), T) for _ in range(m)]
    return LtiSystem(A, B), chirps, rng.normal(size=n)


SYSTEMS = {"a4d": a4d, "a4d-mixed": a4d_mixed, "b747": b747}
