"""Independent reference computations used to freeze expected values.

Nothing here imports the package's solvers; each oracle takes a different
numerical route to the same quantity.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_discrete_are


def zoh_by_integration(A, B, Ts):
    """ZOH matrices by integrating Phi' = A Phi, Gamma' = Phi B over one sample."""
    n, m = B.shape

    def rhs(_, z):
        Phi = z[:n * n].reshape(n, n)
        return np.concatenate([(A @ Phi).ravel(), (Phi @ B).ravel()])

    z0 = np.concatenate([np.eye(n).ravel(), np.zeros(n * m)])
    sol = solve_ivp(rhs, (0.0, Ts), z0, rtol=1e-12, atol=1e-14, method="DOP853")
    z = sol.y[:, -1]
    return z[:n * n].reshape(n, n), z[n * n:].reshape(n, m)


def dare_scipy(A, B, Q, R):
    P = solve_discrete_are(A, B, Q, R)
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return P, K


def scalar_filter_riccati(a, c, sw, sv, lo=0.0, hi=100.0):
    """Positive root of P = a^2 P + sw - a^2 c^2 P^2/(c^2 P + sv) by bisection."""

    def g(P):
        return a * a * P + sw - (a * c * P) ** 2 / (c * c * P + sv) - P

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(lo) * g(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def attacked_loop_final_state(A, B, C, Ac, Bc, Cc, Tc, S, a):
    """Plant state after feeding references ``a`` through the attacked closed loop from rest.

    The controller receives y~ = C Tc x_c + S a(k) (the attacker's replacement),
    the plant is driven by u = Cc x_c.
    """
    x = np.zeros(A.shape[0])
    xc = np.zeros(Ac.shape[0])
    for ak in a:
        u = Cc @ xc
        yt = C @ (Tc @ xc) + S @ ak
        x, xc = A @ x + B @ u, Ac @ xc + Bc @ yt
    return x


def chi2_grid_max(T, J, n=801):
    """Brute-force max of |T a| over a in [-sqrt(J), sqrt(J)]^2 (scalar per step, 2 steps)."""
    g = np.linspace(-np.sqrt(J), np.sqrt(J), n)
    best = 0.0
    for a0, a1 in itertools.product(g, g):
        best = max(best, abs(T[0] * a0 + T[1] * a1))
    return best


def random_sphere_best(center, radius, base, M, n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, len(center)))
    pts = center + radius * g / np.linalg.norm(g, axis=1, keepdims=True)
    vals = np.max(np.abs(base[None, :] - pts @ M.T), axis=1)
    return float(vals.max())


def mewma_run_lengths(J, beta, n_steps, seed, dim=2):
    """Sequential single-chain ARL estimate (plain loop, no vectorization)."""
    rng = np.random.default_rng(seed)
    x = np.zeros(dim)
    alarms = 0
    g = (2 - beta) / beta
    R = rng.standard_normal((n_steps, dim))
    for r in R:
        x = beta * r + (1 - beta) * x
        if g * (x @ x) > J:
            alarms += 1
            x = np.zeros(dim)
    return n_steps / max(alarms, 1)


def lyapunov_residual_cov(A, C, L, Sv, Sw_true, Sigma_nu=None, n_iter=20_000):
    """Stationary covariance of the predictor residual C e + v, e' = (A - LC) e + w - L v (+ nu)."""
    F = A - L @ C
    Q = Sw_true + L @ Sv @ L.T
    if Sigma_nu is not None:
        Q = Q + Sigma_nu
    P = np.zeros_like(A)
    for _ in range(n_iter):
        P = F @ P @ F.T + Q
    return C @ P @ C.T + Sv
