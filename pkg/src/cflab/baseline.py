"""WMMSE sum-rate beamforming baseline.

Block updates on the MSE reformulation: scalar MMSE receivers, inverse-MSE
weights, then a regularized least-squares beamformer update under the
relaxed total budget Q * p_max (dual variable found by bisection on the
power curve). The per-AP constraint is enforced afterwards by the same
per-AP projection the neural pipeline uses, reported separately because
the projection deliberately trades optimality for feasibility.
"""

from dataclasses import dataclass

import numpy as np

from . import metrics
from .network import power_project
from .sysmodel import stack_users, unstack_users

_EIG_FLOOR = 1e-12  # relative cutoff separating A's numerical null space
_POWER_TOL = 1e-12


@dataclass
class WmmseState:
    receivers: np.ndarray  # (I,) complex MMSE scalars
    weights: np.ndarray  # (I,) >= 1
    beamformer: np.ndarray  # (Q, I, M) complex, per-AP feasible
    beamformer_relaxed: np.ndarray  # (QM, I) converged total-power iterate
    objective: float  # nominal sum rate of the relaxed iterate
    objective_trace: np.ndarray  # per-iteration nominal sum rate


def _dual_bisect(s, coef_sq, p_total):
    """Smallest nu >= 0 with power(nu) = sum_k coef_sq_k / (s_k + nu)^2 <= p_total."""

    def power(nu):
        return float(np.sum(coef_sq / (s + nu) ** 2))

    if power(0.0) <= p_total:
        return 0.0
    hi = 1.0
    while power(hi) > p_total:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if power(mid) > p_total:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _POWER_TOL * max(1.0, hi):
            break
    return hi


def wmmse_solve(est_h, p_max, sigma2, iters=15):
    """Iterate the WMMSE block updates on a (Q, I, M) channel estimate.

    Returns a WmmseState; .beamformer satisfies the per-AP budget, the
    monotone objective trace refers to the relaxed total-power iterates.
    """
    if iters < 1:
        raise ValueError("need at least one iteration")
    q, users, m = est_h.shape
    qm = q * m
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (users,))
    h = stack_users(est_h)  # (QM, I)
    norms = np.linalg.norm(h, axis=0)
    if not np.any(norms > 0):
        zeros = np.zeros((q, users, m), dtype=complex)
        return WmmseState(
            receivers=np.zeros(users, dtype=complex),
            weights=np.ones(users),
            beamformer=zeros,
            beamformer_relaxed=np.zeros((qm, users), dtype=complex),
            objective=0.0,
            objective_trace=np.zeros(iters),
        )

    p_total = q * p_max
    # matched-filter start at an equal share of the budget
    v = np.zeros((qm, users), dtype=complex)
    share = np.sqrt(p_total / users)
    for i in range(users):
        if norms[i] > 0:
            v[:, i] = share * h[:, i] / norms[i]

    trace = np.zeros(iters)
    u = np.zeros(users, dtype=complex)
    w = np.ones(users)
    for it in range(iters):
        prods = h.conj().T @ v  # prods[i, j] = h_i^H v_j
        totals = np.sum(np.abs(prods) ** 2, axis=1) + sigma2
        u = np.diag(prods) / totals
        mse = 1.0 - np.real(np.conj(u) * np.diag(prods))
        mse = np.maximum(mse, 1e-15)
        w = 1.0 / mse

        scaled = h * (np.sqrt(w) * np.abs(u))[None, :]
        a = scaled @ scaled.conj().T  # sum_i w_i |u_i|^2 h_i h_i^H
        s, vecs = np.linalg.eigh(a)
        s = np.maximum(s, 0.0)
        keep = s > _EIG_FLOOR * max(s[-1], 1e-300)
        if not np.any(keep):
            trace[it] = trace[it - 1] if it else 0.0
            continue
        coef = vecs.conj().T @ (h * (w * u)[None, :])  # eigenbasis rhs, (QM, I)
        coef = coef[keep]
        s_kept = s[keep]
        coef_sq = np.abs(coef) ** 2
        nu = _dual_bisect(s_kept, coef_sq.sum(axis=1), p_total)
        v = vecs[:, keep] @ (coef / (s_kept[:, None] + nu))
        trace[it] = metrics.sum_rate(metrics.nominal_sinr(h, v, sigma2))

    projected = power_project(unstack_users(v, q), p_max)
    return WmmseState(
        receivers=u,
        weights=w,
        beamformer=projected,
        beamformer_relaxed=v,
        objective=float(trace[-1]),
        objective_trace=trace,
    )
