"""Rate, sparsity and complexity metrics for beamformed downlink systems."""

import numpy as np


def nominal_sinr(h_mat, v_mat, sigma2):
    """Per-user SINR |h_i^H v_i|^2 / (sum_{j != i} |h_i^H v_j|^2 + sigma_i^2).

    h_mat, v_mat: (QM, I) stacked channel and beamformer columns.
    """
    prods = h_mat.conj().T @ v_mat  # prods[i, j] = h_i^H v_j
    powers = np.abs(prods) ** 2
    signal = np.diag(powers)
    interference = powers.sum(axis=1) - signal
    return signal / (interference + np.asarray(sigma2, dtype=float))


def sum_rate(sinr):
    """Sum of log2(1 + SINR_i) in bits/s/Hz."""
    s = np.asarray(sinr, dtype=float)
    if np.any(s < 0):
        raise ValueError("SINR values must be nonnegative")
    return float(np.sum(np.log2(1.0 + s)))


def beamformer_l1(v):
    """l1 norm of the stacked real representation: sum |Re| + |Im|."""
    return float(np.sum(np.abs(v.real)) + np.sum(np.abs(v.imag)))


def penalized_sparse_sum_rate(rates, v, sparsity_weight):
    """Sum rate minus sparsity_weight times the beamformer l1 norm."""
    return float(np.sum(rates)) - sparsity_weight * beamformer_l1(v)


def q_ave(v, num_aps=None, zero_tol=1e-9):
    """Average number of serving APs per user: Q * (1 - V_zero / (QIM)).

    V_zero counts complex entries of the (Q, I, M) beamformer with modulus
    below zero_tol (hard-gated blocks are exact zeros; the tolerance only
    guards float noise and should scale with sqrt(max_power)).
    """
    q, i, m = v.shape
    if num_aps is None:
        num_aps = q
    zeros = int(np.count_nonzero(np.abs(v) < zero_tol))
    return float(num_aps * (1.0 - zeros / (q * i * m)))


def mult_count_rjapcbn(q, i, m, c, layers, k_w, k_h):
    """Real-multiplication count of the clustering/beamforming network.

    Q^2 I^2 C + QIMC + QI + QIMC k_w k_h + (L-1) QI C^2 k_w k_h.
    """
    return int(
        q * q * i * i * c
        + q * i * m * c
        + q * i
        + q * i * m * c * k_w * k_h
        + (layers - 1) * q * i * c * c * k_w * k_h
    )
