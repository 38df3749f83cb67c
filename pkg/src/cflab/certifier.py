"""Certified worst-case SINR lower bounds under bounded CSI error.

For each user the worst-case SINR over the error ball ||dh_i|| <= eps_i is
lower-bounded by alpha_i / beta_i, where alpha_i is the largest certified
lower bound on the signal power min |h_i^H v_i|^2 and beta_i the smallest
certified upper bound on the interference-plus-noise power
max sum_{j != i} |h_i^H v_j|^2 + sigma_i^2. Both sides reduce to the
feasibility of one linear matrix inequality with a single nonnegative
multiplier, so each is solved exactly by bisection on the bound with an
inner 1-D concave search over the multiplier (the smallest eigenvalue of
an affine Hermitian family is concave in the parameter).

The per-user problems are fully decoupled, so certification of a system is
just the per-user solves run independently.
"""

import json
from dataclasses import dataclass

import numpy as np

# Verification slack: a witness matrix counts as PSD down to
# -PSD_REL_TOL * ||matrix||_F.
PSD_REL_TOL = 1e-7
# The solver itself accepts only at roundoff level, so certificates stay on
# the conservative side of the exact optimum.
_ACCEPT_REL_TOL = 1e-12
# Outer bisections stop at this width relative to the converged value.
BISECT_REL_TOL = 1e-8
# Inner multiplier searches stop at this relative interval width.
SEARCH_REL_TOL = 1e-8
_MAX_DOUBLINGS = 60
_MAX_TERNARY = 200
_MAX_BISECT = 200
_HERMITIAN_ATOL = 1e-10


@dataclass
class LmiBlocks:
    """Per-user building blocks of the two feasibility matrices."""

    signal_outer: np.ndarray  # v_i v_i^H, (QM, QM)
    signal_cross: np.ndarray  # v_i v_i^H est_h_i, (QM,)
    interferers: np.ndarray  # other users' beamformers, (QM, I-1)


@dataclass
class RobustCertificate:
    """Per-user slack variables with the certified worst-case SINR.

    gamma = alpha / beta holds exactly; signal_witness / interference_witness
    are the smallest eigenvalues of the two LMIs at the returned optimum.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    mu: np.ndarray
    signal_witness: np.ndarray
    interference_witness: np.ndarray


@dataclass
class SinrBound:
    """A certified bound next to an empirical minimum over sampled errors."""

    certified: float
    sampled_min: float
    samples: int


def lmi_blocks(est_h, v_mat, user):
    """Assemble the LMI blocks of one user from stacked (QM, I) matrices."""
    v_i = v_mat[:, user]
    outer = np.outer(v_i, v_i.conj())
    others = np.delete(v_mat, user, axis=1)
    return LmiBlocks(
        signal_outer=outer,
        signal_cross=outer @ est_h[:, user],
        interferers=others,
    )


def signal_power_lmi(blocks, est_h_i, alpha, delta, eps_i):
    """Feasibility matrix certifying min over the ball of |h^H v_i|^2 >= alpha.

    [[E + delta*I, e], [e^H, est_h^H E est_h - alpha - delta*eps^2]]
    with E = v_i v_i^H and e = E est_h.
    """
    if delta < 0 or eps_i < 0:
        raise ValueError("delta and eps must be nonnegative")
    outer = blocks.signal_outer
    qm = outer.shape[0]
    if est_h_i.shape != (qm,):
        raise ValueError("channel estimate does not match the blocks")
    m = np.empty((qm + 1, qm + 1), dtype=complex)
    m[:qm, :qm] = outer + delta * np.eye(qm)
    m[:qm, qm] = blocks.signal_cross
    m[qm, :qm] = blocks.signal_cross.conj()
    quad = float(np.real(est_h_i.conj() @ outer @ est_h_i))
    m[qm, qm] = quad - alpha - delta * eps_i**2
    return m


def interference_lmi(est_h_i, interferers, beta, mu, eps_i, sigma2_i):
    """Feasibility matrix certifying max over the ball of the interference.

    [[beta - sigma^2 - mu, est_h^H V, 0], [V^H est_h, I, eps V^H],
     [0, eps V, mu I]] with V holding the other users' beamformers.
    """
    if mu < 0 or eps_i < 0 or beta < 0:
        raise ValueError("mu, eps and beta must be nonnegative")
    qm, n_others = interferers.shape
    if est_h_i.shape != (qm,):
        raise ValueError("channel estimate does not match the interferers")
    dim = 1 + n_others + qm
    m = np.zeros((dim, dim), dtype=complex)
    cross = interferers.conj().T @ est_h_i  # V^H est_h
    m[0, 0] = beta - sigma2_i - mu
    m[0, 1 : 1 + n_others] = cross.conj()
    m[1 : 1 + n_others, 0] = cross
    m[1 : 1 + n_others, 1 : 1 + n_others] = np.eye(n_others)
    m[1 : 1 + n_others, 1 + n_others :] = eps_i * interferers.conj().T
    m[1 + n_others :, 1 : 1 + n_others] = eps_i * interferers
    m[1 + n_others :, 1 + n_others :] = mu * np.eye(qm)
    return m


def min_eigenvalue(m, atol=_HERMITIAN_ATOL):
    """Smallest eigenvalue of a Hermitian matrix."""
    asym = np.max(np.abs(m - m.conj().T))
    if asym > atol:
        raise ValueError(f"matrix is not Hermitian (asymmetry {asym:.3e})")
    return float(np.linalg.eigvalsh(m)[0])


def hermitian_embedding(m):
    """Real-symmetric [[Re, -Im], [Im, Re]] carrying the same spectrum twice."""
    re, im = m.real, m.imag
    top = np.concatenate([re, -im], axis=1)
    bot = np.concatenate([im, re], axis=1)
    return np.concatenate([top, bot], axis=0)


def psd_tolerance(m):
    """Absolute eigenvalue slack below which a matrix still counts as PSD."""
    return PSD_REL_TOL * float(np.linalg.norm(m))


def worst_signal_closed_form(est_h_i, v_i, eps_i):
    """min over ||dh|| <= eps of |(est_h + dh)^H v|^2 = max(|est_h^H v| - eps ||v||, 0)^2."""
    inner = abs(np.vdot(est_h_i, v_i))
    return float(max(inner - eps_i * np.linalg.norm(v_i), 0.0) ** 2)


def interference_envelope(est_h_i, interferers, eps_i, sigma2_i):
    """Upper bound sum_j (|est_h^H v_j| + eps ||v_j||)^2 + sigma^2.

    Each interference term is maximized separately over the ball, so the sum
    dominates the joint worst case; used as the bisection bracket and as the
    differentiable training surrogate's denominator.
    """
    if interferers.size == 0:
        return float(sigma2_i)
    inner = np.abs(interferers.conj().T @ est_h_i)
    norms = np.linalg.norm(interferers, axis=0)
    return float(np.sum((inner + eps_i * norms) ** 2) + sigma2_i)


def _multiplier_search(base, diag_dir):
    """Decide whether some t >= 0 makes base + t * diag(diag_dir) PSD.

    The smallest eigenvalue of the affine Hermitian family is concave in t,
    so a doubling bracket plus a unimodal shrink is exact. Exits early when
    an evaluation clears the accept floor (feasible) or when the concavity
    upper bound proves the maximum stays below it (infeasible). The floor
    is roundoff-level relative to the data matrix. Returns (feasible, t).
    """
    n = base.shape[0]
    idx = np.arange(n)
    floor = -_ACCEPT_REL_TOL * float(np.linalg.norm(base))

    def geval(t):
        m = base.copy()
        m[idx, idx] += t * diag_dir
        return np.linalg.eigvalsh(m)[0]

    g0 = geval(0.0)
    if g0 >= floor:
        return True, 0.0
    a, ga = 0.0, g0
    b, gb = 1.0, geval(1.0)
    if gb >= floor:
        return True, b
    # Expand until the objective decreases at the right endpoint. On an
    # increasing tail the concavity bound cannot close, but the floor test
    # fires during expansion whenever the asymptote is feasible.
    if gb <= ga:
        c, gc = b, gb
        b, gb = 0.5, geval(0.5)
        if gb >= floor:
            return True, b
    else:
        c, gc = 2.0, geval(2.0)
        if gc >= floor:
            return True, c
        for _ in range(_MAX_DOUBLINGS):
            if gc <= gb:
                break
            a, ga = b, gb
            b, gb = c, gc
            t_new = 2.0 * c
            g_new = geval(t_new)
            if g_new >= floor:
                return True, t_new
            c, gc = t_new, g_new
    for _ in range(_MAX_TERNARY):
        if c - a <= SEARCH_REL_TOL * max(1.0, c):
            break
        # Concavity: chords bound the function on both sides of b.
        sl = (gb - ga) / (b - a) if b > a else np.inf
        sr = (gc - gb) / (c - b) if c > b else -np.inf
        ub = gb + max(0.0, sl * (c - b), -sr * (b - a))
        if ub < floor:
            return False, b
        if b - a >= c - b:
            t_new = 0.5 * (a + b)
        else:
            t_new = 0.5 * (b + c)
        g_new = geval(t_new)
        if g_new >= floor:
            return True, t_new
        if t_new < b:
            if g_new >= gb:
                c, gc, b, gb = b, gb, t_new, g_new
            else:
                a, ga = t_new, g_new
        else:
            if g_new >= gb:
                a, ga, b, gb = b, gb, t_new, g_new
            else:
                c, gc = t_new, g_new
    return False, b


def max_signal_power(est_h_i, v_i, eps_i):
    """Largest alpha certified by the signal LMI, with its multiplier.

    Feasibility is monotone non-increasing in alpha, so bisection on
    [0, |est_h^H v|^2] is exact up to the stated relative width.
    """
    blocks = LmiBlocks(
        signal_outer=np.outer(v_i, v_i.conj()),
        signal_cross=np.outer(v_i, v_i.conj()) @ est_h_i,
        interferers=np.empty((v_i.shape[0], 0)),
    )
    alpha_hi = float(np.abs(np.vdot(est_h_i, v_i)) ** 2)
    if alpha_hi == 0.0:
        return 0.0, 0.0

    qm = est_h_i.shape[0]
    diag_dir = np.concatenate([np.ones(qm), [-(eps_i**2)]])

    def feasible(alpha):
        base = signal_power_lmi(blocks, est_h_i, alpha, 0.0, eps_i)
        return _multiplier_search(base, diag_dir)

    ok, delta = feasible(alpha_hi)
    if ok:
        return alpha_hi, delta
    lo, lo_delta = 0.0, 0.0
    hi = alpha_hi
    for _ in range(_MAX_BISECT):
        if hi - lo <= BISECT_REL_TOL * max(lo, 1e-12 * alpha_hi):
            break
        mid = 0.5 * (lo + hi)
        ok, delta = feasible(mid)
        if ok:
            lo, lo_delta = mid, delta
        else:
            hi = mid
    return lo, lo_delta


def min_interference_power(est_h_i, interferers, eps_i, sigma2_i):
    """Smallest beta certified by the interference LMI, with its multiplier.

    Feasibility is monotone non-decreasing in beta; the bracket is
    [sigma^2, interference_envelope] (the envelope always certifies).
    """
    if interferers.size == 0 or not np.any(interferers):
        return float(sigma2_i), 0.0

    qm, n_others = interferers.shape
    diag_dir = np.concatenate([[-1.0], np.zeros(n_others), np.ones(qm)])

    def feasible(beta):
        base = interference_lmi(est_h_i, interferers, beta, 0.0, eps_i, sigma2_i)
        return _multiplier_search(base, diag_dir)

    lo = float(sigma2_i)
    ok, mu = feasible(lo)
    if ok:
        return lo, mu
    hi = interference_envelope(est_h_i, interferers, eps_i, sigma2_i)
    ok, hi_mu = feasible(hi)
    attempts = 0
    while not ok:  # numerical edge: nudge the analytic bracket outward
        hi *= 1.0 + 1e-9
        ok, hi_mu = feasible(hi)
        attempts += 1
        if attempts > 100:
            raise RuntimeError("interference envelope failed to certify")
    for _ in range(_MAX_BISECT):
        if hi - lo <= BISECT_REL_TOL * hi:
            break
        mid = 0.5 * (lo + hi)
        ok, mu = feasible(mid)
        if ok:
            hi, hi_mu = mid, mu
        else:
            lo = mid
    return hi, hi_mu


def certify(est_h, v_mat, eps, sigma2):
    """Certify every user's worst-case SINR lower bound.

    est_h, v_mat: (QM, I) stacked estimates and beamformers; eps, sigma2:
    per-user radii and noise powers. The objective separates per user and
    each LMI involves one user's slacks only, so the per-user solves are
    exact for the joint problem.
    """
    qm, users = est_h.shape
    if v_mat.shape != (qm, users):
        raise ValueError("beamformer matrix shape mismatch")
    eps = np.asarray(eps, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    alpha = np.zeros(users)
    beta = np.zeros(users)
    delta = np.zeros(users)
    mu = np.zeros(users)
    sig_wit = np.zeros(users)
    int_wit = np.zeros(users)
    for i in range(users):
        h_i = est_h[:, i]
        blocks = lmi_blocks(est_h, v_mat, i)
        alpha[i], delta[i] = max_signal_power(h_i, v_mat[:, i], eps[i])
        beta[i], mu[i] = min_interference_power(
            h_i, blocks.interferers, eps[i], sigma2[i]
        )
        sig_wit[i] = min_eigenvalue(
            signal_power_lmi(blocks, h_i, alpha[i], delta[i], eps[i])
        )
        int_wit[i] = min_eigenvalue(
            interference_lmi(h_i, blocks.interferers, beta[i], mu[i], eps[i], sigma2[i])
        )
    return RobustCertificate(
        alpha=alpha,
        beta=beta,
        gamma=alpha / beta,
        delta=delta,
        mu=mu,
        signal_witness=sig_wit,
        interference_witness=int_wit,
    )


def worst_case_sum_rate(cert):
    """Certified sum rate sum_i log2(1 + gamma_i)."""
    if np.any(cert.gamma < 0):
        raise ValueError("certified SINRs must be nonnegative")
    return float(np.sum(np.log2(1.0 + cert.gamma)))


def sampling_oracle(est_h_i, v_mat, user, eps_i, sigma2_i, n, rng):
    """Minimum SINR of `user` over n boundary error draws ||dh|| = eps.

    Monte-Carlo validator for the certificate: the certified gamma may
    never exceed any sampled value.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    qm = est_h_i.shape[0]
    if eps_i == 0.0:
        h = est_h_i[None, :]
    else:
        g = rng.standard_normal((n, qm)) + 1j * rng.standard_normal((n, qm))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        h = est_h_i[None, :] + eps_i * g
    prods = h.conj() @ v_mat  # (n, I)
    powers = np.abs(prods) ** 2
    signal = powers[:, user]
    interference = powers.sum(axis=1) - signal
    sinr = signal / (interference + sigma2_i)
    return float(sinr.min())


def certified_bound(est_h, v_mat, eps, sigma2, user, n, rng):
    """Certificate and sampled minimum for one user, bundled."""
    cert = certify(est_h, v_mat, eps, sigma2)
    sampled = sampling_oracle(
        est_h[:, user], v_mat, user, float(eps[user]), float(sigma2[user]), n, rng
    )
    return SinrBound(
        certified=float(cert.gamma[user]), sampled_min=sampled, samples=n
    )


def export_certificate(cert, path):
    """Write per-user slack records as structured text (JSON)."""
    records = []
    for i in range(cert.alpha.shape[0]):
        records.append(
            {
                "user": i,
                "alpha": cert.alpha[i],
                "beta": cert.beta[i],
                "gamma": cert.gamma[i],
                "delta": cert.delta[i],
                "mu": cert.mu[i],
                "signal_min_eig": cert.signal_witness[i],
                "interference_min_eig": cert.interference_witness[i],
            }
        )
    payload = {
        "format": "cflab-certificate",
        "version": 1,
        "worst_case_sum_rate": worst_case_sum_rate(cert),
        "users": records,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
