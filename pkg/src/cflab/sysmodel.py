"""Network geometry, fading channels and bounded CSI-error generation.

All randomness flows through an explicit numpy Generator, so every function
is pure and reproducible: identical seeds give bit-identical outputs.
Channels are (Q, I, M) complex tensors (AP, user, antenna); the stacked
(QM, I) matrix view used by the certification code puts AP blocks on top of
each other, antenna-major within each block.
"""

import struct
from dataclasses import dataclass

import numpy as np

# Resampling cap for the minimum-distance rejection loop.
_MAX_RESAMPLE = 1000

_DATASET_MAGIC = b"CFCH"
_DATASET_VERSION = 1


@dataclass
class SystemConfig:
    """Static parameters of one cell-free downlink scenario."""

    num_aps: int = 16
    num_users: int = 16
    num_antennas: int = 4
    max_power: float = 1.0  # per-AP budget, watts
    noise_power: object = 1.0  # per-user sigma^2, watts; scalar or length-I
    area_side: float = 1000.0  # square side, metres
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.num_aps, self.num_users, self.num_antennas) < 1:
            raise ValueError("num_aps, num_users and num_antennas must be >= 1")
        if not self.max_power > 0:
            raise ValueError("max_power must be positive")
        sigma2 = np.broadcast_to(
            np.asarray(self.noise_power, dtype=float), (self.num_users,)
        ).copy()
        if np.any(sigma2 <= 0):
            raise ValueError("noise powers must be positive")
        self.noise_power = sigma2

    @property
    def stacked_dim(self):
        return self.num_aps * self.num_antennas

    def rng(self):
        return np.random.default_rng(self.rng_seed)


@dataclass
class Topology:
    """Planar AP and user positions in metres."""

    ap_positions: np.ndarray  # (Q, 2)
    user_positions: np.ndarray  # (I, 2)

    def distances(self):
        """AP-to-user distance matrix d[q, i]."""
        diff = self.ap_positions[:, None, :] - self.user_positions[None, :, :]
        return np.sqrt(np.sum(diff**2, axis=-1))


@dataclass
class ChannelPair:
    """True channel, its estimate, and the error radii that bound the gap.

    For every user i the stacked error h_i - est_h_i lies exactly on the
    sphere of radius per_user_eps[i], and the per-link radii aggregate back
    to it: per_user_eps[i] = sqrt(sum_q per_link_eps[q, i]^2).
    """

    true_h: np.ndarray  # (Q, I, M) complex
    est_h: np.ndarray  # (Q, I, M) complex
    per_link_eps: np.ndarray  # (Q, I)
    per_user_eps: np.ndarray  # (I,)
    error_level: float


def stack_users(tensor):
    """(Q, I, M) channel/beamformer tensor -> (QM, I) matrix of stacked columns."""
    q, i, m = tensor.shape
    return np.transpose(tensor, (0, 2, 1)).reshape(q * m, i)


def unstack_users(mat, num_aps):
    """Inverse of stack_users."""
    qm, i = mat.shape
    m = qm // num_aps
    if m * num_aps != qm:
        raise ValueError("row count is not a multiple of num_aps")
    return np.transpose(mat.reshape(num_aps, m, i), (0, 2, 1))


def sample_topology(config, rng, d_min=10.0):
    """Drop APs and users independently uniformly in the square.

    Users closer than d_min (or at zero distance) to any AP are redrawn;
    a configuration where the constraint cannot be met raises.
    """
    side = config.area_side
    aps = rng.uniform(0.0, side, size=(config.num_aps, 2))
    users = rng.uniform(0.0, side, size=(config.num_users, 2))
    for _ in range(_MAX_RESAMPLE):
        d = np.sqrt(
            np.sum((aps[:, None, :] - users[None, :, :]) ** 2, axis=-1)
        )
        bad = np.any((d < d_min) | (d <= 0.0), axis=0)
        if not np.any(bad):
            return Topology(ap_positions=aps, user_positions=users)
        users[bad] = rng.uniform(0.0, side, size=(int(bad.sum()), 2))
    raise ValueError(
        f"could not place users at least {d_min} m from every AP "
        f"in a {side} m square"
    )


def large_scale_gain(d, rng, shadow_std_db=8.0):
    """Path gain (200 / d)^3 * L with lognormal shadowing.

    10*log10(L) ~ N(0, shadow_std_db^2); shadow_std_db=0 disables shadowing.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    gain = (200.0 / d) ** 3
    if shadow_std_db > 0:
        shadow_db = rng.normal(0.0, shadow_std_db, size=d.shape)
        gain = gain * 10.0 ** (shadow_db / 10.0)
    return gain if gain.ndim else float(gain)


def sample_channel(config, topo, rng, shadow_std_db=8.0, rayleigh=True):
    """Draw h[q, i, :] = sqrt(gain(d_qi)) * g with g ~ CN(0, 1) per antenna.

    rayleigh=False freezes the small-scale factor at 1 (deterministic limit
    used in tests); shadowing is controlled by shadow_std_db.
    """
    d = topo.distances()
    gain = large_scale_gain(d, rng, shadow_std_db=shadow_std_db)
    amp = np.sqrt(gain)[:, :, None]
    shape = (config.num_aps, config.num_users, config.num_antennas)
    if not rayleigh:
        return amp * np.ones(shape, dtype=complex)
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return amp * g


def perturb_channel(h, error_level, rng):
    """Split h into an estimate and a bounded error.

    Per user i the stacked error is drawn isotropically with
    ||dh_i||_2 = error_level * ||h_i||_2 exactly (sphere surface, where the
    certification bound binds), est_h = h - dh, and the per-link radii are
    the block norms of the drawn error.
    """
    if error_level < 0:
        raise ValueError("error level must be nonnegative")
    q, i, m = h.shape
    if error_level == 0:
        return ChannelPair(
            true_h=h.copy(),
            est_h=h.copy(),
            per_link_eps=np.zeros((q, i)),
            per_user_eps=np.zeros(i),
            error_level=0.0,
        )
    h_mat = stack_users(h)
    g = rng.standard_normal((q * m, i)) + 1j * rng.standard_normal((q * m, i))
    dirs = g / np.linalg.norm(g, axis=0, keepdims=True)
    radii = error_level * np.linalg.norm(h_mat, axis=0)
    delta = dirs * radii[None, :]
    est = unstack_users(h_mat - delta, q)
    per_link = np.linalg.norm(unstack_users(delta, q), axis=2)
    return ChannelPair(
        true_h=h.copy(),
        est_h=est,
        per_link_eps=per_link,
        per_user_eps=radii,
        error_level=float(error_level),
    )


def epsilon_aggregate(per_link):
    """Euclidean aggregation of per-AP radii into the stacked per-user radius."""
    e = np.asarray(per_link, dtype=float)
    if np.any(e < 0):
        raise ValueError("radii must be nonnegative")
    return float(np.sqrt(np.sum(e**2)))


@dataclass
class ChannelDataset:
    """A batch of channel realizations sharing one system geometry class.

    Arrays are stacked (QM, I) per sample; eps holds the per-user radii.
    """

    num_aps: int
    num_users: int
    num_antennas: int
    error_level: float
    seed: int
    true_h: np.ndarray  # (N, QM, I) complex
    est_h: np.ndarray  # (N, QM, I) complex
    eps: np.ndarray  # (N, I)

    def __len__(self):
        return self.true_h.shape[0]


def generate_dataset(
    config, count, error_level, rng, shadow_std_db=8.0, d_min=10.0
):
    """Draw `count` independent channel pairs, fresh topology per sample."""
    qm = config.stacked_dim
    true_h = np.empty((count, qm, config.num_users), dtype=complex)
    est_h = np.empty_like(true_h)
    eps = np.empty((count, config.num_users))
    for n in range(count):
        topo = sample_topology(config, rng, d_min=d_min)
        h = sample_channel(config, topo, rng, shadow_std_db=shadow_std_db)
        pair = perturb_channel(h, error_level, rng)
        true_h[n] = stack_users(pair.true_h)
        est_h[n] = stack_users(pair.est_h)
        eps[n] = pair.per_user_eps
    return ChannelDataset(
        num_aps=config.num_aps,
        num_users=config.num_users,
        num_antennas=config.num_antennas,
        error_level=float(error_level),
        seed=int(config.rng_seed),
        true_h=true_h,
        est_h=est_h,
        eps=eps,
    )


def save_dataset(dataset, path):
    """Write a dataset in the binary layout documented in the README.

    Header: magic 'CFCH', u32 version, u32 Q, I, M, count, f64 eta, i64 seed
    (all little-endian). Then per record: true_h and est_h as row-major
    (QM, I) complex values interleaved re/im as f64, then I f64 eps values.
    """
    n = len(dataset)
    header = _DATASET_MAGIC + struct.pack(
        "<IIIIIdq",
        _DATASET_VERSION,
        dataset.num_aps,
        dataset.num_users,
        dataset.num_antennas,
        n,
        dataset.error_level,
        dataset.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for rec in range(n):
            _interleave(dataset.true_h[rec]).tofile(fh)
            _interleave(dataset.est_h[rec]).tofile(fh)
            np.ascontiguousarray(dataset.eps[rec], dtype=np.float64).tofile(fh)


def load_dataset(path):
    """Read a dataset written by save_dataset."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DATASET_MAGIC:
            raise ValueError(f"not a channel dataset file: bad magic {magic!r}")
        version, q, i, m, count, eta, seed = struct.unpack(
            "<IIIIIdq", fh.read(struct.calcsize("<IIIIIdq"))
        )
        if version != _DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        qm = q * m
        true_h = np.empty((count, qm, i), dtype=complex)
        est_h = np.empty_like(true_h)
        eps = np.empty((count, i))
        for rec in range(count):
            true_h[rec] = _deinterleave(fh, qm, i)
            est_h[rec] = _deinterleave(fh, qm, i)
            eps[rec] = np.fromfile(fh, dtype=np.float64, count=i)
    return ChannelDataset(
        num_aps=q,
        num_users=i,
        num_antennas=m,
        error_level=eta,
        seed=seed,
        true_h=true_h,
        est_h=est_h,
        eps=eps,
    )


def _interleave(mat):
    out = np.empty(mat.shape + (2,), dtype=np.float64)
    out[..., 0] = mat.real
    out[..., 1] = mat.imag
    return out


def _deinterleave(fh, rows, cols):
    raw = np.fromfile(fh, dtype=np.float64, count=rows * cols * 2)
    raw = raw.reshape(rows, cols, 2)
    return raw[..., 0] + 1j * raw[..., 1]
