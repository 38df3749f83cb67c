"""Unsupervised training of the clustering/beamforming network.

The training loss is the negative penalized sum rate with a differentiable
worst-case-SINR surrogate: the exact closed-form signal lower bound over
the error ball divided by the per-term interference envelope. The
surrogate never exceeds the LMI-certified bound, which is reserved for
(non-differentiated) evaluation and reporting.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import certifier, metrics, network
from .sysmodel import stack_users, unstack_users

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CURVE_COLUMNS = (
    "epoch",
    "total_loss",
    "rate_term",
    "sparsity_term",
    "certified_rate",
    "q_ave",
)


@dataclass
class TrainConfig:
    sparsity_weight: float = 0.1  # lambda in the penalized objective
    gate_steepness: float = 50.0  # logistic amplification k
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    train_size: int = 500
    test_size: int = 200
    seed: int = 0
    certified_eval_count: int = 8  # held-out samples certified per epoch
    normalize_input: bool = True
    norm_correct_power: bool = False

    def __post_init__(self):
        if self.sparsity_weight < 0:
            raise ValueError("sparsity weight must be nonnegative")
        if self.gate_steepness <= 0:
            raise ValueError("gate steepness must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 1 or self.train_size < 1:
            raise ValueError("epochs and train size must be at least 1")


@dataclass
class LossReport:
    total: float
    rate_term: float
    sparsity_term: float
    certified_rate: float | None = None
    q_ave: float | None = None


class TrainingDivergence(RuntimeError):
    """Loss or gradient went non-finite; carries the last finite state."""

    def __init__(self, message, params):
        super().__init__(message)
        self.params = params


def surrogate_gamma(est_h_i, v_mat, user, eps_i, sigma2_i):
    """Differentiable worst-case SINR lower bound of one user.

    Exact closed-form numerator over the per-term interference envelope;
    never exceeds the certified bound (numerator matches, envelope >= beta*).
    """
    v_i = v_mat[:, user]
    others = np.delete(v_mat, user, axis=1)
    num = certifier.worst_signal_closed_form(est_h_i, v_i, eps_i)
    den = certifier.interference_envelope(est_h_i, others, eps_i, sigma2_i)
    return num / den


def surrogate_gammas(est_h, v_mat, eps, sigma2):
    """surrogate_gamma for every user of one system."""
    users = est_h.shape[1]
    return np.array(
        [
            surrogate_gamma(est_h[:, i], v_mat, i, float(eps[i]), float(sigma2[i]))
            for i in range(users)
        ]
    )


def loss(est_batch, v_batch, eps, sigma2, sparsity_weight, certify=False):
    """Batch-mean penalized surrogate loss, reported per term.

    est_batch: (B, QM, I) estimates; v_batch: (B, Q, I, M) beamformers;
    eps: (B, I) radii. The report satisfies
    total = -(rate_term - lambda * sparsity_term) by construction. With
    certify=True the mean LMI-certified sum rate and the mean number of
    serving APs are evaluated as well (no gradients involved).
    """
    batch = est_batch.shape[0]
    rates = np.zeros(batch)
    l1 = np.zeros(batch)
    certified = np.zeros(batch)
    q_aves = np.zeros(batch)
    for n in range(batch):
        v_mat = stack_users(v_batch[n])
        gammas = surrogate_gammas(est_batch[n], v_mat, eps[n], sigma2)
        rates[n] = float(np.sum(np.log2(1.0 + gammas)))
        l1[n] = metrics.beamformer_l1(v_batch[n])
        if certify:
            cert = certifier.certify(est_batch[n], v_mat, eps[n], sigma2)
            certified[n] = certifier.worst_case_sum_rate(cert)
            q_aves[n] = metrics.q_ave(v_batch[n])
    rate_term = float(np.mean(rates))
    sparsity_term = float(np.mean(l1))
    return LossReport(
        total=-(rate_term - sparsity_weight * sparsity_term),
        rate_term=rate_term,
        sparsity_term=sparsity_term,
        certified_rate=float(np.mean(certified)) if certify else None,
        q_ave=float(np.mean(q_aves)) if certify else None,
    )


def surrogate_loss_graph(graph, est_batch, eps, sigma2, sparsity_weight):
    """Attach the differentiable loss to a forward graph.

    graph: output of network.forward_graph on est_batch. Returns the scalar
    loss tensor -mean_b(sum_i log2(1 + gamma_i) - lambda * l1_b).
    """
    re, im = graph["re"], graph["im"]
    batch, qm, users = est_batch.shape
    m = re.value.shape[3]
    q = qm // m
    hr = ad.as_tensor(np.stack([unstack_users(e, q) for e in est_batch.real]))
    hi = ad.as_tensor(np.stack([unstack_users(e, q) for e in est_batch.imag]))

    # a[b, i, j] = h_i^H v_j split into real and imaginary parts
    re_a = ad.add(
        ad.einsum("bqim,bqjm->bij", hr, re), ad.einsum("bqim,bqjm->bij", hi, im)
    )
    im_a = ad.sub(
        ad.einsum("bqim,bqjm->bij", hr, im), ad.einsum("bqim,bqjm->bij", hi, re)
    )
    mag = ad.sqrt(ad.add(ad.square(re_a), ad.square(im_a)))  # |h_i^H v_j|
    norm_v = ad.sqrt(
        ad.add(ad.einsum("bqjm,bqjm->bj", re, re), ad.einsum("bqjm,bqjm->bj", im, im))
    )

    eye = np.eye(users)
    eps = np.asarray(eps, dtype=float)
    diag_mag = ad.tsum(ad.mul(mag, eye), axis=2)  # (B, I) signal products
    numerator = ad.square(
        ad.relu(ad.sub(diag_mag, ad.mul(ad.as_tensor(eps), norm_v)))
    )
    eps_rows = ad.reshape(ad.as_tensor(eps), (batch, users, 1))
    cross = ad.square(
        ad.add(mag, ad.mul(eps_rows, ad.reshape(norm_v, (batch, 1, users))))
    )
    denominator = ad.add(
        ad.tsum(ad.mul(cross, 1.0 - eye), axis=2),
        np.asarray(sigma2, dtype=float),
    )
    gammas = ad.div(numerator, denominator)
    rate = ad.tsum(ad.log2(ad.add(gammas, 1.0)), axis=1)  # (B,)
    l1 = ad.add(
        ad.tsum(ad.absolute(re), axis=(1, 2, 3)),
        ad.tsum(ad.absolute(im), axis=(1, 2, 3)),
    )
    objective = ad.sub(rate, ad.mul(l1, float(sparsity_weight)))
    return ad.mul(ad.tmean(objective), -1.0)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict


def adam_init(params):
    names = network.trainable(params)
    return AdamState(
        step=0,
        m={k: np.zeros_like(a) for k, a in names.items()},
        v={k: np.zeros_like(a) for k, a in names.items()},
    )


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, in place on the parameter arrays."""
    state.step += 1
    t = state.step
    for name, arr in network.trainable(params).items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name}")
        state.m[name] = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g**2
        m_hat = state.m[name] / (1 - ADAM_BETA1**t)
        v_hat = state.v[name] / (1 - ADAM_BETA2**t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# ---------------------------------------------------------------------------
# training loop


def _copy_params(params):
    return network.NetParams(
        conv_w=[a.copy() for a in params.conv_w],
        conv_b=[a.copy() for a in params.conv_b],
        bn_scale=[a.copy() for a in params.bn_scale],
        bn_shift=[a.copy() for a in params.bn_shift],
        bn_mean=[a.copy() for a in params.bn_mean],
        bn_var=[a.copy() for a in params.bn_var],
        identity_w=params.identity_w.copy(),
        identity_b=params.identity_b.copy(),
        attention_w=params.attention_w.copy(),
        attention_b=params.attention_b.copy(),
    )


def _train_step(est_batch, eps_batch, spec, params, sigma2, p_max, config):
    graph = network.forward_graph(
        est_batch,
        spec,
        params,
        p_max,
        training=True,
        normalize_input=config.normalize_input,
        norm_correct_power=config.norm_correct_power,
    )
    loss_t = surrogate_loss_graph(
        graph, est_batch, eps_batch, sigma2, config.sparsity_weight
    )
    loss_t.backward()
    grads = {
        name: t.grad for name, t in graph["params"].items() if t.grad is not None
    }
    return float(loss_t.value), grads


def evaluate(dataset_slice, spec, params, sigma2, p_max, config, certify_count=0):
    """Held-out evaluation: surrogate report plus hard-gate certified metrics."""
    est, eps = dataset_slice
    batch = est.shape[0]
    q = spec_num_aps(spec, est.shape[1])
    v_soft = np.empty((batch, q, est.shape[2], spec.num_antennas), dtype=complex)
    v_hard = np.empty_like(v_soft)
    for n in range(batch):
        v_soft[n] = network.forward(
            est[n], spec, params, p_max,
            normalize_input=config.normalize_input,
            norm_correct_power=config.norm_correct_power,
        ).beamformer
        v_hard[n] = network.forward(
            est[n], spec, params, p_max, hard_gate=True,
            normalize_input=config.normalize_input,
            norm_correct_power=config.norm_correct_power,
        ).beamformer
    report = loss(est, v_soft, eps, sigma2, config.sparsity_weight)
    q_aves = [metrics.q_ave(v_hard[n]) for n in range(batch)]
    certified = None
    if certify_count > 0:
        count = min(certify_count, batch)
        vals = np.zeros(count)
        for n in range(count):
            cert = certifier.certify(est[n], stack_users(v_hard[n]), eps[n], sigma2)
            vals[n] = certifier.worst_case_sum_rate(cert)
        certified = float(np.mean(vals))
    report.certified_rate = certified
    report.q_ave = float(np.mean(q_aves))
    return report


def spec_num_aps(spec, stacked_dim):
    return stacked_dim // spec.num_antennas


def train(dataset, spec, config, sigma2, p_max, out_dir=None):
    """Mini-batch Adam on the surrogate loss with per-epoch held-out reports.

    dataset: ChannelDataset whose first train_size samples train and whose
    last test_size samples are held out. Returns (params, curve) where
    curve is a list of per-epoch LossReport. With out_dir set, appends the
    curve to curve.csv and writes a checkpoint per epoch.
    """
    total = len(dataset)
    if config.train_size + config.test_size > total:
        raise ValueError(
            f"dataset holds {total} samples, need train {config.train_size} "
            f"+ test {config.test_size}"
        )
    spec.gate_steepness = config.gate_steepness
    q = dataset.num_aps
    network.require_valid(spec, q, dataset.num_users, dataset.num_antennas)

    rng = np.random.default_rng(config.seed)
    params = network.init_params(spec, dataset.num_antennas, rng)
    state = adam_init(params)
    train_est = dataset.est_h[: config.train_size]
    train_eps = dataset.eps[: config.train_size]
    test_slice = (
        dataset.est_h[total - config.test_size :],
        dataset.eps[total - config.test_size :],
    )

    curve = []
    last_good = _copy_params(params)
    for epoch in range(config.epochs):
        order = rng.permutation(config.train_size)
        for start in range(0, config.train_size, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                loss_val, grads = _train_step(
                    train_est[idx], train_eps[idx], spec, params, sigma2, p_max, config
                )
            except ValueError as err:
                raise TrainingDivergence(str(err), last_good) from err
            if not np.isfinite(loss_val):
                raise TrainingDivergence(
                    f"loss became {loss_val} in epoch {epoch}", last_good
                )
            adam_step(params, grads, state, config.learning_rate)
        report = evaluate(
            test_slice, spec, params, sigma2, p_max, config,
            certify_count=config.certified_eval_count,
        )
        curve.append(report)
        last_good = _copy_params(params)
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            _append_curve(os.path.join(out_dir, "curve.csv"), epoch, report)
            network.save_checkpoint(
                os.path.join(out_dir, f"checkpoint_epoch{epoch:03d}.npz"),
                spec,
                params,
                extra={"epoch": epoch, "seed": config.seed},
            )
    return params, curve


def _append_curve(path, epoch, report):
    new_file = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(CURVE_COLUMNS)
        writer.writerow(
            [
                epoch,
                repr(report.total),
                repr(report.rate_term),
                repr(report.sparsity_term),
                "" if report.certified_rate is None else repr(report.certified_rate),
                "" if report.q_ave is None else repr(report.q_ave),
            ]
        )


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradProbe:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float
    kink: bool


@dataclass
class GradCheckReport:
    probes: list
    kinks_excluded: int
    saturated_excluded: int

    @property
    def max_rel_error(self):
        errs = [p.rel_error for p in self.probes if not p.kink]
        return max(errs) if errs else 0.0


def gradient_check(
    spec,
    params,
    probe_count,
    rng,
    num_aps=4,
    num_users=4,
    error_level=0.1,
    sparsity_weight=0.1,
    sigma2=1.0,
    p_max=1.0,
    batch=4,
    step=1e-5,
    kink_slope_ratio=0.01,
):
    """Compare analytic gradients of the full surrogate loss against central
    finite differences at randomly probed parameters.

    Probes where the one-sided slopes disagree by more than
    kink_slope_ratio (relative) are flagged as kinks and excluded. Probes
    whose gradient signal sits below the finite-difference measurement
    floor (saturated gate regions, dead relu paths) are excluded too: a
    central difference cannot resolve loss changes near roundoff of the
    loss itself.
    """
    m = spec.num_antennas
    qm = num_aps * m
    est = rng.standard_normal((batch, qm, num_users)) + 1j * rng.standard_normal(
        (batch, qm, num_users)
    )
    eps = error_level * np.linalg.norm(est, axis=1)
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (num_users,))
    config = TrainConfig(
        sparsity_weight=sparsity_weight, gate_steepness=spec.gate_steepness
    )

    def loss_value():
        graph = network.forward_graph(est, spec, params, p_max, training=True)
        t = surrogate_loss_graph(graph, est, eps, sigma2, config.sparsity_weight)
        return float(t.value)

    graph = network.forward_graph(est, spec, params, p_max, training=True)
    loss_t = surrogate_loss_graph(graph, est, eps, sigma2, config.sparsity_weight)
    loss_t.backward()
    grads = {name: t.grad for name, t in graph["params"].items()}
    f0 = float(loss_t.value)

    views = network.trainable(params)
    names = [n for n, a in views.items() if a.size > 0]
    signal_floor = 1e-9 * max(1.0, abs(f0))
    probes = []
    clean = 0
    kinks = 0
    saturated = 0
    attempts = 0
    while clean < probe_count and attempts < 20 * probe_count:
        attempts += 1
        name = names[int(rng.integers(len(names)))]
        arr = views[name]
        flat = int(rng.integers(arr.size))
        index = np.unravel_index(flat, arr.shape) if arr.shape else ()
        h = step * max(1.0, abs(float(arr[index])))
        orig = float(arr[index])
        arr[index] = orig + h
        f_plus = loss_value()
        arr[index] = orig - h
        f_minus = loss_value()
        arr[index] = orig
        numeric = (f_plus - f_minus) / (2 * h)
        slope_plus = (f_plus - f0) / h
        slope_minus = (f0 - f_minus) / h
        slope_scale = max(abs(slope_plus), abs(slope_minus))
        kink = slope_scale > 0 and (
            abs(slope_plus - slope_minus) > kink_slope_ratio * slope_scale
        )
        g = grads.get(name)
        analytic = float(g[index]) if g is not None else 0.0
        scale = max(abs(analytic), abs(numeric))
        if scale < signal_floor:
            saturated += 1
            continue
        if kink:
            kinks += 1
            probes.append(
                GradProbe(name, index, analytic, numeric, np.inf, kink=True)
            )
            continue
        rel = abs(analytic - numeric) / scale
        probes.append(GradProbe(name, index, analytic, numeric, rel, kink=False))
        clean += 1
    return GradCheckReport(
        probes=probes, kinks_excluded=kinks, saturated_excluded=saturated
    )
