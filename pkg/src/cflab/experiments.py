"""Experiment orchestration: seeded sweeps writing CSV metrics and SVG charts.

Each sweep cell (grid value x replication) owns its own deterministically
derived random stream, so reruns of the same configuration reproduce
metrics.csv byte for byte. Wall-clock timings go to a sidecar timings.csv
because they can never be byte-reproducible.
"""

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

import numpy as np

from . import baseline, certifier, metrics, network, trainer
from .sysmodel import SystemConfig, generate_dataset, stack_users, unstack_users

SCHEMA_VERSION = 1

METRIC_COLUMNS = (
    "schema_version",
    "method",
    "sweep_variable",
    "sweep_value",
    "replication",
    "eta",
    "num_aps",
    "num_users",
    "num_antennas",
    "worst_case_sum_rate",
    "q_ave",
    "mult_count",
    "seed",
)

TIMING_COLUMNS = ("method", "sweep_variable", "sweep_value", "replication", "wall_time_s")

_SWEEPABLE = ("eta", "users", "antennas", "lambda", "kernel")


@dataclass
class MetricsRow:
    method: str
    sweep_variable: str
    sweep_value: float
    replication: int
    eta: float
    num_aps: int
    num_users: int
    num_antennas: int
    worst_case_sum_rate: float
    q_ave: float
    mult_count: object  # int for the network, "" for methods without a formula
    wall_time_s: float
    seed: int


@dataclass
class ExperimentConfig:
    sweep: str
    grid: list
    replications: int = 1
    system: SystemConfig = field(default_factory=SystemConfig)
    training: trainer.TrainConfig = field(default_factory=trainer.TrainConfig)
    methods: tuple = ("rjapcbn", "wmmse")
    eta: float = 0.1  # base CSI error level when not swept
    layers: int = 3
    kernel: int = 3
    channels: int | None = None  # hidden conv width; defaults to 2M
    eval_count: int = 20  # held-out samples entering the metrics
    wmmse_iters: int = 15
    d_min: float = 10.0
    shadow_std_db: float = 8.0

    def __post_init__(self):
        if self.sweep not in _SWEEPABLE:
            raise ValueError(f"sweep variable must be one of {_SWEEPABLE}")
        if len(self.grid) == 0:
            raise ValueError("sweep grid must be non-empty")
        if self.replications < 1:
            raise ValueError("need at least one replication")


def _cell_setup(config, value):
    """System/training/network configuration of one sweep cell."""
    # homogeneous noise assumed across sweep cells (user counts may change)
    noise = float(np.asarray(config.system.noise_power, dtype=float).ravel()[0])
    sys_kw = dict(
        num_aps=config.system.num_aps,
        num_users=config.system.num_users,
        num_antennas=config.system.num_antennas,
        max_power=config.system.max_power,
        noise_power=noise,
        area_side=config.system.area_side,
        rng_seed=config.system.rng_seed,
    )
    train_kw = asdict(config.training)
    eta = config.eta
    kernel = config.kernel
    if config.sweep == "eta":
        eta = float(value)
    elif config.sweep == "users":
        sys_kw["num_users"] = int(value)
    elif config.sweep == "antennas":
        sys_kw["num_antennas"] = int(value)
    elif config.sweep == "lambda":
        train_kw["sparsity_weight"] = float(value)
    elif config.sweep == "kernel":
        kernel = int(value)
    system = SystemConfig(**sys_kw)
    training = trainer.TrainConfig(**train_kw)
    spec = network.default_spec(
        system.num_antennas,
        layers=config.layers,
        kernel=kernel,
        channels=config.channels,
        gate_steepness=training.gate_steepness,
    )
    return system, training, spec, eta


def _evaluate_network(dataset, spec, params, system, eval_count):
    """Mean certified worst-case sum rate and Q_ave on the last samples."""
    count = min(eval_count, len(dataset))
    rates = np.zeros(count)
    q_aves = np.zeros(count)
    for n in range(count):
        idx = len(dataset) - count + n
        est = dataset.est_h[idx]
        out = network.forward(est, spec, params, system.max_power, hard_gate=True)
        cert = certifier.certify(
            est, stack_users(out.beamformer), dataset.eps[idx], system.noise_power
        )
        rates[n] = certifier.worst_case_sum_rate(cert)
        q_aves[n] = metrics.q_ave(
            out.beamformer, zero_tol=1e-9 * np.sqrt(system.max_power)
        )
    return float(np.mean(rates)), float(np.mean(q_aves))


def _evaluate_wmmse(dataset, system, eval_count, iters):
    count = min(eval_count, len(dataset))
    rates = np.zeros(count)
    q_aves = np.zeros(count)
    for n in range(count):
        idx = len(dataset) - count + n
        est = dataset.est_h[idx]
        state = baseline.wmmse_solve(
            unstack_users(est, system.num_aps),
            system.max_power,
            system.noise_power,
            iters=iters,
        )
        cert = certifier.certify(
            est,
            stack_users(state.beamformer),
            dataset.eps[idx],
            system.noise_power,
        )
        rates[n] = certifier.worst_case_sum_rate(cert)
        q_aves[n] = metrics.q_ave(
            state.beamformer, zero_tol=1e-9 * np.sqrt(system.max_power)
        )
    return float(np.mean(rates)), float(np.mean(q_aves))


def run(config, out_dir):
    """Execute the sweep and write metrics.csv, timings.csv and SVG charts.

    Every cell generates its own dataset, trains (or solves the baseline),
    certifies on held-out channels and appends one MetricsRow per method.
    """
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run_config.json"), "w") as fh:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "sweep": config.sweep,
            "grid": list(config.grid),
            "replications": config.replications,
            "methods": list(config.methods),
            "eta": config.eta,
            "layers": config.layers,
            "kernel": config.kernel,
            "eval_count": config.eval_count,
            "wmmse_iters": config.wmmse_iters,
            "system": {
                k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in asdict(config.system).items()
            },
            "training": asdict(config.training),
        }
        json.dump(payload, fh, indent=2)

    rows = []
    for vi, value in enumerate(config.grid):
        for rep in range(config.replications):
            system, training, spec, eta = _cell_setup(config, value)
            cell_seed = int(config.system.rng_seed) * 1_000_000 + vi * 1000 + rep
            rng = np.random.default_rng([config.system.rng_seed, vi, rep])
            n_samples = training.train_size + training.test_size
            dataset = generate_dataset(
                system,
                n_samples,
                eta,
                rng,
                shadow_std_db=config.shadow_std_db,
                d_min=config.d_min,
            )
            training.seed = cell_seed
            for method in config.methods:
                start = time.perf_counter()
                if method == "rjapcbn":
                    params, _ = trainer.train(
                        dataset, spec, training, system.noise_power, system.max_power
                    )
                    rate, q_ave = _evaluate_network(
                        dataset, spec, params, system, config.eval_count
                    )
                    hidden = spec.layers[0].out_channels
                    mult = metrics.mult_count_rjapcbn(
                        system.num_aps,
                        system.num_users,
                        system.num_antennas,
                        hidden,
                        len(spec.layers),
                        spec.layers[0].kernel[0],
                        spec.layers[0].kernel[1],
                    )
                elif method == "wmmse":
                    rate, q_ave = _evaluate_wmmse(
                        dataset, system, config.eval_count, config.wmmse_iters
                    )
                    mult = ""  # no complexity formula reported for the baseline
                else:
                    raise ValueError(f"unknown method {method!r}")
                rows.append(
                    MetricsRow(
                        method=method,
                        sweep_variable=config.sweep,
                        sweep_value=float(value),
                        replication=rep,
                        eta=eta,
                        num_aps=system.num_aps,
                        num_users=system.num_users,
                        num_antennas=system.num_antennas,
                        worst_case_sum_rate=rate,
                        q_ave=q_ave,
                        mult_count=mult,
                        wall_time_s=time.perf_counter() - start,
                        seed=cell_seed,
                    )
                )
    write_metrics(os.path.join(out_dir, "metrics.csv"), rows)
    write_timings(os.path.join(out_dir, "timings.csv"), rows)
    render_charts(rows, out_dir)
    return rows


def write_metrics(path, rows):
    """Deterministic metrics CSV (wall time excluded; see timings.csv)."""
    new_file = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(METRIC_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    SCHEMA_VERSION,
                    r.method,
                    r.sweep_variable,
                    repr(r.sweep_value),
                    r.replication,
                    repr(r.eta),
                    r.num_aps,
                    r.num_users,
                    r.num_antennas,
                    repr(r.worst_case_sum_rate),
                    repr(r.q_ave),
                    r.mult_count,
                    r.seed,
                ]
            )


def write_timings(path, rows):
    new_file = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(TIMING_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.method, r.sweep_variable, repr(r.sweep_value), r.replication,
                 f"{r.wall_time_s:.3f}"]
            )


def read_metrics(path):
    """Rows of a metrics.csv as dicts with numeric fields parsed."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rec["sweep_value"] = float(rec["sweep_value"])
            rec["worst_case_sum_rate"] = float(rec["worst_case_sum_rate"])
            rec["q_ave"] = float(rec["q_ave"])
            rec["replication"] = int(rec["replication"])
            out.append(rec)
    return out


def render_charts(rows, out_dir):
    """One SVG line chart per metric: x = sweep value, series per method."""
    plt.rcParams["svg.hashsalt"] = "cflab"
    if not rows:
        return
    dict_rows = [
        r if isinstance(r, dict) else {
            "method": r.method,
            "sweep_variable": r.sweep_variable,
            "sweep_value": r.sweep_value,
            "worst_case_sum_rate": r.worst_case_sum_rate,
            "q_ave": r.q_ave,
        }
        for r in rows
    ]
    sweep_var = dict_rows[0]["sweep_variable"]
    methods = sorted({r["method"] for r in dict_rows})
    for metric_name, label in (
        ("worst_case_sum_rate", "certified worst-case sum rate (bits/s/Hz)"),
        ("q_ave", "average serving APs per user"),
    ):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for method in methods:
            xs = sorted({r["sweep_value"] for r in dict_rows if r["method"] == method})
            means = [
                np.mean(
                    [
                        r[metric_name]
                        for r in dict_rows
                        if r["method"] == method and r["sweep_value"] == x
                    ]
                )
                for x in xs
            ]
            ax.plot(xs, means, marker="o", label=method)
        ax.set_xlabel(sweep_var)
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.4)
        ax.legend()
        fig.tight_layout()
        fig.savefig(
            os.path.join(out_dir, f"{metric_name}.svg"), metadata={"Date": None}
        )
        plt.close(fig)
