"""Command-line laboratory: data generation, training, certification,
baseline runs, sweeps and report rendering.

Output lands under --out when given, else under $CFLAB_OUTPUT_ROOT
(default ./runs). Every data-touching subcommand requires --seed so runs
are reproducible; rerunning a command with the same arguments rewrites
identical metrics.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import baseline, certifier, experiments, metrics, network, trainer
from .sysmodel import (
    SystemConfig,
    generate_dataset,
    load_dataset,
    save_dataset,
    stack_users,
    unstack_users,
)

OUTPUT_ROOT_ENV = "CFLAB_OUTPUT_ROOT"


def output_root():
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _add_system_flags(p):
    p.add_argument("--aps", type=int, default=4, help="number of APs (Q)")
    p.add_argument("--users", type=int, default=4, help="number of users (I)")
    p.add_argument("--antennas", type=int, default=2, help="antennas per AP (M)")
    p.add_argument("--p-max", type=float, default=1.0, help="per-AP power budget")
    p.add_argument("--noise-power", type=float, default=1.0, help="per-user noise power")
    p.add_argument("--area-side", type=float, default=300.0, help="square side in metres")
    p.add_argument("--d-min", type=float, default=10.0, help="minimum AP-user distance")
    p.add_argument(
        "--shadow-std-db", type=float, default=8.0, help="lognormal shadowing std (dB)"
    )


def _add_train_flags(p):
    p.add_argument("--lam", type=float, default=0.1, help="sparsity weight lambda")
    p.add_argument(
        "--gate-steepness", type=float, default=50.0, help="cluster gate amplification"
    )
    p.add_argument(
        "--lr",
        type=float,
        default=1e-3,
        help="Adam learning rate (0.1 available for the aggressive schedule)",
    )
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--train-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=200)
    p.add_argument(
        "--certify-per-epoch",
        type=int,
        default=8,
        help="held-out samples certified per epoch (0 disables)",
    )
    p.add_argument("--layers", type=int, default=3, help="conv layers in the residual stack")
    p.add_argument("--kernel", type=int, default=3, help="odd conv kernel size")
    p.add_argument(
        "--channels", type=int, default=None, help="hidden conv channels (default 2M)"
    )
    p.add_argument(
        "--norm-correct-power",
        action="store_true",
        help="scale over-budget APs by sqrt(p_max/power) instead of p_max/power",
    )


def _system_from_args(args, seed):
    return SystemConfig(
        num_aps=args.aps,
        num_users=args.users,
        num_antennas=args.antennas,
        max_power=args.p_max,
        noise_power=args.noise_power,
        area_side=args.area_side,
        rng_seed=seed,
    )


def _train_config_from_args(args):
    return trainer.TrainConfig(
        sparsity_weight=args.lam,
        gate_steepness=args.gate_steepness,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        train_size=args.train_size,
        test_size=args.test_size,
        seed=args.seed,
        certified_eval_count=args.certify_per_epoch,
        norm_correct_power=args.norm_correct_power,
    )


def _resolve_out(args, default_name):
    if args.out:
        return args.out
    return os.path.join(output_root(), default_name)


def cmd_gen_data(args):
    system = _system_from_args(args, args.seed)
    rng = np.random.default_rng(args.seed)
    dataset = generate_dataset(
        system,
        args.count,
        args.eta,
        rng,
        shadow_std_db=args.shadow_std_db,
        d_min=args.d_min,
    )
    out = args.out or os.path.join(output_root(), f"channels_seed{args.seed}.cfch")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_dataset(dataset, out)
    print(
        f"wrote {args.count} channel pairs (Q={system.num_aps} I={system.num_users} "
        f"M={system.num_antennas} eta={args.eta}) to {out}"
    )
    return 0


def cmd_train(args):
    dataset = load_dataset(args.data)
    spec = network.default_spec(
        dataset.num_antennas,
        layers=args.layers,
        kernel=args.kernel,
        channels=args.channels,
        gate_steepness=args.gate_steepness,
    )
    config = _train_config_from_args(args)
    out_dir = _resolve_out(args, f"train_seed{args.seed}")
    sigma2 = np.full(dataset.num_users, args.noise_power)
    params, curve = trainer.train(
        dataset, spec, config, sigma2, args.p_max, out_dir=out_dir
    )
    final = curve[-1]
    print(f"trained {config.epochs} epochs -> {out_dir}")
    print(
        f"final: loss {final.total:.4f} rate {final.rate_term:.4f} "
        f"l1 {final.sparsity_term:.4f} certified {final.certified_rate} "
        f"q_ave {final.q_ave}"
    )
    return 0


def cmd_certify(args):
    dataset = load_dataset(args.data)
    spec, params, _ = network.load_checkpoint(args.checkpoint)
    sigma2 = np.full(dataset.num_users, args.noise_power)
    count = min(args.count, len(dataset)) if args.count else len(dataset)
    out_dir = _resolve_out(args, f"certify_seed{args.seed}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    rates = []
    records = []
    for n in range(count):
        est = dataset.est_h[n]
        result = network.forward(
            est, spec, params, args.p_max, hard_gate=not args.soft_gate
        )
        cert = certifier.certify(
            est, stack_users(result.beamformer), dataset.eps[n], sigma2
        )
        rate = certifier.worst_case_sum_rate(cert)
        rates.append(rate)
        sampled = [
            certifier.sampling_oracle(
                est[:, i],
                stack_users(result.beamformer),
                i,
                float(dataset.eps[n][i]),
                float(sigma2[i]),
                args.oracle_samples,
                rng,
            )
            for i in range(dataset.num_users)
        ]
        records.append(
            {
                "sample": n,
                "worst_case_sum_rate": rate,
                "q_ave": metrics.q_ave(result.beamformer),
                "gamma": cert.gamma.tolist(),
                "alpha": cert.alpha.tolist(),
                "beta": cert.beta.tolist(),
                "delta": cert.delta.tolist(),
                "mu": cert.mu.tolist(),
                "signal_min_eig": cert.signal_witness.tolist(),
                "interference_min_eig": cert.interference_witness.tolist(),
                "sampled_min_sinr": sampled,
            }
        )
    path = os.path.join(out_dir, "certificates.json")
    with open(path, "w") as fh:
        json.dump(
            {"format": "cflab-certificate", "version": 1, "records": records},
            fh,
            indent=2,
        )
    print(f"certified {count} samples -> {path}")
    print(f"mean certified worst-case sum rate: {float(np.mean(rates)):.4f}")
    return 0


def cmd_baseline(args):
    dataset = load_dataset(args.data)
    sigma2 = np.full(dataset.num_users, args.noise_power)
    count = min(args.count, len(dataset)) if args.count else len(dataset)
    nominal = []
    certified = []
    for n in range(count):
        est = dataset.est_h[n]
        state = baseline.wmmse_solve(
            unstack_users(est, dataset.num_aps), args.p_max, sigma2, iters=args.iters
        )
        nominal.append(state.objective)
        cert = certifier.certify(
            est, stack_users(state.beamformer), dataset.eps[n], sigma2
        )
        certified.append(certifier.worst_case_sum_rate(cert))
    print(
        f"wmmse over {count} samples: nominal {float(np.mean(nominal)):.4f} "
        f"certified worst-case {float(np.mean(certified)):.4f}"
    )
    return 0


def cmd_sweep(args):
    system = _system_from_args(args, args.seed)
    training = _train_config_from_args(args)
    config = experiments.ExperimentConfig(
        sweep=args.variable,
        grid=args.grid,
        replications=args.replications,
        system=system,
        training=training,
        methods=tuple(args.methods),
        eta=args.eta,
        layers=args.layers,
        kernel=args.kernel,
        channels=args.channels,
        eval_count=args.eval_count,
        wmmse_iters=args.iters,
        d_min=args.d_min,
        shadow_std_db=args.shadow_std_db,
    )
    out_dir = _resolve_out(args, f"sweep_{args.variable}_seed{args.seed}")
    rows = experiments.run(config, out_dir)
    print(f"sweep {args.variable} over {args.grid} -> {out_dir}")
    for row in rows:
        print(
            f"  {row.method} {args.variable}={row.sweep_value} rep={row.replication}: "
            f"rate {row.worst_case_sum_rate:.4f} q_ave {row.q_ave:.3f}"
        )
    return 0


def cmd_report(args):
    rows = experiments.read_metrics(os.path.join(args.run, "metrics.csv"))
    if not rows:
        print("no metric rows found", file=sys.stderr)
        return 1
    experiments.render_charts(rows, args.run)
    methods = sorted({r["method"] for r in rows})
    sweep_var = rows[0]["sweep_variable"]
    print(f"{'method':>10} {sweep_var:>10} {'rate':>10} {'q_ave':>8} {'reps':>5}")
    for method in methods:
        values = sorted({r["sweep_value"] for r in rows if r["method"] == method})
        for v in values:
            cell = [
                r
                for r in rows
                if r["method"] == method and r["sweep_value"] == v
            ]
            rate = float(np.mean([r["worst_case_sum_rate"] for r in cell]))
            q_ave = float(np.mean([r["q_ave"] for r in cell]))
            print(f"{method:>10} {v:>10.4g} {rate:>10.4f} {q_ave:>8.3f} {len(cell):>5}")
    print(f"charts refreshed in {args.run}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cflab",
        description="robust cell-free clustering/beamforming laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a channel dataset file")
    _add_system_flags(p)
    p.add_argument("--eta", type=float, default=0.1, help="CSI error level")
    p.add_argument("--count", type=int, default=700, help="number of channel pairs")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None, help="output file path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the clustering/beamforming network")
    p.add_argument("--data", required=True, help="dataset file from gen-data")
    _add_train_flags(p)
    p.add_argument("--p-max", type=float, default=1.0)
    p.add_argument("--noise-power", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("certify", help="certify a trained network on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=0, help="samples to certify (0 = all)")
    p.add_argument("--p-max", type=float, default=1.0)
    p.add_argument("--noise-power", type=float, default=1.0)
    p.add_argument(
        "--oracle-samples",
        type=int,
        default=1000,
        help="boundary draws for the per-user sampled minimum",
    )
    p.add_argument("--soft-gate", action="store_true", help="skip gate hardening")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("baseline", help="run the WMMSE baseline on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--count", type=int, default=0, help="samples to solve (0 = all)")
    p.add_argument("--iters", type=int, default=15)
    p.add_argument("--p-max", type=float, default=1.0)
    p.add_argument("--noise-power", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="run a seeded experiment sweep")
    _add_system_flags(p)
    _add_train_flags(p)
    p.add_argument(
        "--variable",
        required=True,
        choices=("eta", "users", "antennas", "lambda", "kernel"),
    )
    p.add_argument("--grid", type=float, nargs="+", required=True)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument(
        "--methods", nargs="+", default=["rjapcbn", "wmmse"],
        choices=("rjapcbn", "wmmse"),
    )
    p.add_argument("--eval-count", type=int, default=20)
    p.add_argument("--iters", type=int, default=15, help="WMMSE iterations")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a sweep directory")
    p.add_argument("--run", required=True, help="sweep output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - single CLI error boundary
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
