"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run as `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings. The training criterion is the long pole (several
minutes); everything else completes in well under a minute each.
"""

import time

import numpy as np
import pytest

from cflab import baseline, certifier, metrics, network, sysmodel, trainer
from cflab.sysmodel import stack_users


def _report(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"\nacceptance {num:02d} {name}: {status} {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def desk_system(seed, q=4, i=4, m=2, area=300.0):
    return sysmodel.SystemConfig(
        num_aps=q, num_users=i, num_antennas=m, area_side=area, rng_seed=seed
    )


def random_instance(rng, eta, cfg):
    """Channel pair plus a random per-AP-feasible beamformer."""
    topo = sysmodel.sample_topology(cfg, rng)
    h = sysmodel.sample_channel(cfg, topo, rng)
    pair = sysmodel.perturb_channel(h, eta, rng)
    shape = (cfg.num_aps, cfg.num_users, cfg.num_antennas)
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v = network.power_project(v, cfg.max_power)
    return pair, v


def test_01_certifier_soundness():
    # 200 instances at Q=4, I=4, M=2 with eta in {0.05, 0.1}: certified
    # gamma may not exceed the minimum over 1e4 boundary draws by more
    # than 1e-6, for any user. Budget: 2 minutes.
    start = time.perf_counter()
    rng = np.random.default_rng(1001)
    cfg = desk_system(seed=1)
    worst_violation = -np.inf
    checked = 0
    for eta in (0.05, 0.1):
        for _ in range(100):
            pair, v = random_instance(rng, eta, cfg)
            est = stack_users(pair.est_h)
            v_mat = stack_users(v)
            cert = certifier.certify(
                est, v_mat, pair.per_user_eps, cfg.noise_power
            )
            for i in range(cfg.num_users):
                sampled = certifier.sampling_oracle(
                    est[:, i],
                    v_mat,
                    i,
                    float(pair.per_user_eps[i]),
                    float(cfg.noise_power[i]),
                    10_000,
                    rng,
                )
                worst_violation = max(worst_violation, cert.gamma[i] - sampled)
                checked += 1
    elapsed = time.perf_counter() - start
    _report(
        1,
        "certifier-soundness",
        worst_violation <= 1e-6 and elapsed < 120.0,
        f"(worst excess {worst_violation:.2e} over {checked} user checks, "
        f"{elapsed:.1f}s)",
    )


def test_02_s_procedure_tightness():
    # 100 random instances: the LMI-certified signal bound equals the
    # closed form within 1e-4 relative. Instances stay inside the kink
    # (eps ||v|| < |est^H v|) where the bound is nonzero; past the kink the
    # closed form is exactly zero, checked absolutely on extra instances.
    # Budget: 30 seconds.
    start = time.perf_counter()
    rng = np.random.default_rng(1002)
    worst = 0.0
    for _ in range(100):
        qm = int(rng.integers(2, 9))
        est = rng.standard_normal(qm) + 1j * rng.standard_normal(qm)
        v = rng.standard_normal(qm) + 1j * rng.standard_normal(qm)
        kink = abs(np.vdot(est, v)) / np.linalg.norm(v)
        eps = float(rng.uniform(0.0, 0.9) * kink)
        alpha, _ = certifier.max_signal_power(est, v, eps)
        closed = certifier.worst_signal_closed_form(est, v, eps)
        worst = max(worst, abs(alpha - closed) / closed)
    zero_ok = True
    for _ in range(10):
        qm = int(rng.integers(2, 9))
        est = rng.standard_normal(qm) + 1j * rng.standard_normal(qm)
        v = rng.standard_normal(qm) + 1j * rng.standard_normal(qm)
        inner_sq = abs(np.vdot(est, v)) ** 2
        eps = 1.05 * abs(np.vdot(est, v)) / np.linalg.norm(v)
        alpha, _ = certifier.max_signal_power(est, v, eps)
        zero_ok = zero_ok and alpha <= 1e-8 * inner_sq
    elapsed = time.perf_counter() - start
    _report(
        2,
        "s-procedure-tightness",
        worst < 1e-4 and zero_ok and elapsed < 30.0,
        f"(max relative gap {worst:.2e}, past-kink bounds exact, {elapsed:.1f}s)",
    )


def test_03_zero_error_collapse():
    # 50 instances with eta = 0: certified worst-case sum rate equals the
    # nominal sum rate within 1e-6 relative.
    rng = np.random.default_rng(1003)
    cfg = desk_system(seed=3)
    worst = 0.0
    for _ in range(50):
        pair, v = random_instance(rng, 0.0, cfg)
        est = stack_users(pair.est_h)
        v_mat = stack_users(v)
        cert = certifier.certify(est, v_mat, pair.per_user_eps, cfg.noise_power)
        certified = certifier.worst_case_sum_rate(cert)
        nominal = metrics.sum_rate(
            metrics.nominal_sinr(est, v_mat, cfg.noise_power)
        )
        worst = max(worst, abs(certified - nominal) / max(nominal, 1e-300))
    _report(
        3,
        "zero-error-collapse",
        worst < 1e-6,
        f"(max relative gap {worst:.2e} over 50 instances)",
    )


def test_04_rank_one_interference_tightness():
    # single interferer: the certified interference bound hits the
    # triangle-inequality envelope within 1e-6 relative, 50 instances.
    rng = np.random.default_rng(1004)
    worst = 0.0
    for _ in range(50):
        qm = int(rng.integers(2, 9))
        est = rng.standard_normal(qm) + 1j * rng.standard_normal(qm)
        v_j = rng.standard_normal(qm) + 1j * rng.standard_normal(qm)
        eps = float(rng.uniform(0.0, 0.4))
        sigma2 = float(rng.uniform(0.2, 2.0))
        beta, _ = certifier.min_interference_power(est, v_j[:, None], eps, sigma2)
        want = (abs(np.vdot(est, v_j)) + eps * np.linalg.norm(v_j)) ** 2 + sigma2
        worst = max(worst, abs(beta - want) / want)
    _report(
        4,
        "rank-one-interference-tightness",
        worst < 1e-6,
        f"(max relative gap {worst:.2e} over 50 instances)",
    )


def test_05_gradient_fidelity():
    # full pipeline at Q=I=4, M=2, L=3: 100 clean probes (kinks excluded)
    # agree with central differences to 1e-4 relative. Budget: 2 minutes.
    start = time.perf_counter()
    rng = np.random.default_rng(1005)
    spec = network.default_spec(2, layers=3, kernel=3)
    params = network.init_params(spec, 2, rng)
    report = trainer.gradient_check(
        spec, params, 100, rng, num_aps=4, num_users=4, batch=4
    )
    clean = len([p for p in report.probes if not p.kink])
    elapsed = time.perf_counter() - start
    _report(
        5,
        "gradient-fidelity",
        clean >= 100 and report.max_rel_error < 1e-4 and elapsed < 120.0,
        f"(max rel err {report.max_rel_error:.2e} on {clean} probes, "
        f"{report.kinks_excluded} kinks excluded, {elapsed:.1f}s)",
    )


def test_06_architecture_contract():
    # 50 random validated specs all produce Q x I x 2M residual outputs;
    # 20 deliberately invalid specs are rejected with the right condition.
    from test_network import make_invalid_spec

    rng = np.random.default_rng(1006)
    q, i, m = 4, 4, 2
    shapes_ok = True
    for _ in range(50):
        spec = network.random_valid_spec(q, i, m, rng)
        assert network.validate_architecture(spec, q, i, m) is None
        params = network.init_params(spec, m, rng)
        est = rng.standard_normal((q * m, i)) + 1j * rng.standard_normal((q * m, i))
        graph = network.forward_graph(est[None], spec, params, 1.0)
        shapes_ok = shapes_ok and graph["v_res"].value.shape == (1, q, i, 2 * m)
    rejects_ok = True
    kinds = ("same-padding", "strided-padding", "final-channels")
    for k in range(20):
        kind = kinds[k % len(kinds)]
        spec, layer_idx, want = make_invalid_spec(q, i, m, rng, kind)
        violation = network.validate_architecture(spec, q, i, m)
        rejects_ok = rejects_ok and violation is not None and violation.condition == want
    _report(
        6,
        "architecture-contract",
        shapes_ok and rejects_ok,
        "(50 valid specs shaped Q x I x 2M, 20 invalid rejected)",
    )


def test_07_constraint_feasibility():
    # 1000 random parameter draws: per-AP power <= p_max + 1e-9 and
    # hard-gated blocks exactly zero.
    rng = np.random.default_rng(1007)
    q, i, m = 4, 4, 2
    p_max = 1.0
    spec = network.default_spec(m, layers=3, kernel=3)
    est = rng.standard_normal((q * m, i)) + 1j * rng.standard_normal((q * m, i))
    power_ok = True
    gate_ok = True
    for k in range(1000):
        params = network.init_params(spec, m, rng)
        for arr in network.trainable(params).values():
            arr *= rng.uniform(0.5, 6.0)  # many draws land over budget
        out = network.forward(est, spec, params, p_max, hard_gate=True)
        power_ok = power_ok and np.all(
            network.ap_powers(out.beamformer) <= p_max + 1e-9
        )
        closed = out.cluster_hard == 0.0
        gate_ok = gate_ok and np.all(out.beamformer[closed] == 0.0)
    _report(
        7,
        "constraint-feasibility",
        power_ok and gate_ok,
        "(1000 parameter draws, power C1 and hard-gate C2)",
    )


def test_08_wmmse_monotonicity():
    # 50 instances, 15 iterations: the objective never drops by more than
    # 1e-8; single-user runs align with the matched filter (cosine > 0.999).
    rng = np.random.default_rng(1008)
    cfg = desk_system(seed=8)
    worst_drop = 0.0
    for _ in range(50):
        topo = sysmodel.sample_topology(cfg, rng)
        h = sysmodel.sample_channel(cfg, topo, rng)
        pair = sysmodel.perturb_channel(h, 0.1, rng)
        state = baseline.wmmse_solve(pair.est_h, cfg.max_power, cfg.noise_power, 15)
        drops = -np.diff(state.objective_trace)
        worst_drop = max(worst_drop, float(drops.max(initial=0.0)))
    cos_ok = True
    single = sysmodel.SystemConfig(
        num_aps=4, num_users=1, num_antennas=2, area_side=300.0, rng_seed=88
    )
    for _ in range(10):
        topo = sysmodel.sample_topology(single, rng)
        h = sysmodel.sample_channel(single, topo, rng)
        state = baseline.wmmse_solve(h, single.max_power, single.noise_power, 15)
        h_vec = stack_users(h)[:, 0]
        v_vec = state.beamformer_relaxed[:, 0]
        cosine = abs(np.vdot(v_vec, h_vec)) / (
            np.linalg.norm(v_vec) * np.linalg.norm(h_vec)
        )
        cos_ok = cos_ok and cosine > 0.999
    _report(
        8,
        "wmmse-monotonicity",
        worst_drop <= 1e-8 and cos_ok,
        f"(worst per-step drop {worst_drop:.2e}, matched-filter cosine > 0.999)",
    )


def test_09_training_efficacy():
    # Desk-scale substitute for the paper-scale curves: at Q=I=4, M=2 with
    # 500 training channels, lambda=0.1, k=50, the trained network beats
    # the random initialization's certified rate by >= 20% on 200 held-out
    # channels (majority over 5 seeds), and the seed-mean Q_ave is
    # non-increasing over lambda in {0.01, 0.1, 1}. Budget: 15 minutes.
    start = time.perf_counter()
    q = i = 4
    m = 2
    spec = network.default_spec(m, layers=3, kernel=3)
    lambdas = (0.01, 0.1, 1.0)
    seeds = range(5)
    improve_votes = []
    q_ave_table = np.zeros((len(lambdas), 5))
    for s in seeds:
        cfg = desk_system(seed=s)
        rng = np.random.default_rng([100, s])
        ds = sysmodel.generate_dataset(cfg, 700, 0.1, rng)
        test_idx = range(500, 700)
        for li, lam in enumerate(lambdas):
            config = trainer.TrainConfig(
                sparsity_weight=lam,
                gate_steepness=50.0,
                learning_rate=1e-3,
                epochs=40,
                batch_size=64,
                train_size=500,
                test_size=200,
                certified_eval_count=0,
                seed=s,
            )
            params, _ = trainer.train(
                ds, spec, config, cfg.noise_power, cfg.max_power
            )
            q_vals = []
            for k in test_idx:
                out = network.forward(
                    ds.est_h[k], spec, params, cfg.max_power, hard_gate=True
                )
                q_vals.append(metrics.q_ave(out.beamformer))
            q_ave_table[li, s] = float(np.mean(q_vals))
            if lam == 0.1:
                init_params = network.init_params(spec, m, np.random.default_rng(s))
                trained_rate = _mean_certified(ds, test_idx, spec, params, cfg)
                init_rate = _mean_certified(ds, test_idx, spec, init_params, cfg)
                improve_votes.append(trained_rate >= 1.2 * init_rate)
    majority = sum(improve_votes) >= 3
    mean_q = q_ave_table.mean(axis=1)
    trend = bool(np.all(np.diff(mean_q) <= 1e-9))
    elapsed = time.perf_counter() - start
    _report(
        9,
        "training-efficacy",
        majority and trend and elapsed < 900.0,
        f"(improvement votes {improve_votes}, mean Q_ave over lambda "
        f"{np.round(mean_q, 3).tolist()}, {elapsed:.0f}s)",
    )


def _mean_certified(ds, idx, spec, params, cfg):
    vals = []
    for k in idx:
        est = ds.est_h[k]
        out = network.forward(est, spec, params, cfg.max_power, hard_gate=True)
        cert = certifier.certify(
            est, stack_users(out.beamformer), ds.eps[k], cfg.noise_power
        )
        vals.append(certifier.worst_case_sum_rate(cert))
    return float(np.mean(vals))


def test_10_complexity_formula():
    value = metrics.mult_count_rjapcbn(16, 16, 4, 8, 5, 5, 5)
    _report(
        10,
        "complexity-formula",
        value == 2_375_936,
        f"(Q=I=16, M=4, C=8, L=5, 5x5 -> {value}, about 1e6)",
    )


def test_11_metric_exactness():
    q, i, m = 4, 3, 2
    rng = np.random.default_rng(1011)
    full = rng.standard_normal((q, i, m)) + 1j * rng.standard_normal((q, i, m))
    half = full.copy()
    half.reshape(-1)[: q * i * m // 2] = 0.0
    empty = np.zeros_like(full)
    ok = (
        metrics.q_ave(full) == q
        and metrics.q_ave(half) == q / 2
        and metrics.q_ave(empty) == 0.0
    )
    _report(11, "metric-exactness", ok, "(0%, 50%, 100% zero entries -> Q, Q/2, 0)")
