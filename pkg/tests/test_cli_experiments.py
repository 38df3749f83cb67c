import json
import os

import numpy as np
import pytest

from cflab import cli, experiments, trainer
from cflab.sysmodel import SystemConfig


def tiny_training():
    return trainer.TrainConfig(
        epochs=2,
        batch_size=8,
        train_size=16,
        test_size=8,
        certified_eval_count=0,
    )


class TestExperimentConfig:
    def test_rejects_empty_grid(self):
        with pytest.raises(ValueError):
            experiments.ExperimentConfig(sweep="eta", grid=[])

    def test_rejects_unknown_variable(self):
        with pytest.raises(ValueError):
            experiments.ExperimentConfig(sweep="bananas", grid=[1])


class TestSweep:
    def _config(self, sweep, grid, methods=("rjapcbn",)):
        system = SystemConfig(
            num_aps=2, num_users=2, num_antennas=2, area_side=300.0, rng_seed=5
        )
        return experiments.ExperimentConfig(
            sweep=sweep,
            grid=grid,
            replications=1,
            system=system,
            training=tiny_training(),
            methods=methods,
            layers=2,
            kernel=3,
            eval_count=4,
        )

    def test_eta_sweep_writes_artifacts(self, tmp_path):
        out = tmp_path / "sweep"
        rows = experiments.run(self._config("eta", [0.0, 0.1]), out)
        assert len(rows) == 2
        assert (out / "metrics.csv").exists()
        assert (out / "timings.csv").exists()
        assert (out / "worst_case_sum_rate.svg").exists()
        assert (out / "q_ave.svg").exists()
        config = json.loads((out / "run_config.json").read_text())
        assert config["sweep"] == "eta"

    def test_metrics_reproducible_byte_for_byte(self, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        cfg = self._config("eta", [0.05])
        experiments.run(cfg, out1)
        cfg2 = self._config("eta", [0.05])
        experiments.run(cfg2, out2)
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()

    def test_certified_rate_trend_in_eta(self, tmp_path):
        # larger CSI error can only shrink the certified rate (per method,
        # same seeds)
        out = tmp_path / "trend"
        rows = experiments.run(
            self._config("eta", [0.0, 0.3], methods=("wmmse",)), out
        )
        by_eta = {r.sweep_value: r.worst_case_sum_rate for r in rows}
        assert by_eta[0.3] <= by_eta[0.0] + 1e-9

    def test_lambda_sweep_row_count(self, tmp_path):
        cfg = self._config("lambda", [0.01, 0.1, 1.0])
        cfg.replications = 2
        rows = experiments.run(cfg, tmp_path / "lam")
        assert len(rows) == 3 * 2  # grid x replications, one method
        csv_lines = (tmp_path / "lam" / "metrics.csv").read_text().strip().splitlines()
        assert len(csv_lines) == 1 + 6

    def test_zero_eta_matches_nominal_sum_rate(self, tmp_path):
        # run-level collapse: at eta = 0 the certified rate in the CSV
        # equals the nominal sum rate recomputed independently
        from cflab import baseline, metrics
        from cflab.sysmodel import generate_dataset, stack_users, unstack_users

        cfg = self._config("eta", [0.0], methods=("wmmse",))
        rows = experiments.run(cfg, tmp_path / "zero")
        row = rows[0]
        system, training, spec, eta = experiments._cell_setup(cfg, 0.0)
        rng = np.random.default_rng([cfg.system.rng_seed, 0, 0])
        dataset = generate_dataset(
            system, training.train_size + training.test_size, eta, rng,
            shadow_std_db=cfg.shadow_std_db, d_min=cfg.d_min,
        )
        count = min(cfg.eval_count, len(dataset))
        nominal = []
        for n in range(count):
            idx = len(dataset) - count + n
            est = dataset.est_h[idx]
            state = baseline.wmmse_solve(
                unstack_users(est, system.num_aps),
                system.max_power,
                system.noise_power,
                iters=cfg.wmmse_iters,
            )
            nominal.append(
                metrics.sum_rate(
                    metrics.nominal_sinr(
                        est, stack_users(state.beamformer), system.noise_power
                    )
                )
            )
        want = float(np.mean(nominal))
        assert row.worst_case_sum_rate == pytest.approx(want, rel=1e-6)

    def test_both_methods_report(self, tmp_path):
        rows = experiments.run(
            self._config("lambda", [0.1], methods=("rjapcbn", "wmmse")),
            tmp_path / "m",
        )
        methods = {r.method for r in rows}
        assert methods == {"rjapcbn", "wmmse"}
        wmmse_row = next(r for r in rows if r.method == "wmmse")
        assert wmmse_row.mult_count == ""
        net_row = next(r for r in rows if r.method == "rjapcbn")
        assert isinstance(net_row.mult_count, int)


class TestCli:
    def test_gen_train_certify_round_trip(self, tmp_path):
        data = tmp_path / "channels.cfch"
        rc = cli.main(
            [
                "gen-data", "--aps", "2", "--users", "2", "--antennas", "2",
                "--area-side", "300", "--eta", "0.1", "--count", "24",
                "--seed", "3", "--out", str(data),
            ]
        )
        assert rc == 0 and data.exists()

        run_dir = tmp_path / "train"
        rc = cli.main(
            [
                "train", "--data", str(data), "--epochs", "2",
                "--batch-size", "8", "--train-size", "16", "--test-size", "8",
                "--certify-per-epoch", "0", "--layers", "2", "--kernel", "3",
                "--seed", "4", "--out", str(run_dir),
            ]
        )
        assert rc == 0
        assert (run_dir / "curve.csv").exists()
        ckpt = run_dir / "checkpoint_epoch001.npz"
        assert ckpt.exists()

        cert_dir = tmp_path / "cert"
        rc = cli.main(
            [
                "certify", "--data", str(data), "--checkpoint", str(ckpt),
                "--count", "3", "--oracle-samples", "50", "--seed", "5",
                "--out", str(cert_dir),
            ]
        )
        assert rc == 0
        payload = json.loads((cert_dir / "certificates.json").read_text())
        assert payload["format"] == "cflab-certificate"
        assert len(payload["records"]) == 3
        rec = payload["records"][0]
        # soundness surfaced in the export: certificate <= sampled minimum
        for g, s in zip(rec["gamma"], rec["sampled_min_sinr"]):
            assert g <= s + 1e-6

    def test_baseline_command(self, tmp_path, capsys):
        data = tmp_path / "channels.cfch"
        cli.main(
            [
                "gen-data", "--aps", "2", "--users", "2", "--antennas", "2",
                "--area-side", "300", "--eta", "0.1", "--count", "5",
                "--seed", "6", "--out", str(data),
            ]
        )
        rc = cli.main(["baseline", "--data", str(data), "--count", "3", "--seed", "7"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "certified worst-case" in out

    def test_sweep_and_report(self, tmp_path, capsys):
        out = tmp_path / "sweep"
        rc = cli.main(
            [
                "sweep", "--variable", "eta", "--grid", "0.0", "0.1",
                "--aps", "2", "--users", "2", "--antennas", "2",
                "--area-side", "300", "--epochs", "2", "--batch-size", "8",
                "--train-size", "16", "--test-size", "8",
                "--certify-per-epoch", "0", "--layers", "2", "--kernel", "3",
                "--eval-count", "3", "--methods", "wmmse",
                "--seed", "8", "--out", str(out),
            ]
        )
        assert rc == 0
        rc = cli.main(["report", "--run", str(out)])
        assert rc == 0
        assert "wmmse" in capsys.readouterr().out

    def test_seed_is_mandatory(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["gen-data", "--count", "3"])
        assert exc.value.code == 2

    def test_error_exit_code(self, tmp_path):
        rc = cli.main(
            ["baseline", "--data", str(tmp_path / "missing.cfch"), "--seed", "1"]
        )
        assert rc == 1

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
        rc = cli.main(
            [
                "gen-data", "--aps", "2", "--users", "2", "--antennas", "2",
                "--count", "3", "--seed", "9",
            ]
        )
        assert rc == 0
        assert (tmp_path / "root" / "channels_seed9.cfch").exists()
