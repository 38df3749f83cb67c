import numpy as np
import pytest

from cflab import metrics


class TestNominalSinr:
    def test_single_user(self):
        # |h^H v|^2 = 3 with sigma^2 = 1 -> SINR 3
        h = np.array([[np.sqrt(3.0)]], dtype=complex)
        v = np.array([[1.0]], dtype=complex)
        assert metrics.nominal_sinr(h, v, [1.0])[0] == pytest.approx(3.0)

    def test_zero_beamformer(self):
        h = np.ones((4, 2), dtype=complex)
        v = np.zeros((4, 2), dtype=complex)
        assert np.all(metrics.nominal_sinr(h, v, [1.0, 1.0]) == 0.0)

    def test_matches_expanded_quadratics(self):
        # Oracle: expand the quadratic forms user by user with plain loops.
        rng = np.random.default_rng(0)
        qm, users = 6, 3
        h = rng.standard_normal((qm, users)) + 1j * rng.standard_normal((qm, users))
        v = rng.standard_normal((qm, users)) + 1j * rng.standard_normal((qm, users))
        sigma2 = rng.uniform(0.5, 2.0, users)
        expected = np.zeros(users)
        for i in range(users):
            sig = abs(np.vdot(h[:, i], v[:, i])) ** 2
            interf = sum(
                abs(np.vdot(h[:, i], v[:, j])) ** 2
                for j in range(users)
                if j != i
            )
            expected[i] = sig / (interf + sigma2[i])
        assert np.allclose(metrics.nominal_sinr(h, v, sigma2), expected, rtol=1e-12)


class TestRates:
    def test_sum_rate_unit_sinrs(self):
        assert metrics.sum_rate([1.0, 1.0]) == pytest.approx(2.0)

    def test_sum_rate_exact_logs(self):
        assert metrics.sum_rate([1.0, 3.0]) == pytest.approx(3.0)

    def test_sum_rate_rejects_negative(self):
        with pytest.raises(ValueError):
            metrics.sum_rate([-0.1])

    def test_penalized_reduces_to_plain(self):
        rates = [1.5, 2.5]
        v = np.array([[[0.3 + 0.4j]]])
        assert metrics.penalized_sparse_sum_rate(rates, v, 0.0) == pytest.approx(4.0)

    def test_penalized_hand_value(self):
        # rates sum 2, l1 = |0.3| + |-0.4| + |1| + |0| = 1.7, lambda = 0.5
        rates = [2.0]
        v = np.array([[[0.3 - 0.4j, 1.0 + 0.0j]]])
        expected = 2.0 - 0.5 * 1.7
        assert metrics.penalized_sparse_sum_rate(rates, v, 0.5) == pytest.approx(expected)


class TestQAve:
    def test_no_zeros(self):
        v = np.ones((4, 3, 2), dtype=complex)
        assert metrics.q_ave(v) == 4.0

    def test_all_zeros(self):
        v = np.zeros((4, 3, 2), dtype=complex)
        assert metrics.q_ave(v) == 0.0

    def test_half_zeros(self):
        v = np.ones((4, 3, 2), dtype=complex)
        v[:2] = 0.0
        assert metrics.q_ave(v) == 2.0

    def test_linear_in_zero_count(self):
        q, i, m = 5, 4, 2
        rng = np.random.default_rng(1)
        base = rng.standard_normal((q, i, m)) + 1j * rng.standard_normal((q, i, m))
        flat = base.reshape(-1)
        for zeros in range(0, q * i * m + 1, 8):
            v = flat.copy()
            v[:zeros] = 0.0
            got = metrics.q_ave(v.reshape(q, i, m))
            assert got == pytest.approx(q * (1 - zeros / (q * i * m)))
            assert 0.0 <= got <= q


class TestMultCount:
    def test_reference_configuration(self):
        # Q = I = 16, M = 4, C = 8, L = 5, 5x5 kernels.
        assert metrics.mult_count_rjapcbn(16, 16, 4, 8, 5, 5, 5) == 2_375_936

    def test_minimal_configuration(self):
        assert metrics.mult_count_rjapcbn(1, 1, 1, 1, 1, 1, 1) == 4

    def test_first_term_quadratic_in_q(self):
        base = metrics.mult_count_rjapcbn(4, 3, 2, 2, 3, 3, 3)
        doubled = metrics.mult_count_rjapcbn(8, 3, 2, 2, 3, 3, 3)
        # Doubling Q quadruples the Q^2 I^2 C term and doubles the rest.
        q2_term = 4 * 4 * 3 * 3 * 2
        rest = base - q2_term
        assert doubled == 4 * q2_term + 2 * rest
