import numpy as np
import pytest

from enclosure.laplace import (
    IncompleteRun,
    NonMonotoneTime,
    SurfaceTransform,
    TransformAccumulator,
)

TAUS = np.array([0.5, 2.0, 5.0])


def _feed(acc, signal, T):
    n = int(round(T / acc.dt))
    for k in range(n + 1):
        t = k * acc.dt
        acc(t, signal(t))
    return acc.finalize(T)


def _exp_signal(a, n_nodes=1):
    return lambda t: np.full(3 * n_nodes, np.exp(-a * t))


class TestAccumulator:
    def test_zero_signal(self):
        acc = TransformAccumulator(TAUS, 4, 0.01, 0.1)
        tr = _feed(acc, lambda t: np.zeros(12), 1.0)
        assert np.all(tr.w_on == 0) and np.all(tr.dwdn == 0)

    def test_exponential_analytic(self):
        a, T = 0.7, 3.0
        tr = _feed(TransformAccumulator(TAUS, 1, 1e-3, 0.1), _exp_signal(a), T)
        exact = (1 - np.exp(-(TAUS + a) * T)) / (TAUS + a)
        np.testing.assert_allclose(tr.w_on[:, 0], exact, rtol=2e-5)

    def test_second_order(self):
        a, T = 0.7, 3.0
        exact = (1 - np.exp(-(TAUS + a) * T)) / (TAUS + a)
        errs = []
        for dt in (0.03, 0.015, 0.0075):
            tr = _feed(TransformAccumulator(TAUS, 1, dt, 0.1), _exp_signal(a), T)
            errs.append(np.abs(tr.w_on[:, 0] - exact))
        errs = np.array(errs)
        order = np.log2(errs[:-1] / errs[1:])
        assert np.all((order >= 1.8) & (order <= 2.2))

    def test_trapezoid_weights(self):
        # a linear signal is integrated exactly against weight 1 when tau -> 0
        acc = TransformAccumulator([1e-12], 1, 0.1, 0.1)
        tr = _feed(acc, lambda t: np.full(3, t), 2.0)
        assert tr.w_on[0, 0] == pytest.approx(2.0, rel=1e-9)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        n, steps, dt = 5, 60, 0.02
        a = rng.normal(size=(steps + 1, 3 * n))
        b = rng.normal(size=(steps + 1, 3 * n))
        outs = []
        for data in (a, b, a - b):
            acc = TransformAccumulator(TAUS, n, dt, 0.1)
            for k in range(steps + 1):
                acc(k * dt, data[k])
            outs.append(acc.finalize(steps * dt))
        diff = outs[0] - outs[1]
        np.testing.assert_allclose(diff.w_on, outs[2].w_on, atol=1e-12)
        np.testing.assert_allclose(diff.dwdn, outs[2].dwdn, atol=1e-10)

    def test_monotone_in_tau(self):
        tr = _feed(TransformAccumulator(np.linspace(0.5, 10, 12), 1, 0.01, 0.1),
                   lambda t: np.full(3, np.sin(t) ** 2 + 0.1), 4.0)
        w = tr.w_on[:, 0]
        assert np.all(w > 0) and np.all(np.diff(w) < 0)

    def test_non_monotone_time(self):
        acc = TransformAccumulator(TAUS, 1, 0.1, 0.1)
        acc(0.0, np.zeros(3))
        acc(0.1, np.zeros(3))
        with pytest.raises(NonMonotoneTime):
            acc(0.1, np.zeros(3))

    def test_incomplete(self):
        acc = TransformAccumulator(TAUS, 1, 0.1, 0.1)
        for k in range(5):
            acc(k * 0.1, np.zeros(3))
        with pytest.raises(IncompleteRun):
            acc.finalize(1.0)
        with pytest.raises(IncompleteRun):
            TransformAccumulator(TAUS, 1, 0.1, 0.1).finalize(1.0)

    def test_wrong_sample_count(self):
        with pytest.raises(ValueError):
            TransformAccumulator(TAUS, 2, 0.1, 0.1)(0.0, np.zeros(3))


class TestNormalDerivative:
    def test_constant_in_space(self):
        n = 6
        tr = _feed(TransformAccumulator(TAUS, n, 0.01, 0.1), lambda t: np.full(3 * n, np.cos(t)), 2.0)
        assert np.all(tr.dwdn == 0)

    def test_linear_along_normal(self):
        # u = (n . x) g(t): inner/on/outer samples are -delta, 0, +delta times g
        n, delta, a, T = 3, 0.1, 0.5, 2.0
        g = lambda t: np.exp(-a * t)

        def signal(t):
            return np.concatenate([np.zeros(n), -delta * g(t) * np.ones(n), delta * g(t) * np.ones(n)])

        tr = _feed(TransformAccumulator(TAUS, n, 1e-3, delta), signal, T)
        ghat = _feed(TransformAccumulator(TAUS, 1, 1e-3, delta), _exp_signal(a), T).w_on[:, 0]
        np.testing.assert_allclose(tr.dwdn, np.repeat(ghat[:, None], n, axis=1), rtol=1e-12)


class TestSurfaceTransform:
    def test_index_and_csv(self, tmp_path):
        tr = SurfaceTransform(np.array([1.0, 2.0]), np.ones((2, 2)), np.zeros((2, 2)),
                              np.ones((2, 2)), 0.5)
        assert tr.index(2.0) == 1
        with pytest.raises(KeyError):
            tr.index(3.0)
        path = tmp_path / "w.csv"
        tr.to_csv(path, np.zeros((2, 3)))
        lines = path.read_text().splitlines()
        assert lines[0] == "node_id,x,y,z,tau,w_on,dwdn"
        assert len(lines) == 5
