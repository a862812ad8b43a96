import numpy as np
import pytest

from enclosure.fields import SOLID, CellMask, Grid3, build_material, rasterize_mask
from enclosure.geometry import Sphere
from enclosure.wave import (
    PAD,
    NaNDetected,
    Penetrable,
    ProbeBall,
    ProbeIntersectsSurface,
    ProbeOutsideGrid,
    RecorderTap,
    SnapshotPolicy,
    SolverConfig,
    SoundHard,
    Sponge,
    free_space_oracle,
    initialize,
    lens_area,
    run,
    step,
)

CLOSED = Sponge(0, absorbing_wall=False)


def _grid(half, h, pad=0):
    return Grid3.covering((-half,) * 3, (half,) * 3, h, pad_cells=pad)


def _config(grid, T, sponge=CLOSED, D=None, cfl=0.9):
    return SolverConfig(grid, SoundHard(rasterize_mask(grid, D, sponge.thickness)), T, cfl, sponge)


def _interior_energy(u, u_old, dt, h, region):
    kin = np.sum(((u - u_old)[region] / dt) ** 2) * 0.5 * h**3
    pot = 0.5 * h * sum(np.sum(np.diff(u, axis=a)[region] ** 2) for a in range(3))
    return kin + pot


class TestInitialize:
    def test_first_level(self):
        g = _grid(1.5, 0.1)
        cfg = _config(g, 1.0)
        pb = ProbeBall((0.0, 0.0, 0.0), 0.5, 1.0)
        st = initialize(cfg, pb)
        inside = g.sdf(pb.ball) < 0
        f = st.field
        np.testing.assert_array_equal(f[inside], cfg.dt)
        assert np.all(f[~inside] == 0.0)
        assert np.linalg.norm(st.u_old) == 0.0

    def test_negative_amplitude(self):
        g = _grid(1.5, 0.1)
        cfg = _config(g, 1.0)
        st = initialize(cfg, ProbeBall((0.0, 0.0, 0.0), 0.5, -2.0))
        assert st.field.min() == pytest.approx(-2.0 * cfg.dt)

    def test_probe_checks(self):
        g = _grid(1.5, 0.1, pad=4)
        cfg = _config(g, 1.0, Sponge(4))
        with pytest.raises(ProbeOutsideGrid):
            initialize(cfg, ProbeBall((1.3, 0.0, 0.0), 0.5))
        with pytest.raises(ProbeIntersectsSurface):
            initialize(cfg, ProbeBall((0.0, 0.0, 0.0), 0.5), surface=Sphere((0.8, 0, 0), 0.5))

    def test_time_step_lands_on_T(self):
        cfg = _config(_grid(1.0, 0.1), 1.234)
        assert cfg.n_steps * cfg.dt == pytest.approx(1.234, rel=1e-14)
        assert cfg.dt <= 0.9 * 0.1 / np.sqrt(3.0)


class TestStep:
    def test_zero_invariance(self):
        g = _grid(1.0, 0.1, pad=4)
        cfg = _config(g, 1.0, Sponge(4))
        st = initialize(cfg, ProbeBall((0, 0, 0), 0.3), velocity=np.zeros(g.shape))
        for _ in range(20):
            step(st)
        assert np.all(st.u == 0.0)

    @pytest.mark.parametrize("with_obstacle", [False, True])
    def test_energy_conserved_closed_box(self, with_obstacle):
        g = _grid(1.6, 0.1)
        D = Sphere((0.0, 0.0, 0.0), 0.6) if with_obstacle else None
        cfg = _config(g, 10.0, D=D)
        st = initialize(cfg, ProbeBall((0.95, 0.0, 0.0), 0.3))
        e = [st.energy()]
        for _ in range(1000):
            step(st)
            e.append(st.energy())
        e = np.array(e)
        assert np.max(np.abs(np.diff(e))) / e[0] < 1e-9
        assert np.max(np.abs(e - e[0])) / e[0] < 1e-9

    def test_energy_before_sponge_contact(self):
        g = _grid(3.0, 0.1, pad=12)
        cfg = _config(g, 0.8, Sponge(12), D=Sphere((0, 0, 0), 0.7))
        st = initialize(cfg, ProbeBall((1.4, 0.0, 0.0), 0.4))
        e = [st.energy()]
        # the physical front stops at 1.4 + 0.4 + 0.8 = 2.6; the stencil's
        # one-cell-per-step numerical precursor stays short of the shell at 3.0
        while st.n < cfg.n_steps:
            step(st)
            e.append(st.energy())
        assert np.max(np.abs(np.diff(e))) / e[0] < 1e-9

    def test_isolated_cavity(self):
        g = _grid(1.0, 0.1)
        labels = np.full(g.shape, SOLID, dtype=np.int8)
        labels[10, 10, 10] = 0
        cfg = SolverConfig(g, SoundHard(CellMask(g, labels, 0)), 1.0, 0.9, CLOSED)
        st = initialize(cfg, ProbeBall((0.05, 0.05, 0.05), 0.3, 2.0))
        for _ in range(10):
            step(st)
        f = st.field
        assert f[10, 10, 10] == pytest.approx(2.0 * st.t, rel=1e-12)
        f[10, 10, 10] = 0
        assert np.all(f == 0)

    def test_nan_detected(self):
        g = _grid(1.0, 0.1)
        cfg = SolverConfig(g, SoundHard(rasterize_mask(g, None, 0)), 200.0, 0.9, CLOSED, c_max=0.1)
        with pytest.raises(NaNDetected):
            run(cfg, ProbeBall((0, 0, 0), 0.3))

    def test_penetrable_uniform_time_rescaling(self):
        # gamma = k everywhere runs the unit-speed solution at sqrt(k) speed:
        # u_k(x, t) = u_1(x, sqrt(k) t) / sqrt(k)
        g = _grid(1.5, 0.1)
        pb = ProbeBall((0, 0, 0), 0.4)
        pts = np.array([[0.8, 0.0, 0.0], [0.3, 0.4, 0.2]])
        out = {}
        for k, T in ((1.0, 1.0), (4.0, 0.5)):
            gamma = build_material(g, None, 1.0)
            gamma.values[:] = k
            cfg = SolverConfig(g, Penetrable(gamma), T, 0.9, CLOSED)
            tap = RecorderTap(g, pts, keep=True)
            run(cfg, pb, [tap])
            out[k] = tap.series()
        t1, u1 = out[1.0]
        t4, u4 = out[4.0]
        np.testing.assert_allclose(t4, t1 / 2, rtol=1e-12)
        np.testing.assert_allclose(u4, u1 / 2, rtol=1e-9, atol=1e-14)


class TestRun:
    def test_zero_time(self):
        g = _grid(1.0, 0.1)
        calls = []
        tap = RecorderTap(g, [[0.0, 0.0, 0.0]], callback=lambda t, v: calls.append(t))
        rep = run(_config(g, 0.0), ProbeBall((0, 0, 0), 0.3), [tap])
        assert rep.steps == 0 and calls == []

    def test_taps_every_level(self):
        g = _grid(1.0, 0.1)
        cfg = _config(g, 0.5)
        tap = RecorderTap(g, [[0.0, 0.0, 0.0]], keep=True)
        rep = run(cfg, ProbeBall((0, 0, 0), 0.3), [tap])
        t, u = tap.series()
        assert len(t) == rep.steps + 1
        np.testing.assert_allclose(t, np.arange(rep.steps + 1) * cfg.dt)
        assert u[0, 0] == 0.0

    def test_snapshots(self, tmp_path):
        g = _grid(1.0, 0.1)
        cfg = _config(g, 0.3)
        run(cfg, ProbeBall((0, 0, 0), 0.3), snapshots=SnapshotPolicy(0, str(tmp_path)))
        assert list(tmp_path.iterdir()) == []
        rep = run(cfg, ProbeBall((0, 0, 0), 0.3), snapshots=SnapshotPolicy(2, str(tmp_path)))
        raws = sorted(tmp_path.glob("*.raw"))
        assert len(raws) == rep.steps // 2
        assert all(p.with_suffix(".json").exists() for p in raws)

    def test_deterministic(self):
        g = _grid(1.0, 0.1, pad=4)
        cfg = _config(g, 0.6, Sponge(4), D=Sphere((0.3, 0, 0), 0.35))
        a = initialize(cfg, ProbeBall((-0.4, 0, 0), 0.3))
        b = initialize(cfg, ProbeBall((-0.4, 0, 0), 0.3))
        for _ in range(30):
            step(a), step(b)
        assert np.array_equal(a.u, b.u)


class TestOracle:
    pb = ProbeBall((0.0, 0.0, 0.0), 0.5, 1.0)

    def test_support(self):
        x = (2.0, 0.0, 0.0)
        assert free_space_oracle(x, 1.4, self.pb) == 0.0
        assert free_space_oracle(x, 2.6, self.pb) == 0.0
        assert free_space_oracle(x, 2.0, self.pb) == pytest.approx(0.25 / 8.0)

    def test_center(self):
        t = np.linspace(0, 0.5, 11)
        np.testing.assert_allclose(free_space_oracle((0, 0, 0), t, ProbeBall((0, 0, 0), 0.5, 3.0)), 3.0 * t)

    def test_continuous(self):
        for d in (0.2, 0.5, 1.5):
            t = np.linspace(0, d + 1.0, 20001)
            u = free_space_oracle((d, 0, 0), t, self.pb)
            assert np.max(np.abs(np.diff(u))) < 1e-3

    def test_matches_lens_area(self):
        d, t = 1.2, np.linspace(0.01, 2.0, 50)
        np.testing.assert_allclose(free_space_oracle((0, d, 0), t, self.pb),
                                   lens_area(d, t, 0.5) / (4 * np.pi * t), atol=1e-15)

    def test_lens_area_integrates_to_volume(self):
        from scipy.integrate import quad

        for d in (0.0, 0.3, 2.0):
            vol = quad(lambda s: float(lens_area(d, np.array([s]), 0.5)[0]), 0, d + 0.5,
                       points=[abs(d - 0.5)], limit=200)[0]
            assert vol == pytest.approx(4 / 3 * np.pi * 0.125, rel=1e-8)

    def test_traces_approach_oracle(self):
        pts = np.array([[0.9, 0, 0], [0, -0.7, 0.5], [0.6, 0.6, 0.6]])
        errs = []
        for h in (0.1, 0.05):
            g = _grid(1.6, h)
            tap = RecorderTap(g, pts, keep=True)
            run(_config(g, 1.5), self.pb, [tap])
            t, u = tap.series()
            ex = np.stack([free_space_oracle(p, t, self.pb) for p in pts], axis=1)
            errs.append(np.max(np.sqrt(np.sum((u - ex) ** 2, 0) / np.sum(ex**2, 0))))
        assert errs[1] < 0.7 * errs[0]
        assert errs[1] < 0.1


class TestSmoothConvergence:
    """Gaussian initial velocity has the closed-form radial solution
    ``sigma^2 / (4 r) (exp(-(r-t)^2/sigma^2) - exp(-(r+t)^2/sigma^2))``."""

    sig = 0.3

    def exact(self, r, t):
        s2 = self.sig**2
        return s2 / (4 * r) * (np.exp(-((r - t) ** 2) / s2) - np.exp(-((r + t) ** 2) / s2))

    def test_second_order(self):
        pts = np.array([[1.0, 0, 0], [0, 1.2, 0], [0.7, 0.7, 0.3], [-1.1, 0.2, 0.1]])
        r = np.linalg.norm(pts, axis=1)
        errs = []
        for h in (0.1, 0.05, 0.025):
            g = _grid(2.2, h)
            cfg = _config(g, 1.6)
            f = np.exp(-np.sum(g.centers() ** 2, -1) / self.sig**2)
            st = initialize(cfg, ProbeBall((0, 0, 0), 0.3), velocity=f)
            tap = RecorderTap(g, pts, keep=True)
            run(cfg, None, [tap], state=st)
            t, u = tap.series()
            ex = self.exact(r[None, :], t[:, None])
            errs.append(np.max(np.sqrt(np.sum((u - ex) ** 2, 0) / np.sum(ex**2, 0))))
        assert errs[-1] < 0.005
        for a, b in zip(errs, errs[1:]):
            assert 3.2 <= a / b <= 4.8


class TestSponge:
    def test_reflected_energy(self):
        """Energy of (small-box run - large-box run) left inside the small
        box after the pulse has crossed the shell, relative to the input."""
        h, T, half = 0.1, 5.0, 2.0
        pb = ProbeBall((0.0, 0.0, 0.0), 0.5)

        def final(half_box, sponge):
            g = _grid(half_box, h, pad=sponge.thickness)
            cfg = _config(g, T, sponge)
            st = initialize(cfg, pb)
            e0 = st.energy()
            run(cfg, pb, state=st)
            n = int(round(half / h))
            m = st.u.shape[0] // 2
            cut = (slice(m - n, m + n),) * 3
            return st.u[cut], st.u_old[cut], st.dt, e0

        ub, uob, dt, e0 = final(half + T, Sponge(4))
        u, uo, _, _ = final(half, Sponge())
        inner = (slice(None),) * 3
        refl = _interior_energy(u - ub, uo - uob, dt, h, inner)
        assert refl / e0 <= 0.01
