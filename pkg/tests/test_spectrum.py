import numpy as np
import pytest

from oracles import mp_density, mp_stieltjes
from twohop.errors import ParameterError
from twohop.model import CorrelationSet, SystemParams
from twohop.montecarlo import sample_batch
from twohop.spectrum import (lsd_density, right_edge, stieltjes_m, support_scale,
                             write_density_csv)


def ident(n, l, m):
    return CorrelationSet.identity(n, l, m)


class TestStieltjes:
    def test_tail(self):
        zeta = 1e6j
        m = stieltjes_m(ident(10, 20, 15), 1.0, zeta)
        assert abs(m + 1 / zeta) <= 1e-5 * abs(1 / zeta)

    @pytest.mark.parametrize("zeta", [0.5 + 0.01j, 2 + 1j, -1 + 0.1j, 10 + 0.001j])
    def test_upper_half_plane(self, zeta):
        assert stieltjes_m(ident(8, 12, 6), 2.0, zeta).imag > 0

    @pytest.mark.parametrize("zeta", [0.5 + 0.1j, 2 + 0.01j, 3.9 + 0.001j])
    def test_mp_transform(self, zeta):
        m = stieltjes_m(ident(24, 24, 24), 1.0, zeta, system=2)
        assert abs(m - mp_stieltjes(zeta)) <= 1e-9

    def test_bad_system(self):
        with pytest.raises(ParameterError):
            stieltjes_m(ident(2, 2, 2), 1.0, 1j, system=3)


class TestDensity:
    def test_mp_density(self):
        x = np.linspace(0, 4.8, 400)
        sd = lsd_density(ident(64, 64, 64), 1.0, grid=x, system=2)
        m = (x > 0.05) & (x < 3.9)
        assert np.max(np.abs(sd.density[m] - mp_density(x[m]))) <= 1e-3

    def test_scaled_mp(self):
        x = np.linspace(0, 12, 300)
        sd = lsd_density(ident(16, 16, 16), 2.5, grid=x, system=2)
        m = (x > 0.2) & (x < 9.5)
        assert np.max(np.abs(sd.density[m] - mp_density(x[m], 2.5))) <= 1e-3

    def test_mass_default_grid(self):
        sd = lsd_density(ident(150, 600, 450), 0.0, y=1e-3)
        assert sd.grid.size == 400
        assert 0.97 <= sd.mass <= 1.01
        assert sd.atom == pytest.approx(max(0.0, 1 - sd.mass))
        assert not sd.failed.any()

    def test_shift_with_relay_noise(self):
        N, L, M = 30, 120, 90
        corr = ident(N, L, M)
        m0 = lsd_density(corr, 0.0).first_moment
        m2 = lsd_density(corr, 2.0).first_moment
        assert m2 > m0
        p = SystemParams(N, L, M, 2.0, 2.0, 1.0)
        H1, H2 = sample_batch(corr, p, 8, 0, 100)
        G = H1 @ H2
        tr = (np.sum(np.abs(G) ** 2, axis=(1, 2)) + 2.0 * np.sum(np.abs(H1) ** 2, axis=(1, 2))) / N
        se = tr.std(ddof=1) / np.sqrt(tr.size)
        assert abs(m2 - tr.mean()) <= 3 * se + 2e-3 * m2

    def test_offset_refinement(self):
        corr = ident(20, 40, 30)
        x = np.linspace(0, 6, 1200)
        a = lsd_density(corr, 1.0, grid=x, y=4e-3).mass
        b = lsd_density(corr, 1.0, grid=x, y=2e-3).mass
        assert abs(a - b) <= 0.005

    def test_negative_axis(self):
        # left of the spectrum only the O(y) Poisson tail remains
        x = np.linspace(-2, -0.05, 40)
        a = lsd_density(ident(10, 20, 15), 1.0, grid=x, y=1e-6).density
        b = lsd_density(ident(10, 20, 15), 1.0, grid=x, y=1e-7).density
        assert np.max(a) < 1e-6
        np.testing.assert_allclose(b, a / 10, rtol=1e-3)

    def test_richardson(self):
        x = np.linspace(0, 4.8, 200)
        sd = lsd_density(ident(32, 32, 32), 1.0, grid=x, system=2, richardson=True)
        assert np.all(sd.density >= 0)

    def test_correlated(self):
        rng = np.random.default_rng(5)
        d = [np.diag(rng.uniform(0.3, 2.0, n)) for n in (12, 20, 20, 16)]
        sd = lsd_density(CorrelationSet(*d), 1.0)
        assert 0.97 <= sd.mass <= 1.01

    @pytest.mark.parametrize("kw", [dict(grid=[1.0]), dict(grid=[0.0, 2.0, 1.0]), dict(y=0.0),
                                    dict(y=-1.0)])
    def test_bad_input(self, kw):
        with pytest.raises(ParameterError):
            lsd_density(ident(4, 4, 4), 1.0, **kw)

    def test_point_mass(self):
        with pytest.raises(ParameterError):
            lsd_density(ident(4, 4, 4), 0.0, system=2)


def test_right_edge():
    # N = L = M identities at s = 0: H1 H2 is a product of two square factors
    e = right_edge(ident(40, 40, 40), 0.0)
    assert 6.75 <= e <= 6.75 * 1.05
    e2 = right_edge(ident(40, 40, 40), 1.0, system=2)
    assert 4.0 <= e2 <= 4.2


def test_support_scale():
    c = ident(4, 8, 2)
    assert support_scale(c, 1.0) == pytest.approx(2.0)
    assert support_scale(c, 3.0, system=2) == pytest.approx(3.0)
    edge = support_scale(c, 1.0, edge=True)
    assert edge == pytest.approx((1 + np.sqrt(0.5)) ** 2 * (1 + (1 + 2) ** 2))


def test_csv(tmp_path):
    f = tmp_path / "d.csv"
    write_density_csv(f, [0.0, 0.5], [0.25, 1 / 3], column="f_emp")
    assert f.read_bytes() == b"x,f_emp\n0,0.25\n0.5,0.33333333333333331\n"
