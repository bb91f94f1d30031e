import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import corr_entry_quad, random_psd, random_unitary
from twohop.errors import NumericalError, ParameterError
from twohop.model import (CorrelationSet, RawChannelSpec, SystemParams, as_hermitian_psd,
                          assumption_report, build_correlation, fixed_power_scaling, psd_sqrt,
                          read_matrix_csv, reduce_raw_spec, write_matrix_csv)


class TestSystemParams:
    def test_valid(self):
        p = SystemParams(4, 5, 6, 0.5, 0.0, 1.0)
        assert (p.N, p.L, p.M) == (4, 5, 6)
        assert p.replace(z=2.0).z == 2.0

    @pytest.mark.parametrize("kw", [dict(N=0), dict(L=-1), dict(M=2.5), dict(z=0.0),
                                    dict(z=-1.0), dict(s_bar=-0.1), dict(s_under=-1e-9),
                                    dict(z=float("nan"))])
    def test_invalid(self, kw):
        base = dict(N=2, L=2, M=2, s_bar=1.0, s_under=1.0, z=1.0)
        base.update(kw)
        with pytest.raises(ParameterError):
            SystemParams(**base)


class TestBuildCorrelation:
    def test_zero_spacing_is_rank_one(self):
        C = build_correlation(0.0, 30.0, 0.0, 4)
        c0 = C[0, 0].real
        assert c0 > 0
        np.testing.assert_allclose(C, c0 * np.ones((4, 4)), atol=1e-12)
        ev = np.linalg.eigvalsh(C)
        assert np.all(np.abs(ev[:-1]) <= 1e-12)

    @given(eta=st.floats(-90, 90), dc=st.floats(1.0, 60.0), ds=st.floats(0.0, 2.0),
           n=st.integers(1, 6))
    @settings(max_examples=25, deadline=None)
    def test_diagonal_equals_window_mass(self, eta, dc, ds, n):
        C = build_correlation(eta, dc, ds, n)
        c0 = build_correlation(eta, dc, 0.0, 1)[0, 0]
        np.testing.assert_allclose(np.diag(C), c0, atol=1e-12)
        assert np.max(np.abs(C - C.conj().T)) <= 1e-12
        ev = np.linalg.eigvalsh(C)
        assert ev.min() >= -1e-12 * ev.max()

    def test_entry_against_adaptive_quadrature(self):
        C = build_correlation(60.0, 30.0, 1.0, 8)
        ref = corr_entry_quad(60.0, 30.0, 1.0, -1)
        assert abs(C[0, 1] - ref) <= 1e-10
        for k in range(1, 8):
            assert abs(C[k, 0] - corr_entry_quad(60.0, 30.0, 1.0, k)) <= 1e-10

    def test_toeplitz(self):
        C = build_correlation(20.0, 10.0, 0.5, 6)
        for k in range(-5, 6):
            d = np.diagonal(C, k)
            np.testing.assert_allclose(d, d[0], atol=1e-14)

    def test_clamped_mass_small(self):
        C = build_correlation(10.0, 1.0, 0.5, 32)
        # eigenvalues were clamped only within tolerance of zero
        assert np.linalg.eigvalsh(C).min() >= -1e-8 * np.trace(C).real

    @pytest.mark.parametrize("args", [(0.0, 0.0, 0.5, 4), (0.0, -5.0, 0.5, 4),
                                      (0.0, 10.0, -1.0, 4), (0.0, 10.0, 0.5, 0)])
    def test_bad_arguments(self, args):
        with pytest.raises(ParameterError):
            build_correlation(*args)


class TestPsd:
    def test_sqrt_identity_and_diag(self):
        np.testing.assert_allclose(psd_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
        np.testing.assert_allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)

    @given(seed=st.integers(0, 2**31), n=st.integers(1, 8))
    @settings(max_examples=30, deadline=None)
    def test_sqrt_reconstructs(self, seed, n):
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        A = G.conj().T @ G
        S = psd_sqrt(A)
        assert np.max(np.abs(S - S.conj().T)) <= 1e-12 * np.abs(S).max()
        assert np.linalg.norm(S @ S - A) <= 1e-10 * np.linalg.norm(A)

    def test_non_hermitian_rejected(self):
        with pytest.raises(ParameterError):
            psd_sqrt(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_clamps_tiny_negative(self):
        A = np.diag([1.0, -1e-12])
        out = as_hermitian_psd(A)
        assert out[1, 1] == 0.0
        assert not out.flags.writeable

    def test_rejects_negative(self):
        with pytest.raises(NumericalError):
            as_hermitian_psd(np.diag([1.0, -1e-3]))


class TestReduceRaw:
    def test_identity(self):
        raw = RawChannelSpec(np.eye(3), np.eye(4), np.eye(4), np.eye(2), np.eye(4), np.eye(2))
        c = reduce_raw_spec(raw)
        for name in ("R1", "T1", "R2", "T2"):
            m = getattr(c, name)
            np.testing.assert_allclose(m, np.eye(m.shape[0]), atol=1e-14)

    def test_diag_squares(self):
        raw = RawChannelSpec(np.diag([2.0, 1.0]), np.eye(2), np.eye(2), np.eye(2), np.eye(2),
                             np.eye(2))
        np.testing.assert_allclose(reduce_raw_spec(raw).R1, np.diag([4.0, 1.0]), atol=1e-14)

    def test_trace_identities(self, rng):
        def ud(n):
            return random_unitary(rng, n) @ np.diag(rng.uniform(0.1, 2.0, n))

        A1, B1, A2, B2, Phi = ud(4), ud(4), ud(4), ud(4), ud(4)
        P = random_psd(rng, 4)
        c = reduce_raw_spec(RawChannelSpec(A1, B1, A2, B2, Phi, P))
        fro2 = lambda a: np.linalg.norm(a) ** 2  # noqa: E731
        Ph = psd_sqrt(P)
        for got, want in ((np.trace(c.R1), fro2(A1)), (np.trace(c.R2), fro2(A2)),
                          (np.trace(c.T1), fro2(B1 @ Phi)), (np.trace(c.T2), fro2(B2 @ Ph))):
            assert abs(got.real - want) <= 1e-10 * want
        # the equivalent model reproduces the channel covariances
        np.testing.assert_allclose(c.T1, (B1 @ Phi).conj().T @ (B1 @ Phi), atol=1e-12)

    def test_inconsistent_dims(self):
        with pytest.raises(ParameterError):
            RawChannelSpec(np.eye(3), np.eye(4), np.eye(5), np.eye(2), np.eye(4), np.eye(2))

    def test_non_psd_p(self):
        with pytest.raises((ParameterError, NumericalError)):
            RawChannelSpec(np.eye(2), np.eye(2), np.eye(2), np.eye(2), np.eye(2),
                           np.diag([1.0, -1.0]))


class TestAssumptionReport:
    def test_identities(self):
        rep = assumption_report(CorrelationSet.identity(5, 5, 5), SystemParams(5, 5, 5, 1, 1, 1))
        assert rep.ratio_N_L == rep.ratio_L_M == 1.0
        assert all(abs(v - 1) < 1e-15 for v in rep.traces.values())
        assert all(abs(v - 1) < 1e-12 for v in rep.norms.values())

    def test_zero_r1_reported(self):
        c = CorrelationSet(np.zeros((3, 3)), np.eye(3), np.eye(3), np.eye(3))
        rep = assumption_report(c, SystemParams(3, 3, 3, 1, 1, 1))
        assert rep.traces["R1/N"] == 0.0

    def test_model_matrices_against_dense(self):
        R = build_correlation(30.0, 10.0, 0.5, 16)
        T = build_correlation(-20.0, 15.0, 0.5, 12)
        c = CorrelationSet(R, T, T, np.eye(8))
        rep = assumption_report(c, SystemParams(16, 12, 8, 1, 1, 1))
        assert abs(rep.traces["R1/N"] - np.trace(R).real / 16) < 1e-14
        assert abs(rep.traces["R2T1/L"] - np.trace(T @ T).real / 12) < 1e-13
        assert abs(rep.norms["R1"] - np.linalg.svd(R, compute_uv=False)[0]) < 1e-12


def test_matrix_csv_roundtrip(tmp_path, rng):
    A = random_psd(rng, 5)
    f = tmp_path / "a.csv"
    write_matrix_csv(f, A)
    B = read_matrix_csv(f)
    np.testing.assert_array_equal(A, B)
    text = f.read_text()
    assert text.startswith("# dim=5 hermitian\n")


def test_matrix_csv_parse(tmp_path):
    f = tmp_path / "b.csv"
    f.write_text("# dim=2 hermitian\n1,0.5-0.25i\n0.5+0.25i,2\n")
    np.testing.assert_array_equal(read_matrix_csv(f), np.array([[1, 0.5 - 0.25j], [0.5 + 0.25j, 2]]))
    f.write_text("1,0\n0,1\n")
    with pytest.raises(ParameterError):
        read_matrix_csv(f)


def test_fixed_power_scaling():
    t1, r2, t2 = fixed_power_scaling(16, 1.0, 0.5, 1e-4, 1e-5)
    a2 = 0.5 / (16 * (1e-4 * 1.0 + 1e-5))
    assert t1 == pytest.approx(1e-4 * a2, rel=1e-15)
    assert r2 == 1e-4 and t2 == 1.0
