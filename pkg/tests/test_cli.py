import csv
import io
import json
import math

import numpy as np
import pytest

from twohop import cli
from twohop.deterministic import analyze
from twohop.fixed_point import IidParams, iid_mF
from twohop.model import CorrelationSet, SystemParams, build_correlation


def write(tmp_path, doc, name="c.json"):
    f = tmp_path / name
    f.write_text(json.dumps(doc))
    return str(f)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], {r[0]: r[1:] for r in rows[1:]}


IDENT = {"dims": {"N": 8, "L": 8, "M": 8}, "noise": {"sigma2_sq": 1.0}}


class TestSolve:
    def test_identity_consistency(self, tmp_path, capsys):
        code, out, _ = run(capsys, "solve", "--config", write(tmp_path, IDENT))
        assert code == 0
        _, t = table(out)
        d = float(t["delta"][0])
        assert abs(d - iid_mF(IidParams(1, 1), 1.0, 1.0)) <= 1e-8
        assert float(t["iid_delta_gap"][0]) <= 1e-8
        assert float(t["Delta_V1"][0]) > 0 and "vartheta_kl[1,2]" in t

    def test_zero_under(self, tmp_path, capsys):
        doc = {"dims": {"N": 4, "L": 6, "M": 3},
               "noise": {"sigma2_sq": 1.0, "sigma1_sq_under": 0.0},
               "correlation": {"T1": {"model": {"eta_deg": 0, "delta_c_deg": 20, "d_s": 0.5}}}}
        code, out, _ = run(capsys, "solve", "--config", write(tmp_path, doc))
        _, t = table(out)
        T1 = build_correlation(0, 20, 0.5, 6)
        assert float(t["tau_bar"][0]) == pytest.approx(np.trace(T1).real / 6, rel=1e-15)

    @pytest.mark.parametrize("text", ["{", '{"dims": {"N": 2}}', '{"dims": {"N": 2, "L": 2, '
                                      '"M": 2}, "noise": {"sigma2_sq": -1}}'])
    def test_malformed(self, tmp_path, capsys, text):
        f = tmp_path / "bad.json"
        f.write_text(text)
        code, out, err = run(capsys, "solve", "--config", str(f))
        assert code == 1 and out == "" and err.startswith("error:")

    def test_solver_failure(self, tmp_path, capsys):
        doc = dict(IDENT, solver={"max_outer": 1})
        code, _, err = run(capsys, "solve", "--config", write(tmp_path, doc))
        assert code == 2 and "did not converge" in err


class TestAnalyze:
    def test_zero_under_row(self, tmp_path, capsys):
        doc = {"dims": {"N": 4, "L": 4, "M": 4}, "noise": {"sigma2_sq": 1, "sigma1_sq_under": 0}}
        _, out, _ = run(capsys, "analyze", "--config", write(tmp_path, doc))
        assert table(out)[1]["I2"] == ["0"]

    def test_identity_bit_for_bit(self, tmp_path, capsys):
        doc = {"dims": {"N": 32, "L": 32, "M": 32}, "noise": {"sigma2_sq": 1.0}}
        _, out, _ = run(capsys, "analyze", "--config", write(tmp_path, doc))
        gm = analyze(CorrelationSet.identity(32, 32, 32), SystemParams(32, 32, 32, 1, 1, 1)).gm
        t = table(out)[1]
        assert float(t["I1"][0]) == gm.mean_I1 and float(t["I2"][0]) == gm.mean_I2
        assert float(t["V12"][0]) == gm.V[0, 1]

    def test_correlated_matches_library(self, tmp_path, capsys):
        doc = {"dims": {"N": 8, "L": 12, "M": 6}, "noise": {"snr_db": 10, "p_t": 1.0},
               "correlation": {"R1": {"model": {"eta_deg": 30, "delta_c_deg": 10, "d_s": 0.5}},
                               "T1": {"model": {"eta_deg": -10, "delta_c_deg": 20, "d_s": 0.5}},
                               "R2": {"model": {"eta_deg": 40, "delta_c_deg": 15, "d_s": 0.5}},
                               "T2": {"model": {"eta_deg": 0, "delta_c_deg": 5, "d_s": 0.5}}},
               "outage": {"rate": 1.0, "p_out": 0.05}}
        _, out, _ = run(capsys, "analyze", "--config", write(tmp_path, doc))
        t = table(out)[1]
        c = CorrelationSet(build_correlation(30, 10, 0.5, 8), build_correlation(-10, 20, 0.5, 12),
                           build_correlation(40, 15, 0.5, 12), build_correlation(0, 5, 0.5, 6))
        a = analyze(c, SystemParams(8, 12, 6, 0.1, 0.1, 0.1))
        assert float(t["I"][0]) == pytest.approx(a.gm.mean_I, rel=1e-12)
        assert float(t["V11"][0]) == pytest.approx(a.gm.V[0, 0], rel=1e-10)
        from twohop.deterministic import outage_probability, outage_rate
        assert float(t["p_out"][0]) == pytest.approx(outage_probability(a.gm, 1.0), rel=1e-10)
        assert float(t["C_out"][0]) == pytest.approx(outage_rate(a.gm, 0.05), rel=1e-10)

    def test_outage_unequal(self, tmp_path, capsys):
        doc = {"dims": {"N": 4, "L": 4, "M": 4},
               "noise": {"sigma2_sq": 1, "sigma1_sq_bar": 1, "sigma1_sq_under": 0.5},
               "outage": {"rate": 1}}
        code, _, err = run(capsys, "analyze", "--config", write(tmp_path, doc))
        assert code == 1 and "sigma1_sq_bar" in err

    def test_bits(self, tmp_path, capsys):
        f = write(tmp_path, IDENT)
        _, nats, _ = run(capsys, "analyze", "--config", f)
        _, bits, _ = run(capsys, "analyze", "--config", f, "--units", "bits")
        tn, tb = table(nats)[1], table(bits)[1]
        for k in ("I1", "I2", "I"):
            assert float(tb[k][0]) == float(tn[k][0]) / math.log(2)
        for k in ("V11", "V12", "V22"):
            assert float(tb[k][0]) == float(tn[k][0]) / math.log(2) ** 2

    def test_json(self, tmp_path, capsys):
        _, out, _ = run(capsys, "analyze", "--config", write(tmp_path, IDENT), "--format", "json")
        doc = json.loads(out)
        assert doc["columns"] == ["quantity", "value"] and doc["rows"][0][0] == "I1"


class TestMc:
    def test_reproducible_and_close(self, tmp_path, capsys):
        doc = dict(IDENT, mc={"samples": 4000, "seed": 5, "mahalanobis": "m.csv", "dump": "d.csv"})
        f = write(tmp_path, doc)
        outs = []
        for w in ("1", "4"):
            code, out, _ = run(capsys, "mc", "--config", f, "--workers", w)
            assert code == 0
            outs.append(out)
        assert outs[0] == outs[1]
        hdr, t = table(outs[0])
        assert hdr == ["quantity", "empirical", "stderr", "deterministic"]
        for k in ("I1", "I2"):
            e, se, d = map(float, t[k])
            assert abs(e - d) <= 3 * se
        m = (tmp_path / "m.csv").read_text().splitlines()
        assert m[0] == "d2,chi2_quantile" and len(m) == 4001
        q = [float(r.split(",")[1]) for r in m[1:3]]
        assert q[0] == pytest.approx(-2 * math.log(1 - 0.5 / 4000))
        assert (tmp_path / "d.csv").read_text().startswith("sample,I1,I2\n0,")

    def test_seed_flag(self, tmp_path, capsys):
        f = write(tmp_path, dict(IDENT, mc={"samples": 50}))
        a = run(capsys, "mc", "--config", f, "--seed", "1")[1]
        b = run(capsys, "mc", "--config", f, "--seed", "2")[1]
        assert a != b


class TestSpectrum:
    def test_files(self, tmp_path, capsys):
        outs = {}
        for s in (0, 2):
            doc = {"dims": {"N": 20, "L": 40, "M": 30}, "noise": {"sigma2_sq": 1.0},
                   "spectrum": {"s_bar": s, "empirical_samples": 3, "bins": 20,
                                "empirical_out": f"e{s}.csv"}}
            out = tmp_path / f"d{s}.csv"
            code, _, err = run(capsys, "spectrum", "--config", write(tmp_path, doc), "--out",
                               str(out))
            assert code == 0 and "mass=" in err
            rows = out.read_text().splitlines()
            assert rows[0] == "x,f" and len(rows) == 401
            x, f = np.loadtxt(out, delimiter=",", skiprows=1).T
            assert 0.97 <= np.trapezoid(f, x) <= 1.01
            outs[s] = (x, f)
            assert (tmp_path / f"e{s}.csv").read_text().startswith("x,f_emp\n")
        top = {s: x[f > 1e-3 * f.max()].max() for s, (x, f) in outs.items()}
        assert top[2] > top[0]

    def test_missing_config(self, capsys):
        code, _, _ = run(capsys, "spectrum", "--config", "/nonexistent/c.json")
        assert code == 1


class TestSweep:
    def test_snr_increasing(self, tmp_path, capsys):
        doc = {"dims": {"N": 6, "L": 8, "M": 5}, "noise": {"snr_db": 0},
               "sweep": {"parameter": "snr_db", "values": [-5, 0, 5, 10, 20]}}
        code, out, _ = run(capsys, "sweep", "--config", write(tmp_path, doc))
        rows = list(csv.reader(io.StringIO(out)))
        assert code == 0 and rows[0][:4] == ["snr_db", "I1", "I2", "I"]
        vals = [float(r[3]) for r in rows[1:]]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_row_count_and_na(self, tmp_path, capsys):
        doc = {"dims": {"N": 4, "L": 4, "M": 4}, "noise": {"sigma2_sq": 1.0},
               "sweep": {"parameter": "L", "values": [2, 2.5, 8]}}
        code, out, err = run(capsys, "sweep", "--config", write(tmp_path, doc))
        rows = list(csv.reader(io.StringIO(out)))
        assert code == 0 and len(rows) == 4
        assert rows[2][1:] == ["NA"] * 6
        assert "1 sweep point(s) failed" in err

    def test_no_section(self, tmp_path, capsys):
        assert run(capsys, "sweep", "--config", write(tmp_path, IDENT))[0] == 1


class TestIid:
    def test_values(self, capsys):
        code, out, _ = run(capsys, "iid", "--c1", "1", "--c2", "1", "--sigma1-sq", "1",
                           "--sigma2-sq", "1", "--n", "16", "--large-l", "1")
        t = table(out)[1]
        assert code == 0
        gm = analyze(CorrelationSet.identity(16, 16, 16), SystemParams(16, 16, 16, 1, 1, 1)).gm
        assert float(t["I"][0]) == pytest.approx(gm.mean_I, rel=1e-10)
        assert float(t["V11"][0]) == pytest.approx(gm.V[0, 0], rel=1e-9)
        assert "I_large_L" in t

    def test_bad(self, capsys):
        assert run(capsys, "iid", "--c1", "1", "--c2", "1", "--sigma1-sq", "1",
                   "--sigma2-sq", "0")[0] == 1
        assert run(capsys, "iid", "--c1", "1")[0] == 1


def test_usage_errors(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "analyze")[0] == 1
    assert run(capsys, "analyze", "--format", "xml")[0] == 1
