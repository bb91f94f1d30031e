"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import deterministic as det
from .config import RunConfig, load_config
from .errors import ConvergenceError, InternalConsistencyError, NumericalError, ParameterError
from .fixed_point import IidParams, iid_mF, iid_mG
from .montecarlo import mahalanobis_sq, run_mc, sample_channel, empirical_esd, write_samples_csv
from .spectrum import lsd_density, right_edge

LN2 = math.log(2.0)
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "NA" if not math.isfinite(x) else f"{float(x):.17g}"
    return str(x)


class Report:
    """Table of rows rendered as CSV or JSON."""

    def __init__(self, columns):
        self.columns = list(columns)
        self.rows = []
        self.meta = {}

    def add(self, *vals):
        self.rows.append(list(vals))

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows([_fmt(v) for v in r] for r in self.rows)
        return buf.getvalue()

    def json(self) -> str:
        def conv(v):
            if isinstance(v, (np.floating, float)):
                return float(v) if math.isfinite(v) else None
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, np.bool_):
                return bool(v)
            return v

        doc = {"columns": self.columns,
               "rows": [[conv(v) for v in r] for r in self.rows]}
        if self.meta:
            doc["meta"] = {k: conv(v) for k, v in self.meta.items()}
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _render(rep: Report, args) -> None:
    _emit(rep.csv() if args.format == "csv" else rep.json(), args.out)


def _units(args, cfg: RunConfig | None) -> str:
    if args.units:
        return args.units
    return cfg.units if cfg is not None else "nats"


class _Units:
    """Divide means by ``ln 2`` and variances by ``(ln 2)^2`` for bits."""

    def __init__(self, units: str):
        self.d1 = LN2 if units == "bits" else 1.0
        self.d2 = LN2**2 if units == "bits" else 1.0

    def m(self, x):
        return x / self.d1

    def v(self, x):
        return x / self.d2


def _need_config(args) -> RunConfig:
    if not args.config:
        raise ParameterError("--config is required for this command")
    return load_config(args.config)


def _analysis(cfg: RunConfig, corr, p):
    s = cfg.solver
    return det.analyze(corr, p, tol=s.get("tol", 1e-12), max_outer=s.get("max_outer", 10000),
                       max_inner=s.get("max_inner", 200), damping=s.get("damping", 1.0),
                       max_iter=s.get("max_iter", 100000))


def _all_identity(corr) -> bool:
    return all(corr.is_identity(k) for k in ("R1", "T1", "R2", "T2"))


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    cfg = _need_config(args)
    p = cfg.params()
    corr = cfg.correlations()
    a = _analysis(cfg, corr, p)
    rep = Report(["quantity", "value"])
    s1, s2, fn = a.sol1, a.sol2, a.fn
    for k in ("delta", "omega_bar", "omega_under", "gamma"):
        rep.add(k, getattr(s1, k))
    rep.add("tau", s2.tau)
    rep.add("tau_bar", s2.tau_bar)
    rep.add("residual_system1", s1.residual)
    rep.add("residual_system2", s2.residual)
    rep.add("iterations_system1", s1.iterations)
    rep.add("inner_iterations_system1", s1.inner_iterations)
    rep.add("iterations_system2", s2.iterations)
    for name in ("delta_k", "delta_kI", "omega_bar_k", "omega_under_k", "omega_under_kI",
                 "gamma_k", "tau_k", "tau_kI", "tau_bar_k"):
        for k, v in getattr(fn, name).items():
            rep.add(f"{name}[{k}]", v)
    for name in ("omega_mixed", "omega_mixed_I", "vartheta_kl", "vartheta_klI", "vartheta_kIl",
                 "phi_bar_kl", "phi_under_kl"):
        for (k, l), v in getattr(fn, name).items():
            rep.add(f"{name}[{k},{l}]", v)
    for k in ("phi_mixed_12", "phi_mixed_12_tilde", "varsigma", "Delta", "Delta_V1", "Delta_V2", "vartheta", "phi_bar",
              "phi_under", "Delta_C"):
        rep.add(k, getattr(fn, k))
    if _all_identity(corr):
        iid = IidParams.from_dims(p.N, p.L, p.M)
        ref = iid.c1 * iid_mF(iid, p.s_bar, p.z)
        rep.add("iid_c1_mF", ref)
        rep.add("iid_delta_gap", abs(s1.delta - ref))
        if p.s_under > 0:
            ref2 = iid.c1 * iid_mG(iid.c1, p.s_under, p.z)
            rep.add("iid_c1_mG", ref2)
            rep.add("iid_tau_gap", abs(s2.tau - ref2))
    _render(rep, args)
    return EXIT_OK


def _gm_rows(rep: Report, gm, u: "_Units") -> None:
    rep.add("I1", u.m(gm.mean_I1))
    rep.add("I2", u.m(gm.mean_I2))
    rep.add("I", u.m(gm.mean_I))
    rep.add("V11", u.v(gm.V[0, 0]))
    rep.add("V12", u.v(gm.V[0, 1]))
    rep.add("V22", u.v(gm.V[1, 1]))


def cmd_analyze(args) -> int:
    cfg = _need_config(args)
    units = _units(args, cfg)
    u = _Units(units)
    p = cfg.params()
    out = cfg.doc.get("outage", {})
    if out and p.s_bar != p.s_under:
        raise ParameterError("outage quantities need sigma1_sq_bar == sigma1_sq_under")
    gm = _analysis(cfg, cfg.correlations(), p).gm
    rep = Report(["quantity", "value"])
    _gm_rows(rep, gm, u)
    if out:
        rep.add("var_I", u.v(gm.var_I))
        if "rate" in out:
            rep.add("rate", out["rate"])
            rep.add("p_out", float(det.outage_probability(gm, out["rate"] * u.d1)))
        if "p_out" in out:
            rep.add("p_out_target", out["p_out"])
            rep.add("C_out", u.m(det.outage_rate(gm, out["p_out"])))
    rep.meta["units"] = units
    _render(rep, args)
    return EXIT_OK


def cmd_mc(args) -> int:
    cfg = _need_config(args)
    units = _units(args, cfg)
    u = _Units(units)
    p = cfg.params()
    corr = cfg.correlations()
    mcfg = cfg.mc
    seed = args.seed if args.seed is not None else mcfg.get("seed", 0)
    workers = args.workers if args.workers is not None else mcfg.get("workers", 1)
    n = mcfg.get("samples", 10000)
    gm = _analysis(cfg, corr, p).gm
    mc = run_mc(corr, p, n, seed=seed, workers=workers)
    rep = Report(["quantity", "empirical", "stderr", "deterministic"])
    c = mc.cov
    rep.add("I1", u.m(mc.mean[0]), u.m(mc.stderr[0]), u.m(gm.mean_I1))
    rep.add("I2", u.m(mc.mean[1]), u.m(mc.stderr[1]), u.m(gm.mean_I2))
    rep.add("I", u.m(mc.mean_I), u.m(mc.stderr_I), u.m(gm.mean_I))
    for (i, j), name in (((0, 0), "V11"), ((0, 1), "V12"), ((1, 1), "V22")):
        rep.add(name, u.v(c[i, j]), u.v(mc.cov_stderr[i, j]), u.v(gm.V[i, j]))
    rep.meta.update(n_samples=n, seed=seed, units=units)
    if "dump" in mcfg:
        write_samples_csv(cfg._path(mcfg["dump"]), mc)
    if "mahalanobis" in mcfg:
        d2 = mahalanobis_sq(mc, gm)
        q = -2.0 * np.log1p(-(np.arange(d2.size) + 0.5) / d2.size)
        lines = ["d2,chi2_quantile"] + [f"{a:.17g},{b:.17g}" for a, b in zip(d2, q)]
        cfg._path(mcfg["mahalanobis"]).write_text("\n".join(lines) + "\n", encoding="utf-8",
                                                  newline="\n")
    _render(rep, args)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg = _need_config(args)
    sp = cfg.doc.get("spectrum", {})
    p = cfg.params()
    corr = cfg.correlations()
    system = sp.get("system", 1)
    s = sp.get("s_bar", p.s_bar if system == 1 else p.s_under)
    grid = None
    if "x_max" in sp or "grid_points" in sp:
        x_max = sp.get("x_max") or 1.2 * right_edge(corr, s, system)
        grid = np.linspace(0.0, x_max, sp.get("grid_points", 400))
    sd = lsd_density(corr, s, grid=grid, y=sp.get("y"), system=system)
    rep = Report(["x", "f"])
    for x, v in zip(sd.grid, sd.density):
        rep.add(x, v)
    rep.meta.update(mass=sd.mass, atom=sd.atom, y=sd.y, failed=int(sd.failed.sum()))
    ne = sp.get("empirical_samples", 0)
    if ne:
        seed = args.seed if args.seed is not None else cfg.mc.get("seed", 0)
        chs = [sample_channel(corr, p, i, seed) for i in range(ne)]
        if system == 2:
            chs = [type(c)(c.H1 * math.sqrt(s), np.zeros_like(c.H2)) for c in chs]
            h = empirical_esd(chs, 1.0, sp.get("bins", 100))
        else:
            h = empirical_esd(chs, s, sp.get("bins", 100))
        emp = Report(["x", "f_emp"])
        for x, v in zip(h.centers, h.density):
            emp.add(x, v)
        target = sp.get("empirical_out")
        if target:
            cfg._path(target).write_text(emp.csv(), encoding="utf-8", newline="\n")
        elif args.out:
            Path(str(args.out) + ".emp.csv").write_text(emp.csv(), encoding="utf-8",
                                                         newline="\n")
    _render(rep, args)
    print(f"mass={sd.mass:.6f} atom={sd.atom:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _need_config(args)
    sw = cfg.doc.get("sweep")
    if not sw:
        raise ParameterError("config has no 'sweep' section")
    units = _units(args, cfg)
    u = _Units(units)
    par = sw["parameter"]
    rep = Report([par, "I1", "I2", "I", "V11", "V12", "V22"])
    failures = 0
    for v in sw["values"]:
        try:
            if par == "snr_db":
                p = cfg.params(snr_db=v)
                corr = cfg.correlations()
            else:
                if v != int(v) or v < 1:
                    raise ParameterError(f"{par} must be a positive integer")
                kw = {par: int(v)}
                p = cfg.params(**kw)
                corr = cfg.correlations(**kw)
            corr = cfg.fixed_power(corr, p)
            gm = _analysis(cfg, corr, p).gm
            rep.add(v, u.m(gm.mean_I1), u.m(gm.mean_I2), u.m(gm.mean_I), u.v(gm.V[0, 0]),
                    u.v(gm.V[0, 1]), u.v(gm.V[1, 1]))
        except (ParameterError, NumericalError, InternalConsistencyError) as exc:
            failures += 1
            print(f"warning: {par}={v}: {exc}", file=sys.stderr)
            rep.add(v, None, None, None, None, None, None)
    rep.meta.update(units=units, failures=failures)
    _render(rep, args)
    if failures:
        print(f"{failures} sweep point(s) failed", file=sys.stderr)
    return EXIT_OK


def cmd_iid(args) -> int:
    units = args.units or "nats"
    u = _Units(units)
    iid = IidParams(args.c1, args.c2)
    s1, s2, N = args.sigma1_sq, args.sigma2_sq, args.n
    if s2 <= 0 or s1 < 0 or N <= 0:
        raise ParameterError("need sigma2_sq > 0, sigma1_sq >= 0, n > 0")
    I1, I2 = det.iid_means(iid, N, s1, s2)
    dv1, dv2, dc = det.iid_deltas(iid, s1, s2)
    V = det.iid_covariance(iid, s1, s2)
    rep = Report(["quantity", "value"])
    rep.add("m_F", iid_mF(iid, s1, s2))
    rep.add("m_G", iid_mG(iid.c1, s1, s2))
    rep.add("I1", u.m(I1))
    rep.add("I2", u.m(I2))
    rep.add("I", u.m(I1 - I2))
    rep.add("Delta_V1", dv1)
    rep.add("Delta_V2", dv2)
    rep.add("Delta_C", dc)
    rep.add("V11", u.v(V[0, 0]))
    rep.add("V12", u.v(V[0, 1]))
    rep.add("V22", u.v(V[1, 1]))
    if args.large_l is not None:
        M = N / args.large_l
        mean, var = det.iid_large_L(args.large_l, N, M, s1, s2)
        rep.add("I_large_L", u.m(mean))
        rep.add("var_large_L", u.v(var))
    rep.meta.update(units=units, N=N)
    _render(rep, args)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("--units", choices=["nats", "bits"], default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)

    ap = _Parser(prog="twohop", description="Two-hop MIMO mutual information toolkit")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn, hlp in (("solve", cmd_solve, "fixed-point solutions and functionals"),
                          ("analyze", cmd_analyze, "means and covariance, optionally outage"),
                          ("mc", cmd_mc, "Monte Carlo validation"),
                          ("spectrum", cmd_spectrum, "limiting spectral density"),
                          ("sweep", cmd_sweep, "parameter sweep")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.set_defaults(func=fn)
    sp = sub.add_parser("iid", parents=[common], help="closed forms for identity correlations")
    sp.add_argument("--c1", type=float, required=True)
    sp.add_argument("--c2", type=float, required=True)
    sp.add_argument("--sigma1-sq", dest="sigma1_sq", type=float, required=True)
    sp.add_argument("--sigma2-sq", dest="sigma2_sq", type=float, required=True)
    sp.add_argument("--n", type=float, default=1.0, help="receive dimension N (default 1)")
    sp.add_argument("--large-l", dest="large_l", type=float, default=None,
                    help="also report the large-relay limit with N/M = c")
    sp.set_defaults(func=cmd_iid)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.seed is not None and args.seed < 0:
            raise ParameterError("--seed must be nonnegative")
        if args.workers is not None and args.workers < 1:
            raise ParameterError("--workers must be positive")
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, NumericalError, InternalConsistencyError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
