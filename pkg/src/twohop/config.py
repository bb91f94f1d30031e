"""JSON run configuration schema and loading."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import ParameterError
from .model import (CorrelationSet, RawChannelSpec, SystemParams, build_correlation,
                    fixed_power_scaling, read_matrix_csv, reduce_raw_spec)

__all__ = ["SCHEMA", "RunConfig", "load_config", "parse_config"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_scale = {"scale": _pos}

_matrix_spec = {
    "oneOf": [
        {"const": "identity"},
        {"type": "object", "additionalProperties": False, "required": ["identity"],
         "properties": {"identity": {"type": "object", "additionalProperties": False,
                                     "properties": _scale}}},
        {"type": "object", "additionalProperties": False, "required": ["model"],
         "properties": {"model": {
             "type": "object", "additionalProperties": False,
             "required": ["eta_deg", "delta_c_deg", "d_s"],
             "properties": {"eta_deg": _num, "delta_c_deg": _pos, "d_s": _nonneg, **_scale}}}},
        {"type": "object", "additionalProperties": False, "required": ["file"],
         "properties": {"file": {
             "type": "object", "additionalProperties": False, "required": ["path"],
             "properties": {"path": {"type": "string"}, **_scale}}}},
    ]
}

_raw_spec = {
    "type": "object", "additionalProperties": False,
    "required": ["A1", "B1", "A2", "B2", "Phi", "P"],
    "properties": {k: {"type": "string"} for k in ("A1", "B1", "A2", "B2", "Phi", "P")},
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["dims", "noise"],
    "properties": {
        "dims": {"type": "object", "additionalProperties": False, "required": ["N", "L", "M"],
                 "properties": {"N": _posint, "L": _posint, "M": _posint}},
        "noise": {
            "type": "object", "additionalProperties": False,
            "properties": {"sigma2_sq": _pos, "snr_db": _num, "p_t": _pos,
                           "sigma1_sq": _nonneg, "sigma1_sq_bar": _nonneg,
                           "sigma1_sq_under": _nonneg},
            "oneOf": [{"required": ["sigma2_sq"], "not": {"required": ["snr_db"]}},
                      {"required": ["snr_db"], "not": {"required": ["sigma2_sq"]}}],
        },
        "correlation": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["raw"],
                 "properties": {"raw": _raw_spec}},
                {"type": "object", "additionalProperties": False,
                 "properties": {k: _matrix_spec for k in ("R1", "T1", "R2", "T2")}},
            ]
        },
        "solver": {"type": "object", "additionalProperties": False,
                   "properties": {"tol": _pos, "max_outer": _posint, "max_inner": _posint,
                                  "max_iter": _posint,
                                  "damping": {"type": "number", "exclusiveMinimum": 0,
                                              "maximum": 1}}},
        "mc": {"type": "object", "additionalProperties": False,
               "properties": {"samples": {"type": "integer", "minimum": 2},
                              "seed": {"type": "integer", "minimum": 0},
                              "workers": _posint,
                              "dump": {"type": "string"},
                              "mahalanobis": {"type": "string"}}},
        "units": {"enum": ["nats", "bits"]},
        "outage": {"type": "object", "additionalProperties": False,
                   "properties": {"rate": _nonneg,
                                  "p_out": {"type": "number", "exclusiveMinimum": 0,
                                            "exclusiveMaximum": 1}}},
        "spectrum": {"type": "object", "additionalProperties": False,
                     "properties": {"s_bar": _nonneg, "system": {"enum": [1, 2]},
                                    "grid_points": {"type": "integer", "minimum": 2},
                                    "x_max": _pos, "y": _pos,
                                    "empirical_samples": {"type": "integer", "minimum": 0},
                                    "bins": _posint,
                                    "empirical_out": {"type": "string"}}},
        "sweep": {"type": "object", "additionalProperties": False,
                  "required": ["parameter", "values"],
                  "properties": {"parameter": {"enum": ["snr_db", "L", "N"]},
                                 "values": {"type": "array", "minItems": 1, "items": _num},
                                 "fixed_power": {
                                     "type": "object", "additionalProperties": False,
                                     "required": ["p_relay", "path_gain"],
                                     "properties": {"p_t": _pos, "p_relay": _pos,
                                                    "path_gain": _pos}}}},
    },
}


@dataclass
class RunConfig:
    """Validated configuration document plus its base directory."""

    doc: dict
    base: Path = field(default_factory=Path.cwd)

    # -- scalar views ---------------------------------------------------
    @property
    def dims(self) -> tuple[int, int, int]:
        d = self.doc["dims"]
        return d["N"], d["L"], d["M"]

    @property
    def units(self) -> str:
        return self.doc.get("units", "nats")

    @property
    def solver(self) -> dict:
        return dict(self.doc.get("solver", {}))

    @property
    def mc(self) -> dict:
        return dict(self.doc.get("mc", {}))

    def noise(self, snr_db: float | None = None) -> tuple[float, float, float]:
        """``(sigma1_sq_bar, sigma1_sq_under, sigma2_sq)``.

        With an SNR the receiver noise is ``p_t / 10^(snr/10)``. Relay noise
        defaults to the receiver noise unless given explicitly.
        """
        n = self.doc["noise"]
        if snr_db is not None or "snr_db" in n:
            snr = n["snr_db"] if snr_db is None else snr_db
            s2 = n.get("p_t", 1.0) / 10.0 ** (snr / 10.0)
        else:
            s2 = n["sigma2_sq"]
        s1 = n.get("sigma1_sq", s2)
        return n.get("sigma1_sq_bar", s1), n.get("sigma1_sq_under", s1), s2

    def params(self, N=None, L=None, M=None, snr_db=None) -> SystemParams:
        n0, l0, m0 = self.dims
        sb, su, z = self.noise(snr_db)
        return SystemParams(N or n0, L or l0, M or m0, sb, su, z)

    # -- correlations -------------------------------------------------------
    def _path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q

    def _matrix(self, spec, n: int, name: str):
        import numpy as np

        if spec == "identity":
            return np.eye(n)
        (kind, body), = spec.items()
        scale = body.get("scale", 1.0)
        if kind == "identity":
            m = np.eye(n)
        elif kind == "model":
            m = build_correlation(body["eta_deg"], body["delta_c_deg"], body["d_s"], n)
        else:
            m = read_matrix_csv(self._path(body["path"]))
            if m.shape[0] != n:
                raise ParameterError(f"{name} file is {m.shape[0]}x{m.shape[0]}, expected {n}x{n}")
        return scale * m

    def correlations(self, N=None, L=None, M=None) -> CorrelationSet:
        n0, l0, m0 = self.dims
        N, L, M = N or n0, L or l0, M or m0
        c = self.doc.get("correlation", {})
        if "raw" in c:
            raw = c["raw"]
            mats = {k: read_matrix_csv(self._path(v)) for k, v in raw.items()}
            corr = reduce_raw_spec(RawChannelSpec(**mats))
            if corr.dims != (N, L, M):
                raise ParameterError(f"raw matrices have dims {corr.dims}, expected {(N, L, M)}")
            return corr
        dims = {"R1": N, "T1": L, "R2": L, "T2": M}
        mats = {k: self._matrix(c.get(k, "identity"), dims[k], k) for k in dims}
        return CorrelationSet(**mats)

    def fixed_power(self, corr: CorrelationSet, p: SystemParams) -> CorrelationSet:
        fp = self.doc.get("sweep", {}).get("fixed_power")
        if fp is None:
            return corr
        t1, r2, t2 = fixed_power_scaling(p.L, fp.get("p_t", self.doc["noise"].get("p_t", 1.0)),
                                         fp["p_relay"], fp["path_gain"], p.s_bar)
        return corr.scaled(t1=t1, r2=r2, t2=t2)


def parse_config(doc, base=None) -> RunConfig:
    """Validate a decoded JSON document.

    Raises
    ------
    ParameterError
        With the JSON path of the first offending element.
    """
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise ParameterError(f"config error at {where}: {e.message}")
    for k, x in _walk_numbers(doc):
        if not math.isfinite(x):
            raise ParameterError(f"config error at {k}: non-finite number")
    return RunConfig(doc, Path(base) if base is not None else Path.cwd())


def _walk_numbers(obj, path=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _walk_numbers(v, f"{path}/{k}" if path else str(k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _walk_numbers(v, f"{path}/{i}")
    elif isinstance(obj, float):
        yield path, obj


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParameterError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{p}: invalid JSON ({exc})") from None
    return parse_config(doc, p.parent)
