"""Run configuration: sectioned ``key = value`` files read with configparser.

Grammar::

    [problem]
    n = 2
    resolution = N,8,8,N      ; per-axis points, N replaced by each refine level
    refine = 16,32,64
    period = 6.283185307179586
    bounds = 0:1,0:1,0:1,0:1  ; box only, one lo:hi per real axis
    chi = omega               ; omega | zero
    psi = manufactured        ; see PSI_SPECS
    psi.c = 1.0               ; parameters of the named spec use a dotted prefix
    u_star = sine_product
    u_star.amplitude = 0.1

    [schedule]
    s_steps = 11
    eps = 1e-1,1e-2,1e-3,1e-4
    max_iter = 40
    residual_tol = 1e-10

    [output]
    dir = out
    format = json             ; json | csv | bin

Lines starting with ``;`` or ``#`` are comments.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputRejected

PSI_SPECS = {"manufactured": (), "const": ("c",), "exp_u": ("weight",), "zero": ()}
U_STAR_SPECS = {"sine_product": ("amplitude", "quad"), "zero": ()}
BOUNDARY_SPECS = {"harmonic_exp": ("a", "b"), "u_star": ()}
ENDPOINT_SPECS = {"wave": ("amplitude", "shift"), "zero": ()}
PROFILE_SPECS = {"quartic": (), "log": (), "identity": ()}
FORMATS = ("json", "csv", "bin")

_KNOWN = {
    "problem": {"n", "resolution", "refine", "period", "bounds", "chi", "psi", "u_star", "boundary",
                "phi0", "phi1", "t_resolution", "subsolution_delta", "seed"},
    "schedule": {"s_steps", "eps", "max_iter", "residual_tol", "min_damping", "sigma"},
    "output": {"dir", "format"},
    "geometry": {"count", "seed", "jets"},
    "oracle": {"im_abs_resolution", "safety", "profile", "radial_resolution", "quadric_points"},
}
_NAMED = {"psi": PSI_SPECS, "u_star": U_STAR_SPECS, "boundary": BOUNDARY_SPECS,
          "phi0": ENDPOINT_SPECS, "phi1": ENDPOINT_SPECS, "profile": PROFILE_SPECS}


class ConfigError(InputRejected):
    """Malformed or out-of-range configuration."""

    def __init__(self, message: str, section: str | None = None, key: str | None = None,
                 line: int | None = None):
        self.section, self.key, self.line = section, key, line
        where = ".".join(p for p in (section, key) if p)
        prefix = f"[{where}] " if where else ""
        suffix = f" (line {line})" if line is not None else ""
        super().__init__(f"{prefix}{message}{suffix}")

    def to_dict(self) -> dict:
        return {"error": "config", "section": self.section, "key": self.key, "line": self.line,
                "message": str(self)}


@dataclass
class RunConfig:
    problem: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    geometry: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    source: str | None = None

    def resolved(self) -> dict:
        return {"problem": self.problem, "schedule": self.schedule, "output": self.output,
                "geometry": self.geometry, "oracle": self.oracle}

    def params(self, name: str) -> dict:
        """Dotted parameters ``name.key`` of a named spec in [problem] or [oracle]."""
        pre = name + "."
        out = {}
        for sec in (self.problem, self.oracle):
            out.update({k[len(pre):]: v for k, v in sec.items() if k.startswith(pre)})
        return out


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _coerce(section: str, key: str, raw: str):
    raw = raw.strip()
    try:
        if key in ("n", "t_resolution", "s_steps", "max_iter", "count", "seed", "jets", "safety",
                   "im_abs_resolution", "radial_resolution", "quadric_points"):
            v = int(raw)
            if v < (0 if key == "seed" else 1):
                raise ConfigError("must be positive", section, key)
            return v
        if key in ("period", "residual_tol", "min_damping", "sigma", "subsolution_delta"):
            v = float(raw)
            if v <= 0:
                raise ConfigError("must be positive", section, key)
            return v
        if key == "refine":
            v = _ints(raw)
            if not v or min(v) < 3:
                raise ConfigError("refine levels must be integers >= 3", section, key)
            return v
        if key == "eps":
            v = _floats(raw)
            if not v or min(v) <= 0:
                raise ConfigError("eps must be positive", section, key)
            return v
        if key == "bounds":
            pairs = []
            for item in raw.split(","):
                lo, hi = item.split(":")
                pairs.append((float(lo), float(hi)))
            return pairs
        if "." in key:
            return float(raw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r}: {exc}", section, key) from None
    return raw


def parse_config(text: str, source: str | None = None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"expected a [section] header, got {exc.line.strip()!r}", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"malformed line: {exc.errors[0][1] if exc.errors else ''}", line=line) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from None
    cfg = RunConfig(source=source)
    for sec in parser.sections():
        if sec not in _KNOWN:
            raise ConfigError("unknown section", sec)
        target = getattr(cfg, sec)
        for key, raw in parser.items(sec):
            base = key.split(".", 1)[0]
            if base not in _KNOWN[sec]:
                raise ConfigError("unknown key", sec, key)
            if "." in key:
                allowed = _NAMED.get(base, {}).get(target.get(base, ""), None)
                if allowed is not None and key.split(".", 1)[1] not in allowed:
                    raise ConfigError(f"unknown parameter for {target.get(base)!r}", sec, key)
            target[key] = _coerce(sec, key, raw)
    for sec_name in ("problem", "oracle"):
        sec = getattr(cfg, sec_name)
        for key, registry in _NAMED.items():
            if key in sec and sec[key] not in registry:
                raise ConfigError(f"unknown spec {sec[key]!r}; choose from {sorted(registry)}", sec_name, key)
    fmt = cfg.output.get("format", "json")
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}", "output", "format")
    chi = cfg.problem.get("chi", "omega")
    if chi not in ("omega", "zero"):
        raise ConfigError("chi must be omega or zero", "problem", "chi")
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    return parse_config(text, str(p))


def resolutions(cfg: RunConfig, n: int, default_refine: list[int]) -> list[list[int]]:
    """Per-axis resolutions for each refine level."""
    template = cfg.problem.get("resolution")
    levels = cfg.problem.get("refine", default_refine)
    if template is None:
        template = "N,8,8,N" if n == 2 else ",".join(["N"] * (2 * n))
    out = []
    for N in levels:
        try:
            res = [N if item.strip() == "N" else int(item) for item in template.split(",")]
        except ValueError:
            raise ConfigError(f"bad resolution template {template!r}", "problem", "resolution") from None
        if len(res) != 2 * n:
            raise ConfigError(f"need {2 * n} resolutions, got {len(res)}", "problem", "resolution")
        out.append(res)
    return out
