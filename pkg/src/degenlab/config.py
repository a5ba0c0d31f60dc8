"""Run configuration: line-oriented ``key = value`` text under ``[section]`` headers.

Parsing stops at the first problem and reports it with its line number.
Sections that are absent stay ``None`` in :class:`RunConfig`; a present
section gets every missing key filled from :data:`SCHEMA`.  Which sections
are present decides which pipeline stages run.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

from .lemmas import ALL_IDS
from .metric import build_metric
from .solver import build_datum

P_RANGE = (1.1, 10.0)


class ConfigError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


def _split(text):
    return [v.strip() for v in text.replace(";", ",").split(",") if v.strip()]


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(text):
    return int(text, 10)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError("not a boolean")


def _floats(text):
    return tuple(_float(v) for v in _split(text))


def _ints(text):
    return tuple(_int(v) for v in _split(text))


def _strs(text):
    return tuple(_split(text))


def _points(text):
    # "0.5 0.5; 0.3 0.7": points separated by ';', coordinates by spaces
    pts = [tuple(_float(c) for c in chunk.split()) for chunk in text.split(";") if chunk.strip()]
    if not pts:
        raise ValueError("no points")
    return tuple(pts)


_TYPE_NAMES = {_float: "float", _int: "integer", _bool: "boolean", str: "string", _floats: "list of floats",
               _ints: "list of integers", _strs: "list of names", _points: "list of points"}

# section -> key -> (parser, default)
SCHEMA = {
    "problem": {
        "n": (_int, 2),
        "res": (_int, 33),
        "metric": (str, "identity"),
        "metric_params": (_floats, ()),
        "p": (_float, 2.0),
        "big_n": (_int, 1),
        "datum": (str, "linear"),
        "datum_params": (_floats, None),
    },
    "solver": {
        "eps_schedule": (_floats, (1e-1, 1e-2, 1e-3)),
        "tol": (_float, None),
        "max_iter": (_int, 200),
        "seed": (_int, 0),
        "method": (str, "auto"),
    },
    "diagnostics": {
        "delta": (_floats, (0.1,)),
        "nu": (_float, 0.5),
        "centers": (_points, ((0.5, 0.5),)),
        "radii": (_floats, (0.2,)),
        "holder_alphas": (_floats, (0.25, 0.5, 1.0)),
        "holder_max_dist": (_float, 0.25),
        "holder_fine_res": (_int, None),
    },
    "duality": {
        "enabled": (_bool, True),
    },
    "lemmas": {
        "ids": (_strs, ALL_IDS),
        "p": (_floats, (2.0,)),
        "budget": (_int, 10_000),
        "seed": (_int, 0),
    },
    "output": {
        "directory": (str, "out"),
        "formats": (_strs, ("csv",)),
    },
}

METHODS = ("auto", "ncg", "newton")
FORMATS = ("csv",)


@dataclass
class Section:
    values: dict
    lines: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def line(self, key):
        return self.lines.get(key)


@dataclass
class RunConfig:
    problem: Section | None = None
    solver: Section | None = None
    diagnostics: Section | None = None
    duality: Section | None = None
    lemmas: Section | None = None
    output: Section | None = None

    def stages(self) -> list:
        out = []
        if self.problem is not None:
            out.append("solve")
            if self.diagnostics is not None:
                out.append("diagnose")
            if self.duality is not None and self.duality.enabled:
                out.append("duality")
        if self.lemmas is not None:
            out.append("verify-lemmas")
        return out

    def needs_solve(self) -> bool:
        return self.problem is not None


def parse_config(text: str) -> RunConfig:
    raw = {}
    headers = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ConfigError(f"malformed section header {body!r}", lineno)
            section = body[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            if section in raw:
                raise ConfigError(f"duplicate section [{section}]", lineno)
            raw[section] = {}
            headers[section] = lineno
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        if section is None:
            raise ConfigError(f"key {key!r} outside of any section", lineno)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if key in raw[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}] (first set on line {raw[section][key][1]})",
                              lineno)
        parser = SCHEMA[section][key][0]
        try:
            parsed = parser(value)
        except ValueError:
            raise ConfigError(f"{key}: expected {_TYPE_NAMES[parser]}, got {value!r}", lineno) from None
        raw[section][key] = (parsed, lineno)

    cfg = RunConfig()
    for name, entries in raw.items():
        vals = {k: d for k, (_, d) in SCHEMA[name].items()}
        vals.update({k: v for k, (v, _) in entries.items()})
        lines = {k: ln for k, (_, ln) in entries.items()}
        lines[None] = headers[name]
        setattr(cfg, name, Section(vals, lines))
    if cfg.output is None:
        cfg.output = Section({k: d for k, (_, d) in SCHEMA["output"].items()})
    _validate(cfg)
    return cfg


def ensure_section(cfg: RunConfig, name: str) -> Section:
    """Add a defaulted section if ``name`` is absent, then revalidate."""
    if getattr(cfg, name) is None:
        setattr(cfg, name, Section({k: d for k, (_, d) in SCHEMA[name].items()}))
        _validate(cfg)
    return getattr(cfg, name)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)


def _check(ok, msg, sec, key):
    if not ok:
        raise ConfigError(msg, sec.line(key))


def _validate(cfg: RunConfig) -> None:
    pr = cfg.problem
    if pr is not None:
        _check(pr.p > 1, "p must exceed 1", pr, "p")
        _check(P_RANGE[0] <= pr.p <= P_RANGE[1], f"p must lie in [{P_RANGE[0]}, {P_RANGE[1]}]", pr, "p")
        _check(pr.n in (1, 2), "n must be 1 or 2", pr, "n")
        _check(pr.res >= 3, "res must be at least 3", pr, "res")
        _check(pr.big_n >= 1, "big_n must be positive", pr, "big_n")
        try:
            build_metric(pr.metric, pr.metric_params, pr.n)
        except (ValueError, TypeError, IndexError) as exc:
            raise ConfigError(f"metric: {exc}", pr.line("metric_params") or pr.line("metric")) from None
        if pr.datum_params is None:
            pr.values["datum_params"] = (2.0,) + (0.0,) * (pr.n * pr.big_n - 1) if pr.datum == "linear" else ()
        try:
            build_datum(pr.datum, pr.datum_params, pr.n, pr.big_n)
        except ValueError as exc:
            raise ConfigError(f"datum: {exc}", pr.line("datum_params") or pr.line("datum")) from None

    sv = cfg.solver
    if sv is None and pr is not None:
        cfg.solver = sv = Section({k: d for k, (_, d) in SCHEMA["solver"].items()})
    if sv is not None:
        s = sv.eps_schedule
        _check(len(s) >= 1, "eps_schedule needs at least one entry", sv, "eps_schedule")
        _check(all(0 < e <= 1 for e in s), "eps_schedule entries must lie in (0, 1]", sv, "eps_schedule")
        _check(all(b < a for a, b in zip(s, s[1:])), "eps_schedule must be strictly decreasing", sv, "eps_schedule")
        _check(sv.tol is None or sv.tol > 0, "tol must be positive", sv, "tol")
        _check(sv.max_iter >= 1, "max_iter must be positive", sv, "max_iter")
        _check(sv.seed >= 0, "seed must be nonnegative", sv, "seed")
        _check(sv.method in METHODS, f"method must be one of {', '.join(METHODS)}", sv, "method")

    dg = cfg.diagnostics
    if dg is not None:
        _check(pr is not None, "[diagnostics] needs a [problem] section", dg, None)
        _check(len(dg.delta) >= 1 and all(d >= 0 for d in dg.delta), "delta entries must be nonnegative",
               dg, "delta")
        _check(0 < dg.nu <= 1, "nu must lie in (0, 1]", dg, "nu")
        _check(all(len(c) == pr.n for c in dg.centers), f"centers need {pr.n} coordinates each", dg, "centers")
        _check(len(dg.radii) >= 1 and all(r > 0 for r in dg.radii), "radii must be positive", dg, "radii")
        _check(len(dg.holder_alphas) >= 1 and all(0 < a <= 1 for a in dg.holder_alphas),
               "holder_alphas must lie in (0, 1]", dg, "holder_alphas")
        _check(dg.holder_max_dist > 0, "holder_max_dist must be positive", dg, "holder_max_dist")
        if dg.holder_fine_res is None:
            dg.values["holder_fine_res"] = 2 * pr.res - 1
        _check(dg.holder_fine_res > pr.res, "holder_fine_res must exceed res", dg, "holder_fine_res")

    du = cfg.duality
    if du is not None:
        _check(pr is not None, "[duality] needs a [problem] section", du, None)
        if du.enabled:
            _check(pr.big_n == 1, "duality needs a scalar problem (big_n = 1)", pr, "big_n")
            _check(pr.metric == "identity", "duality needs the identity metric", pr, "metric")

    lm = cfg.lemmas
    if lm is not None:
        bad = [i for i in lm.ids if i not in ALL_IDS]
        _check(not bad, f"unknown lemma ids {bad}", lm, "ids")
        _check(len(lm.ids) >= 1, "ids must name at least one lemma", lm, "ids")
        _check(len(lm.p) >= 1 and all(q > 1 for q in lm.p), "p must exceed 1", lm, "p")
        _check(lm.budget >= 1000, "budget must be at least 1000", lm, "budget")
        _check(lm.seed >= 0, "seed must be nonnegative", lm, "seed")

    out = cfg.output
    bad = [f for f in out.formats if f not in FORMATS]
    _check(not bad, f"unsupported formats {bad}; only csv is written", out, "formats")
    _check(bool(out.directory), "directory must be nonempty", out, "directory")


def check_writable(directory) -> None:
    """Create ``directory`` if needed and make sure files can be written into it."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {directory}: {exc}") from None
    if not os.access(directory, os.W_OK):
        raise ConfigError(f"output directory {directory} is not writable")
