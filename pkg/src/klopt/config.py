"""Experiment configuration files.

A config is an INI-style text file: ``[section]`` headers followed by
``key = value`` lines.  Every experiment has an ``[experiment]`` section
naming its ``kind``; the remaining sections depend on the kind.  A value
holding commas is a sweep, and all sweeps of a file expand to their cross
product.  ``seeds`` is the one list-valued key that is never swept.
"""

from __future__ import annotations

import configparser
import itertools
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

from .klcore import DomainError

KINDS = ("dynamics", "tightness", "optimize", "finite_sum", "rl", "verify")


class ConfigError(ValueError):
    pass


# ---- value parsers ---------------------------------------------------------


def _float(s: str) -> float:
    return float(s)


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(f"{s!r} is not an integer")
    return int(v)


def _auto(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(s: str) -> Any:
        return None if s.lower() == "auto" else conv(s)

    parse.__name__ = f"auto|{conv.__name__.lstrip('_')}"
    return parse


def _optional(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(s: str) -> Any:
        return None if s.lower() == "none" else conv(s)

    parse.__name__ = f"none|{conv.__name__.lstrip('_')}"
    return parse


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"{s!r} is not one of {', '.join(options)}")
        return s

    parse.__name__ = "|".join(options)
    return parse


def _str(s: str) -> str:
    return s


REQUIRED = object()
AUTO = "auto"

FLOAT, INT = _float, _int
AFLOAT, AINT = _auto(_float), _auto(_int)

# section -> key -> (parser, default); REQUIRED marks keys without a default
SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "kind": (_choice(*KINDS), REQUIRED),
        "name": (_str, None),
        "seeds": (None, "0"),  # parsed separately, never swept
        "output": (_str, "results"),
    },
    "dynamics": {
        "alpha": (FLOAT, REQUIRED),
        "beta": (FLOAT, REQUIRED),
        "tau": (FLOAT, REQUIRED),
        "K": (INT, REQUIRED),
        "a": (FLOAT, 1.0),
        "d": (FLOAT, 1.0),
        "mu": (FLOAT, 1.0),
        "delta0": (FLOAT, 1.0),
        "c0": (FLOAT, 0.5),
        "zeta": (AFLOAT, AUTO),
        "branch": (_choice("auto", "ii-a", "ii-b"), "auto"),
        "phi": (_choice("power", "min_lin_sqrt", "sqrt_t_log"), "power"),
        "h": (_choice("power", "zero", "log1p"), "power"),
        "T": (AINT, AUTO),
        "safety": (FLOAT, 0.5),
        "k_min": (FLOAT, 1000.0),
        "k_max": (AFLOAT, AUTO),
        "predicted": (AFLOAT, AUTO),
        "tolerance": (FLOAT, 0.10),
    },
    "tightness": {
        "epsilon": (FLOAT, REQUIRED),
        "a_prime": (FLOAT, 1.0),
        "c_prime": (FLOAT, 1.0),
        "b_prime": (FLOAT, 1.0),
        "s": (FLOAT, 2.0),
        "K": (INT, 100000),
        "mode": (_choice("greedy", "two_phase"), "greedy"),
        "r0": (FLOAT, 1.0),
        "k_min": (FLOAT, 1000.0),
        "tolerance": (FLOAT, 0.05),
        "search": (INT, 0),
        "search_seed": (INT, 0),
    },
    "function": {
        "name": (_choice("quadratic", "power_abs", "cosh1d", "cosh_sin_nonconvex"), REQUIRED),
        "R": (FLOAT, 5.0),
        "mu": (FLOAT, 1.0),
        "L": (AFLOAT, AUTO),
        "dim": (INT, 1),
        "c": (FLOAT, 1.0),
        "q": (FLOAT, 3.0),
    },
    "oracle": {
        "sigma2": (FLOAT, 1.0),
    },
    "optimizer": {
        "algo": (_choice("sgd", "pager", "gd"), "sgd"),
        "x0": (FLOAT, 1.0),
        "K": (INT, 100000),
        "T": (AINT, 1),
        "tau": (FLOAT, 0.0),
        "c0": (AFLOAT, AUTO),
        "zeta": (AFLOAT, AUTO),
        "stages": (INT, 5),
        "L_script": (AFLOAT, AUTO),
        "psi_margin": (FLOAT, 0.1),
        "eta_scale": (FLOAT, 1.0),
        "max_iters": (_optional(_int), "none"),
        "against": (_choice("k", "cost"), "k"),
        "k_min": (AFLOAT, AUTO),
        "k_max": (AFLOAT, AUTO),
        "predicted": (AFLOAT, AUTO),
        "tolerance": (FLOAT, 0.12),
        "target": (FLOAT, 1e-3),
    },
    "finite_sum": {
        "n": (INT, 1024),
        "shift_scale": (FLOAT, 1.0),
        "curvature_spread": (FLOAT, 0.0),
        "instance_seed": (INT, 0),
        "x0": (FLOAT, 1.0),
        "eps": (FLOAT, 1e-4),
        "stages": (INT, 12),
        "max_iters": (INT, 400000),
        "gd_iters": (INT, 5000),
        "max_ratio": (FLOAT, 0.5),
    },
    "rl": {
        "fixture": (_optional(_str), "none"),
        "algo": (_choice("sgd", "pager"), "pager"),
        "mu_hat": (FLOAT, 0.1),
        "stages": (INT, 8),
        "max_iters": (INT, 3000),
        "c0": (AFLOAT, AUTO),
        "zeta": (FLOAT, 2.0 / 3.0),
        "b": (INT, 1),
        "iters": (INT, 20000),
        "level": (FLOAT, 0.99),
        "omega_max": (_optional(_float), "none"),
        "estimate_samples": (INT, 20000),
    },
    "verify": {
        "trials": (INT, 1000),
        "points": (INT, 200),
    },
}

SECTIONS_BY_KIND = {
    "dynamics": ("dynamics",),
    "tightness": ("tightness",),
    "optimize": ("function", "oracle", "optimizer"),
    "finite_sum": ("function", "finite_sum"),
    "rl": ("rl",),
    "verify": ("verify",),
}

STOCHASTIC_KINDS = ("optimize", "finite_sum", "rl", "verify")

Scalar = Union[int, float, str, None]


@dataclass
class ExperimentConfig:
    kind: str
    name: str
    seeds: tuple[int, ...]
    output_path: Path
    params: dict[str, dict[str, Any]]  # swept keys hold lists
    source: Optional[Path] = None
    lines: dict[tuple[str, str], int] = field(default_factory=dict)

    def sweep_keys(self) -> list[tuple[str, str]]:
        return [(s, k) for s, kv in self.params.items() for k, v in kv.items()
                if isinstance(v, list)]

    def points(self) -> list[dict[str, dict[str, Scalar]]]:
        """Cross product of all sweeps, in file order."""
        keys = self.sweep_keys()
        grids = [self.params[s][k] for s, k in keys]
        out = []
        for combo in itertools.product(*grids):
            p = {s: dict(kv) for s, kv in self.params.items()}
            for (s, k), v in zip(keys, combo):
                p[s][k] = v
            out.append(p)
        return out

    def echo(self) -> str:
        lines = ["[experiment]", f"kind = {self.kind}", f"name = {self.name}",
                 f"seeds = {', '.join(map(str, self.seeds))}", f"output = {self.output_path}"]
        for sec, kv in self.params.items():
            lines.append(f"[{sec}]")
            for k, v in kv.items():
                shown = ", ".join(map(_show, v)) if isinstance(v, list) else _show(v)
                lines.append(f"{k} = {shown}")
        return "\n".join(lines)


def _show(v: Scalar) -> str:
    if v is None:
        return "auto"
    return repr(v) if isinstance(v, float) else str(v)


_KEY_RE = re.compile(r"^\s*([^=:\s#;\[][^=:]*?)\s*[=:]")
_SEC_RE = re.compile(r"^\s*\[([^\]]+)\]")


def _line_index(text: str) -> dict[tuple[str, str], int]:
    where: dict[tuple[str, str], int] = {}
    section = ""
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SEC_RE.match(line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, ""), no)
            continue
        m = _KEY_RE.match(line)
        if m:
            where.setdefault((section, m.group(1)), no)
    return where


def _check_ranges(sec: str, key: str, value: Any, loc: str) -> None:
    if value is None:
        return
    if key == "alpha" and not (1.0 <= value <= 2.0):
        raise DomainError(f"{loc}: alpha = {value} is outside [1, 2], the admissible "
                          f"range of the alpha-PL exponent")
    if key == "beta" and not (0.0 < value <= 1.0):
        raise DomainError(f"{loc}: beta = {value} must lie in (0, 1]")
    if key == "tau" and value < 0:
        raise DomainError(f"{loc}: tau = {value} must be nonnegative")
    if key in ("K", "n", "trials", "points", "stages", "iters", "b") and value < 1:
        raise ConfigError(f"{loc}: {key} must be at least 1, got {value}")


def parse_config_text(text: str, source: Optional[Path] = None,
                      extra_seeds: tuple[int, ...] = ()) -> ExperimentConfig:
    where = _line_index(text)
    label = str(source) if source is not None else "<config>"

    def loc(sec: str, key: str = "") -> str:
        no = where.get((sec, key)) or where.get((sec, ""))
        return f"{label}:{no}" if no else label

    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (K, T, L)
    try:
        cp.read_string(text, source=label)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    if not cp.has_section("experiment"):
        raise ConfigError(f"{label}: missing [experiment] section")
    kind_raw = cp.get("experiment", "kind", fallback=None)
    if kind_raw is None:
        raise ConfigError(f"{loc('experiment')}: missing required key 'kind' in [experiment]")
    if kind_raw not in KINDS:
        raise ConfigError(f"{loc('experiment', 'kind')}: unknown kind {kind_raw!r}; "
                          f"expected one of {', '.join(KINDS)}")
    allowed = ("experiment",) + SECTIONS_BY_KIND[kind_raw]
    for sec in cp.sections():
        if sec not in allowed:
            raise ConfigError(f"{loc(sec)}: section [{sec}] is not used by kind {kind_raw!r}")

    params: dict[str, dict[str, Any]] = {}
    exp: dict[str, Any] = {}
    for sec in allowed:
        schema = SCHEMA[sec]
        given = dict(cp.items(sec)) if cp.has_section(sec) else {}
        for key in given:
            if key not in schema:
                raise ConfigError(f"{loc(sec, key)}: unknown key {key!r} in [{sec}]")
        values: dict[str, Any] = {}
        for key, (conv, default) in schema.items():
            if key not in given:
                if default is REQUIRED:
                    raise ConfigError(f"{loc(sec)}: missing required key {key!r} in [{sec}]")
                raw = default
            else:
                raw = given[key]
            if conv is None or not isinstance(raw, str):
                values[key] = raw
                continue
            parts = [p.strip() for p in raw.split(",")] if "," in raw else [raw.strip()]
            parsed = []
            for p in parts:
                try:
                    v = conv(p)
                except ValueError as exc:
                    raise ConfigError(f"{loc(sec, key)}: bad value for {key!r}: {exc}; "
                                      f"expected {conv.__name__.lstrip('_')}") from None
                _check_ranges(sec, key, v, loc(sec, key))
                parsed.append(v)
            values[key] = parsed if len(parsed) > 1 else parsed[0]
        if sec == "experiment":
            exp = values
        else:
            params[sec] = values
    if isinstance(exp["kind"], list) or isinstance(exp["output"], list):
        raise ConfigError(f"{loc('experiment')}: kind and output cannot be swept")

    try:
        seeds = tuple(int(s) for s in str(exp["seeds"]).split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"{loc('experiment', 'seeds')}: seeds must be integers") from None
    seeds = seeds + tuple(int(s) for s in extra_seeds if int(s) not in seeds)
    if any(not (0 <= s < 2**64) for s in seeds):
        raise ConfigError(f"{loc('experiment', 'seeds')}: seeds must be 64-bit unsigned integers")
    if kind_raw in STOCHASTIC_KINDS and not seeds:
        raise ConfigError(f"{loc('experiment', 'seeds')}: kind {kind_raw!r} needs at least one seed")

    return ExperimentConfig(
        kind=kind_raw,
        name=exp["name"] or (source.stem if source is not None else kind_raw),
        seeds=seeds,
        output_path=Path(exp["output"]),
        params=params,
        source=source,
        lines=where,
    )


def parse_config(path: Union[str, Path], extra_seeds: tuple[int, ...] = ()) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=path, extra_seeds=extra_seeds)

