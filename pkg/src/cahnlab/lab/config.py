"""INI-style run configuration with a closed key inventory.

Sections and keys (defaults in parentheses; [params] kappa/alpha/beta/gamma
have no defaults):

  [grid]    dim (1), n (256)
  [params]  kappa, alpha, beta, gamma, eps (needed by kernel-based commands)
  [kernel]  profile (polynomial_bump), target (laplacian_consistent)
  [solver]  dt (2e-7), t_end (0.01), cfl_safety (0.45), upwind (central),
            stepper (stabilized), adaptive (true), output_every (2e-5),
            snapshot_every (50), tau (1e-3), sigma (5 h^2), steps (20),
            inner (lbfgs), inner_tol (1e-10 |E0|)
  [sweep]   eps_list (0.2, 0.1, 0.05, 0.025), recipe (default), seed (0),
            workers (1), refine_factor (2), exact_symbol (false), delta (0.1),
            corpus_size (64)
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from ..dynamics import FvConfig
from ..functionals import SystemParams
from ..jko import JkoConfig
from ..mollifier import MollifierSpec
from ..torus import PeriodicGrid
from .sweep import SweepConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(t) for t in s.replace(",", " ").split())


SCHEMA = {
    "grid": {"dim": (int, 1), "n": (int, 256)},
    "params": {
        "kappa": (float, None),
        "alpha": (float, None),
        "beta": (float, None),
        "gamma": (float, None),
        "eps": (float, None),
    },
    "kernel": {"profile": (str, "polynomial_bump"), "target": (str, "laplacian_consistent")},
    "solver": {
        "dt": (float, 2e-7),
        "t_end": (float, 0.01),
        "cfl_safety": (float, 0.45),
        "upwind": (str, "central"),
        "stepper": (str, "stabilized"),
        "adaptive": (_bool, True),
        "output_every": (float, 2e-5),
        "snapshot_every": (int, 50),
        "tau": (float, 1e-3),
        "sigma": (float, None),
        "steps": (int, 20),
        "inner": (str, "lbfgs"),
        "inner_tol": (float, None),
    },
    "sweep": {
        "eps_list": (_floats, (0.2, 0.1, 0.05, 0.025)),
        "recipe": (str, "default"),
        "seed": (int, 0),
        "workers": (int, 1),
        "refine_factor": (int, 2),
        "exact_symbol": (_bool, False),
        "delta": (float, 0.1),
        "corpus_size": (int, 64),
    },
}

REQUIRED = [("params", "kappa"), ("params", "alpha"), ("params", "beta"), ("params", "gamma")]


@dataclass
class LabConfig:
    values: dict[str, dict[str, object]]
    defaulted: list[str] = field(default_factory=list)
    source_text: str = ""

    def get(self, section: str, key: str):
        return self.values[section][key]

    def require(self, section: str, key: str):
        v = self.values[section][key]
        if v is None:
            raise ConfigError(f"missing required key {section}.{key}")
        return v

    @property
    def grid(self) -> PeriodicGrid:
        return PeriodicGrid(self.get("grid", "dim"), self.get("grid", "n"))

    def params(self, need_eps: bool = False) -> SystemParams:
        kw = {k: self.require("params", k) for k in ("kappa", "alpha", "beta", "gamma")}
        eps = self.require("params", "eps") if need_eps else self.get("params", "eps")
        return SystemParams(eps=eps, **kw).validate()

    @property
    def spec(self) -> MollifierSpec:
        return MollifierSpec(self.get("kernel", "profile"), self.get("kernel", "target"))

    def fv(self) -> FvConfig:
        s = self.values["solver"]
        return FvConfig(
            dt=s["dt"],
            t_end=s["t_end"],
            cfl_safety=s["cfl_safety"],
            upwind=s["upwind"],
            stepper=s["stepper"],
            adaptive=s["adaptive"],
            output_every=s["output_every"],
        )

    def jko(self) -> JkoConfig:
        s = self.values["solver"]
        return JkoConfig(tau=s["tau"], sigma=s["sigma"], inner=s["inner"], inner_tol=s["inner_tol"])

    def sweep(self) -> SweepConfig:
        s, w = self.values["solver"], self.values["sweep"]
        return SweepConfig(
            params=self.params().with_eps(None),
            eps_list=tuple(w["eps_list"]),
            dim=self.get("grid", "dim"),
            grid_n=self.get("grid", "n"),
            t_end=s["t_end"],
            recipe=w["recipe"],
            seed=w["seed"],
            spec=self.spec,
            dt=s["dt"],
            output_every=s["output_every"],
            stepper=s["stepper"],
            upwind=s["upwind"],
            cfl_safety=s["cfl_safety"],
            refine_factor=w["refine_factor"],
            exact_symbol=w["exact_symbol"],
            delta=w["delta"],
        )

    def echo(self) -> str:
        lines = []
        for sec, keys in self.values.items():
            lines.append(f"[{sec}]")
            for k, v in keys.items():
                if isinstance(v, tuple):
                    v = ", ".join(repr(x) for x in v)
                lines.append(f"{k} = {v}")
        return "\n".join(lines)


def parse_config(text: str) -> LabConfig:
    cp = configparser.ConfigParser(
        inline_comment_prefixes=("#",), comment_prefixes=("#",), interpolation=None
    )
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
    values, defaulted = {}, []
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (conv, default) in keys.items():
            if cp.has_option(sec, key):
                raw = cp.get(sec, key)
                try:
                    values[sec][key] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {sec}.{key}: {raw!r} ({exc})") from exc
            else:
                values[sec][key] = default
                defaulted.append(f"{sec}.{key}")
    cfg = LabConfig(values, defaulted, text)
    for sec, key in REQUIRED:
        cfg.require(sec, key)
    return cfg


def load_config(path: str | Path) -> LabConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
