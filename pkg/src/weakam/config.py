"""TOML run configuration: model, grid and per-command parameters.

A config either names a preset::

    preset = "pendulum"
    [params]
    lam = 0.2

or spells the model out::

    c = 0.5
    alpha = 0.0
    [potential]
    kind = "cosine"
    coeffs = [1.0]
    [damping]
    kind = "constant"
    coeffs = [0.2]

Optional tables ``[grid]`` (nx, nt, v_max) and one table per subcommand
supply defaults that command-line flags override.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .discretization import Grid, default_v_max
from .errors import ConfigError, ParamOutOfRange
from .model import (ConstantDamping, DampingProfile, FourierDamping, Mechanical, ModelSpec,
                    damping_from_dict, potential_from_dict, preset_model)


@dataclass
class RunConfig:
    path: Path
    model: ModelSpec
    raw: dict
    seed: int = 0
    threads: int = 1
    sections: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def grid(self, nx=None, nt=None, v_max=None) -> Grid:
        g = self.section("grid")
        nx = int(nx if nx is not None else g.get("nx", 128))
        nt = int(nt if nt is not None else g.get("nt", 64))
        if v_max is None:
            v_max = g.get("v_max")
        v_max = float(v_max) if v_max is not None else default_v_max(self.model)
        return Grid(nx, nt, v_max)


def model_from_dict(d: dict) -> ModelSpec:
    if "preset" in d:
        m = preset_model(str(d["preset"]), **dict(d.get("params", {})))
        if not isinstance(m, ModelSpec):
            raise ConfigError(f"preset {d['preset']!r} is simulation-only and has no ModelSpec")
        return m
    if "damping" not in d:
        raise ConfigError("config needs either 'preset' or a [damping] table")
    pot = potential_from_dict(d.get("potential", {"kind": "zero"}))
    damping = damping_from_dict(d["damping"])
    return ModelSpec(Mechanical(pot, float(d.get("c", 0.0))), damping, float(d.get("alpha", 0.0)),
                     name=str(d.get("name", "model")))


def load_config(path, threads: int | None = None, seed: int | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    model = model_from_dict(raw)
    if threads is None:
        threads = int(raw.get("threads", os.environ.get("WEAKAM_THREADS", 1)))
    if threads < 1:
        raise ParamOutOfRange("threads must be >= 1")
    seed = int(raw.get("seed", 0)) if seed is None else int(seed)
    return RunConfig(p, model, raw, seed, threads)


def parse_profile(text: str) -> DampingProfile:
    """Short damping profile string for flags: ``const:1.0`` or ``sin:0.3`` / ``cos:0.3`` (first harmonic)."""
    try:
        kind, val = text.split(":", 1)
        v = float(val)
    except ValueError:
        raise ConfigError(f"cannot parse damping profile {text!r}; use e.g. const:1.0") from None
    if kind == "const":
        return ConstantDamping(v)
    if kind == "sin":
        return FourierDamping(0.0, (), (v,))
    if kind == "cos":
        return FourierDamping(0.0, (v,), ())
    raise ConfigError(f"unknown damping profile kind {kind!r}")


def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None
