"""Run configuration: schema, file formats and environment overrides.

A configuration is a flat set of keys.  Files are either ``key = value``
lines (``#`` starts a comment) or a JSON object with the same keys.
Environment variables ``GROUNDCTL_<KEY>`` (key upper-cased) override the
file, and the command-line flags ``--seed``, ``--threads`` and ``--out``
override both.  Unknown keys are rejected everywhere.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional

from .errors import ValidationError
from .problems import KINDS, ProblemSpec

__all__ = ["RunConfig", "load_config", "ENV_PREFIX", "SCHEMA_DOC"]

ENV_PREFIX = "GROUNDCTL_"

_MODES = ("empirical", "theoretical")
_REGIMES = ("partial_reflect", "absorb", "free_line")
_VARIANTS = ("strip", "cone")
_PERTURB = ("none", "mode", "random")
_SDE_CONTROL = ("none", "loop")
_PRECISION = ("auto", "double", "extended")
_KERNELS = ("auto", "cython", "python")


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _opt_float(text):
    if text is None or (isinstance(text, str) and text.strip().lower() in ("", "none", "auto")):
        return None
    return float(text)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    if text is None or (isinstance(text, str) and text.strip().lower() in ("", "none")):
        return None
    return int(text)


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the command-line tools.

    Attributes
    ----------
    kind, truncation, mu_power, mu_freq, alpha
        Problem selection (see :class:`~groundctl.problems.ProblemSpec`).
    horizons : tuple of float
        Horizon grid of ``null-control``.
    cost_trials : int
        Random unit states per horizon.
    precision : {"auto", "double", "extended"}
    horizon : float
        Loop horizon ``T``.
    T0, n_max, stop_tol, mode
        Loop parameters.
    nu, C_B : float or None
        Overrides of the bound constants (derived when ``None``).
    bound_checks : bool
        Derive constants and evaluate the analytic bounds along the loop.
    perturb, perturb_label, perturb_size, perturb_ground
        Initial state ``phi_g + delta``: ``delta`` is a single mode
        (``"mode"``), a seeded random direction that is uniform on the
        unit sphere of the ``1/2``-norm (``"random"``) or zero,
        scaled to ``||delta||_{1/2} = perturb_size``; ``perturb_ground`` is
        added to the ground coefficient.
    variant, R, r1, cone_scale
        Semi-global run: strip or cone, orthogonal size ``R``, entry radius
        ``r1`` (``None`` uses the local radius), and a factor applied to the
        whole initial state for the cone variant.
    n_particles, dt, sde_T, regime, bins, sde_control, sde_init_amp, sde_loop_amp
        Particle run.  The initial density is ``phi_g`` plus a second-mode
        coefficient ``sde_init_amp`` (``sde_loop_amp`` when
        ``sde_control = "loop"``, in which case the loop steers that state),
        normalised to unit mass.
    seed, threads, out, kernels
        Reproducibility and resources.
    """

    kind: str = "fp_dirichlet"
    truncation: int = 16
    mu_power: Optional[float] = None
    mu_freq: Optional[float] = None
    alpha: float = 0.0
    horizons: tuple = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    cost_trials: int = 16
    precision: str = "auto"
    horizon: float = 2.0
    T0: float = 1.0
    n_max: int = 12
    stop_tol: float = 1e-10
    mode: str = "empirical"
    nu: Optional[float] = None
    C_B: Optional[float] = None
    bound_checks: bool = True
    perturb: str = "random"
    perturb_label: Optional[int] = None
    perturb_size: float = 1e-2
    perturb_ground: float = 0.0
    variant: str = "strip"
    R: float = 1.0
    r1: Optional[float] = None
    cone_scale: float = 1.0
    n_particles: int = 100000
    dt: float = 1e-4
    sde_T: float = 1.0
    regime: str = "partial_reflect"
    bins: int = 20
    sde_control: str = "none"
    sde_init_amp: float = 0.5 / math.sqrt(2.0)
    sde_loop_amp: float = 0.05 / math.sqrt(2.0)
    seed: int = 0
    threads: int = 1
    out: str = "out"
    kernels: str = "auto"

    def __post_init__(self):
        self.validate()

    # -- validation --------------------------------------------------------
    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ValidationError(msg)

        need(self.kind in KINDS, f"kind must be one of {KINDS}")
        need(self.truncation >= 2, "truncation must be at least 2")
        need(len(self.horizons) >= 2 and all(t > 0 for t in self.horizons), "horizons need two positive values")
        need(self.cost_trials >= 8, "cost_trials must be at least 8")
        need(self.precision in _PRECISION, f"precision must be one of {_PRECISION}")
        for name in ("horizon", "T0", "stop_tol", "dt", "sde_T", "R"):
            v = getattr(self, name)
            need(v > 0 and math.isfinite(v), f"{name} must be positive")
        need(self.n_max >= 1, "n_max must be at least 1")
        need(self.mode in _MODES, f"mode must be one of {_MODES}")
        need(self.nu is None or self.nu > 0, "nu must be positive")
        need(self.C_B is None or self.C_B >= 1, "C_B must be at least 1")
        need(self.perturb in _PERTURB, f"perturb must be one of {_PERTURB}")
        need(self.perturb_size >= 0, "perturb_size must be non-negative")
        need(self.variant in _VARIANTS, f"variant must be one of {_VARIANTS}")
        need(self.r1 is None or self.r1 > 0, "r1 must be positive")
        need(self.cone_scale != 0, "cone_scale must be non-zero")
        need(self.n_particles >= 1, "n_particles must be positive")
        need(self.regime in _REGIMES, f"regime must be one of {_REGIMES}")
        need(self.bins >= 1, "bins must be positive")
        need(self.sde_control in _SDE_CONTROL, f"sde_control must be one of {_SDE_CONTROL}")
        need(self.seed >= 0, "seed must be non-negative")
        need(self.threads >= 1, "threads must be at least 1")
        need(self.kernels in _KERNELS, f"kernels must be one of {_KERNELS}")
        n_steps = self.sde_T / self.dt
        need(abs(n_steps - round(n_steps)) < 1e-9 * n_steps, "sde_T must be a whole number of dt steps")
        self.problem_spec()  # raises on an invalid problem

    def problem_spec(self) -> ProblemSpec:
        return ProblemSpec(self.kind, truncation=self.truncation, mu_power=self.mu_power, mu_freq=self.mu_freq,
                           alpha=self.alpha)

    def as_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    def replace(self, **kw) -> "RunConfig":
        d = self.as_dict()
        d.update(kw)
        return RunConfig(**_coerce(d))

    # -- serialisation -----------------------------------------------------
    def to_keyvalue(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            if v is None:
                v = "none"
            elif isinstance(v, list):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "kind": str, "truncation": int, "mu_power": _opt_float, "mu_freq": _opt_float, "alpha": float,
    "horizons": _floats, "cost_trials": int, "precision": str, "horizon": float, "T0": float, "n_max": int,
    "stop_tol": float, "mode": str, "nu": _opt_float, "C_B": _opt_float, "bound_checks": _bool,
    "perturb": str, "perturb_label": _opt_int, "perturb_size": float, "perturb_ground": float,
    "variant": str, "R": float, "r1": _opt_float, "cone_scale": float, "n_particles": int, "dt": float,
    "sde_T": float, "regime": str, "bins": int, "sde_control": str, "sde_init_amp": float,
    "sde_loop_amp": float, "seed": int, "threads": int, "out": str, "kernels": str,
}

SCHEMA_DOC = {k: RunConfig.__dataclass_fields__[k].default for k in _PARSERS}

_ENV_KEYS = {k.upper(): k for k in _PARSERS}


def _coerce(raw: Mapping[str, Any]) -> dict:
    out = {}
    for k, v in raw.items():
        if k not in _PARSERS:
            raise ValidationError(f"unknown configuration key {k!r}")
        try:
            out[k] = _PARSERS[k](v) if v is not None else None
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad value for {k!r}: {v!r} ({exc})") from exc
    return out


def parse_keyvalue(text: str) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ValidationError(f"line {n}: duplicate key {k!r}")
        out[k] = v
    return out


def read_config_file(path) -> dict:
    """Raw mapping from a key-value or JSON file (JSON when it parses as an object)."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: JSON configuration must be an object")
        return data
    return parse_keyvalue(text)


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict:
    """Configuration keys set through ``GROUNDCTL_<KEY>`` variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):]
        if key not in _ENV_KEYS:
            raise ValidationError(f"unknown configuration variable {name}")
        out[_ENV_KEYS[key]] = value
    return out


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Defaults, then the file, then environment variables, then ``overrides``."""
    raw: dict = {}
    if path is not None:
        raw.update(read_config_file(path))
    raw.update(env_overrides(environ))
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**_coerce(raw))
