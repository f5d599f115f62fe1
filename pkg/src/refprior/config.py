"""Run configuration: a flat ``key = value`` text file with dotted sections.

Example::

    seed = 7
    model.A = 4
    model.T = 10
    model.dynamics = direct
    latent.C = 100
    truth.psi2 = 0.1
    truth.sigma2 = 0.05
    truth.tau2 = 0.0
    truth.q = 0.5
    prior = reference
    prior.box = [[0.01, 100], [0.01, 100], [0.001, 1000]]
    sampler.iterations = 2000
    paths.data_dir = data

Values are Python literals (numbers, lists, ``true``/``false``) or bare words.
``#`` starts a comment. Unknown keys are rejected and every error carries the
line number and key.
"""

from __future__ import annotations

import ast
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .gibbs import Psi2Mode, SamplerConfig, SamplerMode
from .info_criterion import DEFAULT_GRID, MI_BOX
from .model import Dynamics, ModelConfig, ModelError, NuisanceParams, PopulationState
from .priors import PriorKind, PriorSpec


class ConfigError(ModelError):
    """Invalid configuration; message names the key (and line when known)."""

    def __init__(self, key: str, message: str, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{key}: {message}")


def _positive_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _numbers(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_number(x) for x in v)


def _number_or_list(v) -> bool:
    return _number(v) or _numbers(v)


def _matrix_or_scalar(v) -> bool:
    return _number(v) or (isinstance(v, list) and len(v) > 0 and all(_numbers(r) for r in v))


def _word(v) -> bool:
    return isinstance(v, str)


def _box(v) -> bool:
    return (isinstance(v, list) and len(v) == 3
            and all(isinstance(p, list) and len(p) == 2 and all(_number(x) for x in p) for p in v))


def _int_list(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_positive_int(x) for x in v)


def _word_list(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(isinstance(x, str) for x in v)


def _grid(v) -> bool:
    return _positive_int(v) or (isinstance(v, list) and len(v) == 3 and all(_positive_int(x) for x in v))


def _int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _nonneg_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


# key -> (default, validator, description shown by --help)
SCHEMA: dict[str, tuple[Any, Callable[[Any], bool], str]] = {
    "seed": (0, _nonneg_int, "master seed; every random stream is derived from it"),
    "model.A": (None, _int, "number of age classes (A >= 1), required"),
    "model.T": (None, _int, "number of time steps (T >= 2), required"),
    "model.s": (1.0, _number_or_list, "survey selectivities, scalar or length A (> 0)"),
    "model.M": (0.0, _number_or_list, "natural mortality, scalar or length A (>= 0)"),
    "model.dynamics": ("direct", _word, "pope | baranov | direct"),
    "model.mu1_sd": (0.0, _number, "catch process-noise sd (>= 0)"),
    "model.mu2_sd": (0.0, _number, "survival process-noise sd (>= 0)"),
    "model.N_init": (1000.0, _number_or_list, "initial abundances for pope/baranov, scalar or length A"),
    "model.F": (0.2, _matrix_or_scalar, "fishing mortality for pope/baranov, scalar or A x T"),
    "latent.C": (100.0, _number_or_list, "true catches for direct dynamics, scalar or length T"),
    "latent.Jtilde": (0.0, _number_or_list, "summed log survey abundances for direct dynamics"),
    "truth.psi2": (0.1, _number, "catch log-variance used by simulate"),
    "truth.sigma2": (0.05, _number, "per-age survey log-variance used by simulate"),
    "truth.tau2": (0.0, _number, "year-effect survey log-variance used by simulate"),
    "truth.q": (0.5, _number, "catchability used by simulate"),
    "prior": ("reference", _word, "reference | jeffreys | flat"),
    "prior.box": (None, _box, "truncation [[psi2 lo, hi], [phi2 lo, hi], [q lo, hi]]; omit for improper"),
    "sampler.iterations": (2000, _positive_int, "total Gibbs iterations"),
    "sampler.burn_in": (500, _nonneg_int, "discarded iterations (< iterations)"),
    "sampler.thin": (1, _positive_int, "keep every thin-th draw"),
    "sampler.mode": ("nuisance", _word, "nuisance | full"),
    "sampler.psi2_mode": ("exact", _word, "exact | conjugate"),
    "sampler.latent_step_sd": (0.1, _number, "random-walk scale in full mode (> 0)"),
    "sampler.latent_prior_sd": (2.0, _number, "sd of the vague normal prior on free latent cells"),
    "paths.data_dir": ("data", _word, "directory for catches.csv, indices.csv, latent.csv, state.csv"),
    "paths.out_dir": ("out", _word, "directory for reports"),
    "sbc.replicates": (500, _positive_int, "number of SBC replicates"),
    "sbc.draws": (99, _positive_int, "posterior draws per replicate"),
    "sbc.bins": (20, _positive_int, "rank histogram bins; draws + 1 must be divisible by bins"),
    "info.T_list": ([10, 20, 30], _int_list, "time-series lengths compared by prior-compare"),
    "info.priors": (["reference", "jeffreys", "flat"], _word_list, "priors compared by prior-compare"),
    "info.replicates": (400, _positive_int, "outer Monte Carlo replicates"),
    "info.grid": (list(DEFAULT_GRID), _grid, "lattice nodes (psi2, phi2, q) or a single count"),
    "info.box": ([list(p) for p in MI_BOX], _box, "truncation box for the expected-KL comparison"),
}

_BARE = {"true": True, "false": False}


def defaults_help() -> str:
    width = max(len(k) for k in SCHEMA)
    lines = []
    for key, (default, _, desc) in SCHEMA.items():
        shown = "(required)" if default is None and key.startswith("model.") else repr(default)
        lines.append(f"  {key:<{width}}  {shown:<22} {desc}")
    return "\n".join(lines)


def _parse_value(text: str, key: str, line: int):
    if text == "":
        raise ConfigError(key, "missing value", line)
    if text in _BARE:
        return _BARE[text]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if any(ch in text for ch in "[]{}(),'\"=") or " " in text:
            raise ConfigError(key, f"cannot parse value {text!r}", line) from None
        return text


def _float_list(v) -> list:
    if isinstance(v, list):
        return [float(x) for x in v]
    return float(v)


def parse_text(text: str) -> tuple[dict, dict]:
    """Parse into ``(values, line_of_key)`` with schema and type checks only."""
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(stripped, "expected 'key = value'", lineno)
        key, _, val = stripped.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key", lineno)
        if key in values:
            raise ConfigError(key, f"duplicate key (first set on line {lines[key]})", lineno)
        value = _parse_value(val.strip(), key, lineno)
        if isinstance(value, tuple):
            value = list(value)
        if not SCHEMA[key][1](value):
            raise ConfigError(key, f"invalid value {value!r}; expected {SCHEMA[key][2]}", lineno)
        values[key] = value
        lines[key] = lineno
    return values, lines


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration for every subcommand."""

    model: ModelConfig
    truth: NuisanceParams
    prior: PriorSpec
    sampler: SamplerConfig
    data_dir: Path
    out_dir: Path
    seed: int
    raw: dict = field(repr=False)
    sha256: str = ""
    N_init: np.ndarray = field(default=None, repr=False)
    F: np.ndarray = field(default=None, repr=False)
    latent_C: np.ndarray = field(default=None, repr=False)
    latent_Jtilde: np.ndarray = field(default=None, repr=False)
    sbc_replicates: int = 500
    sbc_draws: int = 99
    sbc_bins: int = 20
    info_T_list: tuple = (10, 20, 30)
    info_priors: tuple = ("reference", "jeffreys", "flat")
    info_replicates: int = 400
    info_grid: tuple = DEFAULT_GRID
    info_box: tuple = MI_BOX

    def direct_state(self) -> PopulationState:
        T = self.model.T
        C = np.broadcast_to(self.latent_C, (T,))
        J = np.broadcast_to(self.latent_Jtilde, (T,))
        return PopulationState.direct(C, J, self.model.s)


def _vector(values, lines, key, n, label):
    v = np.asarray(_float_list(values[key]), dtype=float)
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.shape != (n,):
        raise ConfigError(key, f"needs a scalar or {n} values ({label}), got {v.size}", lines.get(key))
    return v


def _guard(key, lines, fn):
    """Run a constructor and re-raise its ModelError under ``key``."""
    try:
        return fn()
    except ConfigError:
        raise
    except (ModelError, ValueError) as exc:
        raise ConfigError(key, str(exc), lines.get(key)) from None


def build(values: dict, lines: dict, base_dir: Path, command: Optional[str] = None,
          sha256: str = "") -> RunConfig:
    for key in ("model.A", "model.T"):
        if key not in values:
            raise ConfigError(key, "missing required key")
    merged = {k: d for k, (d, _, _) in SCHEMA.items()}
    merged.update(values)
    line = lines.get

    A, T = merged["model.A"], merged["model.T"]
    if A < 1:
        raise ConfigError("model.A", "A ≥ 1 required", line("model.A"))
    if T < 2:
        raise ConfigError("model.T", "T ≥ 2 required", line("model.T"))
    s = _vector(merged, lines, "model.s", A, "one per age")
    if np.any(s <= 0):
        raise ConfigError("model.s", "selectivities must be > 0", line("model.s"))
    M = _vector(merged, lines, "model.M", A, "one per age")
    if np.any(M < 0):
        raise ConfigError("model.M", "M ≥ 0 required", line("model.M"))
    for key in ("model.mu1_sd", "model.mu2_sd"):
        if merged[key] < 0:
            raise ConfigError(key, "standard deviation must be ≥ 0", line(key))
    try:
        dynamics = Dynamics(merged["model.dynamics"])
    except ValueError:
        raise ConfigError("model.dynamics", "expected pope | baranov | direct",
                          line("model.dynamics")) from None
    model = _guard("model", lines, lambda: ModelConfig(
        A=A, T=T, s=s, M=M, dynamics=dynamics,
        mu1_sd=float(merged["model.mu1_sd"]), mu2_sd=float(merged["model.mu2_sd"])))

    N_init = _vector(merged, lines, "model.N_init", A, "one per age")
    if np.any(N_init <= 0):
        raise ConfigError("model.N_init", "abundances must be > 0", line("model.N_init"))
    F = np.asarray(_float_list(merged["model.F"]) if not isinstance(merged["model.F"], list)
                   else [_float_list(r) for r in merged["model.F"]], dtype=float)
    if F.ndim == 0:
        F = np.full((A, T), float(F))
    if F.shape != (A, T):
        raise ConfigError("model.F", f"needs a scalar or an {A} x {T} matrix", line("model.F"))
    if np.any(F < 0):
        raise ConfigError("model.F", "fishing mortality must be ≥ 0", line("model.F"))
    latent_C = _vector(merged, lines, "latent.C", T, "one per step")
    if np.any(latent_C <= 0):
        raise ConfigError("latent.C", "true catches must be > 0", line("latent.C"))
    latent_J = _vector(merged, lines, "latent.Jtilde", T, "one per step")

    for key in ("truth.psi2", "truth.q"):
        if merged[key] <= 0:
            raise ConfigError(key, "must be > 0", line(key))
    for key in ("truth.sigma2", "truth.tau2"):
        if merged[key] < 0:
            raise ConfigError(key, "must be ≥ 0", line(key))
    if merged["truth.sigma2"] == 0 and merged["truth.tau2"] == 0:
        raise ConfigError("truth.sigma2", "survey variance phi2 = A sigma2 + A^2 tau2 must be > 0",
                          line("truth.sigma2"))
    truth = NuisanceParams.from_components(float(merged["truth.psi2"]), float(merged["truth.sigma2"]),
                                           float(merged["truth.tau2"]), float(merged["truth.q"]), A)

    try:
        kind = PriorKind(merged["prior"])
    except ValueError:
        raise ConfigError("prior", "expected reference | jeffreys | flat", line("prior")) from None
    box = merged["prior.box"]
    prior = _guard("prior.box", lines, lambda: PriorSpec(
        kind, None if box is None else tuple(tuple(float(x) for x in p) for p in box)))

    for key, enum_cls, choices in (("sampler.mode", SamplerMode, "nuisance | full"),
                                   ("sampler.psi2_mode", Psi2Mode, "exact | conjugate")):
        try:
            enum_cls(merged[key])
        except ValueError:
            raise ConfigError(key, f"expected {choices}", line(key)) from None
    if merged["sampler.burn_in"] >= merged["sampler.iterations"]:
        raise ConfigError("sampler.burn_in", "burn_in < iterations required", line("sampler.burn_in"))
    for key in ("sampler.latent_step_sd", "sampler.latent_prior_sd"):
        if merged[key] <= 0:
            raise ConfigError(key, "must be > 0", line(key))
    sampler = _guard("sampler", lines, lambda: SamplerConfig(
        iterations=merged["sampler.iterations"], burn_in=merged["sampler.burn_in"],
        thin=merged["sampler.thin"], seed=merged["seed"],
        mode=SamplerMode(merged["sampler.mode"]), psi2_mode=Psi2Mode(merged["sampler.psi2_mode"]),
        latent_step_sd=float(merged["sampler.latent_step_sd"]),
        latent_prior_sd=float(merged["sampler.latent_prior_sd"])))
    if sampler.mode is SamplerMode.FULL and dynamics is Dynamics.DIRECT:
        raise ConfigError("sampler.mode", "full mode needs pope or baranov dynamics", line("sampler.mode"))

    if sampler.mode is SamplerMode.FULL and prior.box is None:
        raise ConfigError("prior.box", "full mode requires proper (truncated) prior", line("sampler.mode"))
    if (merged["sbc.draws"] + 1) % merged["sbc.bins"]:
        raise ConfigError("sbc.bins", "sbc.draws + 1 must be divisible by sbc.bins", line("sbc.bins"))
    if command == "sbc" and prior.box is None:
        raise ConfigError("prior.box", "sbc requires proper (truncated) prior", line("prior"))
    if command == "sbc" and sampler.mode is not SamplerMode.NUISANCE_ONLY:
        raise ConfigError("sampler.mode", "sbc runs the nuisance sampler", line("sampler.mode"))
    if any(t < 2 for t in merged["info.T_list"]):
        raise ConfigError("info.T_list", "every T must be ≥ 2", line("info.T_list"))
    for p in merged["info.priors"]:
        if p not in {k.value for k in PriorKind}:
            raise ConfigError("info.priors", f"unknown prior {p!r}", line("info.priors"))
    grid = merged["info.grid"]
    grid = (grid,) * 3 if isinstance(grid, int) else tuple(grid)
    info_box = tuple(tuple(float(x) for x in p) for p in merged["info.box"])
    _guard("info.box", lines, lambda: PriorSpec(PriorKind.REFERENCE, info_box))

    return RunConfig(
        model=model, truth=truth, prior=prior, sampler=sampler,
        data_dir=(base_dir / merged["paths.data_dir"]).resolve(),
        out_dir=(base_dir / merged["paths.out_dir"]).resolve(),
        seed=merged["seed"], raw=merged, sha256=sha256,
        N_init=N_init, F=F, latent_C=latent_C, latent_Jtilde=latent_J,
        sbc_replicates=merged["sbc.replicates"], sbc_draws=merged["sbc.draws"],
        sbc_bins=merged["sbc.bins"], info_T_list=tuple(merged["info.T_list"]),
        info_priors=tuple(merged["info.priors"]), info_replicates=merged["info.replicates"],
        info_grid=grid, info_box=info_box,
    )


def parse_config(path, command: Optional[str] = None) -> RunConfig:
    """Read and validate a config file. Relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    blob = path.read_bytes()
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError("config", f"not UTF-8 ({exc})") from None
    values, lines = parse_text(text)
    return build(values, lines, path.resolve().parent, command=command,
                 sha256=hashlib.sha256(blob).hexdigest())
