"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, defaults_help, parse_config
from .diagnostics import sbc
from .fisher_check import fisher_report, write_report
from .gibbs import Chain, SamplerError, run_chain
from .info_criterion import DEFAULT_GRID, MI_BOX, compare_priors, write_comparison
from .io import DataFormatError, read_observed, read_state, write_observed, write_state
from .model import (
    DomainError,
    Dynamics,
    ModelError,
    ObservationModel,
    ObservedData,
    default_model,
    observe_catch,
    observe_survey,
    simulate_dynamics,
)
from .priors import PriorKind, PriorSpec

# Stable positions in the seed tree; appending new streams keeps old ones intact.
STREAMS = ("dynamics", "observe", "fit", "sbc", "info", "fisher")

DATA_FILES = ("catches.csv", "indices.csv", "latent.csv", "state.csv")


class UsageError(Exception):
    pass


def derive_seed(master: int, stream: str) -> int:
    """Independent 63-bit seed for one named stream of the master seed."""
    ss = np.random.SeedSequence(master).spawn(len(STREAMS))[STREAMS.index(stream)]
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def _fmt(x) -> str:
    return repr(float(x))


def write_manifest(out_dir: Path, command: str, config_sha: str, seed: int, outputs: Sequence[str]) -> None:
    lines = [f"command = {command}", f"config_sha256 = {config_sha}", f"seed = {seed}",
             f"version = {__version__}"]
    for name in outputs:
        digest = hashlib.sha256((out_dir / name).read_bytes()).hexdigest()
        lines.append(f"output.{name} = {digest}")
    (out_dir / "run-manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_chain(chain: Chain, path: Path) -> None:
    T = None if chain.logC is None else chain.logC.shape[1]
    header = ["iter", "psi2", "phi2", "q"]
    if T:
        header += [f"logC_{t}" for t in range(1, T + 1)] + [f"Jt_{t}" for t in range(1, T + 1)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j, it in enumerate(chain.iterations):
            row = [it + 1, _fmt(chain.psi2[j]), _fmt(chain.phi2[j]), _fmt(chain.q[j])]
            if T:
                row += [_fmt(v) for v in chain.logC[j]] + [_fmt(v) for v in chain.Jtilde[j]]
            w.writerow(row)


def _true_state(cfg: RunConfig):
    if cfg.model.dynamics is Dynamics.DIRECT:
        return cfg.direct_state()
    return simulate_dynamics(cfg.model, cfg.N_init, cfg.F, derive_seed(cfg.seed, "dynamics"))


def _data_paths(cfg: RunConfig) -> list[Path]:
    return [cfg.data_dir / name for name in DATA_FILES]


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = parse_config(args.config, command="simulate")
    state = _true_state(cfg)
    rng = np.random.default_rng(derive_seed(cfg.seed, "observe"))
    Istar, _ = observe_survey(state, cfg.truth, cfg.model, rng)
    Cstar = observe_catch(state, cfg.truth.psi2, rng, laurent=True)
    cfg.data_dir.mkdir(parents=True, exist_ok=True)
    catches, indices, latent, states = _data_paths(cfg)
    write_observed(ObservedData(Istar=Istar, Cstar=Cstar), catches, indices)
    write_state(state, latent, states)
    write_manifest(cfg.data_dir, "simulate", cfg.sha256, cfg.seed, DATA_FILES)
    return 0


def cmd_fit(args) -> int:
    cfg = parse_config(args.config, command="fit")
    catches, indices, latent, states = _data_paths(cfg)
    for p in (catches, indices, latent, states):
        if not p.is_file():
            raise ConfigError("paths.data_dir", f"missing input file {p}")
    data = read_observed(catches, indices)
    state = read_state(latent, states)
    if data.A != cfg.model.A or data.T != cfg.model.T:
        raise ConfigError("model", f"data have A={data.A}, T={data.T} but config has "
                          f"A={cfg.model.A}, T={cfg.model.T}")
    sampler = replace(cfg.sampler, seed=derive_seed(cfg.seed, "fit"))
    chain = run_chain(sampler, data, cfg.model, state, cfg.prior)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_chain(chain, cfg.out_dir / "chain.csv")
    summary = chain.summary()
    summary["prior"] = cfg.prior.kind.value
    summary["psi2_mode"] = sampler.psi2_mode.value
    summary["mode"] = sampler.mode.value
    (cfg.out_dir / "summary.txt").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    write_manifest(cfg.out_dir, "fit", cfg.sha256, cfg.seed, ("chain.csv", "summary.txt"))
    return 0


def cmd_fisher_check(args) -> int:
    T, A, seed, sha = args.T, args.A, args.seed, ""
    out = Path(args.out) if args.out else Path(".")
    if args.config:
        cfg = parse_config(args.config, command="fisher-check")
        T = cfg.model.T if T is None else T
        A = cfg.model.A if A is None else A
        seed = cfg.seed if seed is None else seed
        out = Path(args.out) if args.out else cfg.out_dir
        sha = cfg.sha256
    T = 5 if T is None else T
    A = 4 if A is None else A
    seed = 0 if seed is None else seed
    if T < 2 or A < 1:
        raise UsageError("fisher-check needs --T >= 2 and --A >= 1")
    if args.mc_samples < 10_000:
        raise UsageError("--mc-samples must be >= 10000")
    if not sha:
        sha = hashlib.sha256(f"fisher-check T={T} A={A} seed={seed} mc={args.mc_samples}".encode()).hexdigest()
    rows = fisher_report(T=T, A=A, seed=derive_seed(seed, "fisher"), mc_samples=args.mc_samples)
    out.mkdir(parents=True, exist_ok=True)
    write_report(rows, out / "fisher_report.csv")
    write_manifest(out, "fisher-check", sha, seed, ("fisher_report.csv",))
    failed = [r.identity for r in rows if not r.passed]
    if failed:
        print(f"{len(failed)} identities failed: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


def _mi_rows(A, s, T_list, priors, box, grid, replicates, seed):
    specs = [PriorSpec(PriorKind(p), box) for p in priors]
    model = default_model(A=A, T=max(2, min(T_list)), s=s)
    return compare_priors(model, T_list, specs, seed=seed, n_outer=replicates, grid=grid)


def cmd_prior_compare(args) -> int:
    cfg = parse_config(args.config, command="prior-compare")
    rows = _mi_rows(cfg.model.A, cfg.model.s, cfg.info_T_list, cfg.info_priors, cfg.info_box,
                    cfg.info_grid, cfg.info_replicates, derive_seed(cfg.seed, "info"))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_comparison(rows, cfg.out_dir / "mi_compare.csv")
    write_manifest(cfg.out_dir, "prior-compare", cfg.sha256, cfg.seed, ("mi_compare.csv",))
    return 0


def _parse_box(text: str):
    try:
        vals = [float(x) for x in text.replace(";", ",").split(",")]
    except ValueError:
        raise UsageError(f"--box: cannot parse {text!r}") from None
    if len(vals) == 2:
        vals = vals * 3
    if len(vals) != 6:
        raise UsageError("--box needs 2 numbers (shared) or 6 (psi2, phi2, q pairs)")
    return tuple((vals[i], vals[i + 1]) for i in (0, 2, 4))


def _parse_ints(text: str, flag: str):
    try:
        vals = [int(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise UsageError(f"{flag}: values must be >= 1")
    return vals


def cmd_info_criterion(args) -> int:
    box = _parse_box(args.box)
    grid = _parse_ints(args.grid, "--grid")
    if len(grid) == 1:
        grid = grid * 3
    if len(grid) != 3:
        raise UsageError("--grid needs 1 or 3 node counts")
    T_list = _parse_ints(args.T, "--T")
    if min(T_list) < 2:
        raise UsageError("--T: every T must be >= 2")
    priors = [p.strip() for p in args.priors.split(",")]
    for p in priors:
        if p not in {k.value for k in PriorKind}:
            raise UsageError(f"--priors: unknown prior {p!r}")
    if args.replicates < 2:
        raise UsageError("--replicates must be >= 2")
    if args.A < 1:
        raise UsageError("--A must be >= 1")
    PriorSpec(PriorKind.REFERENCE, box)
    rows = _mi_rows(args.A, None, T_list, priors, box, tuple(grid), args.replicates,
                    derive_seed(args.seed, "info"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_comparison(rows, out / "mi_compare.csv")
    sha = hashlib.sha256(" ".join(args.argv).encode()).hexdigest()
    write_manifest(out, "info-criterion", sha, args.seed, ("mi_compare.csv",))
    return 0


def cmd_sbc(args) -> int:
    cfg = parse_config(args.config, command="sbc")
    model = ObservationModel(cfg.model, _true_state(cfg))
    rep = sbc(model, cfg.prior, cfg.sampler, cfg.sbc_replicates, n_posterior_draws=cfg.sbc_draws,
              n_bins=cfg.sbc_bins, seed=derive_seed(cfg.seed, "sbc"))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.out_dir / "sbc_ranks.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "psi2", "phi2", "q"])
        for i in range(rep.n_replicates):
            w.writerow([i + 1] + [int(rep.ranks[c][i]) for c in ("psi2", "phi2", "q")])
    stats = {c: {"chi2": rep.chi2[c], "p_value": rep.p_values[c], "counts": rep.counts[c].tolist()}
             for c in ("psi2", "phi2", "q")}
    stats.update(replicates=rep.n_replicates, draws=rep.n_draws, bins=rep.n_bins)
    (cfg.out_dir / "sbc_summary.txt").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    write_manifest(cfg.out_dir, "sbc", cfg.sha256, cfg.seed, ("sbc_ranks.csv", "sbc_summary.txt"))
    return 0


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys (key = value, '#' comments):\n" + defaults_help()
    parser = _Parser(prog="refprior", description="Reference-prior inference for age-structured "
                     "population models.", epilog=epilog,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"refprior {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate latent state and observations into paths.data_dir")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler; writes chain.csv and summary.txt")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fisher-check", help="verify Fisher-information identities; writes fisher_report.csv")
    p.add_argument("--T", type=int, default=None, help="time steps (default 5, or model.T)")
    p.add_argument("--A", type=int, default=None, help="age classes (default 4, or model.A)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mc-samples", type=int, default=200_000, help="Monte Carlo datasets (>= 1e4)")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None, help="output directory (default . or paths.out_dir)")
    p.set_defaults(func=cmd_fisher_check)

    p = sub.add_parser("prior-compare", help="expected-KL comparison driven by the info.* config keys")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_prior_compare)

    p = sub.add_parser("sbc", help="simulation-based calibration; writes sbc_ranks.csv")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_sbc)

    box = ",".join(f"{lo:g},{hi:g}" for lo, hi in MI_BOX)
    p = sub.add_parser("info-criterion", help="expected-KL comparison from flags; writes mi_compare.csv")
    p.add_argument("--box", default=box, help=f"psi2,phi2,q bounds as 6 numbers or 2 shared (default {box})")
    p.add_argument("--grid", default=",".join(map(str, DEFAULT_GRID)), help="lattice nodes per axis")
    p.add_argument("--T", default="10,20,30", help="comma-separated time-series lengths")
    p.add_argument("--priors", default="reference,jeffreys,flat")
    p.add_argument("--replicates", type=int, default=400)
    p.add_argument("--A", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_info_criterion, argv=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        if args.command == "info-criterion":
            args.argv = argv
        return args.func(args)
    except UsageError as exc:
        print(f"refprior: error: {exc}", file=sys.stderr)
        return 1
    except (DomainError, SamplerError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"refprior: runtime failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DataFormatError, ModelError) as exc:
        print(f"refprior: invalid input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
