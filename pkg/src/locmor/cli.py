"""Configuration-driven experiment runner writing CSV artifacts."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .enrich import Estimator, MarkingConfig, enrich_online
from .errest import flux_estimate
from .errors import ConfigurationError, NumericalError, ResourceError
from .fom import l2_error, solve_fom
from .forms import (assemble_affine_fom, channel_problem, constant_problem, manufactured_exact,
                    manufactured_problem)
from .greedy import GreedyConfig, spectral_greedy
from .grid import build_grid, decompose
from .rangefinder import RangefinderConfig, adaptive_randomized_range, make_rng
from .rom import constant_basis, project
from .space import build_block_space
from .transfer import assemble_transfer_matrix, projection_error_norm, subdomain_setup, transfer_eigs

EXPERIMENTS = ("eigdecay", "randrange", "greedy", "enrichment", "fomcheck")
PROBLEMS = ("channel", "manufactured", "constant")


@dataclass
class ExperimentConfig:
    experiment: str = "fomcheck"
    problem: str = "manufactured"
    nx: int = 16
    ny: int = 16
    Mx: int = 2
    My: int = 2
    kind: str = "CG"
    subdomain: int = 0
    layers: int = 1
    mu: list = field(default_factory=list)
    n_modes: int = 0
    runs: int = 200
    tols: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    n_t: int = 10
    eps_algofail: float = 1e-10
    training_size: int = 10
    eps: float = 1e-2
    builder: str = "exact"
    online_count: int = 10
    delta_online: float = 0.0  # 0 selects 1.25 times the largest estimator floor
    strategy: str = "combined"
    estimator: str = "flux"
    levels: list = field(default_factory=lambda: [8, 16, 32])
    seed: int = 0

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"unknown problem {self.problem!r}")
        if self.kind not in ("CG", "DG"):
            raise ConfigurationError(f"unknown space kind {self.kind!r}")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        for name in ("runs", "n_t", "training_size", "online_count", "layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.delta_online < 0:
            raise ConfigurationError("delta_online must be non-negative")
        MarkingConfig(self.strategy, delta_online=max(self.delta_online, 1.0))
        return self


def _convert(name, raw, default):
    if isinstance(default, bool):
        if raw not in ("true", "false"):
            raise ValueError(f"expected true or false, got {raw!r}")
        return raw == "true"
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if name == "levels":
            return [int(s) for s in items]
        return [float(s) for s in items]
    return raw


def parse_config(text, source="<config>"):
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    cfg = ExperimentConfig()
    defaults = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in defaults:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _convert(key, raw, defaults[key]))
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return cfg


def format_config(cfg: ExperimentConfig):
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = ",".join(_num(x) for x in v)
        elif isinstance(v, float):
            v = _num(v)
        lines.append(f"{f.name} = {v}")
    return lines


def _num(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.17g}"


def write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (int, float, np.integer, np.floating)) else v for v in row])


def build_problem(cfg: ExperimentConfig, nx=None, ny=None):
    nx = cfg.nx if nx is None else nx
    ny = cfg.ny if ny is None else ny
    if cfg.problem == "channel":
        return channel_problem(nx, ny)
    if cfg.problem == "manufactured":
        return manufactured_problem(nx, ny)
    return constant_problem(build_grid((0.0, 1.0, 0.0, 1.0), nx, ny), 1.0, 1.0)


def _mu(cfg, problem):
    return problem.check_param(cfg.mu if cfg.mu else problem.center)


def _setup(cfg):
    problem = build_problem(cfg)
    dd = decompose(problem.grid, cfg.Mx, cfg.My)
    if not 0 <= cfg.subdomain < dd.num_subdomains:
        raise ConfigurationError(f"subdomain {cfg.subdomain} out of range")
    return problem, subdomain_setup(problem, dd, cfg.subdomain, cfg.layers)


def run_eigdecay(cfg, out):
    problem, setup = _setup(cfg)
    lam = transfer_eigs(setup, _mu(cfg, problem)).eigenvalues
    count = len(lam) if cfg.n_modes <= 0 else min(cfg.n_modes, len(lam))
    write_csv(out / "eigdecay.csv", ["n", "lambda"], [(n + 1, lam[n]) for n in range(count)])


def run_randrange(cfg, out):
    problem, setup = _setup(cfg)
    T = assemble_transfer_matrix(setup, _mu(cfg, problem))
    rows = []
    for tol in cfg.tols:
        for run in range(cfg.runs):
            rc = RangefinderConfig(tol, cfg.n_t, cfg.eps_algofail, seed=cfg.seed + run)
            res = adaptive_randomized_range(lambda z: T @ z, setup.M_S, setup.M_R, rc)
            err = projection_error_norm(T, res.basis, setup.M_S, setup.M_R)
            rows.append((run, tol, res.size, err, res.estimates[-1]))
    write_csv(out / "randrange.csv", ["run", "tol", "n", "true_err", "estimator"], rows)


def run_greedy(cfg, out):
    problem, setup = _setup(cfg)
    training = list(problem.sample(cfg.training_size, make_rng(cfg.seed)))
    res = spectral_greedy(setup, GreedyConfig(training, cfg.eps, builder=cfg.builder, seed=cfg.seed))
    rows = []
    for it, E in enumerate(res.trace):
        chosen = ";".join(_num(v) for v in res.chosen[it]) if it < len(res.chosen) else ""
        rows.append((it, chosen, E))
    write_csv(out / "greedy.csv", ["iteration", "mu", "E"], rows)


def estimator_floor(op, mus):
    """Flux estimator evaluated at the full-order solutions."""
    return [flux_estimate(op, solve_fom(op, mu).u, mu).estimate for mu in mus]


def run_enrichment(cfg, out):
    problem = build_problem(cfg)
    dd = decompose(problem.grid, cfg.Mx, cfg.My)
    op = assemble_affine_fom(problem, build_block_space(dd, cfg.kind))
    mus = list(problem.sample(cfg.online_count, make_rng(cfg.seed)))
    delta = cfg.delta_online
    if delta == 0.0:
        delta = 1.25 * max(estimator_floor(op, mus))
    marking = MarkingConfig(cfg.strategy, delta_online=delta)
    model = project(op, constant_basis(op.space))
    est = Estimator(model, cfg.estimator)
    ages = np.zeros(dd.num_subdomains, int)
    history = None
    for mu in mus:
        history = enrich_online(model, mu, marking, est, history, ages=ages)
    history.to_csv(out / "enrichment.csv")
    sizes = model.basis.sizes
    write_csv(out / "basis_sizes.csv", ["subdomain", "I", "J", "size"],
              [(m, *dd.subdomain_ij(m), sizes[m]) for m in range(dd.num_subdomains)])
    return {"delta_online_resolved": _num(delta)}


def run_fomcheck(cfg, out):
    if cfg.problem != "manufactured":
        raise ConfigurationError("fomcheck needs problem = manufactured")
    rows, prev = [], None
    for n in cfg.levels:
        problem = manufactured_problem(n)
        space = build_block_space(decompose(problem.grid, cfg.Mx, cfg.My), cfg.kind)
        u = solve_fom(assemble_affine_fom(problem, space), problem.center).u
        err = l2_error(space, u, manufactured_exact)
        h = 1.0 / n
        rate = np.log(prev[1] / err) / np.log(prev[0] / h) if prev else float("nan")
        rows.append((n, h, err, rate))
        prev = (h, err)
    write_csv(out / "fomcheck.csv", ["n", "h", "l2_error", "rate"], rows)


RUNNERS = {"eigdecay": run_eigdecay, "randrange": run_randrange, "greedy": run_greedy,
           "enrichment": run_enrichment, "fomcheck": run_fomcheck}


def run(cfg: ExperimentConfig, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    extra = RUNNERS[cfg.validate().experiment](cfg, out) or {}
    lines = ["# resolved configuration"] + format_config(cfg)
    lines += [f"{k} = {v}" for k, v in extra.items()]
    lines += ["# versions", f"locmor = {__version__}", f"python = {platform.python_version()}",
              f"numpy = {np.__version__}", f"scipy = {scipy.__version__}"]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"configuration error: {message}\n")


def main(argv=None):
    ap = _Parser(prog="locmor", description=__doc__)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--experiment", choices=EXPERIMENTS)
    args = ap.parse_args(argv)
    try:
        if args.config is not None:
            try:
                text = args.config.read_text()
            except OSError as exc:
                raise ConfigurationError(f"cannot read {args.config}: {exc}") from exc
            cfg = parse_config(text, str(args.config))
        else:
            cfg = ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.experiment is not None:
            cfg.experiment = args.experiment
        run(cfg, args.out)
    except (NumericalError, ResourceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
