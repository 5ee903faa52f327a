"""Command-line entry point: ``fractalwalk <command> [flags]``.

Every file written carries a manifest header (the resolved configuration and
its hash).  Outputs depend only on the configuration, so identical runs give
byte-identical files.

Exit codes: 0 ok, 1 verification failure, 2 configuration error,
3 numerical or undecidable-edge error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .augtree import UndecidableEdgeError, build, config_hash, degree_by_level, degree_stats, export
from .boundary import hitting_distribution
from .chain import AdmissibilityError, ChainSpec, ConductanceTable, monte_carlo
from .energy import (
    besov_seminorm,
    beta_exponent,
    boundary_energy,
    graph_energy,
    harmonic_extension,
    is_divergent,
    sample_function,
)
from .ifs import IfsError, load_ifs, word_str
from .kernels import FitError, expected_slope, fit_exponents, naim_boundary_samples, sample_boundary_pairs
from .metric import delta_estimate, horizontal_geodesic_bound
from .verify import CRITERIA, config_suite

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("build", "verify", "walk", "solve", "kernels", "hitting", "energy")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    ifs: str = "builtin:gasket2"
    gamma: float | None = None
    lam: float | None = None
    weights: str = "natural"
    levels: int = 4
    seed: int = 0
    samples: int = 200
    tol: float = 1e-3
    out: str = "."
    format: str = "dot"

    def validate(self):
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.lam is not None and not 0 < self.lam < 1:
            raise ConfigError("lambda must lie in (0, 1)")
        if self.levels < 1:
            raise ConfigError("levels must be at least 1")
        if self.samples < 0:
            raise ConfigError("samples must be non-negative")
        if not 0 < self.tol < 1:
            raise ConfigError("tol must lie in (0, 1)")
        if self.format not in ("dot", "json", "csv"):
            raise ConfigError("format must be dot, json or csv")
        return self


_KEYS = ("ifs", "gamma", "lam", "weights", "levels", "seed", "samples", "tol", "out", "format")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        if "lambda" in cfg:
            cfg["lam"] = cfg.pop("lambda")
        unknown = set(cfg) - set(_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for k in _KEYS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if isinstance(cfg.get("weights"), list):
        cfg["weights"] = ",".join(str(p) for p in cfg["weights"])
    return RunConfig(**cfg).validate()


class Run:
    """The tree, conductance table and manifest for one configuration."""

    def __init__(self, cfg: RunConfig, command: str, levels: int | None = None):
        self.cfg = cfg
        self.command = command
        ifs, w = load_ifs(cfg.ifs, cfg.weights)
        self.ifs = ifs
        lam = cfg.lam if cfg.lam is not None else ifs.min_ratio ** ifs.hausdorff_dim
        self.lam = lam
        self.tree = build(ifs, w, cfg.gamma, levels or cfg.levels)
        self._table = None
        man = {k: v for k, v in asdict(cfg).items() if k not in ("out", "lam")}
        man.update(self.tree.manifest())
        man.update({"lambda": lam, "command": command, "version": __version__})
        man["config_hash"] = config_hash(man)
        self.manifest = man

    @property
    def table(self) -> ConductanceTable:
        if self._table is None:
            self._table = ConductanceTable(self.tree, ChainSpec(self.lam))
        return self._table

    def header(self, prefix: str = "#") -> str:
        return "".join(f"{prefix} {k}: {self.manifest[k]}\n" for k in sorted(self.manifest))

    def write(self, name: str, body: str, prefix: str = "#") -> Path:
        out = Path(self.cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / name
        path.write_text(self.header(prefix) + body)
        return path


def _csv(rows, cols) -> str:
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(f"{v:.12g}" if isinstance(v, float) else str(v) for v in r))
    return "\n".join(lines) + "\n"


# -- commands -------------------------------------------------------------------------------
def cmd_build(cfg: RunConfig, args) -> int:
    run = Run(cfg, "build")
    tree = run.tree
    man = dict(run.manifest)
    data = export(tree, cfg.format, man)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"tree.{cfg.format}").write_bytes(data)
    maxdeg, hist = degree_stats(tree)
    M, per_level = horizontal_geodesic_bound(tree)
    delta = delta_estimate(tree, max(cfg.samples, 1), cfg.seed)
    lines = [
        f"vertices_per_level: {[int(tree.level_start[n + 1] - tree.level_start[n]) for n in range(tree.max_level + 1)]}",
        f"horizontal_edges_per_level: {[len(e) for e in tree.h_edges]}",
        f"max_degree: {maxdeg}",
        f"max_degree_by_level: {degree_by_level(tree)}",
        f"degree_histogram: {dict(sorted(hist.items()))}",
        f"horizontal_geodesic_bound_M: {M}",
        f"M_by_level: {per_level}",
        f"delta_estimate: {delta}",
    ]
    run.write("build_stats.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    if args.acceptance:
        keys = args.criteria.split(",") if args.criteria else list(CRITERIA)
        unknown = [k for k in keys if k not in CRITERIA]
        if unknown:
            raise ConfigError(f"unknown criteria {unknown}")
        results = [CRITERIA[k]() for k in keys]
        run = None
    else:
        run = Run(cfg, "verify")
        table = run.table
        if args.corrupt_conductance:
            x, y, f = args.corrupt_conductance.split(",")
            table = table.corrupt(int(x), int(y), float(f))
        results = config_suite(table, cfg.seed, max(cfg.samples, 1))
    if run is not None:
        run.write("verify.txt", "\n".join(r.line(timing=False) for r in results) + "\n")
    sys.stdout.write("\n".join(r.line() for r in results) + "\n")
    return EXIT_OK if all(r.passed for r in results if r.required) else EXIT_VERIFY


def cmd_walk(cfg: RunConfig, args) -> int:
    run = Run(cfg, "walk")
    level = args.hit_level or run.tree.max_level - 1
    res = monte_carlo(run.table, 0, ("level", level), cfg.samples, cfg.seed)
    exact = run.table.truncated(level).absorption_row(0)
    rows = [(word_str(run.tree.words[v]), int(c), float(f), float(s), float(e))
            for v, c, f, s, e in zip(res.targets, res.counts, res.freq, res.stderr, exact)]
    run.write("walk.csv", _csv(rows, ("vertex", "count", "freq", "stderr", "exact")))
    print(f"paths {res.n_paths}, stopped {res.n_stopped}, capped {res.n_capped}")
    return EXIT_OK


def cmd_solve(cfg: RunConfig, args) -> int:
    run = Run(cfg, "solve")
    tree, m = run.tree, run.tree.max_level
    ts = run.table.truncated(m)
    to_root = ts.F_to_root()
    g_root = ts.green_row(0)
    rows = [(word_str(tree.words[i]), int(tree.level[i]), float(to_root[i]), float(g_root[i]))
            for i in range(ts.n_int)]
    run.write("green.csv", _csv(rows, ("vertex", "level", "F_to_root", "G_from_root")))
    ab = ts.absorption_row(0)
    rows = [(word_str(w), float(a), float(p)) for w, a, p in
            zip(tree.level_words(m), ab, tree.weight[tree.level_slice(m)])]
    run.write("absorption.csv", _csv(rows, ("vertex", "absorption", "p")))
    print(f"G_m(root,root) = {ts.G_root:.12g}")
    return EXIT_OK


def cmd_kernels(cfg: RunConfig, args) -> int:
    run = Run(cfg, "kernels")
    L = run.tree.max_level
    if L < 4:
        raise ConfigError("kernels needs levels >= 4")
    pairs = sample_boundary_pairs(run.ifs, cfg.samples, cfg.seed, (1, max(1, L - 6)))
    samples = naim_boundary_samples(run.table, pairs, cfg.tol, with_gromov=True)
    rows = [(s.pair[0], s.pair[1], str(s.gromov_product), s.geometric_distance, s.value, s.level_used,
             int(s.converged)) for s in samples]
    run.write("kernels.csv", _csv(rows, ("xi", "eta", "gromov_product", "distance", "theta", "depth",
                                         "converged")))
    exp = expected_slope(run.ifs, run.lam)
    try:
        fit = fit_exponents(samples, min_samples=min(30, max(2, cfg.samples // 2)))
        report = (f"slope: {fit.slope:.6f}\nexpected: {exp:.6f}\nrelative_error: {fit.slope / exp - 1:+.4f}\n"
                  f"intercept: {fit.intercept:.6f}\nstderr: {fit.stderr:.6f}\nresidual_band: {fit.band:.4f}\n"
                  f"converged: {fit.n}/{len(samples)}\n")
    except FitError as exc:
        report = f"fit: unavailable ({exc})\nexpected: {exp:.6f}\n"
    run.write("fit.txt", report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_hitting(cfg: RunConfig, args) -> int:
    run = Run(cfg, "hitting")
    level = args.hit_level or run.tree.max_level - 1
    rep = hitting_distribution(run.table, level, with_mc=cfg.samples > 0, n_paths=cfg.samples, seed=cfg.seed,
                               overlap_check=True)
    freq = rep.mc.freq if rep.mc is not None else np.full(len(rep.exact), np.nan)
    rows = [(word_str(w), float(e), float(t), float(f)) for w, e, t, f in
            zip(rep.words, rep.exact, rep.target, freq)]
    run.write("hitting.csv", _csv(rows, ("vertex", "exact", "p", "mc_freq")))
    print(f"level {level}: tv {rep.tv_distance:.3e}, max mc z {rep.max_mc_zscore:.2f}, "
          f"touching pairs {rep.touching_pairs}")
    return EXIT_OK


def cmd_energy(cfg: RunConfig, args) -> int:
    run = Run(cfg, "energy")
    table = run.table
    beta = beta_exponent(table)
    rows = []
    for m in range(2, run.tree.max_level - 1):
        u = sample_function(table, m, lambda p: float(p[0]))
        ge = graph_energy(table, harmonic_extension(table, u))
        be = boundary_energy(table, u, cfg.tol)
        bs = besov_seminorm(table, u, beta / 2)
        rows.append((m, ge, be.value, bs, int(be.converged)))
    run.write("energy.csv", _csv(rows, ("level", "graph", "boundary", "besov", "quadrature_converged")))
    div = is_divergent([r[2] for r in rows])
    print(f"beta {beta:.6f}; {len(rows)} levels; boundary energy divergent: {div}")
    return EXIT_OK


HANDLERS = {
    "build": cmd_build,
    "verify": cmd_verify,
    "walk": cmd_walk,
    "solve": cmd_solve,
    "kernels": cmd_kernels,
    "hitting": cmd_hitting,
    "energy": cmd_energy,
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with defaults; flags override it")
    common.add_argument("--ifs", help="builtin:<name> or path to an IFS JSON file")
    common.add_argument("--gamma", type=float)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--weights", help="natural or p1,p2,...")
    common.add_argument("--levels", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--out")
    common.add_argument("--format", choices=("dot", "json", "csv"))
    p = argparse.ArgumentParser(prog="fractalwalk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, parents=[common])
        if name == "verify":
            s.add_argument("--acceptance", action="store_true", help="run the fixed acceptance criteria")
            s.add_argument("--criteria", help="comma-separated subset of criteria")
            s.add_argument("--corrupt-conductance", help=argparse.SUPPRESS)
        if name in ("walk", "hitting"):
            s.add_argument("--hit-level", type=int)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg, args)
    except (ConfigError, IfsError, AdmissibilityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UndecidableEdgeError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
