"""Configuration, orchestration, file output and the ``alloyfreeze`` CLI.

Configuration is a YAML document.  Every key is optional; omitted keys take
the defaults below, which together form the default convection case.
Unknown keys are rejected with the offending line.

    seed: 0
    grid:          {nx: 24, ny: 24, Lx: 1.0, Ly: 1.0}
    physics:       {rho, nu, eta, kappa, C_p, alpha, beta, g_mag, theta_r, c_r, C_0, c_g}
    phase_diagram: {theta_F, theta_E, c_E, c_A, curve_kind}
    boundary:
      bottom: {kind: constant, value: 0.05, amplitude: 0.05, cycles: 1, phase: 0.0}
      top:    {kind: linear, value: 0.8, slope: 0.15, amplitude: 0.05, cycles: 1, phase: 0.0}
    step:     {dt, eps, cfl_max, elliptic_tol, elliptic_max_iter, momentum_time_coeff, freeze_velocity}
    repro:    {T, fp_tol, fp_max_iter, relaxation, homotopy_schedule, eps_schedule}
    simulate: {t_end, snapshot_every}
    initial:  {c_perturbation, theta_perturbation}
    output:   {dir, binary_snapshots}

A wall profile is ``base(x) + amplitude * sin(2 pi cycles t / T + phase)``
with ``T = repro.T``; ``cycles`` is an integer so the data are T-periodic.
``base`` is ``value`` (constant), ``value + slope * x`` (linear) or a
piecewise-linear interpolant of ``x`` / ``values`` lists (tabulated).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import diagnostics as dg
from .errors import AlloyFreezeError, ConfigError, NotConverged, NumericalError
from .field_core import BoundaryData, Grid, State, state_diff_norm2, state_norm2
from .phase_model import PhaseDiagram, PhysicalParams, check_compatibility, liquidus
from .repro import ReproConfig, eps_continuation, find_reproductive, propagate
from .stepper import StepConfig

log = logging.getLogger("alloyfreeze")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4

WALL_KINDS = ("constant", "linear", "tabulated")


@dataclass(frozen=True)
class WallSpec:
    kind: str = "constant"
    value: float = 0.0
    slope: float = 0.0
    x: tuple = ()
    values: tuple = ()
    amplitude: float = 0.0
    cycles: int = 0
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.kind not in WALL_KINDS:
            raise ValueError(f"kind must be one of {WALL_KINDS}")
        if self.kind == "tabulated":
            if len(self.x) < 2 or len(self.x) != len(self.values):
                raise ValueError("tabulated needs matching x and values lists of length >= 2")
            if any(b <= a for a, b in zip(self.x, self.x[1:])):
                raise ValueError("tabulated x must be strictly increasing")
        if self.cycles < 0:
            raise ValueError("cycles must be a nonnegative integer")

    def base(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape, self.value)
        if self.kind == "linear":
            return self.value + self.slope * x
        return np.interp(x, self.x, self.values)

    def profile(self, T: float):
        w = 2.0 * math.pi * self.cycles / T

        def f(x, t):
            return self.base(x) + self.amplitude * math.sin(w * t + self.phase)

        return f

    def bounds(self, Lx: float) -> tuple[float, float]:
        if self.kind == "constant":
            lo = hi = self.value
        elif self.kind == "linear":
            ends = (self.value, self.value + self.slope * Lx)
            lo, hi = min(ends), max(ends)
        else:
            xs = np.concatenate([[0.0, Lx], [v for v in self.x if 0.0 <= v <= Lx]])
            b = self.base(xs)
            lo, hi = float(b.min()), float(b.max())
        if self.cycles == 0:
            off = self.amplitude * math.sin(self.phase)
            return lo + off, hi + off
        a = abs(self.amplitude)
        return lo - a, hi + a


@dataclass(frozen=True)
class SimulateSpec:
    t_end: float = 1.0
    snapshot_every: int = 0

    def __post_init__(self):
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")


@dataclass(frozen=True)
class InitialSpec:
    c_perturbation: float = 0.1
    theta_perturbation: float = 0.05

    def __post_init__(self):
        if not 0 <= self.c_perturbation <= 1:
            raise ValueError("c_perturbation must lie in [0, 1]")
        if self.theta_perturbation < 0:
            raise ValueError("theta_perturbation must be >= 0")


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    binary_snapshots: bool = False


DEFAULT_PHYSICS = PhysicalParams(rho=1.0, nu=0.1, eta=0.1, kappa=0.1, C_p=1.0, alpha=1.0,
                                 beta=0.5, g_mag=50.0, theta_r=0.5, c_r=0.15, C_0=1.0, c_g=0.15)
DEFAULT_PHASE = PhaseDiagram(theta_F=1.0, theta_E=0.0, c_E=0.5, c_A=0.3)
DEFAULT_BOTTOM = WallSpec(kind="constant", value=0.05, amplitude=0.05, cycles=1)
DEFAULT_TOP = WallSpec(kind="linear", value=0.8, slope=0.15, amplitude=0.05, cycles=1)


@dataclass(frozen=True)
class RunConfig:
    grid: Grid = Grid(24, 24)
    physics: PhysicalParams = DEFAULT_PHYSICS
    phase_diagram: PhaseDiagram = DEFAULT_PHASE
    bottom: WallSpec = DEFAULT_BOTTOM
    top: WallSpec = DEFAULT_TOP
    step: StepConfig = StepConfig(dt=0.02, eps=0.1)
    repro: ReproConfig = ReproConfig()
    simulate: SimulateSpec = SimulateSpec()
    initial: InitialSpec = InitialSpec()
    output: OutputSpec = OutputSpec()
    seed: int = 0

    def boundary(self) -> BoundaryData:
        T = self.repro.T
        b0, b1 = self.bottom.bounds(self.grid.Lx)
        t0, t1 = self.top.bounds(self.grid.Lx)
        return BoundaryData(self.bottom.profile(T), self.top.profile(T),
                            (min(b0, t0), max(b1, t1)), T)

    @property
    def zero_data(self) -> bool:
        lo, hi = self.boundary().bounds
        return lo == 0.0 and hi == 0.0 and self.physics.g_mag == 0.0


# --------------------------------------------------------------------------
# parsing


SECTIONS = {
    "grid": (Grid, "grid"),
    "physics": (PhysicalParams, "physics"),
    "phase_diagram": (PhaseDiagram, "phase_diagram"),
    "step": (StepConfig, "step"),
    "repro": (ReproConfig, "repro"),
    "simulate": (SimulateSpec, "simulate"),
    "initial": (InitialSpec, "initial"),
    "output": (OutputSpec, "output"),
}
TOP_KEYS = set(SECTIONS) | {"boundary", "seed"}


def _line_map(node, path, lines):
    """Record the source line of every key path in a composed YAML tree."""
    if isinstance(node, yaml.MappingNode):
        seen = set()
        for k, v in node.value:
            key = k.value
            if key in seen:
                raise ConfigError(f"line {k.start_mark.line + 1}: duplicate key {key!r}")
            seen.add(key)
            lines[path + (key,)] = k.start_mark.line + 1
            _line_map(v, path + (key,), lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            lines[path + (i,)] = v.start_mark.line + 1
            _line_map(v, path + (i,), lines)


def _where(lines, path):
    ln = lines.get(tuple(path))
    name = ".".join(str(p) for p in path)
    return f"line {ln}: {name}" if ln else name


def _coerce(value, default, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, (str, int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return str(value)
    return value


def _build(cls, default, data, path, lines):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{_where(lines, path)}: expected a mapping")
    names = [f.name for f in fields(cls) if f.init]
    unknown = [k for k in data if k not in names]
    if unknown:
        k = unknown[0]
        raise ConfigError(f"{_where(lines, path + (k,))}: unknown key {k!r}; allowed: {', '.join(names)}")
    kwargs = {}
    for name in names:
        cur = getattr(default, name)
        if name in data:
            kwargs[name] = _coerce(data[name], cur, _where(lines, path + (name,)))
        else:
            kwargs[name] = cur
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{_where(lines, path)}: {exc}") from None


def parse_config(text: str) -> RunConfig:
    """Validated ``RunConfig`` from a YAML document."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed document: {exc}") from None
    lines: dict = {}
    if node is not None:
        _line_map(node, (), lines)
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    unknown = [k for k in data if k not in TOP_KEYS]
    if unknown:
        raise ConfigError(f"{_where(lines, (unknown[0],))}: unknown section {unknown[0]!r}; "
                          f"allowed: {', '.join(sorted(TOP_KEYS))}")
    d = RunConfig()
    kw = {}
    for key, (cls, attr) in SECTIONS.items():
        kw[attr] = _build(cls, getattr(d, attr), data.get(key), (key,), lines)
    bnd = data.get("boundary") or {}
    if not isinstance(bnd, dict):
        raise ConfigError(f"{_where(lines, ('boundary',))}: expected a mapping")
    for k in bnd:
        if k not in ("bottom", "top"):
            raise ConfigError(f"{_where(lines, ('boundary', k))}: unknown key {k!r}; allowed: bottom, top")
    kw["bottom"] = _build(WallSpec, d.bottom if "bottom" not in bnd else WallSpec(),
                          bnd.get("bottom"), ("boundary", "bottom"), lines)
    kw["top"] = _build(WallSpec, d.top if "top" not in bnd else WallSpec(),
                       bnd.get("top"), ("boundary", "top"), lines)
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"{_where(lines, ('seed',))}: seed must be an unsigned 64-bit integer")
    kw["seed"] = seed
    cfg = RunConfig(**kw)
    try:
        check_compatibility(cfg.physics, cfg.phase_diagram, cfg.grid.area)
    except ValueError as exc:
        raise ConfigError(f"{_where(lines, ('physics', 'c_g'))}: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def config_to_dict(cfg: RunConfig) -> dict:
    def clean(obj):
        d = asdict(obj)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    out = {key: clean(getattr(cfg, attr)) for key, (_, attr) in SECTIONS.items()}
    out["boundary"] = {"bottom": clean(cfg.bottom), "top": clean(cfg.top)}
    out["seed"] = cfg.seed
    return out


def serialize_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# --------------------------------------------------------------------------
# states and snapshots


def initial_state(cfg: RunConfig, seed: int | None = None) -> State:
    """Admissible starting state: mean solute ``c_g / |Omega|`` with a
    mean-free random perturbation, temperature equal to the wall-data lift
    plus noise clipped to the data range, fluid at rest."""
    grid = cfg.grid
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    bc = cfg.boundary()
    cbar = cfg.physics.c_g / grid.area
    c_top = float(liquidus(cfg.phase_diagram, cfg.phase_diagram.theta_E))
    r = rng.uniform(-1.0, 1.0, (grid.nx, grid.ny))
    r -= r.mean()
    r /= max(np.abs(r).max(), 1e-300)
    a = cfg.initial.c_perturbation
    if cbar > 0:
        a = min(a, (c_top - cbar) / cbar)
    c = cbar + a * cbar * r
    lo, hi = bc.bounds
    th = np.clip(bc.lift(grid, 0.0) + cfg.initial.theta_perturbation * rng.uniform(-1.0, 1.0, c.shape), lo, hi)
    return State(c, th, grid.zeros_vector(), grid.zeros_cell(), 0.0)


def _header(grid: Grid, t: float, name: str, shape) -> str:
    return (f"nx={grid.nx} ny={grid.ny} Lx={grid.Lx!r} Ly={grid.Ly!r} t={float(t)!r} "
            f"field={name} shape={shape[0]}x{shape[1]}")


def write_snapshot(path, arr, grid: Grid, t: float, name: str, binary: bool = False) -> Path:
    """Text: one header line, then one array row (fixed x index) per line.
    Binary: raw little-endian float64 in ``path`` with the header in
    ``path + '.hdr'``."""
    path = Path(path)
    arr = np.asarray(arr, dtype=float)
    head = _header(grid, t, name, arr.shape)
    if binary:
        path.write_bytes(arr.astype("<f8").tobytes(order="C"))
        Path(str(path) + ".hdr").write_text(head + "\n")
    else:
        with open(path, "w") as fh:
            fh.write(head + "\n")
            for row in arr:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    return path


def _parse_header(line: str) -> dict:
    meta = dict(tok.split("=", 1) for tok in line.split())
    out = {"nx": int(meta["nx"]), "ny": int(meta["ny"]), "Lx": float(meta["Lx"]),
           "Ly": float(meta["Ly"]), "t": float(meta["t"]), "field": meta["field"]}
    out["shape"] = tuple(int(s) for s in meta["shape"].split("x"))
    return out


def read_snapshot(path):
    path = Path(path)
    hdr = Path(str(path) + ".hdr")
    if hdr.exists():
        meta = _parse_header(hdr.read_text().strip())
        arr = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["shape"]).copy()
        return arr, meta
    with open(path) as fh:
        meta = _parse_header(fh.readline().strip())
        arr = np.loadtxt(fh, ndmin=2)
    return arr.reshape(meta["shape"]), meta


def write_state(out_dir, state: State, grid: Grid, tag: str, binary: bool = False):
    out = Path(out_dir)
    ext = "bin" if binary else "txt"
    for name, arr in (("c", state.c), ("theta", state.theta), ("u", state.vel.u),
                      ("v", state.vel.v), ("p", state.p)):
        write_snapshot(out / f"{tag}_{name}.{ext}", arr, grid, state.t, name, binary)


# --------------------------------------------------------------------------
# subcommands


def _problem(cfg: RunConfig):
    return cfg.grid, cfg.phase_diagram, cfg.physics, cfg.boundary()


def run_simulate(cfg: RunConfig, out: Path, seed: int | None = None) -> int:
    grid, pd, pp, bc = _problem(cfg)
    x0 = initial_state(cfg, seed)
    rec = dg.Recorder(grid, pd, pp, bc, cfg.step)
    every = cfg.simulate.snapshot_every
    count = [0]

    def cb(s):
        rec(s)
        if every and count[0] % every == 0:
            write_state(out, s, grid, f"snap{count[0]:06d}", cfg.output.binary_snapshots)
        count[0] += 1

    final = propagate(x0, grid, pd, pp, bc, cfg.step, cfg.simulate.t_end, callback=cb)
    rec.stats(subcommand="simulate").write(out)
    write_state(out, final, grid, "final", cfg.output.binary_snapshots)
    return EXIT_OK


def run_reproduce(cfg: RunConfig, out: Path, seed: int | None = None) -> int:
    grid, pd, pp, bc = _problem(cfg)
    rep = find_reproductive(initial_state(cfg, seed), grid, pd, pp, bc, cfg.step, cfg.repro)
    summary = rep.summary()
    code = EXIT_OK if rep.converged else EXIT_NOT_CONVERGED
    x = rep.final_state
    rec = dg.Recorder(grid, pd, pp, bc, cfg.step)
    try:
        y = propagate(x, grid, pd, pp, bc, cfg.step, cfg.repro.T, callback=rec)
        summary["repropagation_residual"] = math.sqrt(state_diff_norm2(x, y, grid)) / max(
            math.sqrt(state_norm2(x, grid)), 1.0)
        rec.stats(subcommand="reproduce").write(out)
    except NumericalError as exc:
        summary["repropagation_error"] = str(exc)
    (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_state(out, x, grid, "reproductive", cfg.output.binary_snapshots)
    log.info("reproduce: converged=%s iterations=%d residual=%.3e",
             rep.converged, rep.iterations, rep.final_residual)
    return code


def run_sweep(cfg: RunConfig, out: Path, seed: int | None = None) -> int:
    grid, pd, pp, bc = _problem(cfg)
    results, K = eps_continuation(initial_state(cfg, seed), grid, pd, pp, bc, cfg.step, cfg.repro)
    with open(out / "eps_summary.csv", "w") as fh:
        fh.write("eps,iterations,residual,converged,solid_velocity_integral\n")
        for r in results:
            fh.write(f"{r.eps!r},{r.report.iterations},{r.report.final_residual!r},"
                     f"{int(r.report.converged)},{r.solid_velocity_integral!r}\n")
    fit = dg.scaling_fit([r.eps for r in results], [r.solid_velocity_integral for r in results])
    info = asdict(fit)
    info["K_cells"] = None if K is None else int(K.sum())
    info["messages"] = [r.message for r in results]
    (out / "scaling.json").write_text(json.dumps(info, indent=2) + "\n")
    for r in results:
        write_state(out, r.report.final_state, grid, f"eps_{r.eps:g}", cfg.output.binary_snapshots)
    return EXIT_OK if all(r.ok for r in results) else EXIT_NOT_CONVERGED


def run_checks(stats: dg.TrajectoryStats, cfg: RunConfig) -> list[dg.CheckReport]:
    pd, pp = cfg.phase_diagram, cfg.physics
    reports = [
        dg.check_max_principles(stats, pd, cfg.boundary().bounds),
        dg.check_solute(stats, pp.c_g),
        dg.energy_budget(stats, pp).check(),
    ]
    # the decay bound is sharp only without boundary data and gravity
    reports.append(dg.decay_check(stats, pp).check(asserted=cfg.zero_data))
    try:
        reports.append(dg.CheckReport("solid_velocity", True,
                                      {"integral": dg.solid_velocity_integral(stats)}, asserted=False))
    except AlloyFreezeError as exc:
        reports.append(dg.CheckReport("solid_velocity", True, {"error": str(exc)}, asserted=False))
    return reports


def run_check(cfg: RunConfig, out: Path, trajectory=None) -> int:
    path = Path(trajectory) if trajectory else out / "timeseries.csv"
    if not path.exists():
        raise ConfigError(f"trajectory {path} not found; run simulate or reproduce first")
    stats = dg.TrajectoryStats.read(path)
    reports = run_checks(stats, cfg)
    ok = all(r.passed for r in reports if r.asserted)
    lines = [f"trajectory: {path}", f"records: {len(stats)}"]
    for r in reports:
        lines += r.lines()
    lines.append(f"overall.passed: {str(ok).lower()}")
    (out / "check_report.txt").write_text("\n".join(lines) + "\n")
    summary = {"passed": ok, "trajectory": str(path), "checks": {r.name: r.to_dict() for r in reports}}
    (out / "check_summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    for r in reports:
        log.info("%s: %s", r.name, "pass" if r.passed else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


COMMANDS = {"simulate": run_simulate, "reproduce": run_reproduce, "sweep-eps": run_sweep}


def run(subcommand: str, cfg: RunConfig, out, seed: int | None = None, trajectory=None) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if subcommand == "check":
        return run_check(cfg, out, trajectory)
    (out / "config.yaml").write_text(serialize_config(cfg))
    return COMMANDS[subcommand](cfg, out, seed)


def _run_job(job) -> int:
    sub, config_path, out, seed = job
    try:
        return run(sub, load_config(config_path), out, seed)
    except ConfigError:
        return EXIT_CONFIG
    except NumericalError:
        return EXIT_NUMERICAL


def run_batch(jobs, max_workers: int | None = None) -> list[int]:
    """Run independent ``(subcommand, config_path, out_dir, seed)`` jobs in
    worker processes; each job writes only to its own directory."""
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_job, jobs))


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="alloyfreeze",
                                 description="Reproductive solutions of a regularised alloy solidification model.")
    ap.add_argument("command", choices=["simulate", "reproduce", "sweep-eps", "check"])
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--out", default=None, help="output directory (default: output.dir from the config)")
    ap.add_argument("--seed", type=_u64, default=None, help="seed for the random initial state")
    ap.add_argument("--trajectory", default=None, help="timeseries.csv to check (default: <out>/timeseries.csv)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out if args.out else cfg.output.dir)
        code = run(args.command, cfg, out, args.seed, args.trajectory)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return code


if __name__ == "__main__":
    sys.exit(main())
