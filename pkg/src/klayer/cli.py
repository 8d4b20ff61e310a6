"""Command-line front end: steady solves, evolution runs, verification sweeps.

Commands
    steady-radial   nonlocal steady state on the ball, CSV profile r,W,U
    steady-2d       nonlocal steady state on a masked 2D domain, CSV x,y,W,U
                    plus a curvature/thickness table along the boundary
    evolve          radial time integration from a perturbed steady state,
                    CSV diagnostics t,mass,linf_u,l2_u,linf_w,l2_w,energy
    verify          small-eps expansion suite (boundary slopes, lambda_eps,
                    layer thickness); exit code 2 when a gap exceeds its
                    tolerance
    sweep           steady solves over eps-list x p-list on a worker pool

Configuration comes from key=value files plus command-line flags (flags win).
Numbers are serialised with 17 significant digits so repeated runs produce
byte-identical CSVs.  KLAYER_THREADS caps the sweep worker pool.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import asymptotics, evolve_radial, planar2d
from .core import Params, RadialProfile, make_graded_grid
from .errors import NoCrossingError, SolverError
from .mass_constraint import RadialBallDomain, solve_nonlocal
from .radial_steady import boundary_slope, layer_width

__all__ = ["ConfigError", "RunConfig", "parse_config", "run", "main"]

COMMANDS = ("steady-radial", "steady-2d", "evolve", "verify", "sweep")

# verification gates per quantity (relative gap of the extrapolated
# coefficient; the slope of U and the thickness carry the larger remainders)
VERIFY_TOL = {"slope_W": 0.05, "slope_U": 0.08, "lambda_eps": 0.05, "thickness": 0.08}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    params: Params
    R: float = 1.0
    shape: str = "disk"
    h: float = 0.01
    grid_count: int = 2500
    tol: float = 1e-8
    out: Path = Path(".")
    seed: int = 0
    eps_list: tuple = ()
    p_list: tuple = ()
    t_end: float = 20.0
    dt: float = 0.0  # 0: choose from the CFL bound
    perturb: float = 0.01
    level_c: float = 0.0  # 0: b/2
    samples: int = 48
    output_every: int = 20
    plots: bool = False

    def level(self) -> float:
        return self.level_c if self.level_c > 0 else self.params.b / 2.0


_SCHEMA = {
    "command": str,
    "epsilon": float,
    "p": float,
    "b": float,
    "m": float,
    "n": int,
    "R": float,
    "shape": str,
    "h": float,
    "grid_count": int,
    "tol": float,
    "out": str,
    "seed": int,
    "eps_list": str,
    "p_list": str,
    "t_end": float,
    "dt": float,
    "perturb": float,
    "level_c": float,
    "samples": int,
    "output_every": int,
}

_REQUIRED = ("epsilon", "p", "b", "m", "n", "R")


def _parse_file(path: str) -> dict:
    entries = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
            caster = _SCHEMA[key]
            try:
                entries[key] = caster(value)
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: value for '{key}' must be {caster.__name__}, got {value!r}"
                ) from None
    return entries


def _float_list(text: str) -> tuple:
    if not text:
        return ()
    try:
        return tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot parse number list from {text!r}") from None


def parse_config(path: str | None, overrides: dict) -> RunConfig:
    """Merge a key=value file with flag overrides into a validated RunConfig."""
    entries = _parse_file(path) if path else {}
    overrides = dict(overrides)
    plots = bool(overrides.pop("plots", False))
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"unknown override '{key}'")
        entries[key] = _SCHEMA[key](value)

    command = entries.get("command")
    if command is None:
        raise ConfigError("missing required key 'command'")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command '{command}' (choose from {COMMANDS})")

    if command == "sweep" and "eps_list" in entries:
        entries.setdefault("epsilon", _float_list(entries["eps_list"])[0])
    missing = [key for key in _REQUIRED if key not in entries]
    if missing:
        raise ConfigError(
            "missing required key" + ("s" if len(missing) > 1 else "") + ": "
            + ", ".join(f"'{k}'" for k in missing)
        )

    try:
        params = Params(
            epsilon=entries["epsilon"],
            p=entries["p"],
            b=entries["b"],
            m=entries["m"],
            n=entries["n"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    cfg = RunConfig(command=command, params=params, R=float(entries["R"]))
    for key in ("shape", "h", "grid_count", "tol", "seed", "t_end", "dt",
                "perturb", "level_c", "samples", "output_every"):
        if key in entries:
            setattr(cfg, key, entries[key])
    if "out" in entries:
        cfg.out = Path(entries["out"])
    if "eps_list" in entries:
        cfg.eps_list = _float_list(entries["eps_list"])
    if "p_list" in entries:
        cfg.p_list = _float_list(entries["p_list"])
    cfg.plots = plots
    return cfg


# ---------------------------------------------------------------------------
# output helpers


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _write_summary(path: Path, items: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("key,value\n")
        for key, value in items.items():
            fh.write(f"{key},{_fmt(value)}\n")


def _parse_shape(cfg: RunConfig):
    raw = cfg.shape.strip().lower()
    name, _, args = raw.partition(":")
    kv = {}
    if args:
        for token in args.replace(";", ",").split(","):
            k, _, v = token.partition("=")
            kv[k.strip()] = float(v)
    if name == "disk":
        return planar2d.Disk(kv.get("r", cfg.R))
    if name == "ellipse":
        return planar2d.Ellipse(kv.get("a", math.sqrt(2.0)), kv.get("b", 1.0 / math.sqrt(2.0)))
    if name == "star":
        return planar2d.Star(
            kv.get("r0", cfg.R), kv.get("amplitude", 0.15), int(kv.get("k", 5))
        )
    raise ConfigError(f"unknown shape '{cfg.shape}' (disk | ellipse:a=..,b=.. | star:r0=..,amplitude=..,k=..)")


def _maybe_plot_profile(cfg: RunConfig, steady) -> None:
    if not cfg.plots:
        return
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("plots requested but matplotlib is unavailable; skipping", file=sys.stderr)
        return
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.4))
    r = steady.W.grid.nodes
    ax[0].plot(r, steady.W.values)
    ax[0].set_xlabel("r")
    ax[0].set_ylabel("W")
    ax[1].plot(r, steady.U.values)
    ax[1].set_xlabel("r")
    ax[1].set_ylabel("U")
    fig.tight_layout()
    fig.savefig(cfg.out / "steady_profile.png", dpi=160)
    plt.close(fig)


def _maybe_plot_field(cfg: RunConfig, field: planar2d.PlanarField, name: str) -> None:
    if not cfg.plots:
        return
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("plots requested but matplotlib is unavailable; skipping", file=sys.stderr)
        return
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(
        field.values.T,
        origin="lower",
        extent=field.grid.bbox,
        cmap="gray",
        interpolation="nearest",
    )
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    fig.savefig(cfg.out / f"{name}.png", dpi=160)
    plt.close(fig)


# ---------------------------------------------------------------------------
# command implementations


def _run_steady_radial(cfg: RunConfig) -> int:
    dom = RadialBallDomain(R=cfg.R, n=cfg.params.n, count=cfg.grid_count)
    res = solve_nonlocal(cfg.params, dom, tol_rel=cfg.tol)
    st = res.steady
    rows = zip(st.W.grid.nodes, st.W.values, st.U.values)
    _write_csv(cfg.out / "steady_profile.csv", "r,W,U", rows)
    summary = {
        "lambda_eps": st.lambda_eps,
        "amplitude": st.amplitude,
        "sigma": st.sigma,
        "slope_W": boundary_slope(st.W),
        "slope_U": boundary_slope(st.U),
        "thickness": asymptotics.measure_thickness(st.W, cfg.level()),
        "bisection_iters": res.bisection_iters,
        "constraint_residual": res.constraint_residual,
    }
    _write_summary(cfg.out / "steady_summary.csv", summary)
    _maybe_plot_profile(cfg, st)
    return 0


def _run_steady_2d(cfg: RunConfig) -> int:
    shape = _parse_shape(cfg)
    grid, samples = planar2d.build_domain(shape, cfg.h, n_samples=cfg.samples)
    res = planar2d.solve_nonlocal_2d(cfg.params, grid, tol_rel=max(cfg.tol, 1e-10))
    st = res.steady
    X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
    mask = grid.inside
    rows = zip(X[mask], Y[mask], st.W.values[mask], st.U.values[mask])
    _write_csv(cfg.out / "steady_field.csv", "x,y,W,U", rows)
    table = planar2d.curvature_thickness_report(st.W, samples, cfg.level(), cfg.params)
    _write_csv(cfg.out / "curvature_thickness.csv", "arclength,curvature,thickness", table)
    _write_summary(
        cfg.out / "steady_summary.csv",
        {
            "lambda_eps": st.lambda_eps,
            "amplitude": st.amplitude,
            "sigma": st.sigma,
            "area": grid.area(),
            "bisection_iters": res.bisection_iters,
            "constraint_residual": res.constraint_residual,
        },
    )
    _maybe_plot_field(cfg, st.W, "steady_W")
    _maybe_plot_field(cfg, st.U, "steady_U")
    return 0


def _evolve_grid(cfg: RunConfig):
    ell = layer_width(
        cfg.params.epsilon**2 * asymptotics.lambda_leading(cfg.params, cfg.R), cfg.params
    )
    count = min(max(64, cfg.grid_count), 512)
    lw = min(max(ell, 1e-3 * cfg.R), 10.0 * cfg.R / (count - 1))
    return make_graded_grid(cfg.R, cfg.params.n, lw, count)


def _run_evolve(cfg: RunConfig) -> int:
    grid = _evolve_grid(cfg)
    dom = RadialBallDomain(R=cfg.R, n=cfg.params.n, fixed_grid=grid)
    st = solve_nonlocal(cfg.params, dom, tol_rel=cfg.tol).steady
    reference = evolve_radial.relax_to_discrete_steady(st, grid, cfg.params)

    rng = np.random.default_rng(cfg.seed)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    r = grid.nodes
    u0 = RadialProfile(
        grid=grid,
        values=reference.U.values
        * (1.0 + cfg.perturb * np.cos(math.pi * r / cfg.R + phase)),
    )
    v_shape = np.cos(math.pi * r / (2.0 * cfg.R))  # vanishes at r = R
    w0 = RadialProfile(
        grid=grid,
        values=np.exp(reference.V.values * (1.0 + cfg.perturb * math.cos(phase) * v_shape)),
    )
    state = evolve_radial.EvolutionState(t=0.0, u=u0, v=RadialProfile(grid, np.log(w0.values)))
    dt = cfg.dt if cfg.dt > 0 else 0.5 * evolve_radial.cfl_time_step(state, cfg.params)
    scheme = evolve_radial.SchemeConfig(
        dt=dt, t_end=cfg.t_end, output_every=cfg.output_every
    )
    series = evolve_radial.evolve(u0, w0, cfg.params, st, scheme, reference=reference)
    rows = zip(series.t, series.mass, series.linf_u, series.l2_u,
               series.linf_w, series.l2_w, series.energy)
    _write_csv(cfg.out / "evolve_diagnostics.csv",
               "t,mass,linf_u,l2_u,linf_w,l2_w,energy", rows)
    d = series.distance()
    mu_hat = evolve_radial.fit_decay_rate(np.column_stack([series.t, d]))
    _write_summary(
        cfg.out / "evolve_summary.csv",
        {
            "mu_hat": mu_hat,
            "initial_distance": d[0],
            "final_distance": d[-1],
            "mass_drift": float(np.max(np.abs(series.mass - series.mass[0]))
                                / series.mass[0]),
            "dt": series.dt_used,
            "perturb": cfg.perturb,
            "seed": cfg.seed,
        },
    )
    return 0


def _run_verify(cfg: RunConfig) -> int:
    eps_list = cfg.eps_list or (4e-3, 2e-3, 1e-3)
    dom = RadialBallDomain(R=cfg.R, n=cfg.params.n, count=cfg.grid_count)
    predictors = {
        "slope_W": asymptotics.slope_W_leading,
        "slope_U": asymptotics.slope_U_leading,
        "lambda_eps": asymptotics.lambda_leading,
        "thickness": lambda par, R: asymptotics.thickness_leading(cfg.level(), par, R),
    }
    rows = []
    worst_fail = False
    for quantity in asymptotics.QUANTITIES:
        report = asymptotics.verify_expansion(
            quantity, cfg.params, cfg.R, eps_list, level_c=cfg.level(), domain=dom,
            tol_rel=cfg.tol,
        )
        predicted = predictors[quantity](cfg.params, cfg.R)
        ok = report.relative_gap <= VERIFY_TOL[quantity]
        worst_fail |= not ok
        rows.append(
            f"{quantity},{_fmt(predicted)},{_fmt(report.extrapolated_coefficient)},"
            f"{_fmt(report.relative_gap)},{int(ok)}"
        )
        print(
            f"verify {quantity}: gap {report.relative_gap:.4f} "
            f"({'ok' if ok else 'EXCEEDS'} tol {VERIFY_TOL[quantity]})"
        )
    with open(cfg.out / "verify_report.csv", "w", newline="\n") as fh:
        fh.write("quantity,predicted,extrapolated,relative_gap,pass\n")
        for row in rows:
            fh.write(row + "\n")
    return 2 if worst_fail else 0


def _sweep_job(args):
    eps, p, cfg = args
    params = Params(epsilon=eps, p=p, b=cfg.params.b, m=cfg.params.m, n=cfg.params.n)
    dom = RadialBallDomain(R=cfg.R, n=params.n, count=cfg.grid_count)
    st = solve_nonlocal(params, dom, tol_rel=cfg.tol).steady
    try:
        thickness = asymptotics.measure_thickness(st.W, cfg.level())
    except NoCrossingError:
        thickness = math.nan  # level not attained (profile everywhere above c)
    return (
        eps,
        p,
        st.lambda_eps,
        st.amplitude,
        st.sigma,
        boundary_slope(st.W),
        boundary_slope(st.U),
        thickness,
    )


def _run_sweep(cfg: RunConfig) -> int:
    eps_list = cfg.eps_list or (cfg.params.epsilon,)
    p_list = cfg.p_list or (cfg.params.p,)
    jobs = [(eps, p, cfg) for eps in eps_list for p in p_list]
    env_cap = os.environ.get("KLAYER_THREADS")
    workers = max(1, min(len(jobs), int(env_cap) if env_cap else (os.cpu_count() or 1)))
    if workers == 1:
        results = [_sweep_job(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    results.sort(key=lambda row: (row[0], row[1]))
    _write_csv(
        cfg.out / "sweep.csv",
        "eps,p,lambda_eps,amplitude,sigma,slope_W,slope_U,thickness",
        results,
    )
    return 0


# ---------------------------------------------------------------------------
# entry point


def run(config: RunConfig) -> int:
    """Execute a validated configuration; returns the process exit code."""
    config.out.mkdir(parents=True, exist_ok=True)
    probe = config.out / ".write_probe"
    try:
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {config.out} is not writable: {exc}") from exc
    dispatch = {
        "steady-radial": _run_steady_radial,
        "steady-2d": _run_steady_2d,
        "evolve": _run_evolve,
        "verify": _run_verify,
        "sweep": _run_sweep,
    }
    return dispatch[config.command](config)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="klayer",
        description="Boundary-layer steady states and stability of a singular "
        "chemotaxis system",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=None)
        cmd.add_argument("--out", default=None)
        cmd.add_argument("--eps", dest="epsilon", type=float, default=None)
        cmd.add_argument("--p", type=float, default=None)
        cmd.add_argument("--b", type=float, default=None)
        cmd.add_argument("--m", type=float, default=None)
        cmd.add_argument("--n", type=int, default=None)
        cmd.add_argument("--R", type=float, default=None)
        cmd.add_argument("--grid-count", dest="grid_count", type=int, default=None)
        cmd.add_argument("--tol", type=float, default=None)
        cmd.add_argument("--shape", default=None)
        cmd.add_argument("--h", type=float, default=None)
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--samples", type=int, default=None)
        cmd.add_argument("--level-c", dest="level_c", type=float, default=None)
        cmd.add_argument("--plots", action="store_true")
        if name == "evolve":
            cmd.add_argument("--t-end", dest="t_end", type=float, default=None)
            cmd.add_argument("--dt", type=float, default=None)
            cmd.add_argument("--perturb", type=float, default=None)
            cmd.add_argument("--output-every", dest="output_every", type=int, default=None)
        if name in ("verify", "sweep"):
            cmd.add_argument("--eps-list", dest="eps_list", default=None)
        if name == "sweep":
            cmd.add_argument("--p-list", dest="p_list", default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key in _SCHEMA and key != "command"
    }
    overrides["command"] = args.command
    if getattr(args, "plots", False):
        overrides["plots"] = True
    try:
        config = parse_config(args.config, overrides)
        return run(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
