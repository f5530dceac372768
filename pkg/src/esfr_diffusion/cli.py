"""Command-line experiment drivers.

Every table is written as CSV: one ``#`` metadata line carrying the resolved
configuration, a header row, then data rows. Exit status is 0 on success,
2 when a run goes unstable or a search finds nothing, 1 on bad configuration.
"""
from __future__ import annotations

import csv
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .esfr import c_plus, r_residual
from .mesh import build_periodic_square
from .penalty import empirical_penalty_search, kappa_sweep, s_star, tau_star
from .refelem import ConfigurationError, reference_element
from .solver import (DiffusionConfig, Discretization, integrate, l2_error, lattice_propagate, project,
                     sine_exact, stable_dt)
from .vonneumann import assemble_pattern, dtmax_search, solver_dtmax

log = logging.getLogger("esfr_diffusion")

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE = 0, 1, 2


class Unstable(click.ClickException):
    exit_code = EXIT_UNSTABLE


def resolve_param(sel: str, p: int, gamma: float) -> float:
    """'dg' -> 0, 'plus' -> tabulated c+ for (p, gamma), otherwise a number >= 0."""
    s = str(sel).strip().lower()
    if s == "dg":
        return 0.0
    if s == "plus":
        try:
            return c_plus(p, gamma)
        except ValueError as exc:
            raise click.BadParameter(str(exc)) from None
    try:
        v = float(s)
    except ValueError:
        raise click.BadParameter(f"expected dg, plus or a number, got {sel!r}") from None
    if not np.isfinite(v) or v < 0:
        raise click.BadParameter(f"correction parameter must be finite and >= 0, got {sel!r}")
    return v


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, meta: dict, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={_fmt(v)}" for k, v in meta.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path: Path) -> tuple[dict, list[dict]]:
    with open(path) as fh:
        first = fh.readline()
        meta = {}
        if first.startswith("#"):
            for tok in first[1:].split():
                k, _, v = tok.partition("=")
                meta[k] = v
        else:
            fh.seek(0)
        rows = list(csv.DictReader(fh))
    return meta, rows


def _load_config_file(ctx, param, value):
    if value is None:
        return None
    defaults: dict = {}
    for ln, line in enumerate(Path(value).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise click.BadParameter(f"line {ln}: expected key = value")
        defaults[key.strip().replace("-", "_")] = val.strip()
    # the same keys apply to every subcommand
    ctx.default_map = {name: defaults for name in ctx.command.commands}
    return value


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), callback=_load_config_file,
              is_eager=True, expose_value=False, help="key = value file; command-line flags win")
@click.option("-v", "--verbose", is_flag=True, help="log progress to stderr")
def cli(verbose: bool):
    """ESFR diffusion experiments on periodic triangle meshes."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")


def _common(f):
    opts = [
        click.option("--p", "p", type=int, default=2, show_default=True, help="polynomial degree"),
        click.option("--flux", type=click.Choice(["ip", "br2"], case_sensitive=False), default="ip",
                     show_default=True),
        click.option("--c", "c_sel", default="dg", show_default=True, help="dg, plus or a number"),
        click.option("--kappa", "k_sel", default="dg", show_default=True, help="dg, plus or a number"),
        click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _check_p(p):
    if p < 1:
        raise click.BadParameter("--p must be >= 1")


# ---------------------------------------------------------------------------

@cli.command("penalty-bounds")
@_common
@click.option("--nx", type=int, default=8, show_default=True)
@click.option("--gamma", type=float, default=90.0, show_default=True, help="angle selecting the c+ column")
@click.option("--sweep", type=int, default=0, help="also write max bound over this many kappa values")
def penalty_bounds_cmd(p, flux, c_sel, k_sel, out, nx, gamma, sweep):
    """Per-edge tau* (IP) or s* (BR2) with a max summary row.

    The bound is evaluated with --kappa (default here: plus).
    """
    _check_p(p)
    src = click.get_current_context().get_parameter_source("k_sel")
    if src == click.core.ParameterSource.DEFAULT:
        k_sel = "plus"
    kappa = resolve_param(k_sel, p, gamma)
    mesh = build_periodic_square(nx)
    fn = tau_star if flux == "ip" else s_star
    bnd = fn(mesh, p, kappa)
    name = "tau_star" if flux == "ip" else "s_star"
    rows = [(e, i, bnd.values[e, i]) for e in range(bnd.values.shape[0]) for i in range(p + 1)]
    rows.append(("max", "", bnd.max))
    meta = dict(kind="penalty-bounds", p=p, flux=flux, nx=nx, kappa=kappa)
    path = write_csv(Path(out) / f"penalty_bounds_{flux}_p{p}_nx{nx}.csv", meta,
                     ["edge", "flux_point", name], rows)
    click.echo(f"max {name} = {bnd.max:.6g}  ({path})")
    if sweep > 0:
        kp = c_plus(p, gamma) if p in (2, 3) else 1e-2
        ks = np.linspace(0.0, 1.5 * kp, sweep)
        ks, vals, kbest = kappa_sweep(mesh, p, ks, "tau" if flux == "ip" else "s")
        meta = dict(kind="kappa-sweep", p=p, flux=flux, nx=nx, kappa_plus=kp)
        path = write_csv(Path(out) / f"kappa_sweep_{flux}_p{p}_nx{nx}.csv", meta,
                         ["kappa", f"max_{name}"], zip(ks, vals))
        click.echo(f"sweep argmin kappa = {kbest:.6g}  ({path})")
    if bnd.inapplicable.any():
        raise Unstable("bound inapplicable on some edges (non-positive denominator)")


@cli.command("penalty-search")
@_common
@click.option("--nx", type=int, default=8, show_default=True)
@click.option("--gamma", type=float, default=90.0, show_default=True)
@click.option("--cfl", type=float, default=1e-2, show_default=True)
@click.option("--tfinal", type=float, default=2.0, show_default=True)
@click.option("--start", type=float, default=0.0, show_default=True, help="first penalty tried")
@click.option("--step", type=float, default=None, help="grid spacing (0.1 IP, 0.01 BR2)")
@click.option("--cap", type=float, default=None, help="largest penalty tried (default: the bound)")
@click.option("--strategy", type=click.Choice(["scan", "bisect"]), default="bisect", show_default=True)
def penalty_search_cmd(p, flux, c_sel, k_sel, out, nx, gamma, cfl, tfinal, start, step, cap, strategy):
    """Smallest scalar penalty keeping |u| <= 2 over the sine decay run."""
    _check_p(p)
    c = resolve_param(c_sel, p, gamma)
    kappa = resolve_param(k_sel, p, gamma)
    mesh = build_periodic_square(nx)
    step = step if step is not None else (0.1 if flux == "ip" else 0.01)
    bound = (tau_star if flux == "ip" else s_star)(mesh, p, c_plus(p, gamma) if p in (2, 3) else 0.0).max
    cap = cap if cap is not None else bound
    res = empirical_penalty_search(mesh, p, flux, c, kappa, start, step, cap, cfl=cfl,
                                   t_final=tfinal, strategy=strategy)
    meta = dict(kind="penalty-search", p=p, flux=flux, nx=nx, c=c, kappa=kappa, cfl=cfl,
                tfinal=tfinal, dt=res.dt, step=step, strategy=strategy, bound=bound)
    rows = [(pen, ok, m, n) for pen, ok, m, n in sorted(res.tried)]
    path = write_csv(Path(out) / f"penalty_search_{flux}_p{p}_nx{nx}_c{c:g}_k{kappa:g}.csv", meta,
                     ["penalty", "stable", "max_abs_u", "steps"], rows)
    if not res.found:
        raise Unstable(f"no stable penalty up to {cap:g}")
    click.echo(f"minimal stable penalty = {res.penalty:g} (bound {bound:.4g})  ({path})")


@cli.command("vonneumann")
@_common
@click.option("--gamma", type=float, default=90.0, show_default=True, help="pattern angle in degrees")
@click.option("--penalty-scale", type=float, default=1.0, show_default=True)
@click.option("--grid", type=int, default=64, show_default=True, help="(|k|, theta) points per axis")
@click.option("--all", "all_tables", is_flag=True, help="every (flux, angle, c, p, scale) entry")
@click.option("--c-sweep", type=int, default=0, help="also tabulate dt_max over this many c values")
def vonneumann_cmd(p, flux, c_sel, k_sel, out, gamma, penalty_scale, grid, all_tables, c_sweep):
    """Maximal stable RK54 step (b=1, unit pattern) from the Bloch analysis."""
    configs = []
    if all_tables:
        for fl in ("ip", "br2"):
            for g in (60.0, 90.0):
                for cs in ("dg", "plus"):
                    for pp in (2, 3):
                        for sc in (1.0, 1.5):
                            configs.append((fl, g, cs, pp, sc))
    else:
        _check_p(p)
        configs.append((flux, gamma, c_sel, p, penalty_scale))
    rows = []
    for fl, g, cs, pp, sc in configs:
        if not 0.0 < g < 180.0:
            raise click.BadParameter("--gamma must lie in (0, 180)")
        c = resolve_param(cs, pp, g)
        kappa = resolve_param(k_sel, pp, g) if not all_tables else c
        op = assemble_pattern(np.radians(g), pp, fl, c, kappa, sc)
        dt = dtmax_search(op, grid, grid)
        rows.append((g, pp, fl, c, kappa, sc, dt))
        click.echo(f"{fl} gamma={g:g} p={pp} c={c:g} scale={sc:g}: dt_max = {dt:.4e}")
    meta = dict(kind="vonneumann", b=1.0, deltaB=1.0, grid=grid)
    tag = "all" if all_tables else f"{flux}_p{p}_g{gamma:g}_c{rows[0][3]:g}_s{penalty_scale:g}"
    write_csv(Path(out) / f"vonneumann_{tag}.csv", meta,
              ["gamma", "p", "flux", "c", "kappa", "penalty_scale", "dt_max"], rows)
    if c_sweep > 0 and not all_tables:
        kp = c_plus(p, gamma) if p in (2, 3) else 1e-2
        cs = np.linspace(0.0, 2.0 * kp, c_sweep)
        vals = []
        for cv in cs:
            op = assemble_pattern(np.radians(gamma), p, flux, float(cv), float(cv), penalty_scale)
            vals.append(dtmax_search(op, grid, grid))
        meta = dict(kind="c-sweep", p=p, flux=flux, gamma=gamma, penalty_scale=penalty_scale, c_plus=kp)
        write_csv(Path(out) / f"c_sweep_{flux}_p{p}_g{gamma:g}.csv", meta, ["c", "dt_max"], zip(cs, vals))


@cli.command("convergence")
@_common
@click.option("--nx", "nxs", type=int, multiple=True, default=(16, 32, 64), show_default=True)
@click.option("--gamma", type=float, default=90.0, show_default=True)
@click.option("--cfl", type=float, default=1e-2, show_default=True)
@click.option("--tfinal", type=float, default=1.0, show_default=True)
@click.option("--penalty-scale", type=float, default=1.0, show_default=True)
@click.option("--b", "bcoef", type=float, default=0.1, show_default=True)
@click.option("--direct", is_flag=True, help="march the full mesh instead of per Fourier block")
def convergence_cmd(p, flux, c_sel, k_sel, out, nxs, gamma, cfl, tfinal, penalty_scale, bcoef, direct):
    """L2 errors of the sine decay problem and observed orders."""
    _check_p(p)
    c = resolve_param(c_sel, p, gamma)
    kappa = resolve_param(k_sel, p, gamma)
    bound_kappa = c_plus(p, gamma) if p in (2, 3) else 0.0
    exact = sine_exact(bcoef)
    rows, errs, unstable = [], [], False
    for nx in nxs:
        mesh = build_periodic_square(nx)
        bnd = (tau_star if flux == "ip" else s_star)(mesh, p, bound_kappa)
        disc = Discretization(mesh, p, DiffusionConfig(b=bcoef, flux=flux, penalty=penalty_scale * bnd.per_face,
                                                       c=c, kappa=kappa))
        u0 = project(mesh, p, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        dt = stable_dt(mesh, p, bcoef, cfl)
        if direct or nx < 3:
            res = integrate(u0, disc, tfinal, dt, umax=2.0, check_every=50)
        else:
            res = lattice_propagate(u0, disc, tfinal, dt)
        ok = not res.diverged and np.all(np.isfinite(res.field.coeffs))
        err = l2_error(res.field, exact) if ok else float("nan")
        dtmax = solver_dtmax(disc) if nx >= 3 else float("nan")
        ooa = np.log2(errs[-1] / err) if (errs and ok and np.isfinite(errs[-1])) else ""
        errs.append(err)
        unstable |= not ok
        rows.append((nx, err, ooa, dt, res.steps, dtmax, ok))
        click.echo(f"nx={nx:3d} L2={err:.3e} OOA={ooa if ooa == '' else f'{ooa:.2f}'} dt={dt:.3e}")
    meta = dict(kind="convergence", p=p, flux=flux, c=c, kappa=kappa, b=bcoef, cfl=cfl, tfinal=tfinal,
                penalty_scale=penalty_scale, bound_kappa=bound_kappa)
    write_csv(Path(out) / f"convergence_{flux}_p{p}_c{c:g}_s{penalty_scale:g}.csv", meta,
              ["nx", "l2_error", "ooa", "dt", "steps", "dt_max", "stable"], rows)
    if unstable:
        raise Unstable("a convergence run went unstable")


@cli.command("kappa-check")
@click.option("--p", "ps", type=int, multiple=True, default=(2, 3), show_default=True)
@click.option("--c", "c_sels", multiple=True, default=("dg", "plus"), show_default=True)
@click.option("--kappa", "k_sels", multiple=True, default=("dg", "plus"), show_default=True,
              help="two kappa values to compare")
@click.option("--gamma", type=float, default=90.0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--tol", type=float, default=1e-9, show_default=True)
def kappa_check_cmd(ps, c_sels, k_sels, gamma, out, tol):
    """max |R_ei(kappa1) - R_ei(kappa2)| over solution points, per (e, i)."""
    if len(k_sels) != 2:
        raise click.BadParameter("give exactly two --kappa values")
    rows, worst = [], 0.0
    for p in ps:
        _check_p(p)
        sp = reference_element(p).solution_points
        for cs in c_sels:
            c = resolve_param(cs, p, gamma)
            k1, k2 = (resolve_param(k, p, gamma) for k in k_sels)
            if k1 == k2:
                k2 = 0.5 if k1 == 0.0 else 0.0
            for e in range(3):
                for i in range(p + 1):
                    r1 = r_residual(p, c, k1, e, i, sp)
                    r2 = r_residual(p, c, k2, e, i, sp)
                    delta = float(np.abs(r1 - r2).max())
                    rel = delta / max(float(np.abs(r1).max()), 1e-300)
                    worst = max(worst, rel)
                    rows.append((p, c, k1, k2, e + 1, i + 1, delta, rel))
    meta = dict(kind="kappa-check", gamma=gamma, tol=tol)
    path = write_csv(Path(out) / "kappa_check.csv", meta,
                     ["p", "c", "kappa1", "kappa2", "face", "point", "max_abs_delta", "max_rel_delta"], rows)
    click.echo(f"worst relative delta = {worst:.3e}  ({path})")
    if worst > tol:
        raise Unstable(f"kappa dependence above tolerance ({worst:.3e} > {tol:g})")


@cli.command("plot")
@click.argument("inputs", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True)
def plot_cmd(inputs, out):
    """Render CSV tables to SVG (needs matplotlib)."""
    from . import plots
    for path in inputs:
        dest = plots.render(Path(path), Path(out))
        click.echo(f"wrote {dest}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="esfr-diffusion", standalone_mode=False)
    except Unstable as exc:
        exc.show()
        return EXIT_UNSTABLE
    except click.exceptions.Abort:
        return EXIT_CONFIG
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except (ConfigurationError, ValueError) as exc:
        click.echo(f"Error: {exc}", err=True)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
