"""SVG rendering of the CSV tables written by the command line."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _floats(rows, key):
    out = []
    for r in rows:
        try:
            out.append(float(r[key]))
        except (KeyError, TypeError, ValueError):
            out.append(float("nan"))
    return out


def render(path: Path, out_dir: Path) -> Path:
    from .cli import read_csv

    meta, rows = read_csv(path)
    kind = meta.get("kind", "")
    fig, ax = plt.subplots(figsize=(5, 3.6))
    if kind == "kappa-sweep":
        col = next((k for k in (rows[0].keys() if rows else []) if k.startswith("max_")), "max_tau_star")
        ax.plot(_floats(rows, "kappa"), _floats(rows, col), "-")
        kp = float(meta.get("kappa_plus", "nan"))
        if rows:
            ks, vs = _floats(rows, "kappa"), _floats(rows, col)
            j = min(range(len(ks)), key=lambda i: abs(ks[i] - kp))
            ax.plot([ks[j]], [vs[j]], "D")
        ax.set_xlabel("kappa")
        ax.set_ylabel(col)
    elif kind == "c-sweep":
        cs, dts = _floats(rows, "c"), _floats(rows, "dt_max")
        ax.plot(cs, dts, "-")
        kp = float(meta.get("c_plus", "nan"))
        if rows:
            j = min(range(len(cs)), key=lambda i: abs(cs[i] - kp))
            ax.plot([cs[j]], [dts[j]], "D")
        ax.set_xlabel("c")
        ax.set_ylabel("dt_max")
    elif kind == "kappa-check":
        ax.semilogy(range(len(rows)), [max(v, 1e-300) for v in _floats(rows, "max_abs_delta")], "o")
        ax.set_xlabel("(p, c, face, point) entry")
        ax.set_ylabel("max |R(k1) - R(k2)|")
    elif kind == "convergence":
        ax.loglog(_floats(rows, "nx"), _floats(rows, "l2_error"), "o-")
        ax.set_xlabel("Nx")
        ax.set_ylabel("L2 error")
    elif kind == "penalty-bounds":
        vals = [float(r[list(r)[2]]) for r in rows if r["edge"] != "max"]
        ax.plot(vals, ".")
        ax.set_xlabel("(edge, flux point)")
        ax.set_ylabel(list(rows[0])[2] if rows else "bound")
    elif kind == "vonneumann":
        ax.semilogy(range(len(rows)), _floats(rows, "dt_max"), "o")
        ax.set_xlabel("configuration")
        ax.set_ylabel("dt_max")
    elif kind == "penalty-search":
        stable = [r.get("stable") == "true" for r in rows]
        pens = _floats(rows, "penalty")
        ax.plot([p for p, s in zip(pens, stable) if s], [1] * sum(stable), "o", label="stable")
        ax.plot([p for p, s in zip(pens, stable) if not s], [0] * (len(pens) - sum(stable)), "x",
                label="unstable")
        ax.set_xlabel("penalty")
        ax.legend()
    else:
        plt.close(fig)
        raise ValueError(f"{path}: unknown table kind {kind!r}")
    ax.set_title(path.stem, fontsize=8)
    fig.tight_layout()
    out_dir.mkdir(parents=True, exist_ok=True)
    dest = out_dir / (path.stem + ".svg")
    fig.savefig(dest, format="svg", metadata={"Date": None})
    plt.close(fig)
    return dest
