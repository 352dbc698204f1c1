"""Post-hoc analysis exporters: critic Q-value grids, PCA projections of
embeddings, residual-norm profiles, and a standalone SVG plot emitter.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from . import envs


class SchemaError(ValueError):
    pass


# -- PCA via cyclic Jacobi ---------------------------------------------------

def jacobi_eigh(S: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Full eigendecomposition of a small symmetric matrix by cyclic Jacobi.

    Returns (eigenvalues descending, eigenvectors as columns).
    """
    A = np.array(S, dtype=np.float64)
    d = A.shape[0]
    if A.shape != (d, d) or not np.allclose(A, A.T, atol=1e-10):
        raise ValueError("jacobi_eigh needs a symmetric square matrix")
    V = np.eye(d)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum((A - np.diag(np.diag(A))) ** 2))
        if off < tol:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                if abs(A[p, q]) < tol / (d * d + 1):
                    continue
                # zero A[p,q] with a Givens rotation
                theta = 0.5 * math.atan2(2.0 * A[p, q], A[q, q] - A[p, p])
                c, s = math.cos(theta), math.sin(theta)
                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                rot_p = c * A[p, :] - s * A[q, :]
                rot_q = s * A[p, :] + c * A[q, :]
                A[p, :], A[q, :] = rot_p, rot_q
                rot_p = c * V[:, p] - s * V[:, q]
                rot_q = s * V[:, p] + c * V[:, q]
                V[:, p], V[:, q] = rot_p, rot_q
    order = np.argsort(np.diag(A))[::-1]
    return np.diag(A)[order], V[:, order]


def pca_project(embeddings: np.ndarray, k: int = 2):
    """Top-k PCA coordinates and explained-variance fractions.

    Components are ordered by eigenvalue descending; each component's sign is
    fixed so its largest-magnitude entry is positive.  Variance beyond the
    data's rank is reported as 0.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca_project needs at least 2 points (N x d)")
    n, d = X.shape
    if k > d:
        raise ValueError(f"k={k} exceeds embedding dim {d}")
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / (n - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    eigvals = np.maximum(eigvals, 0.0)
    for j in range(d):
        col = eigvecs[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            eigvecs[:, j] = -col
    total = eigvals.sum()
    fractions = eigvals / total if total > 0 else np.zeros(d)
    coords = Xc @ eigvecs[:, :k]
    return coords, fractions[:k]


def explained_variance_spectrum(embeddings: np.ndarray) -> np.ndarray:
    """All d explained-variance fractions (sums to 1 for non-degenerate data)."""
    X = np.asarray(embeddings, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / (X.shape[0] - 1)
    eigvals, _ = jacobi_eigh(cov)
    eigvals = np.maximum(eigvals, 0.0)
    total = eigvals.sum()
    return eigvals / total if total > 0 else eigvals


# -- critic Q grid -----------------------------------------------------------

def q_grid(agent, env_spec, goal, grid_resolution: int, fixed_action=None):
    """Rows (x, y, energy) over an x-y grid; wall cells carry NaN energy.

    Observations are synthesized canonically: agent at the cell center with
    zero velocity, applying `fixed_action` (default zero).
    """
    if env_spec.kind != "point":
        raise envs.ConfigError("q-grid export needs a 2D positional environment")
    if grid_resolution < 1:
        raise envs.ConfigError("grid_resolution must be >= 1")
    xmin, ymin, xmax, ymax = env_spec.extent
    xs = xmin + (np.arange(grid_resolution) + 0.5) * (xmax - xmin) / grid_resolution
    ys = ymin + (np.arange(grid_resolution) + 0.5) * (ymax - ymin) / grid_resolution
    gx, gy = np.meshgrid(xs, ys)
    pos = np.stack([gx.ravel(), gy.ravel()], axis=1)
    wall = envs._inside_wall(env_spec, pos)
    states = np.concatenate([pos, np.zeros_like(pos)], axis=1)
    action = np.zeros(env_spec.action_dim) if fixed_action is None else np.asarray(fixed_action)
    actions = np.broadcast_to(action, (len(pos), env_spec.action_dim))
    sa = np.concatenate([states, actions], axis=1).astype(agent.dtype)
    phi = agent.critic.sa_encoder.forward(sa, grad=False).data
    psi = agent.critic.g_encoder.forward(
        np.asarray(goal, dtype=agent.dtype)[None, :], grad=False).data
    energy = -np.linalg.norm(phi - psi, axis=1)
    energy = np.where(wall, np.nan, energy)
    return [(float(x), float(y), float(e)) for (x, y), e in zip(pos, energy)]


# -- residual norms ----------------------------------------------------------

def residual_norm_profile(agent, states, actions, goals):
    """Rows (network, block_index, mean branch L2 norm) for all three nets."""
    states = np.asarray(states, dtype=agent.dtype)
    actions = np.asarray(actions, dtype=agent.dtype)
    goals = np.asarray(goals, dtype=agent.dtype)
    rows = []
    inputs = {
        "actor": (agent.policy.actor, np.concatenate([states, goals], axis=1)),
        "critic_sa": (agent.critic.sa_encoder,
                      np.concatenate([states, actions], axis=1)),
        "critic_g": (agent.critic.g_encoder, goals),
    }
    for name, (net, x) in inputs.items():
        _, residuals = net.forward_with_residuals(x)
        for i, r in enumerate(residuals):
            rows.append((name, i, float(np.mean(np.linalg.norm(r, axis=1)))))
    return rows


# -- CSV helpers -------------------------------------------------------------

def read_csv(path: str):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        rows = list(reader)
    if not rows:
        return [], []
    return rows[0], rows[1:]


def write_csv(path: str, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- SVG emitter -------------------------------------------------------------

_W, _H = 640, 480
_ML, _MR, _MT, _MB = 60, 20, 20, 50
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _column(header, rows, name, numeric=True):
    if name not in header:
        raise SchemaError(f"CSV is missing required column {name!r}")
    i = header.index(name)
    vals = [r[i] for r in rows]
    if numeric:
        return [float(v) if v not in ("", "nan") else float("nan") for v in vals]
    return vals


def _ticks(lo, hi, n=5):
    if not np.isfinite(lo) or not np.isfinite(hi) or lo == hi:
        lo, hi = (0.0, 1.0) if lo == hi else (lo, hi)
        hi = lo + 1.0 if lo == hi else hi
    return np.linspace(lo, hi, n)


def _axes_svg(xlo, xhi, ylo, yhi, xlabel, ylabel):
    parts = []
    pw = _W - _ML - _MR
    ph = _H - _MT - _MB
    parts.append(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" '
                 'fill="none" stroke="black"/>')
    for tx in _ticks(xlo, xhi):
        px = _ML + (tx - xlo) / (xhi - xlo) * pw if xhi > xlo else _ML
        parts.append(f'<line x1="{px:.1f}" y1="{_MT + ph}" x2="{px:.1f}" '
                     f'y2="{_MT + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{px:.1f}" y="{_MT + ph + 18}" font-size="11" '
                     f'text-anchor="middle">{tx:.3g}</text>')
    for ty in _ticks(ylo, yhi):
        py = _MT + ph - (ty - ylo) / (yhi - ylo) * ph if yhi > ylo else _MT + ph
        parts.append(f'<line x1="{_ML - 5}" y1="{py:.1f}" x2="{_ML}" '
                     f'y2="{py:.1f}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 8}" y="{py + 4:.1f}" font-size="11" '
                     f'text-anchor="end">{ty:.3g}</text>')
    parts.append(f'<text x="{_ML + pw / 2}" y="{_H - 10}" font-size="13" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="15" y="{_MT + ph / 2}" font-size="13" '
                 f'text-anchor="middle" transform="rotate(-90 15 {_MT + ph / 2})">'
                 f'{ylabel}</text>')
    return parts


def emit_line_plot(header, rows, x: str, y: str, group: str = None) -> str:
    """Line plot SVG; NaN values break the polyline into gap-separated runs."""
    if not header and not rows:
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
                 f'width="{_W}" height="{_H}">']
        parts += _axes_svg(0.0, 1.0, 0.0, 1.0, x, y)
        parts.append("</svg>")
        return "\n".join(parts)
    xs = _column(header, rows, x)
    ys = _column(header, rows, y)
    groups = _column(header, rows, group, numeric=False) if group else ["" for _ in xs]
    finite_x = [v for v in xs if np.isfinite(v)]
    finite_y = [v for v in ys if np.isfinite(v)]
    xlo, xhi = (min(finite_x), max(finite_x)) if finite_x else (0.0, 1.0)
    ylo, yhi = (min(finite_y), max(finite_y)) if finite_y else (0.0, 1.0)
    if xlo == xhi:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if ylo == yhi:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(v):
        return _ML + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return _MT + ph - (v - ylo) / (yhi - ylo) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
             f'width="{_W}" height="{_H}">']
    parts += _axes_svg(xlo, xhi, ylo, yhi, x, y)
    series = {}
    for xi, yi, gi in zip(xs, ys, groups):
        series.setdefault(gi, []).append((xi, yi))
    for si, (name, pts) in enumerate(sorted(series.items())):
        color = _COLORS[si % len(_COLORS)]
        pts = sorted(pts)
        run = []
        runs = []
        for xi, yi in pts:
            if np.isfinite(xi) and np.isfinite(yi):
                run.append((xi, yi))
            elif run:
                runs.append(run)
                run = []
        if run:
            runs.append(run)
        for run in runs:
            coords = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in run)
            parts.append(f'<polyline points="{coords}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"/>')
        if name:
            ly = _MT + 15 + 16 * si
            parts.append(f'<line x1="{_W - 150}" y1="{ly}" x2="{_W - 130}" '
                         f'y2="{ly}" stroke="{color}" stroke-width="1.5"/>')
            parts.append(f'<text x="{_W - 125}" y="{ly + 4}" font-size="11">'
                         f'{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_heatmap(header, rows, x: str, y: str, value: str) -> str:
    """Heatmap SVG over the distinct (x, y) values; NaN cells render grey."""
    xs = _column(header, rows, x)
    ys = _column(header, rows, y)
    vs = _column(header, rows, value)
    ux = sorted(set(xs))
    uy = sorted(set(ys))
    finite = [v for v in vs if np.isfinite(v)]
    vlo, vhi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    span = vhi - vlo if vhi > vlo else 1.0
    pw, ph = _W - _ML - _MR, _H - _MT - _MB
    cw = pw / max(len(ux), 1)
    ch = ph / max(len(uy), 1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
             f'width="{_W}" height="{_H}">']
    xlo, xhi = (min(ux), max(ux)) if ux else (0, 1)
    ylo, yhi = (min(uy), max(uy)) if uy else (0, 1)
    parts += _axes_svg(xlo, xhi, ylo, yhi, x, y)
    for xi, yi, vi in zip(xs, ys, vs):
        cx = _ML + ux.index(xi) * cw
        cy = _MT + ph - (uy.index(yi) + 1) * ch
        if np.isfinite(vi):
            t = (vi - vlo) / span
            r = int(255 * t)
            b = int(255 * (1 - t))
            fill = f"rgb({r},60,{b})"
        else:
            fill = "rgb(160,160,160)"
        parts.append(f'<rect x="{cx:.1f}" y="{cy:.1f}" width="{cw:.1f}" '
                     f'height="{ch:.1f}" fill="{fill}"/>')
    parts.append(f'<text x="{_W - 150}" y="{_MT + 15}" font-size="11">'
                 f'{value}: {vlo:.3g} to {vhi:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_plot(csv_path: str, kind: str, axes: dict) -> str:
    """Render a CSV as SVG. kind: "line" (x, y[, group]) or "heatmap"
    (x, y, value)."""
    header, rows = read_csv(csv_path)
    if kind == "line":
        return emit_line_plot(header, rows, axes["x"], axes["y"], axes.get("group"))
    if kind == "heatmap":
        return emit_heatmap(header, rows, axes["x"], axes["y"], axes["value"])
    raise SchemaError(f"unknown plot kind: {kind}")
