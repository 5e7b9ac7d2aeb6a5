"""Laminar rectangular-duct flow data.

With zero transverse velocity the steady equations reduce to a Poisson
problem on the cross-section, ``u_yy + u_zz = c`` with ``u = 0`` on the
walls, plus a linear pressure drop ``dp/dx = c`` with ``p(L) = 0``.  The
cross-section is solved by red-black SOR on a uniform 5-point stencil and
the solution is replicated along the duct axis.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRAIN_C = (-1000.0, -3000.0, -5000.0, -6000.0, -8000.0)
TEST_C = (-2000.0, -4000.0, -6000.0, -7000.0)

RECORD_FIELDS = ("x", "y", "z", "re", "u", "p")
RECORD_DTYPE = np.dtype([(name, np.float64) for name in RECORD_FIELDS])
CASE_FIELDS = ("c", "re", "u_max")


class SolverDivergenceError(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class DuctGeometry:
    L: float = 5.0
    H: float = 1.0
    W: float = 1.0

    def __post_init__(self):
        if not (self.L > 0 and self.H > 0 and self.W > 0):
            raise ValueError(f"duct dimensions must be positive, got {self}")


@dataclass
class CrossSection:
    c: float
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray  # shape (len(y), len(z))
    re: float = math.nan
    u_max: float = math.nan
    residual: float = math.nan
    iterations: int = 0


@dataclass
class FlowDataset:
    train: np.ndarray  # structured, RECORD_DTYPE
    test: np.ndarray
    case_table: list = field(default_factory=list)  # (c, re, u_max) tuples


def _laplacian(u, ay, az):
    inner = u[1:-1, 1:-1]
    return (u[2:, 1:-1] - 2.0 * inner + u[:-2, 1:-1]) * ay + (
        u[1:-1, 2:] - 2.0 * inner + u[1:-1, :-2]
    ) * az


def _sor(rhs, ay, az, omega, colors, target, max_iter, check_every):
    """Red-black SOR for ``lap(v) = rhs`` with ``v = 0`` on the walls.

    Returns ``(v, residual, iterations)``; stops early if the residual stops
    falling (round-off floor), leaving the caller to decide what to do.
    """
    v = np.zeros((rhs.shape[0] + 2, rhs.shape[1] + 2))
    inner = v[1:-1, 1:-1]
    diag = 2.0 * (ay + az)
    scale = omega / diag
    residual = math.inf
    best, stalled = math.inf, 0
    it = 0
    while it < max_iter:
        for mask in colors:
            r = (v[2:, 1:-1] + v[:-2, 1:-1]) * ay + (v[1:-1, 2:] + v[1:-1, :-2]) * az - diag * inner - rhs
            inner[mask] += scale * r[mask]
        it += 1
        if it % check_every == 0:
            residual = float(np.max(np.abs(_laplacian(v, ay, az) - rhs)))
            if not math.isfinite(residual) or residual <= target:
                break
            if residual < 0.5 * best:
                best, stalled = residual, 0
            else:
                stalled += 1
                if stalled >= 50:
                    break
    return v, residual, it


def solve_cross_section(
    c: float,
    geometry: DuctGeometry = DuctGeometry(),
    ny: int = 101,
    nz: int = 101,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
    check_every: int = 10,
) -> CrossSection:
    """Solve ``u_yy + u_zz = c`` on the duct cross-section.

    Red-black SOR with defect correction: each pass solves for a correction
    driven by the current residual, so round-off stays relative to the
    (shrinking) correction rather than to ``u``.  Stops once the max-norm
    residual of the discrete equation is ``<= tol * |c|``.  ``ny`` and ``nz``
    count nodes including the walls and must be odd so the centerline is a
    node.
    """
    if not c < 0:
        raise ValueError(f"pressure gradient must be negative, got {c}")
    for name, n in (("ny", ny), ("nz", nz)):
        if n < 17 or n % 2 == 0:
            raise ValueError(f"{name} must be odd and >= 17, got {n}")
    if not tol > 0:
        raise ValueError("tol must be positive")

    y = np.linspace(-geometry.H / 2, geometry.H / 2, ny)
    z = np.linspace(-geometry.W / 2, geometry.W / 2, nz)
    hy = geometry.H / (ny - 1)
    hz = geometry.W / (nz - 1)
    ay, az = 1.0 / hy**2, 1.0 / hz**2
    # optimal relaxation for the model problem
    rho = (ay * math.cos(math.pi / (ny - 1)) + az * math.cos(math.pi / (nz - 1))) / (ay + az)
    omega = 2.0 / (1.0 + math.sqrt(1.0 - rho * rho))
    ii, jj = np.indices((ny - 2, nz - 2))
    colors = [((ii + jj) % 2) == k for k in (0, 1)]
    target = tol * abs(c)

    u = np.zeros((ny, nz))
    rhs = np.full((ny - 2, nz - 2), float(c))
    residual = abs(c)
    it = 0
    while it < max_iter:
        # each pass only needs to gain a few digits; the next pass refines
        inner_target = max(0.5 * target, 1e-8 * residual)
        v, _, used = _sor(rhs, ay, az, omega, colors, inner_target, max_iter - it, check_every)
        it += used
        u += v
        rhs = c - _laplacian(u, ay, az)
        new_residual = float(np.max(np.abs(rhs)))
        if not math.isfinite(new_residual) or new_residual <= target:
            residual = new_residual
            break
        if not new_residual < 0.5 * residual:
            residual = new_residual
            break
        residual = new_residual
    if not residual <= target:
        raise SolverDivergenceError(
            f"SOR did not converge after {it} iterations (residual {residual:.3e}, "
            f"target {target:.3e})",
            residual,
            it,
        )
    cs = CrossSection(c=float(c), y=y, z=z, u=u, residual=residual, iterations=it)
    cs.re = compute_re(cs)
    cs.u_max = float(u[ny // 2, nz // 2])
    return cs


def compute_re(cs: CrossSection) -> float:
    """Cross-sectional integral of the axial velocity (2D trapezoid)."""
    inner = np.trapezoid(cs.u, cs.z, axis=1)
    return float(np.trapezoid(inner, cs.y))


def series_reference(c, y, z, n_terms: int = 50, geometry: DuctGeometry = DuctGeometry()):
    """Exact fully developed duct velocity as a truncated cosine-cosh series.

    Every retained term vanishes on all four walls, so the truncated sum is
    exactly zero on the boundary.  Accepts scalars or broadcastable arrays.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be positive")
    H, W = geometry.H, geometry.W
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(np.abs(y) > H / 2 * (1 + 1e-12)) or np.any(np.abs(z) > W / 2 * (1 + 1e-12)):
        raise ValueError("point outside the cross-section")
    y, z = np.broadcast_arrays(y, z)
    total = np.zeros(y.shape)
    az = np.abs(z)
    for k in range(n_terms):
        n = 2 * k + 1
        a = n * math.pi / H
        # cosh(a z) / cosh(a W/2) without overflow
        ratio = np.exp(a * (az - W / 2)) * (1 + np.exp(-2 * a * az)) / (1 + math.exp(-a * W))
        total += (-1) ** k / n**3 * np.cos(a * y) * (1 - ratio)
    out = abs(c) * 4 * H**2 / math.pi**3 * total
    return float(out) if out.ndim == 0 else out


def pressure_field(c: float, geometry: DuctGeometry, x):
    """Linear pressure with zero gauge at the outlet: ``|c| (L - x)``."""
    xs = np.asarray(x, dtype=float)
    if np.any(xs < 0) or np.any(xs > geometry.L):
        raise ValueError(f"x outside [0, {geometry.L}]")
    p = abs(c) * (geometry.L - xs)
    return float(p) if p.ndim == 0 else p


def case_records(cs: CrossSection, geometry: DuctGeometry, nx: int) -> np.ndarray:
    """Replicate one solved cross-section along ``nx`` axial stations."""
    xs = np.linspace(0.0, geometry.L, nx)
    ny, nz = cs.u.shape
    out = np.empty(nx * ny * nz, dtype=RECORD_DTYPE)
    X, Y, Z = np.meshgrid(xs, cs.y, cs.z, indexing="ij")
    out["x"] = X.ravel()
    out["y"] = Y.ravel()
    out["z"] = Z.ravel()
    out["re"] = cs.re
    out["u"] = np.broadcast_to(cs.u, (nx, ny, nz)).ravel()
    out["p"] = pressure_field(cs.c, geometry, X.ravel())
    return out


def assemble_dataset(
    geometry: DuctGeometry = DuctGeometry(),
    c_train=TRAIN_C,
    c_test=TEST_C,
    nx: int = 11,
    ny: int = 101,
    nz: int = 101,
    tol: float = 1e-10,
) -> FlowDataset:
    """Solve each distinct pressure gradient once and build train/test records."""
    if not c_train or not c_test:
        raise ValueError("both c lists must be non-empty")
    if nx < 2:
        raise ValueError("need at least 2 axial stations")
    solved = {}
    for c in sorted(set(c_train) | set(c_test), reverse=True):
        solved[c] = solve_cross_section(c, geometry, ny, nz, tol)

    def stack(cs_list):
        parts = [case_records(solved[c], geometry, nx) for c in cs_list]
        return np.concatenate(parts)

    table = [(c, s.re, s.u_max) for c, s in solved.items()]
    return FlowDataset(train=stack(c_train), test=stack(c_test), case_table=table)


# --------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    return repr(float(v))


def write_records(records: np.ndarray, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(RECORD_FIELDS) + "\n")
            cols = [records[name].tolist() for name in RECORD_FIELDS]
            fh.writelines(",".join(map(repr, row)) + "\n" for row in zip(*cols))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_records(path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != RECORD_FIELDS:
                raise ValueError(f"{path}: expected header {','.join(RECORD_FIELDS)}")
            rows = [tuple(map(float, row)) for row in reader if row]
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return np.array(rows, dtype=RECORD_DTYPE) if rows else np.empty(0, dtype=RECORD_DTYPE)


def write_cases(table, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(CASE_FIELDS) + "\n")
            for row in table:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_cases(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CASE_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(CASE_FIELDS)}")
        return [tuple(map(float, row)) for row in reader if row]


def export_csv(ds: FlowDataset, directory) -> dict:
    """Write ``train.csv``, ``test.csv`` and ``cases.csv`` into ``directory``."""
    directory = Path(directory)
    paths = {
        "train": directory / "train.csv",
        "test": directory / "test.csv",
        "cases": directory / "cases.csv",
    }
    write_records(ds.train, paths["train"])
    write_records(ds.test, paths["test"])
    write_cases(ds.case_table, paths["cases"])
    return paths


def load_dataset(directory) -> FlowDataset:
    directory = Path(directory)
    cases = directory / "cases.csv"
    return FlowDataset(
        train=read_records(directory / "train.csv"),
        test=read_records(directory / "test.csv"),
        case_table=read_cases(cases) if os.path.exists(cases) else [],
    )
