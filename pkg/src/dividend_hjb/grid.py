"""Nonuniform tensor grid on [0, B] x [theta1, theta2] and its stencils.

x-coordinates come from a C^1 map ``h1`` of the unit interval that is
quadratic / linear / quadratic, with the linear part spanning the band
between the two classical thresholds; the drift axis uses a blend of the
identity and the smoothstep ``3y^2 - 2y^3`` which clusters nodes at both
edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import csv
import io

import numpy as np

from .classical import compute_classical, domain_bound
from .model import ModelParams, validate


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    n: int = 200
    m: int = 50
    a1: float = 0.3
    a2: float = 0.7
    a3: float = 0.5
    bigB: float = 7.46
    c1: float = 0.0
    c2: float = 0.0

    def check(self) -> "GridSpec":
        if not (self.n >= 3 and self.m >= 3):
            raise GridError("n and m must be at least 3")
        if not 0.0 < self.a1 < self.a2 < 1.0:
            raise GridError("breakpoints must satisfy 0 < a1 < a2 < 1")
        if not 0.0 <= self.a3 <= 1.0:
            raise GridError("a3 must lie in [0, 1]")
        if not 0.0 <= self.c1 <= self.c2 <= self.bigB:
            raise GridError("need 0 <= c1 <= c2 <= bigB")
        return self

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.n * factor, self.m * factor, self.a1, self.a2, self.a3,
                        self.bigB, self.c1, self.c2)


def default_spec(params: ModelParams, n: int = 200, m: int = 50, a1: float = 0.3,
                 a2: float = 0.7, a3: float = 0.5, bigB: float | None = None,
                 tail_tol: float = 0.01) -> GridSpec:
    """Grid spec with B from the tail bound and c1, c2 from the classical thresholds."""
    validate(params)
    b1 = compute_classical(params, 1).bbar
    b2 = compute_classical(params, 2).bbar
    B = domain_bound(params, tail_tol) if bigB is None else bigB
    B = max(B, b1, b2)
    return GridSpec(n, m, a1, a2, a3, B, min(b1, b2), max(b1, b2)).check()


def _degenerate(spec: GridSpec) -> bool:
    return spec.c2 - spec.c1 <= 1e-12 * max(spec.bigB, 1.0) or spec.c1 <= 0.0


def _fallback_pieces(spec: GridSpec):
    """Knot (abar, cbar) and matching slope for the two-quadratic stretch."""
    abar = 0.5 * (spec.a1 + spec.a2)
    cbar = 0.5 * (spec.c1 + spec.c2)
    slope = min(cbar / abar, (spec.bigB - cbar) / (1.0 - abar))
    return abar, cbar, slope


def map_h1(spec: GridSpec, zunit):
    """Unit coordinate -> surplus level.

    Pins h1(0)=0, h1(a1)=c1, h1(a2)=c2, h1(1)=B.  When the band between the
    thresholds is empty, or touches zero, the linear piece is dropped in
    favour of two quadratics meeting C^1 at the band midpoint.
    """
    z = np.asarray(zunit, dtype=float)
    if np.any(z < 0.0) or np.any(z > 1.0):
        raise GridError("unit coordinate outside [0, 1]")
    B = spec.bigB
    if _degenerate(spec):
        abar, cbar, s = _fallback_pieces(spec)
        if cbar <= 0.0 or cbar >= B:
            out = B * z
        else:
            left = s * z + (cbar - s * abar) * (abar**2 - (abar - z) ** 2) / abar**2
            right = cbar + s * (z - abar) + (B - cbar - s * (1.0 - abar)) * (z - abar) ** 2 / (1.0 - abar) ** 2
            out = np.where(z < abar, left, right)
    else:
        a1, a2, c1, c2 = spec.a1, spec.a2, spec.c1, spec.c2
        s = (c2 - c1) / (a2 - a1)
        p1 = s * z + (a1**2 - (a1 - z) ** 2) / a1**2 * (c1 - s * a1)
        p2 = c1 + s * (z - a1)
        p3 = c2 + s * (z - a2) + (B - c2 - s * (1.0 - a2)) * (z - a2) ** 2 / (1.0 - a2) ** 2
        out = np.where(z < a1, p1, np.where(z < a2, p2, p3))
        # exact knots despite round-off in the quadratic pieces
        out = np.where(z == 1.0, B, out)
    return float(out) if np.ndim(out) == 0 else out


def h1_slopes(spec: GridSpec) -> tuple[float, ...]:
    """h1' at the ends of each piece; h1' is piecewise linear, so these bound it."""
    B = spec.bigB
    if _degenerate(spec):
        abar, cbar, s = _fallback_pieces(spec)
        if cbar <= 0.0 or cbar >= B:
            return (B,)
        return (2.0 * cbar / abar - s, s, 2.0 * (B - cbar) / (1.0 - abar) - s)
    s = (spec.c2 - spec.c1) / (spec.a2 - spec.a1)
    return (2.0 * spec.c1 / spec.a1 - s, s, 2.0 * (B - spec.c2) / (1.0 - spec.a2) - s)


def map_h2(params: ModelParams, spec: GridSpec, yunit):
    """Unit coordinate -> drift estimate; affine when a3 = 0."""
    y = np.asarray(yunit, dtype=float)
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise GridError("unit coordinate outside [0, 1]")
    shape = (1.0 - spec.a3) * y + spec.a3 * (3.0 * y**2 - 2.0 * y**3)
    out = params.theta1 + (params.theta2 - params.theta1) * shape
    out = np.where(y == 1.0, params.theta2, out)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class AxisStencils:
    """Three-point weights on a nonuniform axis.

    Each array has shape ``(len(coords), 3)`` holding the weights of nodes
    ``(k-1, k, k+1)``; rows for the two end nodes are zero.
    """

    backward: np.ndarray
    forward: np.ndarray
    central: np.ndarray
    second: np.ndarray

    @classmethod
    def from_coords(cls, coords: np.ndarray) -> "AxisStencils":
        npts = len(coords)
        hm = np.zeros(npts)
        hp = np.zeros(npts)
        hm[1:-1] = coords[1:-1] - coords[:-2]
        hp[1:-1] = coords[2:] - coords[1:-1]
        inner = slice(1, npts - 1)
        bw = np.zeros((npts, 3))
        fw = np.zeros((npts, 3))
        ce = np.zeros((npts, 3))
        se = np.zeros((npts, 3))
        a, b = hm[inner], hp[inner]
        bw[inner, 0] = -1.0 / a
        bw[inner, 1] = 1.0 / a
        fw[inner, 1] = -1.0 / b
        fw[inner, 2] = 1.0 / b
        ce[inner, 0] = -b / (a * (a + b))
        ce[inner, 1] = (b - a) / (a * b)
        ce[inner, 2] = a / (b * (a + b))
        se[inner, 0] = 2.0 / (a * (a + b))
        se[inner, 1] = -2.0 / (a * b)
        se[inner, 2] = 2.0 / (b * (a + b))
        for arr in (bw, fw, ce, se):
            arr.setflags(write=False)
        return cls(bw, fw, ce, se)

    def apply(self, which: str, values: np.ndarray, axis: int = 0) -> np.ndarray:
        """Apply a stencil along ``axis``; end nodes get zeros."""
        w = getattr(self, which)
        v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
        out = np.zeros_like(v)
        shape = (-1,) + (1,) * (v.ndim - 1)
        out[1:-1] = (w[1:-1, 0].reshape(shape) * v[:-2] + w[1:-1, 1].reshape(shape) * v[1:-1]
                     + w[1:-1, 2].reshape(shape) * v[2:])
        return np.moveaxis(out, 0, axis)


@dataclass(frozen=True)
class Grid2D:
    xs: np.ndarray
    thetas: np.ndarray
    xst: AxisStencils
    tst: AxisStencils
    spec: GridSpec | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.xs), len(self.thetas))

    @property
    def size(self) -> int:
        return len(self.xs) * len(self.thetas)

    def index(self, i, j):
        """Flat node index of (x-index i, theta-index j)."""
        return np.asarray(i) * len(self.thetas) + np.asarray(j)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.thetas, indexing="ij")

    def cross_weights(self, i: int, j: int) -> np.ndarray:
        """3x3 weights for d2/dx dtheta at interior node (i, j): outer product of centrals."""
        return np.outer(self.xst.central[i], self.tst.central[j])

    def apply_cross(self, values: np.ndarray) -> np.ndarray:
        return self.tst.apply("central", self.xst.apply("central", values, axis=0), axis=1)

    def field(self, values) -> "GridField":
        return GridField(self, np.asarray(values, dtype=float).reshape(self.shape))


def grid_from_coords(xs, thetas, spec: GridSpec | None = None) -> Grid2D:
    xs = np.asarray(xs, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    if np.any(np.diff(xs) <= 0.0) or np.any(np.diff(thetas) <= 0.0):
        raise GridError("grid coordinates must be strictly increasing")
    for arr in (xs, thetas):
        arr.setflags(write=False)
    return Grid2D(xs, thetas, AxisStencils.from_coords(xs), AxisStencils.from_coords(thetas), spec)


def build_grid(params: ModelParams, spec: GridSpec) -> Grid2D:
    """Tensor grid ``x_k = h1(k/n)``, ``vartheta_k = h2(k/m)`` with stencils."""
    validate(params)
    spec.check()
    if min(h1_slopes(spec)) <= 0.0:
        raise GridError(
            f"h1 is not strictly increasing for this spec (slopes {h1_slopes(spec)}); "
            "move a1/a2 or change B"
        )
    xs = map_h1(spec, np.arange(spec.n + 1) / spec.n)
    thetas = map_h2(params, spec, np.arange(spec.m + 1) / spec.m)
    return grid_from_coords(xs, thetas, spec)


@dataclass
class GridField:
    """Scalar values on a :class:`Grid2D`, stored as ``values[i_x, j_theta]``."""

    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            if self.values.size != self.grid.size:
                raise GridError(
                    f"field has {self.values.size} values, grid has {self.grid.size} nodes"
                )
            self.values = self.values.reshape(self.grid.shape)

    def interpolate(self, x, vartheta):
        """Bilinear interpolation; points are clipped to the grid's rectangle."""
        xs, ts = self.grid.xs, self.grid.thetas
        x = np.clip(np.asarray(x, dtype=float), xs[0], xs[-1])
        t = np.clip(np.asarray(vartheta, dtype=float), ts[0], ts[-1])
        i = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
        j = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2)
        wx = (x - xs[i]) / (xs[i + 1] - xs[i])
        wt = (t - ts[j]) / (ts[j + 1] - ts[j])
        v = self.values
        out = ((1 - wx) * (1 - wt) * v[i, j] + wx * (1 - wt) * v[i + 1, j]
               + (1 - wx) * wt * v[i, j + 1] + wx * wt * v[i + 1, j + 1])
        return float(out) if np.ndim(out) == 0 else out

    def to_csv(self, path=None, value_name: str = "value", units: str = "currency") -> str:
        """One row per node: x, vartheta, value.  Returns the text; writes it if ``path``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x [currency]", "vartheta [currency/time]", f"{value_name} [{units}]"])
        X, T = self.grid.mesh()
        for x, t, v in zip(X.ravel(), T.ravel(), self.values.ravel()):
            w.writerow([repr(float(x)), repr(float(t)), repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text
