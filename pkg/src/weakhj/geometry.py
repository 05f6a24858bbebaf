"""Periodic one-dimensional grids and the fields that live on them.

Every solver in the package works on a uniform grid of the circle
``[0, length)``.  Periodicity is handled by index wrapping, so there are no
ghost cells and no boundary conditions anywhere in the code base.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

MIN_NODES = 8
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid of ``n`` nodes on a circle of circumference ``length``.

    Node ``k`` sits at ``k * spacing``.  Instances are immutable and cheap to
    compare, so they double as a compatibility token for fields.
    """

    n: int
    length: float = TWO_PI

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < MIN_NODES:
            raise ValueError(f"grid too coarse: n={self.n} (need n >= {MIN_NODES})")
        if not (self.length > 0 and math.isfinite(self.length)):
            raise ValueError(f"grid length must be positive and finite, got {self.length}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "length", float(self.length))

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    @property
    def diameter(self) -> float:
        """Geodesic diameter of the circle, i.e. half the circumference."""
        return 0.5 * self.length

    def wrap(self, x: np.ndarray | float) -> np.ndarray:
        """Map coordinates into ``[0, length)``."""
        return np.mod(x, self.length)

    def interpolate(self, values: np.ndarray, x: np.ndarray | float) -> np.ndarray:
        """Periodic piecewise-linear interpolation of nodal ``values`` at ``x``."""
        s = np.asarray(x, dtype=float) / self.spacing
        k0 = np.floor(s)
        w = s - k0
        i0 = k0.astype(np.int64) % self.n
        i1 = (i0 + 1) % self.n
        return (1.0 - w) * values[i0] + w * values[i1]


def make_grid(n: int, length: float = TWO_PI) -> TorusGrid:
    """Build a :class:`TorusGrid`, rejecting ``n < 8`` and non-positive lengths."""
    return TorusGrid(n, length)


@dataclass(frozen=True, eq=False)
class GridField:
    """One finite real value per node of ``grid``.

    The value array is copied and frozen on construction.
    """

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if vals.shape[0] != self.grid.n:
            raise ValueError(f"field has {vals.shape[0]} values but the grid has {self.grid.n} nodes")
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise ValueError(f"non-finite field value at node {bad}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "GridField":
        return cls(grid, np.full(grid.n, float(value)))

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __add__(self, other: "GridField | float") -> "GridField":
        return GridField(self.grid, self.values + _raw(self.grid, other))

    __radd__ = __add__

    def __sub__(self, other: "GridField | float") -> "GridField":
        return GridField(self.grid, self.values - _raw(self.grid, other))

    def __rsub__(self, other: float) -> "GridField":
        return GridField(self.grid, _raw(self.grid, other) - self.values)

    def __neg__(self) -> "GridField":
        return GridField(self.grid, -self.values)

    def __mul__(self, scalar: float) -> "GridField":
        return GridField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def to_csv(self, path: str | Path | None = None) -> str:
        """Serialize as ``x,value`` rows (12 significant digits for ``x``)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "value"])
        for xk, vk in zip(self.x, self.values):
            writer.writerow([f"{xk:.12g}", repr(float(vk))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, grid: TorusGrid, text: str) -> "GridField":
        """Inverse of :meth:`to_csv` (takes the CSV text, not a path)."""
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(grid, np.array([float(r["value"]) for r in rows]))


def _raw(grid: TorusGrid, other: "GridField | float") -> np.ndarray | float:
    if isinstance(other, GridField):
        if other.grid != grid:
            raise ValueError("grid mismatch")
        return other.values
    return float(other)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Snapshots of a field at times ``times[j]`` (``dt`` apart by default).

    Frames are stored as one ``(n_frames, n)`` array; :attr:`frames` gives
    the :class:`GridField` view that the rest of the API expects.
    """

    grid: TorusGrid
    dt: float
    data: np.ndarray
    times: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=float, copy=True)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] != self.grid.n:
            raise ValueError("space-time data must have shape (n_frames >= 1, grid.n)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        times = self.times
        if times is None:
            times = np.arange(data.shape[0]) * self.dt
        times = np.array(times, dtype=float, copy=True)
        if times.shape != (data.shape[0],):
            raise ValueError("one time stamp per frame required")
        data.flags.writeable = False
        times.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "times", times)

    @classmethod
    def from_frames(cls, frames: Sequence[GridField], dt: float, times: Sequence[float] | None = None) -> "SpaceTimeField":
        if not frames:
            raise ValueError("frame count must be at least 1")
        grid = frames[0].grid
        if any(f.grid != grid for f in frames):
            raise ValueError("all frames must share one grid")
        return cls(grid, dt, np.stack([f.values for f in frames]), None if times is None else np.asarray(times))

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> list[GridField]:
        return [GridField(self.grid, row) for row in self.data]

    def __iter__(self) -> Iterator[GridField]:
        for row in self.data:
            yield GridField(self.grid, row)

    def frame(self, j: int) -> GridField:
        return GridField(self.grid, self.data[j])

    @property
    def final(self) -> GridField:
        return self.frame(-1)

    def at(self, t: float) -> np.ndarray:
        """Values at time ``t`` by linear interpolation between frames."""
        ts = self.times
        if t <= ts[0]:
            return self.data[0].copy()
        if t >= ts[-1]:
            return self.data[-1].copy()
        j = int(np.searchsorted(ts, t, side="right")) - 1
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1.0 - w) * self.data[j] + w * self.data[j + 1]


def sample(grid: TorusGrid, f: Callable[[np.ndarray], np.ndarray | float]) -> GridField:
    """Evaluate ``f`` at the grid nodes.

    ``f`` is called once on the whole node array; scalar-valued maps (e.g. a
    constant lambda) are broadcast.
    """
    with np.errstate(all="ignore"):
        vals = np.broadcast_to(np.asarray(f(grid.nodes), dtype=float), (grid.n,))
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise ValueError(f"non-finite sample value at node {bad} (x={grid.nodes[bad]:.6g})")
    return GridField(grid, vals)


def sup_norm(a: GridField, b: GridField | None = None) -> float:
    """Discrete max norm of ``a`` or of ``a - b``."""
    if b is None:
        return float(np.max(np.abs(a.values)))
    if a.grid != b.grid:
        raise ValueError("grid mismatch")
    return float(np.max(np.abs(a.values - b.values)))


def forward_differences(values: np.ndarray, spacing: float) -> np.ndarray:
    """``(u[k+1] - u[k]) / spacing`` with periodic wrap."""
    return (np.roll(values, -1) - values) / spacing


def lipschitz_estimate(u: GridField) -> float:
    """Largest first-difference quotient of ``u`` over the periodic stencil."""
    return float(np.max(np.abs(forward_differences(u.values, u.grid.spacing))))
