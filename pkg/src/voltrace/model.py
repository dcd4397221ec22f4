"""Dispersion functions, observation grids and exact path simulation.

A dispersion function lives on a uniform knot grid over [0, 1] and is linear
between knots, so every integral used downstream (cell variances, L2
distances) has a closed form: on a piece of width h with endpoint values a, b
the integral of the square is h * (a*a + a*b + b*b) / 3.

Observations sit on the grid t_i = i/n. Increments of the observed process
are independent centered Gaussians whose variances are exactly the per-cell
integrals of the squared dispersion, so simulation is exact rather than an
Euler approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO, Union

import numpy as np

from .rng import rng_from

__all__ = [
    "ClassParams",
    "DispersionFn",
    "ObservationPath",
    "DispersionClassError",
    "integrate_sigma_sq",
    "cell_variances",
    "simulate_path",
    "l2_distance",
    "sup_distance",
    "quadratic_variation",
    "l2_distance_rows",
    "write_path_csv",
    "read_path_csv",
    "write_dispersion_csv",
    "read_dispersion_csv",
]

# Slack for certifying bounds / Lipschitz increments on constructed values;
# covers accumulated rounding from trapezoid sums, nothing more.
_CERT_TOL = 1e-9


class DispersionClassError(ValueError):
    """A dispersion function violates its stated class constraints."""


@dataclass(frozen=True)
class ClassParams:
    """Bounds and smoothness budget for admissible dispersion functions.

    kappa: pointwise lower bound, strictly positive.
    big_k: pointwise upper bound.
    lip_m: Lipschitz constant budget.
    """

    kappa: float
    big_k: float
    lip_m: float

    def __post_init__(self):
        if not (0.0 < self.kappa < self.big_k < np.inf):
            raise ValueError(f"need 0 < kappa < K, got kappa={self.kappa}, K={self.big_k}")
        if not (0.0 < self.lip_m < np.inf):
            raise ValueError(f"need 0 < M, got M={self.lip_m}")

    @property
    def spread(self) -> float:
        return self.big_k - self.kappa


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DispersionFn:
    """Piecewise-linear dispersion function on m+1 uniform knots over [0, 1].

    Class membership is certified at construction: values within
    [kappa, big_k] and knot-to-knot increments within lip_m / m, which makes
    the interpolant Lipschitz(lip_m) globally. Pass validate=False only for
    test fixtures that intentionally step outside the class.
    """

    values: np.ndarray
    params: ClassParams
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values))
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("values must be a 1-d array with at least two knots")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if self.validate:
            self.certify()

    def certify(self) -> None:
        """Raise DispersionClassError unless bounds and the discrete Lipschitz
        certificate hold (up to rounding slack)."""
        p = self.params
        v = self.values
        if v.min() < p.kappa - _CERT_TOL or v.max() > p.big_k + _CERT_TOL:
            raise DispersionClassError(
                f"values outside [{p.kappa}, {p.big_k}]: range [{v.min()}, {v.max()}]"
            )
        step = np.abs(np.diff(v)).max() if v.size > 1 else 0.0
        if step > p.lip_m / self.m + _CERT_TOL:
            raise DispersionClassError(
                f"knot increment {step} exceeds Lipschitz budget {p.lip_m}/{self.m}"
            )

    @property
    def m(self) -> int:
        return self.values.size - 1

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.values.size) / self.m

    def __call__(self, t):
        """Evaluate the interpolant at t (scalar or array)."""
        return np.interp(t, self.knots, self.values)

    @staticmethod
    def constant(c: float, params: ClassParams, m: int = 400, validate: bool = True) -> "DispersionFn":
        return DispersionFn(np.full(m + 1, float(c)), params, validate=validate)

    @staticmethod
    def affine(a: float, b: float, params: ClassParams, m: int = 400, validate: bool = True) -> "DispersionFn":
        """sigma(t) = a + b * t on the knot grid."""
        t = np.arange(m + 1) / m
        return DispersionFn(a + b * t, params, validate=validate)

    def resampled(self, m: int) -> "DispersionFn":
        """Re-express on an m-knot grid by evaluating the interpolant.

        Exact when m is a multiple of the current resolution, otherwise a
        piecewise-linear re-approximation.
        """
        if m == self.m:
            return self
        t = np.arange(m + 1) / m
        return DispersionFn(self(t), self.params, validate=self.validate)


@dataclass(frozen=True)
class ObservationPath:
    """Process values observed on the grid t_i = i/n, started at zero."""

    n: int
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _freeze(self.x))
        if self.n < 1:
            raise ValueError(f"need n >= 1, got {self.n}")
        if self.x.shape != (self.n + 1,):
            raise ValueError(f"expected {self.n + 1} values, got {self.x.shape}")
        if self.x[0] != 0.0:
            raise ValueError("paths start at x=0")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    def increments(self) -> np.ndarray:
        return np.diff(self.x)


def _segment_square_integrals(sigma: DispersionFn, edges: np.ndarray) -> np.ndarray:
    """Exact integrals of sigma^2 over consecutive [edges[k], edges[k+1]].

    Assumes no segment straddles a knot, which holds whenever `edges`
    contains every knot lying strictly inside its span.
    """
    vals = sigma(edges)
    a, b = vals[:-1], vals[1:]
    return np.diff(edges) * (a * a + a * b + b * b) / 3.0


def integrate_sigma_sq(sigma: DispersionFn, a: float, b: float) -> float:
    """Exact integral of sigma(u)^2 over [a, b], split at interior knots."""
    if not (0.0 <= a < b <= 1.0):
        raise ValueError(f"need 0 <= a < b <= 1, got a={a}, b={b}")
    knots = sigma.knots
    inner = knots[(knots > a) & (knots < b)]
    edges = np.concatenate(([a], inner, [b]))
    return float(_segment_square_integrals(sigma, edges).sum())


def cell_variances(sigma: DispersionFn, n: int) -> np.ndarray:
    """Exact per-cell variances: integral of sigma^2 over each [t_{i-1}, t_i].

    Computed on the union of the observation grid and the knot grid so each
    segment is a single linear piece; no cancellation, all terms positive.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    obs = np.arange(n + 1) / n
    edges = np.union1d(obs, sigma.knots)
    seg = _segment_square_integrals(sigma, edges)
    starts = np.searchsorted(edges, obs[:-1])
    return np.add.reduceat(seg, starts)


def simulate_path(sigma0: DispersionFn, n: int, seed: int) -> ObservationPath:
    """Draw the observation vector under sigma0: increments are independent
    N(0, v_i) with v_i the exact per-cell variance, so there is no
    discretization error. Reproducible from the seed."""
    v = cell_variances(sigma0, n)
    z = rng_from(seed).standard_normal(n)
    x = np.empty(n + 1)
    x[0] = 0.0
    np.cumsum(z * np.sqrt(v), out=x[1:])
    return ObservationPath(n=n, x=x)


def _common_values(a: DispersionFn, b: DispersionFn) -> tuple[np.ndarray, np.ndarray, int]:
    """Knot values of both functions on the finer of the two grids."""
    m = max(a.m, b.m)
    return a.resampled(m).values, b.resampled(m).values, m


def l2_distance(a: DispersionFn, b: DispersionFn) -> float:
    """Exact L2 norm of the piecewise-linear difference."""
    va, vb, m = _common_values(a, b)
    d = va - vb
    lo, hi = d[:-1], d[1:]
    return float(np.sqrt(np.sum(lo * lo + lo * hi + hi * hi) / (3.0 * m)))


def sup_distance(a: DispersionFn, b: DispersionFn) -> float:
    """Sup-norm of the difference; exact on a common grid since the
    difference is again piecewise-linear."""
    va, vb, _ = _common_values(a, b)
    return float(np.abs(va - vb).max())


def l2_distance_rows(values: np.ndarray, sigma0: DispersionFn) -> np.ndarray:
    """L2 distance of each row of a (J, m+1) knot-value matrix to sigma0.

    Rows must share sigma0's grid; vectorized counterpart of l2_distance for
    chain output and prior draw matrices.
    """
    values = np.atleast_2d(values)
    if values.shape[1] != sigma0.m + 1:
        raise ValueError("row length does not match sigma0's knot grid")
    d = values - sigma0.values[None, :]
    lo, hi = d[:, :-1], d[:, 1:]
    return np.sqrt(np.sum(lo * lo + lo * hi + hi * hi, axis=1) / (3.0 * sigma0.m))


def quadratic_variation(path: ObservationPath) -> float:
    """Sum of squared increments of the observed path."""
    dx = path.increments()
    return float(np.dot(dx, dx))


# ---------------------------------------------------------------------------
# CSV interchange: full double precision, stable layout
# ---------------------------------------------------------------------------

_FileLike = Union[str, Path, TextIO]


def _open_for(f: _FileLike, mode: str):
    if isinstance(f, (str, Path)):
        return open(f, mode, newline=""), True
    return f, False


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_path_csv(path: ObservationPath, f: _FileLike, header_lines: Iterable[str] = ()) -> None:
    fh, owned = _open_for(f, "w")
    try:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("t,x\n")
        t = path.times
        for i in range(path.n + 1):
            fh.write(f"{_fmt(t[i])},{_fmt(path.x[i])}\n")
    finally:
        if owned:
            fh.close()


def _read_table(f: _FileLike, expected_header: str) -> np.ndarray:
    name = f if isinstance(f, (str, Path)) else getattr(f, "name", "<stream>")
    fh, owned = _open_for(f, "r")
    try:
        rows = []
        header_seen = False
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                if line != expected_header:
                    raise ValueError(f"{name}: line {lineno}: expected header '{expected_header}', got '{line}'")
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"{name}: line {lineno}: expected two comma-separated values")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise ValueError(f"{name}: line {lineno}: could not parse '{line}'") from None
        if not header_seen:
            raise ValueError(f"{name}: missing header '{expected_header}'")
        if not rows:
            raise ValueError(f"{name}: no data rows")
        return np.asarray(rows)
    finally:
        if owned:
            fh.close()


def read_path_csv(f: _FileLike) -> ObservationPath:
    """Parse a `t,x` file back into an ObservationPath; errors name the line."""
    table = _read_table(f, "t,x")
    n = table.shape[0] - 1
    if n < 1:
        raise ValueError("path file must contain at least two observations")
    t = table[:, 0]
    expected = np.arange(n + 1) / n
    if np.abs(t - expected).max() > 1e-9:
        raise ValueError("observation times are not the uniform grid i/n")
    return ObservationPath(n=n, x=table[:, 1])


def write_dispersion_csv(sigma: DispersionFn, f: _FileLike, header_lines: Iterable[str] = ()) -> None:
    fh, owned = _open_for(f, "w")
    try:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("t,sigma\n")
        t = sigma.knots
        for i in range(sigma.m + 1):
            fh.write(f"{_fmt(t[i])},{_fmt(sigma.values[i])}\n")
    finally:
        if owned:
            fh.close()


def read_dispersion_csv(f: _FileLike, params: ClassParams, validate: bool = True) -> DispersionFn:
    """Parse a `t,sigma` knot file; the class parameters come from the caller."""
    table = _read_table(f, "t,sigma")
    m = table.shape[0] - 1
    if m < 1:
        raise ValueError("dispersion file must contain at least two knots")
    t = table[:, 0]
    expected = np.arange(m + 1) / m
    if np.abs(t - expected).max() > 1e-9:
        raise ValueError("knots are not the uniform grid j/m")
    return DispersionFn(table[:, 1], params, validate=validate)
