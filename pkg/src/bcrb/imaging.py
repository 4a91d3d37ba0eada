"""Subdiffraction incoherent imaging of point sources on a line.

Each detected photon carries the mixture state of p equally bright sources
displaced by their positions; measuring position (direct imaging) gives the
classical information

    v F(theta) v = int [sum_a v^a d_a h(x - theta^a)]^2 / (p^2 f) dx,

which at coincident sources collapses to rank one along the centroid
direction: every other direction loses information as a power of the
separation, and the exponent of that power law sets the minimax rate of any
estimator through the ground-state machinery.  The quantum (Helstrom)
information of the mixture, computed in a finite orthonormal basis spanning
the displaced amplitudes and their derivatives, stays full rank for two
sources but degenerates to rank two for three or more as they merge.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite import hermval
from scipy.interpolate import CubicSpline

from .errors import GridValueError, ProjectionError
from .geometry import StatisticalModel
from .grids import MatrixField, ParameterGrid, ScalarField, VectorField
from .minimax import RateFitResult, SchrodingerProblem, rate_fit
from .optimal import bmax
from .quantum import DensityFamily, helstrom_matrix

INTENSITY_NORMALIZATION_ATOL = 1e-8
COVERAGE_ATOL = 1e-6
INTENSITY_SUPPORT_FLOOR = 1e-14
DEFAULT_GRID_NODES = 4096
DEFAULT_SPAN_SIGMAS = 12.0
PROJECTION_DEFICIT_TOL = 1e-6
RANK_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class PointSpreadFunction:
    """Real amplitude on an image-plane grid, unit-normalized intensity.

    ``amplitude_fn`` / ``derivative_fn``, when present (catalog entries),
    evaluate the amplitude and its spatial derivative exactly at arbitrary
    points; otherwise a cubic spline of the stored samples is used, with
    zero extension outside the stored window.
    """

    x: np.ndarray
    amplitude: np.ndarray
    width: float
    amplitude_fn: Callable | None = None
    derivative_fn: Callable | None = None
    name: str = "custom"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        amp = np.asarray(self.amplitude, dtype=float)
        if x.ndim != 1 or x.shape != amp.shape or len(x) < 8:
            raise GridValueError("point-spread function needs matching 1-d arrays")
        if self.width <= 0:
            raise GridValueError("width scale must be positive")
        norm = np.trapezoid(amp**2, x)
        if abs(norm - 1.0) > INTENSITY_NORMALIZATION_ATOL:
            factor = 1.0 / np.sqrt(norm)
            amp = amp * factor
            # keep the analytic callables consistent with the stored samples
            if self.amplitude_fn is not None:
                fn = self.amplitude_fn
                object.__setattr__(self, "amplitude_fn",
                                   lambda pts, _f=fn, _c=factor: _c * np.asarray(_f(pts)))
            if self.derivative_fn is not None:
                dfn = self.derivative_fn
                object.__setattr__(self, "derivative_fn",
                                   lambda pts, _f=dfn, _c=factor: _c * np.asarray(_f(pts)))
        x.setflags(write=False)
        amp.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "amplitude", amp)

    def intensity_norm(self) -> float:
        return float(np.trapezoid(self.amplitude**2, self.x))

    def _spline(self):
        return CubicSpline(self.x, self.amplitude, extrapolate=False)

    def amplitude_at(self, pts: np.ndarray) -> np.ndarray:
        if self.amplitude_fn is not None:
            return np.asarray(self.amplitude_fn(pts), dtype=float)
        vals = self._spline()(pts)
        return np.nan_to_num(vals, nan=0.0)

    def derivative_at(self, pts: np.ndarray) -> np.ndarray:
        if self.derivative_fn is not None:
            return np.asarray(self.derivative_fn(pts), dtype=float)
        vals = self._spline().derivative()(pts)
        return np.nan_to_num(vals, nan=0.0)

    def intensity_at(self, pts: np.ndarray) -> np.ndarray:
        return self.amplitude_at(pts) ** 2

    def intensity_derivative_at(self, pts: np.ndarray) -> np.ndarray:
        return 2.0 * self.amplitude_at(pts) * self.derivative_at(pts)


def _catalog_grid(sigma: float, span: float = 24.0, nodes: int = 8193) -> np.ndarray:
    return np.linspace(-span * sigma, span * sigma, nodes)


def gaussian_psf(sigma: float = 1.0) -> PointSpreadFunction:
    """Gaussian amplitude; intensity is the normal density with scale sigma."""
    norm = (2.0 * np.pi * sigma**2) ** -0.25

    def amp(x):
        return norm * np.exp(-np.asarray(x) ** 2 / (4.0 * sigma**2))

    def damp(x):
        x = np.asarray(x)
        return amp(x) * (-x / (2.0 * sigma**2))

    x = _catalog_grid(sigma)
    return PointSpreadFunction(x, amp(x), sigma, amp, damp, "gaussian")


def hermite_gauss_psf(sigma: float = 1.0) -> PointSpreadFunction:
    """First-order Hermite-Gaussian amplitude: a zero at the origin."""
    norm = (2.0 * np.pi * sigma**2) ** -0.25

    def amp(x):
        x = np.asarray(x)
        return norm * (x / sigma) * np.exp(-(x**2) / (4.0 * sigma**2))

    def damp(x):
        x = np.asarray(x)
        return norm * np.exp(-(x**2) / (4.0 * sigma**2)) * (
            1.0 / sigma - x**2 / (2.0 * sigma**3)
        )

    x = _catalog_grid(sigma)
    return PointSpreadFunction(x, amp(x), sigma, amp, damp, "first_order_hermite")


def sinc_psf(sigma: float = 1.0) -> PointSpreadFunction:
    """Band-limited amplitude sin(pi x / s) / (pi x / s): periodic zeros."""

    def amp(x):
        return np.sinc(np.asarray(x) / sigma)

    def damp(x):
        x = np.asarray(x) / sigma
        out = np.zeros_like(x)
        nz = np.abs(x) > 1e-8
        xs = x[nz]
        out[nz] = (np.cos(np.pi * xs) - np.sinc(xs)) / xs / sigma
        small = ~nz
        out[small] = -(np.pi**2 / 3.0) * x[small] / sigma
        return out

    x = _catalog_grid(sigma, span=400.0, nodes=65537)
    return PointSpreadFunction(x, amp(x), sigma, amp, damp, "sinc")


PSF_CATALOG: dict[str, Callable[..., PointSpreadFunction]] = {
    "gaussian": gaussian_psf,
    "first_order_hermite": hermite_gauss_psf,
    "sinc": sinc_psf,
}


def psf_from_csv(path, width: float | None = None) -> PointSpreadFunction:
    """Columns: x, amplitude.  The width defaults to the intensity std dev."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    if len(header) < 2:
        raise GridValueError("PSF CSV needs columns x, amplitude")
    order = np.argsort(rows[:, 0])
    x, amp = rows[order, 0], rows[order, 1]
    if width is None:
        h = amp**2
        h = h / np.trapezoid(h, x)
        mean = np.trapezoid(x * h, x)
        width = float(np.sqrt(np.trapezoid((x - mean) ** 2 * h, x)))
    return PointSpreadFunction(x, amp, width, name="csv")


@dataclass(frozen=True, eq=False)
class SourceConfiguration:
    """p equally bright point sources on the object line."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1)
        if len(pos) < 1:
            raise GridValueError("need at least one source")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def p(self) -> int:
        return len(self.positions)

    @property
    def brightness(self) -> float:
        return 1.0 / self.p

    @property
    def centroid_weights(self) -> np.ndarray:
        return np.full(self.p, 1.0 / self.p)

    def scaled(self, factor: float) -> "SourceConfiguration":
        return SourceConfiguration(self.positions * factor)

    def shifted(self, offset: float) -> "SourceConfiguration":
        return SourceConfiguration(self.positions + offset)


def _measurement_grid(psf: PointSpreadFunction, positions: np.ndarray,
                      span_sigmas: float, nodes: int) -> np.ndarray:
    lo = positions.min() - span_sigmas * psf.width
    hi = positions.max() + span_sigmas * psf.width
    return positions.mean() + np.linspace(lo - positions.mean(), hi - positions.mean(), nodes)


def direct_imaging_fisher(
    psf: PointSpreadFunction,
    config: SourceConfiguration,
    span_sigmas: float = DEFAULT_SPAN_SIGMAS,
    nodes: int = DEFAULT_GRID_NODES,
) -> np.ndarray:
    """Information matrix of position-basis measurement (one photon).

    Entries are quadratures of (d_a f)(d_b f)/f with the mixture density f;
    the integrand is zeroed below the intensity support floor, and the grid
    must capture the full density (unit mass within 1e-6).
    """
    pos = config.positions
    x = _measurement_grid(psf, pos, span_sigmas, nodes)
    w = np.full(len(x), x[1] - x[0])
    w[0] = w[-1] = (x[1] - x[0]) / 2.0

    h = np.stack([psf.intensity_at(x - t) for t in pos])
    hp = np.stack([psf.intensity_derivative_at(x - t) for t in pos])
    f = h.mean(axis=0)
    mass = float(np.sum(w * f))
    if abs(mass - 1.0) > COVERAGE_ATOL:
        raise GridValueError(
            f"measurement grid captures mass {mass!r}; widen the span "
            f"(currently {span_sigmas} widths beyond the extreme sources)"
        )
    df = -hp / config.p
    ok = f > INTENSITY_SUPPORT_FLOOR
    out = np.empty((config.p, config.p))
    for a in range(config.p):
        for b in range(a, config.p):
            val = float(np.sum(w[ok] * df[a, ok] * df[b, ok] / f[ok]))
            out[a, b] = out[b, a] = val
    return out


INFORMATION_CHUNK = 256


def information_along(
    psf: PointSpreadFunction,
    direction: np.ndarray,
    taus: np.ndarray,
    origin: np.ndarray | None = None,
    span_sigmas: float = DEFAULT_SPAN_SIGMAS,
    nodes: int = DEFAULT_GRID_NODES,
) -> np.ndarray:
    """v F(theta(tau)) v along the submodel theta(tau) = origin + v tau.

    Batched over tau in memory-bounded chunks: one broadcasted quadrature
    per chunk.
    """
    direction = np.asarray(direction, dtype=float).reshape(-1)
    p = len(direction)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    origin = np.zeros(p) if origin is None else np.asarray(origin, dtype=float)
    thetas = origin[None, :] + taus[:, None] * direction[None, :]  # (nt, p)

    reach = np.abs(thetas).max() if len(taus) else 0.0
    half = reach + span_sigmas * psf.width
    x = np.linspace(-half, half, nodes)
    w = np.full(len(x), x[1] - x[0])
    w[0] = w[-1] = (x[1] - x[0]) / 2.0

    out = np.empty(len(taus))
    for start in range(0, len(taus), INFORMATION_CHUNK):
        block = thetas[start:start + INFORMATION_CHUNK]       # (nb, p)
        pts = x[None, None, :] - block[:, :, None]            # (nb, p, nx)
        amp = psf.amplitude_at(pts)
        damp = psf.derivative_at(pts)
        h = amp**2
        f = h.mean(axis=1)                                    # (nb, nx)
        num = np.einsum("a,bax->bx", direction, -2.0 * amp * damp / p) ** 2
        ok = f > INTENSITY_SUPPORT_FLOOR
        ratio = np.where(ok, num / np.where(ok, f, 1.0), 0.0)
        out[start:start + INFORMATION_CHUNK] = ratio @ w
    return out


@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    amplitude: float
    r_squared: float
    taus: np.ndarray
    information: np.ndarray


def exponent_fit(
    psf: PointSpreadFunction,
    direction: np.ndarray,
    taus: Sequence[float],
    origin: np.ndarray | None = None,
    r2_warn: float = 0.99,
    **grid_kwargs,
) -> ExponentFit:
    """Log-log fit of the directional information against A |tau|^m."""
    taus = np.asarray(sorted(float(t) for t in taus))
    if len(taus) < 3 or taus[0] <= 0:
        raise GridValueError("need at least three positive separations")
    if taus[-1] / taus[0] < 99.0:
        raise GridValueError(
            f"separation range {taus[0]:g}..{taus[-1]:g} spans less than two decades"
        )
    info = information_along(psf, direction, taus, origin, **grid_kwargs)
    if np.any(info <= 0):
        raise GridValueError("information vanished identically along the direction")
    logt, logf = np.log(taus), np.log(info)
    slope, intercept = np.polyfit(logt, logf, 1)
    fitted = slope * logt + intercept
    ss_res = float(np.sum((logf - fitted) ** 2))
    ss_tot = float(np.sum((logf - logf.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if r2 < r2_warn:
        warnings.warn(
            f"information is not a clean power law (R^2 = {r2:.4f}); "
            "residuals attached to the fit",
            stacklevel=2,
        )
    return ExponentFit(float(slope), float(np.exp(intercept)), r2, taus, info)


class _SampledInformation:
    """Spline of the directional information in |tau|, resampled on demand.

    Rate fits evaluate the potential at hundreds of thousands of points; the
    information is a smooth function of the absolute submodel coordinate, so
    sampling it densely once per radius and interpolating is exact to far
    below the quadrature error.
    """

    def __init__(self, psf, direction, origin, dense_nodes=2001, **grid_kwargs):
        self.psf = psf
        self.direction = direction
        self.origin = origin
        self.kwargs = grid_kwargs
        self.dense_nodes = dense_nodes
        self.radius = 0.0
        self.spline = None

    def _resample(self, radius: float):
        lin = np.linspace(0.0, radius, self.dense_nodes)
        logs = radius * np.logspace(-8, 0, 129)
        s = np.unique(np.concatenate([lin, logs]))
        vals = information_along(self.psf, self.direction, s, self.origin, **self.kwargs)
        self.spline = CubicSpline(s, vals)
        self.radius = radius

    def __call__(self, tau):
        tau = np.abs(np.asarray(tau, dtype=float))
        top = float(tau.max()) if tau.size else 0.0
        if self.spline is None or top > self.radius:
            self._resample(max(4.0 * top, 1e-6))
        return np.clip(self.spline(tau), 0.0, None)


def minimax_rate(
    psf: PointSpreadFunction,
    direction: np.ndarray,
    n_list: Sequence[float],
    origin: np.ndarray | None = None,
    initial_half_width: float | None = None,
    nodes: int = 2001,
    alignment: float = 1.0,
    **grid_kwargs,
) -> RateFitResult:
    """Worst-case-rate fit with the directional information as the potential."""
    half = initial_half_width if initial_half_width is not None else 0.25 * psf.width
    potential = _SampledInformation(psf, np.asarray(direction, dtype=float),
                                    origin, **grid_kwargs)
    potential(np.array([4.0 * half]))  # prime the spline past the first doublings
    problem = SchrodingerProblem((-half, half), potential, alignment=alignment,
                                 nodes=nodes)
    return rate_fit(problem, n_list)


def _hermite_modes(x: np.ndarray, scale: float, count: int) -> list[np.ndarray]:
    out = []
    for k in range(count):
        c = np.zeros(k + 1)
        c[k] = 1.0
        out.append(hermval(x / scale, c) * np.exp(-(x**2) / (2.0 * scale**2)))
    return out


@dataclass(frozen=True)
class HelstromReport:
    helstrom: np.ndarray
    eigenvalues: np.ndarray
    numerical_rank: int
    projection_deficit: float
    basis_size: int

    def eigenvalue_row(self) -> list[float]:
        return [float(v) for v in np.sort(self.eigenvalues)[::-1]]


def imaging_helstrom(
    psf: PointSpreadFunction,
    config: SourceConfiguration,
    basis_size: int = 20,
    span_sigmas: float = 16.0,
    nodes: int = 8193,
) -> HelstromReport:
    """Helstrom information of the source mixture in a projected basis.

    The basis spans the displaced amplitudes and their derivatives (exact
    representation of the state and its parameter derivatives) padded with
    Hermite-Gaussian modes up to ``basis_size``, orthonormalized by a
    singular-value factorization; the projection deficit of every physical
    vector is checked against 1e-6.
    """
    pos = config.positions
    x = _measurement_grid(psf, pos, span_sigmas, nodes)
    w = np.full(len(x), x[1] - x[0])
    w[0] = w[-1] = (x[1] - x[0]) / 2.0
    sw = np.sqrt(w)

    states = [psf.amplitude_at(x - t) for t in pos]
    dstates = [-psf.derivative_at(x - t) for t in pos]
    pads = _hermite_modes(x - pos.mean(), np.sqrt(2.0) * psf.width, basis_size)

    # norm deficit: each displaced state must carry its continuum norm on the
    # grid, else the window or resolution cannot represent it
    deficit = 0.0
    for s in states:
        deficit = max(deficit, abs(float(np.sum(w * s**2)) - 1.0))

    raw = np.array(states + dstates + pads).T * sw[:, None]
    norms = np.linalg.norm(raw, axis=0)
    if np.any(norms == 0):
        raise ProjectionError("a basis vector vanished on the image grid")
    raw = raw / norms
    u_mat, svals, _ = np.linalg.svd(raw, full_matrices=False)
    basis = u_mat[:, svals > 1e-10 * svals[0]]

    for j in range(2 * config.p):
        coeff = basis.T @ raw[:, j]
        deficit = max(deficit, 1.0 - float(coeff @ coeff))
    if deficit > PROJECTION_DEFICIT_TOL:
        raise ProjectionError(
            f"projection deficit {deficit:.3e} exceeds {PROJECTION_DEFICIT_TOL:.0e}; "
            "widen the image window, refine it, or increase the basis size"
        )

    def coeffs(vals):
        return basis.T @ (vals * sw)

    cs = [coeffs(s) for s in states]
    dcs = [coeffs(d) for d in dstates]
    dim = basis.shape[1]
    rho = sum(np.outer(c, c) for c in cs) / config.p

    def rho_fn(_theta):
        return rho.astype(complex)

    def drho_fn(_theta):
        out = np.zeros((config.p, dim, dim), dtype=complex)
        for a in range(config.p):
            out[a] = (np.outer(dcs[a], cs[a]) + np.outer(cs[a], dcs[a])) / config.p
        return out

    family = DensityFamily(dim, config.p, rho_fn, drho_fn)
    k_matrix = helstrom_matrix(family, np.zeros(config.p))
    eigs = np.linalg.eigvalsh(k_matrix)
    rank = int(np.sum(eigs > RANK_RTOL * max(eigs.max(), 1e-300)))
    return HelstromReport(k_matrix, eigs, rank, deficit, basis_size)


def helstrom_along(
    psf: PointSpreadFunction,
    direction: np.ndarray,
    taus: np.ndarray,
    origin: np.ndarray | None = None,
    **kwargs,
) -> np.ndarray:
    """v K(theta(tau)) v along a submodel, via the projected family."""
    direction = np.asarray(direction, dtype=float).reshape(-1)
    p = len(direction)
    origin = np.zeros(p) if origin is None else np.asarray(origin, dtype=float)
    out = np.empty(len(taus))
    for i, tau in enumerate(np.atleast_1d(taus)):
        config = SourceConfiguration(origin + tau * direction)
        report = imaging_helstrom(psf, config, **kwargs)
        out[i] = float(direction @ report.helstrom @ direction)
    return out


def quantum_vs_classical(
    psf: PointSpreadFunction,
    config: SourceConfiguration,
    prior: ScalarField | None = None,
    n: float = 1.0,
    window: float | None = None,
    nodes: int = 257,
):
    """Classical and quantum optimal bounds for two-source separation.

    Builds the one-dimensional separation submodel theta(s) = centroid +
    (-s/2, +s/2) on a window around the configured separation, evaluates the
    direct-imaging information and the Helstrom information along it, and
    solves both field equations.  ``prior`` is a density on the separation
    window (a compact bump by default).  Returns the pair of reports
    (classical, quantum); the quantum bound never exceeds the classical one.
    """
    if config.p != 2:
        raise GridValueError("the separation submodel needs exactly two sources")
    separation = float(abs(config.positions[1] - config.positions[0]))
    centroid = float(config.positions.mean())
    if separation <= 0:
        raise GridValueError("separation must be positive")
    half = window if window is not None else 0.3 * separation
    lo, hi = separation - half, separation + half
    if lo <= 0:
        raise GridValueError("window reaches nonpositive separations")
    if prior is not None:
        grid = prior.grid
        if grid.dim != 1:
            raise GridValueError("separation prior must live on a 1-d grid")
        (lo, hi), = grid.bounds
        s_nodes = grid.axes[0]
    else:
        grid = ParameterGrid([(lo, hi)], [nodes])
        s_nodes = grid.axes[0]
        span = hi - lo
        bump = np.sin(np.pi * np.clip((s_nodes - lo) / span, 0.0, 1.0)) ** 4
        prior = ScalarField(grid, bump).normalized()
    d_theta = np.array([-0.5, 0.5])
    origin = np.array([centroid, centroid])

    f_vals = information_along(psf, d_theta, s_nodes, origin)
    k_vals = helstrom_along(psf, d_theta, s_nodes, origin)

    model = StatisticalModel(
        grid,
        MatrixField(grid, f_vals[:, None, None]),
        VectorField.constant(grid, [1.0], variance="covariant"),
        prior=prior,
        helstrom=MatrixField(grid, k_vals[:, None, None]),
    )
    classical = bmax(model, n=n)
    from .quantum import qmax

    quantum = qmax(model, n=n)
    return classical, quantum
