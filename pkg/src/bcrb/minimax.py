"""Minimax bounds via the wave picture.

Writing the prior as the square of a real wavefunction makes every term of
the bound quadratic in psi and its gradient.  For a constant direction field
and flat metric, maximizing the bound over the prior is a ground-state
problem for

    H = n * F(tau) - 4 d^2/dtau^2        (Dirichlet boundary),

where F(tau) is the information along the direction and the coefficient 4 is
fixed by the quadratic form.  The worst-case bound is then

    B_worst = A^2 / E_min,

with E_min the ground-state energy, attained by the prior rho = psi_0^2.
When the information vanishes like A |tau|^m near a point, E_min grows as
n^{2/(m+2)} and B_worst decays as n^{-2/(m+2)}; `rate_fit` measures that
exponent and reproduces the variational trial-function argument behind it.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, eigh_tridiagonal

from .errors import EigensolverError, GridValueError
from .geometry import StatisticalModel
from .grids import (
    MatrixField,
    ParameterGrid,
    ScalarField,
    VectorField,
    boundary_residual,
    integrate,
    metric_sqrt_det,
)

KINETIC_COEFFICIENT = 4.0
NORMALIZATION_ATOL = 1e-10
RESIDUAL_RTOL = 1e-8
BOX_CONVERGENCE_RTOL = 1e-3   # ground energy change between box doublings
DENSE_SOLVER_MAX_NODES = 2000


def thread_cap() -> int:
    """Worker cap for per-n eigensolves; BCRB_THREADS overrides the CPU count."""
    env = os.environ.get("BCRB_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass(frozen=True, eq=False)
class Wavefunction:
    """Real, unit-norm function on a grid; its square is a prior density."""

    grid: ParameterGrid
    values: np.ndarray
    metric: MatrixField | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridValueError(
                f"wavefunction shape {vals.shape} does not match grid {self.grid.shape}"
            )
        norm = integrate(ScalarField(self.grid, vals**2), self.metric)
        if abs(norm - 1.0) > NORMALIZATION_ATOL:
            raise GridValueError(f"wavefunction norm^2 is {norm!r}, expected 1")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def normalized(cls, grid, values, metric=None) -> "Wavefunction":
        values = np.asarray(values, dtype=float)
        norm = integrate(ScalarField(grid, values**2), metric)
        if norm <= 0:
            raise GridValueError("cannot normalize a null wavefunction")
        return cls(grid, values / np.sqrt(norm), metric)

    def density(self) -> ScalarField:
        return ScalarField(self.grid, self.values**2)


@dataclass(frozen=True, eq=False)
class SchrodingerProblem:
    """Constant-direction ground-state problem on an interval.

    ``information`` maps an array of submodel coordinates tau to the
    information along the direction; ``alignment`` is the (usually constant)
    overlap of direction and weight.  The direction itself only enters
    through the parametrization, so it is kept as metadata; a non-constant
    direction has no discretization here and is rejected by `assemble_H`.
    """

    domain: tuple[float, float]
    information: Callable
    alignment: float | Callable = 1.0
    direction: np.ndarray | Callable | None = None
    nodes: int = 2001

    def __post_init__(self):
        lo, hi = self.domain
        if not hi > lo:
            raise GridValueError(f"domain must be an interval, got {self.domain}")
        if self.nodes < 3:
            raise GridValueError("need at least 3 nodes")

    def grid(self, nodes: int | None = None, domain=None) -> ParameterGrid:
        return ParameterGrid([domain or self.domain], [nodes or self.nodes])


@dataclass(frozen=True, eq=False)
class DiscretizedHamiltonian:
    """Symmetric tridiagonal operator on interior nodes (Dirichlet)."""

    grid: ParameterGrid
    diagonal: np.ndarray
    off_diagonal: np.ndarray

    @property
    def matrix(self) -> sp.csr_matrix:
        return sp.diags(
            [self.off_diagonal, self.diagonal, self.off_diagonal], [-1, 0, 1]
        ).tocsr()

    def norm_inf(self) -> float:
        pad = np.concatenate([[0.0], np.abs(self.off_diagonal)])
        return float(np.max(np.abs(self.diagonal) + pad + np.append(
            np.abs(self.off_diagonal), 0.0)))

    def energy(self, psi_interior: np.ndarray, dx: float) -> float:
        """Quadrature energy <psi, H psi> for interior values of psi."""
        h = self.matrix @ psi_interior
        return float(dx * (psi_interior @ h))


def assemble_H(
    problem: SchrodingerProblem,
    n: float,
    nodes: int | None = None,
    domain: tuple[float, float] | None = None,
    kinetic_coefficient: float = KINETIC_COEFFICIENT,
) -> DiscretizedHamiltonian:
    """Discretize n*F(tau) - 4 (d/dtau)^2 with Dirichlet ends.

    ``kinetic_coefficient=0`` degenerates to the diagonal potential matrix
    (test mode).  A position-dependent direction field has no constant
    -direction reduction and is rejected.
    """
    if callable(problem.direction):
        raise GridValueError(
            "non-constant direction fields are not supported; only the "
            "constant-direction reduction to a 1-d ground-state problem exists"
        )
    if n < 0:
        raise GridValueError(f"n must be nonnegative, got {n}")
    grid = problem.grid(nodes, domain)
    tau = grid.axes[0]
    dx = grid.spacing[0]
    pot = n * np.asarray(problem.information(tau[1:-1]), dtype=float)
    if np.any(pot < -1e-12 * max(1.0, np.max(np.abs(pot)))):
        raise GridValueError("information potential must be nonnegative")
    k = kinetic_coefficient / dx**2
    diag = pot + 2.0 * k
    off = np.full(len(tau) - 3, -k)
    return DiscretizedHamiltonian(grid, diag, off)


def ground_state(ham: DiscretizedHamiltonian) -> tuple[float, Wavefunction]:
    """Smallest eigenpair; the eigenvector is quadrature-normalized.

    Uses the banded symmetric eigensolver (bisection plus inverse iteration,
    the shifted-inverse strategy specialized to tridiagonal form).
    """
    dx = ham.grid.spacing[0]
    try:
        vals, vecs = eigh_tridiagonal(
            ham.diagonal, ham.off_diagonal, select="i", select_range=(0, 0)
        )
    except Exception as exc:  # LinAlgError or convergence failures
        raise EigensolverError(f"tridiagonal eigensolver failed: {exc}") from exc
    e_min = float(vals[0])
    vec = vecs[:, 0]
    resid = np.linalg.norm(ham.matrix @ vec - e_min * vec)
    if resid > RESIDUAL_RTOL * max(ham.norm_inf(), 1.0):
        raise EigensolverError(
            f"eigenpair residual {resid:.3e} exceeds tolerance "
            f"({RESIDUAL_RTOL:.0e} * ||H||)"
        )
    full = np.zeros(ham.grid.shape)
    full[1:-1] = vec
    if full[np.argmax(np.abs(full))] < 0:
        full = -full
    return e_min, Wavefunction.normalized(ham.grid, full)


def converged_ground_energy(
    problem: SchrodingerProblem,
    n: float,
    rtol: float = BOX_CONVERGENCE_RTOL,
    max_doublings: int = 40,
) -> tuple[float, tuple[float, float]]:
    """Ground energy with the box doubled until it changes by < rtol."""
    lo, hi = problem.domain
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    e_prev = None
    for _ in range(max_doublings):
        dom = (center - half, center + half)
        e_cur = ground_state(assemble_H(problem, n, domain=dom))[0]
        if e_prev is not None and abs(e_cur - e_prev) <= rtol * abs(e_cur):
            return e_cur, dom
        e_prev = e_cur
        half *= 2.0
    raise EigensolverError(
        f"ground energy did not converge within {max_doublings} box doublings"
    )


def _constant_alignment(problem: SchrodingerProblem) -> float:
    if callable(problem.alignment):
        raise GridValueError(
            "this operation needs a constant alignment; "
            "use lambda_scan for position-dependent alignment"
        )
    return float(problem.alignment)


def bworst(
    problem: SchrodingerProblem,
    n: float,
    return_prior: bool = False,
):
    """sup over priors of the bound: alignment^2 / E_min on the given box."""
    a_val = _constant_alignment(problem)
    e_min, psi = ground_state(assemble_H(problem, n))
    if e_min <= 1e-12 * max(1.0, abs(n)):
        raise DegenerateGroundStateError(e_min)
    value = a_val**2 / e_min
    if return_prior:
        return value, psi.density().normalized()
    return value


class DegenerateGroundStateError(EigensolverError):
    def __init__(self, e_min: float):
        super().__init__(
            f"ground energy {e_min!r} is not positive; the worst-case bound diverges"
        )


COSINE_BUMP_NODES = 4001


def _trial_profile() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """cos^2 bump phi on [-1, 1], its square and derivative-square weights."""
    y = np.linspace(-1.0, 1.0, COSINE_BUMP_NODES)
    phi = np.cos(np.pi * y / 2.0) ** 2
    dphi = -(np.pi / 2.0) * np.sin(np.pi * y)
    w = np.full(len(y), y[1] - y[0])
    w[0] = w[-1] = (y[1] - y[0]) / 2.0
    # normalize phi to unit L2 so trial energies are Rayleigh quotients
    norm = np.sqrt(np.sum(w * phi**2))
    return y, phi / norm, dphi / norm


def _trial_integrals(problem: SchrodingerProblem, widths: np.ndarray):
    """(potential integral per width, kinetic constant) for the bump family.

    The potential integral int F(W y) phi(y)^2 dy does not depend on n, so
    rate fits evaluate it once per width and sweep n arithmetically.
    """
    y, phi, dphi = _trial_profile()
    w = np.full(len(y), y[1] - y[0])
    w[0] = w[-1] = (y[1] - y[0]) / 2.0
    kin = KINETIC_COEFFICIENT * float(np.sum(w * dphi**2))
    pots = np.array([
        float(np.sum(w * phi**2 * np.asarray(problem.information(width * y))))
        for width in widths
    ])
    return pots, kin


def trial_energy_curve(
    problem: SchrodingerProblem,
    n: float,
    widths: np.ndarray,
) -> np.ndarray:
    """<psi_W, H psi_W> for the scaled bump family psi_W = phi(tau/W)/sqrt(W)."""
    pots, kin = _trial_integrals(problem, widths)
    return n * pots + kin / np.asarray(widths) ** 2


@dataclass(frozen=True)
class RateFitResult:
    n_values: np.ndarray
    ground_energies: np.ndarray
    bounds: np.ndarray
    slope: float
    intercept: float
    trial_bounds: np.ndarray
    trial_widths: np.ndarray
    trial_energy_slope: float
    width_exponent: float

    def table(self) -> list[tuple[float, float, float]]:
        """(n, E_min, B_worst) rows for CSV export."""
        return [
            (float(n), float(e), float(b))
            for n, e, b in zip(self.n_values, self.ground_energies, self.bounds)
        ]


def rate_fit(
    problem: SchrodingerProblem,
    n_list: Sequence[float],
    width_grid: np.ndarray | None = None,
    workers: int | None = None,
) -> RateFitResult:
    """Fit the decay exponent of the worst-case bound against n.

    For each n the box is grown until the ground energy stabilizes, the
    bound alignment^2 / E_min is recorded, and the log-log slope against n
    is fitted.  The scaled cosine-bump trial family provides a matching
    variational upper bound on the energy together with the minimizing
    width, whose scaling in n is fitted as ``width_exponent``.
    """
    n_arr = np.asarray(sorted(float(x) for x in n_list))
    if len(n_arr) < 3 or n_arr[0] <= 0:
        raise GridValueError("need at least three positive n values")
    if n_arr[-1] / n_arr[0] < 999.0:
        raise GridValueError(
            f"n range {n_arr[0]:g}..{n_arr[-1]:g} spans less than three decades"
        )
    a_val = _constant_alignment(problem)

    half0 = 0.5 * (problem.domain[1] - problem.domain[0])
    if width_grid is None:
        width_grid = half0 * np.logspace(-5, 0, 161)

    # the potential is n-independent: memoize per box so the doubling
    # sequences of different n values share evaluations, and integrate the
    # trial potential once per width
    cache: dict[tuple, np.ndarray] = {}
    raw_information = problem.information

    def cached_information(tau):
        tau = np.asarray(tau)
        key = (float(tau[0]), float(tau[-1]), len(tau))
        if key not in cache:
            cache[key] = np.asarray(raw_information(tau), dtype=float)
        return cache[key]

    problem = SchrodingerProblem(
        problem.domain, cached_information, problem.alignment,
        problem.direction, problem.nodes,
    )
    trial_pots, trial_kin = _trial_integrals(problem, width_grid)

    def solve_one(n: float):
        e_min, dom = converged_ground_energy(problem, n)
        trial = n * trial_pots + trial_kin / width_grid**2
        k = int(np.argmin(trial))
        return e_min, trial[k], width_grid[k]

    max_workers = workers or min(len(n_arr), thread_cap())
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(solve_one, n_arr))
    else:
        rows = [solve_one(n) for n in n_arr]

    energies = np.array([r[0] for r in rows])
    trial_e = np.array([r[1] for r in rows])
    widths = np.array([r[2] for r in rows])
    bounds = a_val**2 / energies
    slope, intercept = np.polyfit(np.log(n_arr), np.log(bounds), 1)
    # the trial construction assumes the width cap is inactive ("large enough
    # n"); fit the scaling exponents only where the minimizer is interior
    cap = float(np.max(width_grid))
    free = widths < cap * (1.0 - 1e-9)
    if free.sum() >= 3:
        trial_slope = float(np.polyfit(np.log(n_arr[free]), np.log(trial_e[free]), 1)[0])
        width_exp = float(np.polyfit(np.log(n_arr[free]), np.log(widths[free]), 1)[0])
    else:
        trial_slope = float("nan")
        width_exp = float("nan")
    return RateFitResult(
        n_arr, energies, bounds, float(slope), float(intercept),
        a_val**2 / trial_e, widths, trial_slope, width_exp,
    )


@dataclass(frozen=True)
class LambdaScanResult:
    best_lambda: float
    best_bound: float
    eigenvalues: np.ndarray
    bounds: np.ndarray


def lambda_scan(
    problem: SchrodingerProblem,
    n: float,
    lambda_window: tuple[float, float] | None = None,
) -> LambdaScanResult:
    """Maximize the bound over priors when the alignment varies with position.

    The stationary priors solve the generalized problem H psi = lambda A psi;
    each normalized eigenpair yields the candidate <psi, A psi> / lambda and
    the scan returns the best.  The alignment must be strictly positive so
    the symmetric reduction by its square root is well posed.
    """
    grid = problem.grid()
    tau = grid.axes[0]
    dx = grid.spacing[0]
    if callable(problem.alignment):
        a_vals = np.asarray(problem.alignment(tau[1:-1]), dtype=float)
    else:
        a_vals = np.full(len(tau) - 2, float(problem.alignment))
    if np.any(a_vals <= 0):
        raise GridValueError(
            "alignment must be strictly positive for the generalized "
            "ground-state problem to be elliptic"
        )
    ham = assemble_H(problem, n)
    if len(a_vals) > DENSE_SOLVER_MAX_NODES:
        raise GridValueError(
            f"lambda_scan solves the full spectrum; use <= "
            f"{DENSE_SOLVER_MAX_NODES} interior nodes"
        )
    inv_sqrt = 1.0 / np.sqrt(a_vals)
    reduced = inv_sqrt[:, None] * ham.matrix.toarray() * inv_sqrt[None, :]
    reduced = (reduced + reduced.T) / 2.0
    lam, phi = eigh(reduced)
    psi = inv_sqrt[:, None] * phi
    norms = np.sqrt(dx * np.sum(psi**2, axis=0))
    psi = psi / norms
    numer = dx * np.sum(a_vals[:, None] * psi**2, axis=0)
    with np.errstate(divide="ignore"):
        cand = np.where(lam > 0, numer / lam, -np.inf)
    if lambda_window is not None:
        lo, hi = lambda_window
        cand = np.where((lam >= lo) & (lam <= hi), cand, -np.inf)
    k = int(np.argmax(cand))
    if not np.isfinite(cand[k]):
        raise EigensolverError("no admissible eigenvalue in the requested window")
    return LambdaScanResult(float(lam[k]), float(cand[k]), lam, cand)


def wave_functionals(
    psi: Wavefunction,
    v: VectorField,
    model: StatisticalModel,
) -> tuple[float, float, float]:
    """(<A>, <F>, <P>) computed from the wavefunction quadratic forms.

    <P> uses the first-order form D psi = (div v) psi + 2 v . grad psi, so
    only psi and its gradient are differentiated; agrees with the density
    -based functionals for rho = psi^2 up to discretization.
    """
    grid = model.grid
    grid.require_same(psi.grid, "wave_functionals")
    grid.require_same(v.grid, "wave_functionals field")
    if v.variance != "contravariant":
        raise GridValueError("wave_functionals needs a contravariant field")
    rho = psi.density()
    res = boundary_residual(rho, v)
    if res > 1e-8:
        raise GridValueError(
            f"psi^2 * v boundary residual {res:.3e}; enlarge the domain"
        )
    sqrtg = metric_sqrt_det(model.metric, grid)
    w = grid.trapezoid_weights * sqrtg

    a_val = float(np.sum(
        w * rho.values * np.einsum("...a,...a->...", v.values, model.weight.values)
    ))
    f_val = float(np.sum(
        w * rho.values * np.einsum("...a,...ab,...b->...", v.values,
                                   model.fisher.values, v.values)
    ))
    div_v = np.zeros(grid.shape)
    for ax in range(grid.dim):
        div_v += np.gradient(sqrtg * v.values[..., ax], grid.spacing[ax],
                             axis=ax, edge_order=2)
    div_v /= sqrtg
    grad_psi = np.stack(
        [np.gradient(psi.values, grid.spacing[ax], axis=ax, edge_order=2)
         for ax in range(grid.dim)],
        axis=-1,
    )
    d_psi = div_v * psi.values + 2.0 * np.einsum("...a,...a->...", v.values, grad_psi)
    p_val = float(np.sum(w * d_psi**2))
    return a_val, f_val, p_val
