"""The exact optimal bound in the Gill-Levit family.

The bound B = <A>^2 / (n<F> + <P>) is a Rayleigh quotient in the free field
v, maximized by solving the second-order field equation

    n F_ab v^b - d_a[ (1/rho) div(rho v) ] = u_a,      v = 0 on the boundary,

after which  B_max = <u, v>_rho  with the rho-weighted inner product
<v, u>_rho = int (v.u) rho eps.  Discretely the equation becomes a symmetric
positive-semidefinite sparse system: the prior term is assembled as
D^T W D (exactly self-adjoint in the discrete inner product), so the
variational structure, and with it B <= B_max for every admissible v, is
preserved on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bounds import BoundReport, VectoralWeight, _check_boundary
from .errors import GridValueError, OperatorRangeError
from .geometry import StatisticalModel
from .grids import (
    DEFAULT_RHO_FLOOR,
    ParameterGrid,
    ScalarField,
    VectorField,
    boundary_residual,
    divergence_matrix,
    gradient,
    metric_sqrt_det,
    weighted_divergence,
)

SOLVE_RTOL = 1e-8          # target relative residual of the sparse solve
RANGE_RTOL = 1e-6          # above this residual the RHS is declared out of range
DIRECT_SOLVE_MAX_DIM = 2   # direct factorization for p <= 2, CG beyond


@dataclass(frozen=True, eq=False)
class OperatorL:
    """Discretized field-equation operator with Dirichlet (v = 0) boundary.

    ``matrix`` is the symmetric PSD system on interior nodes: for flattened
    interior fields v, w (component blocks concatenated),
    ``w @ matrix @ v`` equals the discrete inner product <w, Lv>_rho, and
    ``weight`` is the diagonal of quadrature weights so that
    ``w @ weight @ v`` is <w, v>_rho.  ``apply`` evaluates the operator on a
    full-grid field (boundary values included) with the composition of
    divergence and gradient stencils, for pointwise diagnostics.
    """

    grid: ParameterGrid
    n: float
    rho: ScalarField
    model: StatisticalModel
    matrix: sp.csr_matrix
    weight: np.ndarray
    interior: np.ndarray  # flat indices of interior nodes
    rho_floor: float

    def inner(self, v: VectorField, u: VectorField) -> float:
        """<v, u>_rho over the full grid."""
        w = (
            self.grid.trapezoid_weights
            * metric_sqrt_det(self.model.metric, self.grid)
            * self.rho.values
        )
        return float(np.sum(w * np.einsum("...a,...a->...", v.values, u.values)))

    def apply(self, v: VectorField) -> VectorField:
        """(Lv)_a = n F_ab v^b - d_a[(1/rho) div(rho v)] on the full grid."""
        self.grid.require_same(v.grid, "OperatorL.apply")
        div = weighted_divergence(v=v, rho=self.rho, metric=self.model.metric,
                                  rho_floor=self.rho_floor)
        grad_div = gradient(div).values
        fv = np.einsum("...ab,...b->...a", self.model.fisher.values, v.values)
        return VectorField(self.grid, self.n * fv - grad_div, variance="covariant")

    def self_adjointness_defect(self, trials: int = 8, seed: int = 0) -> float:
        """max |<w,Lv> - <Lw,v>| over random interior fields, scaled by ||L||."""
        rng = np.random.default_rng(seed)
        dim = self.matrix.shape[0]
        norm = spla.norm(self.matrix, np.inf)
        worst = 0.0
        for _ in range(trials):
            v = rng.normal(size=dim)
            w = rng.normal(size=dim)
            worst = max(worst, abs(w @ (self.matrix @ v) - (self.matrix @ w) @ v))
        return worst / max(norm, 1e-300)

    def quadratic_form(self, flat_interior: np.ndarray) -> float:
        return float(flat_interior @ (self.matrix @ flat_interior))


def _interior_flat_indices(grid: ParameterGrid) -> np.ndarray:
    return np.flatnonzero(~grid.boundary_mask.ravel())


def _component_blocks(flat_idx: np.ndarray, num_nodes: int, p: int) -> np.ndarray:
    """Indices of the interior dofs inside a (num_nodes * p) block vector."""
    return np.concatenate([flat_idx + a * num_nodes for a in range(p)])


def assemble_L(
    model: StatisticalModel,
    prior: ScalarField,
    n: float,
    rho_floor: float = DEFAULT_RHO_FLOOR,
) -> OperatorL:
    """Build the discrete operator n*F + (prior-curvature term)."""
    grid = model.grid
    grid.require_same(prior.grid, "assemble_L prior")
    if n < 0:
        raise GridValueError(f"n must be nonnegative, got {n}")
    p = grid.dim
    num = grid.num_nodes

    sqrtg = metric_sqrt_det(model.metric, grid)
    w_scal = (grid.trapezoid_weights * sqrtg * prior.values).ravel()

    div = divergence_matrix(grid, prior, model.metric, rho_floor)  # (num, num*p)
    interior = _interior_flat_indices(grid)
    cols = _component_blocks(interior, num, p)
    div_int = sp.csr_matrix(div[:, cols])
    prior_term = (div_int.T @ sp.diags(w_scal) @ div_int).tocsr()

    # information term: block-diagonal per node, weighted by the quadrature
    f_flat = model.fisher.values.reshape(num, p, p)
    rows, cols_f, vals = [], [], []
    n_int = len(interior)
    for a in range(p):
        for b in range(p):
            rows.append(np.arange(n_int) + a * n_int)
            cols_f.append(np.arange(n_int) + b * n_int)
            vals.append(w_scal[interior] * f_flat[interior, a, b])
    fisher_term = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols_f))),
        shape=(n_int * p, n_int * p),
    )

    matrix = (n * fisher_term + prior_term).tocsr()
    weight = np.concatenate([w_scal[interior]] * p)
    return OperatorL(grid, float(n), prior, model, matrix, weight, interior, rho_floor)


def _flat_interior(op: OperatorL, field_values: np.ndarray) -> np.ndarray:
    num = op.grid.num_nodes
    p = op.grid.dim
    flat = field_values.reshape(num, p)
    return np.concatenate([flat[op.interior, a] for a in range(p)])


def _unflatten(op: OperatorL, flat: np.ndarray) -> np.ndarray:
    num = op.grid.num_nodes
    p = op.grid.dim
    n_int = len(op.interior)
    out = np.zeros((num, p))
    for a in range(p):
        out[op.interior, a] = flat[a * n_int:(a + 1) * n_int]
    return out.reshape(op.grid.shape + (p,))


def _solve_system(matrix: sp.csr_matrix, rhs: np.ndarray, p: int) -> tuple[np.ndarray, dict]:
    """Direct factorization for small-dimension grids, CG otherwise."""
    if p <= DIRECT_SOLVE_MAX_DIM:
        sol = spla.spsolve(sp.csc_matrix(matrix), rhs)
        info = {"solver": "direct"}
    else:
        diag = matrix.diagonal()
        diag[diag <= 0] = 1.0
        precond = sp.diags(1.0 / diag)
        sol, flag = spla.cg(matrix, rhs, rtol=SOLVE_RTOL, maxiter=20 * matrix.shape[0],
                            M=precond)
        info = {"solver": "cg", "flag": int(flag)}
    rhs_norm = np.linalg.norm(rhs)
    resid = np.linalg.norm(matrix @ sol - rhs) / max(rhs_norm, 1e-300)
    info["relative_residual"] = float(resid)
    return sol, info


def solve_least_favorable(op: OperatorL, u: VectorField) -> VectorField:
    """Solve Lv = u; the solution maximizes the bound over all fields.

    Raises :class:`OperatorRangeError` when the residual shows u lies outside
    the numerical range of the operator (no least-favorable field exists).
    """
    op.grid.require_same(u.grid, "solve_least_favorable")
    rhs = op.weight * _flat_interior(op, u.values)
    if not np.any(rhs):
        return VectorField(op.grid, np.zeros(op.grid.shape + (op.grid.dim,)))
    sol, info = _solve_system(op.matrix, rhs, op.grid.dim)
    if not np.all(np.isfinite(sol)) or info["relative_residual"] > RANGE_RTOL:
        raise OperatorRangeError(
            "weight field is outside the numerical range of the operator "
            f"(relative residual {info['relative_residual']:.3e}); "
            "no least-favorable field exists for this problem"
        )
    return VectorField(op.grid, _unflatten(op, sol), variance="contravariant")


def bmax(
    model: StatisticalModel,
    prior: ScalarField | None = None,
    n: float = 1.0,
    rho_floor: float = DEFAULT_RHO_FLOOR,
    v_choice: str = "least_favorable",
) -> BoundReport:
    """The optimal bound <u, L^{-1} u>_rho with the attaining field."""
    if prior is None:
        prior = model.prior
    if prior is None:
        raise GridValueError("bmax needs a prior density")
    op = assemble_L(model, prior, n, rho_floor)
    v = solve_least_favorable(op, model.weight)
    flat_v = _flat_interior(op, v.values)
    rhs = op.weight * _flat_interior(op, model.weight.values)

    align = float(rhs @ flat_v)
    # split the energy so the report carries the two functionals separately
    p = model.grid.dim
    num = model.grid.num_nodes
    f_flat = model.fisher.values.reshape(num, p, p)
    w_scal = (
        model.grid.trapezoid_weights
        * metric_sqrt_det(model.metric, model.grid)
        * prior.values
    ).ravel()
    v_nodes = v.values.reshape(num, p)
    info_val = float(np.einsum(
        "n,na,nab,nb->", w_scal[op.interior], v_nodes[op.interior],
        f_flat[op.interior], v_nodes[op.interior],
    ))
    prior_val = max(float(op.quadratic_form(flat_v)) - op.n * info_val, 0.0)
    _check_boundary(prior, v)
    return BoundReport.assemble(
        align, info_val, prior_val, n, v_choice,
        {
            "boundary_residual": boundary_residual(prior, v),
            "grid": model.grid.describe(),
        },
        attaining_v=v,
        allow_zero=True,
    )


def gaussian_closed_form(fisher, prior_curvature, weight, n: float) -> float:
    """Closed form u^T (nF + G)^{-1} u for constant F, u and Gaussian prior.

    ``prior_curvature`` is the inverse covariance of the Gaussian prior.
    Serves as the oracle for `bmax` on Gaussian scenarios; requires nF + G
    positive definite.
    """
    f = np.atleast_2d(np.asarray(fisher, dtype=float))
    g = np.atleast_2d(np.asarray(prior_curvature, dtype=float))
    u = np.atleast_1d(np.asarray(weight, dtype=float))
    mat = n * f + g
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise GridValueError(f"nF + G is not positive definite: {exc}") from exc
    half = np.linalg.solve(chol, u)
    return float(half @ half)


def vectoral_bmax(
    model: StatisticalModel,
    prior: ScalarField,
    weights: VectoralWeight,
    n: float,
    rho_floor: float = DEFAULT_RHO_FLOOR,
) -> BoundReport:
    """Optimal bound for a vector parameter of interest (block sparse solve).

    The block operator couples the q component fields through the inverse of
    the weight matrix:
    (Lv)^j_a = n g^{jk} F_ab v_k^b - d_a[(g^{jk}/rho) div(rho v_k)].
    """
    grid = model.grid
    grid.require_same(prior.grid, "vectoral_bmax prior")
    grid.require_same(weights.grid, "vectoral_bmax weights")
    p = grid.dim
    q = weights.q
    num = grid.num_nodes

    sqrtg = metric_sqrt_det(model.metric, grid)
    w_scal = (grid.trapezoid_weights * sqrtg * prior.values).ravel()
    gamma_inv = weights.gamma_inverse().reshape(num, q, q)

    div = divergence_matrix(grid, prior, model.metric, rho_floor)
    interior = _interior_flat_indices(grid)
    cols = _component_blocks(interior, num, p)
    div_int = sp.csr_matrix(div[:, cols])
    n_int = len(interior)
    blk = n_int * p

    f_flat = model.fisher.values.reshape(num, p, p)
    rows_f, cols_f, vals_f = [], [], []
    for a in range(p):
        for b in range(p):
            rows_f.append(np.arange(n_int) + a * n_int)
            cols_f.append(np.arange(n_int) + b * n_int)
            vals_f.append(w_scal[interior] * f_flat[interior, a, b])
    fisher_int = sp.csr_matrix(
        (np.concatenate(vals_f), (np.concatenate(rows_f), np.concatenate(cols_f))),
        shape=(blk, blk),
    )

    blocks = []
    for j in range(q):
        row = []
        for k in range(q):
            gjk = gamma_inv[interior, j, k]
            gjk_full = gamma_inv[:, j, k]
            prior_jk = div_int.T @ sp.diags(w_scal * gjk_full) @ div_int
            fish_jk = sp.diags(np.concatenate([gjk] * p)) @ fisher_int
            row.append((n * fish_jk + prior_jk).tocsr())
        blocks.append(row)
    matrix = sp.bmat(blocks, format="csr")
    matrix = ((matrix + matrix.T) / 2.0).tocsr()

    def flat_int(field: VectorField) -> np.ndarray:
        vals = field.values.reshape(num, p)
        return np.concatenate([vals[interior, a] for a in range(p)])

    rhs = np.concatenate([
        np.concatenate([w_scal[interior]] * p) * flat_int(u) for u in weights.weights
    ])
    sol, info = _solve_system(matrix, rhs, p)
    if not np.all(np.isfinite(sol)) or info["relative_residual"] > RANGE_RTOL:
        raise OperatorRangeError(
            "weight fields are outside the numerical range of the block operator "
            f"(relative residual {info['relative_residual']:.3e})"
        )
    align = float(rhs @ sol)

    v_fields = []
    for j in range(q):
        out = np.zeros((num, p))
        for a in range(p):
            seg = sol[j * blk + a * n_int: j * blk + (a + 1) * n_int]
            out[interior, a] = seg
        v_fields.append(VectorField(grid, out.reshape(grid.shape + (p,))))

    info_val = 0.0
    for j in range(q):
        for k in range(q):
            vj = v_fields[j].values.reshape(num, p)
            vk = v_fields[k].values.reshape(num, p)
            info_val += float(np.einsum(
                "n,n,na,nab,nb->", w_scal[interior], gamma_inv[interior, j, k],
                vj[interior], f_flat[interior], vk[interior],
            ))
    prior_val = max(float(sol @ (matrix @ sol)) - n * info_val, 0.0)
    return BoundReport.assemble(
        align, info_val, prior_val, n, f"vectoral_least_favorable(q={q})",
        {"relative_residual": info["relative_residual"], "grid": grid.describe()},
        allow_zero=True,
    )
