"""The Gill-Levit family of Bayesian Cramer-Rao bounds.

Given a prior density rho, a contravariant field v, a covariant weight u and
an information matrix F, the three prior expectations

    alignment          <A> = int (v.u) rho eps
    information        <F> = int (v F v) rho eps
    prior_information  <P> = int [(1/rho) div(rho v)]^2 rho eps

combine into the lower bound  B = <A>^2 / (n <F> + <P>)  on the Bayesian
mean-square risk of any estimator, provided rho*v vanishes on the boundary.
The field v is free; this module also provides the two classical choices
(per-point natural field and the constant averaged-information field) and
the vector-parameter generalization with a positive-definite weight matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    BoundaryConditionError,
    DegenerateBoundError,
    GridValueError,
    SingularInformationError,
)
from .geometry import StatisticalModel
from .grids import (
    BOUNDARY_RESIDUAL_TOL,
    DEFAULT_RHO_FLOOR,
    MatrixField,
    ParameterGrid,
    ScalarField,
    VectorField,
    boundary_residual,
    gradient,
    metric_sqrt_det,
    weighted_divergence,
)

NONNEGATIVE_ATOL = 1e-12

CSV_HEADER = ["n", "alignment", "information", "prior_information", "bound",
              "v_choice", "boundary_residual"]


@dataclass(frozen=True, eq=False)
class BoundReport:
    """One evaluated bound: the three functionals, n, and B.

    The stored ``bound`` always equals ``alignment^2 / (n*information +
    prior_information)`` exactly; ``diagnostics`` carries the boundary
    residual and a grid descriptor, and optionally solver details.
    """

    alignment: float
    information: float
    prior_information: float
    n: float
    bound: float
    v_choice: str
    diagnostics: dict = dc_field(default_factory=dict)
    attaining_v: VectorField | None = None

    def __post_init__(self):
        if self.information < -NONNEGATIVE_ATOL or self.prior_information < -NONNEGATIVE_ATOL:
            raise GridValueError("information and prior_information must be nonnegative")
        denom = self.n * self.information + self.prior_information
        expected = self.alignment**2 / denom if denom > 0 else 0.0
        if abs(self.bound - expected) > 1e-12 * max(abs(expected), 1e-300):
            raise GridValueError("stored bound is inconsistent with its functionals")

    @classmethod
    def assemble(cls, alignment, information, prior_information, n, v_choice,
                 diagnostics=None, attaining_v=None, allow_zero=False) -> "BoundReport":
        information = max(float(information), 0.0)
        prior_information = max(float(prior_information), 0.0)
        denom = n * information + prior_information
        if denom <= 0:
            # 0/0 extends continuously to 0 when the numerator vanishes too
            if allow_zero and alignment == 0.0:
                return cls(0.0, information, prior_information, float(n), 0.0,
                           v_choice, diagnostics or {}, attaining_v)
            raise DegenerateBoundError(
                "degenerate direction: no information and no prior curvature"
            )
        return cls(
            float(alignment), information, prior_information, float(n),
            float(alignment) ** 2 / denom, v_choice, diagnostics or {}, attaining_v,
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "alignment": self.alignment,
            "information": self.information,
            "prior_information": self.prior_information,
            "bound": self.bound,
            "v_choice": self.v_choice,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv_row(self) -> list[str]:
        res = self.diagnostics.get("boundary_residual", float("nan"))
        return (
            ["%.12e" % x for x in
             (self.n, self.alignment, self.information, self.prior_information, self.bound)]
            + [self.v_choice, "%.12e" % res]
        )


@dataclass(frozen=True, eq=False)
class VectoralWeight:
    """Vector parameter of interest: weight matrix, per-component fields.

    ``gamma`` holds the positive-definite q x q risk-weight matrix per node;
    ``weights[j]`` is the covariant gradient field of the j-th component of
    the parameter of interest and ``fields[j]`` the corresponding
    contravariant free field.
    """

    grid: ParameterGrid
    gamma: np.ndarray
    weights: tuple[VectorField, ...]
    fields: tuple[VectorField, ...]

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float)
        q = len(self.weights)
        if q < 1 or q > self.grid.dim:
            raise GridValueError(f"need 1 <= q <= p, got q={q}, p={self.grid.dim}")
        if gamma.shape == (q, q):
            gamma = np.broadcast_to(gamma, self.grid.shape + (q, q)).copy()
        if gamma.shape != self.grid.shape + (q, q):
            raise GridValueError(f"gamma has shape {gamma.shape}, expected (*grid, {q}, {q})")
        if len(self.fields) != q:
            raise GridValueError("need one field per weight component")
        ev = np.linalg.eigvalsh((gamma + np.swapaxes(gamma, -1, -2)) / 2)
        if np.any(ev[..., 0] <= 0):
            raise GridValueError("weight matrix gamma must be positive definite at every node")
        for u in self.weights:
            self.grid.require_same(u.grid, "vectoral weight")
            if u.variance != "covariant":
                raise GridValueError("weight components must be covariant")
        for v in self.fields:
            self.grid.require_same(v.grid, "vectoral field")
            if v.variance != "contravariant":
                raise GridValueError("free fields must be contravariant")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)

    @property
    def q(self) -> int:
        return len(self.weights)

    def gamma_inverse(self) -> np.ndarray:
        return np.linalg.inv(self.gamma)


def _check_boundary(prior: ScalarField, v: VectorField) -> float:
    res = boundary_residual(prior, v)
    if res > BOUNDARY_RESIDUAL_TOL:
        raise BoundaryConditionError(
            f"rho*v boundary residual {res:.3e} exceeds {BOUNDARY_RESIDUAL_TOL:.0e}; "
            "enlarge the domain so the prior-weighted field vanishes at the edges"
        )
    return res


def functionals(
    model: StatisticalModel,
    prior: ScalarField,
    v: VectorField,
    metric: MatrixField | None = None,
    rho_floor: float = DEFAULT_RHO_FLOOR,
) -> tuple[float, float, float]:
    """The three prior expectations (<A>, <F>, <P>) for a given field v."""
    grid = model.grid
    grid.require_same(prior.grid, "functionals prior")
    grid.require_same(v.grid, "functionals field")
    if metric is None:
        metric = model.metric
    _check_boundary(prior, v)

    w = grid.trapezoid_weights * metric_sqrt_det(metric, grid) * prior.values
    a_val = float(np.sum(w * np.einsum("...a,...a->...", v.values, model.weight.values)))
    f_val = float(np.sum(w * np.einsum("...a,...ab,...b->...", v.values,
                                       model.fisher.values, v.values)))
    div = weighted_divergence(prior, v, metric, rho_floor)
    p_val = float(np.sum(w * div.values**2))
    return a_val, f_val, p_val


def gill_levit_bound(
    model: StatisticalModel,
    prior: ScalarField,
    v: VectorField,
    n: float,
    v_choice: str = "custom",
    rho_floor: float = DEFAULT_RHO_FLOOR,
) -> BoundReport:
    """Evaluate B = <A>^2 / (n <F> + <P>) for the supplied field."""
    if n < 0:
        raise GridValueError(f"n must be nonnegative, got {n}")
    a_val, f_val, p_val = functionals(model, prior, v, rho_floor=rho_floor)
    res = boundary_residual(prior, v)
    return BoundReport.assemble(
        a_val, f_val, p_val, n, v_choice,
        {"boundary_residual": res, "grid": model.grid.describe()},
    )


def natural_v(model: StatisticalModel, rtol: float = 1e-10) -> VectorField:
    """Per-point field v^a = (F^{-1})^{ab} u_b (undefined where F is singular).

    With this choice the pointwise alignment and information both equal the
    local bound u F^{-1} u, which is checked after the inversion.
    """
    f = model.fisher.values
    ev = np.linalg.eigvalsh(f)
    trace = np.trace(f, axis1=-2, axis2=-1)
    singular = ev[..., 0] <= rtol * np.maximum(trace, 1e-300)
    if np.any(singular):
        bad = np.argwhere(singular)[0]
        raise SingularInformationError(
            f"information matrix is rank deficient at node {tuple(bad)}; the weight "
            "vector must lie in its range for the per-point natural field to exist"
        )
    v_vals = np.linalg.solve(f, model.weight.values[..., None])[..., 0]
    align = np.einsum("...a,...a->...", v_vals, model.weight.values)
    info = np.einsum("...a,...ab,...b->...", v_vals, f, v_vals)
    if not np.allclose(align, info, rtol=1e-8, atol=1e-12):
        raise GridValueError("pointwise alignment != information after inversion")
    return VectorField(model.grid, v_vals, variance="contravariant")


def van_trees_v(
    model: StatisticalModel,
    prior: ScalarField,
    n: float,
    rho_floor: float = DEFAULT_RHO_FLOOR,
) -> tuple[VectorField, BoundReport]:
    """Constant field from averaged information plus prior curvature.

    v = [(n <F> + <G>)^{-1}] <u> with G_ab = (d_a log pi)(d_b log pi); the
    resulting bound is <u> (n<F> + <G>)^{-1} <u>.  This v is generally not
    contravariant, so the bound can change under reparametrization; the
    report flags that.
    """
    grid = model.grid
    grid.require_same(prior.grid, "van_trees prior")
    sqrtg = metric_sqrt_det(model.metric, grid)
    w = grid.trapezoid_weights * sqrtg * prior.values

    pi_vals = prior.values * sqrtg
    if np.any(pi_vals <= 0):
        raise GridValueError(
            "van_trees_v needs a strictly positive prior on the grid (log derivative)"
        )
    log_pi = ScalarField(grid, np.log(pi_vals))
    p = grid.dim
    wf = w.ravel()
    dlog = gradient(log_pi).values.reshape(-1, p)
    g_avg = np.einsum("n,na,nb->ab", wf, dlog, dlog)
    f_avg = np.einsum("n,nab->ab", wf, model.fisher.values.reshape(-1, p, p))
    u_avg = np.einsum("n,na->a", wf, model.weight.values.reshape(-1, p))

    mat = n * f_avg + g_avg
    try:
        v_const = np.linalg.solve(mat, u_avg)
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError(
            f"averaged matrix n<F> + <G> is singular: {exc}"
        ) from exc

    v_field = VectorField.constant(grid, v_const)
    res = _check_boundary(prior, v_field)
    align = float(v_const @ u_avg)
    info = float(v_const @ f_avg @ v_const)
    p_val = float(v_const @ g_avg @ v_const)
    report = BoundReport.assemble(
        align, info, p_val, n, "van_trees (usually not contravariant)",
        {"boundary_residual": res, "grid": grid.describe()},
        allow_zero=True,
    )
    return v_field, report


def vectoral_functionals(
    model: StatisticalModel,
    prior: ScalarField,
    weights: VectoralWeight,
    rho_floor: float = DEFAULT_RHO_FLOOR,
) -> tuple[float, float, float]:
    """(<A>, <F>, <P>) for a vector parameter of interest."""
    grid = model.grid
    grid.require_same(prior.grid, "vectoral prior")
    grid.require_same(weights.grid, "vectoral weights")
    for v in weights.fields:
        _check_boundary(prior, v)

    gamma_inv = weights.gamma_inverse()
    w = grid.trapezoid_weights * metric_sqrt_det(model.metric, grid) * prior.values

    a_val = 0.0
    for u, v in zip(weights.weights, weights.fields):
        a_val += float(np.sum(w * np.einsum("...a,...a->...", v.values, u.values)))

    q = weights.q
    divs = [
        weighted_divergence(prior, v, model.metric, rho_floor).values
        for v in weights.fields
    ]
    f_val = 0.0
    p_val = 0.0
    for j in range(q):
        for k in range(q):
            gjk = gamma_inv[..., j, k]
            f_val += float(np.sum(w * gjk * np.einsum(
                "...a,...ab,...b->...",
                weights.fields[j].values, model.fisher.values, weights.fields[k].values,
            )))
            p_val += float(np.sum(w * gjk * divs[j] * divs[k]))
    return a_val, f_val, p_val


def vectoral_bound(
    model: StatisticalModel,
    prior: ScalarField,
    weights: VectoralWeight,
    n: float,
    rho_floor: float = DEFAULT_RHO_FLOOR,
) -> BoundReport:
    """Gill-Levit bound for a vector parameter of interest."""
    a_val, f_val, p_val = vectoral_functionals(model, prior, weights, rho_floor)
    res = max(boundary_residual(prior, v) for v in weights.fields)
    return BoundReport.assemble(
        a_val, f_val, p_val, n, f"vectoral(q={weights.q})",
        {"boundary_residual": res, "grid": model.grid.describe()},
    )
