"""Statistical models on grids and diffeomorphic reparametrization.

A model bundles the pointwise information matrix F_ab, the covariant weight
field u_a = d(beta)/d(theta^a), an optional metric, and an optional prior
density rho (a scalar under reparametrization, normalized against the metric
volume element).  Reparametrization follows the tensor laws

    u = J u~,   F = J F~ J^T,   g = J g~ J^T,   rho~(t~) = rho(theta(t~)),

with J[a, b] = d theta~^b / d theta^a, so pulling a model to new coordinates
multiplies by the inverse Jacobian.  Contravariant vector fields transform as
v~ = J^T v; bounds computed with fields transformed this way are
parametrization independent, which `invariance_report` verifies numerically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import GridValueError
from .grids import (
    MatrixField,
    ParameterGrid,
    ScalarField,
    VectorField,
    integrate,
)

PSD_RTOL = 1e-10
PRIOR_NORMALIZATION_ATOL = 1e-8
ROUND_TRIP_ATOL = 1e-8
JACOBIAN_FD_STEP = 1e-6  # relative to axis length


@dataclass(frozen=True, eq=False)
class StatisticalModel:
    """Pointwise information, weight, metric, and prior on a grid.

    Optional callables (`fisher_fn`, `weight_fn`, `metric_fn`, `prior_fn`,
    `helstrom_fn`) evaluate the same quantities at arbitrary points; when
    present they are used for reparametrization instead of interpolation.
    All callables are batched: they map ``(..., p)`` coordinate arrays to
    arrays with the matching trailing shape.
    """

    grid: ParameterGrid
    fisher: MatrixField
    weight: VectorField
    metric: MatrixField | None = None
    prior: ScalarField | None = None
    helstrom: MatrixField | None = None
    fisher_fn: Callable | None = None
    weight_fn: Callable | None = None
    metric_fn: Callable | None = None
    prior_fn: Callable | None = None
    helstrom_fn: Callable | None = None

    def __post_init__(self):
        self.grid.require_same(self.fisher.grid, "model fisher")
        self.grid.require_same(self.weight.grid, "model weight")
        if self.weight.variance != "covariant":
            raise GridValueError("model weight field must be covariant")
        ev = self.fisher.eigenvalues()
        trace = np.trace(self.fisher.values, axis1=-2, axis2=-1)
        scale = np.maximum(np.abs(trace), 1e-300)
        if np.any(ev[..., 0] < -PSD_RTOL * scale):
            bad = np.argwhere(ev[..., 0] < -PSD_RTOL * scale)[0]
            raise GridValueError(
                f"information matrix not positive semidefinite at node {tuple(bad)}"
            )
        if self.metric is not None:
            self.grid.require_same(self.metric.grid, "model metric")
        if self.helstrom is not None:
            self.grid.require_same(self.helstrom.grid, "model helstrom")
        if self.prior is not None:
            self.grid.require_same(self.prior.grid, "model prior")
            total = integrate(self.prior, self.metric)
            if abs(total - 1.0) > PRIOR_NORMALIZATION_ATOL:
                raise GridValueError(
                    f"prior integrates to {total!r}, expected 1 within "
                    f"{PRIOR_NORMALIZATION_ATOL:.0e}; normalize it first"
                )

    @classmethod
    def from_callables(
        cls,
        grid: ParameterGrid,
        fisher_fn: Callable,
        weight_fn: Callable,
        metric_fn: Callable | None = None,
        prior_fn: Callable | None = None,
        helstrom_fn: Callable | None = None,
        normalize_prior: bool = True,
    ) -> "StatisticalModel":
        fisher = MatrixField.from_callable(grid, fisher_fn)
        weight = VectorField.from_callable(grid, weight_fn, variance="covariant")
        metric = MatrixField.from_callable(grid, metric_fn) if metric_fn else None
        helstrom = MatrixField.from_callable(grid, helstrom_fn) if helstrom_fn else None
        prior = None
        if prior_fn is not None:
            prior = ScalarField.from_callable(grid, prior_fn)
            if normalize_prior:
                norm = integrate(prior, metric)
                prior = ScalarField(grid, prior.values / norm)
                scaled_prior_fn = prior_fn
                prior_fn = lambda c, _f=scaled_prior_fn, _z=norm: np.asarray(_f(c)) / _z
        return cls(
            grid,
            fisher,
            weight,
            metric,
            prior,
            helstrom,
            fisher_fn,
            weight_fn,
            metric_fn,
            prior_fn,
            helstrom_fn,
        )

    def with_prior(self, prior: ScalarField, prior_fn: Callable | None = None):
        return StatisticalModel(
            self.grid, self.fisher, self.weight, self.metric, prior, self.helstrom,
            self.fisher_fn, self.weight_fn, self.metric_fn, prior_fn, self.helstrom_fn,
        )

    def with_information(self, fisher: MatrixField, fisher_fn: Callable | None = None):
        """Same model with the information matrix replaced (e.g. by a quantum one)."""
        return StatisticalModel(
            self.grid, fisher, self.weight, self.metric, self.prior, self.helstrom,
            fisher_fn, self.weight_fn, self.metric_fn, self.prior_fn, self.helstrom_fn,
        )


@dataclass(frozen=True, eq=False)
class Diffeomorphism:
    """Bijective differentiable coordinate change with explicit inverse.

    ``forward`` and ``inverse`` are batched maps ``(..., p) -> (..., p)``;
    ``jacobian`` optionally returns ``J[a, b] = d theta~^b / d theta^a`` as a
    ``(..., p, p)`` array.  Without it, a central finite-difference fallback
    with step ``1e-6 * axis_length`` is used (lower accuracy).
    """

    forward: Callable
    inverse: Callable
    jacobian: Callable | None = None
    name: str = "custom"

    def jacobian_at(self, theta: np.ndarray, axis_lengths: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(theta), dtype=float)
        p = theta.shape[-1]
        out = np.empty(theta.shape + (p,))
        for a in range(p):
            step = JACOBIAN_FD_STEP * float(axis_lengths[a])
            hi = theta.copy()
            lo = theta.copy()
            hi[..., a] += step
            lo[..., a] -= step
            out[..., a, :] = (
                np.asarray(self.forward(hi)) - np.asarray(self.forward(lo))
            ) / (2 * step)
        return out

    def check_round_trip(self, grid: ParameterGrid) -> float:
        """Max |inverse(forward(theta)) - theta| over grid nodes."""
        coords = grid.coordinates
        back = np.asarray(self.inverse(np.asarray(self.forward(coords))))
        return float(np.max(np.abs(back - coords)))


# ---------------------------------------------------------------------------
# built-in map catalog (all separable per axis, boxes map to boxes)

def identity_map() -> Diffeomorphism:
    eye = lambda c: np.broadcast_to(
        np.eye(np.asarray(c).shape[-1]), np.asarray(c).shape + (np.asarray(c).shape[-1],)
    )
    return Diffeomorphism(lambda c: np.asarray(c, dtype=float),
                          lambda c: np.asarray(c, dtype=float), eye, "identity")


def affine_map(scale, offset) -> Diffeomorphism:
    scale = np.atleast_1d(np.asarray(scale, dtype=float))
    offset = np.atleast_1d(np.asarray(offset, dtype=float))
    if np.any(scale == 0):
        raise GridValueError("affine map needs nonzero scale")

    def jac(c):
        c = np.asarray(c)
        return np.broadcast_to(np.diag(scale), c.shape + (c.shape[-1],)).copy()

    return Diffeomorphism(
        lambda c: np.asarray(c) * scale + offset,
        lambda c: (np.asarray(c) - offset) / scale,
        jac,
        "affine",
    )


def odd_power_map(power: int = 3) -> Diffeomorphism:
    if power < 1 or power % 2 == 0:
        raise GridValueError("power map must use a positive odd exponent")

    def forward(c):
        c = np.asarray(c, dtype=float)
        return np.sign(c) * np.abs(c) ** power

    def inverse(c):
        c = np.asarray(c, dtype=float)
        return np.sign(c) * np.abs(c) ** (1.0 / power)

    def jac(c):
        c = np.asarray(c, dtype=float)
        diag = power * np.abs(c) ** (power - 1)
        p = c.shape[-1]
        out = np.zeros(c.shape + (p,))
        idx = np.arange(p)
        out[..., idx, idx] = diag
        return out

    return Diffeomorphism(forward, inverse, jac, f"odd_power_{power}")


def logistic_map() -> Diffeomorphism:
    def forward(c):
        return 1.0 / (1.0 + np.exp(-np.asarray(c, dtype=float)))

    def inverse(c):
        c = np.asarray(c, dtype=float)
        return np.log(c / (1.0 - c))

    def jac(c):
        s = forward(c)
        diag = s * (1.0 - s)
        p = np.asarray(c).shape[-1]
        out = np.zeros(np.asarray(c).shape + (p,))
        idx = np.arange(p)
        out[..., idx, idx] = diag
        return out

    return Diffeomorphism(forward, inverse, jac, "logistic")


MAP_CATALOG: dict[str, Callable[..., Diffeomorphism]] = {
    "identity": identity_map,
    "affine": affine_map,
    "odd_power": odd_power_map,
    "logistic": logistic_map,
}


# ---------------------------------------------------------------------------
# evaluation helpers

def _interpolator(grid: ParameterGrid, values: np.ndarray):
    # cubic_legacy reproduces nodal values exactly; the windowed "cubic" does not
    method = "cubic_legacy" if min(grid.shape) >= 4 else "linear"
    return RegularGridInterpolator(grid.axes, values, method=method, bounds_error=False,
                                   fill_value=None)


def _eval_scalar(field: ScalarField, fn, points: np.ndarray) -> np.ndarray:
    if fn is not None:
        return np.asarray(fn(points), dtype=float)
    return _interpolator(field.grid, field.values)(points)


def _eval_vector(field: VectorField, fn, points: np.ndarray) -> np.ndarray:
    if fn is not None:
        return np.asarray(fn(points), dtype=float)
    p = field.grid.dim
    out = np.empty(points.shape[:-1] + (p,))
    for a in range(p):
        out[..., a] = _interpolator(field.grid, field.values[..., a])(points)
    return out


def _eval_matrix(field: MatrixField, fn, points: np.ndarray) -> np.ndarray:
    if fn is not None:
        return np.asarray(fn(points), dtype=float)
    p = field.grid.dim
    out = np.empty(points.shape[:-1] + (p, p))
    for a in range(p):
        for b in range(a, p):
            vals = _interpolator(field.grid, field.values[..., a, b])(points)
            out[..., a, b] = vals
            out[..., b, a] = vals
    return out


def derive_target_grid(map: Diffeomorphism, grid: ParameterGrid,
                       shape: tuple[int, ...] | None = None) -> ParameterGrid:
    """Image box of a per-axis monotone map, with the given node counts."""
    corners = np.stack([np.array([lo for lo, _ in grid.bounds]),
                        np.array([hi for _, hi in grid.bounds])])
    images = np.asarray(map.forward(corners))
    lows = images.min(axis=0)
    highs = images.max(axis=0)
    return ParameterGrid(list(zip(lows, highs)), shape or grid.shape)


def _axis_lengths(grid: ParameterGrid) -> np.ndarray:
    return np.array([hi - lo for lo, hi in grid.bounds])


def pushforward_model(
    model: StatisticalModel,
    map: Diffeomorphism,
    target_grid: ParameterGrid | None = None,
) -> StatisticalModel:
    """The same statistical problem expressed in the image coordinates.

    Fields are sampled at the preimages of the target nodes (analytic
    callables when available, cubic interpolation otherwise) and transformed
    with the Jacobian: information and metric as (0,2) tensors, the weight
    covariantly, the prior as a scalar.
    """
    rt = map.check_round_trip(model.grid)
    if rt > ROUND_TRIP_ATOL:
        raise GridValueError(
            f"map inverse does not undo forward on the grid (max error {rt:.3e})"
        )
    if target_grid is None:
        target_grid = derive_target_grid(map, model.grid)
    lengths = _axis_lengths(model.grid)

    pts_src = np.asarray(map.inverse(target_grid.coordinates), dtype=float)
    jac = map.jacobian_at(pts_src, lengths)  # J at theta(theta~)
    det = np.linalg.det(jac)
    if np.any(det == 0) or not np.all(np.isfinite(det)):
        bad = np.argwhere((det == 0) | ~np.isfinite(det))[0]
        raise GridValueError(
            f"singular Jacobian at target node {tuple(bad)}, "
            f"coordinates {target_grid.coordinates[tuple(bad)]}"
        )
    jac_inv = np.linalg.inv(jac)

    f_src = _eval_matrix(model.fisher, model.fisher_fn, pts_src)
    u_src = _eval_vector(model.weight, model.weight_fn, pts_src)
    f_new = np.einsum("...ca,...cd,...db->...ab", jac_inv, f_src, jac_inv)
    u_new = np.einsum("...ba,...b->...a", jac_inv, u_src)

    if model.metric is not None or model.metric_fn is not None:
        g_src = _eval_matrix(model.metric, model.metric_fn, pts_src)
    else:
        g_src = np.broadcast_to(np.eye(model.grid.dim), pts_src.shape + (model.grid.dim,))
    g_new = np.einsum("...ca,...cd,...db->...ab", jac_inv, g_src, jac_inv)
    metric_new = MatrixField(target_grid, np.ascontiguousarray(g_new))

    prior_new = None
    prior_fn_new = None
    if model.prior is not None:
        rho_vals = np.clip(_eval_scalar(model.prior, model.prior_fn, pts_src), 0.0, None)
        # re-normalize against the target quadrature so the pushed model is
        # itself valid; the factor is 1 + O(dx^2)
        norm = float(np.sum(target_grid.trapezoid_weights * rho_vals * np.sqrt(np.linalg.det(g_new))))
        prior_new = ScalarField(target_grid, rho_vals / norm)
        if model.prior_fn is not None:
            src_fn = model.prior_fn
            inv_fn = map.inverse
            prior_fn_new = lambda c: np.asarray(src_fn(np.asarray(inv_fn(c)))) / norm

    helstrom_new = None
    if model.helstrom is not None:
        k_src = _eval_matrix(model.helstrom, model.helstrom_fn, pts_src)
        helstrom_new = MatrixField(
            target_grid,
            np.ascontiguousarray(np.einsum("...ca,...cd,...db->...ab", jac_inv, k_src, jac_inv)),
        )

    return StatisticalModel(
        target_grid,
        MatrixField(target_grid, np.ascontiguousarray(f_new)),
        VectorField(target_grid, np.ascontiguousarray(u_new), variance="covariant"),
        metric_new,
        prior_new,
        helstrom_new,
        prior_fn=prior_fn_new,
    )


def transform_vector_field(
    v: VectorField,
    map: Diffeomorphism,
    target_grid: ParameterGrid | None = None,
    v_fn: Callable | None = None,
) -> VectorField:
    """Contravariant push of a vector field: ``v~^b = v^a J_a^b`` at preimages."""
    if v.variance != "contravariant":
        raise GridValueError(
            "transform_vector_field needs a contravariant field; "
            "covariant components obey the inverse-Jacobian law"
        )
    if target_grid is None:
        target_grid = derive_target_grid(map, v.grid)
    pts_src = np.asarray(map.inverse(target_grid.coordinates), dtype=float)
    jac = map.jacobian_at(pts_src, _axis_lengths(v.grid))
    vals = _eval_vector(v, v_fn, pts_src)
    new_vals = np.einsum("...a,...ab->...b", vals, jac)
    return VectorField(target_grid, np.ascontiguousarray(new_vals), variance="contravariant")


@dataclass(frozen=True)
class InvarianceReport:
    bound_source: "object"
    bound_target: "object"
    relative_difference: float
    v_transformed: bool
    tolerance: float

    @property
    def invariant(self) -> bool:
        return self.relative_difference <= self.tolerance


def invariance_report(
    model: StatisticalModel,
    prior: ScalarField,
    v: VectorField,
    map: Diffeomorphism,
    n: float,
    target_grid: ParameterGrid | None = None,
    transform_v: bool = True,
    v_fn: Callable | None = None,
    prior_fn: Callable | None = None,
    tolerance: float = 1e-5,
) -> InvarianceReport:
    """Gill-Levit bound in source and image coordinates, with their gap.

    With ``transform_v=False`` the raw component values are reused in the new
    coordinates (the classic mistake); the resulting bound belongs to a
    different vector field and the report flags it as non-invariant.
    """
    from .bounds import gill_levit_bound  # local import to avoid a cycle

    model_src = model.with_prior(prior, prior_fn)
    rep_src = gill_levit_bound(model_src, prior, v, n)

    model_tgt = pushforward_model(model_src, map, target_grid)
    tgt_grid = model_tgt.grid
    if transform_v:
        v_tgt = transform_vector_field(v, map, tgt_grid, v_fn)
    else:
        pts_src = np.asarray(map.inverse(tgt_grid.coordinates), dtype=float)
        v_tgt = VectorField(tgt_grid, _eval_vector(v, v_fn, pts_src))
    rep_tgt = gill_levit_bound(model_tgt, model_tgt.prior, v_tgt, n)

    scale = max(abs(rep_src.bound), abs(rep_tgt.bound), 1e-300)
    rel = abs(rep_src.bound - rep_tgt.bound) / scale
    return InvarianceReport(rep_src, rep_tgt, rel, transform_v, tolerance)
