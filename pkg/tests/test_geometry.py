import numpy as np
import pytest

from bcrb.errors import GridValueError
from bcrb.geometry import (
    MAP_CATALOG,
    Diffeomorphism,
    affine_map,
    derive_target_grid,
    identity_map,
    invariance_report,
    logistic_map,
    odd_power_map,
    pushforward_model,
    transform_vector_field,
)
from bcrb.grids import ParameterGrid, VectorField, integrate

from conftest import (
    bump_scalar_model,
    const_vector_fn,
    line_grid,
    unit_field,
)


def cube_map():
    return odd_power_map(3)


class TestDiffeomorphism:
    def test_round_trip(self):
        g = line_grid(0.5, 2.0, 101)
        assert cube_map().check_round_trip(g) <= 1e-8

    def test_fd_jacobian_close_to_analytic(self):
        m = cube_map()
        fd = Diffeomorphism(m.forward, m.inverse, None)
        pts = np.linspace(0.5, 2.0, 7)[:, None]
        lengths = np.array([1.5])
        got = fd.jacobian_at(pts, lengths)
        want = m.jacobian_at(pts, lengths)
        assert np.max(np.abs(got - want)) <= 1e-6

    def test_catalog_names(self):
        assert set(MAP_CATALOG) == {"identity", "affine", "odd_power", "logistic"}


class TestPushforward:
    def test_identity_map_unchanged(self, bump_model):
        pushed = pushforward_model(bump_model, identity_map())
        assert np.max(np.abs(pushed.fisher.values - bump_model.fisher.values)) <= 1e-12
        assert np.max(np.abs(pushed.weight.values - bump_model.weight.values)) <= 1e-12
        assert np.max(np.abs(pushed.prior.values - bump_model.prior.values)) <= 1e-12

    def test_cube_map_fisher_law(self, bump_model):
        # F~(t) = F(t^(1/3)) / (9 t^(4/3))
        pushed = pushforward_model(bump_model, cube_map())
        tt = pushed.grid.coordinates[..., 0]
        th = tt ** (1.0 / 3.0)
        expected = (1.0 + th**2) / (9.0 * tt ** (4.0 / 3.0))
        got = pushed.fisher.values[..., 0, 0]
        assert np.max(np.abs(got - expected) / np.abs(expected)) <= 1e-6

    def test_affine_density_change_of_variables(self):
        model = bump_scalar_model(n_nodes=2001)
        amap = affine_map([2.0], [1.0])
        pushed = pushforward_model(model, amap)
        # effective density pi~ = rho~ sqrt(g~) must integrate to one and
        # equal pi(theta(t~)) / 2
        total = integrate(pushed.prior, pushed.metric)
        assert abs(total - 1.0) <= 1e-8
        sqrtg = np.sqrt(np.linalg.det(pushed.metric.values))
        tt = pushed.grid.coordinates[..., 0]
        th = (tt - 1.0) / 2.0
        idx = len(tt) // 3
        src_interp = np.interp(th, model.grid.axes[0], model.prior.values)
        got = (pushed.prior.values * sqrtg)[idx]
        assert abs(got - src_interp[idx] / 2.0) <= 1e-8

    def test_singular_jacobian_reports_node(self, bump_model):
        bad = Diffeomorphism(
            lambda c: np.asarray(c, dtype=float),
            lambda c: np.asarray(c, dtype=float),
            lambda c: np.zeros(np.asarray(c).shape + (np.asarray(c).shape[-1],)),
            "broken",
        )
        with pytest.raises(GridValueError, match="singular Jacobian"):
            pushforward_model(bump_model, bad)

    def test_round_trip_tensor_property(self):
        # no callbacks: exercises the cubic-interpolation path
        model = bump_scalar_model(n_nodes=801)
        grid = model.grid
        stripped = model.with_prior(model.prior)  # keeps prior_fn
        stripped = type(model)(grid, model.fisher, model.weight, prior=model.prior)
        m = cube_map()
        inv = Diffeomorphism(m.inverse, m.forward, None, "cube_inverse")
        there = pushforward_model(stripped, m)
        back = pushforward_model(there, inv, target_grid=grid)
        # interpolation error dominated by the coarser intermediate grid
        tol = 5 * max(dx**2 for dx in grid.spacing + there.grid.spacing)
        inner = ~grid.boundary_mask
        assert np.max(np.abs(back.fisher.values[inner] - model.fisher.values[inner])) <= tol
        assert np.max(np.abs(back.weight.values[inner] - model.weight.values[inner])) <= tol
        assert np.max(np.abs(back.prior.values[inner] - model.prior.values[inner])) <= tol


class TestTransformVectorField:
    def test_identity(self):
        g = line_grid(0.5, 2.0, 101)
        v = unit_field(g)
        out = transform_vector_field(v, identity_map())
        assert np.max(np.abs(out.values - 1.0)) <= 1e-12

    def test_cube_map_constant_field(self):
        g = line_grid(0.5, 2.0, 201)
        v = unit_field(g)
        out = transform_vector_field(v, cube_map(), v_fn=const_vector_fn([1.0]))
        tt = out.grid.coordinates[..., 0]
        expected = 3.0 * tt ** (2.0 / 3.0)
        assert np.max(np.abs(out.values[..., 0] - expected)) <= 1e-8

    def test_linear_map_exact(self):
        g = ParameterGrid([(0, 1), (0, 1)], [9, 9])
        amap = affine_map([2.0, 3.0], [0.0, 0.0])
        v = VectorField.from_callable(g, lambda c: np.stack(
            [c[..., 0] + 1.0, c[..., 1] - 2.0], axis=-1))
        out = transform_vector_field(
            v, amap, v_fn=lambda c: np.stack([c[..., 0] + 1.0, c[..., 1] - 2.0], axis=-1)
        )
        src = np.asarray(amap.inverse(out.grid.coordinates))
        expected = np.stack([2.0 * (src[..., 0] + 1.0), 3.0 * (src[..., 1] - 2.0)], axis=-1)
        assert np.max(np.abs(out.values - expected)) <= 1e-12

    def test_covariant_rejected(self):
        g = line_grid(0, 1, 11)
        v = VectorField.constant(g, [1.0], variance="covariant")
        with pytest.raises(GridValueError, match="contravariant"):
            transform_vector_field(v, identity_map())


class TestInvarianceReport:
    def test_identity_map_exact(self, bump_model):
        rep = invariance_report(
            bump_model, bump_model.prior, unit_field(bump_model.grid),
            identity_map(), n=10.0, v_fn=const_vector_fn([1.0]),
        )
        assert rep.relative_difference <= 1e-14
        assert rep.invariant

    def test_cube_map_transformed_v(self, bump_model):
        tgt = derive_target_grid(cube_map(), bump_model.grid,
                                 (14 * (bump_model.grid.shape[0] - 1) // 3 + 1,))
        rep = invariance_report(
            bump_model, bump_model.prior, unit_field(bump_model.grid),
            cube_map(), n=10.0, target_grid=tgt, v_fn=const_vector_fn([1.0]),
        )
        assert rep.relative_difference <= 1e-6
        assert rep.v_transformed

    def test_cube_map_untransformed_control(self, bump_model):
        rep = invariance_report(
            bump_model, bump_model.prior, unit_field(bump_model.grid),
            cube_map(), n=10.0, transform_v=False, v_fn=const_vector_fn([1.0]),
        )
        assert rep.relative_difference > 1e-3
        assert not rep.invariant

    def test_functionals_individually_invariant(self, bump_model):
        # each of <A>, <F>, <P> agrees across coordinates, not just the ratio
        from bcrb.bounds import functionals
        from bcrb.geometry import pushforward_model as push

        v = unit_field(bump_model.grid)
        a1, f1, p1 = functionals(bump_model, bump_model.prior, v)
        tgt = derive_target_grid(cube_map(), bump_model.grid,
                                 (14 * (bump_model.grid.shape[0] - 1) // 3 + 1,))
        pushed = push(bump_model, cube_map(), tgt)
        v_t = transform_vector_field(v, cube_map(), tgt, v_fn=const_vector_fn([1.0]))
        a2, f2, p2 = functionals(pushed, pushed.prior, v_t)
        assert abs(a2 - a1) / abs(a1) <= 1e-6
        assert abs(f2 - f1) / abs(f1) <= 1e-6
        assert abs(p2 - p1) / abs(p1) <= 1e-6

    def test_local_bound_invariant_at_matched_points(self, bump_model):
        pushed = pushforward_model(bump_model, cube_map())
        f_t = pushed.fisher.values[..., 0, 0]
        u_t = pushed.weight.values[..., 0]
        local_t = u_t**2 / f_t
        th = pushed.grid.coordinates[..., 0] ** (1.0 / 3.0)
        local_s = 1.0 / (1.0 + th**2)
        assert np.max(np.abs(local_t - local_s) / local_s) <= 1e-6


class TestLogisticMap:
    def test_invariance_under_logistic(self, bump_model):
        rep = invariance_report(
            bump_model, bump_model.prior, unit_field(bump_model.grid),
            logistic_map(), n=10.0, v_fn=const_vector_fn([1.0]),
        )
        assert rep.relative_difference <= 1e-6


class TestCatalogInvarianceForVChoices:
    def test_natural_field_invariant_across_catalog(self, bump_model):
        # the per-point natural field, transformed contravariantly, gives the
        # same bound in every catalog parametrization
        from bcrb.bounds import natural_v

        v = natural_v(bump_model)
        v_fn = lambda c: (1.0 / (1.0 + np.asarray(c, dtype=float)[..., 0] ** 2))[..., None]
        for map_obj, nodes in ((affine_map([2.0], [1.0]), 8001),
                               (odd_power_map(3), 20001),
                               (logistic_map(), 8001)):
            tgt = derive_target_grid(map_obj, bump_model.grid, (nodes,))
            rep = invariance_report(bump_model, bump_model.prior, v, map_obj,
                                    10.0, target_grid=tgt, v_fn=v_fn)
            assert rep.relative_difference <= 1e-6, map_obj.name

    def test_polynomial_field_invariant_across_catalog(self, bump_model):
        th = bump_model.grid.coordinates[..., 0]
        v = VectorField(bump_model.grid, (1.0 + 0.5 * th)[..., None])
        v_fn = lambda c: (1.0 + 0.5 * np.asarray(c, dtype=float)[..., 0])[..., None]
        for map_obj, nodes in ((odd_power_map(3), 20001), (logistic_map(), 8001)):
            tgt = derive_target_grid(map_obj, bump_model.grid, (nodes,))
            rep = invariance_report(bump_model, bump_model.prior, v, map_obj,
                                    10.0, target_grid=tgt, v_fn=v_fn)
            assert rep.relative_difference <= 1e-6, map_obj.name
