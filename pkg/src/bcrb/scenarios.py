"""Scenario configs: validation, model building, and the per-kind runners.

Scenarios are JSON documents validated against the shipped schema
(``bcrb/schema/scenario.schema.json``).  Grids, models and priors in configs
are scalar (one-dimensional parameter); the library API handles higher
dimensions directly.  Every runner returns a plain-dict report plus optional
CSV tables; serialization is canonical (sorted keys, fixed float format) so
identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field
from importlib import resources
from typing import Callable

import numpy as np

from . import bounds, geometry, imaging, minimax, optimal, quantum, waveform
from .errors import ScenarioError
from .grids import ParameterGrid, VectorField

DEFAULT_SEED = 0


# ---------------------------------------------------------------------------
# canonical serialization

def _format_float(x: float) -> str:
    if np.isnan(x):
        return '"nan"'
    if np.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return "%.12e" % x


def canonical_json(obj, indent: int = 0) -> str:
    """Deterministic JSON: sorted keys, floats as %.12e, no whitespace drift."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for key in sorted(obj):
            items.append(f'{pad}  "{key}": {canonical_json(obj[key], indent + 1)}')
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}  {canonical_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def scenario_hash(config: dict) -> str:
    """Hash of the canonical form, stable across reserialization."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


# ---------------------------------------------------------------------------
# validation

def load_schema() -> dict:
    ref = resources.files("bcrb").joinpath("schema/scenario.schema.json")
    with ref.open() as fh:
        return json.load(fh)


def validate_config(config: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(config, load_schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(exc.message, field_path=path) from exc


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"config is not valid JSON: {exc}", field_path="<root>") from exc
    if not isinstance(config, dict):
        raise ScenarioError("config must be a JSON object", field_path="<root>")
    validate_config(config)
    return config


# ---------------------------------------------------------------------------
# builders (scalar parameter)

def _scaled_nodes(nodes: int, grid_scale: int) -> int:
    return (nodes - 1) * grid_scale + 1


def _build_grid(spec: dict, grid_scale: int) -> ParameterGrid:
    if spec["upper"] <= spec["lower"]:
        raise ScenarioError("upper must exceed lower", "grid.upper")
    return ParameterGrid([(spec["lower"], spec["upper"])],
                         [_scaled_nodes(spec["nodes"], grid_scale)])


def _field_callable(spec: dict, path: str) -> Callable:
    kind = spec["type"]
    if kind == "constant":
        if "value" not in spec:
            raise ScenarioError("constant field needs 'value'", path)
        value = float(spec["value"])
        return lambda th: np.full_like(np.asarray(th, dtype=float), value)
    if "coeffs" not in spec:
        raise ScenarioError("polynomial field needs 'coeffs'", path)
    coeffs = [float(c) for c in spec["coeffs"]]
    return lambda th: np.polynomial.polynomial.polyval(np.asarray(th, dtype=float), coeffs)


def _prior_callable(spec: dict, grid: ParameterGrid, path: str) -> Callable:
    kind = spec["type"]
    (lo, hi), = grid.bounds
    center = float(spec.get("center", 0.5 * (lo + hi) if kind != "gaussian" else 0.0))
    variance = float(spec.get("variance", 1.0))
    power = int(spec.get("power", 4))

    def window(th):
        s = np.clip((th - lo) / (hi - lo), 0.0, 1.0)
        return np.sin(np.pi * s) ** power

    if kind == "gaussian":
        return lambda th: np.exp(-((th - center) ** 2) / (2 * variance))
    if kind == "gaussian_bump":
        return lambda th: np.exp(-((th - center) ** 2) / (2 * variance)) * window(th)
    if kind == "bump":
        return window
    if kind == "uniform":
        return lambda th: np.ones_like(np.asarray(th, dtype=float))
    raise ScenarioError(f"unknown prior type {kind!r}", path)


def _build_model(config: dict, grid_scale: int):
    grid = _build_grid(config["grid"], grid_scale)
    fisher1d = _field_callable(config["model"]["fisher"], "model.fisher")
    weight1d = _field_callable(config["model"]["weight"], "model.weight")
    prior1d = _prior_callable(config["prior"], grid, "prior.type")
    model = geometry.StatisticalModel.from_callables(
        grid,
        fisher_fn=lambda c: fisher1d(np.asarray(c)[..., 0])[..., None, None],
        weight_fn=lambda c: weight1d(np.asarray(c)[..., 0])[..., None],
        prior_fn=lambda c: prior1d(np.asarray(c)[..., 0]),
    )
    return model


def _build_v(config: dict, model) -> tuple[VectorField, str, Callable | None]:
    spec = config["v"]
    choice = spec["choice"]
    if choice == "unit":
        fn = lambda c: np.ones_like(np.asarray(c, dtype=float))
        return VectorField.from_callable(model.grid, fn), "unit", fn
    if choice == "natural":
        return bounds.natural_v(model), "natural", None
    if choice == "van_trees":
        v, _ = bounds.van_trees_v(model, model.prior, float(config["n"]))
        return v, "van_trees", None
    coeffs = [float(c) for c in spec.get("coeffs", [1.0])]
    fn = lambda c: np.polynomial.polynomial.polyval(
        np.asarray(c, dtype=float)[..., 0], coeffs)[..., None]
    return VectorField.from_callable(model.grid, fn), "polynomial", fn


def _build_map(spec: dict) -> geometry.Diffeomorphism:
    catalog = spec["catalog"]
    if catalog == "identity":
        return geometry.identity_map()
    if catalog == "affine":
        return geometry.affine_map([spec.get("scale", 2.0)], [spec.get("offset", 0.0)])
    if catalog == "odd_power":
        return geometry.odd_power_map(int(spec.get("power", 3)))
    return geometry.logistic_map()


def _n_values(spec: dict) -> np.ndarray:
    return np.logspace(np.log10(spec["start"]), np.log10(spec["stop"]), spec["count"])


def _build_psf(spec: dict, path: str) -> imaging.PointSpreadFunction:
    if "csv" in spec:
        return imaging.psf_from_csv(spec["csv"])
    if "catalog" not in spec:
        raise ScenarioError("psf needs 'catalog' or 'csv'", path)
    return imaging.PSF_CATALOG[spec["catalog"]](float(spec.get("sigma", 1.0)))


def _build_spectra(spec: dict, grid_scale: int, path: str) -> waveform.SpectralModel:
    if "csv" in spec:
        return waveform.SpectralModel.from_csv(spec["csv"],
                                               hbar=float(spec.get("hbar", 1.0)))
    if spec.get("type") != "rectangle":
        raise ScenarioError("spectra needs 'csv' or type 'rectangle'", path)
    return waveform.rectangle_spectra(
        band=float(spec.get("band", 2.0 * np.pi)),
        s_q_level=float(spec.get("s_q", 0.75)),
        s_theta_level=float(spec.get("s_theta", 1.0)),
        span_factor=float(spec.get("span_factor", 2.0)),
        nodes=_scaled_nodes(int(spec.get("nodes", 2_000_001)), grid_scale),
        hbar=float(spec.get("hbar", 1.0)),
    )


# ---------------------------------------------------------------------------
# runners

@dataclass
class ScenarioResult:
    report: dict
    tables: dict = dc_field(default_factory=dict)  # name -> (header, rows)


def _report_dict(rep: bounds.BoundReport) -> dict:
    out = rep.to_dict()
    out["diagnostics"] = {k: v for k, v in rep.diagnostics.items()}
    return out


def _run_bound(config, grid_scale, rng) -> ScenarioResult:
    model = _build_model(config, grid_scale)
    v, label, _ = _build_v(config, model)
    if label == "van_trees":
        _, rep = bounds.van_trees_v(model, model.prior, float(config["n"]))
    else:
        rep = bounds.gill_levit_bound(model, model.prior, v, float(config["n"]), label)
    return ScenarioResult(
        {"bound_report": _report_dict(rep)},
        {"bound": (bounds.CSV_HEADER, [rep.to_csv_row()])},
    )


def _run_optimal(config, grid_scale, rng) -> ScenarioResult:
    model = _build_model(config, grid_scale)
    rep = optimal.bmax(model, n=float(config["n"]))
    tables = {"bound": (bounds.CSV_HEADER, [rep.to_csv_row()])}
    if rep.attaining_v is not None:
        th = model.grid.coordinates[..., 0]
        rows = [["%.12e" % t, "%.12e" % val]
                for t, val in zip(th, rep.attaining_v.values[..., 0])]
        tables["least_favorable"] = (["theta_1", "v_1"], rows)
    return ScenarioResult({"bmax": rep.bound, "bound_report": _report_dict(rep)}, tables)


def _run_minimax(config, grid_scale, rng) -> ScenarioResult:
    pot = config["potential"]
    exponent = float(pot.get("exponent", 2.0))
    amplitude = float(pot.get("amplitude", 1.0))
    dom = config["domain"]
    problem = minimax.SchrodingerProblem(
        (-dom["half_width"], dom["half_width"]),
        lambda t: amplitude * np.abs(np.asarray(t, dtype=float)) ** exponent,
        alignment=float(config.get("alignment", 1.0)),
        nodes=_scaled_nodes(dom["nodes"], grid_scale),
    )
    res = minimax.rate_fit(problem, _n_values(config["n_list"]))
    rows = [["%.12e" % n, "%.12e" % e, "%.12e" % b] for n, e, b in res.table()]
    report = {
        "slope": res.slope,
        "intercept": res.intercept,
        "trial_energy_slope": res.trial_energy_slope,
        "width_exponent": res.width_exponent,
        "potential_exponent": exponent,
        "expected_slope": -2.0 / (exponent + 2.0),
    }
    return ScenarioResult(report, {"rates": (["n", "e_min", "b_worst"], rows)})


def _run_quantum(config, grid_scale, rng) -> ScenarioResult:
    if config["problem"] == "qubit":
        theta = float(config.get("theta", 0.35))
        trials = int(config.get("snr_trials", 100))
        fam = quantum.diagonal_qubit_family()
        k_val = quantum.helstrom_matrix(fam, [theta])[0, 0]
        (score,) = quantum.sld_scores(fam, [theta])
        snr_at_score = quantum.snr_observable(fam, [theta], [1.0], score)
        best = 0.0
        for _ in range(trials):
            y = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            y = (y + y.conj().T) / 2.0
            best = max(best, quantum.snr_observable(fam, [theta], [1.0], y))
        return ScenarioResult({
            "helstrom": k_val,
            "snr_at_score": snr_at_score,
            "snr_best_random": best,
            "snr_trials": trials,
            "all_bounded": bool(best <= k_val + 1e-8),
            "equality_gap": abs(snr_at_score - k_val),
        })
    for key in ("helstrom", "prior_curvature", "weight_vector"):
        if key not in config:
            raise ScenarioError(f"gaussian_shift problem needs {key!r}", key)
    k = np.asarray(config["helstrom"], dtype=float)
    g = np.asarray(config["prior_curvature"], dtype=float)
    u = np.asarray(config["weight_vector"], dtype=float)
    q_val, risk = quantum.gaussian_shift_bounds(k, g, u)
    return ScenarioResult({
        "qmax": q_val,
        "achieved_risk": risk,
        "sandwich_holds": bool(q_val <= risk <= 2.0 * q_val + 1e-12 * max(1.0, q_val)),
    })


def _run_waveform(config, grid_scale, rng) -> ScenarioResult:
    spectra = _build_spectra(config["spectra"], grid_scale, "spectra")
    report: dict = {"qmax": waveform.continuum_qmax(spectra)}
    if spectra.s_z is not None and spectra.hx_abs2 is not None:
        report["wiener_risk"] = waveform.wiener_risk(spectra)
        violations = waveform.noise_floor_check(spectra)
        report["violations"] = [v.to_dict() for v in violations]
    else:
        report["violations"] = []
    tables = {}
    if "discretization" in config:
        disc_spec = config["discretization"]
        sweep = disc_spec.get("sweep", [disc_spec["slots"]])
        rows = []
        for slots in sweep:
            disc = waveform.TimeDiscretization.instant_weight(
                slots * disc_spec["dt"], slots)
            val = waveform.build_circulant_bound(disc, spectra)
            rows.append(["%d" % slots, "%.12e" % val,
                         "%.12e" % abs(val - report["qmax"])])
        report["circulant_bound"] = float(rows[-1][1])
        tables["circulant"] = (["slots", "bound", "abs_error"], rows)
    return ScenarioResult(report, tables)


def _run_imaging(config, grid_scale, rng) -> ScenarioResult:
    psf = _build_psf(config["psf"], "psf")
    task = config["task"]
    if task == "fisher":
        sources = imaging.SourceConfiguration(config.get("sources", [0.0]))
        f = imaging.direct_imaging_fisher(psf, sources)
        eigs = np.linalg.eigvalsh(f)
        return ScenarioResult({
            "fisher": [[float(x) for x in row] for row in f],
            "eigenvalues": [float(x) for x in np.sort(eigs)[::-1]],
            "numerical_rank": int(np.sum(eigs > 1e-8 * max(eigs.max(), 1e-300))),
        })
    if task == "exponent":
        sep = config.get("separations", {"start": 3e-3, "stop": 3e-1, "count": 8})
        fit = imaging.exponent_fit(
            psf, config.get("direction", [1.0, -1.0]), _n_values(sep))
        rows = [["%.12e" % t, "%.12e" % f]
                for t, f in zip(fit.taus, fit.information)]
        return ScenarioResult(
            {"exponent": fit.exponent, "amplitude": fit.amplitude,
             "r_squared": fit.r_squared},
            {"information": (["tau", "information"], rows)},
        )
    if task == "helstrom_rank":
        base = imaging.SourceConfiguration(config.get("sources", [-0.4, 0.05, 0.45]))
        halvings = int(config.get("halvings", 4))
        rows = []
        ratios = []
        for k in range(halvings + 1):
            scale = 0.5**k
            rep = imaging.imaging_helstrom(psf, base.scaled(scale),
                                           basis_size=int(config.get("basis_size", 20)))
            eigs = rep.eigenvalue_row()
            rows.append(["%.12e" % scale] + ["%.12e" % e for e in eigs[:3]])
            if len(eigs) >= 3:
                ratios.append(eigs[2] / eigs[1])
        return ScenarioResult(
            {"rank_trend_monotone": bool(all(b < a for a, b in zip(ratios, ratios[1:]))),
             "final_ratio": ratios[-1] if ratios else None},
            {"eigenvalues": (["scale", "lambda1", "lambda2", "lambda3"], rows)},
        )
    if task == "rate":
        res = imaging.minimax_rate(
            psf, config.get("direction", [1.0, -1.0]),
            _n_values(config.get("n_list", {"start": 1e2, "stop": 1e6, "count": 5})),
            nodes=_scaled_nodes(1501, grid_scale),
        )
        rows = [["%.12e" % n, "%.12e" % e, "%.12e" % b] for n, e, b in res.table()]
        return ScenarioResult({"slope": res.slope},
                              {"rates": (["n", "e_min", "b_worst"], rows)})
    sources = imaging.SourceConfiguration(config.get("sources", [-0.25, 0.25]))
    classical, quantum_rep = imaging.quantum_vs_classical(
        psf, sources, n=float(config.get("n", 1.0)))
    return ScenarioResult({
        "bmax": classical.bound,
        "qmax": quantum_rep.bound,
        "ordering_holds": bool(quantum_rep.bound <= classical.bound + 1e-10),
    })


def _run_invariance(config, grid_scale, rng) -> ScenarioResult:
    model = _build_model(config, grid_scale)
    v, label, v_fn = _build_v(config, model)
    map_obj = _build_map(config["map"])
    target_nodes = config["map"].get("target_nodes")
    target = None
    if target_nodes is not None:
        target = geometry.derive_target_grid(
            map_obj, model.grid, (_scaled_nodes(target_nodes, grid_scale),))
    n = float(config["n"])
    rep = geometry.invariance_report(
        model, model.prior, v, map_obj, n, target_grid=target, v_fn=v_fn)
    control = geometry.invariance_report(
        model, model.prior, v, map_obj, n, target_grid=target,
        transform_v=False, v_fn=v_fn)
    return ScenarioResult({
        "v_choice": label,
        "map": map_obj.name,
        "bound_source": rep.bound_source.bound,
        "bound_target": rep.bound_target.bound,
        "relative_difference": rep.relative_difference,
        "invariant": rep.invariant,
        "control_relative_difference": control.relative_difference,
    })


RUNNERS = {
    "bound": _run_bound,
    "optimal": _run_optimal,
    "minimax": _run_minimax,
    "quantum": _run_quantum,
    "waveform": _run_waveform,
    "imaging": _run_imaging,
    "invariance": _run_invariance,
}


def run_scenario_config(config: dict, grid_scale: int = 1,
                        seed: int | None = None) -> ScenarioResult:
    """Dispatch a validated config to its runner and wrap provenance."""
    validate_config(config)
    kind = config["kind"]
    rng = np.random.default_rng(DEFAULT_SEED if seed is None else seed)
    result = RUNNERS[kind](config, grid_scale, rng)
    result.report = {
        "kind": kind,
        "name": config["name"],
        "scenario_hash": scenario_hash(config),
        "config": config,
        "grid_scale": grid_scale,
        "seed": DEFAULT_SEED if seed is None else seed,
        "results": result.report,
        "artifacts": sorted(f"{name}.csv" for name in result.tables),
    }
    return result
