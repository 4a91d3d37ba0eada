"""Waveform estimation in the stationary, long-observation-time regime.

Discretizing a continuously measured waveform over p time slots turns the
quantum information and the prior covariance into circulant matrices whose
symbols are the power spectral densities, so the optimal quantum bound
diagonalizes in the frequency domain:

    Q_max = (1/T) sum_j |h~(w_j)|^2 / (4 S_q(w_j)/hbar^2 + 1/S_theta(w_j)),

which converges, as the slot width shrinks and the horizon grows, to

    Q_max -> int |h~(w)|^2 / (4 S_q/hbar^2 + 1/S_theta) dw / (2 pi).

A linear measurement with transfer function h_X and noise spectrum S_Z
reaches the Wiener-smoother risk with the same structure, and comparing the
two integrands gives the quantum limit on the measurement noise floor:
S_Z / |h_X|^2 >= hbar^2 / (4 S_q) at every frequency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridValueError, SpectralDomainError

EDGE_DECAY_RTOL = 1e-6
EVENNESS_RTOL = 1e-9
FLOOR_VIOLATION_RTOL = 1e-12


def _as_spectrum(values, n, name) -> np.ndarray:
    arr = np.full(n, float(values)) if np.isscalar(values) else np.asarray(values, dtype=float)
    if arr.shape != (n,):
        raise GridValueError(f"{name} has shape {arr.shape}, expected ({n},)")
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise GridValueError(f"{name} must be nonnegative (inf allowed)")
    return arr


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Spectra and transfer functions on a symmetric uniform frequency grid.

    ``s_q`` is the symmetrized position-noise spectrum of the probe,
    ``s_theta`` the prior spectrum of the waveform, ``s_z`` the measurement
    noise spectrum, ``h_abs2`` the squared magnitude of the estimation
    weight transform and ``hx_abs2`` that of the measurement transfer
    function.  All spectra are nonnegative and even; infinities are allowed
    (an infinite prior spectrum means no prior information at that
    frequency).
    """

    omega: np.ndarray
    s_q: np.ndarray
    s_theta: np.ndarray
    s_z: np.ndarray | None = None
    h_abs2: np.ndarray | None = None
    hx_abs2: np.ndarray | None = None
    hbar: float = 1.0

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        n = len(omega)
        if n < 3:
            raise GridValueError("need at least 3 frequency nodes")
        steps = np.diff(omega)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9):
            raise GridValueError("frequency grid must be uniform and increasing")
        if abs(omega[0] + omega[-1]) > 1e-9 * max(abs(omega[0]), 1.0):
            raise GridValueError("frequency grid must be symmetric about zero")
        object.__setattr__(self, "omega", omega)
        for name in ("s_q", "s_theta", "s_z", "h_abs2", "hx_abs2"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = _as_spectrum(val, n, name)
            finite = arr[np.isfinite(arr)]
            if len(finite) and len(arr) == n:
                mirrored = arr[::-1]
                both = np.isfinite(arr) & np.isfinite(mirrored)
                scale = max(finite.max(), 1.0)
                if np.any(np.abs(arr[both] - mirrored[both]) > EVENNESS_RTOL * scale):
                    raise GridValueError(f"{name} must be an even function of frequency")
                if np.any(np.isfinite(arr) != np.isfinite(mirrored)):
                    raise GridValueError(f"{name} must be an even function of frequency")
            object.__setattr__(self, name, arr)

    @property
    def domega(self) -> float:
        return float(self.omega[1] - self.omega[0])

    @classmethod
    def from_csv(cls, path, hbar: float = 1.0) -> "SpectralModel":
        """Columns: omega plus any of s_q, s_theta, s_z, h_abs2, hx_abs2."""
        import csv

        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            rows = np.array([[float(x) for x in row] for row in reader])
        if "omega" not in header:
            raise GridValueError("spectra CSV needs an 'omega' column")
        cols = {name: rows[:, i] for i, name in enumerate(header)}
        order = np.argsort(cols["omega"])
        kwargs = {name: cols[name][order] for name in
                  ("s_q", "s_theta", "s_z", "h_abs2", "hx_abs2") if name in cols}
        return cls(cols["omega"][order], hbar=hbar, **kwargs)


@dataclass(frozen=True, eq=False)
class TimeDiscretization:
    """p time slots of width total_time / p, with the matching DFT frequencies."""

    total_time: float
    slots: int
    weights: np.ndarray  # h sampled at the slot times

    def __post_init__(self):
        if self.slots < 2:
            raise GridValueError("need at least 2 time slots")
        if self.total_time <= 0:
            raise GridValueError("total_time must be positive")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.slots,):
            raise GridValueError(f"weights have shape {w.shape}, expected ({self.slots},)")
        object.__setattr__(self, "weights", w)

    @property
    def dt(self) -> float:
        return self.total_time / self.slots

    @property
    def times(self) -> np.ndarray:
        return -self.total_time / 2.0 + (np.arange(self.slots) + 1) * self.dt

    @property
    def frequencies(self) -> np.ndarray:
        return -np.pi / self.dt + 2.0 * np.pi * np.arange(self.slots) / self.total_time

    @classmethod
    def instant_weight(cls, total_time: float, slots: int, at_time: float = 0.0):
        """Weight approximating a delta at one slot (estimate the value there)."""
        disc = cls(total_time, slots, np.zeros(slots))
        idx = int(np.argmin(np.abs(disc.times - at_time)))
        w = np.zeros(slots)
        w[idx] = 1.0 / disc.dt
        return cls(total_time, slots, w)


def _interp_spectrum(omega_grid, values, omega_out, name):
    if np.any(omega_out < omega_grid[0] - 1e-12) or np.any(omega_out > omega_grid[-1] + 1e-12):
        raise SpectralDomainError(
            f"discretization band [{omega_out[0]:.4g}, {omega_out[-1]:.4g}] is not "
            f"covered by the {name} grid [{omega_grid[0]:.4g}, {omega_grid[-1]:.4g}]"
        )
    finite = np.where(np.isfinite(values), values, np.nan)
    out = np.interp(omega_out, omega_grid, finite)
    # frequencies adjacent to infinite entries inherit infinity
    inf_mask = ~np.isfinite(values)
    if inf_mask.any():
        idx = np.searchsorted(omega_grid, omega_out)
        idx_lo = np.clip(idx - 1, 0, len(omega_grid) - 1)
        idx_hi = np.clip(idx, 0, len(omega_grid) - 1)
        out[inf_mask[idx_lo] | inf_mask[idx_hi]] = np.inf
    return out


def _inverse_prior(s_theta):
    with np.errstate(divide="ignore"):
        inv = np.where(s_theta > 0, 1.0 / s_theta, np.inf)
    return np.where(np.isinf(s_theta), 0.0, inv)


def circulant_covariance(disc: TimeDiscretization, spectrum_at_wj: np.ndarray) -> np.ndarray:
    """Real symmetric circulant matrix with the given spectral symbol.

    Row a, column b holds (dt/p) sum_j S(w_j) exp[i w_j (t_b - t_a)]; used by
    the consistency tests connecting time-domain covariances to spectra.
    """
    t = disc.times
    w = disc.frequencies
    phase = np.exp(1j * np.outer(w, t))
    mat = (disc.dt / disc.slots) * (phase.conj().T * spectrum_at_wj) @ phase
    mat = mat.real
    return (mat + mat.T) / 2.0


def build_circulant_bound(disc: TimeDiscretization, spectra: SpectralModel) -> float:
    """Discrete optimal bound from the circulant information and prior.

    Evaluates u (K + G)^{-1} u with u the slot-weighted estimation weights,
    using the frequency-domain diagonalization of the circulant matrices.
    """
    w_j = disc.frequencies
    s_q = _interp_spectrum(spectra.omega, spectra.s_q, w_j, "s_q")
    s_th = _interp_spectrum(spectra.omega, spectra.s_theta, w_j, "s_theta")
    den = 4.0 * s_q / spectra.hbar**2 + _inverse_prior(s_th)

    transform = disc.dt * np.exp(-1j * np.outer(w_j, disc.times)) @ disc.weights
    h2 = np.abs(transform) ** 2
    if np.any((den == 0) & (h2 > 0)):
        raise GridValueError(
            "zero denominator: no measurement noise and no prior at a "
            "frequency carrying estimation weight"
        )
    good = den > 0
    return float(np.sum(h2[good] / den[good]) / disc.total_time)


def _check_edge_decay(omega, integrand):
    peak = float(np.max(integrand)) if len(integrand) else 0.0
    if peak <= 0:
        return
    edge = max(integrand[0], integrand[-1])
    if edge > EDGE_DECAY_RTOL * peak:
        raise SpectralDomainError(
            f"integrand does not decay at the grid edges "
            f"(edge {edge:.3e} vs peak {peak:.3e}); widen the frequency grid"
        )


def _frequency_integral(omega, integrand) -> float:
    return float(np.trapezoid(integrand, omega) / (2.0 * np.pi))


def continuum_qmax(spectra: SpectralModel) -> float:
    """Frequency-integral form of the optimal quantum bound (SPLOT limit)."""
    if spectra.h_abs2 is None:
        raise GridValueError("continuum_qmax needs the h_abs2 transfer spectrum")
    den = 4.0 * spectra.s_q / spectra.hbar**2 + _inverse_prior(spectra.s_theta)
    num = spectra.h_abs2
    if np.any((den == 0) & (num > 0)):
        raise GridValueError("zero denominator at a frequency carrying weight")
    integrand = np.zeros_like(den)
    good = (den > 0) & np.isfinite(den)
    integrand[good] = num[good] / den[good]
    _check_edge_decay(spectra.omega, integrand)
    return _frequency_integral(spectra.omega, integrand)


def wiener_risk(spectra: SpectralModel) -> float:
    """Minimum mean-square risk of the linear smoother in the SPLOT limit."""
    for name in ("h_abs2", "hx_abs2", "s_z"):
        if getattr(spectra, name) is None:
            raise GridValueError(f"wiener_risk needs the {name} spectrum")
    with np.errstate(divide="ignore", invalid="ignore"):
        meas = np.where(spectra.s_z > 0, spectra.hx_abs2 / spectra.s_z, np.inf)
    meas = np.where(np.isinf(spectra.s_z), 0.0, meas)
    meas = np.where((spectra.hx_abs2 == 0) & (spectra.s_z == 0), 0.0, meas)
    den = meas + _inverse_prior(spectra.s_theta)
    num = spectra.h_abs2
    if np.any((den == 0) & (num > 0)):
        raise GridValueError("zero denominator at a frequency carrying weight")
    integrand = np.zeros_like(den)
    good = (den > 0) & np.isfinite(den)
    integrand[good] = num[good] / den[good]
    _check_edge_decay(spectra.omega, integrand)
    return _frequency_integral(spectra.omega, integrand)


@dataclass(frozen=True)
class NoiseFloorViolation:
    omega: float
    noise_floor: float
    quantum_floor: float

    @property
    def margin(self) -> float:
        """How many times below the quantum floor the noise sits."""
        return self.quantum_floor / self.noise_floor if self.noise_floor > 0 else np.inf

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "noise_floor": self.noise_floor,
            "quantum_floor": self.quantum_floor,
            "margin": self.margin,
        }


def noise_floor_check(spectra: SpectralModel) -> list[NoiseFloorViolation]:
    """Frequencies where the noise floor beats the quantum limit (impossible).

    The floor S_Z / |h_X|^2 must dominate hbar^2 / (4 S_q) wherever the
    transfer function is nonzero; an empty list means the linear model is
    consistent with the quantum bound.  Sorted by frequency.
    """
    for name in ("hx_abs2", "s_z"):
        if getattr(spectra, name) is None:
            raise GridValueError(f"noise_floor_check needs the {name} spectrum")
    out: list[NoiseFloorViolation] = []
    with np.errstate(divide="ignore", invalid="ignore"):
        floor = np.where(spectra.hx_abs2 > 0, spectra.s_z / spectra.hx_abs2, np.inf)
        quantum = np.where(
            np.isinf(spectra.s_q), 0.0,
            np.where(spectra.s_q > 0, spectra.hbar**2 / (4.0 * spectra.s_q), np.inf),
        )
    checked = spectra.hx_abs2 > 0
    bad = checked & (floor < quantum * (1.0 - FLOOR_VIOLATION_RTOL))
    for i in np.flatnonzero(bad):
        out.append(NoiseFloorViolation(float(spectra.omega[i]), float(floor[i]),
                                       float(quantum[i])))
    out.sort(key=lambda v: v.omega)
    return out


def rectangle_spectra(
    band: float = 2.0 * np.pi,
    s_q_level: float = 0.75,
    s_theta_level: float = 1.0,
    span_factor: float = 2.0,
    nodes: int = 2_000_001,
    hbar: float = 1.0,
) -> SpectralModel:
    """Flat spectra inside |omega| <= band, no prior outside.

    The closed form is Q_max = (band / pi) / (4 s_q/hbar^2 + 1/s_theta);
    with the defaults, 0.5.
    """
    omega = np.linspace(-span_factor * band, span_factor * band, nodes)
    inside = np.abs(omega) <= band + 1e-12
    s_theta = np.where(inside, s_theta_level, 0.0)
    return SpectralModel(
        omega,
        s_q=np.full(nodes, s_q_level),
        s_theta=s_theta,
        h_abs2=np.ones(nodes),
        hbar=hbar,
    )
