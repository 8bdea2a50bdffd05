"""Closed moment evolution on the generalized Gibbs manifold.

The moment set is the kinetic cell energy and the cell mass in every cell,
which keeps each observable inside the generator's bilinear domain; the
interaction enters through the generator coefficients only.  Time stepping
integrates the moments with classical RK4 and re-fits the Lagrange fields
at every stage, so the state never leaves the manifold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fieldmodel import HBAR, Zero
from .fock import FockBasis
from .gibbs import (
    ConstraintSet,
    LagrangeFields,
    cell_observables,
    chi_matrix,
    constraint_operator_list,
    entropy,
    expectation,
    fields_to_multipliers,
    gibbs_from_operator,
    maxent_fit,
)
from .generator import GeneratorCoefficients, Lprime
from .scattering import collision_time_estimate

RATE_IMAG_TOL = 1e-9
SINGULAR_RATIO = 1e-13
MAX_HALVINGS = 10


class ClosureSystem:
    """Bilinear cell moments driven by the coarse-grained generator."""

    def __init__(self, basis: FockBasis, modes, grid, coeffs: GeneratorCoefficients,
                 fields: LagrangeFields, hbar: float = HBAR):
        if fields.n_cells != grid.n_cells:
            raise ValueError("field cell count does not match the grid")
        if np.any(fields.velocity != 0.0):
            raise ValueError("closure runs with a frozen zero velocity field")
        self.basis = basis
        self.modes = modes
        self.grid = grid
        self.coeffs = coeffs
        self.fields = fields
        self.hbar = float(hbar)
        self.obs = cell_observables(basis, modes, grid, Zero(), grid.geom, hbar=hbar)
        self.operators = constraint_operator_list(self.obs, fields.velocity)
        self.labels = tuple(f"energy[{c}]" for c in range(grid.n_cells)) + tuple(
            f"mass[{c}]" for c in range(grid.n_cells))
        self.lp = Lprime(basis, coeffs, hbar=hbar)
        self.tau0 = collision_time_estimate(coeffs, hbar=hbar)
        self.images = []
        for label, op in zip(self.labels, self.operators):
            try:
                self.images.append(self.lp.apply(op))
            except ValueError as exc:
                raise ValueError(
                    f"observable {label} is outside the bilinear family"
                ) from exc

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    def state_for(self, fields: LagrangeFields):
        y = fields_to_multipliers(fields)
        k = np.einsum("i,iab->ab", y, np.asarray(self.operators))
        return gibbs_from_operator(k, fields)

    def moments_of(self, fields: LagrangeFields) -> np.ndarray:
        state = self.state_for(fields)
        return np.array([expectation(state, op) for op in self.operators])


def _moment_rates(sys: ClosureSystem, weight: np.ndarray) -> np.ndarray:
    rates = []
    for image in sys.images:
        value = complex(np.trace(weight @ image))
        if abs(value.imag) > RATE_IMAG_TOL * (1.0 + abs(value)):
            raise ValueError(f"moment rate has imaginary part {value.imag:.3e}")
        rates.append(value.real)
    return np.array(rates)


@dataclass(frozen=True)
class RhsReport:
    rates: np.ndarray
    moment_rates: np.ndarray
    condition: float
    chi: np.ndarray


def closure_rhs(sys: ClosureSystem, fields: LagrangeFields | None = None) -> RhsReport:
    """Moment rates b and the multiplier rates solving (-chi) dlambda/dt = b."""
    fields = sys.fields if fields is None else fields
    state = sys.state_for(fields)
    b = _moment_rates(sys, state.weight)
    chi = chi_matrix(state, sys.operators)
    evals, vecs = np.linalg.eigh(chi)
    top = float(evals[-1])
    if evals[0] < SINGULAR_RATIO * top:
        null = vecs[:, 0]
        terms = " + ".join(
            f"({null[i]:+.3f})*{sys.labels[i]}"
            for i in range(null.size) if abs(null[i]) > 0.2 * np.max(np.abs(null))
        )
        raise ValueError(
            f"singular response matrix; null-space combination {terms}"
        )
    rates = -np.linalg.solve(chi, b)
    return RhsReport(rates, b, float(top / evals[0]), chi)


@dataclass(frozen=True)
class StateTrajectory:
    times: np.ndarray
    fields: tuple
    multipliers: np.ndarray
    moments: np.ndarray
    entropies: np.ndarray
    mass_total: np.ndarray
    energy_total: np.ndarray
    energy_rates: np.ndarray
    conditions: np.ndarray
    fit_residuals: np.ndarray
    labels: tuple

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return self.times.size - 1


def _fitted_rate(sys: ClosureSystem, moments: np.ndarray, warm: LagrangeFields):
    n = sys.n_cells
    targets = ConstraintSet(moments[:n], moments[n:])
    fit = maxent_fit(sys.basis, sys.obs, targets, init=warm)
    return _moment_rates(sys, fit.state.weight), fit


def _rk4_step(sys: ClosureSystem, fields: LagrangeFields, moments: np.ndarray,
              step: float):
    k1, f1 = _fitted_rate(sys, moments, fields)
    k2, f2 = _fitted_rate(sys, moments + 0.5 * step * k1, f1.fields)
    k3, f3 = _fitted_rate(sys, moments + 0.5 * step * k2, f2.fields)
    k4, f4 = _fitted_rate(sys, moments + step * k3, f3.fields)
    new_moments = moments + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    n = sys.n_cells
    fit = maxent_fit(sys.basis, sys.obs,
                     ConstraintSet(new_moments[:n], new_moments[n:]),
                     init=f4.fields)
    return fit.fields, new_moments, fit


def integrate(sys: ClosureSystem, t_span: float, dt: float) -> StateTrajectory:
    """RK4 on the cell moments with a maxent re-fit at every stage.

    The step must respect the coarse-graining window: dt >= 5 tau0 (hard
    error) and dt <= t_span / 4.  Rejected steps are halved, never past the
    window floor and at most ten times, then the run aborts.
    """
    if t_span <= 0.0 or dt <= 0.0:
        raise ValueError("t_span and dt must be positive")
    floor = 5.0 * sys.tau0 if math.isfinite(sys.tau0) else 0.0
    if dt < floor:
        raise ValueError(
            f"dt {dt:g} is below the coarse-grained floor 5*tau0 = {floor:g}"
        )
    if dt > t_span / 4.0:
        raise ValueError("dt must fit at least four steps into t_span")
    n = sys.n_cells
    fields = sys.fields
    moments = sys.moments_of(fields)
    times = [0.0]
    field_rows = [fields]
    moment_rows = [moments]
    multiplier_rows = [fields_to_multipliers(fields)]
    rep = closure_rhs(sys, fields)
    entropy_rows = [entropy(sys.state_for(fields))]
    mass_rows = [float(moments[n:].sum())]
    energy_rows = [float(moments[:n].sum())]
    energy_rate_rows = [float(rep.moment_rates[:n].sum())]
    condition_rows = [rep.condition]
    residual_rows = [0.0]
    t = 0.0
    while t < t_span * (1.0 - 1e-12):
        step = min(dt, t_span - t)
        halvings = 0
        while True:
            try:
                new_fields, new_moments, fit = _rk4_step(sys, fields, moments, step)
                break
            except ValueError as exc:
                halvings += 1
                if halvings > MAX_HALVINGS:
                    raise ValueError(
                        f"step rejection cascade at t = {t:g} "
                        f"(more than {MAX_HALVINGS} halvings): {exc}"
                    ) from exc
                if floor > 0.0 and step / 2.0 < floor:
                    raise ValueError(
                        f"step rejection at t = {t:g} cannot halve below the "
                        f"coarse-grained floor {floor:g}: {exc}"
                    ) from exc
                step /= 2.0
        t += step
        fields, moments = new_fields, new_moments
        rep = closure_rhs(sys, fields)
        times.append(t)
        field_rows.append(fields)
        moment_rows.append(moments)
        multiplier_rows.append(fields_to_multipliers(fields))
        entropy_rows.append(entropy(fit.state))
        mass_rows.append(float(moments[n:].sum()))
        energy_rows.append(float(moments[:n].sum()))
        energy_rate_rows.append(float(rep.moment_rates[:n].sum()))
        condition_rows.append(rep.condition)
        residual_rows.append(fit.residual_norms[-1])
    return StateTrajectory(
        times=np.array(times),
        fields=tuple(field_rows),
        multipliers=np.array(multiplier_rows),
        moments=np.array(moment_rows),
        entropies=np.array(entropy_rows),
        mass_total=np.array(mass_rows),
        energy_total=np.array(energy_rows),
        energy_rates=np.array(energy_rate_rows),
        conditions=np.array(condition_rows),
        fit_residuals=np.array(residual_rows),
        labels=sys.labels,
    )


def trajectory_table(traj: StateTrajectory):
    """Column header and float rows for a time-series file."""
    header = ["time"]
    header.extend(f"lambda_{label}" for label in traj.labels)
    header.extend(f"moment_{label}" for label in traj.labels)
    header.extend(["entropy", "mass_total", "energy_total", "energy_rate",
                   "rhs_condition", "fit_residual"])
    rows = []
    for i in range(traj.times.size):
        row = [float(traj.times[i])]
        row.extend(float(x) for x in traj.multipliers[i])
        row.extend(float(x) for x in traj.moments[i])
        row.extend([float(traj.entropies[i]), float(traj.mass_total[i]),
                    float(traj.energy_total[i]), float(traj.energy_rates[i]),
                    float(traj.conditions[i]), float(traj.fit_residuals[i])])
        rows.append(row)
    return header, rows


@dataclass(frozen=True)
class GainLossReport:
    labels: tuple
    streaming: np.ndarray
    loss: np.ndarray
    gain: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.streaming + self.loss + self.gain


def gain_loss_report(sys: ClosureSystem, weight: np.ndarray | None = None,
                     operators=None, labels=None) -> GainLossReport:
    """Split each moment rate into streaming, loss, and gain contributions."""
    if weight is None:
        weight = sys.state_for(sys.fields).weight
    if operators is None:
        operators = sys.operators
        labels = sys.labels
    elif labels is None:
        labels = tuple(f"observable[{i}]" for i in range(len(operators)))
    n = sys.basis.n_modes
    streams = np.empty((n, n) + weight.shape, dtype=complex)
    losses = np.empty_like(streams)
    gains = np.empty_like(streams)
    for h in range(n):
        for k in range(n):
            streams[h, k], losses[h, k], gains[h, k] = sys.lp.parts(h, k)
    out = {"streaming": [], "loss": [], "gain": []}
    for op in operators:
        coeff = sys.lp.bilinear_coefficients(op)
        for key, family in (("streaming", streams), ("loss", losses),
                            ("gain", gains)):
            image = np.einsum("hk,hkab->ab", coeff, family)
            value = complex(np.trace(weight @ image))
            if abs(value.imag) > RATE_IMAG_TOL * (1.0 + abs(value)):
                raise ValueError(
                    f"{key} rate has imaginary part {value.imag:.3e}"
                )
            out[key].append(value.real)
    return GainLossReport(tuple(labels), np.array(out["streaming"]),
                          np.array(out["loss"]), np.array(out["gain"]))
