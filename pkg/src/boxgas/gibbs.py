"""Generalized Gibbs states on cell observables and maximum-entropy fitting.

States have the form exp(-K)/Z with K a weighted sum of cell energy and
mass operators; the velocity field enters through the boosted cell energy
and is eliminated from the multiplier set by an outer consistency loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.special

from .fieldmodel import (
    HBAR,
    MASS,
    BoxGeometry,
    CellGrid,
    energy_density_op,
    mass_density_op,
    momentum_density_op,
)
from .fock import FockBasis
from .matrixutil import frob, require_hermitian

FIT_TOL = 1e-8
MAX_ITER = 200
CHI_PSD_TOL = 1e-10
STEP_CAP = 1e8


@dataclass(frozen=True)
class LagrangeFields:
    """Per-cell inverse temperature, chemical potential, and velocity."""

    beta: np.ndarray
    mu: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        velocity = np.atleast_2d(np.asarray(self.velocity, dtype=float))
        if beta.ndim != 1 or mu.shape != beta.shape or velocity.shape[0] != beta.size:
            raise ValueError("field arrays must share one entry per cell")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(mu))
                and np.all(np.isfinite(velocity))):
            raise ValueError("fields must be finite")
        if np.any(beta <= 0.0):
            raise ValueError("beta must be positive in every cell")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "velocity", velocity)

    @property
    def n_cells(self) -> int:
        return self.beta.size


def uniform_fields(n_cells: int, dimension: int, beta: float, mu: float) -> LagrangeFields:
    return LagrangeFields(
        beta=np.full(n_cells, float(beta)),
        mu=np.full(n_cells, float(mu)),
        velocity=np.zeros((n_cells, dimension)),
    )


@dataclass(frozen=True)
class ConstraintSet:
    """Per-cell energy and mass targets; momentum targets are zero by design."""

    energy: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        energy = np.asarray(self.energy, dtype=float)
        mass = np.asarray(self.mass, dtype=float)
        if energy.ndim != 1 or mass.shape != energy.shape:
            raise ValueError("energy and mass targets must share one entry per cell")
        if not (np.all(np.isfinite(energy)) and np.all(np.isfinite(mass))):
            raise ValueError("targets must be finite")
        object.__setattr__(self, "energy", energy)
        object.__setattr__(self, "mass", mass)

    @property
    def n_cells(self) -> int:
        return self.energy.size


@dataclass(frozen=True)
class CellObservables:
    """Rest-frame cell operators; boosted variants are exact linear combinations."""

    grid: CellGrid
    energy0: np.ndarray
    momentum0: np.ndarray
    mass: np.ndarray
    mass_unit: float

    @property
    def n_cells(self) -> int:
        return self.energy0.shape[0]

    @property
    def dimension(self) -> int:
        return self.momentum0.shape[1]


def cell_observables(basis: FockBasis, modes, grid: CellGrid, potential,
                     geom: BoxGeometry, order: int = 8, hbar: float = HBAR,
                     mass: float = MASS) -> CellObservables:
    energy0 = []
    momentum0 = []
    mass_ops = []
    for cell in range(grid.n_cells):
        energy0.append(energy_density_op(basis, modes, grid, cell, potential, geom,
                                         order=order, hbar=hbar, mass=mass))
        momentum0.append(momentum_density_op(basis, modes, grid, cell,
                                             hbar=hbar, mass=mass))
        mass_ops.append(mass_density_op(basis, modes, grid, cell, mass=mass))
    return CellObservables(grid, np.array(energy0), np.array(momentum0),
                           np.array(mass_ops), float(mass))


def boosted_energy(obs: CellObservables, cell: int, velocity) -> np.ndarray:
    """Cell energy in the frame moving with `velocity`."""
    v = np.asarray(velocity, dtype=float)
    out = obs.energy0[cell].copy()
    for ax in range(obs.dimension):
        out -= v[ax] * obs.momentum0[cell, ax]
    out += 0.5 * float(v @ v) * obs.mass[cell]
    return out


def boosted_momentum(obs: CellObservables, cell: int, velocity) -> np.ndarray:
    v = np.asarray(velocity, dtype=float)
    return obs.momentum0[cell] - v[:, None, None] * obs.mass[cell][None]


def constraint_operator_list(obs: CellObservables, velocity) -> list[np.ndarray]:
    """Multiplier-conjugate operators, cell energies first, then cell masses."""
    ops = [boosted_energy(obs, c, velocity[c]) for c in range(obs.n_cells)]
    ops.extend(obs.mass[c] for c in range(obs.n_cells))
    return ops


def targets_vector(targets: ConstraintSet) -> np.ndarray:
    return np.concatenate([targets.energy, targets.mass])


def fields_to_multipliers(fields: LagrangeFields) -> np.ndarray:
    """(beta_c, -beta_c mu_c): the linear coefficients of K over (energy, mass)."""
    return np.concatenate([fields.beta, -fields.beta * fields.mu])


def multipliers_to_fields(y: np.ndarray, velocity: np.ndarray) -> LagrangeFields:
    n = y.size // 2
    alpha = y[:n]
    if np.any(alpha <= 0.0):
        raise ValueError("fit landed at a non-positive inverse temperature")
    return LagrangeFields(beta=alpha, mu=-y[n:] / alpha, velocity=velocity)


@dataclass(frozen=True)
class GibbsState:
    weight: np.ndarray
    fields: LagrangeFields | None
    log_z: float
    k_matrix: np.ndarray
    probabilities: np.ndarray
    vectors: np.ndarray


def gibbs_from_operator(k: np.ndarray, fields: LagrangeFields | None = None) -> GibbsState:
    """exp(-k)/Z by spectral calculus, shift-guarded against overflow."""
    require_hermitian(k, name="exponent")
    evals, vecs = np.linalg.eigh(k)
    shifted = np.exp(-(evals - evals[0]))
    probs = shifted / shifted.sum()
    weight = (vecs * probs) @ vecs.conj().T
    log_z = float(scipy.special.logsumexp(-evals))
    return GibbsState(weight, fields, log_z, np.asarray(k), probs, vecs)


def gibbs_state(basis: FockBasis, obs: CellObservables,
                fields: LagrangeFields) -> GibbsState:
    if obs.energy0.shape[-1] != basis.dim:
        raise ValueError("observables were built on a different basis")
    if fields.n_cells != obs.n_cells:
        raise ValueError("field cell count does not match the observables")
    k = np.zeros((basis.dim, basis.dim), dtype=complex)
    for c in range(obs.n_cells):
        k += fields.beta[c] * (boosted_energy(obs, c, fields.velocity[c])
                               - fields.mu[c] * obs.mass[c])
    return gibbs_from_operator(k, fields)


def expectation(state, op: np.ndarray) -> float:
    """Tr(w A) for hermitian A; rejects values with a non-real trace."""
    weight = getattr(state, "weight", state)
    value = complex(np.trace(weight @ op))
    if abs(value.imag) > 1e-9 * (1.0 + abs(value)):
        raise ValueError(f"expectation has imaginary part {value.imag:.3e}")
    return float(value.real)


def constraint_values(state: GibbsState, obs: CellObservables):
    """Boosted-frame energy, mass, and momentum expectations per cell."""
    fields = state.fields
    if fields is None:
        raise ValueError("state carries no fields; build it with gibbs_state")
    energy = np.empty(obs.n_cells)
    mass_vals = np.empty(obs.n_cells)
    momentum = np.empty((obs.n_cells, obs.dimension))
    for c in range(obs.n_cells):
        energy[c] = expectation(state, boosted_energy(obs, c, fields.velocity[c]))
        mass_vals[c] = expectation(state, obs.mass[c])
        boosted = boosted_momentum(obs, c, fields.velocity[c])
        for ax in range(obs.dimension):
            momentum[c, ax] = expectation(state, boosted[ax])
    return energy, mass_vals, momentum


def entropy(state) -> float:
    """Spectral von Neumann entropy with 0 log 0 = 0; k = 1 internally."""
    if isinstance(state, GibbsState):
        probs = state.probabilities
    else:
        weight = np.asarray(state)
        probs = np.linalg.eigvalsh(weight)
    if np.min(probs) < -1e-10:
        raise ValueError(f"weight has negative eigenvalue {np.min(probs):.3e}")
    probs = np.clip(probs, 0.0, None)
    positive = probs[probs > 0.0]
    return float(-np.sum(positive * np.log(positive)))


def _km_kernel(probs: np.ndarray) -> np.ndarray:
    """Pairwise (p - q)/(ln p - ln q) with the diagonal limit p."""
    p = np.asarray(probs, dtype=float)
    logs = np.log(np.maximum(p, 1e-300))
    num = p[:, None] - p[None, :]
    den = logs[:, None] - logs[None, :]
    geo = np.sqrt(np.outer(p, p))
    small = np.abs(den) < 2e-6
    series = geo * (1.0 + (den * den) / 24.0)
    return np.where(small, series, num / np.where(small, 1.0, den))


def kubo_mori_susceptibility(state: GibbsState, a: np.ndarray, b: np.ndarray) -> float:
    """Exact derivative metric: chi(A, B) = d<A>/d(-lambda_B) on exp(-K) states."""
    at = state.vectors.conj().T @ a @ state.vectors
    bt = state.vectors.conj().T @ b @ state.vectors
    kernel = _km_kernel(state.probabilities)
    corr = np.einsum("ab,ab,ba->", kernel, at, bt)
    return float((corr - np.trace(state.weight @ a) * np.trace(state.weight @ b)).real)


def chi_matrix(state: GibbsState, ops) -> np.ndarray:
    """Symmetric susceptibility matrix over a list of hermitian operators."""
    transformed = np.array([state.vectors.conj().T @ op @ state.vectors for op in ops])
    kernel = _km_kernel(state.probabilities)
    corr = np.einsum("ab,iab,jba->ij", kernel, transformed, transformed)
    means = np.array([np.trace(state.weight @ op) for op in ops])
    chi = corr - np.outer(means, means)
    chi = 0.5 * (chi + chi.conj().T)
    return chi.real


@dataclass(frozen=True)
class FitResult:
    fields: LagrangeFields
    state: GibbsState
    iterations: int
    residual_norms: list
    converged: bool


def _dual_value(log_z: float, y: np.ndarray, targets: np.ndarray) -> float:
    return log_z + float(y @ targets)


def _newton_fit(ops, targets: np.ndarray, y0: np.ndarray, tol: float,
                max_iter: int) -> tuple[np.ndarray, GibbsState, int, list]:
    """Damped Newton on the dual potential ln Z + y . targets."""
    ops = np.asarray(ops)
    scales = np.maximum(1.0, np.abs(targets))
    y = np.asarray(y0, dtype=float).copy()
    trace = []
    state = gibbs_from_operator(np.einsum("i,iab->ab", y, ops))
    dual = _dual_value(state.log_z, y, targets)
    best = None
    for iteration in range(1, max_iter + 1):
        values = np.array([expectation(state, op) for op in ops])
        residual = values - targets
        trace.append(float(np.max(np.abs(residual) / scales)))
        if trace[-1] <= tol:
            # one polish step past the tolerance sharpens the multipliers
            # (quadratic convergence), keeping field recovery well inside
            # the residual-implied bound even for ill-conditioned chi
            if best is not None or trace[-1] <= 1e-13:
                return y, state, iteration - 1, trace
            best = (y.copy(), state, trace[-1])
        elif best is not None:
            y_best, state_best, res_best = best
            trace.append(res_best)
            return y_best, state_best, iteration - 1, trace
        chi = chi_matrix(state, ops)
        low = float(np.min(np.linalg.eigvalsh(chi)))
        if low < -CHI_PSD_TOL * max(1.0, float(np.max(np.abs(chi)))):
            raise ValueError(f"susceptibility matrix not positive semidefinite ({low:.3e})")
        # lstsq keeps consistent-but-degenerate constraint sets workable
        # (proportional observables); inconsistent ones fail to converge.
        step, *_ = np.linalg.lstsq(chi, residual, rcond=1e-12)
        if float(residual @ step) < -1e-12 * float(np.abs(residual) @ np.abs(step) + 1e-300):
            raise ValueError("Newton direction failed the descent check")
        if np.linalg.norm(step) > STEP_CAP * (1.0 + np.linalg.norm(y)):
            raise ValueError(
                "unbounded dual step: targets are infeasible for this observable set"
            )
        size = 1.0
        for _ in range(40):
            y_trial = y + size * step
            state_trial = gibbs_from_operator(np.einsum("i,iab->ab", y_trial, ops))
            dual_trial = _dual_value(state_trial.log_z, y_trial, targets)
            if dual_trial <= dual + 1e-12 * max(1.0, abs(dual)):
                break
            size *= 0.5
        y, state, dual = y_trial, state_trial, dual_trial
    raise ValueError(
        f"maximum-entropy fit did not converge in {max_iter} iterations; "
        f"last scaled residual {trace[-1]:.3e}"
    )


def _feasibility_check(obs: CellObservables, targets: ConstraintSet) -> None:
    for c in range(obs.n_cells):
        bounds = np.linalg.eigvalsh(obs.mass[c])
        lo, hi = float(bounds[0]), float(bounds[-1])
        margin = 1e-9 * max(1.0, abs(hi))
        if not (lo - margin <= targets.mass[c] <= hi + margin):
            raise ValueError(
                f"infeasible mass target {targets.mass[c]:.6g} for cell {c}: "
                f"attainable range [{lo:.6g}, {hi:.6g}]"
            )


def maxent_fit(basis: FockBasis, obs: CellObservables, targets: ConstraintSet,
               init: LagrangeFields | None = None, tol: float = FIT_TOL,
               max_iter: int = MAX_ITER, outer_iter: int = 25) -> FitResult:
    """Fit Lagrange fields so the Gibbs state meets the cell targets.

    Newton runs on the (energy, mass) multipliers at fixed velocity; the
    velocity is then re-solved from the rest-frame momentum expectations
    until self-consistent.
    """
    if targets.n_cells != obs.n_cells:
        raise ValueError("target cell count does not match the observables")
    _feasibility_check(obs, targets)
    t_vec = targets_vector(targets)
    n = obs.n_cells
    if init is None:
        total_ops = [obs.energy0.sum(axis=0), obs.mass.sum(axis=0)]
        total_targets = np.array([targets.energy.sum(), targets.mass.sum()])
        y2, _, _, _ = _newton_fit(total_ops, total_targets, np.array([1e-2, 0.0]),
                                  tol=1e-6, max_iter=max_iter)
        y = np.concatenate([np.full(n, y2[0]), np.full(n, y2[1])])
        velocity = np.zeros((n, obs.dimension))
    else:
        if init.n_cells != n:
            raise ValueError("initial fields cell count does not match")
        y = fields_to_multipliers(init)
        velocity = init.velocity.copy()
    iterations = 0
    trace: list = []
    for _ in range(outer_iter):
        ops = constraint_operator_list(obs, velocity)
        y, state, used, inner_trace = _newton_fit(ops, t_vec, y, tol, max_iter)
        iterations += used
        trace.extend(inner_trace)
        v_new = np.zeros_like(velocity)
        for c in range(n):
            mass_val = expectation(state, obs.mass[c])
            if mass_val > 1e-12:
                for ax in range(obs.dimension):
                    v_new[c, ax] = expectation(state, obs.momentum0[c, ax]) / mass_val
        if np.max(np.abs(v_new - velocity)) <= 1e-12 * (1.0 + np.max(np.abs(velocity))):
            velocity = v_new
            break
        velocity = v_new
    fields = multipliers_to_fields(y, velocity)
    final = gibbs_state(basis, obs, fields)
    return FitResult(fields, final, iterations, trace, True)


def constrained_perturbation(state: GibbsState, ops, rng,
                             scale: float = 1e-5) -> np.ndarray:
    """Random exponent perturbation projected to preserve <ops> to first order."""
    dim = state.weight.shape[0]
    raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = 0.5 * (raw + raw.conj().T)
    h /= frob(h)
    chi = chi_matrix(state, ops)
    coupling = np.array([kubo_mori_susceptibility(state, op, h) for op in ops])
    coeff, *_ = np.linalg.lstsq(chi, coupling, rcond=None)
    delta = h - np.einsum("i,iab->ab", coeff, np.asarray(ops))
    perturbed = gibbs_from_operator(state.k_matrix + scale * delta)
    return perturbed.weight
