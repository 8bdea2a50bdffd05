"""Coarse-grained collision generator acting on the bilinear family a†_h a_k.

The generator is assembled from on-shell pair amplitudes: a hermitian
effective two-body kernel plus energy-smeared jump amplitudes whose width
delta sets the window inside which a pair collision counts as resonant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .fieldmodel import HBAR, MASS, mode_energies
from .fock import FockBasis, Statistics, ladder_ops, one_body_operator, two_body_operator
from .matrixutil import comm, frob
from .scattering import onshell_tmatrix, pair_basis, tensor_from_pair_matrix

SUPPORT_FACTOR = 4.0
MASS_TOL = 1e-10
DOMAIN_TOL = 1e-10
POSITIVITY_TOL = 1e-10


def smearing_kernel(mismatch, delta: float):
    """Normalized Gaussian energy window, zeroed beyond SUPPORT_FACTOR * delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = np.asarray(mismatch, dtype=float)
    dense = np.exp(-0.5 * (x / delta) ** 2) / (delta * math.sqrt(2.0 * math.pi))
    return np.where(np.abs(x) <= SUPPORT_FACTOR * delta, dense, 0.0)


def default_delta(modes, statistics: Statistics) -> float:
    """Mean spacing of the distinct two-particle energies."""
    w = mode_energies(modes)
    pairs = pair_basis(len(modes), statistics)
    energies = np.sort([w[p1] + w[p2] for p1, p2 in pairs])
    gaps = np.diff(energies)
    gaps = gaps[gaps > 1e-9 * max(1.0, float(energies[-1]))]
    if gaps.size == 0:
        raise ValueError("pair spectrum is fully degenerate; provide delta explicitly")
    return float(np.mean(gaps))


@dataclass(frozen=True)
class GeneratorCoefficients:
    """Effective kernel, jump amplitudes, and the smearing width behind them.

    jump[k, l, f2, f1] multiplies a_{f2} a_{f1} in the channel operator for
    the outgoing pair (k, l); veff is the hermitian, exchange-symmetric
    two-body kernel of the effective Hamiltonian.
    """

    modes: tuple
    statistics: Statistics
    veff: np.ndarray
    jump: np.ndarray
    delta: float
    t_onshell: np.ndarray

    @property
    def n_modes(self) -> int:
        return len(self.modes)


def build_coefficients(modes, t_onshell: np.ndarray, statistics: Statistics,
                       delta: float, hbar: float = HBAR) -> GeneratorCoefficients:
    if delta <= 0:
        raise ValueError("delta must be positive")
    modes = tuple(modes)
    n = len(modes)
    pairs = pair_basis(n, statistics)
    t_onshell = np.asarray(t_onshell, dtype=complex)
    if t_onshell.shape != (len(pairs), len(pairs)):
        raise ValueError(
            f"on-shell matrix shape {t_onshell.shape} does not match "
            f"{len(pairs)} pair states"
        )
    herm = 0.5 * (t_onshell + t_onshell.conj().T)
    veff = tensor_from_pair_matrix(herm, pairs, statistics, n)
    t4 = tensor_from_pair_matrix(t_onshell, pairs, statistics, n)
    w = mode_energies(modes)
    mismatch = (w[:, None, None, None] + w[None, :, None, None]
                - w[None, None, :, None] - w[None, None, None, :])
    jump = np.sqrt((2.0 * np.pi / hbar) * smearing_kernel(mismatch, delta)) * t4
    return GeneratorCoefficients(modes, statistics, veff, jump, float(delta),
                                 t_onshell.copy())


def coefficients_from_potential(modes, vtensor, statistics: Statistics, eps: float,
                                delta: float | None = None, hbar: float = HBAR,
                                extrapolate: bool = True) -> GeneratorCoefficients:
    """On-shell solve followed by coefficient assembly."""
    t_on = onshell_tmatrix(modes, vtensor, statistics, eps, extrapolate=extrapolate)
    if delta is None:
        delta = default_delta(modes, statistics)
    return build_coefficients(modes, t_on, statistics, delta, hbar=hbar)


def channel_ops(basis: FockBasis, coeffs: GeneratorCoefficients,
                ladders: np.ndarray | None = None) -> np.ndarray:
    """Jump operators R[k, l] = sum jump[k, l, f2, f1] a_{f2} a_{f1}."""
    a = ladder_ops(basis) if ladders is None else ladders
    prod = np.einsum("fab,gbc->fgac", a, a)
    return np.einsum("klfg,fgac->klac", coeffs.jump, prod)


def gamma_op(basis: FockBasis, coeffs: GeneratorCoefficients,
             channels: np.ndarray | None = None) -> np.ndarray:
    """Loss operator: one quarter of the channel-summed R†R."""
    ch = channels if channels is not None else channel_ops(basis, coeffs)
    return 0.25 * np.einsum("klba,klbc->ac", ch.conj(), ch)


def effective_hamiltonian(basis: FockBasis, coeffs: GeneratorCoefficients) -> np.ndarray:
    w = mode_energies(coeffs.modes)
    return (one_body_operator(basis, np.diag(w).astype(complex))
            + two_body_operator(basis, coeffs.veff))


class Lprime:
    """Generator action on the bilinear family, with streaming/loss/gain split."""

    def __init__(self, basis: FockBasis, coeffs: GeneratorCoefficients,
                 hbar: float = HBAR):
        if basis.n_modes != coeffs.n_modes or basis.statistics is not coeffs.statistics:
            raise ValueError("basis does not match the coefficient set")
        self.basis = basis
        self.coeffs = coeffs
        self.hbar = float(hbar)
        self.a = ladder_ops(basis)
        self.adag = self.a.conj().transpose(0, 2, 1)
        self.h_eff = effective_hamiltonian(basis, coeffs)
        self.channels = channel_ops(basis, coeffs, ladders=self.a)
        self.gamma = gamma_op(basis, coeffs, channels=self.channels)
        self._bilinears = np.einsum("hab,kbc->hkac", self.adag, self.a)
        self._images: np.ndarray | None = None

    def bilinear(self, h: int, k: int) -> np.ndarray:
        return self._bilinears[h, k]

    def parts(self, h: int, k: int):
        """Streaming, loss, and gain contributions for a†_h a_k."""
        x = self._bilinears[h, k]
        stream = (1j / self.hbar) * comm(self.h_eff, x)
        loss = (-1.0 / self.hbar) * (
            comm(self.gamma, self.adag[h]) @ self.a[k]
            - self.adag[h] @ comm(self.gamma, self.a[k])
        )
        gain = (1.0 / self.hbar) * np.einsum(
            "lba,lbc->ac", self.channels[h].conj(), self.channels[k]
        )
        return stream, loss, gain

    def apply_bilinear(self, h: int, k: int) -> np.ndarray:
        stream, loss, gain = self.parts(h, k)
        return stream + loss + gain

    def images(self) -> np.ndarray:
        """All bilinear images, indexed [h, k]."""
        if self._images is None:
            n = self.basis.n_modes
            dim = self.basis.dim
            out = np.empty((n, n, dim, dim), dtype=complex)
            for h in range(n):
                for k in range(n):
                    out[h, k] = self.apply_bilinear(h, k)
            self._images = out
        return self._images

    def bilinear_coefficients(self, x: np.ndarray) -> np.ndarray:
        """Expand x over a†_h a_k by a Gram solve; reject operators outside the span."""
        n = self.basis.n_modes
        flat = self._bilinears.reshape(n * n, -1)
        gram = flat.conj() @ flat.T
        coeff = np.linalg.solve(gram, flat.conj() @ x.ravel())
        residual = frob(x - (coeff @ flat).reshape(x.shape))
        scale = max(frob(x), 1.0)
        if residual > DOMAIN_TOL * scale:
            raise ValueError(
                f"operator lies outside the bilinear family: relative residual "
                f"{residual / scale:.3e}"
            )
        return coeff.reshape(n, n)

    def apply(self, x: np.ndarray) -> np.ndarray:
        coeff = self.bilinear_coefficients(x)
        return np.einsum("hk,hkac->ac", coeff, self.images())


@dataclass(frozen=True)
class PositivityReport:
    n_samples: int
    tau_max: float
    min_real: float
    max_imag: float
    passed: bool
    worst_sample: int
    worst_tau: float


def positivity_check(basis: FockBasis, coeffs: GeneratorCoefficients,
                     n_samples: int = 1000, tau_max: float = 1e-3,
                     seed: int = 0, hbar: float = HBAR,
                     lp: Lprime | None = None) -> PositivityReport:
    """Sampled positivity of I + tau L' on random normalized vector families.

    Q = sum_hk <psi_h | [(I + tau L')(a†_h a_k)] psi_k> must stay real and
    non-negative within POSITIVITY_TOL for tau in (0, tau_max].
    """
    if tau_max <= 0:
        raise ValueError("tau_max must be positive")
    if lp is None:
        lp = Lprime(basis, coeffs, hbar=hbar)
    imgs = lp.images()
    rng = np.random.default_rng(seed)
    n = basis.n_modes
    min_real = math.inf
    max_imag = 0.0
    worst_sample = -1
    worst_tau = 0.0
    for i in range(n_samples):
        psi = rng.standard_normal((n, basis.dim)) + 1j * rng.standard_normal((n, basis.dim))
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        tau = tau_max * (1.0 - rng.uniform())
        phi = np.einsum("kab,kb->a", lp.a, psi)
        q0 = float(np.real(np.vdot(phi, phi)))
        q1 = complex(np.einsum("ha,hkab,kb->", psi.conj(), imgs, psi))
        q = q0 + tau * q1
        if q.real < min_real:
            min_real = q.real
            worst_sample = i
            worst_tau = tau
        max_imag = max(max_imag, abs(q.imag))
    passed = min_real > -POSITIVITY_TOL and max_imag <= POSITIVITY_TOL
    return PositivityReport(n_samples, tau_max, min_real, max_imag, passed,
                            worst_sample, worst_tau)


@dataclass(frozen=True)
class NegativeTauWitness:
    tau: float
    q_value: float
    gain_form: float
    family: np.ndarray


def negative_tau_witness(basis: FockBasis, coeffs: GeneratorCoefficients,
                         tau: float = -1e-3, seed: int = 0, tries: int = 64,
                         hbar: float = HBAR,
                         lp: Lprime | None = None) -> NegativeTauWitness:
    """Family with Q < 0 at negative tau, built in the kernel of the a-stack.

    There Q reduces to tau times the non-negative gain form, so any family
    the jump operators do not annihilate witnesses the time orientation.
    """
    if tau >= 0:
        raise ValueError("tau must be negative")
    if lp is None:
        lp = Lprime(basis, coeffs, hbar=hbar)
    n = basis.n_modes
    stack = np.concatenate(list(lp.a), axis=1)
    kernel = scipy.linalg.null_space(stack)
    if kernel.size == 0:
        raise ValueError("annihilator stack has no kernel to probe")
    rng = np.random.default_rng(seed)
    imgs = lp.images()
    for _ in range(tries):
        combo = kernel @ (rng.standard_normal(kernel.shape[1])
                          + 1j * rng.standard_normal(kernel.shape[1]))
        psi = combo.reshape(n, basis.dim)
        psi = psi / np.linalg.norm(psi)
        phi_r = np.einsum("klab,kb->la", lp.channels, psi)
        gain_form = float(np.sum(np.abs(phi_r) ** 2)) / hbar
        if gain_form > 1e-12:
            phi = np.einsum("kab,kb->a", lp.a, psi)
            q0 = float(np.real(np.vdot(phi, phi)))
            q1 = complex(np.einsum("ha,hkab,kb->", psi.conj(), imgs, psi))
            q = q0 + tau * q1
            return NegativeTauWitness(tau, q.real, gain_form, psi)
    raise ValueError(
        "no negative-time violation found: jump amplitudes vanish on the "
        "probed kernel families"
    )


@dataclass(frozen=True)
class ConservationReport:
    delta: float
    mass_residual: float
    energy_residual: float
    energy_streaming: float
    energy_collision: float


def conservation_report(basis: FockBasis, coeffs: GeneratorCoefficients,
                        hbar: float = HBAR, mass: float = MASS,
                        lp: Lprime | None = None) -> ConservationReport:
    """Residual norms of the generator on total mass and free energy.

    Mass must be conserved structurally; the energy residual is reported,
    split into the delta-independent streaming part and the collision part
    that shrinks as the smearing narrows onto resonant channels.
    """
    if lp is None:
        lp = Lprime(basis, coeffs, hbar=hbar)
    n = basis.n_modes
    w = mode_energies(coeffs.modes)
    number_image = np.zeros((basis.dim, basis.dim), dtype=complex)
    energy_image = np.zeros_like(number_image)
    for h in range(n):
        img = lp.apply_bilinear(h, h)
        number_image += img
        energy_image += w[h] * img
    mass_residual = mass * frob(number_image)
    if mass_residual > MASS_TOL:
        raise ValueError(f"mass conservation violated: residual {mass_residual:.3e}")
    h0 = one_body_operator(basis, np.diag(w).astype(complex))
    streaming = (1j / hbar) * comm(lp.h_eff, h0)
    collision = energy_image - streaming
    return ConservationReport(
        delta=coeffs.delta,
        mass_residual=float(mass_residual),
        energy_residual=float(frob(energy_image)),
        energy_streaming=float(frob(streaming)),
        energy_collision=float(frob(collision)),
    )
