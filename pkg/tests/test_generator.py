"""Generator assembly checks: jump amplitudes, loss operator, bilinear action."""

import math

import numpy as np
import pytest

from boxgas.fieldmodel import (
    HBAR,
    BoxGeometry,
    Contact,
    Gaussian,
    modes_from_numbers,
    potential_tensor,
)
from boxgas.fock import Statistics, build_basis, creation_op, ladder_ops
from boxgas.generator import (
    ConservationReport,
    GeneratorCoefficients,
    Lprime,
    build_coefficients,
    channel_ops,
    coefficients_from_potential,
    conservation_report,
    default_delta,
    effective_hamiltonian,
    gamma_op,
    negative_tau_witness,
    positivity_check,
    smearing_kernel,
)
from boxgas.matrixutil import frob
from boxgas.scattering import onshell_tmatrix, pair_basis, pair_energies

GEOM = BoxGeometry((1.0,))
U = 0.5 * math.pi**2


def modes_1d(numbers):
    return modes_from_numbers(GEOM, [(n,) for n in numbers])


def two_particle_state(basis, f1, f2):
    vac = np.zeros(basis.dim)
    vac[basis.state_index((0,) * basis.n_modes)] = 1.0
    state = creation_op(basis, f1) @ creation_op(basis, f2) @ vac
    return state / np.linalg.norm(state)


def gauss_window(mismatch, delta):
    if abs(mismatch) > 4.0 * delta:
        return 0.0
    return math.exp(-0.5 * (mismatch / delta) ** 2) / (delta * math.sqrt(2.0 * math.pi))


def rate_matrix(modes, t_on, statistics, delta):
    """Pair-level jump amplitudes kappa * T used as the test-side oracle."""
    pairs = pair_basis(len(modes), statistics)
    energies = pair_energies(modes, pairs)
    out = np.zeros_like(t_on)
    for i, ei in enumerate(energies):
        for j, ej in enumerate(energies):
            kappa = math.sqrt(2.0 * math.pi / HBAR * gauss_window(ei - ej, delta))
            out[i, j] = kappa * t_on[i, j]
    return out


def contact_coefficients(numbers=(1, 2, 3), g=1.3, eps=10.0, delta=5.0,
                         statistics=Statistics.BOSE):
    modes = modes_1d(numbers)
    vt = potential_tensor(modes, Contact(g), GEOM)
    t_on = onshell_tmatrix(modes, vt, statistics, eps)
    return modes, t_on, build_coefficients(modes, t_on, statistics, delta)


def test_smearing_kernel_matches_scalar_formula():
    delta = 1.7
    for x in (0.0, 0.4, -2.2, 6.7):
        expected = math.exp(-0.5 * (x / delta) ** 2) / (delta * math.sqrt(2 * math.pi))
        assert smearing_kernel(x, delta) == pytest.approx(expected, rel=1e-14)
    assert smearing_kernel(4.0 * delta + 1e-9, delta) == 0.0
    assert smearing_kernel(-4.0 * delta - 1e-9, delta) == 0.0
    with pytest.raises(ValueError):
        smearing_kernel(1.0, 0.0)


def test_default_delta_is_mean_pair_gap():
    modes = modes_1d([1, 2, 3])
    # pair energies in units of pi^2/2: 2, 5, 8, 10, 13, 18 -> gaps 3, 3, 2, 3, 5
    assert default_delta(modes, Statistics.BOSE) == pytest.approx(3.2 * U, rel=1e-12)
    # Fermi keeps 5, 10, 13 -> gaps 5, 3
    assert default_delta(modes, Statistics.FERMI) == pytest.approx(4.0 * U, rel=1e-12)


def test_build_coefficients_entries_and_cutoff():
    modes = modes_1d([1, 2])
    pairs = pair_basis(2, Statistics.BOSE)
    t_on = np.eye(len(pairs)) + 0.1j * np.ones((len(pairs), len(pairs)))
    delta = 2.0 * U
    coeffs = build_coefficients(modes, t_on, Statistics.BOSE, delta)
    energies = pair_energies(modes, pairs)
    for i, (p1, p2) in enumerate(pairs):
        for j, (q1, q2) in enumerate(pairs):
            norm_i = 1.0 / math.sqrt(2.0) if p1 == p2 else 1.0
            norm_j = 1.0 / math.sqrt(2.0) if q1 == q2 else 1.0
            spread = 0.5 * t_on[i, j] / (norm_i * norm_j)
            kappa = math.sqrt(
                2.0 * math.pi / HBAR * gauss_window(energies[i] - energies[j], delta)
            )
            assert coeffs.jump[p1, p2, q2, q1] == pytest.approx(kappa * spread, rel=1e-12)
    # (1,1) -> (2,2) sits 4 energy units out, beyond the 4*delta support at small delta
    narrow = build_coefficients(modes, t_on, Statistics.BOSE, 0.9 * U)
    assert narrow.jump[1, 1, 0, 0] == 0.0
    assert np.abs(narrow.jump[0, 0, 0, 0]) > 0.0
    with pytest.raises(ValueError):
        build_coefficients(modes, t_on, Statistics.BOSE, 0.0)
    with pytest.raises(ValueError):
        build_coefficients(modes, t_on[:2, :2], Statistics.BOSE, 1.0)


def test_veff_hermitian_exchange_symmetric_and_born():
    modes = modes_1d([1, 2, 3])
    g, eps = 1e-3, 0.1
    vt = potential_tensor(modes, Contact(g), GEOM)
    coeffs = coefficients_from_potential(modes, vt, Statistics.BOSE, eps, delta=5.0)
    v = coeffs.veff
    assert frob(v - v.transpose(3, 2, 1, 0).conj()) < 1e-12 * max(1.0, frob(v))
    assert frob(v - v.transpose(1, 0, 3, 2)) < 1e-12 * max(1.0, frob(v))
    # weak coupling at finite eps: effective kernel reduces to the bare one
    assert frob(v - vt) < 0.05 * frob(vt)
    h_eff = effective_hamiltonian(build_basis(3, 2, Statistics.BOSE), coeffs)
    assert frob(h_eff - h_eff.conj().T) < 1e-11


@pytest.mark.parametrize("statistics", [Statistics.BOSE, Statistics.FERMI])
def test_channel_norms_match_pair_amplitudes(statistics):
    modes, t_on, coeffs = contact_coefficients(statistics=statistics)
    basis = build_basis(3, 2, statistics)
    channels = channel_ops(basis, coeffs)
    pairs = pair_basis(3, statistics)
    rates = rate_matrix(modes, t_on, statistics, coeffs.delta)
    index = {p: i for i, p in enumerate(pairs)}
    for k in range(3):
        for lam in range(3):
            pair = (min(k, lam), max(k, lam))
            if pair not in index:
                assert frob(channels[k, lam]) == 0.0
                continue
            boost = math.sqrt(2.0) if k == lam else 1.0
            for j, (q1, q2) in enumerate(pairs):
                q = two_particle_state(basis, q1, q2)
                expected = boost * abs(rates[index[pair], j])
                assert np.linalg.norm(channels[k, lam] @ q) == pytest.approx(
                    expected, rel=1e-10, abs=1e-12
                )
    # jump operators act only on the two-particle sector
    low = basis.totals() < 2
    assert np.all(channels[:, :, :, low] == 0.0)


@pytest.mark.parametrize("statistics", [Statistics.BOSE, Statistics.FERMI])
def test_gamma_golden_rule_diagonal(statistics):
    modes, t_on, coeffs = contact_coefficients(statistics=statistics)
    basis = build_basis(3, 2, statistics)
    gamma = gamma_op(basis, coeffs)
    assert frob(gamma - gamma.conj().T) < 1e-12 * max(1.0, frob(gamma))
    assert np.min(np.linalg.eigvalsh(gamma)) > -1e-12
    pairs = pair_basis(3, statistics)
    rates = rate_matrix(modes, t_on, statistics, coeffs.delta)
    for j, (q1, q2) in enumerate(pairs):
        q = two_particle_state(basis, q1, q2)
        total = 0.5 * np.sum(np.abs(rates[:, j]) ** 2)
        assert np.vdot(q, gamma @ q).real == pytest.approx(total, rel=1e-10, abs=1e-13)


def test_channel_trace_balance():
    modes, t_on, coeffs = contact_coefficients()
    basis = build_basis(3, 2, Statistics.BOSE)
    channels = channel_ops(basis, coeffs)
    pairs = pair_basis(3, Statistics.BOSE)
    rates = rate_matrix(modes, t_on, Statistics.BOSE, coeffs.delta)
    index = {p: i for i, p in enumerate(pairs)}
    total_operator = 0.0
    total_rates = 0.0
    for k in range(3):
        for lam in range(3):
            op_trace = np.trace(channels[k, lam].conj().T @ channels[k, lam]).real
            weight = 2.0 if k == lam else 1.0
            rate_sum = weight * np.sum(np.abs(rates[index[(min(k, lam), max(k, lam))]]) ** 2)
            assert op_trace == pytest.approx(rate_sum, rel=1e-9, abs=1e-12)
            total_operator += op_trace
            total_rates += rate_sum
    gamma = gamma_op(basis, coeffs, channels=channels)
    assert 4.0 * np.trace(gamma).real == pytest.approx(total_operator, rel=1e-12)
    assert total_operator == pytest.approx(total_rates, rel=1e-9)


def test_free_generator_is_pure_streaming():
    modes = modes_1d([1, 2, 3])
    pairs = pair_basis(3, Statistics.BOSE)
    t_on = np.zeros((len(pairs), len(pairs)), dtype=complex)
    coeffs = build_coefficients(modes, t_on, Statistics.BOSE, 1.0)
    basis = build_basis(3, 2, Statistics.BOSE)
    lp = Lprime(basis, coeffs)
    w = np.array([m.w for m in modes])
    a = ladder_ops(basis)
    adag = a.conj().transpose(0, 2, 1)
    for h in range(3):
        for k in range(3):
            expected = (1j / HBAR) * (w[h] - w[k]) * (adag[h] @ a[k])
            assert frob(lp.apply_bilinear(h, k) - expected) < 1e-12 * max(1.0, frob(expected))
    report = conservation_report(basis, coeffs)
    assert report.mass_residual == 0.0
    assert report.energy_residual < 1e-12
    assert report.energy_collision < 1e-12
    assert positivity_check(basis, coeffs, n_samples=100, tau_max=1e-3, seed=3, lp=lp).passed
    with pytest.raises(ValueError, match="vanish"):
        negative_tau_witness(basis, coeffs, lp=lp)


@pytest.mark.parametrize("statistics", [Statistics.BOSE, Statistics.FERMI])
def test_hermiticity_compatible_action(statistics):
    _, _, coeffs = contact_coefficients(g=1.5, statistics=statistics)
    basis = build_basis(3, 2, statistics)
    lp = Lprime(basis, coeffs)
    for h in range(3):
        for k in range(3):
            left = lp.apply_bilinear(h, k).conj().T
            right = lp.apply_bilinear(k, h)
            assert frob(left - right) < 1e-12 * max(1.0, frob(right))


def test_mass_conserved_by_collisions():
    _, _, coeffs = contact_coefficients(g=2.0)
    basis = build_basis(3, 2, Statistics.BOSE)
    lp = Lprime(basis, coeffs)
    image = sum(lp.apply_bilinear(h, h) for h in range(3))
    assert frob(image) < 1e-10
    report = conservation_report(basis, coeffs, lp=lp)
    assert report.mass_residual < 1e-10
    assert report.energy_residual > 0.0
    assert isinstance(report, ConservationReport)


def test_energy_residual_shrinks_with_smearing_width():
    # 1D numbers {1, 4, 7, 8}: the pair (1,8) is exactly degenerate with (4,7)
    # and couples to it; parity keeps the closest coupled off-resonant channels
    # 18 energy units (~88.8) away, so the 4-delta support prunes them in turn.
    geom = BoxGeometry((1.0,))
    modes = modes_from_numbers(geom, [(1,), (4,), (7,), (8,)])
    vt = potential_tensor(modes, Gaussian(1.0, 0.25), geom, order=32)
    t_on = onshell_tmatrix(modes, vt, Statistics.BOSE, 5.0)
    basis = build_basis(4, 2, Statistics.BOSE)
    reports = []
    for delta in (48.0, 24.0, 12.0):
        coeffs = build_coefficients(modes, t_on, Statistics.BOSE, delta)
        reports.append(conservation_report(basis, coeffs))
    streams = [r.energy_streaming for r in reports]
    assert streams[0] > 0.0
    assert max(streams) - min(streams) < 1e-12 * streams[0]
    collisions = [r.energy_collision for r in reports]
    assert collisions[0] > 0.0
    assert collisions[0] >= 2.0 * collisions[1]
    assert collisions[1] >= 2.0 * collisions[2]


def test_positivity_sampled_families():
    _, _, coeffs = contact_coefficients(g=1.0)
    basis = build_basis(3, 2, Statistics.BOSE)
    report = positivity_check(basis, coeffs, n_samples=300, tau_max=1e-3, seed=7)
    assert report.passed
    assert report.min_real > -1e-10
    assert report.max_imag <= 1e-10
    assert 0.0 < report.worst_tau <= 1e-3
    with pytest.raises(ValueError):
        positivity_check(basis, coeffs, n_samples=10, tau_max=0.0)


def test_negative_tau_witness_flips_sign():
    _, _, coeffs = contact_coefficients(g=1.0)
    basis = build_basis(3, 2, Statistics.BOSE)
    witness = negative_tau_witness(basis, coeffs, tau=-1e-3, seed=11)
    assert witness.gain_form > 0.0
    assert witness.q_value < -1e-12
    assert witness.q_value == pytest.approx(-1e-3 * witness.gain_form, rel=1e-6)
    with pytest.raises(ValueError):
        negative_tau_witness(basis, coeffs, tau=0.5)


def test_apply_expands_over_bilinears():
    modes, _, coeffs = contact_coefficients(g=1.2)
    basis = build_basis(3, 2, Statistics.BOSE)
    lp = Lprime(basis, coeffs)
    w = np.array([m.w for m in modes])
    a = ladder_ops(basis)
    adag = a.conj().transpose(0, 2, 1)
    h0 = sum(w[h] * adag[h] @ a[h] for h in range(3))
    coeff = lp.bilinear_coefficients(h0)
    assert np.allclose(coeff, np.diag(w), atol=1e-10)
    rng = np.random.default_rng(5)
    c = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    x = np.einsum("hk,hab,kbc->ac", c, adag, a)
    direct = np.einsum("hk,hkac->ac", c, lp.images())
    assert frob(lp.apply(x) - direct) < 1e-10 * max(1.0, frob(direct))
    # a two-particle projector has no bilinear expansion
    q = two_particle_state(basis, 0, 1)
    with pytest.raises(ValueError, match="bilinear"):
        lp.apply(np.outer(q, q.conj()))


def test_lprime_rejects_mismatched_basis():
    _, _, coeffs = contact_coefficients()
    with pytest.raises(ValueError, match="match"):
        Lprime(build_basis(4, 2, Statistics.BOSE), coeffs)
    with pytest.raises(ValueError, match="match"):
        Lprime(build_basis(3, 2, Statistics.FERMI), coeffs)
