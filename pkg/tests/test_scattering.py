import numpy as np
import pytest
import scipy.linalg

from boxgas.fieldmodel import BoxGeometry, Contact, box_modes, contact_tensor, hamiltonian, mode_energies
from boxgas.fock import Statistics, build_basis, creation_op, annihilation_op, two_body_operator
from boxgas.matrixutil import comm, vec, unvec
from boxgas.scattering import (
    CoarseWindow,
    SingularQuery,
    WindowError,
    coarse_grained_check,
    coarse_window,
    collision_time_estimate,
    heisenberg_evolve,
    liouvillian,
    onshell_tmatrix,
    pair_basis,
    pair_energies,
    pair_matrix_from_tensor,
    resolvent_apply,
    scaling_exponent,
    scattering_map_apply,
    spectral_decomposition,
    tensor_from_pair_matrix,
    two_body_tmatrix,
)

GEOM = BoxGeometry((1.0,))


def random_hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (a + a.conj().T)


def test_spectral_decomposition_reconstructs():
    rng = np.random.default_rng(0)
    h = random_hermitian(rng, 6)
    dec = spectral_decomposition(h)
    assert np.linalg.norm(dec.reconstruct() - h) < 1e-12
    with pytest.raises(ValueError, match="hermitian"):
        spectral_decomposition(h + 0.1j * np.eye(6))


def test_heisenberg_identity_and_energy_conservation():
    rng = np.random.default_rng(1)
    h = random_hermitian(rng, 5)
    x = random_hermitian(rng, 5)
    assert np.allclose(heisenberg_evolve(h, x, 0.0), x, atol=1e-13)
    assert np.allclose(heisenberg_evolve(h, h, 1.7), h, atol=1e-12)


def test_heisenberg_short_time_derivative():
    rng = np.random.default_rng(2)
    h = random_hermitian(rng, 5)
    x = random_hermitian(rng, 5)
    target = 1j * comm(h, x)
    errs = []
    for t in (1e-3, 5e-4):
        approx = (heisenberg_evolve(h, x, t) - x) / t
        errs.append(np.linalg.norm(approx - target))
    assert errs[1] < 0.6 * errs[0]  # first-order remainder shrinks linearly


def test_heisenberg_preserves_spectrum_and_group_law():
    rng = np.random.default_rng(3)
    h = random_hermitian(rng, 6)
    x = random_hermitian(rng, 6)
    y = heisenberg_evolve(h, x, 0.9)
    assert np.allclose(np.linalg.eigvalsh(y), np.linalg.eigvalsh(x), atol=1e-10)
    once = heisenberg_evolve(h, heisenberg_evolve(h, x, 0.4), 0.5)
    assert np.linalg.norm(once - y) < 1e-10


def test_liouvillian_eigenoperators_and_kernel():
    energies = np.array([0.3, 1.1, 2.4])
    h = np.diag(energies).astype(complex)
    sup = liouvillian(h)
    n = 3
    for a in range(n):
        for b in range(n):
            x = np.zeros((n, n), dtype=complex)
            x[a, b] = 1.0
            out = unvec(sup @ vec(x), n)
            assert np.allclose(out, 1j * (energies[a] - energies[b]) * x, atol=1e-13)
    assert np.allclose(unvec(sup @ vec(np.eye(3, dtype=complex)), 3), 0.0, atol=1e-13)


def test_liouvillian_exponential_matches_heisenberg():
    rng = np.random.default_rng(4)
    h = random_hermitian(rng, 4)
    x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    t = 0.37
    via_series = unvec(scipy.linalg.expm(t * liouvillian(h)) @ vec(x), 4)
    via_spectral = heisenberg_evolve(h, x, t)
    assert np.linalg.norm(via_series - via_spectral) < 1e-10


def test_resolvent_explicit_cases():
    rng = np.random.default_rng(5)
    h = random_hermitian(rng, 5)
    z = 0.8 + 0.6j
    assert np.allclose(resolvent_apply(h, z, np.eye(5, dtype=complex)), np.eye(5) / z, atol=1e-12)
    hnorm = np.linalg.norm(liouvillian(h), 2)
    big = 1e6 * hnorm
    x = random_hermitian(rng, 5)
    assert np.linalg.norm(big * resolvent_apply(h, big, x) - x) < 1e-4


def test_resolvent_residual_random_instances():
    rng = np.random.default_rng(6)
    for _ in range(10):
        n = int(rng.integers(3, 7))
        h = random_hermitian(rng, n)
        x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        z = complex(rng.normal(), 0.5 + rng.uniform())
        y = resolvent_apply(h, z, x)
        residual = z * y - 1j * comm(h, y) - x
        assert np.linalg.norm(residual) < 1e-10


def test_resolvent_singular_query():
    h = np.diag([0.0, 1.0]).astype(complex)
    x = np.eye(2, dtype=complex)
    with pytest.raises(SingularQuery):
        resolvent_apply(h, 1j * (1.0 - 0.0), x)


def test_scattering_map_zero_potential():
    rng = np.random.default_rng(7)
    h0 = random_hermitian(rng, 4)
    x = random_hermitian(rng, 4)
    out = scattering_map_apply(h0, np.zeros((4, 4), dtype=complex), 0.3 + 0.4j, x)
    assert np.linalg.norm(out) < 1e-13


def test_scattering_map_born_limit():
    rng = np.random.default_rng(8)
    h0 = random_hermitian(rng, 4)
    v1 = 0.02 * random_hermitian(rng, 4)
    x = random_hermitian(rng, 4)
    z = 0.5 + 0.7j
    errs = []
    for v in (v1, 0.5 * v1):
        born = 1j * comm(v, x)
        errs.append(np.linalg.norm(scattering_map_apply(h0, v, z, x) - born))
    # remainder is quadratic in the coupling
    assert errs[1] < 0.35 * errs[0]


def test_resolvent_identity_with_scattering_map():
    # (z-H')^{-1} = (z-H'_0)^{-1} + (z-H'_0)^{-1} T(z) (z-H'_0)^{-1}
    rng = np.random.default_rng(9)
    n = 5
    h0 = random_hermitian(rng, n)
    v = 0.4 * random_hermitian(rng, n)
    x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    for _ in range(5):
        z = complex(rng.normal(scale=2.0), 0.4 + rng.uniform())
        lhs = resolvent_apply(h0 + v, z, x)
        free = resolvent_apply(h0, z, x)
        rhs = free + resolvent_apply(h0, z, scattering_map_apply(h0, v, z, free))
        assert np.linalg.norm(lhs - rhs) < 1e-9


def test_pair_matrix_matches_fock_sector():
    geom = GEOM
    modes = box_modes(geom, 3)
    tensor = contact_tensor(modes, Contact(g=0.8), geom)
    for stats in (Statistics.BOSE, Statistics.FERMI):
        basis = build_basis(3, 2, stats)
        v_op = two_body_operator(basis, tensor.astype(complex))
        pairs = pair_basis(3, stats)
        dim = basis.dim
        vecs = []
        for p1, p2 in pairs:
            vac = np.zeros(dim)
            vac[basis.state_index((0, 0, 0))] = 1.0
            state = creation_op(basis, p1) @ creation_op(basis, p2) @ vac
            vecs.append(state / np.linalg.norm(state))
        fock_block = np.array(
            [[np.vdot(vi, v_op @ vj) for vj in vecs] for vi in vecs]
        )
        direct = pair_matrix_from_tensor(tensor, pairs, stats)
        assert np.max(np.abs(fock_block - direct)) < 1e-12


def test_pair_tensor_round_trip():
    rng = np.random.default_rng(10)
    for stats in (Statistics.BOSE, Statistics.FERMI):
        pairs = pair_basis(3, stats)
        n = len(pairs)
        m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        m = 0.5 * (m + m.conj().T)
        tensor = tensor_from_pair_matrix(m, pairs, stats, 3)
        back = pair_matrix_from_tensor(tensor, pairs, stats)
        assert np.max(np.abs(back - m)) < 1e-12
        assert np.max(np.abs(tensor - tensor.conj().transpose(3, 2, 1, 0))) < 1e-12
        assert np.max(np.abs(tensor - tensor.transpose(1, 0, 3, 2))) < 1e-12


def test_tmatrix_zero_potential():
    modes = box_modes(GEOM, 3)
    zero = np.zeros((3, 3, 3, 3))
    t = two_body_tmatrix(modes, zero, Statistics.BOSE, 1.0 + 1e-2j)
    assert np.linalg.norm(t.matrix) == 0.0
    assert collision_time_estimate(t.matrix) == np.inf


def test_tmatrix_matches_direct_inversion():
    modes = box_modes(GEOM, 3)
    tensor = contact_tensor(modes, Contact(g=0.6), GEOM)
    z = 11.0 + 0.05j
    t = two_body_tmatrix(modes, tensor, Statistics.BOSE, z)
    g0 = np.diag(1.0 / (z - t.energies))
    oracle = t.v_pair @ np.linalg.inv(np.eye(len(t.energies)) - g0 @ t.v_pair)
    assert np.max(np.abs(t.matrix - oracle)) < 1e-10


def test_tmatrix_offshell_unitarity():
    modes = box_modes(GEOM, 3)
    tensor = contact_tensor(modes, Contact(g=0.9), GEOM)
    for z in (8.0 + 0.3j, 20.0 + 0.05j):
        t = two_body_tmatrix(modes, tensor, Statistics.BOSE, z)
        g0 = np.diag(1.0 / (z - t.energies))
        lhs = t.matrix - t.matrix.conj().T
        rhs = t.matrix @ (g0 - g0.conj().T) @ t.matrix.conj().T
        assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_tmatrix_born_scaling():
    # Born regime needs the coupling well below the energy resolution eps,
    # otherwise the resonant 1/eps term of G0 dominates
    modes = box_modes(GEOM, 3)
    rel = []
    for g in (1e-4, 5e-5):
        tensor = contact_tensor(modes, Contact(g=g), GEOM)
        t = onshell_tmatrix(modes, tensor, Statistics.BOSE, eps=0.1)
        v_pair = pair_matrix_from_tensor(tensor, pair_basis(3, Statistics.BOSE), Statistics.BOSE)
        rel.append(np.linalg.norm(t - v_pair) / np.linalg.norm(v_pair))
    assert rel[0] < 0.05
    assert rel[1] == pytest.approx(0.5 * rel[0], rel=0.15)


def test_tmatrix_condition_guard():
    modes = box_modes(GEOM, 3)
    tensor = contact_tensor(modes, Contact(g=50.0), GEOM)
    pairs = pair_basis(3, Statistics.BOSE)
    energies = pair_energies(modes, pairs)
    with pytest.raises(ValueError, match="epsilon"):
        two_body_tmatrix(modes, tensor, Statistics.BOSE, float(energies[0]) + 1e-13j)


def test_collision_time_scaling_and_correlation():
    modes = box_modes(GEOM, 3)
    taus = []
    for g in (1e-4, 2e-4):
        tensor = contact_tensor(modes, Contact(g=g), GEOM)
        t_on = onshell_tmatrix(modes, tensor, Statistics.BOSE, eps=0.1)
        taus.append(collision_time_estimate(t_on))
    assert taus[1] == pytest.approx(0.5 * taus[0], rel=0.05)

    # independent oracle: the memory time of the interaction, defined as the
    # area under |<[V(t), V]>| divided by its peak, should agree with tau0
    # within a factor of 3 once the energy resolution blurs the level spacing
    basis = build_basis(3, 2, Statistics.BOSE)
    w = mode_energies(modes)
    h0 = np.diag([float(w @ occ) for occ in basis.states]).astype(complex)
    unit = contact_tensor(modes, Contact(g=1.0), GEOM)
    v_unit = two_body_operator(basis, unit.astype(complex))
    dim = basis.dim
    rho = np.eye(dim) / dim
    times = np.linspace(0.0, 1.5, 400)
    corr = []
    for t in times:
        vt = heisenberg_evolve(h0, v_unit, float(t))
        corr.append(abs(np.trace(rho @ comm(vt, v_unit))))
    corr = np.array(corr)
    trapz = getattr(np, "trapezoid", np.trapz)
    tau_corr = float(trapz(corr, times) / corr.max())
    for g in (2.0, 4.0):
        tensor = contact_tensor(modes, Contact(g=g), GEOM)
        tau0 = collision_time_estimate(onshell_tmatrix(modes, tensor, Statistics.BOSE, eps=10.0))
        assert 1.0 / 3.0 < tau0 / tau_corr < 3.0


def test_coarse_window_bounds_and_cap():
    win = coarse_window(tau0=0.1, w_h=2.0, w_k=2.0)
    assert win.t_max == np.inf
    assert win.times[0] == pytest.approx(0.5)
    assert win.times[-1] == pytest.approx(5.0)  # 50 * tau0
    win2 = coarse_window(tau0=1e-3, w_h=1.0, w_k=1.2)
    assert win2.times[-1] <= (1.0 / 0.2) / 5.0 + 1e-12
    assert win2.times[0] >= 5e-3 - 1e-15


def test_coarse_window_empty_raises():
    # off-diagonal 1D bilinears at weak coupling: phase time shorter than
    # five collision times on either side
    with pytest.raises(WindowError, match="no coarse-grained regime"):
        coarse_window(tau0=1.0, w_h=0.0 + 1.0, w_k=3.0)
    with pytest.raises(WindowError):
        coarse_window(tau0=np.inf, w_h=1.0, w_k=1.0)


def test_coarse_grained_check_free_case():
    # with V = 0 and the bare commutator as generator the discrepancy is the
    # second-order Taylor remainder, so delta(t) = O(t)
    modes = box_modes(GEOM, 3)
    basis = build_basis(3, 2, Statistics.BOSE)
    w = mode_energies(modes)
    h0 = np.diag([float(w @ occ) for occ in basis.states]).astype(complex)
    v0 = np.zeros_like(h0)
    h_idx, k_idx = 0, 1
    x = creation_op(basis, h_idx) @ annihilation_op(basis, k_idx)
    lmat = 1j * comm(h0, x)
    win = CoarseWindow(tau0=1e-3, t_max=np.inf, times=np.array([2e-3, 1e-3, 5e-4]))
    rep = coarse_grained_check(basis, h0, v0, h_idx, k_idx, win, lmat)
    assert rep.deltas[1] == pytest.approx(0.5 * rep.deltas[0], rel=0.05)
    assert rep.deltas[2] == pytest.approx(0.25 * rep.deltas[0], rel=0.05)


def test_scaling_exponent_fit():
    gs = [1.0, 0.5, 0.25]
    deltas = [4.0, 1.0, 0.25]  # slope 2 in log-log
    assert scaling_exponent(gs, deltas) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        scaling_exponent([1.0], [1.0])
