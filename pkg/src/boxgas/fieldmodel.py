"""Box eigenmodes, interaction tensors, and density observables.

Everything lives in a hard-walled rectangular box with Dirichlet modes
u_f(x) = prod_i sqrt(2/L_i) sin(f_i pi x_i / L_i).  Mode overlap integrals
are analytic; interaction tensors use Gauss-Legendre product quadrature
with panels that can be aligned to a spatial cell grid so that per-cell
operators sum exactly to their global counterparts.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fock import FockBasis, creation_op, ladder_ops, one_body_operator, two_body_operator

HBAR = 1.0
MASS = 1.0


@dataclass(frozen=True)
class BoxGeometry:
    """Rectangular box with Dirichlet walls; 1 or 3 axes."""

    lengths: tuple[float, ...]

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.lengths)
        object.__setattr__(self, "lengths", lengths)
        if len(lengths) not in (1, 3):
            raise ValueError("geometry must be 1D or 3D")
        if any(v <= 0 for v in lengths):
            raise ValueError("box lengths must be positive")

    @property
    def dimension(self) -> int:
        return len(self.lengths)


@dataclass(frozen=True)
class Mode:
    """Single Dirichlet eigenmode: quantum numbers and eigenvalue w."""

    numbers: tuple[int, ...]
    w: float

    def __post_init__(self):
        if any(n < 1 for n in self.numbers):
            raise ValueError("mode numbers start at 1")
        if not self.w > 0:
            raise ValueError("mode energy must be positive")


def mode_energy(geom: BoxGeometry, numbers, hbar: float = HBAR, mass: float = MASS) -> float:
    acc = 0.0
    for n, length in zip(numbers, geom.lengths):
        acc += (n / length) ** 2
    return (hbar * np.pi) ** 2 / (2.0 * mass) * acc


def modes_from_numbers(geom: BoxGeometry, numbers_list, hbar: float = HBAR, mass: float = MASS) -> list[Mode]:
    out = []
    for numbers in numbers_list:
        numbers = tuple(int(n) for n in numbers)
        if len(numbers) != geom.dimension:
            raise ValueError("mode numbers do not match geometry dimension")
        out.append(Mode(numbers, mode_energy(geom, numbers, hbar, mass)))
    return out


def box_modes(geom: BoxGeometry, count: int, hbar: float = HBAR, mass: float = MASS) -> list[Mode]:
    """Lowest `count` modes ordered by energy, ties by lexicographic numbers."""
    if count < 1:
        raise ValueError("count must be at least 1")
    cap = 1
    while True:
        cap += 1
        candidates = [
            tuple(c)
            for c in itertools.product(range(1, cap + 1), repeat=geom.dimension)
        ]
        candidates.sort(key=lambda c: (mode_energy(geom, c, hbar, mass), c))
        if len(candidates) < count:
            continue
        # enumeration is complete below the cheapest mode outside the cap
        boundary = min(
            mode_energy(
                geom,
                tuple(cap + 1 if i == ax else 1 for i in range(geom.dimension)),
                hbar,
                mass,
            )
            for ax in range(geom.dimension)
        )
        if mode_energy(geom, candidates[count - 1], hbar, mass) < boundary:
            return modes_from_numbers(geom, candidates[:count], hbar, mass)


def mode_numbers(modes) -> np.ndarray:
    return np.array([m.numbers for m in modes], dtype=np.int64)


def mode_energies(modes) -> np.ndarray:
    return np.array([m.w for m in modes], dtype=float)


# ---------------------------------------------------------------------------
# potentials

@dataclass(frozen=True)
class Zero:
    def __call__(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class Gaussian:
    g: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.g * np.exp(-0.5 * (r / self.sigma) ** 2)


@dataclass(frozen=True)
class SoftLennardJones:
    """12-6 profile held constant inside the core radius so V stays finite."""

    epsilon: float
    sigma: float
    r_core: float

    def __post_init__(self):
        if self.sigma <= 0 or self.r_core <= 0:
            raise ValueError("sigma and r_core must be positive")

    def __call__(self, r):
        r = np.maximum(np.asarray(r, dtype=float), self.r_core)
        s6 = (self.sigma / r) ** 6
        return 4.0 * self.epsilon * (s6 * s6 - s6)


@dataclass(frozen=True)
class Contact:
    """1D delta interaction; only enters through analytic mode overlaps."""

    g: float

    def __call__(self, r):
        raise TypeError("contact potential has no pointwise values; use contact_tensor")


# ---------------------------------------------------------------------------
# cells and velocity fields

@dataclass(frozen=True)
class CellGrid:
    """Uniform per-axis partition of the box into axis-aligned cells."""

    geom: BoxGeometry
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if len(counts) != self.geom.dimension:
            raise ValueError("cell counts do not match geometry dimension")
        if any(c < 1 for c in counts):
            raise ValueError("cell counts must be positive")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    def edges(self, axis: int) -> np.ndarray:
        return np.linspace(0.0, self.geom.lengths[axis], self.counts[axis] + 1)

    def cell_multi_index(self, cell: int) -> tuple[int, ...]:
        if not 0 <= cell < self.n_cells:
            raise ValueError("cell index out of range")
        return tuple(np.unravel_index(cell, self.counts))

    def bounds(self, cell: int) -> tuple[tuple[float, float], ...]:
        multi = self.cell_multi_index(cell)
        out = []
        for axis, i in enumerate(multi):
            e = self.edges(axis)
            out.append((float(e[i]), float(e[i + 1])))
        return tuple(out)


def whole_box_grid(geom: BoxGeometry) -> CellGrid:
    return CellGrid(geom, (1,) * geom.dimension)


@dataclass(frozen=True)
class VelocityField:
    """One velocity vector per cell."""

    grid: CellGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_cells, self.grid.geom.dimension):
            raise ValueError("velocity field shape must be (n_cells, dimension)")
        if not np.all(np.isfinite(values)):
            raise ValueError("velocity values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls, grid: CellGrid) -> "VelocityField":
        return cls(grid, np.zeros((grid.n_cells, grid.geom.dimension)))


# ---------------------------------------------------------------------------
# analytic interval integrals of sine modes
#
# All three reduce to antiderivatives of cos(k pi theta) on theta = x/L.

def _sin_primitive(k: int, a: float, b: float) -> float:
    # integral over [a, b] of cos(k pi theta) d theta
    if k == 0:
        return b - a
    return (np.sin(k * np.pi * b) - np.sin(k * np.pi * a)) / (k * np.pi)


def _cos_primitive(k: int, a: float, b: float) -> float:
    # integral over [a, b] of sin(k pi theta) d theta
    if k == 0:
        return 0.0
    return (np.cos(k * np.pi * a) - np.cos(k * np.pi * b)) / (k * np.pi)


def overlap_s(f: int, g: int, lo: float, hi: float, length: float) -> float:
    """Integral of u_f u_g over [lo, hi] on an axis of the given length."""
    a, b = lo / length, hi / length
    return _sin_primitive(f - g, a, b) - _sin_primitive(f + g, a, b)


def overlap_g(f: int, g: int, lo: float, hi: float, length: float) -> float:
    """Integral of u_f' u_g' over [lo, hi]."""
    a, b = lo / length, hi / length
    scale = f * g * np.pi ** 2 / length ** 2
    return scale * (_sin_primitive(f - g, a, b) + _sin_primitive(f + g, a, b))


def overlap_x(f: int, g: int, lo: float, hi: float, length: float) -> float:
    """Integral of u_f u_g' over [lo, hi]."""
    a, b = lo / length, hi / length
    return (g * np.pi / length) * (
        _cos_primitive(f + g, a, b) + _cos_primitive(f - g, a, b)
    )


def _axis_overlap_matrices(numbers_axis: np.ndarray, lo: float, hi: float, length: float):
    n = len(numbers_axis)
    s = np.empty((n, n))
    g = np.empty((n, n))
    x = np.empty((n, n))
    for i, f in enumerate(numbers_axis):
        for j, h in enumerate(numbers_axis):
            s[i, j] = overlap_s(int(f), int(h), lo, hi, length)
            g[i, j] = overlap_g(int(f), int(h), lo, hi, length)
            x[i, j] = overlap_x(int(f), int(h), lo, hi, length)
    return s, g, x


def cell_overlaps(modes, grid: CellGrid, cell: int):
    """Per-cell mode overlap matrices (S, G, X_axis...) assembled from axis factors.

    S[h, k] integrates u_h u_k over the cell, G the gradient dot product,
    and X[axis][h, k] integrates u_h times the axis derivative of u_k.
    """
    numbers = mode_numbers(modes)
    bnds = grid.bounds(cell)
    d = grid.geom.dimension
    per_axis = [
        _axis_overlap_matrices(numbers[:, ax], bnds[ax][0], bnds[ax][1], grid.geom.lengths[ax])
        for ax in range(d)
    ]
    nf = len(modes)
    # product over axes, entrywise on the (mode, mode) matrices
    s_cell = np.ones((nf, nf))
    for ax in range(d):
        s_cell *= per_axis[ax][0]
    g_cell = np.zeros((nf, nf))
    x_cell = []
    for ax in range(d):
        g_term = per_axis[ax][1].copy()
        x_term = per_axis[ax][2].copy()
        for other in range(d):
            if other != ax:
                g_term *= per_axis[other][0]
                x_term *= per_axis[other][0]
        g_cell += g_term
        x_cell.append(x_term)
    return s_cell, g_cell, x_cell


# ---------------------------------------------------------------------------
# quadrature

def _gauss_panels(edges: np.ndarray, order: int):
    base_x, base_w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(half * (base_x + 1.0) + lo)
        weights.append(half * base_w)
    return np.concatenate(nodes), np.concatenate(weights)


def _axis_mode_values(numbers_axis: np.ndarray, pts: np.ndarray, length: float) -> np.ndarray:
    # rows: modes, columns: points
    return np.sqrt(2.0 / length) * np.sin(
        np.outer(numbers_axis, pts) * (np.pi / length)
    )


def _quadrature_grid(modes, grid: CellGrid, order: int):
    """Cell-aligned product quadrature: points, weights, mode values at points."""
    numbers = mode_numbers(modes)
    d = grid.geom.dimension
    axis_nodes, axis_weights, axis_values = [], [], []
    for ax in range(d):
        nodes, wts = _gauss_panels(grid.edges(ax), order)
        axis_nodes.append(nodes)
        axis_weights.append(wts)
        axis_values.append(_axis_mode_values(numbers[:, ax], nodes, grid.geom.lengths[ax]))
    shape = tuple(len(n) for n in axis_nodes)
    pts = np.stack(
        [c.ravel() for c in np.meshgrid(*axis_nodes, indexing="ij")], axis=-1
    )
    wts = np.ones(shape)
    for ax in range(d):
        wts *= axis_weights[ax].reshape([-1 if a == ax else 1 for a in range(d)])
    wts = wts.ravel()
    values = np.ones((len(modes),) + shape)
    for ax in range(d):
        expand = axis_values[ax].reshape(
            (len(modes),) + tuple(shape[a] if a == ax else 1 for a in range(d))
        )
        values = values * expand
    return pts, wts, values.reshape(len(modes), -1)


def _pair_weight_matrix(values: np.ndarray, wts: np.ndarray) -> np.ndarray:
    # A[p, (l, f)] = w_p u_l(x_p) u_f(x_p)
    nf, npts = values.shape
    prod = values[:, None, :] * values[None, :, :]
    return (prod * wts[None, None, :]).reshape(nf * nf, npts).T


def _symmetrize_tensor(t: np.ndarray) -> np.ndarray:
    t = 0.5 * (t + t.transpose(1, 0, 3, 2))
    return 0.5 * (t + t.conj().transpose(3, 2, 1, 0))


_BLOCK_ELEMENTS = 1 << 21


def _kernel_apply(potential, pts, wts, values, a_right):
    """Accumulate A_left^T V(|x - y|) A_right without storing the full kernel."""
    npts = pts.shape[0]
    out = np.zeros((values.shape[0] ** 2, a_right.shape[1]))
    a_left = _pair_weight_matrix(values, wts)
    block = max(1, _BLOCK_ELEMENTS // npts)
    for start in range(0, npts, block):
        stop = min(start + block, npts)
        diff = pts[start:stop, None, :] - pts[None, :, :]
        kernel = potential(np.sqrt(np.sum(diff * diff, axis=-1)))
        out += a_left[start:stop].T @ (kernel @ a_right)
    return out


def _quad_tensor(modes, potential, grid: CellGrid, order: int, x_cell: int | None = None) -> np.ndarray:
    """Raw quadrature tensor; x restricted to one cell when x_cell is given."""
    pts, wts, values = _quadrature_grid(modes, grid, order)
    a_full = _pair_weight_matrix(values, wts)
    if x_cell is None:
        mask = np.ones(len(wts), dtype=bool)
    else:
        bnds = grid.bounds(x_cell)
        mask = np.ones(len(wts), dtype=bool)
        for ax, (lo, hi) in enumerate(bnds):
            mask &= (pts[:, ax] >= lo) & (pts[:, ax] <= hi)
            # panel alignment guarantees nodes are interior to exactly one cell
    nf = len(modes)
    left = _kernel_apply(
        potential,
        pts,
        np.where(mask, wts, 0.0),
        values,
        a_full,
    )
    raw = left.reshape(nf, nf, nf, nf)  # indices (l1, f1, l2, f2)
    return raw.transpose(0, 2, 3, 1)  # -> (l1, l2, f2, f1)


def potential_tensor(
    modes,
    potential,
    geom: BoxGeometry,
    order: int = 8,
    grid: CellGrid | None = None,
    err_tol: float | None = None,
) -> np.ndarray:
    """Two-body interaction tensor V[l1, l2, f2, f1] by product Gauss-Legendre.

    Panels follow `grid` when given, so per-cell restrictions tile the result.
    With `err_tol` set, an order-doubled estimate is compared against it and a
    warning carries the estimate when it is exceeded.
    """
    if order < 2:
        raise ValueError("quadrature order must be at least 2")
    if isinstance(potential, Contact):
        if geom.dimension != 1:
            raise ValueError("contact potential is 1D only")
        return contact_tensor(modes, potential, geom)
    if isinstance(potential, Zero):
        nf = len(modes)
        return np.zeros((nf, nf, nf, nf))
    grid = grid if grid is not None else whole_box_grid(geom)
    tensor = _symmetrize_tensor(_quad_tensor(modes, potential, grid, order))
    if err_tol is not None:
        estimate = float(
            np.max(np.abs(tensor - _symmetrize_tensor(_quad_tensor(modes, potential, grid, 2 * order))))
        )
        if estimate > err_tol:
            warnings.warn(
                f"quadrature error estimate {estimate:.3e} exceeds tolerance {err_tol:.3e}",
                stacklevel=2,
            )
    return tensor


def potential_tensor_error(modes, potential, geom: BoxGeometry, order: int = 8, grid: CellGrid | None = None) -> float:
    """Max-norm difference between orders q and 2q; crude error estimate."""
    if isinstance(potential, (Zero, Contact)):
        return 0.0
    grid = grid if grid is not None else whole_box_grid(geom)
    a = _symmetrize_tensor(_quad_tensor(modes, potential, grid, order))
    b = _symmetrize_tensor(_quad_tensor(modes, potential, grid, 2 * order))
    return float(np.max(np.abs(a - b)))


def contact_tensor(modes, potential: Contact, geom: BoxGeometry) -> np.ndarray:
    """Analytic delta-interaction tensor for 1D sine modes."""
    if geom.dimension != 1:
        raise ValueError("contact potential is 1D only")
    length = geom.lengths[0]
    numbers = mode_numbers(modes)[:, 0]
    nf = len(modes)

    def cos_overlap(m: int, n: int) -> float:
        # integral over [0,1] of cos(m pi t) cos(n pi t)
        if m == n == 0:
            return 1.0
        if m == n:
            return 0.5
        return 0.0

    tensor = np.empty((nf, nf, nf, nf))
    for i1, a in enumerate(numbers):
        for i2, b in enumerate(numbers):
            for j2, c in enumerate(numbers):
                for j1, d in enumerate(numbers):
                    tensor[i1, i2, j2, j1] = (
                        cos_overlap(abs(a - d), abs(b - c))
                        - cos_overlap(abs(a - d), b + c)
                        - cos_overlap(a + d, abs(b - c))
                        + cos_overlap(a + d, b + c)
                    )
    return potential.g / length * tensor


# ---------------------------------------------------------------------------
# operators

def hamiltonian(basis: FockBasis, modes, vtensor: np.ndarray) -> np.ndarray:
    if basis.n_modes != len(modes):
        raise ValueError("basis and mode list disagree on mode count")
    h0 = one_body_operator(basis, np.diag(mode_energies(modes)).astype(complex))
    return h0 + two_body_operator(basis, vtensor.astype(complex))


def free_hamiltonian(basis: FockBasis, modes) -> np.ndarray:
    return one_body_operator(basis, np.diag(mode_energies(modes)).astype(complex))


def total_mass_op(basis: FockBasis, mass: float = MASS) -> np.ndarray:
    return mass * one_body_operator(basis, np.eye(basis.n_modes, dtype=complex))


def mass_density_op(basis: FockBasis, modes, grid: CellGrid, cell: int, mass: float = MASS) -> np.ndarray:
    """Mass content of one cell; cells sum to the total mass operator."""
    s_cell, _, _ = cell_overlaps(modes, grid, cell)
    return mass * one_body_operator(basis, s_cell.astype(complex))


def momentum_density_op(
    basis: FockBasis,
    modes,
    grid: CellGrid,
    cell: int,
    velocity: VelocityField | None = None,
    hbar: float = HBAR,
    mass: float = MASS,
) -> np.ndarray:
    """Cell momentum in the frame moving with the cell velocity; shape (d, dim, dim)."""
    s_cell, _, x_cell = cell_overlaps(modes, grid, cell)
    d = grid.geom.dimension
    v = np.zeros(d) if velocity is None else velocity.values[cell]
    out = np.empty((d, basis.dim, basis.dim), dtype=complex)
    ladders = ladder_ops(basis)
    for ax in range(d):
        kernel = 0.5j * hbar * (x_cell[ax].T - x_cell[ax]) - mass * v[ax] * s_cell
        out[ax] = one_body_operator(basis, kernel.astype(complex), ladders)
    return out


def energy_density_op(
    basis: FockBasis,
    modes,
    grid: CellGrid,
    cell: int,
    potential,
    geom: BoxGeometry,
    velocity: VelocityField | None = None,
    order: int = 8,
    hbar: float = HBAR,
    mass: float = MASS,
) -> np.ndarray:
    """Cell energy in the locally-at-rest frame.

    Kinetic part expands |(-i hbar grad - m v) psi|^2 / 2m into analytic
    overlaps; the pair part restricts one interaction coordinate to the cell
    (symmetrized, so cells split shared pair energy evenly).  At v = 0 the
    sum over all cells reproduces hamiltonian() built with the same grid.
    """
    s_cell, g_cell, x_cell = cell_overlaps(modes, grid, cell)
    d = grid.geom.dimension
    v = np.zeros(d) if velocity is None else velocity.values[cell]
    kernel = (hbar ** 2 / (2.0 * mass)) * g_cell.astype(complex)
    for ax in range(d):
        kernel += 0.5j * hbar * v[ax] * (x_cell[ax] - x_cell[ax].T)
    kernel += 0.5 * mass * float(v @ v) * s_cell
    out = one_body_operator(basis, kernel)
    if isinstance(potential, Contact):
        cell_tensor = _contact_cell_tensor(modes, potential, geom, grid, cell)
    elif isinstance(potential, Zero):
        cell_tensor = None
    else:
        cell_tensor = _symmetrize_tensor(_quad_tensor(modes, potential, grid, order, x_cell=cell))
    if cell_tensor is not None:
        out = out + two_body_operator(basis, cell_tensor.astype(complex))
    return out


def _contact_cell_tensor(modes, potential: Contact, geom: BoxGeometry, grid: CellGrid, cell: int) -> np.ndarray:
    # delta interaction localizes both coordinates, so restrict the single
    # integration variable to the cell: sin products integrated per cell
    length = geom.lengths[0]
    numbers = mode_numbers(modes)[:, 0]
    (lo, hi), = grid.bounds(cell)
    a, b = lo / length, hi / length
    nf = len(modes)

    def quad_sin(m1, m2, m3, m4):
        # integral over [a,b] of the four-sine product, expanded to cosines
        total = 0.0
        for s2, k2 in ((1.0, m1 - m4), (-1.0, m1 + m4)):
            for s3, k3 in ((1.0, m2 - m3), (-1.0, m2 + m3)):
                for s4, k4 in ((0.5, k2 - k3), (0.5, k2 + k3)):
                    total += 0.25 * s2 * s3 * s4 * _sin_primitive(abs(k4), a, b)
        return total

    tensor = np.empty((nf, nf, nf, nf))
    for i1, m1 in enumerate(numbers):
        for i2, m2 in enumerate(numbers):
            for j2, m3 in enumerate(numbers):
                for j1, m4 in enumerate(numbers):
                    tensor[i1, i2, j2, j1] = quad_sin(m1, m2, m3, m4)
    return 4.0 * potential.g / length * tensor


def phase_space_op(
    basis: FockBasis,
    modes,
    geom: BoxGeometry,
    x,
    p,
    sigma: float,
    order: int = 48,
    hbar: float = HBAR,
    mass: float = MASS,
    norm_floor: float = 0.99,
) -> np.ndarray:
    """Husimi-style phase-space density at (x, p), smeared at width sigma.

    Built from a Gaussian packet truncated to the box and renormalized;
    positive semidefinite by construction.  Warns when the truncation
    removes more than 1 - norm_floor of the packet mass.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    d = geom.dimension
    if x.shape != (d,) or p.shape != (d,):
        raise ValueError("x and p must match the geometry dimension")
    numbers = mode_numbers(modes)
    coeff = np.ones(len(modes), dtype=complex)
    mass_inside = 1.0
    for ax in range(d):
        nodes, wts = _gauss_panels(np.array([0.0, geom.lengths[ax]]), order)
        packet = (np.pi * sigma ** 2) ** -0.25 * np.exp(
            -((nodes - x[ax]) ** 2) / (2.0 * sigma ** 2) + 1j * p[ax] * nodes / hbar
        )
        mass_inside *= float(np.sum(wts * np.abs(packet) ** 2))
        u_vals = _axis_mode_values(numbers[:, ax], nodes, geom.lengths[ax])
        coeff *= u_vals @ (wts * packet)
    if mass_inside < norm_floor:
        warnings.warn(
            f"packet mass inside the box is {mass_inside:.4f}; "
            f"deficit {1.0 - mass_inside:.3e}",
            stacklevel=2,
        )
    coeff = coeff / np.sqrt(mass_inside)
    kernel = (mass / (2.0 * np.pi * hbar) ** d) * np.outer(coeff, coeff.conj())
    return one_body_operator(basis, kernel)


def quadrature_gram_defect(modes, geom: BoxGeometry, order: int = 8, grid: CellGrid | None = None) -> float:
    """Max deviation of the quadrature Gram matrix of the modes from identity."""
    grid = grid if grid is not None else whole_box_grid(geom)
    _, wts, values = _quadrature_grid(modes, grid, order)
    gram = (values * wts[None, :]) @ values.T
    return float(np.max(np.abs(gram - np.eye(len(modes)))))
