"""Secular chemical-shift + dipolar Hamiltonian under magic-angle spinning.

Every coefficient of the Hamiltonian has the form ``u(t)^T T u(t)`` where ``T``
is a symmetric 3x3 tensor fixed by the geometry and ``u(t)`` is the lab z-axis
expressed in the crystal frame.  With the orientation quaternion ``q``
(crystal -> rotor frame), the rotor phase ``phi = 2 pi nu_r t`` and the rotor
tilt ``beta`` about the lab y-axis, a crystal-frame vector ``v`` maps to

    v_lab = R_y(beta) R_z(phi) R_q v

so ``u(t) = R_q^T R_z(phi)^T R_y(beta)^T e_z``.  For a pair with unit vector
``n`` the tensor is ``K (I - 3 n n^T)`` giving ``K (1 - 3 cos^2 theta)``; a
shift tensor ``sigma`` (Hz) gives ``2 pi sigma_zz(lab)``.

Units: couplings are angular frequencies (rad/s, hbar = 1).  The SI dipolar
constant is ``mu0/(4 pi) gamma_i gamma_j hbar / r^3``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .structure import HBAR, MU0_OVER_4PI, Species, SpinSystem

MAGIC_ANGLE = float(np.arccos(1 / np.sqrt(3)))
DEFAULT_CUTOFF = 2 * np.pi * 1.0  # rad/s


@dataclass(frozen=True)
class Orientation:
    """Crystallite orientation as a unit quaternion, scalar-last (x, y, z, w)."""

    quaternion: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float)
        if q.shape != (4,):
            raise ValueError("quaternion must have 4 components")
        if abs(np.linalg.norm(q) - 1.0) > 1e-12:
            raise ValueError(f"quaternion norm {np.linalg.norm(q)!r} differs from 1")
        object.__setattr__(self, "quaternion", tuple(float(c) for c in q))

    @classmethod
    def from_rotation(cls, rot: Rotation) -> "Orientation":
        q = rot.as_quat()
        return cls(tuple(q / np.linalg.norm(q)))

    @classmethod
    def identity(cls) -> "Orientation":
        return cls()

    def matrix(self) -> np.ndarray:
        return Rotation.from_quat(self.quaternion).as_matrix()


@dataclass(frozen=True)
class MasConfig:
    rotor_frequency: float = 10e3  # Hz
    rotor_angle: float = MAGIC_ANGLE  # rad

    def __post_init__(self):
        if not self.rotor_frequency > 0:
            raise ValueError("rotor_frequency must be positive")

    @property
    def rotor_period(self) -> float:
        return 1.0 / self.rotor_frequency


def lab_z_in_crystal(orientation: Orientation, t, mas: MasConfig) -> np.ndarray:
    """Unit vector ``u(t)``; shape ``t.shape + (3,)``."""
    t = np.asarray(t, dtype=float)
    phi = 2 * np.pi * mas.rotor_frequency * t
    sb, cb = np.sin(mas.rotor_angle), np.cos(mas.rotor_angle)
    # R_y(beta)^T e_z = (-sin b, 0, cos b); then R_z(phi)^T
    w = np.stack([-sb * np.cos(phi), sb * np.sin(phi), np.full_like(phi, cb)], axis=-1)
    return w @ orientation.matrix()  # == (R_q^T w^T)^T


def _quadratic(u: np.ndarray, tensors: np.ndarray) -> np.ndarray:
    """``u^T T_k u`` for every tensor; shape ``u.shape[:-1] + (n_tensors,)``."""
    if len(tensors) == 0:
        return np.zeros(u.shape[:-1] + (0,))
    return np.einsum("...a,kab,...b->...k", u, tensors, u)


def dipolar_constant(system: SpinSystem, i: int, j: int, pos_i=None, pos_j=None) -> float:
    """``mu0/4pi gamma_i gamma_j hbar / r^3`` in rad/s for site ids ``i``, ``j``."""
    si, sj = system.site(i), system.site(j)
    pi_ = si.position if pos_i is None else pos_i
    pj_ = sj.position if pos_j is None else pos_j
    r = np.linalg.norm(pj_ - pi_) * 1e-10
    return MU0_OVER_4PI * si.gamma * sj.gamma * HBAR / r**3


def _dipolar_tensor(system, i, j, pos_i=None, pos_j=None) -> np.ndarray:
    si, sj = system.site(i), system.site(j)
    pi_ = si.position if pos_i is None else pos_i
    pj_ = sj.position if pos_j is None else pos_j
    n = (pj_ - pi_) / np.linalg.norm(pj_ - pi_)
    return dipolar_constant(system, i, j, pi_, pj_) * (np.eye(3) - 3 * np.outer(n, n))


def dipolar_tensor(system: SpinSystem, i: int, j: int) -> np.ndarray:
    if i == j:
        raise ValueError("dipolar coupling needs two distinct sites")
    return _dipolar_tensor(system, i, j)


def shift_tensor_rad(system: SpinSystem, j: int) -> np.ndarray:
    return 2 * np.pi * system.site(j).shift_tensor


def dipolar_coupling(system: SpinSystem, i: int, j: int, orientation: Orientation, t, mas: MasConfig = MasConfig()):
    """``A_ij(t)`` in rad/s for site ids ``i != j``."""
    u = lab_z_in_crystal(orientation, t, mas)
    return _quadratic(u, dipolar_tensor(system, i, j)[None])[..., 0]


def chemical_shift(system: SpinSystem, j: int, orientation: Orientation, t, mas: MasConfig = MasConfig()):
    """``Delta omega_jz(t)`` in rad/s for site id ``j``."""
    u = lab_z_in_crystal(orientation, t, mas)
    return _quadratic(u, shift_tensor_rad(system, j)[None])[..., 0]


@dataclass
class TermTensors:
    """Geometric tensors of all Hamiltonian terms, indexed by site position."""

    site_tensors: np.ndarray  # (n, 3, 3) rad/s
    pairs: np.ndarray  # (m, 2) site positions, i < j
    pair_tensors: np.ndarray  # (m, 3, 3) rad/s


def raw_terms(system: SpinSystem) -> TermTensors:
    n = system.n_sites
    ids = system.ids
    pairs = np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64).reshape(-1, 2)
    site_t = np.array([shift_tensor_rad(system, s) for s in ids]).reshape(n, 3, 3)
    pair_t = np.array([_dipolar_tensor(system, ids[a], ids[b]) for a, b in pairs]).reshape(-1, 3, 3)
    return TermTensors(site_t, pairs, pair_t)


def group_average(terms: TermTensors, system: SpinSystem) -> TermTensors:
    """Average every tensor touching a methyl/ammonium spin over its triple's positions.

    Fast threefold jumps permute the spins of a group cyclically.  A coupling
    to an outside spin is averaged over the three positions, a coupling
    between two groups over the nine combined placements, an intra-group
    coupling over the three cyclic placements (all three edges), and a shift
    tensor over the three sites.  Systems without groups are returned as is.
    """
    sites = system.sites
    groups: dict[int, list[int]] = {}
    for k, s in enumerate(sites):
        if s.group_id is not None:
            groups.setdefault(s.group_id, []).append(k)
    if not groups:
        return terms
    for gid, members in groups.items():
        if len(members) != 3:
            raise ValueError(f"group {gid} has {len(members)} sites, expected 3")
    pos = system.positions()

    def placements(k):
        g = sites[k].group_id
        return [k] if g is None else groups[g]

    site_t = terms.site_tensors.copy()
    for members in groups.values():
        mean = np.mean([2 * np.pi * sites[k].shift_tensor for k in members], axis=0)
        for k in members:
            site_t[k] = mean
    pair_t = terms.pair_tensors.copy()
    ids = system.ids
    for m, (a, b) in enumerate(terms.pairs):
        ga, gb = sites[a].group_id, sites[b].group_id
        if ga is None and gb is None:
            continue
        if ga is not None and ga == gb:
            mem = groups[ga]
            combos = [(mem[x], mem[y]) for x, y in ((0, 1), (1, 2), (2, 0))]
        else:
            combos = [(p, q) for p in placements(a) for q in placements(b)]
        pair_t[m] = np.mean(
            [_dipolar_tensor(system, ids[a], ids[b], pos[p], pos[q]) for p, q in combos], axis=0
        )
    return TermTensors(site_t, terms.pairs.copy(), pair_t)


@dataclass
class LabHamiltonian:
    """Time-parameterized term list for one crystallite orientation.

    Indices refer to positions in ``system.sites`` (bit ``k`` of a state).
    Like pairs carry ``A (SxSx + SySy - 2 SzSz)``, unlike pairs ``-2 A SzSz``.
    """

    n_sites: int
    site_ids: tuple[int, ...]
    species: tuple[Species, ...]
    z_sites: np.ndarray
    z_tensors: np.ndarray
    like_pairs: np.ndarray
    like_tensors: np.ndarray
    unlike_pairs: np.ndarray
    unlike_tensors: np.ndarray
    orientation: Orientation = field(default_factory=Orientation)
    mas: MasConfig = field(default_factory=MasConfig)

    def _u(self, t):
        return lab_z_in_crystal(self.orientation, t, self.mas)

    def z_coefficients(self, t) -> np.ndarray:
        return _quadratic(self._u(t), self.z_tensors)

    def like_coefficients(self, t) -> np.ndarray:
        return _quadratic(self._u(t), self.like_tensors)

    def unlike_coefficients(self, t) -> np.ndarray:
        return _quadratic(self._u(t), self.unlike_tensors)

    @property
    def rotor_period(self) -> float:
        return self.mas.rotor_period

    def terms_at(self, t: float = 0.0) -> list[tuple[int, int, str, float]]:
        """Rows ``(i, j, kind, coeff_rad_s)`` with site ids; ``j = -1`` for z terms."""
        rows = []
        ids = self.site_ids
        for k, c in zip(self.z_sites, self.z_coefficients(t)):
            rows.append((ids[k], -1, "z", float(c)))
        for (a, b), c in zip(self.like_pairs, self.like_coefficients(t)):
            rows.append((ids[a], ids[b], "like", float(c)))
        for (a, b), c in zip(self.unlike_pairs, self.unlike_coefficients(t)):
            rows.append((ids[a], ids[b], "unlike", float(c)))
        return rows

    def diagonal(self, t: float) -> np.ndarray:
        """Diagonal of H(t) in the product z-basis (site ``k`` = bit ``k``, 1 = up)."""
        n = self.n_sites
        idx = np.arange(2**n)
        s = ((idx[:, None] >> np.arange(n)) & 1) - 0.5
        e = s[:, self.z_sites] @ self.z_coefficients(t) if len(self.z_sites) else np.zeros(len(idx))
        for pairs, coef in ((self.like_pairs, self.like_coefficients(t)), (self.unlike_pairs, self.unlike_coefficients(t))):
            if len(pairs):
                e = e - 2 * (s[:, pairs[:, 0]] * s[:, pairs[:, 1]]) @ coef
        return e

    def to_sparse(self, t: float):
        """Sparse matrix of H(t) over the full 2^n space (use for small n)."""
        from scipy import sparse

        n = self.n_sites
        dim = 2**n
        rows = [np.arange(dim)]
        cols = [np.arange(dim)]
        vals = [self.diagonal(t)]
        idx = np.arange(dim)
        for (a, b), c in zip(self.like_pairs, self.like_coefficients(t)):
            ba = (idx >> a) & 1
            bb = (idx >> b) & 1
            src = idx[ba != bb]
            rows.append(src)
            cols.append(src ^ ((1 << a) | (1 << b)))
            vals.append(np.full(len(src), 0.5 * c))
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
        )

    def to_dense(self, t: float) -> np.ndarray:
        return self.to_sparse(t).toarray()


def build_hamiltonian(
    system: SpinSystem,
    orientation: Orientation = Orientation(),
    mas: MasConfig = MasConfig(),
    enable_group_average: bool = True,
    cutoff: float = DEFAULT_CUTOFF,
) -> LabHamiltonian:
    """Assemble the secular Hamiltonian for one orientation.

    Pairs whose largest possible coupling ``max |eig T|`` lies below
    ``cutoff`` (rad/s) are dropped.  Like pairs are ordered by that
    magnitude, largest first.
    """
    terms = raw_terms(system)
    if enable_group_average:
        terms = group_average(terms, system)
    species = tuple(s.species for s in system.sites)
    like, unlike = [], []
    for m, (a, b) in enumerate(terms.pairs):
        mag = float(np.abs(np.linalg.eigvalsh(terms.pair_tensors[m])).max())
        if mag < cutoff:
            continue
        (like if species[a] is species[b] else unlike).append((mag, m))
    like.sort(key=lambda x: (-x[0], x[1]))

    def take(sel):
        idx = [m for _, m in sel]
        return terms.pairs[idx].reshape(-1, 2), terms.pair_tensors[idx].reshape(-1, 3, 3)

    lp, lt = take(like)
    up, ut = take(unlike)
    n = system.n_sites
    return LabHamiltonian(
        n_sites=n,
        site_ids=system.ids,
        species=species,
        z_sites=np.arange(n),
        z_tensors=terms.site_tensors,
        like_pairs=lp,
        like_tensors=lt,
        unlike_pairs=up,
        unlike_tensors=ut,
        orientation=orientation,
        mas=mas,
    )
