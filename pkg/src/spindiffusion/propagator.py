"""Pure-state propagation with a fourth-order Suzuki-Trotter scheme.

The external basis convention: site ``k`` (position in ``system.sites``) is
bit ``k`` of the amplitude index and bit value 1 means spin up.

Internally the propagator stores real and imaginary parts separately and
relabels bits so that carbons take the lowest bits, protons the middle and
everything else (nitrogen) the top.  Flip-flop gates between bits below
``chunk_bits`` are applied chunk by chunk so that each chunk stays resident in
cache while a whole half-sweep runs over it.

One step of length ``dt`` is the triple jump ``S2(p dt) S2((1-2p) dt) S2(p dt)``
with ``p = 1/(2 - 2^(1/3))``.  Each ``S2(h)`` is the palindrome

    G_1..G_g  L_1..L_l  D(h)  L_l..L_1  G_g..G_1

where every flip-flop factor runs for ``h/2``, ``D`` collects all diagonal
terms (shifts and every ``S_z S_z`` product, which commute with each other),
``G`` are flip-flops touching a bit at or above ``chunk_bits`` and ``L`` the
rest.  Coefficients are frozen at the midpoint of each ``S2`` sub-interval.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .hamiltonian import LabHamiltonian, Orientation
from .structure import Species, SpinSystem

SUZUKI_P = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
SUZUKI_WEIGHTS = (SUZUKI_P, 1.0 - 2.0 * SUZUKI_P, SUZUKI_P)
DEFAULT_CHUNK_BITS = 15
_SPECIES_RANK = {Species.C13: 0, Species.H1: 1, Species.N15: 2}


@dataclass
class StateVector:
    amplitudes: np.ndarray
    n: int = field(default=-1)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        dim = self.amplitudes.size
        n = int(round(np.log2(dim))) if dim else -1
        if dim == 0 or 2**n != dim:
            raise ValueError(f"state dimension {dim} is not a power of two")
        if self.n == -1:
            self.n = n
        elif self.n != n:
            raise ValueError(f"n={self.n} inconsistent with dimension {dim}")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.n)


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 2e-6
    t_max: float = 40e-3
    record_stride: int = 1  # in rotor periods
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_max < 0:
            raise ValueError("t_max must be non-negative")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    pz: dict  # site id -> P_z series
    names: dict  # site id -> column name
    orientation: Orientation | None = None
    seed: int | None = None
    stderr: dict | None = None  # only for averaged records

    def final(self) -> dict:
        return {sid: float(v[-1]) for sid, v in self.pz.items()}

    def to_csv(self, path) -> None:
        ids = list(self.pz)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            head = ["time_s"]
            for sid in ids:
                head.append(f"pz_{self.names[sid]}")
                if self.stderr is not None:
                    head.append(f"stderr_{self.names[sid]}")
            w.writerow(head)
            for k, t in enumerate(self.times):
                row = [repr(float(t))]
                for sid in ids:
                    row.append(repr(float(self.pz[sid][k])))
                    if self.stderr is not None:
                        row.append(repr(float(self.stderr[sid][k])))
                w.writerow(row)


def read_trajectory_csv(path) -> tuple[np.ndarray, dict]:
    """Columns of a trajectory CSV as ``(times, {column: values})``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    head, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return data[:, 0], {h: data[:, k] for k, h in enumerate(head) if k}


def sample_random_state(d: int, seed=None) -> StateVector:
    """Haar-random unit vector in ``C^d`` (normalized complex Gaussian)."""
    d = int(d)
    if d < 1 or d & (d - 1):
        raise ValueError(f"dimension {d} is not a power of two")
    if d == 1:
        return StateVector(np.ones(1, dtype=np.complex128))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return StateVector(v / np.linalg.norm(v))


def _insert_up(rest: np.ndarray, k: int, n: int) -> np.ndarray:
    """Embed ``rest`` (n-1 spins) with spin ``k`` up into n spins."""
    out = np.zeros(2**n, dtype=np.complex128)
    idx = np.arange(2 ** (n - 1))
    full = ((idx >> k) << (k + 1)) | (idx & ((1 << k) - 1)) | (1 << k)
    out[full] = rest
    return out


def initial_state(system: SpinSystem, polarized_site: int | None = None, seed=None) -> StateVector:
    """Spin ``polarized_site`` up, every other spin in a random pure state."""
    if polarized_site is None:
        polarized_site = system.reference_site
    site = system.site(polarized_site)
    if site.species is not Species.C13:
        raise ValueError(f"site {polarized_site} is not a carbon")
    n = system.n_sites
    k = system.index(polarized_site)
    rest = sample_random_state(2 ** (n - 1), seed)
    return StateVector(_insert_up(rest.amplitudes, k, n), n)


def polarization(state: StateVector, site: int) -> float:
    """``2 <S_z>`` of bit ``site``."""
    if not 0 <= site < state.n:
        raise ValueError(f"site index {site} outside [0, {state.n})")
    p = np.abs(state.amplitudes) ** 2
    up = (np.arange(p.size) >> site) & 1
    return float(p[up == 1].sum() - p[up == 0].sum())


class TrotterPropagator:
    """Compiled gate schedule for one :class:`LabHamiltonian` and step ``dt``."""

    def __init__(self, hamiltonian: LabHamiltonian, dt: float, chunk_bits: int = DEFAULT_CHUNK_BITS):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.h = hamiltonian
        self.dt = float(dt)
        n = hamiltonian.n_sites
        self.n = n
        order = sorted(range(n), key=lambda k: (_SPECIES_RANK.get(hamiltonian.species[k], 3), k))
        self.perm = np.array(order, dtype=np.int64)  # internal bit -> site index
        self.inv = np.empty(n, dtype=np.int64)
        self.inv[self.perm] = np.arange(n)
        self.m = min(n, int(chunk_bits))
        pairs = np.sort(self.inv[hamiltonian.like_pairs], axis=1) if len(hamiltonian.like_pairs) else np.zeros((0, 2), np.int64)
        local = pairs[:, 1] < self.m if len(pairs) else np.zeros(0, bool)
        self.global_idx = np.flatnonzero(~local)
        self.local_idx = np.flatnonzero(local)
        self.gp = np.ascontiguousarray(pairs[self.global_idx].reshape(-1, 2), dtype=np.int64)
        self.lp = np.ascontiguousarray(pairs[self.local_idx].reshape(-1, 2), dtype=np.int64)
        self._map = None

    # layout conversion -------------------------------------------------
    def _index_map(self):
        if self._map is None:
            x = np.arange(2**self.n, dtype=np.int64)
            y = np.zeros_like(x)
            for k in range(self.n):
                y |= ((x >> k) & 1) << self.inv[k]
            self._map = y
        return self._map

    def to_internal(self, state: StateVector):
        if state.n != self.n:
            raise ValueError(f"state has {state.n} spins, Hamiltonian {self.n}")
        y = self._index_map()
        re = np.empty(2**self.n)
        im = np.empty(2**self.n)
        re[y] = state.amplitudes.real
        im[y] = state.amplitudes.imag
        return re, im

    def to_external(self, re, im) -> StateVector:
        y = self._index_map()
        return StateVector(re[y] + 1j * im[y], self.n)

    # coefficient tables ------------------------------------------------
    def tables(self, step_starts) -> tuple:
        """Per-sub-step gate and diagonal coefficients for the given step start times."""
        starts = np.atleast_1d(np.asarray(step_starts, dtype=float))
        w = np.array(SUZUKI_WEIGHTS)
        offsets = np.concatenate([[0.0], np.cumsum(w)[:-1]]) + w / 2
        mids = (starts[:, None] + offsets[None, :] * self.dt).reshape(-1)
        hs = np.tile(w * self.dt, len(starts))
        h = self.h
        theta = 0.25 * hs[:, None] * h.like_coefficients(mids).reshape(len(mids), -1)
        c, s = np.cos(theta), np.sin(theta)
        gc = np.ascontiguousarray(c[:, self.global_idx])
        gs = np.ascontiguousarray(s[:, self.global_idx])
        lc = np.ascontiguousarray(c[:, self.local_idx])
        ls = np.ascontiguousarray(s[:, self.local_idx])
        z = np.zeros((len(mids), self.n))
        z[:, self.inv[h.z_sites]] = h.z_coefficients(mids).reshape(len(mids), -1)
        J = np.zeros((len(mids), self.n, self.n))
        for pairs, coef in ((h.like_pairs, h.like_coefficients(mids)), (h.unlike_pairs, h.unlike_coefficients(mids))):
            if len(pairs):
                a, b = self.inv[pairs[:, 0]], self.inv[pairs[:, 1]]
                coef = coef.reshape(len(mids), -1)
                J[:, a, b] += -2.0 * coef
                J[:, b, a] += -2.0 * coef
        return gc, gs, lc, ls, np.ascontiguousarray(hs), z, J

    def run(self, re, im, tables, n_steps, first_row=0, record_every=0, rec_bits=None, out=None):
        gc, gs, lc, ls, tau, z, J = tables
        if rec_bits is None:
            rec_bits = np.zeros(0, dtype=np.int64)
        if out is None:
            out = np.zeros((1, len(rec_bits)))
        _kernels.run_steps(
            re, im, self.m, self.n, self.gp, gc, gs, self.lp, lc, ls, tau, z, J,
            len(SUZUKI_WEIGHTS), first_row, gc.shape[0], n_steps, record_every,
            np.asarray(rec_bits, dtype=np.int64), out,
        )
        return out

    def step(self, state: StateVector, t: float) -> StateVector:
        re, im = self.to_internal(state)
        self.run(re, im, self.tables([t]), 1)
        return self.to_external(re, im)


def trotter_step(state: StateVector, hamiltonian: LabHamiltonian, t: float, dt: float) -> StateVector:
    """One fourth-order step from ``t`` to ``t + dt``."""
    return TrotterPropagator(hamiltonian, dt).step(state, t)


def steps_per_period(dt: float, rotor_period: float) -> int:
    k = int(round(rotor_period / dt))
    if k < 1 or abs(k * dt - rotor_period) > 1e-9 * rotor_period:
        raise ValueError(f"rotor period {rotor_period} is not an integer multiple of dt={dt}")
    return k


def evolve(
    state: StateVector,
    hamiltonian: LabHamiltonian,
    config: EvolutionConfig,
    record_sites=None,
    chunk_bits: int = DEFAULT_CHUNK_BITS,
) -> TrajectoryRecord:
    """Propagate over ``[0, t_max]`` and record ``P_z`` every ``record_stride`` rotor periods.

    ``record_sites`` are site ids (default: all carbons).
    """
    tr = hamiltonian.rotor_period
    per = steps_per_period(config.dt, tr)
    n_periods = int(round(config.t_max / tr))
    if abs(n_periods * tr - config.t_max) > 1e-9 * tr:
        raise ValueError(f"t_max={config.t_max} is not a multiple of the rotor period {tr}")
    if n_periods % config.record_stride:
        raise ValueError("t_max must be a multiple of record_stride rotor periods")
    ids = hamiltonian.site_ids
    if record_sites is None:
        record_sites = [ids[k] for k, sp in enumerate(hamiltonian.species) if sp is Species.C13]
    idx = [ids.index(s) for s in record_sites]
    prop = TrotterPropagator(hamiltonian, config.dt, chunk_bits)
    rec_bits = prop.inv[idx] if idx else np.zeros(0, dtype=np.int64)
    tables = prop.tables(np.arange(per) * config.dt)
    re, im = prop.to_internal(state)
    every = per * config.record_stride
    n_rec = n_periods // config.record_stride + 1
    out = np.zeros((n_rec, len(idx)))
    prop.run(re, im, tables, n_periods * per, 0, every, rec_bits, out)
    times = np.arange(n_rec) * config.record_stride * tr
    return TrajectoryRecord(
        times=times,
        pz={sid: out[:, k].copy() for k, sid in enumerate(record_sites)},
        names={},
        orientation=hamiltonian.orientation,
        seed=config.seed,
    )
