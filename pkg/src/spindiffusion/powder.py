"""Crystallite sampling, powder-averaged trajectories and the local-field curve."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial.transform import Rotation

from .hamiltonian import MasConfig, Orientation, build_hamiltonian, lab_z_in_crystal, _dipolar_tensor
from .propagator import DEFAULT_CHUNK_BITS, EvolutionConfig, TrajectoryRecord, evolve, initial_state
from .structure import Species, SpinSystem, order_bath_by_distance

SAMPLING_MODES = ("uniform_random", "repeatable_list")


class PowderRunError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"orientation {index} failed: {cause!r}")
        self.index = index
        self.cause = cause


@dataclass(frozen=True)
class PowderPlan:
    n_orientations: int = 200
    orientation_seed: int = 0
    sampling: str = "uniform_random"
    quaternions: tuple = ()  # used by repeatable_list

    def __post_init__(self):
        if int(self.n_orientations) != self.n_orientations or self.n_orientations < 1:
            raise ValueError("n_orientations must be a positive integer")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if self.sampling == "repeatable_list" and len(self.quaternions) < self.n_orientations:
            raise ValueError(
                f"repeatable_list holds {len(self.quaternions)} quaternions, {self.n_orientations} requested"
            )


def sample_orientations(plan: PowderPlan) -> list[Orientation]:
    """Haar-uniform orientations (or the first ``n`` entries of a fixed list)."""
    if plan.sampling == "repeatable_list":
        return [Orientation(tuple(q)) for q in plan.quaternions[: plan.n_orientations]]
    rots = Rotation.random(plan.n_orientations, random_state=plan.orientation_seed)
    return [Orientation.from_rotation(r) for r in rots]


def run_seed(seed: int, index: int, realization: int = 0) -> np.random.SeedSequence:
    """Independent, reproducible stream for one (orientation, realization) run."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), int(realization)))


def carbon_names(system: SpinSystem) -> dict:
    return {s.id: s.name for s in system.sites if s.species is Species.C13}


def _single_run(system, orientation, config, index, realization, mas, group_average, chunk_bits, polarized_site):
    ham = build_hamiltonian(system, orientation, mas, enable_group_average=group_average)
    psi = initial_state(system, polarized_site, seed=run_seed(config.seed, index, realization))
    rec = evolve(psi, ham, config, chunk_bits=chunk_bits)
    rec.names = carbon_names(system)
    return rec


def _guarded(index, *args):
    try:
        return _single_run(*args)
    except Exception as exc:  # re-raised with the orientation index below
        return PowderRunError(index, exc)


def average_records(records: list[TrajectoryRecord]) -> TrajectoryRecord:
    """Mean and standard error over runs, accumulated in list order."""
    if not records:
        raise ValueError("no records to average")
    first = records[0]
    pz, se = {}, {}
    n = len(records)
    for sid in first.pz:
        stack = np.stack([r.pz[sid] for r in records])
        pz[sid] = stack.mean(axis=0)
        se[sid] = stack.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(pz[sid])
    return TrajectoryRecord(
        times=first.times.copy(), pz=pz, names=dict(first.names), orientation=None, seed=first.seed, stderr=se
    )


def powder_average(
    system: SpinSystem,
    plan: PowderPlan,
    config: EvolutionConfig,
    *,
    mas: MasConfig = MasConfig(),
    n_realizations: int = 1,
    n_jobs: int = 1,
    polarized_site: int | None = None,
    enable_group_average: bool = True,
    chunk_bits: int = DEFAULT_CHUNK_BITS,
    run_dir=None,
    return_runs: bool = False,
):
    """Average carbon ``P_z(t)`` over orientations and random rest states.

    Every (orientation index, realization) pair gets its own seed stream, and
    aggregation follows the orientation index, so the result does not depend
    on ``n_jobs``.  With ``run_dir`` each run is written as
    ``run_<index>_<realization>.csv``.
    """
    if n_realizations < 1:
        raise ValueError("n_realizations must be at least 1")
    orientations = sample_orientations(plan)
    tasks = [(k, r) for k in range(len(orientations)) for r in range(n_realizations)]
    args = [
        (k, system, orientations[k], config, k, r, mas, enable_group_average, chunk_bits, polarized_site)
        for k, r in tasks
    ]
    if n_jobs == 1:
        results = [_guarded(*a) for a in args]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_guarded)(*a) for a in args)
    for res in results:
        if isinstance(res, PowderRunError):
            raise res
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        for (k, r), rec in zip(tasks, results):
            rec.to_csv(run_dir / f"run_{k:04d}_{r}.csv")
    avg = average_records(results)
    return (avg, results) if return_runs else avg


# local field -------------------------------------------------------------

@dataclass
class LocalFieldCurve:
    n_p: np.ndarray
    b: np.ndarray  # rad/s
    contributions: np.ndarray  # (rad/s)^2, one per added proton
    proton_ids: list = field(default_factory=list)

    def ratio(self, n_a: int, n_b: int) -> float:
        return float(self.b[n_a] / self.b[n_b])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n_p", "B_rad_s"])
            for n, b in zip(self.n_p, self.b):
                w.writerow([int(n), repr(float(b))])


def _sphere_mean_sq(tensors: np.ndarray) -> np.ndarray:
    """Mean of ``(u^T T u)^2`` over unit vectors ``u`` uniform on the sphere."""
    tr = np.trace(tensors, axis1=1, axis2=2)
    tr2 = np.einsum("kab,kba->k", tensors, tensors)
    return (2 * tr2 + tr**2) / 15.0


def _monte_carlo_mean_sq(tensors, n_samples, n_nodes, mas, seed):
    rots = Rotation.random(n_samples, random_state=seed).as_matrix()
    acc = np.zeros(len(tensors))
    for t in np.arange(n_nodes) * mas.rotor_period / n_nodes:
        w = lab_z_in_crystal(Orientation(), t, mas)
        u = np.einsum("a,nab->nb", w, rots)
        a = np.einsum("na,kab,nb->nk", u, tensors, u)
        acc += (a**2).mean(axis=0)
    return acc / n_nodes


def local_field_dispersion(
    system: SpinSystem,
    reference: int | None = None,
    max_protons: int | None = None,
    *,
    mode: str = "analytic",
    n_time_nodes: int = 64,
    n_samples: int = 100_000,
    seed: int = 0,
    mas: MasConfig = MasConfig(),
    whole_groups: bool = False,
) -> LocalFieldCurve:
    """Cumulative rms dipolar field at ``reference`` as protons are added.

    Each proton contributes the rotor-period and orientation average of
    ``A_jO(t)^2``.  ``mode="analytic"`` uses the closed sphere average
    ``(2 tr T^2 + (tr T)^2) / 15`` at each time node; ``"monte_carlo"``
    averages over ``n_samples`` Haar rotations.  Protons are added one at a
    time in bath order unless ``whole_groups``.
    """
    if mode not in ("analytic", "monte_carlo"):
        raise ValueError("mode must be 'analytic' or 'monte_carlo'")
    if n_time_nodes < 64:
        raise ValueError("n_time_nodes must be at least 64")
    if reference is None:
        reference = system.reference_site
    order = order_bath_by_distance(system, reference, whole_groups=whole_groups)
    if max_protons is not None:
        if max_protons < 0:
            raise ValueError("max_protons must be non-negative")
        order = order[:max_protons]
    if not order:
        return LocalFieldCurve(np.array([0]), np.array([0.0]), np.zeros(0), [])
    tensors = np.array([_dipolar_tensor(system, reference, j) for j in order])
    if mode == "analytic":
        per_node = _sphere_mean_sq(tensors)
        # the orientation average is the same at every node
        contrib = np.mean(np.broadcast_to(per_node, (n_time_nodes, len(order))), axis=0)
    else:
        contrib = _monte_carlo_mean_sq(tensors, n_samples, n_time_nodes, mas, seed)
    b = np.sqrt(np.concatenate([[0.0], np.cumsum(contrib)]))
    return LocalFieldCurve(np.arange(len(order) + 1), b, contrib, list(order))


def read_local_field_csv(path) -> LocalFieldCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    n = np.array([int(r[0]) for r in rows])
    b = np.array([float(r[1]) for r in rows])
    return LocalFieldCurve(n, b, np.diff(b**2), [])
