"""Level-spacing diagnostics of the proton bath.

The proton-only Hamiltonian at ``t = 0`` conserves total ``S_z``; one sector
is diagonalized, the spectrum is unfolded with a polynomial fit to its
staircase and the nearest-neighbour spacings are compared with the Poisson
law ``exp(-s)`` and the Wigner-Dyson surmise ``(pi s / 2) exp(-pi s^2 / 4)``
through the chaoticity parameter ``eta`` (1 for Poisson, 0 for Wigner-Dyson).
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, replace
from math import comb

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg, optimize
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_spacings, check_spectrum
from .hamiltonian import LabHamiltonian, MasConfig, Orientation, build_hamiltonian
from .powder import PowderPlan, sample_orientations
from .structure import Species, SpinSystem, truncate_system

DEFAULT_DIAG_CAP = 17
DEFAULT_MEMORY_BUDGET = 2 * 2**30  # bytes for one dense sector block
DEFAULT_DEGREE = 9
DEFAULT_TRIM = 0.05
DEFAULT_BIN_WIDTH = 0.1
DEFAULT_S_MAX = 4.0
DEGENERACY_FRACTION = 0.10


class ResourceCapError(RuntimeError):
    """A requested diagonalization exceeds the configured size or memory cap."""


class DegenerateSpectrumWarning(UserWarning):
    pass


def poisson_density(s):
    return np.exp(-np.asarray(s, dtype=float))


def wigner_dyson_density(s):
    s = np.asarray(s, dtype=float)
    return 0.5 * np.pi * s * np.exp(-0.25 * np.pi * s**2)


def crossing_point(xtol: float = 1e-10) -> float:
    """Smaller root ``s0`` of ``exp(-s) = (pi s/2) exp(-pi s^2/4)``."""
    return optimize.bisect(lambda s: poisson_density(s) - wigner_dyson_density(s), 0.0, 1.0, xtol=xtol)


S0 = crossing_point()


# Hamiltonian and sectors -------------------------------------------------

def proton_bath(system: SpinSystem, n_p: int | None = None, whole_groups: bool = True) -> SpinSystem:
    """Proton-only subsystem holding the first ``n_p`` bath protons."""
    if n_p is not None:
        system = truncate_system(system, n_p, whole_groups=whole_groups)
    protons = tuple(s for s in system.sites if s.species is Species.H1)
    ref = protons[0].id if protons else system.reference_site
    return replace(system, sites=protons, reference_site=ref)


def _bath_hamiltonian(system: SpinSystem, orientation: Orientation, mas: MasConfig, cap: int) -> LabHamiltonian:
    bath = proton_bath(system)
    if bath.n_sites > cap:
        raise ResourceCapError(f"{bath.n_sites} protons exceed the diagonalization cap of {cap}")
    return build_hamiltonian(bath, orientation, mas, enable_group_average=False, cutoff=0.0)


def proton_hamiltonian_matrix(
    system: SpinSystem,
    orientation: Orientation = Orientation(),
    t: float = 0.0,
    *,
    mas: MasConfig = MasConfig(),
    cap: int = DEFAULT_DIAG_CAP,
):
    """Real symmetric sparse matrix of the proton-only Hamiltonian (rad/s).

    Methyl/ammonium jump averaging is not applied.  Bit ``k`` of the basis
    index is the ``k``-th proton of ``system``.
    """
    return _bath_hamiltonian(system, orientation, mas, cap).to_sparse(t)


def sector_basis(n: int, n_up: int) -> np.ndarray:
    """Sorted basis indices with exactly ``n_up`` bits set."""
    if not 0 <= n_up <= n:
        raise ValueError(f"n_up={n_up} outside [0, {n}]")
    out = np.fromiter(
        (sum(1 << b for b in c) for c in itertools.combinations(range(n), n_up)), dtype=np.int64, count=comb(n, n_up)
    )
    out.sort()
    return out


def _check_budget(dim: int, budget: float) -> None:
    need = 8 * dim * dim
    if need > budget:
        raise ResourceCapError(f"sector of dimension {dim} needs {need / 2**30:.2f} GiB, budget {budget / 2**30:.2f} GiB")


def largest_sector_within(n: int, budget: float = DEFAULT_MEMORY_BUDGET) -> int:
    """``n_up`` closest to ``n/2`` whose dense block fits the memory budget."""
    for n_up in sorted(range(n + 1), key=lambda k: (abs(k - n / 2), k)):
        if 8 * comb(n, n_up) ** 2 <= budget:
            return n_up
    raise ResourceCapError("no sector fits the memory budget")


def sector_matrix(ham: LabHamiltonian, n_up: int, t: float = 0.0, budget: float = DEFAULT_MEMORY_BUDGET) -> np.ndarray:
    """Dense block of ``ham`` on the states with ``n_up`` up spins."""
    n = ham.n_sites
    basis = sector_basis(n, n_up)
    dim = len(basis)
    _check_budget(dim, budget)
    s = ((basis[:, None] >> np.arange(n)) & 1) - 0.5
    diag = s[:, ham.z_sites] @ ham.z_coefficients(t) if n else np.zeros(dim)
    h = np.zeros((dim, dim))
    for pairs, coef, flip in (
        (ham.like_pairs, ham.like_coefficients(t), True),
        (ham.unlike_pairs, ham.unlike_coefficients(t), False),
    ):
        for (a, b), c in zip(pairs, coef):
            diag = diag - 2.0 * c * s[:, a] * s[:, b]
            if flip:
                rows = np.flatnonzero(((basis >> a) ^ (basis >> b)) & 1)
                cols = np.searchsorted(basis, basis[rows] ^ ((1 << a) | (1 << b)))
                h[rows, cols] += 0.5 * c
    h[np.diag_indices(dim)] = diag
    return h


@dataclass
class SpectrumBlock:
    n_up: int
    n_sites: int
    eigenvalues: np.ndarray

    @property
    def sector(self) -> float:
        """Total ``S_z`` eigenvalue of the block."""
        return self.n_up - 0.5 * self.n_sites

    @property
    def dimension(self) -> int:
        return len(self.eigenvalues)


def _eigvalsh(h: np.ndarray) -> np.ndarray:
    if h.shape[0] == 0:
        return np.zeros(0)
    return np.sort(linalg.eigvalsh(h, overwrite_a=True, check_finite=False))


def extract_sector(matrix, n_up: int | None = None, budget: float = DEFAULT_MEMORY_BUDGET) -> SpectrumBlock:
    """Eigenvalues of ``matrix`` restricted to the ``n_up`` sector (default: largest)."""
    dim_full = matrix.shape[0]
    n = int(round(np.log2(dim_full)))
    if 2**n != dim_full:
        raise ValueError("matrix dimension is not a power of two")
    if n_up is None:
        n_up = n // 2
    basis = sector_basis(n, n_up)
    _check_budget(len(basis), budget)
    if hasattr(matrix, "tocsr"):
        sub = matrix.tocsr()[basis][:, basis].toarray()
    else:
        sub = np.array(np.asarray(matrix)[np.ix_(basis, basis)])
    return SpectrumBlock(n_up, n, _eigvalsh(np.real(sub)))


def bath_spectrum(
    system: SpinSystem,
    orientation: Orientation,
    n_up: int | None = None,
    *,
    mas: MasConfig = MasConfig(),
    cap: int = DEFAULT_DIAG_CAP,
    budget: float = DEFAULT_MEMORY_BUDGET,
) -> SpectrumBlock:
    """Sector spectrum of the proton bath of ``system`` at ``t = 0``, built directly in the sector."""
    ham = _bath_hamiltonian(system, orientation, mas, cap)
    if n_up is None:
        n_up = ham.n_sites // 2
    return SpectrumBlock(n_up, ham.n_sites, _eigvalsh(sector_matrix(ham, n_up, 0.0, budget)))


# unfolding ---------------------------------------------------------------

class SpectrumUnfolder(TransformerMixin, BaseEstimator):
    """Polynomial staircase unfolding.

    ``fit`` fits the level-count staircase of the interior levels (``trim``
    of the levels dropped at each end) with a polynomial of ``degree``.
    ``transform`` maps the interior levels through the fit and returns their
    nearest-neighbour spacings scaled to unit mean.
    """

    def __init__(self, degree: int = DEFAULT_DEGREE, trim: float = DEFAULT_TRIM):
        self.degree = degree
        self.trim = trim

    def _interior(self, levels):
        n = len(levels)
        k = int(np.floor(self.trim * n))
        return k, n - k

    def fit(self, X, y=None):
        levels = check_spectrum(X)
        if not 0 <= self.trim < 0.5:
            raise ValueError("trim must lie in [0, 0.5)")
        lo, hi = self._interior(levels)
        staircase = np.arange(len(levels), dtype=float) + 0.5
        deg = min(self.degree, hi - lo - 1)
        self.staircase_ = np.polynomial.Polynomial.fit(levels[lo:hi], staircase[lo:hi], deg)
        gaps = np.diff(levels)
        scale = max(np.abs(levels).max(), 1e-300)
        self.zero_fraction_ = float(np.mean(gaps <= 1e-12 * scale))
        self.degenerate_ = self.zero_fraction_ > DEGENERACY_FRACTION
        if self.degenerate_:
            warnings.warn(
                f"{100 * self.zero_fraction_:.1f}% of level spacings vanish; spectrum is degenerate",
                DegenerateSpectrumWarning,
                stacklevel=2,
            )
        return self

    def transform(self, X):
        levels = check_spectrum(X)
        lo, hi = self._interior(levels)
        s = np.diff(self.staircase_(levels[lo:hi]))
        if np.any(s < 0):
            warnings.warn("unfolding map is not monotone; negative spacings clipped to 0", stacklevel=2)
            s = np.clip(s, 0.0, None)
        return s / s.mean()


def unfold_spectrum(eigenvalues, degree: int = DEFAULT_DEGREE, trim: float = DEFAULT_TRIM) -> np.ndarray:
    return SpectrumUnfolder(degree, trim).fit_transform(eigenvalues)


# histograms and eta ------------------------------------------------------

@dataclass
class SpacingHistogram:
    edges: np.ndarray
    density: np.ndarray
    n_spacings: int = 0
    n_orientations: int = 1

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def integral(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "P_s"])
            for c, p in zip(self.centers, self.density):
                w.writerow([repr(float(c)), repr(float(p))])

    @classmethod
    def from_csv(cls, path) -> "SpacingHistogram":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or [h.strip() for h in rows[0]] != ["s", "P_s"]:
            raise ValueError(f"{path}: expected header 's,P_s'")
        data = np.array(rows[1:], dtype=float).reshape(-1, 2)
        if len(data) == 0:
            raise ValueError(f"{path}: empty histogram")
        centers = data[:, 0]
        width = centers[1] - centers[0] if len(centers) > 1 else 2 * centers[0]
        if len(centers) > 1 and not np.allclose(np.diff(centers), width, rtol=1e-9, atol=1e-12):
            raise ValueError(f"{path}: bins are not uniform")
        edges = np.concatenate([centers - width / 2, [centers[-1] + width / 2]])
        return cls(edges, data[:, 1])


def _edges(bin_width: float, s_max: float) -> np.ndarray:
    if not bin_width > 0 or not s_max > 0:
        raise ValueError("bin_width and s_max must be positive")
    n = int(round(s_max / bin_width))
    if abs(n * bin_width - s_max) > 1e-9 * s_max:
        raise ValueError("s_max must be a multiple of bin_width")
    return np.linspace(0.0, s_max, n + 1)


def spacing_histogram(spacings, bin_width: float = DEFAULT_BIN_WIDTH, s_max: float = DEFAULT_S_MAX) -> SpacingHistogram:
    """Density histogram on ``[0, s_max]``.

    Densities are normalized by the total number of spacings, so mass beyond
    ``s_max`` is lost rather than redistributed over the range.
    """
    s = check_spacings(spacings)
    edges = _edges(bin_width, s_max)
    counts, _ = np.histogram(s, bins=edges)
    return SpacingHistogram(edges, counts / (len(s) * np.diff(edges)), len(s), 1)


def average_histograms(hists: list[SpacingHistogram]) -> SpacingHistogram:
    """Equal-weight mean of histograms sharing the same bins."""
    if not hists:
        raise ValueError("no histograms to average")
    edges = hists[0].edges
    for h in hists[1:]:
        if not np.array_equal(h.edges, edges):
            raise ValueError("histograms have different bins")
    dens = np.mean([h.density for h in hists], axis=0)
    return SpacingHistogram(
        edges.copy(), dens, sum(h.n_spacings for h in hists), sum(h.n_orientations for h in hists)
    )


def reference_histogram(kind: str, bin_width: float = DEFAULT_BIN_WIDTH, s_max: float = DEFAULT_S_MAX) -> SpacingHistogram:
    """Poisson (``"poisson"``) or Wigner-Dyson (``"goe"``) density sampled at bin centres."""
    edges = _edges(bin_width, s_max)
    centers = 0.5 * (edges[1:] + edges[:-1])
    fn = {"poisson": poisson_density, "goe": wigner_dyson_density}[kind]
    return SpacingHistogram(edges, fn(centers), 0, 0)


def _clipped_integral(edges, values, s0):
    widths = np.clip(np.minimum(edges[1:], s0) - edges[:-1], 0.0, None)
    return float(np.sum(values * widths))


def eta(hist: SpacingHistogram, s0: float = S0) -> float:
    """Chaoticity parameter from a histogram.

    Integrals over ``[0, s0]`` use the midpoint rule on the histogram bins,
    the last bin clipped at ``s0``; the reference densities go through the
    same rule, so the Poisson and Wigner-Dyson histograms give exactly 1
    and 0.
    """
    if hist.edges[0] > 0 or hist.edges[-1] < s0:
        raise ValueError("histogram must cover [0, s0]")
    centers = 0.5 * (hist.edges[1:] + hist.edges[:-1])
    i_p = _clipped_integral(hist.edges, poisson_density(centers), s0)
    i_wd = _clipped_integral(hist.edges, wigner_dyson_density(centers), s0)
    i_h = _clipped_integral(hist.edges, hist.density, s0)
    return (i_h - i_wd) / (i_p - i_wd)


def cdf_sup_deviation(spacings, kind: str) -> float:
    """Kolmogorov distance between the empirical spacing CDF and a reference law."""
    s = np.sort(check_spacings(spacings))
    if kind == "poisson":
        ref = 1.0 - np.exp(-s)
    elif kind == "goe":
        ref = 1.0 - np.exp(-0.25 * np.pi * s**2)
    else:
        raise ValueError(f"unknown reference {kind!r}")
    n = len(s)
    upper = np.arange(1, n + 1) / n - ref
    lower = ref - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


# synthetic spectra -------------------------------------------------------

def poisson_levels(n: int, seed=None) -> np.ndarray:
    """Uncorrelated levels: cumulative sum of unit-mean exponential gaps."""
    rng = np.random.default_rng(seed)
    return np.cumsum(rng.exponential(1.0, n))


def goe_levels(dim: int, seed=None) -> np.ndarray:
    """Eigenvalues of one Gaussian orthogonal ensemble matrix."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    return np.sort(linalg.eigvalsh(a + a.T, overwrite_a=True, check_finite=False))


# driver ------------------------------------------------------------------

@dataclass
class SpacingStatistics:
    n_p: int
    n_up: int
    spacings: np.ndarray
    histogram: SpacingHistogram
    eta: float
    n_orientations: int
    s0: float = S0

    def summary(self) -> dict:
        return {
            "n_p": self.n_p,
            "sector_n_up": self.n_up,
            "eta": self.eta,
            "s0": self.s0,
            "orientations": self.n_orientations,
            "n_spacings": int(len(self.spacings)),
        }


def _orientation_spacings(system, orientation, n_up, mas, cap, budget, degree, trim):
    block = bath_spectrum(system, orientation, n_up, mas=mas, cap=cap, budget=budget)
    return unfold_spectrum(block.eigenvalues, degree, trim)


def analyze_bath(
    system: SpinSystem,
    n_p: int,
    plan: PowderPlan = PowderPlan(8),
    n_up: int | str | None = None,
    *,
    mas: MasConfig = MasConfig(),
    degree: int = DEFAULT_DEGREE,
    trim: float = DEFAULT_TRIM,
    bin_width: float = DEFAULT_BIN_WIDTH,
    s_max: float = DEFAULT_S_MAX,
    cap: int = DEFAULT_DIAG_CAP,
    budget: float = DEFAULT_MEMORY_BUDGET,
    n_jobs: int = 1,
    whole_groups: bool = True,
) -> SpacingStatistics:
    """Spacing statistics of the ``n_p``-proton bath averaged over orientations.

    ``n_up=None`` selects the largest sector ``n_p // 2``; ``"auto"`` the
    largest sector whose dense block fits ``budget``.  Histograms of the
    orientations are averaged with equal weights.
    """
    bath = proton_bath(system, n_p, whole_groups)
    n = bath.n_sites
    if n > cap:
        raise ResourceCapError(f"{n} protons exceed the diagonalization cap of {cap}")
    if n_up == "auto":
        n_up = largest_sector_within(n, budget)
    elif n_up is None:
        n_up = n // 2
    _check_budget(comb(n, n_up), budget)
    orientations = sample_orientations(plan)
    args = (n_up, mas, cap, budget, degree, trim)
    if n_jobs == 1:
        per = [_orientation_spacings(bath, o, *args) for o in orientations]
    else:
        per = Parallel(n_jobs=n_jobs)(delayed(_orientation_spacings)(bath, o, *args) for o in orientations)
    hist = average_histograms([spacing_histogram(s, bin_width, s_max) for s in per])
    return SpacingStatistics(n, n_up, np.concatenate(per), hist, eta(hist), len(orientations))
