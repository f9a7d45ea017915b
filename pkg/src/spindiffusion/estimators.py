"""Estimator-style wrappers around the simulation drivers.

They follow the scikit-learn parameter protocol (``get_params`` /
``set_params``, hyper-parameters stored verbatim in ``__init__``, fitted
results in trailing-underscore attributes) so runs can be configured, cloned
and recorded uniformly.  ``fit`` takes a :class:`SpinSystem` or a path to a
structure file.
"""

from __future__ import annotations

from pathlib import Path

from sklearn.base import BaseEstimator

from ._validation import check_positive
from .chaos import DEFAULT_DIAG_CAP, DEFAULT_MEMORY_BUDGET, SpectrumUnfolder, analyze_bath
from .hamiltonian import MAGIC_ANGLE, MasConfig
from .powder import PowderPlan, powder_average
from .propagator import EvolutionConfig
from .structure import SpinSystem, load_structure, truncate_system

__all__ = ["SpinDiffusionSimulator", "ChaosDiagnostic", "SpectrumUnfolder"]


def _as_system(X) -> SpinSystem:
    if isinstance(X, SpinSystem):
        return X
    if isinstance(X, (str, Path)):
        return load_structure(X)
    raise TypeError(f"expected a SpinSystem or a structure path, got {type(X).__name__}")


class SpinDiffusionSimulator(BaseEstimator):
    """Powder-averaged carbon polarization for a truncated proton bath.

    After ``fit``: ``trajectory_`` (averaged record with standard errors),
    ``runs_`` (per-run records), ``final_pz_`` (site name -> P_z at t_max).
    """

    def __init__(
        self,
        n_protons=None,
        orientations=200,
        seed=0,
        dt=2e-6,
        t_max=40e-3,
        record_stride=1,
        realizations=1,
        rotor_frequency=10e3,
        rotor_angle=MAGIC_ANGLE,
        group_average=True,
        whole_groups=True,
        polarized_site=None,
        n_jobs=1,
    ):
        self.n_protons = n_protons
        self.orientations = orientations
        self.seed = seed
        self.dt = dt
        self.t_max = t_max
        self.record_stride = record_stride
        self.realizations = realizations
        self.rotor_frequency = rotor_frequency
        self.rotor_angle = rotor_angle
        self.group_average = group_average
        self.whole_groups = whole_groups
        self.polarized_site = polarized_site
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        system = _as_system(X)
        if self.n_protons is not None:
            system = truncate_system(system, self.n_protons, self.whole_groups, self.polarized_site)
        check_positive("orientations", self.orientations, integer=True)
        check_positive("realizations", self.realizations, integer=True)
        avg, runs = powder_average(
            system,
            PowderPlan(self.orientations, self.seed),
            EvolutionConfig(self.dt, self.t_max, self.record_stride, self.seed),
            mas=MasConfig(self.rotor_frequency, self.rotor_angle),
            n_realizations=self.realizations,
            n_jobs=self.n_jobs,
            polarized_site=self.polarized_site,
            enable_group_average=self.group_average,
            return_runs=True,
        )
        self.system_ = system
        self.trajectory_ = avg
        self.runs_ = runs
        self.final_pz_ = {avg.names[sid]: float(v[-1]) for sid, v in avg.pz.items()}
        return self


class ChaosDiagnostic(BaseEstimator):
    """Spacing statistics and ``eta`` of the ``n_protons`` bath.

    After ``fit``: ``statistics_``, ``histogram_``, ``eta_``.
    """

    def __init__(
        self,
        n_protons=8,
        orientations=8,
        seed=0,
        sector=None,
        degree=9,
        trim=0.05,
        bin_width=0.1,
        s_max=4.0,
        cap=DEFAULT_DIAG_CAP,
        memory_budget=DEFAULT_MEMORY_BUDGET,
        n_jobs=1,
    ):
        self.n_protons = n_protons
        self.orientations = orientations
        self.seed = seed
        self.sector = sector
        self.degree = degree
        self.trim = trim
        self.bin_width = bin_width
        self.s_max = s_max
        self.cap = cap
        self.memory_budget = memory_budget
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        stats = analyze_bath(
            _as_system(X),
            self.n_protons,
            PowderPlan(self.orientations, self.seed),
            self.sector,
            degree=self.degree,
            trim=self.trim,
            bin_width=self.bin_width,
            s_max=self.s_max,
            cap=self.cap,
            budget=self.memory_budget,
            n_jobs=self.n_jobs,
        )
        self.statistics_ = stats
        self.histogram_ = stats.histogram
        self.eta_ = stats.eta
        return self
