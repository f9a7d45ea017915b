import numpy as np
import pytest
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from conftest import make_site, make_system
from spindiffusion.hamiltonian import MasConfig, Orientation, build_hamiltonian
from spindiffusion.propagator import (
    SUZUKI_P,
    EvolutionConfig,
    StateVector,
    TrotterPropagator,
    evolve,
    initial_state,
    polarization,
    read_trajectory_csv,
    sample_random_state,
    steps_per_period,
    trotter_step,
)
from spindiffusion.structure import Species, truncate_system

STATIC = MasConfig(rotor_angle=0.0)


def _propagate(ham, psi, dt, n_steps):
    prop = TrotterPropagator(ham, dt)
    re, im = prop.to_internal(psi)
    per = steps_per_period(dt, ham.rotor_period)
    prop.run(re, im, prop.tables(np.arange(per) * dt), n_steps)
    return prop.to_external(re, im)


def test_suzuki_weights():
    assert SUZUKI_P == pytest.approx(1 / (2 - 2 ** (1 / 3)), rel=1e-15)
    assert 2 * SUZUKI_P + (1 - 2 * SUZUKI_P) == pytest.approx(1.0)


def test_random_state_scalar():
    np.testing.assert_array_equal(sample_random_state(1, 5).amplitudes, [1.0])


@pytest.mark.parametrize("d", [3, 0, 12])
def test_random_state_needs_power_of_two(d):
    with pytest.raises(ValueError):
        sample_random_state(d, 0)


def test_random_state_normalized():
    d = 2**10
    psi = sample_random_state(d, 123)
    assert psi.norm() == pytest.approx(1.0, abs=1e-12)
    assert np.mean(np.abs(psi.amplitudes) ** 2) == pytest.approx(1 / d, rel=1e-12)
    np.testing.assert_array_equal(psi.amplitudes, sample_random_state(d, 123).amplitudes)


def test_random_state_unpolarized():
    d = 2**8
    vals = np.array([[polarization(sample_random_state(d, s), k) for k in range(8)] for s in range(100)])
    # one spin of a Haar state has variance 1/(d+1)
    assert np.abs(vals.mean(axis=0)).max() < 4 / np.sqrt(100 * (d + 1))


def test_random_states_nearly_orthogonal():
    d = 2**12
    overlaps = [abs(np.vdot(sample_random_state(d, s).amplitudes, sample_random_state(d, s + 1000).amplitudes)) for s in range(20)]
    assert np.mean(overlaps) < 3 / np.sqrt(d)


def test_initial_state_polarized(alanine):
    s = truncate_system(alanine, 4)
    psi = initial_state(s, seed=9)
    assert psi.norm() == pytest.approx(1.0, abs=1e-12)
    assert polarization(psi, s.index(s.reference_site)) == pytest.approx(1.0, abs=1e-14)
    d = 2 ** (s.n_sites - 1)
    for c in s.of_species(Species.C13):
        if c.id != s.reference_site:
            assert abs(polarization(psi, s.index(c.id))) < 5 / np.sqrt(d)
    with pytest.raises(ValueError):
        initial_state(s, polarized_site=s.of_species(Species.H1)[0].id)


def test_initial_state_single_spin():
    s = make_system([make_site(0, "C13", (0, 0, 0))])
    psi = initial_state(s, seed=0)
    np.testing.assert_array_equal(psi.amplitudes, [0, 1])
    assert polarization(psi, 0) == 1.0


def test_polarization_basics():
    assert polarization(StateVector([0, 1]), 0) == 1.0
    assert polarization(StateVector([1, 0]), 0) == -1.0
    assert polarization(StateVector(np.ones(2) / np.sqrt(2)), 0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        polarization(StateVector([0, 1]), 1)


def test_zero_hamiltonian_is_identity():
    s = make_system([make_site(0, "C13", (0, 0, 0)), make_site(1, "C13", (500.0, 0, 0))])
    ham = build_hamiltonian(s)
    assert len(ham.like_pairs) == 0
    psi = sample_random_state(4, 1)
    out = trotter_step(psi, ham, 0.0, 2e-6)
    np.testing.assert_allclose(out.amplitudes, psi.amplitudes, atol=1e-15)
    rec = evolve(psi, ham, EvolutionConfig(t_max=1e-3))
    for v in rec.pz.values():
        np.testing.assert_allclose(v, v[0], atol=1e-13)


def test_single_z_phase():
    w_hz = 1500.0
    s = make_system([make_site(0, "C13", (0, 0, 0), shift=w_hz)])
    ham = build_hamiltonian(s, mas=STATIC)
    dt = 2e-6
    psi = StateVector(np.ones(2) / np.sqrt(2))
    out = trotter_step(psi, ham, 0.0, dt).amplitudes
    phase = 2 * np.pi * w_hz * dt / 2
    np.testing.assert_allclose(out, [np.exp(1j * phase) / np.sqrt(2), np.exp(-1j * phase) / np.sqrt(2)], atol=1e-14)


def test_two_spin_flip_flop():
    # like pair along the static lab z: A = -2K, and |A|/2pi = 2 kHz
    k_target = 2 * np.pi * 1e3
    r = (120.1e3 * 2 * np.pi / 16 / k_target) ** (1 / 3)  # two carbons
    s = make_system([make_site(0, "C13", (0, 0, 0)), make_site(1, "C13", (0, 0, r))])
    ham = build_hamiltonian(s, mas=STATIC, cutoff=0.0)
    a = float(ham.like_coefficients(0.0)[0])
    assert abs(a) / (2 * np.pi) == pytest.approx(2e3, rel=1e-2)
    psi = StateVector([0, 1, 0, 0])  # bit 0 up, bit 1 down
    rec = evolve(psi, ham, EvolutionConfig(dt=2e-6, t_max=1e-3))
    h = ham.to_dense(0.0)
    exact = np.array([polarization(StateVector(expm(-1j * h * t) @ psi.amplitudes), 0) for t in rec.times])
    np.testing.assert_allclose(rec.pz[0], exact, atol=1e-8)
    np.testing.assert_allclose(rec.pz[0], np.cos(a * rec.times), atol=1e-8)


def test_static_fourth_order(alanine):
    s = truncate_system(alanine, 3, whole_groups=False)
    ham = build_hamiltonian(s, Orientation.from_rotation(Rotation.random(random_state=1)), STATIC)
    psi = initial_state(s, seed=2)
    t = 2e-4
    exact = expm(-1j * ham.to_dense(0.0) * t) @ psi.amplitudes
    errs = [np.linalg.norm(_propagate(ham, psi, dt, int(round(t / dt))).amplitudes - exact) for dt in (1e-6, 5e-7)]
    assert errs[0] / errs[1] > 12
    assert errs[1] < 1e-4


def test_norm_and_carbon_sum(alanine):
    s = truncate_system(alanine, 4)
    ham = build_hamiltonian(s, Orientation.from_rotation(Rotation.random(random_state=3)))
    psi = initial_state(s, seed=4)
    rec = evolve(psi, ham, EvolutionConfig(t_max=2e-3))
    total = sum(rec.pz.values())
    np.testing.assert_allclose(total, total[0], atol=1e-8)
    out = _propagate(ham, psi, 2e-6, 1000)
    assert abs(out.norm() - 1) < 1e-10


def test_chunking_does_not_change_result(alanine):
    s = truncate_system(alanine, 4)
    ham = build_hamiltonian(s, Orientation.from_rotation(Rotation.random(random_state=5)))
    psi = initial_state(s, seed=6)
    cfg = EvolutionConfig(t_max=5e-4)
    a = evolve(psi, ham, cfg, chunk_bits=3)
    b = evolve(psi, ham, cfg)
    for sid in a.pz:
        np.testing.assert_allclose(a.pz[sid], b.pz[sid], atol=1e-12)


def test_deterministic(alanine):
    s = truncate_system(alanine, 4)
    ham = build_hamiltonian(s, Orientation.from_rotation(Rotation.random(random_state=7)))
    cfg = EvolutionConfig(t_max=5e-4, seed=3)
    a = evolve(initial_state(s, seed=3), ham, cfg)
    b = evolve(initial_state(s, seed=3), ham, cfg)
    for sid in a.pz:
        np.testing.assert_array_equal(a.pz[sid], b.pz[sid])


def test_record_times(alanine):
    s = truncate_system(alanine, 0)
    ham = build_hamiltonian(s)
    rec = evolve(initial_state(s, seed=0), ham, EvolutionConfig(t_max=1e-3, record_stride=2))
    np.testing.assert_allclose(rec.times, np.arange(6) * 2e-4)
    assert set(rec.pz) == {c.id for c in s.of_species(Species.C13)}


def test_rejects_bad_timing(alanine):
    ham = build_hamiltonian(truncate_system(alanine, 0))
    psi = initial_state(truncate_system(alanine, 0), seed=0)
    with pytest.raises(ValueError):
        evolve(psi, ham, EvolutionConfig(t_max=1.05e-4))
    with pytest.raises(ValueError):
        evolve(psi, ham, EvolutionConfig(dt=3e-6, t_max=1e-4))
    with pytest.raises(ValueError):
        EvolutionConfig(dt=-1e-6)


def test_csv_roundtrip(alanine, tmp_path):
    s = truncate_system(alanine, 0)
    rec = evolve(initial_state(s, seed=0), build_hamiltonian(s), EvolutionConfig(t_max=5e-4))
    rec.names = {c.id: c.name for c in s.of_species(Species.C13)}
    rec.to_csv(tmp_path / "t.csv")
    times, cols = read_trajectory_csv(tmp_path / "t.csv")
    assert list(cols) == ["pz_CO", "pz_Calpha", "pz_Cbeta"]
    np.testing.assert_array_equal(times, rec.times)
    np.testing.assert_array_equal(cols["pz_CO"], rec.pz[s.reference_site])
