import os

import numpy as np
import pytest

from spindiffusion.structure import Site, Species, SpinSystem, b0_from_proton_larmor, load_alanine

SLOW = os.environ.get("SPINDIFF_SLOW") == "1"

# (criterion, status, detail) rows filled by test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: hours-long run, enabled with SPINDIFF_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if SLOW:
        return
    skip = pytest.mark.skip(reason="long run; set SPINDIFF_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, status, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {crit}: {status} - {detail}")


@pytest.fixture(scope="session")
def alanine():
    return load_alanine()


def make_site(sid, species, pos, shift=0.0, group=None, molecule=0, label=None):
    t = np.asarray(shift, dtype=float)
    if t.ndim == 0:
        t = float(t) * np.eye(3)
    return Site(sid, Species(species), np.asarray(pos, dtype=float), t, molecule_id=molecule, group_id=group, label=label)


def make_system(sites, reference=None, max_spins=24):
    if reference is None:
        carbons = [s.id for s in sites if s.species is Species.C13]
        reference = carbons[0] if carbons else sites[0].id
    return SpinSystem(tuple(sites), b0_from_proton_larmor(400e6), reference, max_spins)
