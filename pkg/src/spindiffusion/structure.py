"""Spin-system description: sites, species, shift tensors and jump groups.

Structure files are JSON documents::

    {
      "b0_proton_larmor_hz": 400e6,
      "reference_site": 0,                # optional, default: first C13 site
      "description": "...",               # optional
      "sites": [
        {"id": 0, "species": "C13", "xyz_angstrom": [x, y, z],
         "shift_tensor_hz": [xx, xy, xz, yy, yz, zz],
         "group_id": null, "molecule_id": 0, "label": "C_O"}
      ]
    }

``shift_tensor_hz`` holds the deviation from the species reference frequency
at the configured field, either as the six upper-triangle entries or as a
full 3x3 nested list.  ``label`` is optional.  Unknown keys are rejected.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

GAMMA_H = 2.675e8  # rad s^-1 T^-1
HBAR = 1.054571817e-34  # J s
MU0_OVER_4PI = 1e-7  # T m / A
DEFAULT_MAX_SPINS = 24
MIN_SEPARATION = 0.5  # Angstrom

_TOP_KEYS = {"b0_proton_larmor_hz", "sites", "reference_site", "description"}
_SITE_KEYS = {"id", "species", "xyz_angstrom", "shift_tensor_hz", "group_id", "molecule_id", "label"}
_REQUIRED_SITE_KEYS = {"id", "species", "xyz_angstrom", "shift_tensor_hz", "molecule_id"}


class StructureError(ValueError):
    """Invalid spin-system description.  ``site_id`` names the offending site when known."""

    def __init__(self, message, site_id=None):
        super().__init__(message)
        self.site_id = site_id


class StructureParseError(StructureError):
    pass


class Species(enum.Enum):
    C13 = "C13"
    N15 = "N15"
    H1 = "H1"

    @property
    def gyromagnetic_ratio(self) -> float:
        return GAMMA_H * _GAMMA_RATIO[self]


_GAMMA_RATIO = {Species.H1: 1.0, Species.C13: 0.25, Species.N15: 0.10}


@dataclass(frozen=True, eq=False)
class Site:
    id: int
    species: Species
    position: np.ndarray
    shift_tensor: np.ndarray
    molecule_id: int = 0
    group_id: int | None = None
    label: str | None = None

    def __eq__(self, other):
        if not isinstance(other, Site):
            return NotImplemented
        return (
            self.id == other.id
            and self.species is other.species
            and self.molecule_id == other.molecule_id
            and self.group_id == other.group_id
            and self.label == other.label
            and np.array_equal(self.position, other.position)
            and np.array_equal(self.shift_tensor, other.shift_tensor)
        )

    __hash__ = object.__hash__

    @property
    def gamma(self) -> float:
        return self.species.gyromagnetic_ratio

    @property
    def name(self) -> str:
        """Short column-friendly name, e.g. ``CO`` for label ``C_O``."""
        if self.label:
            return self.label.replace("_", "")
        return f"site{self.id}"


@dataclass(frozen=True)
class SpinSystem:
    sites: tuple[Site, ...]
    b0: float
    reference_site: int
    max_spins: int = DEFAULT_MAX_SPINS
    description: str = field(default="", compare=False)

    def __post_init__(self):
        _validate(self)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(s.id for s in self.sites)

    def index(self, site_id: int) -> int:
        """Position of ``site_id`` in ``sites``; this is also its bit in a state vector."""
        for k, s in enumerate(self.sites):
            if s.id == site_id:
                return k
        raise KeyError(f"site id {site_id} not in system")

    def site(self, site_id: int) -> Site:
        return self.sites[self.index(site_id)]

    def of_species(self, species: Species) -> list[Site]:
        return [s for s in self.sites if s.species is species]

    @property
    def proton_larmor_hz(self) -> float:
        return GAMMA_H * self.b0 / (2 * np.pi)

    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.sites], dtype=float).reshape(-1, 3)


def _validate(system: SpinSystem) -> None:
    sites = system.sites
    if len(sites) > system.max_spins:
        raise StructureError(f"{len(sites)} sites exceed the configured maximum of {system.max_spins}")
    seen = set()
    for s in sites:
        if s.id in seen:
            raise StructureError(f"duplicate site id {s.id}", s.id)
        seen.add(s.id)
        t = s.shift_tensor
        if t.shape != (3, 3):
            raise StructureError(f"site {s.id}: shift tensor must be 3x3", s.id)
        scale = max(np.abs(t).max(), 1e-300)
        if np.abs(t - t.T).max() > 1e-12 * scale:
            raise StructureError(f"site {s.id}: shift tensor is not symmetric", s.id)
        if s.position.shape != (3,) or not np.all(np.isfinite(s.position)):
            raise StructureError(f"site {s.id}: position must be a finite 3-vector", s.id)
    if sites:
        pos = np.array([s.position for s in sites])
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        if d[i, j] < MIN_SEPARATION:
            raise StructureError(
                f"sites {sites[i].id} and {sites[j].id} are {d[i, j]:.3f} A apart (< {MIN_SEPARATION} A)",
                sites[j].id,
            )
    groups: dict[int, list[Site]] = {}
    for s in sites:
        if s.group_id is not None:
            groups.setdefault(s.group_id, []).append(s)
    for gid, members in groups.items():
        if len(members) != 3:
            ids = ", ".join(str(m.id) for m in members)
            raise StructureError(f"site {members[0].id}: group {gid} has {len(members)} sites ({ids}), expected 3", members[0].id)
        if len({m.species for m in members}) != 1:
            raise StructureError(f"group {gid} mixes species", members[0].id)
    if sites and system.reference_site not in seen:
        raise StructureError(f"reference site {system.reference_site} not present")


def b0_from_proton_larmor(larmor_hz: float) -> float:
    return 2 * np.pi * larmor_hz / GAMMA_H


def _parse_tensor(raw, site_id):
    arr = np.asarray(raw, dtype=float)
    if arr.shape == (6,):
        xx, xy, xz, yy, yz, zz = arr
        return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])
    if arr.shape == (3, 3):
        return arr
    raise StructureParseError(f"site {site_id}: shift_tensor_hz needs 6 entries or a 3x3 matrix", site_id)


def structure_from_dict(doc: dict, max_spins: int = DEFAULT_MAX_SPINS) -> SpinSystem:
    if not isinstance(doc, dict):
        raise StructureParseError("structure document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise StructureParseError(f"unknown top-level fields: {sorted(unknown)}")
    if "sites" not in doc or "b0_proton_larmor_hz" not in doc:
        raise StructureParseError("missing 'sites' or 'b0_proton_larmor_hz'")
    sites = []
    for raw in doc["sites"]:
        sid = raw.get("id") if isinstance(raw, dict) else None
        if not isinstance(raw, dict):
            raise StructureParseError("each site must be an object")
        unknown = set(raw) - _SITE_KEYS
        if unknown:
            raise StructureParseError(f"site {sid}: unknown fields {sorted(unknown)}", sid)
        missing = _REQUIRED_SITE_KEYS - set(raw)
        if missing:
            raise StructureParseError(f"site {sid}: missing fields {sorted(missing)}", sid)
        try:
            species = Species(raw["species"])
        except ValueError:
            raise StructureParseError(f"site {sid}: unknown species {raw['species']!r}", sid) from None
        pos = np.asarray(raw["xyz_angstrom"], dtype=float)
        if pos.shape != (3,):
            raise StructureParseError(f"site {sid}: xyz_angstrom must have 3 entries", sid)
        sites.append(
            Site(
                id=int(sid),
                species=species,
                position=pos,
                shift_tensor=_parse_tensor(raw["shift_tensor_hz"], sid),
                molecule_id=int(raw["molecule_id"]),
                group_id=None if raw.get("group_id") is None else int(raw["group_id"]),
                label=raw.get("label"),
            )
        )
    ref = doc.get("reference_site")
    if ref is None:
        carbons = [s.id for s in sites if s.species is Species.C13]
        ref = carbons[0] if carbons else (sites[0].id if sites else 0)
    return SpinSystem(
        sites=tuple(sites),
        b0=b0_from_proton_larmor(float(doc["b0_proton_larmor_hz"])),
        reference_site=int(ref),
        max_spins=max_spins,
        description=doc.get("description", ""),
    )


def load_structure(path, max_spins: int = DEFAULT_MAX_SPINS) -> SpinSystem:
    """Read and validate a structure file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise StructureParseError(f"{path}: malformed JSON ({exc})") from exc
    return structure_from_dict(doc, max_spins=max_spins)


def structure_to_dict(system: SpinSystem) -> dict:
    def upper(t):
        return [float(t[0, 0]), float(t[0, 1]), float(t[0, 2]), float(t[1, 1]), float(t[1, 2]), float(t[2, 2])]

    doc = {
        "b0_proton_larmor_hz": float(system.proton_larmor_hz),
        "reference_site": system.reference_site,
        "sites": [
            {
                "id": s.id,
                "species": s.species.value,
                "xyz_angstrom": [float(c) for c in s.position],
                "shift_tensor_hz": upper(s.shift_tensor),
                "group_id": s.group_id,
                "molecule_id": s.molecule_id,
                **({"label": s.label} if s.label is not None else {}),
            }
            for s in system.sites
        ],
    }
    if system.description:
        doc["description"] = system.description
    return doc


def save_structure(system: SpinSystem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(structure_to_dict(system), fh, indent=1)
        fh.write("\n")


def example_structure_path() -> Path:
    """Path of the bundled illustrative alanine cluster (3 C, 1 N, 20 H)."""
    return Path(str(resources.files("spindiffusion") / "data" / "alanine.json"))


def load_alanine(max_spins: int = DEFAULT_MAX_SPINS) -> SpinSystem:
    return load_structure(example_structure_path(), max_spins=max_spins)


def _bath_units(system: SpinSystem, reference: int, whole_groups: bool):
    ref_site = system.site(reference)
    ref_pos = ref_site.position
    protons = system.of_species(Species.H1)
    units = []
    done = set()
    for p in protons:
        if p.id in done:
            continue
        if whole_groups and p.group_id is not None:
            members = [q for q in protons if q.group_id == p.group_id]
            centroid = np.mean([q.position for q in members], axis=0)
            dist = float(np.linalg.norm(centroid - ref_pos))
            ids = sorted(q.id for q in members)
        else:
            members = [p]
            dist = float(np.linalg.norm(p.position - ref_pos))
            ids = [p.id]
        done.update(ids)
        foreign = members[0].molecule_id != ref_site.molecule_id
        units.append((foreign, dist, ids[0], ids))
    units.sort(key=lambda u: u[:3])
    return units


def order_bath_by_distance(system: SpinSystem, reference: int | None = None, whole_groups: bool = True) -> list[int]:
    """Proton site ids ordered for bath growth around ``reference``.

    Protons of the reference molecule come first, then the rest; within each
    tier the key is the distance to the reference site (group centroid for
    methyl/ammonium triples when ``whole_groups``, which keeps triples
    contiguous).
    """
    if reference is None:
        reference = system.reference_site
    system.site(reference)  # KeyError for unknown ids
    return [i for u in _bath_units(system, reference, whole_groups) for i in u[3]]


def bath_distances(system: SpinSystem, reference: int | None = None, whole_groups: bool = True) -> list[tuple[bool, float]]:
    """(foreign-molecule flag, distance key) for each entry of :func:`order_bath_by_distance`."""
    if reference is None:
        reference = system.reference_site
    return [(u[0], u[1]) for u in _bath_units(system, reference, whole_groups) for _ in u[3]]


def truncate_system(system: SpinSystem, n_p: int, whole_groups: bool = True, reference: int | None = None) -> SpinSystem:
    """Keep every non-proton site plus the first ``n_p`` protons of the bath order.

    With ``whole_groups`` a partially included triple is completed, so the
    result may hold up to two more protons than requested.
    """
    n_avail = len(system.of_species(Species.H1))
    if n_p < 0 or n_p > n_avail:
        raise ValueError(f"n_p={n_p} outside [0, {n_avail}]")
    if n_p == n_avail:
        return system
    keep = set()
    count = 0
    for u in _bath_units(system, system.reference_site if reference is None else reference, whole_groups):
        if count >= n_p:
            break
        keep.update(u[3])
        count += len(u[3])
    sites = [s for s in system.sites if s.species is not Species.H1 or s.id in keep]
    sizes: dict[int, int] = {}
    for s in sites:
        if s.group_id is not None:
            sizes[s.group_id] = sizes.get(s.group_id, 0) + 1
    # a split triple cannot jump as a unit; its kept members become plain sites
    sites = [replace(s, group_id=None) if s.group_id is not None and sizes[s.group_id] < 3 else s for s in sites]
    return replace(system, sites=tuple(sites))
