"""Generate the illustrative L-alanine cluster shipped in ``spindiffusion/data``.

Heavy-atom fractional coordinates are literature-like values for the
orthorhombic P2_12_12_1 cell.  N and all H positions are placed with ideal
tetrahedral geometry (S configuration at C-alpha); the ammonium rotor is turned
to point at the nearest carboxylate acceptors.  Shift tensors use principal
values in the ranges quoted for alanine at a 400 MHz proton frequency, with
principal axes tied to local bond frames.  Everything here is illustrative
input data, not a refined structure.

Usage::

    python scripts/build_alanine_structure.py > src/spindiffusion/data/alanine.json
"""

import json
import sys

import numpy as np

CELL = np.diag([6.032, 12.343, 5.784])
HEAVY = {
    "CO": (0.5551, 0.1404, 0.5922),
    "CA": (0.4668, 0.1609, 0.3426),
    "CB": (0.2832, 0.0797, 0.2991),
    "O1": (0.7259, 0.0839, 0.6367),
    "O2": (0.4405, 0.1837, 0.7558),
}
SYMOPS = [
    lambda f: f,
    lambda f: np.array([0.5 - f[0], -f[1], 0.5 + f[2]]),
    lambda f: np.array([-f[0], 0.5 + f[1], 0.5 - f[2]]),
    lambda f: np.array([0.5 + f[0], 0.5 - f[1], -f[2]]),
]
N_EXTERNAL = 13

# principal values (Hz) at 100 MHz carbon / 400 MHz proton frequency; the
# isotropic separations CO-CA = 12.69 kHz and CA-CB = 3.04 kHz follow the
# solid-state alanine shifts (177.8, 50.9, 20.5 ppm)
CO_PAS = (2000.0, -4500.0, -10000.0)
CA_PAS = (6650.0, 8550.0, 10370.0)
CB_PAS = (10563.0, 11563.0, 12563.0)
N_ISO = 0.0
H_ISO = {"NH3": 3000.0, "HA": 1700.0, "CH3": 1000.0}


def unit(v):
    return v / np.linalg.norm(v)


def tetrahedral_pair(center, n1, n2, bond):
    u1, u2 = unit(n1 - center), unit(n2 - center)
    bis = -unit(u1 + u2)
    nrm = unit(np.cross(u1, u2))
    half = np.radians(109.47 / 2)
    return [center + bond * (bis * np.cos(half) + s * nrm * np.sin(half)) for s in (1, -1)]


def rotor_hydrogens(center, anchor, bond, phase):
    """Three H on ``center`` staggered about the anchor->center axis."""
    axis = unit(center - anchor)
    ref = unit(np.cross(axis, [0.0, 0.0, 1.0]))
    ref2 = np.cross(axis, ref)
    theta = np.radians(180.0 - 109.47)
    out = []
    for k in range(3):
        phi = phase + 2 * np.pi * k / 3
        d = np.cos(theta) * axis + np.sin(theta) * (np.cos(phi) * ref + np.sin(phi) * ref2)
        out.append(center + bond * d)
    return out


def tensor(pas, frame):
    frame = np.asarray(frame)
    return frame.T @ np.diag(pas) @ frame


def molecule():
    x = {k: np.array(v) @ CELL for k, v in HEAVY.items()}
    n_pos, ha = tetrahedral_pair(x["CA"], x["CO"], x["CB"], 1.49)
    if (n_pos - x["CA"]) @ np.cross(x["CO"] - x["CA"], x["CB"] - x["CA"]) < 0:
        n_pos, ha = ha, n_pos
    x["N"] = n_pos
    x["HA"] = x["CA"] + 1.09 * unit(ha - x["CA"])
    ch3 = rotor_hydrogens(x["CB"], x["CA"], 1.09, 0.0)
    # turn methyl to stagger against N
    best = max(np.linspace(0, 2 * np.pi / 3, 121),
               key=lambda p: min(np.linalg.norm(h - x["N"]) for h in rotor_hydrogens(x["CB"], x["CA"], 1.09, p)))
    ch3 = rotor_hydrogens(x["CB"], x["CA"], 1.09, best)
    for k, h in enumerate(ch3):
        x[f"HB{k + 1}"] = h
    return x


def place(x, op, shift):
    out = {}
    for k, v in x.items():
        f = np.linalg.solve(CELL, v)
        out[k] = (op(f) + shift) @ CELL
    return out


def orient_ammonium(x, acceptors):
    def cost(p):
        hs = rotor_hydrogens(x["N"], x["CA"], 1.03, p)
        return sum(min(np.linalg.norm(h - a) for a in acceptors) for h in hs)
    best = min(np.linspace(0, 2 * np.pi / 3, 241), key=cost)
    for k, h in enumerate(rotor_hydrogens(x["N"], x["CA"], 1.03, best)):
        x[f"HN{k + 1}"] = h


def main():
    ref = molecule()
    shifts = [np.array(t) for t in np.array(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1])).reshape(3, -1).T]
    # acceptor oxygens around the reference ammonium
    oxy = []
    for oi, op in enumerate(SYMOPS):
        for t in shifts:
            if oi == 0 and not t.any():
                continue
            m = place(ref, op, t)
            oxy += [m["O1"], m["O2"]]
    oxy = [o for o in oxy if np.linalg.norm(o - ref["N"]) < 3.1]
    orient_ammonium(ref, oxy)

    mols = []
    for oi, op in enumerate(SYMOPS):
        for t in shifts:
            if oi == 0 and not t.any():
                continue
            mols.append(place(ref, op, t))

    co = ref["CO"]
    units = []  # (distance key, [positions], kind)
    for m in mols:
        units.append((np.linalg.norm(m["HA"] - co), [m["HA"]], "HA"))
        for kind, names in (("NH3", ["HN1", "HN2", "HN3"]), ("CH3", ["HB1", "HB2", "HB3"])):
            pts = [m[k] for k in names]
            units.append((np.linalg.norm(np.mean(pts, axis=0) - co), pts, kind))
    units.sort(key=lambda u: u[0])
    chosen, count = [], 0
    for u in units:
        if count + len(u[1]) > N_EXTERNAL:
            continue
        chosen.append(u)
        count += len(u[1])
        if count == N_EXTERNAL:
            break

    o_plane = unit(np.cross(ref["O1"] - ref["CO"], ref["O2"] - ref["CO"]))
    e1 = unit(ref["CA"] - ref["CO"])
    co_frame = [e1, np.cross(o_plane, e1), o_plane]
    ca_axis = unit(ref["N"] - ref["CA"])
    ca_frame = [ca_axis, unit(np.cross(ca_axis, ref["CB"] - ref["CA"])), None]
    ca_frame[2] = np.cross(ca_frame[0], ca_frame[1])
    cb_axis = unit(ref["CB"] - ref["CA"])
    cb_frame = [unit(np.cross(cb_axis, ref["N"] - ref["CA"])), None, cb_axis]
    cb_frame[1] = np.cross(cb_frame[2], cb_frame[0])

    def upper(t):
        return [float(round(t[0, 0], 3)), float(round(t[0, 1], 3)), float(round(t[0, 2], 3)),
                float(round(t[1, 1], 3)), float(round(t[1, 2], 3)), float(round(t[2, 2], 3))]

    def iso(v):
        return [v, 0.0, 0.0, v, 0.0, v]

    def xyz(p):
        return [float(round(c, 4)) for c in p]

    sites = [
        {"id": 0, "label": "C_O", "species": "C13", "xyz_angstrom": xyz(ref["CO"]),
         "shift_tensor_hz": upper(tensor(CO_PAS, co_frame)), "group_id": None, "molecule_id": 0},
        {"id": 1, "label": "C_alpha", "species": "C13", "xyz_angstrom": xyz(ref["CA"]),
         "shift_tensor_hz": upper(tensor(CA_PAS, ca_frame)), "group_id": None, "molecule_id": 0},
        {"id": 2, "label": "C_beta", "species": "C13", "xyz_angstrom": xyz(ref["CB"]),
         "shift_tensor_hz": upper(tensor(CB_PAS, cb_frame)), "group_id": None, "molecule_id": 0},
        {"id": 3, "label": "N", "species": "N15", "xyz_angstrom": xyz(ref["N"]),
         "shift_tensor_hz": iso(N_ISO), "group_id": None, "molecule_id": 0},
    ]
    sid, gid = 4, 0
    for k in ("HA",):
        sites.append({"id": sid, "label": "H_alpha", "species": "H1", "xyz_angstrom": xyz(ref[k]),
                      "shift_tensor_hz": iso(H_ISO["HA"]), "group_id": None, "molecule_id": 0})
        sid += 1
    for kind, names in (("NH3", ["HN1", "HN2", "HN3"]), ("CH3", ["HB1", "HB2", "HB3"])):
        for k in names:
            sites.append({"id": sid, "label": f"H_{kind}", "species": "H1", "xyz_angstrom": xyz(ref[k]),
                          "shift_tensor_hz": iso(H_ISO[kind]), "group_id": gid, "molecule_id": 0})
            sid += 1
        gid += 1
    for n, (_, pts, kind) in enumerate(chosen, start=1):
        g = None
        if len(pts) == 3:
            g, gid = gid, gid + 1
        for p in pts:
            sites.append({"id": sid, "label": f"H_{kind}", "species": "H1", "xyz_angstrom": xyz(p),
                          "shift_tensor_hz": iso(H_ISO[kind]), "group_id": g, "molecule_id": n})
            sid += 1
    doc = {
        "description": "Illustrative L-alanine cluster: one 13C/15N-labelled molecule plus the 13 nearest "
                       "neighbouring protons (whole methyl/ammonium groups). Idealized geometry; not a refined structure.",
        "b0_proton_larmor_hz": 400.0e6,
        "reference_site": 0,
        "sites": sites,
    }
    json.dump(doc, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
