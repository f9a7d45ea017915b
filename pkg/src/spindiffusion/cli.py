"""Command-line entry point: ``spindiff <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` (JSON object with the keys of
:class:`RunConfig`); explicit flags override the file.  The effective
configuration is written to ``<out>/config.json`` next to the results, and
passing that file back with ``--config`` reproduces them.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chaos import (
    DEFAULT_DIAG_CAP,
    S0,
    ResourceCapError,
    SpacingHistogram,
    analyze_bath,
    eta,
    poisson_levels,
    spacing_histogram,
    unfold_spectrum,
)
from .hamiltonian import MAGIC_ANGLE, MasConfig, Orientation, build_hamiltonian
from .powder import PowderPlan, local_field_dispersion, powder_average
from .propagator import EvolutionConfig, steps_per_period
from .structure import Species, StructureError, example_structure_path, load_structure, truncate_system

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3
THERMAL_VALUE = 1.0 / 3.0


class ConfigError(ValueError):
    pass


_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9}


def parse_time(text) -> float:
    """Seconds from ``"40ms"``, ``"2us"``, ``"0.04"`` or a number."""
    if isinstance(text, (int, float)):
        return float(text)
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*([a-zµ]*)\s*", str(text))
    if not m or m.group(2) not in _UNITS and m.group(2) != "":
        raise ConfigError(f"cannot parse time {text!r}")
    try:
        return float(m.group(1)) * _UNITS.get(m.group(2) or "s")
    except ValueError:
        raise ConfigError(f"cannot parse time {text!r}") from None


@dataclass
class RunConfig:
    structure: str | None = None  # None: bundled alanine cluster
    polarized_site: int | None = None
    protons: int | list | None = None  # None: every proton in the file
    whole_groups: bool = True
    group_average: bool = True
    dt: float = 2e-6
    t_max: float = 40e-3
    record_stride: int = 1
    rotor_frequency: float = 10e3
    rotor_angle: float = MAGIC_ANGLE
    orientations: int = 200
    seed: int = 0
    realizations: int = 1
    jobs: int = 1
    out: str = "out"
    # local-field
    lf_mode: str = "analytic"
    lf_samples: int = 100_000
    lf_nodes: int = 64
    # spectrum
    sector: int | str | None = None
    degree: int = 9
    trim: float = 0.05
    bin_width: float = 0.1
    s_max: float = 4.0
    diag_cap: int = DEFAULT_DIAG_CAP
    memory_gib: float = 2.0
    poisson: bool = False
    poisson_levels: int = 10_000
    histogram: str | None = None
    # init-rate
    window: float = 2e-3
    fit: str = "linear"
    # dump-terms
    quaternion: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 1.0])
    time: float = 0.0

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        for key in ("dt", "t_max", "window", "time"):
            setattr(cfg, key, parse_time(getattr(cfg, key)))
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def mas(self) -> MasConfig:
        return MasConfig(self.rotor_frequency, self.rotor_angle)

    def evolution(self, t_max: float | None = None) -> EvolutionConfig:
        return EvolutionConfig(self.dt, self.t_max if t_max is None else t_max, self.record_stride, self.seed)

    def plan(self) -> PowderPlan:
        return PowderPlan(self.orientations, self.seed)

    def validate(self, command: str) -> None:
        if self.structure is not None and not Path(self.structure).is_file():
            raise ConfigError(f"structure file {self.structure!r} not found")
        if self.histogram is not None and command == "eta" and not Path(self.histogram).is_file():
            raise ConfigError(f"histogram file {self.histogram!r} not found")
        for name in ("dt", "rotor_frequency", "bin_width", "s_max", "memory_gib", "window"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("orientations", "realizations", "jobs", "record_stride", "degree", "lf_nodes", "lf_samples"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.t_max < 0:
            raise ConfigError("t_max must be non-negative")
        if self.fit not in ("linear", "quadratic"):
            raise ConfigError("fit must be 'linear' or 'quadratic'")
        if command in ("simulate", "init-rate"):
            tr = 1.0 / self.rotor_frequency
            try:
                steps_per_period(self.dt, tr)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            k = round(self.t_max / tr)
            if abs(k * tr - self.t_max) > 1e-9 * tr:
                raise ConfigError(f"t_max={self.t_max} is not a multiple of the rotor period {tr}")
            if k % self.record_stride:
                raise ConfigError("t_max must span a whole number of record strides")


def _load_system(cfg: RunConfig):
    path = cfg.structure or example_structure_path()
    try:
        return load_structure(path)
    except StructureError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _truncate(system, n_p, cfg):
    n_avail = len(system.of_species(Species.H1))
    if n_p is None:
        return system
    if not 0 <= n_p <= n_avail:
        raise ConfigError(f"--protons {n_p} outside [0, {n_avail}]")
    return truncate_system(system, n_p, whole_groups=cfg.whole_groups, reference=cfg.polarized_site)


def _single_protons(cfg):
    p = cfg.protons
    if isinstance(p, list):
        if len(p) != 1:
            raise ConfigError("this subcommand takes a single --protons value")
        return p[0]
    return p


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# subcommands -------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    system = _truncate(_load_system(cfg), _single_protons(cfg), cfg)
    avg = powder_average(
        system,
        cfg.plan(),
        cfg.evolution(),
        mas=cfg.mas,
        n_realizations=cfg.realizations,
        n_jobs=cfg.jobs,
        polarized_site=cfg.polarized_site,
        enable_group_average=cfg.group_average,
        run_dir=out / "runs",
    )
    avg.to_csv(out / "aggregate.csv")
    final = {avg.names[sid]: float(v[-1]) for sid, v in avg.pz.items()}
    summary = {
        "n_sites": system.n_sites,
        "n_protons": len(system.of_species(Species.H1)),
        "t_max_s": float(avg.times[-1]),
        "final_pz": final,
        "deviation_from_thermal": {k: v - THERMAL_VALUE for k, v in final.items()},
    }
    for name, v in final.items():
        print(f"{name}: P_z = {v:.4f} (deviation from 1/3: {v - THERMAL_VALUE:+.4f})")
    return summary


def cmd_local_field(cfg: RunConfig, out: Path) -> dict:
    system = _load_system(cfg)
    n_max = _single_protons(cfg)
    curve = local_field_dispersion(
        system,
        cfg.polarized_site,
        n_max,
        mode=cfg.lf_mode,
        n_time_nodes=cfg.lf_nodes,
        n_samples=cfg.lf_samples,
        seed=cfg.seed,
        mas=cfg.mas,
        whole_groups=False,
    )
    curve.to_csv(out / "local_field.csv")
    top = int(curve.n_p[-1])
    summary = {"max_protons": top, "B_max_rad_s": float(curve.b[-1])}
    if top >= 7 and curve.b[-1] > 0:
        summary["ratio_7_to_max"] = curve.ratio(7, top)
    print(f"B(n_p={top}) = {curve.b[-1]:.6g} rad/s")
    return summary


def cmd_spectrum(cfg: RunConfig, out: Path) -> dict:
    if cfg.poisson:
        s = unfold_spectrum(poisson_levels(cfg.poisson_levels, cfg.seed), cfg.degree, cfg.trim)
        hist = spacing_histogram(s, cfg.bin_width, cfg.s_max)
        summary = {"n_p": None, "eta": eta(hist), "s0": S0, "orientations": 0, "synthetic": "poisson"}
    else:
        system = _load_system(cfg)
        n_p = _single_protons(cfg)
        if n_p is None:
            raise ConfigError("spectrum needs --protons")
        n_avail = len(system.of_species(Species.H1))
        if not 0 <= n_p <= n_avail:
            raise ConfigError(f"--protons {n_p} outside [0, {n_avail}]")
        stats = analyze_bath(
            system,
            n_p,
            cfg.plan(),
            cfg.sector,
            mas=cfg.mas,
            degree=cfg.degree,
            trim=cfg.trim,
            bin_width=cfg.bin_width,
            s_max=cfg.s_max,
            cap=cfg.diag_cap,
            budget=cfg.memory_gib * 2**30,
            n_jobs=cfg.jobs,
            whole_groups=cfg.whole_groups,
        )
        hist = stats.histogram
        summary = stats.summary()
    hist.to_csv(out / "spacing.csv")
    print(f"eta = {summary['eta']:.4f}")
    return summary


def cmd_eta(cfg: RunConfig, out: Path) -> dict:
    if cfg.histogram is None:
        raise ConfigError("eta needs --histogram FILE")
    try:
        hist = SpacingHistogram.from_csv(cfg.histogram)
        value = eta(hist)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"eta = {value:.4f}")
    return {"histogram": str(cfg.histogram), "eta": value, "s0": S0}


def early_slope(times, pz, window: float, fit: str = "linear") -> float:
    """Least-squares slope of ``1 - P_z`` against ``t`` (or ``t^2``) through the origin on ``[0, window]``."""
    sel = times <= window * (1 + 1e-9)
    if sel.sum() < 2:
        raise ConfigError(f"fewer than two recorded points in the {window} s window")
    x = times[sel] if fit == "linear" else times[sel] ** 2
    y = 1.0 - pz[sel]
    return float(np.dot(x, y) / np.dot(x, x))


def cmd_init_rate(cfg: RunConfig, out: Path) -> dict:
    sizes = cfg.protons if isinstance(cfg.protons, list) else [cfg.protons]
    if any(p is None for p in sizes):
        raise ConfigError("init-rate needs --protons N [N ...]")
    base = _load_system(cfg)
    ref = cfg.polarized_site if cfg.polarized_site is not None else base.reference_site
    systems = [_truncate(base, p, cfg) for p in sizes]  # validate all sizes before running
    rows = []
    for n_p, system in zip(sizes, systems):
        avg = powder_average(
            system,
            cfg.plan(),
            cfg.evolution(),
            mas=cfg.mas,
            n_realizations=cfg.realizations,
            n_jobs=cfg.jobs,
            polarized_site=cfg.polarized_site,
            enable_group_average=cfg.group_average,
        )
        avg.to_csv(out / f"aggregate_np{n_p}.csv")
        pz = avg.pz[ref]
        rows.append({"n_p": n_p, "slope": early_slope(avg.times, pz, cfg.window, cfg.fit), "pz_final": float(pz[-1])})
    unit = "1/s" if cfg.fit == "linear" else "1/s^2"
    with open(out / "init_rate.csv", "w", encoding="utf-8") as fh:
        fh.write(f"n_p,slope_{unit.replace('/', '_per_').replace('^', '')},pz_final\n")
        for r in rows:
            fh.write(f"{r['n_p']},{r['slope']!r},{r['pz_final']!r}\n")
    print(f"{'n_p':>4}  {'slope (' + unit + ')':>16}  {'P_z(t_max)':>10}")
    for r in rows:
        print(f"{r['n_p']:>4}  {r['slope']:>16.6g}  {r['pz_final']:>10.4f}")
    return {"window_s": cfg.window, "fit": cfg.fit, "rows": rows}


def cmd_dump_terms(cfg: RunConfig, out: Path) -> dict:
    system = _truncate(_load_system(cfg), _single_protons(cfg), cfg)
    q = np.asarray(cfg.quaternion, dtype=float)
    try:
        orientation = Orientation(tuple(q / np.linalg.norm(q)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ham = build_hamiltonian(system, orientation, cfg.mas, enable_group_average=cfg.group_average)
    rows = ham.terms_at(cfg.time)
    with open(out / "terms.csv", "w", encoding="utf-8") as fh:
        fh.write("i,j,kind,coeff_rad_s\n")
        for i, j, kind, c in rows:
            fh.write(f"{i},{j},{kind},{c!r}\n")
    return {"n_terms": len(rows), "time_s": cfg.time}


COMMANDS = {
    "simulate": cmd_simulate,
    "local-field": cmd_local_field,
    "spectrum": cmd_spectrum,
    "eta": cmd_eta,
    "init-rate": cmd_init_rate,
    "dump-terms": cmd_dump_terms,
}


# argument parsing --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser, many_protons: bool = False) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--structure", help="structure JSON (default: bundled alanine cluster)")
    if many_protons:
        p.add_argument("--protons", type=int, nargs="+", help="bath sizes")
    else:
        p.add_argument("--protons", type=int, help="number of bath protons")
    p.add_argument("--orientations", type=int, help="number of crystallites")
    p.add_argument("--seed", type=int)
    p.add_argument("--dt", type=parse_time, help="time step, e.g. 2us")
    p.add_argument("--t-max", dest="t_max", type=parse_time, help="duration, e.g. 40ms")
    p.add_argument("--jobs", type=int, help="parallel workers")
    p.add_argument("--out", help="output directory")
    p.add_argument("--polarized-site", dest="polarized_site", type=int)
    p.add_argument("--realizations", type=int, help="random rest states per orientation")
    p.add_argument("--record-stride", dest="record_stride", type=int, help="rotor periods between records")
    p.add_argument("--no-group-average", dest="group_average", action="store_const", const=False)
    p.add_argument("--single-protons", dest="whole_groups", action="store_const", const=False,
                   help="do not complete methyl/ammonium triples")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spindiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("simulate", help="powder-averaged carbon polarization"))
    p = sub.add_parser("local-field", help="local-field dispersion curve")
    _common(p)
    p.add_argument("--max-protons", dest="protons", type=int)
    p.add_argument("--mode", dest="lf_mode", choices=("analytic", "monte_carlo"))
    p.add_argument("--samples", dest="lf_samples", type=int)
    p = sub.add_parser("spectrum", help="level-spacing statistics of the proton bath")
    _common(p)
    p.add_argument("--sector", help="number of up spins, or 'auto'")
    p.add_argument("--degree", type=int)
    p.add_argument("--bin-width", dest="bin_width", type=float)
    p.add_argument("--memory-gib", dest="memory_gib", type=float)
    p.add_argument("--poisson", action="store_const", const=True, help="synthetic Poisson self-test")
    p = sub.add_parser("eta", help="eta from a stored histogram")
    _common(p)
    p.add_argument("--histogram")
    p = sub.add_parser("init-rate", help="early-time depolarization slopes")
    _common(p, many_protons=True)
    p.add_argument("--window", type=parse_time)
    p.add_argument("--fit", choices=("linear", "quadratic"))
    p = sub.add_parser("dump-terms", help="Hamiltonian term list as CSV")
    _common(p)
    p.add_argument("--quaternion", type=float, nargs=4, metavar=("X", "Y", "Z", "W"))
    p.add_argument("--time", type=parse_time)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None:
            continue
        doc[key] = value
    if isinstance(doc.get("sector"), str) and doc["sector"] != "auto":
        try:
            doc["sector"] = int(doc["sector"])
        except ValueError:
            raise ConfigError("--sector must be an integer or 'auto'") from None
    try:
        return RunConfig.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        cfg.validate(args.command)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", cfg.to_dict())
        summary = COMMANDS[args.command](cfg, out)
        _write_json(out / "summary.json", summary)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceCapError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
