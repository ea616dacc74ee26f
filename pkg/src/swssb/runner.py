"""Declarative experiment specs and their execution.

A spec is a YAML or JSON mapping with ``schema: swssb.experiment/1`` and a
``kind``. Physics parameters (rates, times, sizes) have no defaults and must
be given explicitly. Every CSV written here starts with ``#`` lines holding
the package version, a hash of the package sources, the seed and the full
spec as JSON, so each file records how it was produced.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import jsonschema
import numpy as np
import yaml

from . import (
    collapse,
    config_space,
    decoders,
    diagnostics,
    exact_evolver,
    hydro_gaussian,
    modelf_langevin,
    rotor_analytic,
    ssep_sampler,
)

logger = logging.getLogger(__name__)

SCHEMA_ID = "swssb.experiment/1"
KINDS = ("evolve", "correlators", "cmi", "decode", "winding", "hydro", "rotor", "rg", "modelf")


class SpecError(ValueError):
    """Spec file missing, unparsable or violating the schema."""


# schema

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int1 = {"type": "integer", "minimum": 1}


def _list(item, min_items=1):
    return {"type": "array", "items": item, "minItems": min_items}


_lattice = {
    "type": "object",
    "properties": {
        "extents": _list({"type": "integer", "minimum": 1}),
        "periodic": {"oneOf": [{"type": "boolean"}, _list({"type": "boolean"})]},
    },
    "required": ["extents", "periodic"],
    "additionalProperties": False,
}
_initial = {
    "oneOf": [
        {"enum": ["neel", "domain_wall"]},
        _list({"enum": [0, 1]}),
    ]
}

_KIND_PROPS: dict[str, tuple[dict, list]] = {
    "evolve": (
        {
            "lattice": _lattice,
            "gamma": _pos,
            "times": _list(_nonneg),
            "initial": _initial,
            "Q": _list({"enum": [1, 2]}),
            "separations": _list(_int1),
            "snapshots": {"type": "boolean"},
        },
        ["lattice", "gamma", "times", "initial"],
    ),
    "correlators": (
        {
            "lattice": _lattice,
            "gamma": _pos,
            "times": _list(_nonneg),
            "initial": _initial,
            "Q": _list({"enum": [1, 2]}),
            "separations": _list(_int1),
            "fit_window": _list(_num, 2),
            "symmetric": {"type": "boolean"},
        },
        ["lattice", "gamma", "times", "initial", "Q", "separations"],
    ),
    "cmi": (
        {
            "lattice": _lattice,
            "gamma": _pos,
            "times": _list(_nonneg),
            "initial": _initial,
            "R_B": _list(_int1),
            "geometry": {"enum": ["interior", "covering"]},
        },
        ["lattice", "gamma", "times", "initial", "R_B", "geometry"],
    ),
    "decode": (
        {
            "L": {"type": "integer", "minimum": 2},
            "gamma": _pos,
            "times": _list(_pos),
            "R_B": _list(_int1),
            "trials": _int1,
            "decoders": _list({"enum": ["com", "mwpm", "height"]}),
            "collapse_exponent": _num,
        },
        ["L", "gamma", "times", "R_B", "trials"],
    ),
    "winding": (
        {
            "lattice": _lattice,
            "gamma": _pos,
            "times": _list(_nonneg),
            "initial": _initial,
            "ensemble": {"enum": ["renyi2", "disorder"]},
            "samples": _int1,
            "acceptance_floor": _pos,
        },
        ["lattice", "gamma", "times", "initial", "ensemble", "samples"],
    ),
    "hydro": (
        {
            "L": {"type": "integer", "minimum": 4},
            "D": _pos,
            "gamma_n": _pos,
            "times": _list(_pos),
            "R_B": _list(_int1),
            "r": _list(_int1),
            "q": _num,
        },
        ["L", "D", "gamma_n", "times"],
    ),
    "rotor": (
        {
            "t_tilde": _list(_pos),
            "Q": _list({"type": "number", "minimum": 1}),
            "R_B": _list(_int1),
            "t": _list(_pos),
            "geometry": {"enum": ["edge", "interior"]},
        },
        ["t_tilde"],
    ),
    "rg": (
        {
            "A": _list(_num),
            "y0": _pos,
            "deltas": _list(_pos, 3),
            "threshold": _pos,
            "flow_grid": {
                "type": "object",
                "properties": {"s": _list(_num, 2), "y": _list(_nonneg, 2), "n": _int1},
                "required": ["s", "y", "n"],
                "additionalProperties": False,
            },
        },
        ["A", "y0", "deltas"],
    ),
    "modelf": (
        {
            "lattice": _lattice,
            "J": _nonneg,
            "K": _nonneg,
            "beta": _pos,
            "gamma_phi": _nonneg,
            "gamma_n": _nonneg,
            "dt": _pos,
            "t_total": _pos,
            "copies": _int1,
            "record_every": _int1,
            "wrapped": {"type": "boolean"},
        },
        ["lattice", "J", "K", "beta", "gamma_phi", "gamma_n", "dt", "t_total", "copies", "record_every"],
    ),
}


def schema_for(kind: str) -> dict:
    props, required = _KIND_PROPS[kind]
    base = {
        "schema": {"const": SCHEMA_ID},
        "kind": {"const": kind},
        "seed": {"type": "integer", "minimum": 0},
        "name": {"type": "string"},
    }
    return {
        "type": "object",
        "properties": {**base, **props},
        "required": ["schema", "kind", *required],
        "additionalProperties": False,
    }


def load_spec(path: str | Path) -> dict:
    """Read and validate a spec file.

    Raises
    ------
    SpecError
        If the file cannot be read or parsed or does not satisfy its schema.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    try:
        spec = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise SpecError(f"cannot parse spec {path}: {exc}") from exc
    validate_spec(spec)
    return spec


def validate_spec(spec: Any) -> None:
    if not isinstance(spec, dict):
        raise SpecError("spec must be a mapping")
    kind = spec.get("kind")
    if kind not in KINDS:
        raise SpecError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    try:
        jsonschema.validate(spec, schema_for(kind))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SpecError(f"spec field {where}: {exc.message}") from exc


# provenance and output


def code_hash() -> str:
    """SHA-256 over the package sources, in sorted path order."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def header_lines(spec: dict, seed: int | None) -> list[str]:
    return [
        f"swssb {_version()}",
        f"code_hash {code_hash()}",
        f"seed {seed if seed is not None else 'none'}",
        "spec " + json.dumps(spec, sort_keys=True, separators=(",", ":")),
    ]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence], header: Sequence[str]) -> Path:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())
    return path


def read_csv(path: str | Path) -> tuple[dict, list[str], list[list[str]]]:
    """Return ``(spec, columns, rows)`` from a file written by :func:`write_csv`."""
    spec: dict = {}
    body = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# spec "):
            spec = json.loads(line[len("# spec "):])
        elif not line.startswith("#"):
            body.append(line)
    rows = list(csv.reader(body))
    return spec, rows[0], rows[1:]


def write_json(path: Path, payload: dict, header: Sequence[str]) -> Path:
    meta = {"header": list(header), **payload}
    path.write_text(json.dumps(meta, sort_keys=True, indent=1, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


# work distribution


def pmap(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Ordered map, optionally over a process pool; results keep input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def spawn_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


# experiments


def _lattice(spec: dict) -> config_space.Lattice:
    lat = spec["lattice"]
    return config_space.make_lattice(lat["extents"], lat["periodic"])


def _initial(lattice: config_space.Lattice, init) -> np.ndarray:
    if isinstance(init, list):
        if len(init) != lattice.n_sites:
            raise ValueError("initial configuration length does not match the lattice")
        return np.asarray(init, dtype=np.uint8)
    if init == "neel":
        return config_space.neel_state(lattice)
    n = lattice.n_sites
    cfg = np.zeros(n, dtype=np.uint8)
    cfg[: n // 2] = 1
    return cfg


def _evolved(spec: dict):
    lat = _lattice(spec)
    init = _initial(lat, spec["initial"])
    dist0 = config_space.SectorDistribution.point_mass(lat, init)
    times = [float(t) for t in spec["times"]]
    return lat, times, exact_evolver.evolve_times(dist0, spec["gamma"], times)


def _series_rows(times, dists, Qs, seps, symmetric):
    rows, series = [], []
    for t, d in zip(times, dists):
        for Q in Qs:
            cs = diagnostics.correlator_series(d, Q, seps, symmetric=symmetric, t=t)
            series.append(cs)
            for x, v in zip(cs.separations, cs.values):
                rows.append([t, Q, int(x), float(v), x / t if t > 0 else math.nan])
    return rows, series


def run_evolve(spec, out: Path, header, threads, seed) -> list[Path]:
    lat, times, dists = _evolved(spec)
    files = []
    dens = np.array([d.density() for d in dists])
    rows = [[t, i, float(dens[k, i])] for k, t in enumerate(times) for i in range(lat.n_sites)]
    files.append(write_csv(out / "density.csv", ["t", "site", "density"], rows, header))
    if spec.get("snapshots", True):
        for k, (t, d) in enumerate(zip(times, dists)):
            p = out / f"snapshot_{k:03d}.json"
            p.write_text(d.to_json() + "\n")
            files.append(p)
    if "Q" in spec and "separations" in spec:
        rows, _ = _series_rows(times, dists, spec["Q"], spec["separations"], True)
        files.append(write_csv(out / "correlators.csv", ["t", "Q", "x", "C", "x_over_t"], rows, header))
    return files


def run_correlators(spec, out: Path, header, threads, seed) -> list[Path]:
    _, times, dists = _evolved(spec)
    rows, series = _series_rows(times, dists, spec["Q"], spec["separations"], spec.get("symmetric", True))
    files = [write_csv(out / "correlators.csv", ["t", "Q", "x", "C", "x_over_t"], rows, header)]
    window = tuple(spec["fit_window"]) if "fit_window" in spec else None
    fits = []
    for cs in series:
        try:
            f = cs.fit(window)
            fits.append([cs.t, cs.Q, f.xi, f.stderr, f.window[0], f.window[1], f.n_points])
        except ValueError as exc:
            logger.warning("no fit at t=%g Q=%d: %s", cs.t, cs.Q, exc)
            fits.append([cs.t, cs.Q, math.nan, math.nan, math.nan, math.nan, 0])
    files.append(
        write_csv(out / "lengths.csv", ["t", "Q", "xi", "stderr", "x_lo", "x_hi", "n_points"], fits, header)
    )
    return files


def run_cmi(spec, out: Path, header, threads, seed) -> list[Path]:
    lat, times, dists = _evolved(spec)
    if lat.dim != 1:
        raise ValueError("CMI scans need a chain")
    rows = []
    for t, d in zip(times, dists):
        vals = diagnostics.cmi_series(d, spec["R_B"], spec["geometry"])
        rows += [[t, r, float(v), r / t if t > 0 else math.nan] for r, v in zip(spec["R_B"], vals)]
    return [write_csv(out / "cmi.csv", ["t", "R_B", "I", "R_B_over_t"], rows, header)]


def run_decode(spec, out: Path, header, threads, seed) -> list[Path]:
    decs = spec.get("decoders", ["com", "mwpm", "height"])
    times = spec["times"]
    seeds = spawn_seeds(seed, len(times))
    jobs = [(spec["L"], spec["gamma"], [t], spec["R_B"], spec["trials"], s, decs) for t, s in zip(times, seeds)]
    rows = [r for chunk in pmap(_decode_job, jobs, threads) for r in chunk]
    files = [
        write_csv(
            out / "decode.csv",
            decoders.DECODE_COLUMNS + ["R_B_over_t"],
            [r.as_list() + [r.R_B / r.t] for r in rows],
            header,
        )
    ]
    if len(times) >= 2:
        scores = {}
        for name in decs:
            ser = []
            for t in times:
                sel = [r for r in rows if r.decoder == name and r.t == t]
                ser.append(collapse.Series(t, [r.R_B for r in sel], [r.p for r in sel]))
            raw = collapse.collapse_score(ser, 0.0, 0.0, seed=seed)
            res = collapse.collapse_score(ser, spec.get("collapse_exponent", 1.0), 0.0, seed=seed)
            scores[name] = {"unrescaled": asdict(raw), "rescaled": asdict(res)}
        files.append(write_json(out / "collapse.json", {"collapse": scores}, header))
    return files


def _decode_job(args):
    return decoders.benchmark(*args)


def _winding_job(args):
    lat_dict, init, gamma, t, ensemble, n, s, floor = args
    lat = config_space.Lattice.from_dict(lat_dict)
    if ensemble == "renyi2":
        return ssep_sampler.renyi2_winding(lat, init, gamma, t, n, s, acceptance_floor=floor)
    return ssep_sampler.disorder_averaged_winding(lat, init, gamma, t, n, s, acceptance_floor=floor)


def run_winding(spec, out: Path, header, threads, seed) -> list[Path]:
    lat = _lattice(spec)
    init = _initial(lat, spec["initial"])
    floor = spec.get("acceptance_floor", ssep_sampler.DEFAULT_ACCEPTANCE_FLOOR)
    times = [float(t) for t in spec["times"]]
    seeds = spawn_seeds(seed, len(times))
    jobs = [
        (lat.to_dict(), init, spec["gamma"], t, spec["ensemble"], spec["samples"], s, floor)
        for t, s in zip(times, seeds)
    ]
    res = pmap(_winding_job, jobs, threads)
    rows = [
        [t, r.ensemble, r.stiffness, r.stderr, r.n_accepted, r.n_trials, r.acceptance]
        for t, r in zip(times, res)
    ]
    cols = ["t", "ensemble", "w2", "stderr", "n_accepted", "n_trials", "acceptance"]
    return [write_csv(out / "winding.csv", cols, rows, header)]


def run_hydro(spec, out: Path, header, threads, seed) -> list[Path]:
    L, D, gn = spec["L"], spec["D"], spec["gamma_n"]
    q = spec.get("q", 1.0)
    files = []
    cmi_rows, bh_rows = [], []
    for t in spec["times"]:
        row = hydro_gaussian.covariance_row(L, t, D, gn)
        if "R_B" in spec:
            vals = hydro_gaussian.cmi_vs_RB(row, spec["R_B"])
            cmi_rows += [[t, r, float(v), r / math.sqrt(t), t * float(v)] for r, v in zip(spec["R_B"], vals)]
        if "r" in spec:
            vals = hydro_gaussian.bhattacharyya_scan(row, spec["r"], q)
            c = q * q / gn
            bh_rows += [[t, r, float(v), r / L, t * float(v) / (c * L)] for r, v in zip(spec["r"], vals)]
    if cmi_rows:
        files.append(write_csv(out / "cmi.csv", ["t", "R_B", "I", "R_B_over_sqrt_t", "t_I"], cmi_rows, header))
    if bh_rows:
        files.append(write_csv(out / "bhattacharyya.csv", ["t", "r", "B", "r_over_L", "tB_over_cL"], bh_rows, header))
    if not files:
        raise ValueError("hydro spec needs R_B and/or r")
    return files


def run_rotor(spec, out: Path, header, threads, seed) -> list[Path]:
    rows = []
    for tt in spec["t_tilde"]:
        lg = rotor_analytic.rotor1d_lengths(tt)
        rho2, rho_bar = rotor_analytic.stiffness_constants(tt)
        ex = [rotor_analytic.rotor2d_exponents(tt, Q) for Q in spec.get("Q", [1, 2])]
        rows.append([tt, lg.xi2, lg.xi1_spinwave, lg.xi1_exact, rho2, rho_bar, *ex])
    cols = ["t_tilde", "xi2", "xi1_spinwave", "xi1_exact", "rho_s2", "rho_s_bar"]
    cols += [f"exponent_Q{Q:g}" for Q in spec.get("Q", [1, 2])]
    files = [write_csv(out / "rotor.csv", cols, rows, header)]
    if "R_B" in spec and "t" in spec:
        geo = spec.get("geometry", "edge")
        crow = []
        for t in spec["t"]:
            for r in spec["R_B"]:
                ex = rotor_analytic.renyi2_cmi_rotor(r, t, geo, "exact")
                it = rotor_analytic.renyi2_cmi_rotor(r, t, geo, "integral")
                asy = rotor_analytic.renyi2_cmi_rotor(r, t, "edge", "asymptote") if geo == "edge" else math.nan
                crow.append([t, r, ex, it, asy, (r + 1) / t])
        files.append(write_csv(out / "rotor_cmi.csv", ["t", "R_B", "I_exact", "I_integral", "I_asymptote", "RB1_over_t"], crow, header))
    return files


def _rg_job(args):
    A, deltas, y0, th = args
    return rotor_analytic.correlation_exponent(A, deltas, y0, th)


def run_rg(spec, out: Path, header, threads, seed) -> list[Path]:
    th = spec.get("threshold", 1.0)
    jobs = [(a, spec["deltas"], spec["y0"], th) for a in spec["A"]]
    fits = pmap(_rg_job, jobs, threads)
    rows = [[f.A, f.p, f.stderr, rotor_analytic.separatrix_slope(f.A), f.threshold] for f in fits]
    files = [write_csv(out / "rg_exponent.csv", ["A", "p", "stderr", "separatrix_slope", "threshold"], rows, header)]
    if "flow_grid" in spec:
        g = spec["flow_grid"]
        s = np.linspace(*g["s"], g["n"])
        y = np.linspace(*g["y"], g["n"])
        frows = []
        for A in spec["A"]:
            ds, dy = rotor_analytic.flow_field(s, y, A)
            for a in range(len(s)):
                for b in range(len(y)):
                    frows.append([A, s[a], y[b], ds[a, b], dy[a, b]])
        files.append(write_csv(out / "rg_flow.csv", ["A", "s", "y", "ds", "dy"], frows, header))
    return files


def run_modelf(spec, out: Path, header, threads, seed) -> list[Path]:
    lat = _lattice(spec)
    params = modelf_langevin.ModelFParams(
        spec["J"], spec["K"], spec["beta"], spec["gamma_phi"], spec["gamma_n"], spec["dt"]
    )
    st = modelf_langevin.initial_state(lat, params, spec["copies"], seed, wrapped=spec.get("wrapped", False))
    obs = {
        "n2": modelf_langevin.density_second_moment,
        "cos": modelf_langevin.bond_cosine,
        "charge": lambda s: s.total_charge(),
        "energy": lambda s: s.free_energy(),
    }
    st, rec = modelf_langevin.run(st, spec["t_total"], spec["record_every"], obs)
    rows = []
    for k, t in enumerate(rec["times"]):
        rows.append([t] + [float(rec[name][k].mean()) for name in obs])
    files = [write_csv(out / "modelf.csv", ["t", "n2", "cos", "charge", "energy"], rows, header)]
    snap = {"time": st.time, "phi": st.phi, "n": st.n, "lattice": lat.to_dict()}
    files.append(write_json(out / "modelf_snapshot.json", snap, header))
    return files


RUNNERS: dict[str, Callable] = {
    "evolve": run_evolve,
    "correlators": run_correlators,
    "cmi": run_cmi,
    "decode": run_decode,
    "winding": run_winding,
    "hydro": run_hydro,
    "rotor": run_rotor,
    "rg": run_rg,
    "modelf": run_modelf,
}

STOCHASTIC = {"decode", "winding", "modelf"}


def run(spec: dict, out: str | Path, threads: int = 1, seed: int | None = None) -> list[Path]:
    """Execute a validated spec and write its artifacts into ``out``.

    The seed comes from ``seed`` if given, else the spec, else 0 for the
    stochastic kinds. It is recorded in every header.
    """
    validate_spec(spec)
    kind = spec["kind"]
    if seed is None:
        seed = spec.get("seed", 0 if kind in STOCHASTIC else None)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    header = header_lines(spec, seed)
    files = RUNNERS[kind](spec, out, header, threads, seed)
    logger.info("%s: wrote %s", kind, ", ".join(str(f) for f in files))
    return files
