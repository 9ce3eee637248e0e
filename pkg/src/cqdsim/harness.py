"""Current sweeps, ensemble orchestration, reference data and result files.

A sweep runs ``atoms_per_current`` independent atoms at each wire current.
Each atom draws its initial state from its own keyed random stream, so the
aggregated counts do not depend on how atoms are split across processes.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analytic import coefficients, w_analytic
from .collapse import FLIP, branch
from .core import FRISCH_SEGRE, K39, ChamberGeometry, MomentState, PhysicalConstants
from .dynamics import AVERAGING_WINDOW, IntegrationError, OdeSettings, integrate_atom
from .field import adiabaticity, null_point
from .sampling import RandomStream, sample_chamber_entry, substream_key

log = logging.getLogger(__name__)

FAILURE_THRESHOLD = 1e-3  # a row fails when more than this fraction of atoms fail
CHUNK_SIZE = 50
HEADER = ("current_A", "W_num", "W_num_stderr", "W_ana", "N")


def default_currents(n: int = 25, low: float = 0.01, high: float = 0.5) -> tuple[float, ...]:
    """Log-spaced wire currents in ``[low, high]`` amperes."""
    return tuple(float(c) for c in np.geomspace(low, high, n))


def fmt(x: float) -> str:
    """Fixed 12-significant-digit text form used in every output file."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


@dataclass(frozen=True)
class SweepConfig:
    currents: tuple[float, ...] = field(default_factory=default_currents)
    atoms_per_current: int = 15000
    seed: int = 0
    geometry: ChamberGeometry = FRISCH_SEGRE
    ode: OdeSettings = OdeSettings()
    averaging_window: float = AVERAGING_WINDOW
    output_path: str | None = None
    constants: PhysicalConstants = K39

    def __post_init__(self):
        currents = tuple(float(c) for c in self.currents)
        object.__setattr__(self, "currents", currents)
        if not currents:
            raise ValueError("at least one current is required")
        if any(not (c > 0 and math.isfinite(c)) for c in currents):
            raise ValueError("currents must be positive and finite")
        if any(b <= a for a, b in zip(currents, currents[1:])):
            raise ValueError("currents must be strictly ascending")
        if int(self.atoms_per_current) != self.atoms_per_current or self.atoms_per_current < 1:
            raise ValueError("atoms_per_current must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.averaging_window > 0:
            raise ValueError("averaging_window must be positive")


@dataclass(frozen=True)
class CurrentRow:
    current: float
    W_num: float
    stderr: float
    W_ana: float
    n_atoms: int  # atoms that contributed
    n_failed: int = 0
    failed: bool = False
    diagnostic: str = ""


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list[CurrentRow]
    r_squared_num: float | None = None
    r_squared_ana: float | None = None
    wall_time: float = 0.0

    @property
    def failed(self) -> bool:
        return any(r.failed for r in self.rows)


@dataclass(frozen=True)
class ReferenceDataset:
    currents: tuple[float, ...]
    fractions: tuple[float, ...]

    def __post_init__(self):
        if len(self.currents) != len(self.fractions):
            raise ValueError("currents and fractions differ in length")
        if len(set(self.currents)) != len(self.currents):
            raise ValueError("reference currents must be unique")
        if any(not c > 0 for c in self.currents):
            raise ValueError("reference currents must be positive")
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ValueError("reference fractions must lie in [0, 1]")

    def __len__(self):
        return len(self.currents)


class ReferenceParseError(ValueError):
    """Malformed reference or results file; ``line`` is 1-based or None."""

    def __init__(self, message: str, path, line: int | None = None):
        where = f"{path}" if line is None else f"{path}, line {line}"
        super().__init__(f"{where}: {message}")
        self.line = line


# ---------------------------------------------------------------- simulation


def simulate_atom(
    seed: int,
    index: int,
    current: float,
    geom: ChamberGeometry = FRISCH_SEGRE,
    constants: PhysicalConstants = K39,
    settings: OdeSettings = OdeSettings(),
    window: float = AVERAGING_WINDOW,
    backend: str | None = None,
) -> int:
    """Branch outcome (0 or 1) of atom ``index`` at ``current``."""
    stream = RandomStream(seed, index, substream_key(current))
    theta_e, phi_e, theta_n, phi_n = sample_chamber_entry(stream)
    init = MomentState.from_angles(theta_e, phi_e, theta_n, phi_n)
    traj = integrate_atom(init, current, geom, constants, settings, window, backend)
    return branch(traj.theta_e_final, theta_n)


def _run_chunk(args):
    seed, current, start, stop, geom, constants, settings, window = args
    flips = done = 0
    errors = []
    for i in range(start, stop):
        try:
            b = simulate_atom(seed, i, current, geom, constants, settings, window)
        except (IntegrationError, ValueError) as exc:
            errors.append(f"atom {i}: {exc}")
            continue
        done += 1
        flips += b == FLIP
    return current, flips, done, errors


def _aggregate(config: SweepConfig, tallies, coeffs) -> list[CurrentRow]:
    rows = []
    n = config.atoms_per_current
    for current in config.currents:
        flips, done, errors = tallies[current]
        n_failed = n - done
        W_ana = float(w_analytic(current, coeffs))
        if n_failed > FAILURE_THRESHOLD * n or done == 0:
            diag = f"{n_failed} of {n} atoms failed; first: {sorted(errors)[0] if errors else 'n/a'}"
            log.warning("current %s: %s", fmt(current), diag)
            rows.append(CurrentRow(current, math.nan, math.nan, W_ana, done, n_failed, True, diag))
            continue
        W = flips / done
        rows.append(CurrentRow(current, W, math.sqrt(W * (1.0 - W) / done), W_ana, done, n_failed))
    return rows


def run_sweep(
    config: SweepConfig,
    workers: int = 1,
    reference: ReferenceDataset | None = None,
) -> SweepResult:
    """Simulate every current of ``config`` and aggregate flip fractions.

    Parameters
    ----------
    config : SweepConfig
    workers : int
        Number of processes.  Results are identical for any value.
    reference : ReferenceDataset, optional
        When given, every reference current must be in ``config.currents``;
        R^2 of the simulated and closed-form curves is attached.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    if reference is not None:
        missing = set(reference.currents) - set(config.currents)
        if missing:
            raise ValueError(f"reference currents not simulated: {sorted(missing)}")
    coeffs = coefficients(config.geometry, config.constants)
    tasks = [
        (config.seed, c, s, min(s + CHUNK_SIZE, config.atoms_per_current),
         config.geometry, config.constants, config.ode, config.averaging_window)
        for c in config.currents
        for s in range(0, config.atoms_per_current, CHUNK_SIZE)
    ]
    tallies = {c: [0, 0, []] for c in config.currents}
    start = time.perf_counter()
    if workers == 1:
        results = map(_run_chunk, tasks)
        _collect(results, tallies)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            _collect(pool.map(_run_chunk, tasks), tallies)
    rows = _aggregate(config, tallies, coeffs)
    result = SweepResult(config, rows, wall_time=time.perf_counter() - start)
    if reference is not None:
        ok = [r for r in rows if not r.failed]
        result.r_squared_num = _maybe_r2([(r.current, r.W_num) for r in ok], reference)
        result.r_squared_ana = _maybe_r2([(r.current, r.W_ana) for r in rows], reference)
    return result


def _collect(results, tallies):
    for current, flips, done, errors in results:
        t = tallies[current]
        t[0] += flips
        t[1] += done
        t[2].extend(errors)


def _maybe_r2(model, reference):
    try:
        return r_squared(model, reference)
    except ValueError as exc:
        log.warning("R^2 not computed: %s", exc)
        return None


# ------------------------------------------------------------------- metrics


def r_squared(model: Sequence[tuple[float, float]], data: ReferenceDataset) -> float:
    """Coefficient of determination of ``model`` against ``data``.

    The model must contain every data current exactly; no interpolation.
    """
    if len(data) < 2:
        raise ValueError("R^2 needs at least two data points")
    lookup = {float(c): float(w) for c, w in model}
    missing = [c for c in data.currents if c not in lookup]
    if missing:
        raise ValueError(f"model is not defined at data currents {missing}")
    y = np.asarray(data.fractions)
    f = np.array([lookup[c] for c in data.currents])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for constant data")
    return 1.0 - float(np.sum((y - f) ** 2)) / ss_tot


# --------------------------------------------------------------------- files


def _data_lines(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line


def _split(line):
    return [p.strip() for p in (line.split(",") if "," in line else line.split())]


def load_reference(path) -> ReferenceDataset:
    """Read a two-column (current in A, flip fraction) file.

    Columns are separated by commas or whitespace.  Blank lines and lines
    starting with ``#`` are ignored; a non-numeric first row is taken as a
    header.
    """
    currents, fractions, seen = [], [], {}
    first = True
    for lineno, line in _data_lines(path):
        parts = _split(line)
        if len(parts) != 2:
            raise ReferenceParseError(f"expected 2 columns, found {len(parts)}", path, lineno)
        try:
            c, w = float(parts[0]), float(parts[1])
        except ValueError:
            if first and not any(_is_number(p) for p in parts):
                first = False
                continue
            raise ReferenceParseError(f"non-numeric value in {line!r}", path, lineno) from None
        first = False
        if not (c > 0 and math.isfinite(c)):
            raise ReferenceParseError(f"current must be positive, got {parts[0]}", path, lineno)
        if not 0.0 <= w <= 1.0:
            raise ReferenceParseError(f"fraction must lie in [0, 1], got {parts[1]}", path, lineno)
        if c in seen:
            raise ReferenceParseError(f"duplicate current {parts[0]} (first on line {seen[c]})", path, lineno)
        seen[c] = lineno
        currents.append(c)
        fractions.append(w)
    if not currents:
        raise ReferenceParseError("no data rows", path)
    return ReferenceDataset(tuple(currents), tuple(fractions))


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def _metadata(config: SweepConfig) -> list[tuple[str, str]]:
    g, o = config.geometry, config.ode
    return [
        ("version", __version__),
        ("seed", str(int(config.seed))),
        ("atoms_per_current", str(int(config.atoms_per_current))),
        ("rel_tol", fmt(o.rel_tol)),
        ("abs_tol", fmt(o.abs_tol)),
        ("max_step", fmt(o.max_step)),
        ("dense_output_step", fmt(o.dense_output_step)),
        ("averaging_window", fmt(config.averaging_window)),
        ("z_a", fmt(g.z_a)),
        ("d", fmt(g.d)),
        ("v", fmt(g.v)),
        ("B_r", fmt(g.B_r)),
        ("currents", " ".join(fmt(c) for c in config.currents)),
    ]


def format_results(result: SweepResult) -> str:
    """Text of a results file; every byte is fixed by the config and seed."""
    lines = ["# cqdsim flip-fraction sweep"]
    lines += [f"# {k}: {v}" for k, v in _metadata(result.config)]
    if result.r_squared_num is not None:
        lines.append(f"# r_squared_num: {fmt(result.r_squared_num)}")
    if result.r_squared_ana is not None:
        lines.append(f"# r_squared_ana: {fmt(result.r_squared_ana)}")
    for r in result.rows:
        if r.failed:
            lines.append(f"# failed: current={fmt(r.current)} {r.diagnostic}")
    lines.append(",".join(HEADER))
    for r in result.rows:
        lines.append(",".join([fmt(r.current), fmt(r.W_num), fmt(r.stderr), fmt(r.W_ana), str(r.n_atoms)]))
    return "\n".join(lines) + "\n"


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_results(result: SweepResult, path) -> Path:
    """Write ``result`` as comma-delimited text with a ``#`` metadata block."""
    _write(path, format_results(result))
    return Path(path)


def parse_results(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Read a results file back into ``(metadata, columns)``."""
    meta: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    rows = []
    header_line = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, val = line[1:].partition(":")
            if sep:
                meta.setdefault(key.strip(), val.strip())
            continue
        parts = line.split(",")
        if header_line is None:
            if tuple(parts) != HEADER:
                raise ReferenceParseError(f"expected header {','.join(HEADER)}", path, lineno)
            header_line = lineno
            continue
        if len(parts) != len(HEADER):
            raise ReferenceParseError(f"expected {len(HEADER)} columns, found {len(parts)}", path, lineno)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ReferenceParseError(f"non-numeric value in {line!r}", path, lineno) from None
    if header_line is None:
        raise ReferenceParseError("missing header", path)
    arr = np.array(rows, dtype=float).reshape(-1, len(HEADER))
    cols = {name: arr[:, i] for i, name in enumerate(HEADER)}
    cols["N"] = cols["N"].astype(int)
    return meta, cols


def analytic_curve(currents, geom: ChamberGeometry = FRISCH_SEGRE, constants: PhysicalConstants = K39) -> str:
    """Closed-form flip probability at ``currents`` as results-style text."""
    co = coefficients(geom, constants)
    lines = [
        "# cqdsim closed-form flip probability",
        f"# version: {__version__}",
        f"# c_r0_A: {fmt(co.c_r0)}",
        f"# c_rs: {fmt(co.c_rs)}",
        f"# c_rr_per_A3: {fmt(co.c_rr)}",
        "current_A,W_ana",
    ]
    lines += [f"{fmt(c)},{fmt(w_analytic(c, co))}" for c in currents]
    return "\n".join(lines) + "\n"


def adiabaticity_profile(
    currents,
    geom: ChamberGeometry = FRISCH_SEGRE,
    constants: PhysicalConstants = K39,
    path=None,
    n_points: int = 2001,
):
    """Adiabaticity ``k(t)`` along the path for each current.

    Returns ``{current: (t, k)}``; when ``path`` is given the series are also
    written as ``current_A,t_s,k`` rows with ``inf`` where ``k`` diverges.
    """
    currents = [float(c) for c in currents]
    if not currents or any(not c > 0 for c in currents):
        raise ValueError("currents must be positive")
    half = geom.half_transit
    t = np.linspace(-half, half, n_points)
    series = {c: (t, adiabaticity(t, c, geom, constants)) for c in currents}
    if path is not None:
        _write(path, format_adiabaticity(series, geom))
    return series


def format_adiabaticity(series, geom: ChamberGeometry = FRISCH_SEGRE) -> str:
    """``current_A,t_s,k`` text of profiles from :func:`adiabaticity_profile`."""
    lines = ["# cqdsim adiabaticity along the beam path", f"# version: {__version__}"]
    lines += [f"# t_NP[{fmt(c)}]: {fmt(null_point(c, geom).t_NP)}" for c in series]
    lines.append("current_A,t_s,k")
    for c, (tt, k) in series.items():
        lines += [f"{fmt(c)},{fmt(a)},{fmt(b)}" for a, b in zip(tt, k)]
    return "\n".join(lines) + "\n"


def config_from_mapping(data: dict, base: SweepConfig | None = None) -> SweepConfig:
    """Build a config from a JSON-style mapping mirroring ``SweepConfig``.

    Unknown keys raise ``ValueError``; nested ``geometry`` and ``ode``
    mappings override fields of the base values.
    """
    base = base or SweepConfig()
    known = {f.name for f in dataclasses.fields(SweepConfig)} - {"constants"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kw = dict(data)
    for key, cls in (("geometry", ChamberGeometry), ("ode", OdeSettings)):
        if key in kw:
            sub = kw[key]
            if not isinstance(sub, dict):
                raise ValueError(f"{key} must be a mapping")
            names = {f.name for f in dataclasses.fields(cls)}
            if set(sub) - names:
                raise ValueError(f"unknown {key} keys: {sorted(set(sub) - names)}")
            kw[key] = dataclasses.replace(getattr(base, key), **{k: float(v) for k, v in sub.items()})
    if "currents" in kw:
        kw["currents"] = tuple(kw["currents"])
    return dataclasses.replace(base, **kw)


def default_workers() -> int:
    return os.cpu_count() or 1
