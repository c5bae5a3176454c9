"""Road elevation profiles: synthetic hill generation, CSV ingestion, previews.

A profile is a uniformly spaced (default 30 m) elevation sequence with the
segment grades derived from it.  Synthetic roads are sums of seeded sinusoids
rescaled so the steepest slope stays within +/-5%; real elevation data comes
in through a two-column CSV and is resampled onto the uniform grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

DEFAULT_DS = 30.0
MAX_ABS_GRADE = 0.05
# Synthetic generator envelope: component count and wavelength span (m).
MIN_COMPONENTS = 3
MAX_COMPONENTS = 8
MIN_WAVELENGTH = 500.0
MAX_WAVELENGTH = 8000.0
FLAT_LEAD_IN = 500.0


class IngestError(ValueError):
    """Elevation CSV could not be turned into a profile."""


@dataclass(frozen=True)
class RoadProfile:
    """Uniform elevation samples plus per-segment grades.

    ``grade[i]`` is the slope of the segment from sample i to i+1, so there is
    always one fewer grade than elevation samples.
    """

    ds: float
    elevation: np.ndarray
    grade: np.ndarray

    @property
    def n_steps(self) -> int:
        """Number of 30 m segments (P)."""
        return len(self.grade)

    @property
    def length_m(self) -> float:
        return self.n_steps * self.ds

    @staticmethod
    def from_elevation(elevation, ds: float = DEFAULT_DS) -> "RoadProfile":
        elev = np.asarray(elevation, dtype=float)
        if elev.ndim != 1 or len(elev) < 1:
            raise ValueError("elevation must be a 1-D sequence with at least one sample")
        if ds <= 0:
            raise ValueError("sample spacing must be positive")
        grade = np.diff(elev) / ds
        elev.setflags(write=False)
        grade.setflags(write=False)
        return RoadProfile(ds=float(ds), elevation=elev, grade=grade)


@dataclass(frozen=True)
class GradePreview:
    """Fixed-length look-ahead window of grades starting at ``origin``."""

    samples: np.ndarray
    origin: int


def gen_sinusoidal(
    seed: int,
    length_m: float,
    components: list[tuple[float, float, float]] | None = None,
    n_components: int | None = None,
    max_grade: float = MAX_ABS_GRADE,
    ds: float = DEFAULT_DS,
) -> RoadProfile:
    """Generate a hilly road as a sum of sinusoids, capped at ``max_grade``.

    ``components`` may pin explicit (amplitude_m, wavelength_m, phase_rad)
    triples; otherwise 3-8 are drawn from the seed.  An empty component list
    yields a flat road.  The first ~500 m are blended flat so a simulation can
    start from a steady cruise.  Amplitudes are rescaled after synthesis, so
    no component choice can exceed the grade cap.
    """
    if length_m < 3000.0:
        raise ValueError("road must be at least 3 km to support grade previews")
    rng = np.random.default_rng(seed)
    n_samples = int(round(length_m / ds)) + 1
    s = np.arange(n_samples) * ds

    if components is None:
        k = n_components if n_components is not None else int(rng.integers(MIN_COMPONENTS, MAX_COMPONENTS + 1))
        components = []
        for _ in range(k):
            wavelength = float(rng.uniform(MIN_WAVELENGTH, min(MAX_WAVELENGTH, length_m)))
            # amplitude drawn relative to wavelength keeps single-component
            # grades near the cap before the global rescale
            amplitude = float(rng.uniform(0.2, 1.0) * max_grade * wavelength / (2.0 * np.pi))
            phase = float(rng.uniform(0.0, 2.0 * np.pi))
            components.append((amplitude, wavelength, phase))

    elev = np.zeros(n_samples)
    for amplitude, wavelength, phase in components:
        elev += amplitude * np.sin(2.0 * np.pi * s / wavelength + phase)

    # cosine blend from flat over [lead, 3*lead] so the start is level
    if len(components) > 0:
        w = np.ones(n_samples)
        w[s <= FLAT_LEAD_IN] = 0.0
        ramp = (s > FLAT_LEAD_IN) & (s < 3.0 * FLAT_LEAD_IN)
        w[ramp] = 0.5 - 0.5 * np.cos(np.pi * (s[ramp] - FLAT_LEAD_IN) / (2.0 * FLAT_LEAD_IN))
        elev = elev * w
        elev -= elev[0]

    grade = np.diff(elev) / ds
    peak = float(np.max(np.abs(grade))) if len(grade) else 0.0
    if peak > 0.0:
        target = float(rng.uniform(0.6, 1.0)) * max_grade if components else max_grade
        elev *= min(target, max_grade) / peak
    return RoadProfile.from_elevation(elev, ds)


def ingest_elevation_csv(path, ds: float = DEFAULT_DS) -> RoadProfile:
    """Load a ``distance_m,elevation_m`` CSV and resample it to the 30 m grid.

    Distances must be strictly increasing; resampling is linear so no
    curvature is fabricated between survey points.
    """
    distances: list[float] = []
    elevations: list[float] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{path}: empty file")
        cols = [c.strip().lower() for c in header]
        if "distance_m" not in cols or "elevation_m" not in cols:
            raise IngestError(f"{path}: header must contain distance_m and elevation_m")
        d_idx, e_idx = cols.index("distance_m"), cols.index("elevation_m")
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                d = float(row[d_idx])
                e = float(row[e_idx])
            except (ValueError, IndexError) as exc:
                raise IngestError(f"{path}: row {rowno}: unparsable row {row!r}") from exc
            if distances and d <= distances[-1]:
                raise IngestError(
                    f"{path}: row {rowno}: distance {d} not increasing (previous {distances[-1]})"
                )
            distances.append(d)
            elevations.append(e)
    if len(distances) < 2:
        raise IngestError(f"{path}: need at least 2 data rows, got {len(distances)}")

    d_arr = np.asarray(distances)
    e_arr = np.asarray(elevations)
    n_segments = int(np.floor((d_arr[-1] - d_arr[0]) / ds + 1e-9))
    if n_segments < 1:
        raise IngestError(f"{path}: span {d_arr[-1] - d_arr[0]:.1f} m shorter than one {ds} m step")
    grid = d_arr[0] + np.arange(n_segments + 1) * ds
    resampled = np.interp(grid, d_arr, e_arr)
    return RoadProfile.from_elevation(resampled, ds)


def preview(road: RoadProfile, position_index: int, window_len: int) -> GradePreview:
    """Grades over [position_index, position_index + window_len), zero-padded
    with flat road past the end."""
    p = road.n_steps
    if not 0 <= position_index < p:
        raise IndexError(f"position {position_index} outside road with {p} segments")
    window = np.zeros(window_len)
    avail = min(window_len, p - position_index)
    window[:avail] = road.grade[position_index : position_index + avail]
    window.setflags(write=False)
    return GradePreview(samples=window, origin=position_index)


def write_road_csv(road: RoadProfile, path, header_lines: list[str] | None = None) -> None:
    """Export ``index,position_m,elevation_m,grade``; the final node has no
    outgoing segment so its grade cell is left empty."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["index", "position_m", "elevation_m", "grade"])
        for i, elev in enumerate(road.elevation):
            g = f"{road.grade[i]:.9g}" if i < road.n_steps else ""
            writer.writerow([i, f"{i * road.ds:.9g}", f"{elev:.9g}", g])


def read_road_csv(path) -> RoadProfile:
    """Read back a profile written by :func:`write_road_csv` (or any CSV with
    position_m/elevation_m columns); grades are rederived from elevation."""
    positions: list[float] = []
    elevations: list[float] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows:
        raise IngestError(f"{path}: empty file")
    cols = [c.strip().lower() for c in rows[0]]
    if "position_m" in cols and "elevation_m" in cols:
        p_idx, e_idx = cols.index("position_m"), cols.index("elevation_m")
    elif "distance_m" in cols and "elevation_m" in cols:
        p_idx, e_idx = cols.index("distance_m"), cols.index("elevation_m")
    else:
        raise IngestError(f"{path}: no position/elevation columns in header {rows[0]!r}")
    for rowno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            positions.append(float(row[p_idx]))
            elevations.append(float(row[e_idx]))
        except (ValueError, IndexError) as exc:
            raise IngestError(f"{path}: row {rowno}: unparsable row {row!r}") from exc
    if len(positions) < 2:
        raise IngestError(f"{path}: need at least 2 data rows")
    ds = positions[1] - positions[0]
    diffs = np.diff(positions)
    if not np.allclose(diffs, ds, rtol=0, atol=1e-6):
        raise IngestError(f"{path}: positions are not uniformly spaced")
    return RoadProfile.from_elevation(np.asarray(elevations), float(ds))
