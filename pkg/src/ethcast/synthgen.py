"""Deterministic synthetic storms with growth visible only through echo tops.

Each event is a sum of drifting Gaussian rain cells. A cell's growth rate g
scales its intensity as exp(g * max(t - onset, 0)) and shifts its echo-top
height by eth_gain * g from the first frame on. With ``growth_onset`` at the
last input frame, the input rain frames carry no trace of g while the ETH
frames do.
"""

import calendar
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ArgumentError, StorageError
from .gridio import (
    CADENCE_S,
    ETH_MAX_KM,
    SEQUENCE_LEN,
    GridFrame,
    SequenceManifest,
    Variable,
    write_frame,
    write_frame_index,
    write_manifest,
)
from .preprocess import rain_to_dbz
from .sampler import SamplerConfig, build_sequences, event_weight

RAIN_FLOOR_MMH = 0.01
ETH_RAIN_MMH = 0.1
TRAIN_EPOCH = calendar.timegm((2020, 6, 1, 0, 0, 0))
TEST_EPOCH = calendar.timegm((2021, 6, 1, 0, 0, 0))
DAY_S = 86400

# (fraction of the half-width from the centre, ETH cap in km) for ring artifacts
RING_CAPS = ((0.55, 10.0), (0.8, 7.0), (1.05, 5.0))


@dataclass(frozen=True)
class Cell:
    center: tuple  # (row, col) at t = 0, pixels
    velocity: tuple  # (rows, cols) per step
    amplitude: float  # mm/h at t = 0
    sigma: float  # pixels
    growth: float  # 1/step

    def __post_init__(self):
        if not self.sigma > 0:
            raise ArgumentError(f"cell sigma must be > 0, got {self.sigma}")
        if not self.amplitude > 0:
            raise ArgumentError(f"cell amplitude must be > 0, got {self.amplitude}")


@dataclass(frozen=True)
class SynthEventParams:
    seed: int = 0
    rows: int = 64
    cols: int = 64
    n_cells: tuple = (1, 4)  # inclusive range drawn per event
    amplitude_range: tuple = (2.0, 15.0)
    sigma_range: tuple = (3.0, 7.0)
    speed_max: float = 0.75
    growth_max: float = 0.08
    eth_base: float = 3.0
    eth_gain: float = 60.0
    eth_noise_sd: float = 0.3
    frames: int = SEQUENCE_LEN
    growth_onset: int = 0
    artifact_rings: bool = False
    cells: tuple = None  # explicit cells override the random draw

    def __post_init__(self):
        lo, hi = self.n_cells
        if not 1 <= lo <= hi:
            raise ArgumentError(f"n_cells range must satisfy 1 <= lo <= hi, got {self.n_cells}")
        if self.rows < 1 or self.cols < 1 or self.frames < 1:
            raise ArgumentError("grid and frame counts must be positive")
        if self.amplitude_range[0] <= 0 or self.sigma_range[0] <= 0:
            raise ArgumentError("amplitude and sigma ranges must be positive")
        if self.growth_onset < 0:
            raise ArgumentError("growth_onset must be >= 0")


@dataclass
class SynthEvent:
    rain: list
    eth: list
    cells: tuple
    params: SynthEventParams = field(repr=False, default=None)


def draw_cells(params):
    """The event's cells; random draws come from ``default_rng(seed)``."""
    if params.cells is not None:
        return tuple(params.cells)
    rng = np.random.default_rng(params.seed)
    n = int(rng.integers(params.n_cells[0], params.n_cells[1] + 1))
    cells = []
    for _ in range(n):
        r = rng.uniform(0.25, 0.75) * params.rows
        c = rng.uniform(0.25, 0.75) * params.cols
        vr, vc = rng.uniform(-params.speed_max, params.speed_max, size=2)
        amp = rng.uniform(*params.amplitude_range)
        sig = rng.uniform(*params.sigma_range)
        g = rng.uniform(-params.growth_max, params.growth_max)
        cells.append(Cell((float(r), float(c)), (float(vr), float(vc)), float(amp), float(sig), float(g)))
    return tuple(cells)


def _ring_caps(params):
    rr, cc = np.indices((params.rows, params.cols), dtype=np.float64)
    half = min(params.rows, params.cols) / 2.0
    dist = np.hypot(rr - (params.rows - 1) / 2.0, cc - (params.cols - 1) / 2.0) / half
    cap = np.full((params.rows, params.cols), ETH_MAX_KM)
    for frac, km in RING_CAPS:
        cap[dist > frac] = km
    return cap


def cell_fields(cells, params, t):
    """Per-cell rain contributions at step ``t``, shape (n_cells, rows, cols)."""
    rr, cc = np.indices((params.rows, params.cols), dtype=np.float64)
    out = np.empty((len(cells), params.rows, params.cols))
    for i, cell in enumerate(cells):
        r0 = cell.center[0] + cell.velocity[0] * t
        c0 = cell.center[1] + cell.velocity[1] * t
        amp = cell.amplitude * np.exp(cell.growth * max(t - params.growth_onset, 0))
        out[i] = amp * np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2.0 * cell.sigma ** 2))
    return out


def gen_event(params, start_timestamp=0):
    """22 rain frames and 22 ETH frames, deterministic in ``params``."""
    cells = draw_cells(params)
    noise_rng = np.random.default_rng([params.seed, 1])
    caps = _ring_caps(params) if params.artifact_rings else None
    growth = np.array([c.growth for c in cells])
    rain_frames, eth_frames = [], []
    for t in range(params.frames):
        parts = cell_fields(cells, params, t)
        rain = parts.sum(axis=0)
        rain[rain < RAIN_FLOOR_MMH] = 0.0
        dominant = growth[np.argmax(parts, axis=0)]
        noise = noise_rng.normal(0.0, params.eth_noise_sd, size=rain.shape)
        eth = params.eth_base + params.eth_gain * dominant + noise
        eth = np.where(rain > ETH_RAIN_MMH, np.clip(eth, 0.0, ETH_MAX_KM), 0.0)
        if caps is not None:
            eth = np.minimum(eth, caps)
        ts = start_timestamp + CADENCE_S * t
        rain_frames.append(GridFrame(Variable.RAIN_MMH, ts, rain.astype(np.float32)))
        eth_frames.append(GridFrame(Variable.ETH_KM, ts, eth.astype(np.float32)))
    return SynthEvent(rain_frames, eth_frames, cells, params)


def event_start(i, n_events):
    """Start timestamp of event ``i``; indices >= n_events fall in the test year."""
    if i < n_events:
        return TRAIN_EPOCH + DAY_S * i
    return TEST_EPOCH + DAY_S * (i - n_events)


def _frame_name(ts, kind):
    return os.path.join("frames", f"{ts}_{kind}.rfgd")


def gen_dataset(n_events, seed, out_dir, params=SynthEventParams(), n_test_events=0, emit="rain"):
    """Write ``n_events`` training events plus ``n_test_events`` test-year events.

    Event ``i`` uses seed ``seed + i`` and starts ``i`` days after 2020-06-01
    UTC; test events start on consecutive days from 2021-06-01. ``emit``
    selects rain (mm/h) or reflectivity (dBZ) for the precipitation frames.
    Writes ``frames/``, ``index.tsv`` and ``manifest.tsv`` (folds unassigned)
    under ``out_dir`` and returns the manifest.
    """
    if n_events < 0 or n_test_events < 0 or n_events + n_test_events == 0:
        raise ArgumentError("need at least one event")
    if emit not in ("rain", "dbz"):
        raise ArgumentError(f"emit must be 'rain' or 'dbz', got {emit!r}")
    try:
        os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    except OSError as e:
        raise StorageError(out_dir, str(e)) from e

    index, weights, starts = {}, {}, []
    for i in range(n_events + n_test_events):
        t0 = event_start(i, n_events)
        ev = gen_event(replace(params, seed=seed + i), t0)
        starts.append(t0)
        for rain, eth in zip(ev.rain, ev.eth):
            dbz = rain_to_dbz(rain)
            main = dbz if emit == "dbz" else rain
            p_main = _frame_name(rain.timestamp, emit)
            p_eth = _frame_name(rain.timestamp, "eth")
            write_frame(main, os.path.join(out_dir, p_main))
            write_frame(eth, os.path.join(out_dir, p_eth))
            index[rain.timestamp] = (p_main, p_eth)
            weights[rain.timestamp] = event_weight(dbz)
    write_frame_index(index, os.path.join(out_dir, "index.tsv"))
    report = build_sequences(starts, index, SamplerConfig(cutoff_start=None), weights)
    manifest = SequenceManifest(report.manifest.records)
    write_manifest(manifest, os.path.join(out_dir, "manifest.tsv"))
    return manifest
