"""Event weighting, top-K start selection, sequence building, fold assignment."""

import calendar
import datetime as dt
import heapq
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError
from .gridio import (
    CADENCE_S,
    SEQUENCE_LEN,
    TEST,
    SequenceManifest,
    SequenceRecord,
    Variable,
)

DEFAULT_CUTOFF = calendar.timegm((2016, 10, 1, 0, 0, 0))


@dataclass(frozen=True)
class SamplerConfig:
    top_k_per_year: int = 1000
    sequence_len: int = SEQUENCE_LEN
    cadence_s: int = CADENCE_S
    input_frames: int = 4
    output_frames: int = 18
    n_folds: int = 8
    test_year: int = None  # None: last year present, if more than one year
    cutoff_start: int = DEFAULT_CUTOFF  # None disables the cutoff

    def __post_init__(self):
        if self.input_frames + self.output_frames != self.sequence_len:
            raise ConfigError(
                f"input_frames + output_frames = {self.input_frames + self.output_frames}, "
                f"must equal sequence_len {self.sequence_len}"
            )
        if self.sequence_len != SEQUENCE_LEN or self.cadence_s != CADENCE_S:
            raise ConfigError(f"sequences are fixed at {SEQUENCE_LEN} frames, {CADENCE_S} s apart")
        if self.n_folds < 2:
            raise ConfigError("n_folds must be >= 2")
        if self.top_k_per_year < 1:
            raise ConfigError("top_k_per_year must be >= 1")


def utc_year(ts):
    return dt.datetime.fromtimestamp(ts, dt.timezone.utc).year


def utc_day(ts):
    return int(ts) // 86400


def event_weight(frame):
    """Sum over pixels of max(dBZ, 0)**2; nodata pixels contribute nothing."""
    if frame.variable != Variable.REFLECTIVITY_DBZ:
        raise ArgumentError(f"event_weight needs a reflectivity frame, got {frame.variable.name}")
    v = frame.values[frame.valid].astype(np.float64)
    v = np.maximum(v, 0.0)
    return float(np.sum(v * v))


def rank_candidates(weights, config=SamplerConfig()):
    """Per calendar year, the K highest-weight timestamps.

    ``weights`` maps timestamp -> weight. Within a year the order is
    descending weight, ties broken by earlier timestamp; years are emitted in
    ascending order. Timestamps before ``config.cutoff_start`` are ignored.
    """
    by_year = defaultdict(list)
    for ts, w in weights.items():
        if config.cutoff_start is not None and ts < config.cutoff_start:
            continue
        by_year[utc_year(ts)].append((-float(w), int(ts)))
    starts = []
    for year in sorted(by_year):
        best = heapq.nsmallest(config.top_k_per_year, by_year[year])
        starts.extend(ts for _, ts in best)
    return starts


@dataclass
class BuildReport:
    manifest: SequenceManifest
    dropped: int = 0
    dropped_starts: list = field(default_factory=list)
    overlapping: int = 0  # sequences sharing at least one frame with another

    def summary(self):
        return (
            f"{len(self.manifest)} sequences, {self.dropped} dropped for missing frames, "
            f"{self.overlapping} overlap another sequence"
        )


def build_sequences(starts, frame_index, config=SamplerConfig(), weights=None):
    """Emit a 22-frame sequence for every start whose frames are all indexed.

    ``frame_index`` maps timestamp -> (rain_path, eth_path). Starts missing
    any frame are dropped and counted.
    """
    weights = weights or {}
    records, dropped = [], []
    for t0 in starts:
        times = [t0 + config.cadence_s * k for k in range(config.sequence_len)]
        if not all(t in frame_index for t in times):
            dropped.append(t0)
            continue
        rain = [frame_index[t][0] for t in times]
        eth = [frame_index[t][1] for t in times]
        records.append(SequenceRecord(t0, float(weights.get(t0, 0.0)), rain, eth))
    return BuildReport(SequenceManifest(records), len(dropped), dropped, _count_overlaps(records, config))


def _count_overlaps(records, config):
    span = config.cadence_s * (config.sequence_len - 1)
    starts = sorted(r.start_timestamp for r in records)
    n = 0
    for i, s in enumerate(starts):
        prev_close = i > 0 and s - starts[i - 1] <= span
        next_close = i + 1 < len(starts) and starts[i + 1] - s <= span
        n += prev_close or next_close
    return n


def resolve_test_year(manifest, config=SamplerConfig()):
    if config.test_year is not None:
        return config.test_year
    years = {utc_year(r.start_timestamp) for r in manifest.records}
    return max(years) if len(years) > 1 else None


def assign_folds(manifest, seed, config=SamplerConfig()):
    """Label test-year sequences TEST and deal the other days into folds.

    Days (UTC) of non-test sequence starts are shuffled with ``seed`` and dealt
    round-robin, so every sequence of a day lands in the same fold.
    """
    test_year = resolve_test_year(manifest, config)
    is_test = [test_year is not None and utc_year(r.start_timestamp) == test_year
               for r in manifest.records]
    days = sorted({utc_day(r.start_timestamp) for r, t in zip(manifest.records, is_test) if not t})
    if len(days) < config.n_folds:
        raise ConfigError(
            f"{len(days)} distinct training days cannot fill {config.n_folds} folds"
        )
    order = np.random.default_rng(seed).permutation(len(days))
    fold_of_day = {days[j]: pos % config.n_folds for pos, j in enumerate(order)}
    records = [
        r.with_fold(TEST if t else fold_of_day[utc_day(r.start_timestamp)])
        for r, t in zip(manifest.records, is_test)
    ]
    return SequenceManifest(records)


def fold_sizes(manifest, n_folds=8):
    sizes = [0] * n_folds
    for r in manifest.training():
        sizes[r.fold] += 1
    return sizes
