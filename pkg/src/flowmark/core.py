"""Domain types for flows, IPD windows, and fingerprints, plus trace I/O.

All times are milliseconds stored as float64. A flow is an ordered list of
packet timestamps; the universal carrier consumed by every model in this
package is a fixed-length window of inter-packet delays (IPDs).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class TraceError(ValueError):
    """Base class for malformed flow inputs."""


class DegenerateTraceError(TraceError):
    """Flow has too few packets to produce IPDs."""


class MalformedTraceError(TraceError):
    """Timestamps decrease or otherwise violate flow invariants."""


class TraceFormatError(TraceError):
    """Trace CSV could not be parsed."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


def _as_time_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise MalformedTraceError(f"expected 1-D timestamps, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class FlowTrace:
    """One unidirectional flow: an id plus non-decreasing packet timestamps in ms."""

    flow_id: str
    timestamps: np.ndarray

    def __post_init__(self):
        arr = _as_time_array(self.timestamps)
        if arr.size and np.any(np.diff(arr) < 0):
            raise MalformedTraceError(f"flow {self.flow_id!r}: timestamps decrease")
        if arr.size and arr[0] < 0:
            raise MalformedTraceError(f"flow {self.flow_id!r}: negative timestamp")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "timestamps", arr)

    def __len__(self) -> int:
        return int(self.timestamps.size)

    @property
    def duration_ms(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(self.timestamps[-1] - self.timestamps[0])


@dataclass(frozen=True)
class Fingerprint:
    """An integer identity in [0, m), m a power of two (default 1024 = 10 bits)."""

    id: int
    m: int = 1024

    def __post_init__(self):
        if self.m < 2 or (self.m & (self.m - 1)) != 0:
            raise ValueError(f"alphabet size must be a power of two >= 2, got {self.m}")
        if not 0 <= self.id < self.m:
            raise ValueError(f"fingerprint id {self.id} out of range [0, {self.m})")

    @property
    def bits(self) -> int:
        return self.m.bit_length() - 1

    def one_hot(self) -> np.ndarray:
        v = np.zeros(self.m, dtype=np.float64)
        v[self.id] = 1.0
        return v

    def to_bits(self) -> np.ndarray:
        """Binary view, MSB first, exactly log2(m) digits."""
        return np.array([(self.id >> k) & 1 for k in range(self.bits - 1, -1, -1)],
                        dtype=np.uint8)

    @classmethod
    def from_one_hot(cls, vec, m: int | None = None) -> "Fingerprint":
        vec = np.asarray(vec)
        m = m if m is not None else vec.size
        if vec.size != m or np.count_nonzero(vec) != 1:
            raise ValueError("one-hot vector must have exactly one nonzero entry")
        return cls(int(np.argmax(vec)), m)

    @classmethod
    def from_bits(cls, bits) -> "Fingerprint":
        bits = np.asarray(bits, dtype=np.uint8)
        ident = 0
        for b in bits:
            ident = (ident << 1) | int(b)
        return cls(ident, 1 << bits.size)


@dataclass
class Dataset:
    """IPD windows of one length with a disjoint train/test split."""

    windows: np.ndarray          # (count, n) float64
    train_idx: np.ndarray        # int indices into windows
    test_idx: np.ndarray

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        if self.windows.ndim != 2:
            raise ValueError(f"windows must be 2-D, got shape {self.windows.shape}")
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        if np.intersect1d(self.train_idx, self.test_idx).size:
            raise ValueError("train and test splits overlap")

    @property
    def n(self) -> int:
        return int(self.windows.shape[1])

    @property
    def train_windows(self) -> np.ndarray:
        return self.windows[self.train_idx]

    @property
    def test_windows(self) -> np.ndarray:
        return self.windows[self.test_idx]

    @classmethod
    def split(cls, windows: np.ndarray, train_frac: float = 0.8, seed: int = 0) -> "Dataset":
        """Random disjoint split, 80/20 by default."""
        windows = np.asarray(windows, dtype=np.float64)
        rng = np.random.default_rng(seed)
        order = rng.permutation(windows.shape[0])
        cut = int(round(train_frac * windows.shape[0]))
        return cls(windows, np.sort(order[:cut]), np.sort(order[cut:]))

    def sha256(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.windows).tobytes())
        h.update(self.train_idx.tobytes())
        h.update(self.test_idx.tobytes())
        return h.hexdigest()

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.save(directory / "windows.npy", self.windows)
        manifest = {"train": self.train_idx.tolist(), "test": self.test_idx.tolist()}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "Dataset":
        directory = Path(directory)
        windows = np.load(directory / "windows.npy")
        manifest = json.loads((directory / "manifest.json").read_text())
        return cls(windows, np.array(manifest["train"]), np.array(manifest["test"]))


def ipds_from_timestamps(trace: FlowTrace) -> np.ndarray:
    """Consecutive timestamp differences of one flow, in ms.

    Raises DegenerateTraceError for flows with fewer than two packets.
    """
    ts = trace.timestamps
    if ts.size < 2:
        raise DegenerateTraceError(
            f"flow {trace.flow_id!r} has {ts.size} timestamps, need >= 2")
    ipds = np.diff(ts)
    if np.any(ipds < 0):
        raise MalformedTraceError(f"flow {trace.flow_id!r}: timestamps decrease")
    return ipds


def timestamps_from_ipds(start_ms: float, ipds, flow_id: str = "flow") -> FlowTrace:
    """Inverse of differencing: cumulative sums starting at start_ms.

    Each timestamp is nudged by a few ULPs toward the value whose stored
    difference reproduces the input IPD bit-exactly. That is always possible
    when IPDs sit on a dyadic clock grid (any realistic capture resolution,
    e.g. multiples of 2**-10 ms); for full-mantissa reals whose low bits are
    finer than the timestamp magnitude can hold, the closest representable
    timestamp is used instead (error below one ULP of the running sum).
    """
    ipds = np.asarray(ipds, dtype=np.float64)
    if np.any(ipds < 0):
        raise MalformedTraceError("negative IPD breaks causality")
    ts = np.empty(ipds.size + 1, dtype=np.float64)
    ts[0] = t = float(start_ms)
    for i, x in enumerate(ipds):
        y = best = t + x
        best_err = abs((y - t) - x)
        for _ in range(4):
            d = y - t
            if d == x:
                best = y
                break
            y = np.nextafter(y, np.inf if d < x else -np.inf)
            if abs((y - t) - x) < best_err:
                best, best_err = y, abs((y - t) - x)
        ts[i + 1] = t = max(best, t)
    return FlowTrace(flow_id, ts)


def window_flow(ipds, n: int) -> np.ndarray:
    """Chop an IPD sequence into non-overlapping windows of exactly n.

    The trailing remainder shorter than n is dropped; callers who care can
    compare len(ipds) against count * n.
    """
    if n < 1:
        raise ValueError(f"window length must be >= 1, got {n}")
    ipds = np.asarray(ipds, dtype=np.float64)
    count = ipds.size // n
    dropped = ipds.size - count * n
    if dropped:
        log.debug("window_flow: dropping %d trailing IPDs (< window of %d)", dropped, n)
    return ipds[:count * n].reshape(count, n).copy()


def windows_from_traces(traces, n: int) -> np.ndarray:
    """All complete n-length IPD windows across a collection of flows."""
    parts = [window_flow(ipds_from_timestamps(t), n) for t in traces if len(t) >= 2]
    parts = [p for p in parts if p.shape[0]]
    if not parts:
        return np.empty((0, n), dtype=np.float64)
    return np.concatenate(parts, axis=0)


CSV_HEADER = ["flow_id", "timestamp_ms"]


def save_traces(path, traces) -> None:
    """Write flows as CSV rows `flow_id,timestamp_ms`, microsecond precision."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for trace in traces:
            for ts in trace.timestamps:
                writer.writerow([trace.flow_id, f"{ts:.6f}"])


def load_traces(path) -> list[FlowTrace]:
    """Read flows from the CSV trace format; empty file yields an empty list."""
    path = Path(path)
    flows: dict[str, list[float]] = {}
    order: list[str] = []
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        if [h.strip() for h in header] != CSV_HEADER:
            raise TraceFormatError(f"expected header {','.join(CSV_HEADER)}", line_no=1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise TraceFormatError(f"expected 2 fields, got {len(row)}", line_no)
            flow_id, raw_ts = row[0], row[1]
            try:
                ts = float(raw_ts)
            except ValueError:
                raise TraceFormatError(f"bad timestamp {raw_ts!r}", line_no) from None
            if not math.isfinite(ts):
                raise TraceFormatError(f"non-finite timestamp {raw_ts!r}", line_no)
            bucket = flows.get(flow_id)
            if bucket is None:
                flows[flow_id] = bucket = []
                order.append(flow_id)
            elif bucket and ts < bucket[-1]:
                raise TraceFormatError(
                    f"flow {flow_id!r} timestamps not sorted", line_no)
            bucket.append(ts)
    return [FlowTrace(fid, np.array(flows[fid])) for fid in order]
