"""Core data model for paired VR telemetry captures.

A capture session ("trace") couples two synchronized streams for one user in
one game: headset/controller poses sampled at a nominal 60 Hz, and the packet
stream observed on the network link. Everything downstream works on fixed
accumulation windows cut from a shared, re-based time axis, so this module
owns the time handling: re-basing, quaternion canonicalization, windowing,
the dropout filter, and the chronological train/test split.

Array conventions: movement data is stored as an (n, 21) float array whose
columns follow MOVEMENT_CHANNELS (head, left controller, right controller;
position xyz then quaternion wxyz for each). Packet data is three parallel
arrays (time, size, direction) with direction encoded as DIR_UL / DIR_DL.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 60.0
NOMINAL_DT = 1.0 / SAMPLE_RATE_HZ
DEFAULT_WINDOW_S = 10.0
DEFAULT_TRAIN_S = 480.0
DEFAULT_TEST_S = 120.0

#: Fraction of nominal movement samples a window must contain to be usable.
DROPOUT_MIN_FRACTION = 0.5

DIR_UL = 0
DIR_DL = 1

DEVICES = ("head", "left", "right")
POSE_FIELDS = ("px", "py", "pz", "qw", "qx", "qy", "qz")

#: Column order of the movement array: 3 devices x 7 pose fields = 21.
MOVEMENT_CHANNELS: tuple[str, ...] = tuple(
    f"{dev}_{f}" for dev in DEVICES for f in POSE_FIELDS
)

_DEV_BASE = {dev: 7 * i for i, dev in enumerate(DEVICES)}
POSITION_SLICES = {dev: slice(b, b + 3) for dev, b in _DEV_BASE.items()}
QUATERNION_SLICES = {dev: slice(b + 3, b + 7) for dev, b in _DEV_BASE.items()}
#: Column indices of the vertical (y) position channel per device.
Y_CHANNEL_INDEX = {dev: b + 1 for dev, b in _DEV_BASE.items()}

#: Reference forward direction in device-local coordinates.
FORWARD_AXIS = np.array([0.0, 0.0, -1.0])

#: Device pairs used for derived distance/angle channels, in feature order.
GEOMETRY_PAIRS = (("left", "head"), ("right", "head"), ("left", "right"))

# Norm handling in canonicalize_quaternions: norms this close to 1 are
# treated as exactly unit (keeps the operation idempotent), norms below the
# floor are corrupt data.
_UNIT_NORM_TOL = 1e-12
_ZERO_NORM_FLOOR = 1e-9


class TraceFormatError(ValueError):
    """Malformed input file or record (bad header, column, value...)."""


class TraceQualityError(ValueError):
    """Structurally valid data that fails a quality requirement."""


class SplitError(ValueError):
    """A trace cannot satisfy the requested train/test layout."""


@dataclass(frozen=True)
class Pose:
    px: float
    py: float
    pz: float
    qw: float
    qx: float
    qy: float
    qz: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py, self.pz])

    @property
    def quaternion(self) -> np.ndarray:
        return np.array([self.qw, self.qx, self.qy, self.qz])


@dataclass(frozen=True)
class MovementSample:
    t: float
    head: Pose
    left: Pose
    right: Pose

    def as_row(self) -> np.ndarray:
        row = np.empty(21)
        for dev, pose in (("head", self.head), ("left", self.left), ("right", self.right)):
            base = _DEV_BASE[dev]
            row[base : base + 7] = (pose.px, pose.py, pose.pz, pose.qw, pose.qx, pose.qy, pose.qz)
        return row


@dataclass(frozen=True)
class PacketRecord:
    t: float
    size_bytes: int
    direction: int  # DIR_UL or DIR_DL


@dataclass
class Trace:
    """One user's paired movement + traffic capture for one game.

    Timestamps are re-based so t=0 is the earliest event across both streams
    (see :meth:`assemble`). ``duration_s`` is the capture length used for
    windowing; it may exceed the last timestamp (a 600 s capture's final
    movement sample sits at 599.98333 s).
    """

    user_id: str
    game_id: str
    duration_s: float
    movement_t: np.ndarray
    movement: np.ndarray
    traffic_t: np.ndarray
    traffic_size: np.ndarray
    traffic_dir: np.ndarray

    def __post_init__(self) -> None:
        self.movement_t = np.asarray(self.movement_t, dtype=np.float64)
        self.movement = np.asarray(self.movement, dtype=np.float64)
        self.traffic_t = np.asarray(self.traffic_t, dtype=np.float64)
        self.traffic_size = np.asarray(self.traffic_size, dtype=np.int64)
        self.traffic_dir = np.asarray(self.traffic_dir, dtype=np.uint8)
        if self.movement.ndim != 2 or self.movement.shape[1] != len(MOVEMENT_CHANNELS):
            raise TraceFormatError(
                f"movement array must be (n, {len(MOVEMENT_CHANNELS)}), got {self.movement.shape}"
            )
        if self.movement_t.shape[0] != self.movement.shape[0]:
            raise TraceFormatError("movement timestamps and rows disagree in length")
        if not (self.traffic_t.shape[0] == self.traffic_size.shape[0] == self.traffic_dir.shape[0]):
            raise TraceFormatError("traffic arrays disagree in length")

    @classmethod
    def assemble(
        cls,
        user_id: str,
        game_id: str,
        movement_t: np.ndarray,
        movement: np.ndarray,
        traffic_t: np.ndarray,
        traffic_size: np.ndarray,
        traffic_dir: np.ndarray,
        duration_s: float | None = None,
    ) -> "Trace":
        """Build a trace, re-basing both streams to a shared t=0.

        The offset is the minimum first timestamp across the two streams, so
        their relative alignment is preserved. When ``duration_s`` is not
        given it falls back to the last re-based timestamp.
        """
        movement_t = np.asarray(movement_t, dtype=np.float64)
        traffic_t = np.asarray(traffic_t, dtype=np.float64)
        firsts = [a[0] for a in (movement_t, traffic_t) if a.size]
        if not firsts:
            raise TraceFormatError(f"trace {user_id}/{game_id} has no samples in either stream")
        offset = min(firsts)
        movement_t = movement_t - offset
        traffic_t = traffic_t - offset
        if duration_s is None:
            duration_s = max(a[-1] for a in (movement_t, traffic_t) if a.size)
        return cls(
            user_id=user_id,
            game_id=game_id,
            duration_s=float(duration_s),
            movement_t=movement_t,
            movement=np.asarray(movement, dtype=np.float64),
            traffic_t=traffic_t,
            traffic_size=traffic_size,
            traffic_dir=traffic_dir,
        )

    @classmethod
    def from_samples(
        cls,
        user_id: str,
        game_id: str,
        samples: Sequence[MovementSample],
        packets: Sequence[PacketRecord] = (),
        duration_s: float | None = None,
    ) -> "Trace":
        movement_t = np.array([s.t for s in samples], dtype=np.float64)
        movement = (
            np.stack([s.as_row() for s in samples])
            if samples
            else np.empty((0, len(MOVEMENT_CHANNELS)))
        )
        traffic_t = np.array([p.t for p in packets], dtype=np.float64)
        traffic_size = np.array([p.size_bytes for p in packets], dtype=np.int64)
        traffic_dir = np.array([p.direction for p in packets], dtype=np.uint8)
        return cls.assemble(
            user_id, game_id, movement_t, movement, traffic_t, traffic_size, traffic_dir, duration_s
        )

    @property
    def n_movement(self) -> int:
        return self.movement.shape[0]

    @property
    def n_packets(self) -> int:
        return self.traffic_t.shape[0]

    def sample(self, i: int) -> MovementSample:
        row = self.movement[i]
        poses = {
            dev: Pose(*(float(v) for v in row[base : base + 7]))
            for dev, base in _DEV_BASE.items()
        }
        return MovementSample(t=float(self.movement_t[i]), **poses)

    def packet(self, j: int) -> PacketRecord:
        return PacketRecord(
            t=float(self.traffic_t[j]),
            size_bytes=int(self.traffic_size[j]),
            direction=int(self.traffic_dir[j]),
        )


@dataclass(frozen=True)
class TraceRecord:
    user_id: str
    game_id: str
    trace: Trace


@dataclass
class Dataset:
    """A cohort: one trace per (user, game), plus per-game category tags."""

    records: list[TraceRecord]
    game_categories: dict[str, str]

    def __post_init__(self) -> None:
        seen = set()
        for rec in self.records:
            key = (rec.user_id, rec.game_id)
            if key in seen:
                raise ValueError(f"duplicate trace for user {rec.user_id!r} game {rec.game_id!r}")
            seen.add(key)
            if rec.game_id not in self.game_categories:
                raise ValueError(f"game {rec.game_id!r} has no category entry")

    def users(self) -> list[str]:
        return sorted({r.user_id for r in self.records})

    def game_ids(self) -> list[str]:
        return sorted({r.game_id for r in self.records})

    def for_game(self, game_id: str) -> list[TraceRecord]:
        recs = [r for r in self.records if r.game_id == game_id]
        if not recs:
            raise ValueError(f"no traces for game {game_id!r}")
        return recs

    def restrict_users(self, users: Iterable[str]) -> "Dataset":
        keep = set(users)
        missing = keep - set(self.users())
        if missing:
            raise ValueError(f"unknown users: {sorted(missing)}")
        recs = [r for r in self.records if r.user_id in keep]
        games = {g: c for g, c in self.game_categories.items() if any(r.game_id == g for r in recs)}
        return Dataset(records=recs, game_categories=games)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q`` (wxyz order).

    ``q`` may be (4,) or (n, 4); ``v`` may be (3,) or (n, 3); shapes
    broadcast. Uses v' = v + w*(2 u x v) + u x (2 u x v) with u the vector
    part, which needs no trig and no matrix build.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def forward_vectors(quats: np.ndarray) -> np.ndarray:
    """Device forward direction(s): FORWARD_AXIS rotated by the pose quaternion."""
    return quat_rotate(quats, FORWARD_AXIS)


def _canonical_signs(quats: np.ndarray, device: str) -> np.ndarray:
    """Sign flips giving a temporally continuous, first-sample-positive stream.

    The first sample must have w >= 0 (tie broken by qx >= 0, then qy, qz);
    every later sample must satisfy dot(q_i, q_{i-1}) >= 0 against the
    already-flipped predecessor. Because dot(-a, -b) = dot(a, b), the flip of
    sample i is the running product of the raw consecutive dot-product signs,
    which vectorizes.
    """
    first = quats[0]
    lead = 1.0
    for comp in first:
        if comp != 0.0:
            lead = 1.0 if comp > 0.0 else -1.0
            break
    if quats.shape[0] == 1:
        return np.array([lead])
    dots = np.einsum("ij,ij->i", quats[1:], quats[:-1])
    step = np.where(dots < 0.0, -1.0, 1.0)
    signs = np.empty(quats.shape[0])
    signs[0] = lead
    np.cumprod(step, out=signs[1:])
    signs[1:] *= lead
    return signs


def canonicalize_quaternions(trace: Trace) -> Trace:
    """Return a copy of ``trace`` with every quaternion stream canonical.

    Per device stream: renormalize to unit length (norms already within
    1e-12 of 1 are left bit-identical, which makes the operation exactly
    idempotent), then resolve the q/-q ambiguity by temporal continuity with
    a fixed sign convention for the first sample. A norm below 1e-9 is
    corrupt data and raises TraceQualityError naming the sample index.

    The represented rotations are unchanged: q and -q rotate identically.
    """
    if trace.n_movement == 0:
        raise TraceQualityError(f"trace {trace.user_id}/{trace.game_id} has no movement samples")
    movement = trace.movement.copy()
    for dev in DEVICES:
        sl = QUATERNION_SLICES[dev]
        quats = movement[:, sl]
        norms = np.sqrt(np.einsum("ij,ij->i", quats, quats))
        bad = np.flatnonzero(norms < _ZERO_NORM_FLOOR)
        if bad.size:
            raise TraceQualityError(
                f"zero-norm {dev} quaternion at sample {int(bad[0])} "
                f"in trace {trace.user_id}/{trace.game_id}"
            )
        scale = np.where(np.abs(norms - 1.0) <= _UNIT_NORM_TOL, 1.0, norms)
        quats = quats / scale[:, None]
        quats *= _canonical_signs(quats, dev)[:, None]
        movement[:, sl] = quats
    return replace(trace, movement=movement)


@dataclass(frozen=True)
class WindowSegment:
    """One accumulation window of a trace: [t_start, t_start + window_s).

    Holds index ranges into the parent trace's arrays; the array properties
    return views, not copies.
    """

    trace: Trace
    index: int
    t_start: float
    window_s: float
    m_lo: int
    m_hi: int
    p_lo: int
    p_hi: int

    @property
    def movement_t(self) -> np.ndarray:
        return self.trace.movement_t[self.m_lo : self.m_hi]

    @property
    def movement(self) -> np.ndarray:
        return self.trace.movement[self.m_lo : self.m_hi]

    @property
    def traffic_t(self) -> np.ndarray:
        return self.trace.traffic_t[self.p_lo : self.p_hi]

    @property
    def traffic_size(self) -> np.ndarray:
        return self.trace.traffic_size[self.p_lo : self.p_hi]

    @property
    def traffic_dir(self) -> np.ndarray:
        return self.trace.traffic_dir[self.p_lo : self.p_hi]

    @property
    def n_movement(self) -> int:
        return self.m_hi - self.m_lo


def window_trace(trace: Trace, window_s: float = DEFAULT_WINDOW_S) -> list[WindowSegment]:
    """Cut a trace into floor(duration / window_s) full windows.

    Window i covers [i*window_s, (i+1)*window_s) on the re-based time axis;
    membership is half-open, so a sample sitting exactly on a boundary
    belongs to the later window. The trailing partial window is dropped.
    """
    if window_s <= 0:
        raise ValueError(f"window_s must be positive, got {window_s}")
    n_windows = int(trace.duration_s // window_s)
    edges = np.arange(n_windows + 1, dtype=np.float64) * window_s
    m_cuts = np.searchsorted(trace.movement_t, edges, side="left")
    p_cuts = np.searchsorted(trace.traffic_t, edges, side="left")
    return [
        WindowSegment(
            trace=trace,
            index=i,
            t_start=float(edges[i]),
            window_s=float(window_s),
            m_lo=int(m_cuts[i]),
            m_hi=int(m_cuts[i + 1]),
            p_lo=int(p_cuts[i]),
            p_hi=int(p_cuts[i + 1]),
        )
        for i in range(n_windows)
    ]


def passes_dropout(
    segment: WindowSegment,
    rate_hz: float = SAMPLE_RATE_HZ,
    min_fraction: float = DROPOUT_MIN_FRACTION,
) -> bool:
    """Whether a window holds enough movement samples to be trusted.

    The bar is min_fraction of the nominal count rate_hz * window_s
    (300 for a 10 s window at 60 Hz); windows at or above it pass.
    """
    return segment.n_movement >= min_fraction * rate_hz * segment.window_s


def filter_windows(
    segments: Iterable[WindowSegment],
    rate_hz: float = SAMPLE_RATE_HZ,
    min_fraction: float = DROPOUT_MIN_FRACTION,
) -> list[WindowSegment]:
    """Drop windows failing the dropout bar, logging each discard."""
    kept = []
    for seg in segments:
        if passes_dropout(seg, rate_hz, min_fraction):
            kept.append(seg)
        else:
            log.warning(
                "dropping window %d of trace %s/%s: %d movement samples (< %d required)",
                seg.index,
                seg.trace.user_id,
                seg.trace.game_id,
                seg.n_movement,
                math.ceil(min_fraction * rate_hz * seg.window_s),
            )
    return kept


def split_train_test(
    segments: Sequence[WindowSegment],
    train_s: float = DEFAULT_TRAIN_S,
    test_s: float = DEFAULT_TEST_S,
    window_s: float = DEFAULT_WINDOW_S,
) -> tuple[list[WindowSegment], list[WindowSegment]]:
    """Chronological split: train = windows starting before ``train_s``,
    test = windows starting in [train_s, train_s + test_s).

    Both spans must be positive multiples of the window length, and the
    trace must actually cover them.
    """
    for name, span in (("train_s", train_s), ("test_s", test_s)):
        if span <= 0 or (span / window_s) != int(span / window_s):
            raise ValueError(f"{name}={span} is not a positive multiple of window_s={window_s}")
    if segments:
        tr = segments[0].trace
        needed = train_s + test_s
        if needed > tr.duration_s:
            raise SplitError(
                f"trace {tr.user_id}/{tr.game_id} lasts {tr.duration_s:.3f} s; "
                f"train+test needs {needed:.3f} s ({needed - tr.duration_s:.3f} s short)"
            )
    train = [s for s in segments if s.t_start < train_s]
    test = [s for s in segments if train_s <= s.t_start < train_s + test_s]
    return train, test
