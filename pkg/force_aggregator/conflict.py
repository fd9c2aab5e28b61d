"""
Pairwise conflicts between reports and between tracks.

Every conflict is a value in [0, 1], 0 meaning "no reason to keep the two
apart" and 1 an absolute contradiction. Conflicts of the different aspects
(speed, type, direction for reports; distance, heading for tracks) are
combined with Dempster's rule, ``1 - prod(1 - c)``.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .domain import ClassificationTree, Position, Report, Track

logger = logging.getLogger(__name__)

ConflictValue = float


@dataclass(frozen=True)
class RampParams:
    """
    Piecewise-linear conflict ramp.

    Args:
        p: conflict value at the lower knee x1
        x1: below x1 the value rises linearly from 0 to p
        x2: from x2 on the conflict is 1
    """
    p: float
    x1: float
    x2: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"RampParams.p must lie in [0, 1], got {self.p}")
        if not 0.0 <= self.x1 < self.x2:
            raise ValueError(f"RampParams needs 0 <= x1 < x2, got x1={self.x1}, x2={self.x2}")


@dataclass(frozen=True)
class DirectionParams:
    """
    Parameters of the report direction conflict.

    Args:
        delta_d0: smallest heading difference (rad) that counts
        delta_t0: reports further apart in time (s) carry no direction conflict
        k: softens the decay of the conflict with elapsed time
    """
    delta_d0: float = math.pi / 4
    delta_t0: float = 8.0
    k: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.delta_d0 <= math.pi:
            raise ValueError(f"delta_d0 must lie in (0, pi], got {self.delta_d0}")
        if self.delta_t0 <= 0:
            raise ValueError(f"delta_t0 must be > 0, got {self.delta_t0}")
        if self.k <= 0:
            raise ValueError(f"k must be > 0, got {self.k}")


SPEED_RAMP = RampParams(p=0.01, x1=22.0, x2=25.0)
DISTANCE_RAMP = RampParams(p=0.01, x1=300.0, x2=1000.0)
HEADING_RAMP = RampParams(p=0.0, x1=0.0, x2=math.pi)


@dataclass(frozen=True)
class ConflictConfig:
    """All parameters of the report and track conflict measures."""
    speed: RampParams = SPEED_RAMP
    direction: DirectionParams = field(default_factory=DirectionParams)
    distance: RampParams = DISTANCE_RAMP
    heading: RampParams = HEADING_RAMP
    # simultaneous reports closer than this (m) are duplicate sightings
    duplicate_radius: float = 1.0


def angular_difference(a: float, b: float) -> float:
    """Minimal absolute difference of two angles, in [0, pi]."""
    diff = abs(a - b) % (2.0 * math.pi)
    return min(diff, 2.0 * math.pi - diff)


def ramp_conflict(x: float, params: RampParams) -> ConflictValue:
    """
    Conflict of a non-negative quantity on the ramp (0, 0) - (x1, p) - (x2, 1).

    Args:
        x: speed, distance or angle, clamped at 0
        params: ramp knees and knee value

    Returns:
        conflict in [0, 1], continuous and non-decreasing in x
    """
    x = max(float(x), 0.0)
    p, x1, x2 = params.p, params.x1, params.x2
    if x >= x2:
        return 1.0
    if x < x1:
        return x * p / x1
    return ((x - x1) + p * (x2 - x)) / (x2 - x1)


def combine_aspects(conflicts: Iterable[float]) -> ConflictValue:
    """Dempster combination of independent conflicts: ``1 - prod(1 - c)``."""
    remaining = 1.0
    for c in conflicts:
        remaining *= 1.0 - c
    return 1.0 - remaining


def speed_conflict(r1: Report, r2: Report, params: RampParams = SPEED_RAMP,
                   duplicate_radius: float = 1.0) -> ConflictValue:
    """
    Conflict from the speed a single vehicle needs to cause both reports.

    Simultaneous reports are a duplicate sighting (0) when within
    ``duplicate_radius`` meters of each other and impossible (1) otherwise.
    """
    distance = r1.position.distance_to(r2.position)
    dt = abs(r1.time - r2.time)
    if dt == 0.0:
        return 0.0 if distance <= duplicate_radius else 1.0
    return ramp_conflict(distance / dt, params)


def type_conflict(c1: str, c2: str, tree: ClassificationTree) -> ConflictValue:
    """0 if one class is an ancestor-or-self of the other, else 1."""
    return 0.0 if tree.is_descendant(c1, c2) else 1.0


def direction_conflict(r1: Report, r2: Report,
                       params: DirectionParams = DirectionParams()) -> ConflictValue:
    """Conflict of opposite headings, fading with the time between reports."""
    # report orientation is read as the direction of travel
    delta_d = angular_difference(r1.orientation, r2.orientation)
    delta_t = abs(r1.time - r2.time)
    if delta_t <= params.delta_t0 and delta_d >= params.delta_d0:
        value = params.k * delta_d / (math.pi * (params.k + delta_t))
        return min(max(value, 0.0), 1.0)
    return 0.0


def report_conflict(r1: Report, r2: Report, config: ConflictConfig,
                    tree: ClassificationTree) -> ConflictValue:
    """Overall conflict of two reports (speed, type and direction combined)."""
    return combine_aspects((
        speed_conflict(r1, r2, config.speed, config.duplicate_radius),
        type_conflict(r1.classification, r2.classification, tree),
        direction_conflict(r1, r2, config.direction),
    ))


def report_conflict_matrix(reports: Sequence[Report], config: ConflictConfig,
                           tree: ClassificationTree) -> np.ndarray:
    """Symmetric matrix of pairwise report conflicts with a zero diagonal."""
    n = len(reports)
    conflicts = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            conflicts[i, j] = conflicts[j, i] = report_conflict(reports[i], reports[j], config, tree)
    logger.debug("Computed %d pairwise report conflicts", n * (n - 1) // 2)
    return conflicts


def positions_at(track: Track, times: np.ndarray) -> np.ndarray:
    """Interpolated positions at times inside the track span, shape (len(times), 2)."""
    ts, xy = track.times, track.xy
    times = np.asarray(times, dtype=float)
    last = len(ts) - 1
    hi = np.clip(np.searchsorted(ts, times, side="left"), 0, last)
    lo = np.clip(hi - 1, 0, last)
    span = ts[hi] - ts[lo]
    frac = np.divide(times - ts[lo], span, out=np.zeros_like(times), where=span > 0)
    positions = xy[lo] + (xy[hi] - xy[lo]) * frac[:, None]
    exact = ts[hi] == times
    positions[exact] = xy[hi[exact]]
    return positions


def position_at(track: Track, t: float) -> Position:
    """
    Position of a track at time t, moving straight at constant speed between reports.

    At a report time the report's own position is returned.

    Raises:
        ValueError: if t lies outside the track's time span
    """
    if not track.start <= t <= track.end:
        raise ValueError(f"Time {t} is outside the span [{track.start}, {track.end}] "
                         f"of track '{track.id}'")
    x, y = positions_at(track, np.array([t]))[0]
    return Position(float(x), float(y))


def common_interval(a: Track, b: Track) -> Optional[Tuple[float, float]]:
    """Overlap of two track spans, or None when they do not overlap."""
    start = max(a.start, b.start)
    end = min(a.end, b.end)
    if start > end:
        return None
    return start, end


def _nearest_report_distance(a: Track, b: Track) -> float:
    dt = np.abs(a.times[:, None] - b.times[None, :])
    dist = np.hypot(a.xy[:, None, 0] - b.xy[None, :, 0], a.xy[:, None, 1] - b.xy[None, :, 1])
    nearest = dt == dt.min()
    return float(dist[nearest].min())


def distance_conflict(a: Track, b: Track, params: RampParams = DISTANCE_RAMP) -> ConflictValue:
    """
    Ramp conflict of the median distance between two tracks.

    Distances are sampled at every report time of either track inside the
    common interval. Without a common interval the distance between the two
    temporally nearest reports is used.
    """
    interval = common_interval(a, b)
    if interval is None:
        return ramp_conflict(_nearest_report_distance(a, b), params)
    start, end = interval
    times = np.concatenate([a.times, b.times])
    times = np.unique(times[(times >= start) & (times <= end)])
    diff = positions_at(a, times) - positions_at(b, times)
    distances = np.hypot(diff[:, 0], diff[:, 1])
    return ramp_conflict(float(np.median(distances)), params)


def _chord_heading(track: Track, start: float, end: float) -> Optional[float]:
    p0, p1 = positions_at(track, np.array([start, end]))
    dx, dy = p1 - p0
    if math.hypot(dx, dy) < 1e-9:
        return None
    return math.atan2(dy, dx)


def track_direction_conflict(a: Track, b: Track, params: RampParams = HEADING_RAMP) -> ConflictValue:
    """
    Conflict of the straight-line headings of two tracks over their common interval.

    Returns 0 when there is no common interval of positive length or either
    track is stationary over it.
    """
    interval = common_interval(a, b)
    if interval is None or interval[1] <= interval[0]:
        return 0.0
    heading_a = _chord_heading(a, *interval)
    heading_b = _chord_heading(b, *interval)
    if heading_a is None or heading_b is None:
        return 0.0
    return ramp_conflict(angular_difference(heading_a, heading_b), params)


def track_conflict(a: Track, b: Track, config: ConflictConfig) -> ConflictValue:
    """Overall conflict of two tracks (distance and heading combined)."""
    return combine_aspects((
        distance_conflict(a, b, config.distance),
        track_direction_conflict(a, b, config.heading),
    ))


def track_conflict_matrix(tracks: Sequence[Track], config: ConflictConfig) -> np.ndarray:
    """Symmetric matrix of pairwise track conflicts with a zero diagonal."""
    n = len(tracks)
    conflicts = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            conflicts[i, j] = conflicts[j, i] = track_conflict(tracks[i], tracks[j], config)
    return conflicts
