"""
Synthetic scenarios: units moving along waypoint paths, observed by sensors.

Every unit is laid out line abreast across its initial heading and moves at
constant speed along its path. Each report period, every observer emits one
report per vehicle within its sensing range, with Gaussian position and
orientation noise; the further the vehicle, the coarser its classification.
The ``name`` of each report is the ground-truth vehicle id
``<unit_type>-<n>/<k>`` (unit n of the scenario, vehicle k of the unit), which
``score`` uses to grade a situation picture.
"""
import json
import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .domain import (ClassificationTree, PathLike, Position, Report, SituationPicture,
                     UnitTemplate, default_templates, normalize_angle, templates_by_type)
from .errors import ScenarioError, ScoringError

logger = logging.getLogger(__name__)

# (max range in m, revealed tree depth; None = full depth)
DEFAULT_COARSENING = ((1000.0, None), (2500.0, 1), (4000.0, 0))
DEFAULT_MAX_RANGE = 4000.0
MAX_CONSISTENT_SPEED = 22.0

VEHICLE_NAME = re.compile(r"^(?P<unit_type>.+)-(?P<unit>\d+)/(?P<vehicle>\d+)$")


def _position_from(data, where: str) -> Position:
    if isinstance(data, dict) and set(data) == {"x", "y"}:
        return Position(float(data["x"]), float(data["y"]))
    if isinstance(data, (list, tuple)) and len(data) == 2:
        return Position(float(data[0]), float(data[1]))
    raise ScenarioError(f"{where}: expected {{\"x\": .., \"y\": ..}} or [x, y], got {data!r}")


def _check_keys(data: dict, allowed: Iterable[str], where: str) -> None:
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: expected an object, got {data!r}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(unknown)}")


@dataclass(frozen=True)
class UnitSpec:
    """
    A unit of the scenario.

    Args:
        unit_type: template name
        start: position of the formation centre at time 0
        waypoints: positions the centre moves through, in order
        speed: m/s along the path
        spacing: distance between neighbouring vehicles (m)
        heading: facing of a unit without waypoints (rad)
    """
    unit_type: str
    start: Position
    waypoints: Tuple[Position, ...] = ()
    speed: float = 5.0
    spacing: float = 100.0
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if self.speed < 0:
            raise ScenarioError(f"Unit '{self.unit_type}': speed must be >= 0, got {self.speed}")
        if self.spacing <= 0:
            raise ScenarioError(f"Unit '{self.unit_type}': spacing must be > 0, got {self.spacing}")

    @property
    def path(self) -> Tuple[Position, ...]:
        return (self.start,) + self.waypoints

    def to_dict(self) -> dict:
        return {
            "unit_type": self.unit_type,
            "start": self.start.to_dict(),
            "waypoints": [p.to_dict() for p in self.waypoints],
            "speed": self.speed,
            "spacing": self.spacing,
            "heading": self.heading,
        }

    @classmethod
    def from_dict(cls, data: dict, where: str = "unit") -> 'UnitSpec':
        _check_keys(data, ("unit_type", "start", "waypoints", "speed", "spacing", "heading"), where)
        if "unit_type" not in data or "start" not in data:
            raise ScenarioError(f"{where}: 'unit_type' and 'start' are required")
        return cls(
            unit_type=str(data["unit_type"]),
            start=_position_from(data["start"], f"{where}.start"),
            waypoints=tuple(_position_from(p, f"{where}.waypoints")
                            for p in data.get("waypoints", [])),
            speed=float(data.get("speed", 5.0)),
            spacing=float(data.get("spacing", 100.0)),
            heading=float(data.get("heading", 0.0)),
        )


@dataclass(frozen=True)
class ObserverSpec:
    """An observer, static (one path point) or moving along its path."""
    id: str
    path: Tuple[Position, ...]
    speed: float = 0.0
    max_range: float = DEFAULT_MAX_RANGE

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(self.path))
        if not self.path:
            raise ScenarioError(f"Observer '{self.id}' needs a position")
        if self.speed < 0 or self.max_range <= 0:
            raise ScenarioError(f"Observer '{self.id}' needs speed >= 0 and max_range > 0")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "path": [p.to_dict() for p in self.path],
            "speed": self.speed,
            "max_range": self.max_range,
        }

    @classmethod
    def from_dict(cls, data: dict, where: str = "observer") -> 'ObserverSpec':
        _check_keys(data, ("id", "position", "path", "speed", "max_range"), where)
        if "id" not in data:
            raise ScenarioError(f"{where}: 'id' is required")
        if "path" in data:
            path = tuple(_position_from(p, f"{where}.path") for p in data["path"])
        elif "position" in data:
            path = (_position_from(data["position"], f"{where}.position"),)
        else:
            raise ScenarioError(f"{where}: 'position' or 'path' is required")
        return cls(str(data["id"]), path, float(data.get("speed", 0.0)),
                   float(data.get("max_range", DEFAULT_MAX_RANGE)))


@dataclass(frozen=True)
class ScenarioSpec:
    """
    Everything needed to generate a report log.

    Args:
        units: the ground-truth units
        observers: the sensors
        duration: seconds; reports are emitted at 0, period, 2*period, ... <= duration
        report_period: seconds between report rounds
        position_sigma: std of the position noise per axis (m)
        orientation_sigma: std of the orientation noise (rad)
        coarsening: increasing (max range, revealed depth) pairs; beyond the
            last range the class is "unknown"
        seed: seed of the noise generator
        drop_vehicles: vehicle names that are never reported
    """
    units: Tuple[UnitSpec, ...]
    observers: Tuple[ObserverSpec, ...]
    duration: float = 60.0
    report_period: float = 10.0
    position_sigma: float = 15.0
    orientation_sigma: float = 0.1
    coarsening: Tuple[Tuple[float, Optional[int]], ...] = DEFAULT_COARSENING
    seed: int = 0
    drop_vehicles: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "observers", tuple(self.observers))
        object.__setattr__(self, "coarsening",
                           tuple((float(r), None if d is None else int(d)) for r, d in self.coarsening))
        object.__setattr__(self, "drop_vehicles", tuple(self.drop_vehicles))
        if self.report_period <= 0:
            raise ScenarioError(f"report_period must be > 0, got {self.report_period}")
        if self.duration < 0:
            raise ScenarioError(f"duration must be >= 0, got {self.duration}")
        if self.position_sigma < 0 or self.orientation_sigma < 0:
            raise ScenarioError("Noise standard deviations must be >= 0")
        ranges = [r for r, _ in self.coarsening]
        if any(a >= b for a, b in zip(ranges, ranges[1:])):
            raise ScenarioError(f"Coarsening ranges must be strictly increasing, got {ranges}")
        ids = [o.id for o in self.observers]
        if len(set(ids)) != len(ids):
            raise ScenarioError("Observer ids must be unique")
        for unit in self.units:
            if unit.speed > MAX_CONSISTENT_SPEED:
                logger.warning("Unit '%s' moves at %.1f m/s; its own reports will conflict on speed",
                               unit.unit_type, unit.speed)

    @property
    def tick_count(self) -> int:
        return int(math.floor(self.duration / self.report_period + 1e-9)) + 1

    def to_dict(self) -> dict:
        return {
            "units": [u.to_dict() for u in self.units],
            "observers": [o.to_dict() for o in self.observers],
            "duration": self.duration,
            "report_period": self.report_period,
            "noise": {"position_sigma": self.position_sigma,
                      "orientation_sigma": self.orientation_sigma},
            "coarsening": [[r, d] for r, d in self.coarsening],
            "seed": self.seed,
            "drop_vehicles": list(self.drop_vehicles),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ScenarioSpec':
        _check_keys(data, ("units", "observers", "duration", "report_period", "noise",
                           "coarsening", "seed", "drop_vehicles"), "scenario")
        noise = data.get("noise", {})
        _check_keys(noise, ("position_sigma", "orientation_sigma"), "scenario.noise")
        try:
            return cls(
                units=tuple(UnitSpec.from_dict(u, f"units[{i}]")
                            for i, u in enumerate(data.get("units", []))),
                observers=tuple(ObserverSpec.from_dict(o, f"observers[{i}]")
                                for i, o in enumerate(data.get("observers", []))),
                duration=float(data.get("duration", 60.0)),
                report_period=float(data.get("report_period", 10.0)),
                position_sigma=float(noise.get("position_sigma", 15.0)),
                orientation_sigma=float(noise.get("orientation_sigma", 0.1)),
                coarsening=tuple(tuple(item) for item in data.get("coarsening", DEFAULT_COARSENING)),
                seed=int(data.get("seed", 0)),
                drop_vehicles=tuple(data.get("drop_vehicles", ())),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"Malformed scenario: {exc}") from exc


def load_scenario(path: PathLike) -> ScenarioSpec:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    return ScenarioSpec.from_dict(data)


@dataclass(frozen=True)
class TruthUnit:
    id: str
    unit_type: str
    vehicles: Tuple[str, ...]


@dataclass(frozen=True)
class GroundTruth:
    """Vehicles (name -> class) and the units they belong to."""
    vehicles: Dict[str, str]
    units: Tuple[TruthUnit, ...] = ()

    def unit_of(self, vehicle: str) -> Optional[TruthUnit]:
        for unit in self.units:
            if vehicle in unit.vehicles:
                return unit
        return None

    def to_dict(self) -> dict:
        return {
            "vehicles": dict(self.vehicles),
            "units": [{"id": u.id, "unit_type": u.unit_type, "vehicles": list(u.vehicles)}
                      for u in self.units],
        }

    @classmethod
    def from_reports(cls, reports: Sequence[Report], tree: ClassificationTree = None) -> 'GroundTruth':
        """
        Recover the truth from the names of a report log.

        Names of the form ``<unit_type>-<n>/<k>`` are grouped into units; a
        vehicle's class is the deepest class any of its reports shows.

        Raises:
            ScoringError: if a report has no name
        """
        tree = tree or ClassificationTree.default()
        classes: Dict[str, str] = {}
        members: Dict[Tuple[str, int], List[Tuple[int, str]]] = defaultdict(list)
        for index, report in enumerate(reports):
            if not report.name:
                raise ScoringError(f"Report {index} carries no ground-truth name")
            seen = classes.get(report.name)
            if seen is None or tree.depth(report.classification) > tree.depth(seen):
                classes[report.name] = report.classification
            match = VEHICLE_NAME.match(report.name)
            if match and seen is None:
                key = (match["unit_type"], int(match["unit"]))
                members[key].append((int(match["vehicle"]), report.name))
        units = tuple(
            TruthUnit(f"{unit_type}-{n}", unit_type, tuple(name for _, name in sorted(vehicles)))
            for (unit_type, n), vehicles in sorted(members.items(), key=lambda item: item[0][1])
        )
        return cls(classes, units)


def _path_arrays(path: Sequence[Position]) -> Tuple[np.ndarray, np.ndarray]:
    points = np.array([[p.x, p.y] for p in path], dtype=float)
    legs = np.hypot(*np.diff(points, axis=0).T) if len(points) > 1 else np.zeros(0)
    return points, np.concatenate([[0.0], np.cumsum(legs)])


def _along_path(points: np.ndarray, cumulative: np.ndarray, distance: float
                ) -> Tuple[np.ndarray, Optional[float]]:
    """Point at ``distance`` along a polyline and the heading of its leg (None when stationary)."""
    total = cumulative[-1]
    if total <= 0.0:
        return points[0].copy(), None
    s = min(max(distance, 0.0), total)
    xy = np.array([np.interp(s, cumulative, points[:, 0]), np.interp(s, cumulative, points[:, 1])])
    leg = int(np.clip(np.searchsorted(cumulative, s, side="right") - 1, 0, len(points) - 2))
    while leg > 0 and cumulative[leg + 1] == cumulative[leg]:
        leg -= 1
    dx, dy = points[leg + 1] - points[leg]
    return xy, math.atan2(dy, dx)


def _first_heading(points: np.ndarray, default: float) -> float:
    for a, b in zip(points, points[1:]):
        dx, dy = b - a
        if math.hypot(dx, dy) > 0:
            return math.atan2(dy, dx)
    return default


@dataclass(frozen=True)
class _Vehicle:
    name: str
    vehicle_class: str
    unit: UnitSpec
    unit_id: str
    offset: np.ndarray = field(compare=False)
    points: np.ndarray = field(compare=False)
    cumulative: np.ndarray = field(compare=False)
    facing: float = 0.0

    def state_at(self, t: float) -> Tuple[np.ndarray, float]:
        centre, heading = _along_path(self.points, self.cumulative, self.unit.speed * t)
        return centre + self.offset, self.facing if heading is None else heading


def _expand_units(spec: ScenarioSpec, templates: Dict[str, UnitTemplate],
                  tree: ClassificationTree) -> List[_Vehicle]:
    vehicles = []
    for n, unit in enumerate(spec.units, start=1):
        template = templates.get(unit.unit_type)
        if template is None:
            raise ScenarioError(f"No template for unit type '{unit.unit_type}'")
        slots = template.slots()
        for class_id in slots:
            if class_id not in tree:
                raise ScenarioError(f"Template '{unit.unit_type}' is not made of vehicles "
                                    f"('{class_id}' is not a vehicle class)")
        points, cumulative = _path_arrays(unit.path)
        facing = _first_heading(points, unit.heading)
        across = np.array([-math.sin(facing), math.cos(facing)])
        for k, class_id in enumerate(slots, start=1):
            offset = (k - 1 - (len(slots) - 1) / 2.0) * unit.spacing * across
            vehicles.append(_Vehicle(f"{unit.unit_type}-{n}/{k}", class_id, unit,
                                     f"{unit.unit_type}-{n}", offset, points, cumulative, facing))
    return vehicles


def revealed_class(class_id: str, distance: float, coarsening: Sequence[Tuple[float, Optional[int]]],
                   tree: ClassificationTree) -> str:
    """Class an observer reports for a vehicle ``distance`` meters away."""
    for max_range, depth in coarsening:
        if distance <= max_range:
            return tree.truncate(class_id, depth)
    return tree.root


def generate_scenario(spec: ScenarioSpec, templates: Sequence[UnitTemplate] = None,
                      tree: ClassificationTree = None) -> Tuple[GroundTruth, List[Report]]:
    """
    Generate the ground truth and the report log of a scenario.

    Reports are ordered by time, then observer, then vehicle. The same spec
    always produces the same reports.

    Raises:
        ScenarioError: if a unit type has no vehicle-level template
    """
    tree = tree or ClassificationTree.default()
    lookup = templates_by_type(templates if templates is not None else default_templates())
    vehicles = _expand_units(spec, lookup, tree)
    unknown_drops = set(spec.drop_vehicles) - {v.name for v in vehicles}
    if unknown_drops:
        raise ScenarioError(f"drop_vehicles names unknown vehicles: {', '.join(sorted(unknown_drops))}")
    reported = [v for v in vehicles if v.name not in set(spec.drop_vehicles)]
    observer_paths = [(o, *_path_arrays(o.path)) for o in spec.observers]

    rng = np.random.default_rng(spec.seed)
    reports: List[Report] = []
    for tick in range(spec.tick_count):
        t = tick * spec.report_period
        for observer, points, cumulative in observer_paths:
            seat, _ = _along_path(points, cumulative, observer.speed * t)
            for vehicle in reported:
                xy, heading = vehicle.state_at(t)
                distance = float(np.hypot(*(xy - seat)))
                if distance > observer.max_range:
                    continue
                noise = rng.normal(0.0, 1.0, 3) * [spec.position_sigma, spec.position_sigma,
                                                   spec.orientation_sigma]
                reports.append(Report(
                    observer=observer.id,
                    name=vehicle.name,
                    position=Position(float(xy[0] + noise[0]), float(xy[1] + noise[1])),
                    time=float(t),
                    classification=revealed_class(vehicle.vehicle_class, distance,
                                                  spec.coarsening, tree),
                    orientation=normalize_angle(heading + noise[2]),
                ))

    # the truth only holds vehicles that were reported at least once
    seen = {r.name for r in reports}
    truth_units = []
    for n, unit in enumerate(spec.units, start=1):
        unit_id = f"{unit.unit_type}-{n}"
        names = tuple(v.name for v in vehicles if v.unit_id == unit_id and v.name in seen)
        if names:
            truth_units.append(TruthUnit(unit_id, unit.unit_type, names))
    truth = GroundTruth({v.name: v.vehicle_class for v in vehicles if v.name in seen},
                        tuple(truth_units))
    logger.info("Generated %d reports of %d vehicles (%d units) over %d ticks",
                len(reports), len(reported), len(spec.units), spec.tick_count)
    return truth, reports


@dataclass(frozen=True)
class ScoreReport:
    """Quality of a situation picture against the ground-truth names."""
    purity: float
    pairwise_precision: float
    pairwise_recall: float
    vehicle_count_error: int
    unit_precision: float
    unit_recall: float

    def to_dict(self) -> dict:
        return {
            "purity": self.purity,
            "pairwise_precision": self.pairwise_precision,
            "pairwise_recall": self.pairwise_recall,
            "vehicle_count_error": self.vehicle_count_error,
            "unit_precision": self.unit_precision,
            "unit_recall": self.unit_recall,
        }


def _pairs(count: int) -> int:
    return count * (count - 1) // 2


def score(picture: SituationPicture, ground_truth: GroundTruth) -> ScoreReport:
    """
    Grade report clustering and unit aggregation against the truth.

    Purity and pairwise precision/recall compare tracks with the report
    names. A unit counts as found when its tracks' majority names are exactly
    the reported vehicles of a true unit and its best type is the true type.

    Raises:
        ScoringError: if a report of the picture has no name
    """
    contingency: Counter = Counter()
    track_sizes: Counter = Counter()
    majority: Dict[str, str] = {}
    for track in picture.tracks:
        names = Counter()
        for report in track.reports:
            if not report.name:
                raise ScoringError(f"A report of track '{track.id}' carries no ground-truth name")
            names[report.name] += 1
            contingency[(track.id, report.name)] += 1
        track_sizes[track.id] = len(track.reports)
        majority[track.id] = min(names, key=lambda name: (-names[name], name))

    total = sum(track_sizes.values())
    name_sizes: Counter = Counter()
    for (_, name), count in contingency.items():
        name_sizes[name] += count
    if total:
        purity = sum(max(c for (tid, _), c in contingency.items() if tid == track_id)
                     for track_id in track_sizes) / total
    else:
        purity = 1.0
    together = sum(_pairs(c) for c in contingency.values())
    predicted = sum(_pairs(c) for c in track_sizes.values())
    actual = sum(_pairs(c) for c in name_sizes.values())

    true_units = {frozenset(unit.vehicles): unit.unit_type for unit in ground_truth.units}
    matched = sum(
        1 for unit in picture.units
        if true_units.get(frozenset(majority[m] for m in unit.members)) == unit.unit_type
    )
    return ScoreReport(
        purity=purity,
        pairwise_precision=together / predicted if predicted else 1.0,
        pairwise_recall=together / actual if actual else 1.0,
        vehicle_count_error=len(picture.tracks) - len(ground_truth.vehicles),
        unit_precision=matched / len(picture.units) if picture.units else 1.0,
        unit_recall=matched / len(true_units) if true_units else 1.0,
    )
